"""Command line: ``iossnet {verify,smallgain,falsify,report,replay,run}``.

Exit codes: 0 when the analysis is positive, 2 when it is negative
(a class without certificate, a failed small-gain test or a falsified
inequality) and 1 on errors.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .errors import IossError
from .falsify import TOLERANCE, replay
from .model import build_model
from .pipeline import (
    INF,
    ClassTable,
    RunConfig,
    canonical_json,
    dump_certificates,
    falsify_stage,
    load_certificates,
    provenance,
    render_markdown,
    smallgain_nodes,
    smallgain_stage,
    verify_classes,
)
from .smallgain import Verdict

log = logging.getLogger("iossnet")

OK, ERROR, NEGATIVE = 0, 1, 2
LOG_ENV = "IOSSNET_LOG"


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _sizes(text: str) -> list:
    out = []
    for v in text.split(","):
        v = v.strip()
        if v:
            out.append(INF if v.lower() in ("inf", "infinity") else int(v))
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--eta-sweep", type=_floats, help="comma-separated eta_tilde values")
    common.add_argument("--margin", type=float, help="required LMI slack")
    common.add_argument("--samples", type=int, help="trajectory pairs for falsification")
    common.add_argument("--m", type=_sizes, help="comma-separated network sizes, 'inf' allowed")

    parser = argparse.ArgumentParser(prog="iossnet", description="Detectability certificates for networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="solve the class LMIs")
    for name, text in (("smallgain", "small-gain verdicts per network size"),
                       ("falsify", "simulate trajectory pairs against the certificates")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--certificates", type=Path, help="certificate file (default: solve first)")
    sub.add_parser("run", parents=[common], help="verify, smallgain, falsify and report")
    p = sub.add_parser("report", help="render machine-readable reports as markdown")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--output", type=Path)
    p = sub.add_parser("replay", help="re-simulate a witness and recompute its slack")
    p.add_argument("witness", type=Path)
    return parser


def _config(args) -> RunConfig:
    data = {}
    if args.config is not None:
        data = RunConfig.load(args.config).to_dict()
    for flag, key in (("seed", "seed"), ("eta_sweep", "eta_sweep"), ("margin", "margin"),
                      ("samples", "samples"), ("m", "M")):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if args.out is not None:
        data["out"] = str(args.out)
    return RunConfig.from_dict(data)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _base_report(config: RunConfig) -> dict:
    # The output path lives in provenance.json so reports do not depend on where they are written.
    body = config.to_dict()
    body.pop("out")
    return {"format": "iossnet-report/1", "config": body, "provenance": provenance(config)}


def _finish(config: RunConfig, report: dict) -> None:
    out = Path(config.out)
    _write(out / "report.json", canonical_json(report))
    _write(out / "report.md", render_markdown([report]))
    stamp = {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(), "out": str(out), **report["provenance"]}
    _write(out / "provenance.json", canonical_json(stamp))
    log.info("wrote %s", out / "report.json")


def _verify(config: RunConfig, report: dict) -> tuple[ClassTable, int]:
    table, summary = verify_classes(config)
    report["lmi"] = {"classes": table.to_dict(), **summary}
    _write(Path(config.out) / "certificates.json", canonical_json(dump_certificates(config, table)))
    code = OK if all(v == "certified" for v in summary["class_status"].values()) else NEGATIVE
    return table, code


def _certificates(config: RunConfig, args, report: dict):
    if getattr(args, "certificates", None) is None:
        return _verify(config, report)[0]
    data = json.loads(args.certificates.read_text(encoding="utf-8"))
    loaded = load_certificates(data)
    if isinstance(loaded, ClassTable):
        report["lmi"] = {"classes": data["classes"], "source": str(args.certificates)}
    return loaded


def _smallgain(config: RunConfig, source, report: dict) -> int:
    if isinstance(source, ClassTable):
        section = smallgain_stage(config, source)
    else:
        section = smallgain_nodes(source, config.M)
    report["smallgain"] = section
    verdicts = [r[k] for r in section["rows"] for k in ("trajectory", "lyapunov")]
    return OK if all(v in (Verdict.PASS, Verdict.NOT_RUN) for v in verdicts) else NEGATIVE


def _falsify(config: RunConfig, table, report: dict) -> int:
    if not isinstance(table, ClassTable):
        raise IossError("falsification needs class-form certificates and a model")
    section, witnesses = falsify_stage(config, table)
    report["falsification"] = section
    for label, witness in sorted(witnesses.items()):
        name = label.replace("[", "_").replace("]", "").replace("@", "_eta") + ".json"
        _write(Path(config.out) / "witnesses" / name, canonical_json(witness))
    return NEGATIVE if section.get("violations") else OK


def _run(args) -> int:
    if args.command == "report":
        reports = [json.loads(p.read_text(encoding="utf-8")) for p in args.inputs]
        text = render_markdown(reports)
        if args.output:
            _write(args.output, text)
        else:
            sys.stdout.write(text)
        return OK
    if args.command == "replay":
        witness = json.loads(args.witness.read_text(encoding="utf-8"))
        ctx = witness.get("context", {})
        spec = build_model(ctx["model"], ctx["M"], ctx.get("params", {}))
        slack = replay(spec, witness)
        reproduced = slack < -TOLERANCE
        print(json.dumps({"check": witness["check"]["label"], "step": witness["step"], "slack": slack,
                          "reproduced": reproduced}))
        return NEGATIVE if reproduced else OK

    config = _config(args)
    report = _base_report(config)
    if args.command == "verify":
        _, code = _verify(config, report)
    elif args.command == "smallgain":
        code = _smallgain(config, _certificates(config, args, report), report)
    elif args.command == "falsify":
        code = _falsify(config, _certificates(config, args, report), report)
    else:
        table, code = _verify(config, report)
        code = max(code, _smallgain(config, table, report), _falsify(config, table, report))
    _finish(config, report)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (IossError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"iossnet: error: {exc}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
