"""Verification pipeline shared by the command line and the tests.

Stages: solve the class LMIs over an ``eta_tilde`` sweep, extract
coupling gains per node, run the small-gain tests for every requested
network size (``"inf"`` meaning the size-independent row-sum test),
compose network certificates and falsify them by simulation.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import scipy
import scipy.linalg

from . import __version__
from .errors import CompositionError, IossError, SpecificationError
from .falsify import (
    Check,
    FalsificationReport,
    SamplerConfig,
    check_assumption1,
    check_overall_lyap,
    check_overall_traj_bound,
    check_subsystem_decrease,
    check_subsystem_lyap,
    falsify,
)
from .lmi import GainMode, LmiCertificate, Objective, extract_coupling_gains, solve_class_lmi, to_iioss, to_lyapunov
from .model import MODELS, GridSpec, NetworkSpec, SubsystemClass, build_model
from .smallgain import (
    OverallLyapCertificate,
    OverallTrajCertificate,
    SubsystemIossCertificate,
    SubsystemLyapCertificate,
    Verdict,
    check_small_gain,
    check_small_gain_uniform,
    compose_overall_lyapunov,
    compute_mu,
    derive_trajectory_certificate,
)

log = logging.getLogger(__name__)

__all__ = [
    "INF",
    "RunConfig",
    "ClassTable",
    "verify_classes",
    "NodeCertificates",
    "Selection",
    "node_certificates",
    "select",
    "analyse_size",
    "analyse_uniform",
    "smallgain_stage",
    "falsify_stage",
    "canonical_json",
    "load_certificates",
    "dump_certificates",
    "render_markdown",
]

INF = "inf"
TARGETS = ("trajectory", "lyapunov")
EXHAUSTIVE_CAP = 4096
PATTERN_SIZES = range(2, 9)


def canonical_json(data: Any) -> str:
    """Stable serialisation: sorted keys, fixed separators, trailing newline."""
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _size_key(M) -> tuple[int, float]:
    return (1, math.inf) if M == INF else (0, float(M))


# --------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    """Everything a run needs; see the README for the file schema."""

    model: str = "train"
    params: dict = field(default_factory=dict)
    M: list = field(default_factory=lambda: [3, 4, INF])
    grid: Any = 3
    eta_sweep: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9])
    margin: float = 1e-6
    budget: int = 2000
    tolerance: float = 1e-4
    gain_mode: str = "optimal"
    off_grid_samples: int = 1000
    samples: int = 10000
    falsify_M: int = 3
    sampler: dict = field(default_factory=lambda: {"horizon": 20, "init_scale": 0.5})
    negative_controls: bool = True
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.model not in MODELS:
            raise SpecificationError(f"field 'model': unknown model {self.model!r}; known: {sorted(MODELS)}")
        if not isinstance(self.params, dict):
            raise SpecificationError("field 'params': expected an object")
        Ms = self.M if isinstance(self.M, list) else [self.M]
        norm = []
        for v in Ms:
            if isinstance(v, str) and v.lower() in ("inf", "infinity", "∞"):
                norm.append(INF)
            elif isinstance(v, (int, float)) and not isinstance(v, bool) and float(v).is_integer() and v >= 1:
                norm.append(int(v))
            else:
                raise SpecificationError(f"field 'M': invalid network size {v!r}")
        self.M = sorted(set(norm), key=_size_key)
        if INF in self.M and not MODELS[self.model].uniform:
            log.warning("model %r is not uniform; the 'inf' row will be not-run", self.model)
        sweep = [float(e) for e in self.eta_sweep]
        if not sweep or any(not 0.0 < e < 1.0 for e in sweep):
            raise SpecificationError("field 'eta_sweep': values must lie in (0, 1)")
        self.eta_sweep = sorted(set(sweep))
        if self.margin < 0:
            raise SpecificationError("field 'margin': must be >= 0")
        if self.budget < 1:
            raise SpecificationError("field 'budget': must be >= 1")
        if self.gain_mode not in ("optimal", "conservative"):
            raise SpecificationError("field 'gain_mode': expected 'optimal' or 'conservative'")
        if self.samples < 0:
            raise SpecificationError("field 'samples': must be >= 0")
        SamplerConfig.from_dict(self.sampler)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecificationError(f"unknown config field(s): {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise SpecificationError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecificationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise SpecificationError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def digest(self) -> str:
        body = self.to_dict()
        body.pop("out")
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig.from_dict(self.sampler)

    def grid_for(self, cls: SubsystemClass) -> GridSpec:
        dim = cls.grid_box().dim
        spec = self.grid
        if isinstance(spec, dict):
            spec = spec.get(cls.name, 3)
        if isinstance(spec, int):
            spec = [spec] * dim
        if len(spec) != dim:
            raise SpecificationError(f"field 'grid': class {cls.name!r} needs {dim} entries, got {len(spec)}")
        return GridSpec(tuple(int(k) for k in spec))

    def network(self, M: int) -> NetworkSpec:
        return build_model(self.model, M, self.params)

    def reference_network(self) -> NetworkSpec:
        finite = [m for m in self.M if m != INF]
        return self.network(max(finite + [self.falsify_M]))


# --------------------------------------------------------------------------
# Class LMIs


@dataclass
class ClassTable:
    """Solved certificates per class and sweep value (``None`` when unsolved)."""

    certs: dict[str, dict[float, LmiCertificate | None]]
    details: dict[str, dict[float, dict]] = field(default_factory=dict)

    def available(self, name: str) -> list[float]:
        return [e for e, c in sorted(self.certs.get(name, {}).items()) if c is not None]

    def to_dict(self) -> dict:
        out = {}
        for name, row in sorted(self.certs.items()):
            entries = []
            for eta, cert in sorted(row.items()):
                entry = {"eta_tilde": eta, "status": "feasible" if cert is not None else "no-certificate",
                         "certificate": None if cert is None else cert.to_dict()}
                entry.update(self.details.get(name, {}).get(eta, {}))
                entries.append(entry)
            out[name] = entries
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClassTable":
        certs: dict = {}
        for name, entries in data.items():
            row = certs.setdefault(name, {})
            for e in entries:
                c = e.get("certificate")
                row[float(e["eta_tilde"])] = None if c is None else LmiCertificate.from_dict(c)
        return cls(certs)


def verify_classes(config: RunConfig, spec: NetworkSpec | None = None) -> tuple[ClassTable, dict]:
    """One LMI solve per distinct class and sweep value; never per node."""
    spec = spec or config.reference_network()
    certs: dict = {}
    details: dict = {}
    summary = {}
    for cls in spec.classes:
        grid = config.grid_for(cls)
        row, det = {}, {}
        for eta in config.eta_sweep:
            cert, result = solve_class_lmi(cls, grid, eta, Objective.MIN_G, margin=config.margin,
                                           budget=config.budget, seed=config.seed,
                                           tolerance=config.tolerance,
                                           off_grid_samples=config.off_grid_samples)
            row[eta] = cert
            info = {"solver_status": result.status.value, "solver_lambda_max": result.achieved_lambda_max,
                    "grid": list(grid.points_per_dim), "grid_blocks": grid.count}
            if cert is not None:
                info.update(margin=cert.margin, lambda_min_P=cert.lambda_min_P,
                            lambda_max_G=cert.lambda_max_G, coupling_ratio=cert.coupling_ratio,
                            off_grid_worst=cert.off_grid_worst)
            det[eta] = info
            log.info("class %s eta_tilde=%g: %s", cls.name, eta, result.status.value)
        certs[cls.name], details[cls.name] = row, det
        summary[cls.name] = "certified" if any(c is not None for c in row.values()) else "no-certificate"
    return ClassTable(certs, details), {"class_status": summary, "lmi_solves_per_eta": len(spec.classes)}


# --------------------------------------------------------------------------
# Node certificates and selection


@dataclass
class NodeCertificates:
    """Per-node subsystem certificates for one network and one class choice."""

    choice: dict[str, float]
    lmi: list[LmiCertificate]
    iioss: list[SubsystemIossCertificate]
    lyap: list[SubsystemLyapCertificate]
    gains: dict

    def to_dict(self) -> dict:
        return {"choice": dict(sorted(self.choice.items())), "gains": self.gains,
                "iioss": [c.to_dict() for c in self.iioss], "lyapunov": [c.to_dict() for c in self.lyap]}


class _GainCache:
    def __init__(self, table: ClassTable, mode: GainMode):
        self.table, self.mode, self.memo = table, mode, {}

    def pattern(self, own: str, eta: float, nb: tuple[tuple[str, float], ...]):
        key = (own, eta, nb)
        if key not in self.memo:
            cert = self.table.certs[own][eta]
            neighbor_P = {k: self.table.certs[c][e].P for k, (c, e) in enumerate(nb)}
            gs = extract_coupling_gains(cert, 0, neighbor_P, self.mode)
            self.memo[key] = [(gs.gamma[(0, k)], gs.g_tilde[(0, k)], gs.g[(0, k)]) for k in range(len(nb))]
        return self.memo[key]


def node_certificates(spec: NetworkSpec, table: ClassTable, choice: Mapping[str, float],
                      mode: GainMode | str = GainMode.OPTIMAL, cache: _GainCache | None = None) -> NodeCertificates:
    cache = cache or _GainCache(table, GainMode(mode))
    lmi, iioss, lyap, gains = [], [], [], []
    for i in range(spec.M):
        own = spec.assignment[i]
        nbrs = spec.neighbors[i]
        nb = tuple((spec.assignment[j], choice[spec.assignment[j]]) for j in nbrs)
        values = cache.pattern(own, choice[own], nb)
        cert = table.certs[own][choice[own]]
        gamma = {j: v[0] for j, v in zip(nbrs, values)}
        g = {j: v[2] for j, v in zip(nbrs, values)}
        lmi.append(cert)
        iioss.append(to_iioss(cert, g))
        lyap.append(to_lyapunov(cert, gamma))
        for j, v in zip(nbrs, values):
            gains.append({"i": i, "j": j, "gamma": v[0], "g_tilde": v[1], "g": v[2]})
    return NodeCertificates(dict(choice), lmi, iioss, lyap, {"pairs": gains})


def _patterns(config: RunConfig) -> set[tuple[str, tuple[str, ...]]]:
    """(class, neighbour classes) combinations realised by the model at small sizes."""
    found = set()
    for M in PATTERN_SIZES:
        try:
            spec = config.network(M)
        except SpecificationError:
            continue
        for i in range(spec.M):
            found.add((spec.assignment[i], tuple(spec.assignment[j] for j in spec.neighbors[i])))
    return found


def _uniform_rows(patterns, table, choice, cache) -> dict[str, dict[str, list[float]]]:
    rows = {"trajectory": {}, "lyapunov": {}}
    for own, nb_classes in sorted(patterns):
        cert = table.certs[own][choice[own]]
        values = cache.pattern(own, choice[own], tuple((c, choice[c]) for c in nb_classes))
        key = f"{own}<-({','.join(nb_classes)})"
        eta = math.sqrt(cert.eta_tilde)
        rows["trajectory"][key] = [v[2] / (1.0 - eta) for v in values]
        rows["lyapunov"][key] = [v[0] / (1.0 - cert.eta_tilde) for v in values]
    return rows


def _choices(table: ClassTable, names: Sequence[str]):
    pools = [table.available(n) for n in names]
    if any(not p for p in pools):
        return []
    total = math.prod(len(p) for p in pools)
    if total > EXHAUSTIVE_CAP:
        raise SpecificationError(f"{total} class combinations exceed the search cap {EXHAUSTIVE_CAP}")
    return [dict(zip(names, combo)) for combo in itertools.product(*pools)]


@dataclass
class Selection:
    """Best class choice for one size and one small-gain target."""

    M: Any
    target: str
    choice: dict[str, float] | None
    score: float

    def to_dict(self) -> dict:
        return {"choice": None if self.choice is None else dict(sorted(self.choice.items())),
                "score": None if not math.isfinite(self.score) else self.score}


def select(config: RunConfig, table: ClassTable, M, target: str, cache: _GainCache,
           patterns=None) -> Selection:
    """Pick sweep values per class that minimise the radius (or row-sum bound) of ``target``.

    All combinations are tried because a node's Lyapunov gains depend on
    the neighbours' metrics.
    """
    if M == INF:
        names = sorted({own for own, _ in patterns} | {c for _, nb in patterns for c in nb})
    else:
        names = sorted({c.name for c in config.network(M).used_classes})
    best = Selection(M, target, None, math.inf)
    for choice in _choices(table, names):
        if M == INF:
            rows = _uniform_rows(patterns, table, choice, cache)[target]
            score, _ = check_small_gain_uniform(rows)
        else:
            nodes = node_certificates(config.network(M), table, choice, cache=cache)
            spec = config.network(M)
            ga = check_small_gain(nodes.iioss if target == "trajectory" else None,
                                  nodes.lyap if target == "lyapunov" else None, spec.neighbors)
            score = ga.rho_G if target == "trajectory" else ga.rho_LG
        if score < best.score - 1e-15:
            best = Selection(M, target, choice, float(score))
    return best


# --------------------------------------------------------------------------
# Small-gain analysis


def _compose_lyap(nodes: NodeCertificates, spec: NetworkSpec, ga) -> dict:
    try:
        mu = compute_mu(ga.Lambda, ga.Gamma)
        overall = compose_overall_lyapunov(nodes.lyap, mu, spec.neighbors)
    except CompositionError as exc:
        return {"error": str(exc)}
    return {"mu": overall.mu.tolist(), "lambda_sigma": overall.lambda_sigma, "H": overall.H.tolist()}


def _compose_traj(nodes: NodeCertificates, ga) -> dict:
    try:
        cert = derive_trajectory_certificate(nodes.iioss, ga.G)
    except CompositionError as exc:
        return {"error": str(exc)}
    out = cert.to_dict()
    out.pop("S")
    return out


def analyse_size(config: RunConfig, table: ClassTable, M: int, cache: _GainCache) -> dict:
    """Both small-gain tests for one network size, each with its own class choice."""
    spec = config.network(M)
    row = {"M": M, "trajectory": Verdict.NOT_RUN, "lyapunov": Verdict.NOT_RUN}
    for target in TARGETS:
        sel = select(config, table, M, target, cache)
        part = {"selection": sel.to_dict()}
        if sel.choice is None:
            part["reason"] = "no certificate for some class"
            row[target + "_detail"] = part
            continue
        nodes = node_certificates(spec, table, sel.choice, cache=cache)
        if target == "trajectory":
            ga = check_small_gain(nodes.iioss, None, spec.neighbors)
            row["trajectory"], row["rho_G"] = ga.status_traj, ga.rho_G
            part["G_row_sums"] = ga.G.sum(axis=1).tolist()
            if ga.verdict_traj:
                part["certificate"] = _compose_traj(nodes, ga)
        else:
            ga = check_small_gain(None, nodes.lyap, spec.neighbors)
            row["lyapunov"], row["rho_LG"] = ga.status_lyap, ga.rho_LG
            part["LG_row_sums"] = ga.LG.sum(axis=1).tolist()
            if ga.verdict_lyap:
                part["certificate"] = _compose_lyap(nodes, spec, ga)
        part["nodes"] = nodes.to_dict()
        row[target + "_detail"] = part
    return row


def analyse_uniform(config: RunConfig, table: ClassTable, cache: _GainCache) -> dict:
    """Size-independent verdicts from the worst row of every class pattern."""
    row = {"M": INF, "trajectory": Verdict.NOT_RUN, "lyapunov": Verdict.NOT_RUN}
    if not MODELS[config.model].uniform:
        row["reason"] = f"model {config.model!r} does not declare a uniform class set"
        return row
    patterns = _patterns(config)
    for target in TARGETS:
        sel = select(config, table, INF, target, cache, patterns)
        part = {"selection": sel.to_dict()}
        if sel.choice is not None:
            rows = _uniform_rows(patterns, table, sel.choice, cache)[target]
            bound, verdict = check_small_gain_uniform(rows)
            row[target] = verdict
            row["bound_G" if target == "trajectory" else "bound_LG"] = bound
            part["rows"] = {k: {"entries": v, "sum": float(np.sum(v))} for k, v in sorted(rows.items())}
        else:
            part["reason"] = "no certificate for some class"
        row[target + "_detail"] = part
    return row


def smallgain_stage(config: RunConfig, table: ClassTable) -> dict:
    cache = _GainCache(table, GainMode(config.gain_mode))
    rows = []
    for M in config.M:
        rows.append(analyse_uniform(config, table, cache) if M == INF else analyse_size(config, table, M, cache))
    return {"rows": rows, "gain_mode": config.gain_mode}


def smallgain_nodes(data: Mapping, sizes: Sequence) -> dict:
    """Small-gain analysis of hand-written per-node certificates (one fixed network)."""
    neighbors = [tuple(int(j) for j in nb) for nb in data["neighbors"]]
    nodes = data["nodes"]
    iioss = [SubsystemIossCertificate.from_dict(n["iioss"]) for n in nodes] if all("iioss" in n for n in nodes) else None
    lyap = ([SubsystemLyapCertificate.from_dict(n["lyapunov"]) for n in nodes]
            if all("lyapunov" in n for n in nodes) else None)
    ga = check_small_gain(iioss, lyap, neighbors)
    rows = []
    M = len(nodes)
    for size in sizes:
        if size == INF:
            rows.append({"M": INF, "trajectory": Verdict.NOT_RUN, "lyapunov": Verdict.NOT_RUN,
                         "reason": "per-node certificates describe one fixed network"})
            continue
        if size != M:
            rows.append({"M": size, "trajectory": Verdict.NOT_RUN, "lyapunov": Verdict.NOT_RUN,
                         "reason": f"certificate file describes M={M}"})
            continue
        row = {"M": M, "trajectory": ga.status_traj, "lyapunov": ga.status_lyap,
               "rho_G": ga.rho_G, "rho_LG": ga.rho_LG}
        if ga.verdict_traj:
            cert = derive_trajectory_certificate(iioss, ga.G).to_dict()
            cert.pop("S")
            row["trajectory_detail"] = {"certificate": cert}
        if ga.verdict_lyap:
            try:
                mu = compute_mu(ga.Lambda, ga.Gamma)
                ov = compose_overall_lyapunov(lyap, mu, neighbors)
                row["lyapunov_detail"] = {"certificate": {"mu": ov.mu.tolist(), "lambda_sigma": ov.lambda_sigma,
                                                          "H": ov.H.tolist()}}
            except CompositionError as exc:
                row["lyapunov_detail"] = {"certificate": {"error": str(exc)}}
        rows.append(row)
    return {"rows": rows, "gain_mode": "given"}


# --------------------------------------------------------------------------
# Falsification


def _build_checks(spec: NetworkSpec, table: ClassTable, config: RunConfig, cache: _GainCache):
    """Checks for the falsification size and the matching negative controls."""
    checks: list[Check] = []
    controls: list[tuple[str, Check]] = []
    notes = {}
    M = spec.M
    sel_t = select(config, table, M, "trajectory", cache)
    sel_l = select(config, table, M, "lyapunov", cache)
    seen = set()
    for name, sel in (("trajectory", sel_t), ("lyapunov", sel_l)):
        if sel.choice is None:
            notes[name] = "no certificate for some class"
            continue
        nodes = node_certificates(spec, table, sel.choice, cache=cache)
        for i, cert in enumerate(nodes.lmi):
            if (i, cert.eta_tilde) not in seen:
                seen.add((i, cert.eta_tilde))
                checks.append(Check("decrease", cert, i, label=f"decrease[{i}]@{cert.eta_tilde:g}"))
                halved = LmiCertificate(cert.eta_tilde / 2, cert.P, cert.Q, cert.R, cert.G, cert.margin,
                                        cert.class_name, cert.grid)
                controls.append(("eta_tilde halved", Check("decrease", halved, i, label=f"control:decrease[{i}]@{halved.eta_tilde:g}")))
        if name == "trajectory":
            for i, c in enumerate(nodes.iioss):
                checks.append(check_assumption1(i, c))
            ga = check_small_gain(nodes.iioss, None, spec.neighbors)
            if ga.verdict_traj:
                traj = derive_trajectory_certificate(nodes.iioss, ga.G)
                checks.append(check_overall_traj_bound(traj))
                weak = OverallTrajCertificate(**{**traj.__dict__, "h": traj.h / 10.0})
                controls.append(("h reduced 10x", Check("overall-traj", weak, label="control:overall-traj")))
            else:
                notes["overall-traj"] = "small-gain condition fails; no network certificate to check"
        else:
            for i, c in enumerate(nodes.lyap):
                nbP = {j: nodes.lyap[j].P1 for j in spec.neighbors[i]}
                checks.append(check_subsystem_lyap(i, c, nbP))
            ga = check_small_gain(None, nodes.lyap, spec.neighbors)
            if ga.verdict_lyap:
                mu = compute_mu(ga.Lambda, ga.Gamma)
                overall = compose_overall_lyapunov(nodes.lyap, mu, spec.neighbors)
                checks.append(check_overall_lyap(overall))
                controls.append(("mu corrupted", Check("overall-lyap", _corrupt_mu(overall, ga, nodes),
                                                       label="control:overall-lyap")))
            else:
                notes["overall-lyap"] = "small-gain condition fails; no network certificate to check"
    return checks, controls, notes, {"trajectory": sel_t.to_dict(), "lyapunov": sel_l.to_dict()}


def _corrupt_mu(overall: OverallLyapCertificate, ga, nodes: NodeCertificates) -> OverallLyapCertificate:
    """Same decay claim with weights concentrated on one node, breaking ``mu'(-Lambda+Gamma) < 0``."""
    M = len(overall.mu)
    best = None
    for k in range(M):
        mu = np.full(M, 1e-6)
        mu[k] = 1.0
        H = mu @ (-ga.Lambda + ga.Gamma)
        if np.any(H >= 0) and (best is None or H.max() > best[1]):
            best = (mu, float(H.max()))
    mu = best[0] if best is not None else np.where(np.arange(M) == 0, 1.0, 1e-6)
    return OverallLyapCertificate(
        mu=mu, lambda_sigma=overall.lambda_sigma, H=mu @ (-ga.Lambda + ga.Gamma),
        P_sigma1=scipy.linalg.block_diag(*[m * c.P1 for m, c in zip(mu, nodes.lyap)]),
        P_sigma2=scipy.linalg.block_diag(*[m * c.P2 for m, c in zip(mu, nodes.lyap)]),
        Q_sigma=scipy.linalg.block_diag(*[m * c.Q for m, c in zip(mu, nodes.lyap)]),
        R_sigma=scipy.linalg.block_diag(*[m * c.R for m, c in zip(mu, nodes.lyap)]),
        P_blocks=[c.P1 for c in nodes.lyap],
    )


def falsify_stage(config: RunConfig, table: ClassTable) -> tuple[dict, dict[str, dict]]:
    """Returns the report section and witness documents keyed by label."""
    spec = config.network(config.falsify_M)
    cache = _GainCache(table, GainMode(config.gain_mode))
    checks, controls, notes, selections = _build_checks(spec, table, config, cache)
    sampler = config.sampler_config()
    context = {"model": config.model, "params": config.params, "M": config.falsify_M}
    if config.samples <= 0:
        return {"status": Verdict.NOT_RUN, "reason": "zero samples configured", "checks": {}}, {}
    reports = falsify(spec, checks, config.samples, sampler, config.seed, context)
    witnesses = {label: r.witness for label, r in reports.items() if r.witness is not None}
    section = {
        "M": config.falsify_M,
        "samples": config.samples,
        "sampler": sampler.to_dict(),
        "selection": selections,
        "notes": notes,
        "checks": {label: r.to_dict() for label, r in sorted(reports.items())},
        "violations": int(sum(r.violations for r in reports.values())),
    }
    if config.negative_controls and controls:
        merged: dict[str, FalsificationReport] = {}
        ctrl_reports = falsify(spec, [c for _, c in controls], config.samples, sampler, config.seed, context)
        for (name, check) in controls:
            rep = ctrl_reports[check.label]
            rep.label = name
            merged[name] = merged[name].merge(rep) if name in merged else rep
        section["negative_controls"] = {
            name: {**r.to_dict(), "expected": "falsified", "ok": r.falsified} for name, r in sorted(merged.items())
        }
    section["status"] = "falsified" if section["violations"] else "not falsified"
    return section, witnesses


# --------------------------------------------------------------------------
# Files


def dump_certificates(config: RunConfig, table: ClassTable) -> dict:
    return {"format": "iossnet-certificates/1", "model": config.model, "params": config.params,
            "classes": table.to_dict()}


def load_certificates(data: Mapping) -> ClassTable | dict:
    """Class-form files give a :class:`ClassTable`; node-form files are returned as is."""
    if "nodes" in data:
        if "neighbors" not in data:
            raise SpecificationError("node-form certificate file needs 'neighbors'")
        return dict(data)
    if "classes" not in data:
        raise SpecificationError("certificate file needs 'classes' or 'nodes'")
    return ClassTable.from_dict(data["classes"])


def provenance(config: RunConfig) -> dict:
    return {"config_sha256": config.digest(), "iossnet": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version(), "seed": config.seed}


# --------------------------------------------------------------------------
# Rendering


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return f"{x:.6g}"
    return str(x)


_MARK = {Verdict.PASS: "✓", Verdict.FAIL: "✗", Verdict.MARGINAL: "≈ (marginal)", Verdict.NOT_RUN: "not run"}


def render_markdown(reports: Sequence[Mapping]) -> str:
    """Human-readable tables derived from one or more machine-readable reports."""
    rows = []
    for rep in reports:
        rows.extend(rep.get("smallgain", {}).get("rows", []))
    rows.sort(key=lambda r: _size_key(r["M"]))
    lines = ["# Small-gain verdicts", "",
             "| M | trajectory form | Lyapunov form | rho(G) or bound | rho(Lambda^-1 Gamma) or bound |",
             "|---|---|---|---|---|"]
    for r in rows:
        g = r.get("rho_G", r.get("bound_G"))
        lg = r.get("rho_LG", r.get("bound_LG"))
        m = "∞" if r["M"] == INF else str(r["M"])
        lines.append(f"| {m} | {_MARK.get(r['trajectory'], r['trajectory'])} | "
                     f"{_MARK.get(r['lyapunov'], r['lyapunov'])} | {_fmt(g)} | {_fmt(lg)} |")
    lmi_rows = []
    for rep in reports:
        for name, entries in sorted(rep.get("lmi", {}).get("classes", {}).items()):
            for e in entries:
                lmi_rows.append((name, e))
    if lmi_rows:
        lines += ["", "# Class LMIs", "",
                  "| class | eta_tilde | status | margin | lambda_min(P) | lambda_max(G) | worst off-grid |",
                  "|---|---|---|---|---|---|---|"]
        for name, e in lmi_rows:
            lines.append(f"| {name} | {_fmt(e['eta_tilde'])} | {e['status']} | {_fmt(e.get('margin'))} | "
                         f"{_fmt(e.get('lambda_min_P'))} | {_fmt(e.get('lambda_max_G'))} | "
                         f"{_fmt(e.get('off_grid_worst'))} |")
    fals = [rep["falsification"] for rep in reports if "falsification" in rep]
    if fals:
        lines += ["", "# Falsification", "", "| check | pairs | checks | violations | worst slack | verdict |",
                  "|---|---|---|---|---|---|"]
        for f in fals:
            for label, c in sorted(f.get("checks", {}).items()):
                lines.append(f"| {label} | {c['pairs']} | {c['checks_run']} | {c['violations']} | "
                             f"{_fmt(c['worst_slack'])} | {c['verdict']} |")
            for name, c in sorted(f.get("negative_controls", {}).items()):
                lines.append(f"| control: {name} | {c['pairs']} | {c['checks_run']} | {c['violations']} | "
                             f"{_fmt(c['worst_slack'])} | {c['verdict']} (expected falsified) |")
    return "\n".join(lines) + "\n"
