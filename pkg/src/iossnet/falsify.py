"""Monte-Carlo falsification of certified incremental inequalities.

Pairs of trajectories that share the known input but start from
different states and see different disturbances are simulated, and every
certified inequality is evaluated along them.  A clean run means "not
falsified", never "proved".

Every inequality is turned into a relative slack

    (rhs - lhs) / (1 + dominant right-hand term)

so one tolerance (``TOLERANCE``) serves certificates of any scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import SpecificationError
from .lmi import LmiCertificate
from .model import NetworkSpec, simulate
from .smallgain import (
    OverallLyapCertificate,
    OverallTrajCertificate,
    SubsystemIossCertificate,
    SubsystemLyapCertificate,
)

log = logging.getLogger(__name__)

__all__ = [
    "TOLERANCE",
    "SamplerConfig",
    "TrajectoryPair",
    "PairBatch",
    "sample_chunk",
    "sample_pairs",
    "Check",
    "FalsificationReport",
    "evaluate",
    "adversarial_search",
    "falsify",
    "replay",
    "check_subsystem_decrease",
    "check_assumption1",
    "check_subsystem_lyap",
    "check_overall_lyap",
    "check_overall_traj_bound",
]

TOLERANCE = 1e-9


def _qform(v: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``v' P v`` over the last axis."""
    if v.shape[-1] == 0:
        return np.zeros(v.shape[:-1])
    return np.einsum("...i,ij,...j->...", v, P, v)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v, axis=-1) if v.shape[-1] else np.zeros(v.shape[:-1])


def _running_max(a: np.ndarray) -> np.ndarray:
    """``out[..., t] = max(a[..., :t])`` with ``out[..., 0] = 0``."""
    out = np.zeros(a.shape[:-1] + (a.shape[-1] + 1,))
    if a.shape[-1]:
        out[..., 1:] = np.maximum.accumulate(a, axis=-1)
    return out


def _rel(rhs_terms: Sequence[np.ndarray], lhs: np.ndarray) -> np.ndarray:
    rhs = np.sum(rhs_terms, axis=0)
    dominant = np.max(np.abs(np.stack(rhs_terms)), axis=0)
    return (rhs - lhs) / (1.0 + dominant)


# --------------------------------------------------------------------------
# Trajectory pairs


@dataclass
class SamplerConfig:
    """How trajectory pairs are drawn.

    ``mode`` is ``uniform`` or ``adversarial``; the latter refines the
    worst uniform pairs of every check by coordinate ascent on its slack.
    ``disturbance`` is ``uniform`` (independent draws in the box) or
    ``zero``.  Initial states are drawn from the state box shrunk by
    ``init_scale`` about its midpoint, which keeps more pairs inside the
    box over the horizon.  A fraction ``sparse`` of the pairs copies a
    random subset of the state and disturbance coordinates from the first
    copy to the second, so deviations confined to a few nodes are covered.
    """

    horizon: int = 20
    init_scale: float = 1.0
    sparse: float = 0.25
    mode: str = "adversarial"
    disturbance: str = "uniform"
    equal_start: bool = False
    chunk: int = 1000
    max_attempts: int = 50
    ascent_pool: int = 32
    ascent_iters: int = 200
    ascent_step: float = 0.25

    def __post_init__(self):
        if self.horizon < 1:
            raise SpecificationError("horizon must be >= 1")
        if self.mode not in ("uniform", "adversarial"):
            raise SpecificationError(f"unknown sampling mode {self.mode!r}")
        if self.disturbance not in ("uniform", "zero"):
            raise SpecificationError(f"unknown disturbance distribution {self.disturbance!r}")
        if not 0.0 < self.init_scale <= 1.0:
            raise SpecificationError("init_scale must lie in (0, 1]")
        if not 0.0 <= self.sparse <= 1.0:
            raise SpecificationError("sparse must lie in [0, 1]")
        if self.chunk < 1:
            raise SpecificationError("chunk must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SamplerConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecificationError(f"unknown sampler field(s): {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrajectoryPair:
    """One pair: shared input ``u``, initial states and disturbances per copy."""

    x0: np.ndarray
    xt0: np.ndarray
    u: np.ndarray
    w: np.ndarray
    wt: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("x0", "xt0", "u", "w", "wt")}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrajectoryPair":
        return cls(*(np.asarray(data[k], dtype=float) for k in ("x0", "xt0")),
                   *(_as_2d(data[k]) for k in ("u", "w", "wt")))

    def simulate(self, spec: NetworkSpec) -> "PairBatch":
        return PairBatch.from_inputs(spec, self.x0[None], self.xt0[None], self.u[None],
                                     self.w[None], self.wt[None])


def _as_2d(value) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 1:
        a = a.reshape(a.shape[0], 0)
    return a


@dataclass
class PairBatch:
    """``K`` simulated pairs; arrays carry the pair index first."""

    x0: np.ndarray
    xt0: np.ndarray
    u: np.ndarray
    w: np.ndarray
    wt: np.ndarray
    X: np.ndarray
    Xt: np.ndarray
    Y: np.ndarray
    Yt: np.ndarray

    @classmethod
    def from_inputs(cls, spec: NetworkSpec, x0, xt0, u, w, wt) -> "PairBatch":
        X, Y = simulate(spec, x0, u, w)
        Xt, Yt = simulate(spec, xt0, u, wt)
        return cls(np.asarray(x0, float), np.asarray(xt0, float), np.asarray(u, float),
                   np.asarray(w, float), np.asarray(wt, float), X, Xt, Y, Yt)

    @classmethod
    def concat(cls, batches: Sequence["PairBatch"]) -> "PairBatch":
        names = cls.__dataclass_fields__
        return cls(**{k: np.concatenate([getattr(b, k) for b in batches], axis=0) for k in names})

    def __len__(self) -> int:
        return self.x0.shape[0]

    @property
    def horizon(self) -> int:
        return self.w.shape[1]

    def take(self, idx) -> "PairBatch":
        return PairBatch(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})

    def pair(self, k: int) -> TrajectoryPair:
        return TrajectoryPair(self.x0[k], self.xt0[k], self.u[k], self.w[k], self.wt[k])

    @property
    def dX(self) -> np.ndarray:
        return self.X - self.Xt

    @property
    def dW(self) -> np.ndarray:
        return self.w - self.wt

    @property
    def dY(self) -> np.ndarray:
        return self.Y - self.Yt

    def in_domain(self, spec: NetworkSpec) -> np.ndarray:
        box = spec.state_box()
        inside = box.contains(self.X).all(axis=-1) & box.contains(self.Xt).all(axis=-1)
        return inside


def _draw(spec: NetworkSpec, config: SamplerConfig, rng: np.random.Generator, K: int):
    T = config.horizon
    sbox, ubox, wbox = spec.state_box(), spec.input_box(), spec.disturbance_box()
    mid = sbox.midpoint
    x0 = mid + config.init_scale * (sbox.sample(rng, (K,)) - mid)
    xt0 = x0.copy() if config.equal_start else mid + config.init_scale * (sbox.sample(rng, (K,)) - mid)
    u = ubox.sample(rng, (K, T))
    if config.disturbance == "zero":
        w = np.broadcast_to(wbox.midpoint, (K, T, wbox.dim)).copy()
        wt = w.copy()
    else:
        w = wbox.sample(rng, (K, T))
        wt = wbox.sample(rng, (K, T))
    sparse = rng.random(K) < config.sparse
    copy_x = sparse[:, None] & (rng.random((K, sbox.dim)) < 0.5)
    copy_w = sparse[:, None] & (rng.random((K, wbox.dim)) < 0.5)
    xt0 = np.where(copy_x, x0, xt0)
    wt = np.where(copy_w[:, None, :], w, wt)
    return x0, xt0, u, w, wt


def sample_chunk(spec: NetworkSpec, config: SamplerConfig, seed: int, index: int) -> tuple[PairBatch, int]:
    """Chunk ``index`` of the pair stream for ``seed``.

    Chunks use independent seed-derived generators, so any partition of
    the chunk indices yields the same pairs.  Pairs leaving the state box
    are discarded and redrawn; returns ``(pairs, discarded)``.
    """
    rng = np.random.default_rng([int(seed), int(index)])
    kept, discarded, have = [], 0, 0
    for _ in range(config.max_attempts):
        need = config.chunk - have
        if need <= 0:
            break
        batch = PairBatch.from_inputs(spec, *_draw(spec, config, rng, need))
        ok = batch.in_domain(spec)
        discarded += int(np.count_nonzero(~ok))
        if ok.any():
            kept.append(batch.take(np.flatnonzero(ok)))
            have += int(ok.sum())
    if have < config.chunk:
        log.warning("chunk %d: only %d of %d pairs stayed in the domain", index, have, config.chunk)
    if not kept:
        raise SpecificationError("no sampled pair stayed inside the state box; shorten the horizon")
    return PairBatch.concat(kept), discarded


def sample_pairs(spec: NetworkSpec, n_pairs: int, config: SamplerConfig | None = None,
                 seed: int = 0) -> tuple[PairBatch, int]:
    """At least ``n_pairs`` in-domain pairs (whole chunks) and the discard count."""
    config = config or SamplerConfig()
    if spec.state_box().dim == 0:
        raise SpecificationError("empty state domain")
    batches, discarded = [], 0
    n_chunks = -(-int(n_pairs) // config.chunk)
    for index in range(n_chunks):
        b, d = sample_chunk(spec, config, seed, index)
        batches.append(b)
        discarded += d
    return PairBatch.concat(batches), discarded


# --------------------------------------------------------------------------
# Checks


def _node_parts(spec: NetworkSpec, batch: PairBatch, i: int):
    xs, ws, ys = spec.slices("n"), spec.slices("q"), spec.slices("p")
    dX = batch.dX
    return dX[..., xs[i]], batch.dW[..., ws[i]], batch.dY[..., ys[i]], spec.gather_z(dX, i), dX


def _slack_decrease(spec, batch, node, cert: LmiCertificate, extra) -> np.ndarray:
    dx, dw, dy, dz, _ = _node_parts(spec, batch, node)
    lhs = _qform(dx[:, 1:], cert.P)
    terms = [cert.eta_tilde * _qform(dx[:, :-1], cert.P), _qform(dw, cert.Q), _qform(dy, cert.R),
             _qform(dz[:, :-1], cert.G)]
    return _rel(terms, lhs)


def _slack_assumption1(spec, batch, node, cert: SubsystemIossCertificate, extra) -> np.ndarray:
    dx, dw, dy, _, dX = _node_parts(spec, batch, node)
    xs = spec.slices("n")
    T = batch.horizon
    drive = cert.q_gain * _norm(dw) + cert.r_gain * _norm(dy)
    for j, g in cert.g.items():
        drive = drive + g * _norm(dX[:, :-1, xs[j]])
    acc = np.zeros((len(batch), T + 1))
    for t in range(T):
        acc[:, t + 1] = cert.eta * acc[:, t] + drive[:, t]
    decay = cert.p_gain * cert.eta ** np.arange(T + 1)[None, :] * _norm(dx[:, 0])[:, None]
    return _rel([decay, acc], _norm(dx))


def _slack_subsystem_lyap(spec, batch, node, cert: SubsystemLyapCertificate, extra) -> np.ndarray:
    neighbor_P = extra["neighbor_P"]
    dx, dw, dy, _, dX = _node_parts(spec, batch, node)
    xs = spec.slices("n")
    V = _qform(dx, cert.P1)
    terms = [(1.0 - cert.lam) * V[:, :-1], _qform(dw, cert.Q), _qform(dy, cert.R)]
    for j, gam in cert.gamma.items():
        terms.append(gam * _qform(dX[:, :-1, xs[j]], neighbor_P[j]))
    return _rel(terms, V[:, 1:])


def _slack_overall_lyap(spec, batch, node, cert: OverallLyapCertificate, extra) -> np.ndarray:
    dX = batch.dX
    V = _qform(dX, cert.P_sigma1)
    terms = [(1.0 - cert.lambda_sigma) * V[:, :-1], _qform(batch.dW, cert.Q_sigma),
             _qform(batch.dY, cert.R_sigma)]
    return _rel(terms, V[:, 1:])


def _slack_overall_traj(spec, batch, node, cert: OverallTrajCertificate, extra) -> np.ndarray:
    dX = batch.dX
    T = batch.horizon
    decay = cert.h * cert.sigma ** np.arange(T + 1)[None, :] * _norm(dX[:, 0])[:, None]
    dist = cert.disturbance_gain * _running_max(_norm(batch.dW))
    out = cert.output_gain * _running_max(_norm(batch.dY))
    return _rel([decay, dist, out], _norm(dX))


_KINDS: dict[str, tuple[Callable, type]] = {
    "decrease": (_slack_decrease, LmiCertificate),
    "assumption1": (_slack_assumption1, SubsystemIossCertificate),
    "subsystem-lyap": (_slack_subsystem_lyap, SubsystemLyapCertificate),
    "overall-lyap": (_slack_overall_lyap, OverallLyapCertificate),
    "overall-traj": (_slack_overall_traj, OverallTrajCertificate),
}


@dataclass
class Check:
    """One certified inequality bound to its certificate.

    ``node`` is ``None`` for network-level checks.  ``extra`` carries
    auxiliary data, currently the neighbour ``P`` matrices of a
    Lyapunov-form subsystem check.
    """

    kind: str
    certificate: object
    node: int | None = None
    extra: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpecificationError(f"unknown check kind {self.kind!r}")
        if not self.label:
            self.label = self.kind if self.node is None else f"{self.kind}[{self.node}]"

    def slack(self, spec: NetworkSpec, batch: PairBatch) -> np.ndarray:
        """Relative slack per pair and time step; negative means violated."""
        return _KINDS[self.kind][0](spec, batch, self.node, self.certificate, self.extra)

    def to_dict(self) -> dict:
        extra = {}
        if "neighbor_P" in self.extra:
            extra["neighbor_P"] = {str(j): np.asarray(P).tolist()
                                   for j, P in sorted(self.extra["neighbor_P"].items())}
        return {"kind": self.kind, "node": self.node, "label": self.label,
                "certificate": self.certificate.to_dict(), "extra": extra}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Check":
        kind = data["kind"]
        cert = _KINDS[kind][1].from_dict(data["certificate"])
        extra = {}
        if "neighbor_P" in data.get("extra", {}):
            extra["neighbor_P"] = {int(j): np.asarray(P, dtype=float)
                                   for j, P in data["extra"]["neighbor_P"].items()}
        return cls(kind, cert, data.get("node"), extra, data.get("label", ""))


def check_subsystem_decrease(node: int, cert: LmiCertificate) -> Check:
    """One-step incremental dissipation of a node in its class metric."""
    return Check("decrease", cert, node)


def check_assumption1(node: int, cert: SubsystemIossCertificate) -> Check:
    """Time-discounted trajectory bound of a node, neighbours read as inputs."""
    return Check("assumption1", cert, node)


def check_subsystem_lyap(node: int, cert: SubsystemLyapCertificate,
                         neighbor_P: Mapping[int, np.ndarray]) -> Check:
    """Lyapunov decrease of a node, coupling evaluated at the same time step."""
    return Check("subsystem-lyap", cert, node, {"neighbor_P": dict(neighbor_P)})


def check_overall_lyap(cert: OverallLyapCertificate) -> Check:
    """Decrease of the weighted sum of subsystem Lyapunov functions."""
    return Check("overall-lyap", cert)


def check_overall_traj_bound(cert: OverallTrajCertificate) -> Check:
    """Network-level exponential bound with max-form disturbance and output terms."""
    return Check("overall-traj", cert)


# --------------------------------------------------------------------------
# Reports


@dataclass
class FalsificationReport:
    """Outcome of one check; ``merge`` is associative and order-free for counts."""

    label: str
    checks_run: int = 0
    violations: int = 0
    worst_slack: float = float("inf")
    pairs: int = 0
    discarded_pairs: int = 0
    witness: dict | None = None

    @property
    def falsified(self) -> bool:
        return self.violations > 0

    def merge(self, other: "FalsificationReport") -> "FalsificationReport":
        best = self if self.worst_slack <= other.worst_slack else other
        return FalsificationReport(
            label=self.label,
            checks_run=self.checks_run + other.checks_run,
            violations=self.violations + other.violations,
            worst_slack=min(self.worst_slack, other.worst_slack),
            pairs=self.pairs + other.pairs,
            discarded_pairs=self.discarded_pairs + other.discarded_pairs,
            witness=best.witness if best.witness is not None else (self.witness or other.witness),
        )

    def to_dict(self, with_witness: bool = False) -> dict:
        out = {"label": self.label, "checks_run": self.checks_run, "violations": self.violations,
               "worst_slack": None if not np.isfinite(self.worst_slack) else self.worst_slack,
               "pairs": self.pairs, "discarded_pairs": self.discarded_pairs,
               "verdict": "falsified" if self.falsified else ("not falsified" if self.checks_run else "not-run")}
        if with_witness:
            out["witness"] = self.witness
        return out


def evaluate(spec: NetworkSpec, check: Check, batch: PairBatch, discarded: int = 0,
             context: Mapping | None = None) -> FalsificationReport:
    """Run ``check`` on every pair; the worst violating pair becomes the witness."""
    rep = FalsificationReport(check.label, pairs=len(batch), discarded_pairs=discarded)
    if len(batch) == 0:
        return rep
    slack = check.slack(spec, batch)
    rep.checks_run = int(slack.size)
    rep.violations = int(np.count_nonzero(slack < -TOLERANCE))
    k, t = np.unravel_index(int(np.argmin(slack)), slack.shape)
    rep.worst_slack = float(slack[k, t])
    if rep.violations:
        rep.witness = {"check": check.to_dict(), "pair": batch.pair(k).to_dict(), "step": int(t),
                       "slack": rep.worst_slack, "tolerance": TOLERANCE, "context": dict(context or {})}
    return rep


def adversarial_search(spec: NetworkSpec, check: Check, batch: PairBatch, config: SamplerConfig,
                       rng: np.random.Generator) -> PairBatch:
    """Refine the worst pairs of ``batch`` by random coordinate ascent on the violation.

    The free coordinates are both initial states and both disturbance
    sequences.  Moves that leave the input boxes are clipped; moves whose
    trajectories leave the state box are rejected.
    """
    if len(batch) == 0:
        return batch
    worst = check.slack(spec, batch).min(axis=1)
    pool = batch.take(np.argsort(worst, kind="stable")[: config.ascent_pool])
    K, T = len(pool), config.horizon
    sbox, wbox = spec.state_box(), spec.disturbance_box()
    free = config.disturbance != "zero"
    n, q = sbox.dim, wbox.dim
    lo = np.concatenate([sbox.lower, sbox.lower] + ([np.tile(wbox.lower, 2 * T)] if free else []))
    hi = np.concatenate([sbox.upper, sbox.upper] + ([np.tile(wbox.upper, 2 * T)] if free else []))

    def pack(b: PairBatch) -> np.ndarray:
        parts = [b.x0, b.xt0]
        if free:
            parts += [b.w.reshape(K, -1), b.wt.reshape(K, -1)]
        return np.concatenate(parts, axis=1)

    def unpack(z: np.ndarray) -> PairBatch:
        x0, xt0 = z[:, :n], z[:, n:2 * n]
        if free:
            w = z[:, 2 * n:2 * n + T * q].reshape(K, T, q)
            wt = z[:, 2 * n + T * q:].reshape(K, T, q)
        else:
            w, wt = pool.w, pool.wt
        return PairBatch.from_inputs(spec, x0, xt0, pool.u, w, wt)

    z = pack(pool)
    score = check.slack(spec, pool).min(axis=1)
    step = config.ascent_step * (hi - lo)
    dim = z.shape[1]
    for _ in range(config.ascent_iters):
        # Initial states matter at every step, so they are tried more often.
        k = int(rng.integers(2 * n)) if rng.random() < 0.5 else int(rng.integers(dim))
        for sign in (1.0, -1.0):
            cand = z.copy()
            cand[:, k] = np.clip(cand[:, k] + sign * step[k], lo[k], hi[k])
            trial = unpack(cand)
            s = check.slack(spec, trial).min(axis=1)
            better = trial.in_domain(spec) & (s < score)
            z[better] = cand[better]
            score[better] = s[better]
        step[k] *= 0.9
    return unpack(z)


def falsify(spec: NetworkSpec, checks: Iterable[Check], n_pairs: int,
            config: SamplerConfig | None = None, seed: int = 0,
            context: Mapping | None = None) -> dict[str, FalsificationReport]:
    """Evaluate every check on a shared pair sample (plus adversarial refinement)."""
    config = config or SamplerConfig()
    checks = list(checks)
    if n_pairs <= 0:
        return {c.label: FalsificationReport(c.label) for c in checks}
    batch, discarded = sample_pairs(spec, n_pairs, config, seed)
    out = {}
    for idx, check in enumerate(checks):
        rep = evaluate(spec, check, batch, discarded, context)
        if config.mode == "adversarial":
            rng = np.random.default_rng([int(seed), 1_000_003, idx])
            refined = adversarial_search(spec, check, batch, config, rng)
            rep = rep.merge(evaluate(spec, check, refined, 0, context))
        out[check.label] = rep
    return out


def replay(spec: NetworkSpec, witness: Mapping) -> float:
    """Re-simulate a witness pair and return its slack at the recorded step."""
    check = Check.from_dict(witness["check"])
    batch = TrajectoryPair.from_dict(witness["pair"]).simulate(spec)
    return float(check.slack(spec, batch)[0, int(witness["step"])])
