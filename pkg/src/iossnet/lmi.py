"""Per-class incremental dissipation LMIs and coupling-gain extraction.

For a fixed contraction factor ``eta_tilde`` a class is certified by
matrices ``P ≻ 0`` and ``Q, R, G ⪰ 0`` such that, at every gridded
operating point,

    [A B E]' P [A B E] - blockdiag(eta_tilde P, Q, G) - [C D F]' R [C D F]  ⪯ 0.

This yields the one-step incremental bound

    |dx+|_P^2 <= eta_tilde |dx|_P^2 + |dw|_Q^2 + |dy|_R^2 + |dz|_G^2,

from which both the trajectory-form and the Lyapunov-form subsystem
certificates follow, once the coupling term ``|dz|_G^2`` has been split
into per-neighbour gains.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from . import sdp
from .errors import InvalidCertificateError, SpecificationError
from .model import GridSpec, JacobianBundle, SubsystemClass, grid_points
from .smallgain import SubsystemIossCertificate, SubsystemLyapCertificate

log = logging.getLogger(__name__)

__all__ = [
    "Objective",
    "GainMode",
    "LmiCertificate",
    "CouplingGainSet",
    "assemble_lmi_block",
    "pose_feasibility",
    "unpack_decision",
    "solve_class_lmi",
    "extract_coupling_gains",
    "off_grid_worst",
    "output_affinity_defect",
    "to_iioss",
    "to_lyapunov",
    "GAIN_FLOOR",
]

GAIN_FLOOR = 1e-12
PSD_FLOOR = 1e-9


class Objective(str, enum.Enum):
    FEASIBILITY = "pure-feasibility"
    MIN_G = "minimize-lambda-max-of-G"


class GainMode(str, enum.Enum):
    OPTIMAL = "optimal"
    CONSERVATIVE = "conservative"


def _sym(mat) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    return 0.5 * (mat + mat.T)


def _lmin(mat) -> float:
    return float(np.linalg.eigvalsh(_sym(mat))[0]) if np.size(mat) else np.inf


def _lmax(mat) -> float:
    return float(np.linalg.eigvalsh(_sym(mat))[-1]) if np.size(mat) else 0.0


@dataclass(eq=False)
class LmiCertificate:
    """Solved LMI data for one class at one ``eta_tilde``.

    ``margin`` is the certified slack: every gridded block has largest
    eigenvalue at most ``-margin``.
    """

    eta_tilde: float
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray
    margin: float
    class_name: str = ""
    grid: tuple[int, ...] = ()
    off_grid_worst: float | None = None

    def __post_init__(self):
        for name in ("P", "Q", "R", "G"):
            setattr(self, name, _sym(np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
                                     if np.size(getattr(self, name)) else np.zeros((0, 0))))
        self.eta_tilde = float(self.eta_tilde)
        self.margin = float(self.margin)

    @property
    def lambda_min_P(self) -> float:
        return _lmin(self.P)

    @property
    def lambda_max_P(self) -> float:
        return _lmax(self.P)

    @property
    def lambda_max_G(self) -> float:
        return max(_lmax(self.G), 0.0)

    @property
    def coupling_ratio(self) -> float:
        """``lambda_max(G) / lambda_min(P)``; small values mean weak coupling."""
        return self.lambda_max_G / self.lambda_min_P

    def validate(self) -> None:
        if not 0.0 < self.eta_tilde < 1.0:
            raise InvalidCertificateError(f"eta_tilde must lie in (0, 1), got {self.eta_tilde}")
        if not self.lambda_min_P > 0.0:
            raise InvalidCertificateError("P must be positive definite")
        for name in ("Q", "R", "G"):
            mat = getattr(self, name)
            if mat.size and _lmin(mat) < -PSD_FLOOR:
                raise InvalidCertificateError(f"{name} must be positive semidefinite")

    def block(self, jac: JacobianBundle) -> np.ndarray:
        return assemble_lmi_block(jac, self.eta_tilde, self.P, self.Q, self.R, self.G)

    def to_dict(self) -> dict:
        return {
            "class": self.class_name,
            "eta_tilde": self.eta_tilde,
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "G": self.G.tolist(),
            "margin": self.margin,
            "grid": list(self.grid),
            "off_grid_worst": self.off_grid_worst,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LmiCertificate":
        def mat(key):
            value = np.asarray(data[key], dtype=float)
            return value.reshape(0, 0) if value.size == 0 else value

        return cls(
            eta_tilde=data["eta_tilde"],
            P=mat("P"), Q=mat("Q"), R=mat("R"), G=mat("G"),
            margin=data.get("margin", 0.0),
            class_name=data.get("class", ""),
            grid=tuple(data.get("grid", ())),
            off_grid_worst=data.get("off_grid_worst"),
        )


@dataclass
class CouplingGainSet:
    """Coupling gains keyed by ``(i, j)`` with ``j`` a neighbour of ``i``.

    ``gamma`` weighs the neighbour's Lyapunov function, ``g_tilde`` the
    squared neighbour deviation and ``g`` the neighbour deviation in the
    trajectory-form bound.
    """

    gamma: dict[tuple[int, int], float] = field(default_factory=dict)
    g_tilde: dict[tuple[int, int], float] = field(default_factory=dict)
    g: dict[tuple[int, int], float] = field(default_factory=dict)
    decoupled: set[int] = field(default_factory=set)

    def update(self, other: "CouplingGainSet") -> None:
        self.gamma.update(other.gamma)
        self.g_tilde.update(other.g_tilde)
        self.g.update(other.g)
        self.decoupled |= other.decoupled

    def for_node(self, i: int, attr: str) -> dict[int, float]:
        return {j: v for (a, j), v in getattr(self, attr).items() if a == i}

    def to_dict(self) -> dict:
        def enc(d):
            return [{"i": i, "j": j, "value": v} for (i, j), v in sorted(d.items())]

        return {"gamma": enc(self.gamma), "g_tilde": enc(self.g_tilde), "g": enc(self.g),
                "decoupled": sorted(self.decoupled)}


def assemble_lmi_block(jac: JacobianBundle, eta_tilde: float, P, Q, R, G) -> np.ndarray:
    """The symmetric ``(n+q+s)``-square matrix whose negativity is required."""
    A, B, C, D, E, F = (np.atleast_2d(np.asarray(m, dtype=float)) for m in
                        (jac.A, jac.B, jac.C, jac.D, jac.E, jac.F))
    n = A.shape[0]
    P = np.asarray(P, dtype=float).reshape(n, n)
    q = B.shape[1]
    s = E.shape[1]
    p = C.shape[0]
    Q = np.asarray(Q, dtype=float).reshape(q, q)
    R = np.asarray(R, dtype=float).reshape(p, p)
    G = np.asarray(G, dtype=float).reshape(s, s)
    K = np.hstack([A, B.reshape(n, q), E.reshape(n, s)])
    L = np.hstack([C.reshape(p, n), D.reshape(p, q), F.reshape(p, s)])
    out = K.T @ P @ K - L.T @ R @ L
    out[:n, :n] -= eta_tilde * P
    out[n : n + q, n : n + q] -= Q
    out[n + q :, n + q :] -= G
    return _sym(out)


def _sym_basis(k: int) -> np.ndarray:
    basis = []
    for a in range(k):
        for b in range(a, k):
            mat = np.zeros((k, k))
            mat[a, b] = mat[b, a] = 1.0
            basis.append(mat)
    return np.array(basis).reshape(len(basis), k, k)


@dataclass(frozen=True)
class _Layout:
    n: int
    q: int
    p: int
    s: int
    with_t: bool

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return tuple(k * (k + 1) // 2 for k in (self.n, self.q, self.p, self.s))

    @property
    def var_count(self) -> int:
        return sum(self.sizes) + int(self.with_t)


def unpack_decision(theta, n: int, q: int, p: int, s: int) -> tuple[np.ndarray, ...]:
    """Split a decision vector into ``(P, Q, R, G)`` and an optional level ``t``."""
    theta = np.asarray(theta, dtype=float)
    mats = []
    pos = 0
    for k in (n, q, p, s):
        size = k * (k + 1) // 2
        basis = _sym_basis(k)
        mats.append(np.einsum("v,vij->ij", theta[pos : pos + size], basis) if size else np.zeros((k, k)))
        pos += size
    extra = theta[pos:]
    return (*mats, float(extra[0]) if extra.size else None)


def _pose(cls: SubsystemClass, grid: GridSpec, eta_tilde: float, objective: Objective):
    if not 0.0 < eta_tilde < 1.0:
        raise SpecificationError(f"eta_tilde must lie in (0, 1), got {eta_tilde}")
    objective = Objective(objective)
    n, q, p, s = cls.n, cls.q, cls.p, cls.s
    layout = _Layout(n, q, p, s, with_t=objective is Objective.MIN_G and s > 0)
    nv = layout.var_count
    sizes = layout.sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    bases = [_sym_basis(k) for k in (n, q, p, s)]
    jacs = cls.grid_jacobians(grid)
    dim = n + q + s

    blocks = []
    for idx, jac in enumerate(jacs):
        jac.check_dims(n, q, p, s)
        K = np.hstack([jac.A, jac.B, jac.E]).reshape(n, dim)
        L = np.hstack([jac.C, jac.D, jac.F]).reshape(p, dim)
        C = np.zeros((nv, dim, dim))
        for v, Eab in enumerate(bases[0]):
            mat = K.T @ Eab @ K
            mat[:n, :n] -= eta_tilde * Eab
            C[offsets[0] + v] = mat
        for v, Eab in enumerate(bases[1]):
            C[offsets[1] + v, n : n + q, n : n + q] = -Eab
        for v, Eab in enumerate(bases[2]):
            C[offsets[2] + v] = -(L.T @ Eab @ L)
        for v, Eab in enumerate(bases[3]):
            C[offsets[3] + v, n + q :, n + q :] = -Eab
        C = 0.5 * (C + C.transpose(0, 2, 1))
        blocks.append(sdp.PencilBlock(np.zeros((dim, dim)), C, f"lmi[{idx}]"))

    def cone(which: int, k: int, label: str, F0=None, sign=-1.0):
        C = np.zeros((nv, k, k))
        for v, Eab in enumerate(bases[which]):
            C[offsets[which] + v] = sign * Eab
        return sdp.PencilBlock(np.zeros((k, k)) if F0 is None else F0, C, label)

    blocks.append(cone(0, n, "P-normalization", F0=np.eye(n)))
    if q:
        blocks.append(cone(1, q, "Q-cone"))
    if p:
        blocks.append(cone(2, p, "R-cone"))
    if s:
        blocks.append(cone(3, s, "G-cone"))
    objective_vec = None
    if layout.with_t:
        blk = cone(3, s, "G-level", sign=1.0)
        blk.coeffs[nv - 1] = -np.eye(s)
        blocks.append(blk)
        objective_vec = np.zeros(nv)
        objective_vec[nv - 1] = 1.0

    initial = np.zeros(nv)
    # P = I: diagonal basis entries of P
    pos = 0
    for a in range(n):
        initial[pos] = 1.0
        pos += n - a
    names = [f"P{v}" for v in range(sizes[0])] + [f"Q{v}" for v in range(sizes[1])] + \
        [f"R{v}" for v in range(sizes[2])] + [f"G{v}" for v in range(sizes[3])] + (["t"] if layout.with_t else [])
    pencil = sdp.AffineMatrixPencil(tuple(blocks), nv, objective=objective_vec, initial=initial,
                                    var_names=tuple(names))
    return pencil, layout, jacs


def pose_feasibility(cls: SubsystemClass, grid: GridSpec, eta_tilde: float,
                     objective: Objective | str = Objective.FEASIBILITY) -> sdp.AffineMatrixPencil:
    """Pencil whose negativity encodes the class LMI on every grid point.

    Blocks, in order: one LMI block per grid point, ``I - P``, ``-Q``,
    ``-R``, ``-G`` (cones of empty matrices are omitted) and, when
    minimising, ``G - t I`` with objective ``t``.
    """
    return _pose(cls, grid, eta_tilde, objective)[0]


def off_grid_worst(cls: SubsystemClass, cert: LmiCertificate, samples: int = 1000, seed: int = 0) -> float:
    """Largest LMI eigenvalue over random scheduling points (diagnostic only)."""
    rng = np.random.default_rng(seed)
    box = cls.grid_box()
    worst = -np.inf
    for theta in box.sample(rng, samples):
        worst = max(worst, _lmax(cert.block(cls.jacobian_at(cls.lift(theta)))))
    return worst


def solve_class_lmi(
    cls: SubsystemClass,
    grid: GridSpec,
    eta_tilde: float,
    objective: Objective | str = Objective.MIN_G,
    margin: float = 1e-6,
    budget: int = 2000,
    seed: int = 0,
    tolerance: float = 1e-5,
    off_grid_samples: int = 0,
) -> tuple[LmiCertificate | None, sdp.FeasibilityResult]:
    """Solve the class LMI; returns ``(certificate or None, solver result)``."""
    pencil, layout, jacs = _pose(cls, grid, eta_tilde, objective)
    if layout.with_t:
        _, result = sdp.bisect_objective(pencil, tolerance=tolerance, budget=budget, margin=margin, seed=seed)
    else:
        result = sdp.minimize_lambda_max(pencil, margin=margin, budget=budget, seed=seed)
    if not result.feasible:
        log.info("class %s: no certificate at eta_tilde=%g (%s, lambda_max=%.3g)",
                 cls.name, eta_tilde, result.status.value, result.achieved_lambda_max)
        return None, result
    P, Q, R, G, _ = unpack_decision(result.theta, layout.n, layout.q, layout.p, layout.s)
    worst = max(_lmax(assemble_lmi_block(j, eta_tilde, P, Q, R, G)) for j in jacs)
    cert = LmiCertificate(eta_tilde, P, Q, R, G, margin=-worst, class_name=cls.name,
                          grid=grid.points_per_dim)
    cert.validate()
    if off_grid_samples:
        cert.off_grid_worst = off_grid_worst(cls, cert, off_grid_samples, seed)
        log.info("class %s eta_tilde=%g: worst off-grid lambda_max %.3g (not certified)",
                 cls.name, eta_tilde, cert.off_grid_worst)
    return cert, result


def _gen_lmax(Gjj, Pj) -> float:
    """Largest ``c`` with ``Gjj ⪯ c Pj`` tight."""
    return float(scipy.linalg.eigh(_sym(Gjj), _sym(Pj), eigvals_only=True)[-1])


def _dominates(G, weights, slots, Ps) -> bool:
    diag = scipy.linalg.block_diag(*[w * P for w, P in zip(weights, Ps)])
    scale = max(1.0, float(np.max(np.abs(G))) if G.size else 1.0)
    return _lmin(diag - G) >= -1e-12 * scale


def _optimal_weights(G, slots, Ps, conservative) -> np.ndarray:
    """Smallest per-slot weights on the segment from blockwise bounds to ``conservative``."""
    bounds = np.cumsum([0] + list(slots))
    lower = np.array([
        max(_gen_lmax(G[a:b, a:b], P), 0.0) for a, b, P in zip(bounds[:-1], bounds[1:], Ps)
    ])
    upper = np.maximum(np.asarray(conservative, dtype=float), lower)
    if _dominates(G, lower, slots, Ps):
        return lower
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _dominates(G, lower + mid * (upper - lower), slots, Ps):
            hi = mid
        else:
            lo = mid
    return lower + hi * (upper - lower)


def extract_coupling_gains(
    certificate: LmiCertificate,
    node: int,
    neighbor_P: Mapping[int, np.ndarray],
    mode: GainMode | str = GainMode.OPTIMAL,
    floor: float = GAIN_FLOOR,
) -> CouplingGainSet:
    """Split ``|dz|_G^2`` into per-neighbour gains for ``node``.

    ``neighbor_P`` maps each neighbour to its own ``P`` and must be ordered
    like the coupling slots.  ``gamma`` satisfies
    ``G ⪯ blockdiag(gamma_j P_j)``, ``g_tilde`` satisfies
    ``G ⪯ blockdiag(g_tilde_j I)`` and ``g = sqrt(g_tilde / lambda_min(P_i))``.
    """
    mode = GainMode(mode)
    G = certificate.G
    if G.size and _lmin(G) < -PSD_FLOOR:
        raise InvalidCertificateError("coupling matrix G has a negative eigenvalue")
    neighbors = list(neighbor_P)
    Ps = [_sym(neighbor_P[j]) for j in neighbors]
    slots = [P.shape[0] for P in Ps]
    if sum(slots) != G.shape[0]:
        raise SpecificationError(
            f"neighbour state sizes {slots} do not match coupling dimension {G.shape[0]}"
        )
    out = CouplingGainSet()
    lmin_Pi = certificate.lambda_min_P
    gmax = certificate.lambda_max_G
    if gmax <= floor:
        out.decoupled.add(node)
        for j in neighbors:
            out.gamma[(node, j)] = floor
            out.g_tilde[(node, j)] = floor
            out.g[(node, j)] = max(float(np.sqrt(floor / lmin_Pi)), floor)
        return out
    cons_gamma = np.array([gmax / _lmin(P) for P in Ps])
    cons_gt = np.full(len(Ps), gmax)
    if mode is GainMode.CONSERVATIVE:
        gamma, g_tilde = cons_gamma, cons_gt
    else:
        gamma = _optimal_weights(G, slots, Ps, cons_gamma)
        g_tilde = _optimal_weights(G, slots, [np.eye(k) for k in slots], cons_gt)
    for k, j in enumerate(neighbors):
        gt = max(float(g_tilde[k]), floor)
        out.gamma[(node, j)] = max(float(gamma[k]), floor)
        out.g_tilde[(node, j)] = gt
        out.g[(node, j)] = float(np.sqrt(gt / lmin_Pi))
    return out


def to_iioss(cert: LmiCertificate, g: Mapping[int, float]) -> SubsystemIossCertificate:
    """Trajectory-form constants implied by a class certificate."""
    lmin = cert.lambda_min_P
    return SubsystemIossCertificate(
        eta=float(np.sqrt(cert.eta_tilde)),
        p_gain=float(np.sqrt(cert.lambda_max_P / lmin)),
        q_gain=float(np.sqrt(max(_lmax(cert.Q), GAIN_FLOOR) / lmin)),
        r_gain=float(np.sqrt(max(_lmax(cert.R), GAIN_FLOOR) / lmin)),
        g=dict(g),
    )


def to_lyapunov(cert: LmiCertificate, gamma: Mapping[int, float]) -> SubsystemLyapCertificate:
    """Quadratic Lyapunov-form certificate ``V = |dx|_P^2``."""
    return SubsystemLyapCertificate(
        lam=1.0 - cert.eta_tilde, P1=cert.P, P2=cert.P, Q=cert.Q, R=cert.R, gamma=dict(gamma)
    )


def output_affinity_defect(cls: SubsystemClass, samples: int = 100, seed: int = 0) -> float:
    """Largest midpoint defect of the output map along the state.

    Zero (to rounding) when the output is affine in the state; the LMI
    argument relies on that property.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    sbox = cls.state_box
    for _ in range(samples):
        point = cls.domain.sample(rng)
        x, u, w, z = cls.split(point)
        xa, xb = sbox.sample(rng), sbox.sample(rng)
        ha = np.asarray(cls.output(xa, u, w, z))
        hb = np.asarray(cls.output(xb, u, w, z))
        hm = np.asarray(cls.output(0.5 * (xa + xb), u, w, z))
        defect = np.max(np.abs(0.5 * (ha + hb) - hm), initial=0.0)
        worst = max(worst, float(defect) / (1.0 + float(np.max(np.abs(hm), initial=0.0))))
    return worst
