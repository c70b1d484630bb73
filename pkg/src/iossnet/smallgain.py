"""Gain matrices, small-gain tests and network-level certificates.

Two certificate families are supported.  Trajectory-form subsystem
certificates ``(eta, p, q, r, g_ij)`` lead to the gain matrix
``G = [g_ij / (1 - eta_i)]`` and the test ``rho(G) < 1``.  Lyapunov-form
certificates ``(lambda, P1, P2, Q, R, gamma_ij)`` lead to
``Lambda^{-1} Gamma`` and the test ``rho(Lambda^{-1} Gamma) < 1``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import CompositionError, SpecificationError

log = logging.getLogger(__name__)

__all__ = [
    "SubsystemIossCertificate",
    "SubsystemLyapCertificate",
    "GainAnalysis",
    "OverallLyapCertificate",
    "OverallTrajCertificate",
    "Verdict",
    "verdict_of",
    "build_G",
    "build_lambda_gamma",
    "spectral_radius",
    "check_small_gain",
    "compute_mu",
    "compose_overall_lyapunov",
    "derive_trajectory_certificate",
    "check_small_gain_uniform",
    "MARGINAL_BAND",
]

MARGINAL_BAND = 1e-10


@dataclass
class SubsystemIossCertificate:
    """Exponential decay rate ``eta`` with gains on the initial deviation,
    disturbance, output and each neighbour deviation."""

    eta: float
    p_gain: float
    q_gain: float
    r_gain: float
    g: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise SpecificationError(f"eta must lie in (0, 1), got {self.eta}")
        for name in ("p_gain", "q_gain", "r_gain"):
            if not getattr(self, name) > 0.0:
                raise SpecificationError(f"{name} must be > 0")
        self.g = {int(j): float(v) for j, v in self.g.items()}
        if any(v <= 0.0 for v in self.g.values()):
            raise SpecificationError("coupling gains must be > 0")

    def to_dict(self) -> dict:
        return {"eta": self.eta, "p_gain": self.p_gain, "q_gain": self.q_gain,
                "r_gain": self.r_gain, "g": {str(j): v for j, v in sorted(self.g.items())}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SubsystemIossCertificate":
        return cls(float(data["eta"]), float(data["p_gain"]), float(data["q_gain"]),
                   float(data["r_gain"]), {int(j): float(v) for j, v in data.get("g", {}).items()})


@dataclass
class SubsystemLyapCertificate:
    lam: float
    P1: np.ndarray
    P2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gamma: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise SpecificationError(f"lambda must lie in (0, 1), got {self.lam}")
        self.P1, self.P2, self.Q, self.R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in
                                            (self.P1, self.P2, self.Q, self.R))
        if np.linalg.eigvalsh(self.P2 - self.P1)[0] < -1e-9 * max(1.0, np.abs(self.P2).max()):
            raise SpecificationError("P1 must be dominated by P2")
        self.gamma = {int(j): float(v) for j, v in self.gamma.items()}
        if any(v <= 0.0 for v in self.gamma.values()):
            raise SpecificationError("coupling gains must be > 0")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "P1": self.P1.tolist(), "P2": self.P2.tolist(),
                "Q": self.Q.tolist(), "R": self.R.tolist(),
                "gamma": {str(j): v for j, v in sorted(self.gamma.items())}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SubsystemLyapCertificate":
        return cls(float(data["lambda"]), data["P1"], data["P2"], data["Q"], data["R"],
                   {int(j): float(v) for j, v in data.get("gamma", {}).items()})


class Verdict:
    PASS = "pass"
    FAIL = "fail"
    MARGINAL = "marginal"
    NOT_RUN = "not-run"


def verdict_of(radius: float) -> str:
    """Strict ``< 1`` test; radii within the numerical band around 1 are marginal."""
    if abs(radius - 1.0) <= MARGINAL_BAND:
        return Verdict.MARGINAL
    return Verdict.PASS if radius < 1.0 else Verdict.FAIL


def build_G(certs: Sequence[SubsystemIossCertificate], neighbors: Sequence[Sequence[int]]) -> np.ndarray:
    """``G[i, j] = g_ij / (1 - eta_i)`` on coupled pairs, zero elsewhere."""
    M = len(certs)
    if len(neighbors) != M:
        raise SpecificationError("one certificate per node is required")
    G = np.zeros((M, M))
    for i, (cert, nb) in enumerate(zip(certs, neighbors)):
        if set(cert.g) != set(nb):
            raise SpecificationError(f"node {i}: gains defined on {sorted(cert.g)}, neighbours are {sorted(nb)}")
        for j in nb:
            G[i, j] = cert.g[j] / (1.0 - cert.eta)
    return G


def build_lambda_gamma(certs: Sequence[SubsystemLyapCertificate],
                       neighbors: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal decay matrix and coupling matrix of the Lyapunov family."""
    M = len(certs)
    if len(neighbors) != M:
        raise SpecificationError("one certificate per node is required")
    Gamma = np.zeros((M, M))
    for i, (cert, nb) in enumerate(zip(certs, neighbors)):
        if set(cert.gamma) != set(nb):
            raise SpecificationError(f"node {i}: gains defined on {sorted(cert.gamma)}, neighbours are {sorted(nb)}")
        for j in nb:
            Gamma[i, j] = cert.gamma[j]
    return np.diag([c.lam for c in certs]), Gamma


def _dense_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def _power_radius(A: np.ndarray, tol: float, max_iter: int) -> float | None:
    """Collatz-Wielandt bracketing on the shifted matrix ``I + A``.

    For nonnegative ``A`` and positive ``x``, ``min (Ax)_i / x_i`` and
    ``max (Ax)_i / x_i`` bracket ``rho(A)``; the shift removes the
    periodicity of bipartite coupling graphs.  Returns ``None`` when the
    bracket does not close within ``max_iter`` steps.
    """
    n = A.shape[0]
    x = np.ones(n)
    for _ in range(max_iter):
        Ax = A @ x
        ratios = Ax / x
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo <= tol:
            return 0.5 * (lo + hi)
        x = x + Ax
        x /= x.max()
        if x.min() <= 1e-280:
            return None
    return None


def spectral_radius(A, method: str = "auto", tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Spectral radius of a square matrix.

    ``method`` is ``"auto"`` (power iteration with a dense fallback),
    ``"power"`` (power iteration only; raises if it stalls) or ``"dense"``.
    Matrices with negative entries always use the dense eigensolver.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpecificationError(f"spectral radius needs a square matrix, got shape {A.shape}")
    if A.size == 0:
        return 0.0
    if method == "dense":
        return _dense_radius(A)
    if np.any(A < 0):
        warnings.warn("spectral_radius: matrix has negative entries; using the dense eigensolver",
                      RuntimeWarning, stacklevel=2)
        return _dense_radius(A)
    radius = _power_radius(A, tol, max_iter)
    if radius is None:
        if method == "power":
            raise RuntimeError("power iteration did not converge")
        log.debug("power iteration stalled; falling back to dense eigenvalues")
        return _dense_radius(A)
    return radius


@dataclass
class GainAnalysis:
    G: np.ndarray | None = None
    Lambda: np.ndarray | None = None
    Gamma: np.ndarray | None = None
    LG: np.ndarray | None = None
    rho_G: float | None = None
    rho_LG: float | None = None
    S: np.ndarray | None = None
    N: int | None = None
    status_traj: str = Verdict.NOT_RUN
    status_lyap: str = Verdict.NOT_RUN

    @property
    def verdict_traj(self) -> bool:
        return self.status_traj == Verdict.PASS

    @property
    def verdict_lyap(self) -> bool:
        return self.status_lyap == Verdict.PASS

    def to_dict(self) -> dict:
        def mat(a):
            return None if a is None else np.asarray(a).tolist()

        return {"G": mat(self.G), "Lambda": mat(self.Lambda), "Gamma": mat(self.Gamma),
                "LG": mat(self.LG), "rho_G": self.rho_G, "rho_LG": self.rho_LG,
                "S": mat(self.S), "N": self.N,
                "trajectory": self.status_traj, "lyapunov": self.status_lyap}


def check_small_gain(
    iioss: Sequence[SubsystemIossCertificate] | None,
    lyap: Sequence[SubsystemLyapCertificate] | None,
    neighbors: Sequence[Sequence[int]],
) -> GainAnalysis:
    """Both small-gain tests; a missing family leaves its verdict ``not-run``."""
    out = GainAnalysis()
    if iioss is not None:
        out.G = build_G(iioss, neighbors)
        out.rho_G = spectral_radius(out.G)
        out.status_traj = verdict_of(out.rho_G)
        if out.verdict_traj:
            out.N, out.S = _choose_N(iioss, out.G, out.rho_G)
    if lyap is not None:
        out.Lambda, out.Gamma = build_lambda_gamma(lyap, neighbors)
        out.LG = np.diag(1.0 / np.diag(out.Lambda)) @ out.Gamma
        out.rho_LG = spectral_radius(out.LG)
        out.status_lyap = verdict_of(out.rho_LG)
    return out


def compute_mu(Lambda, Gamma) -> np.ndarray:
    """Strictly positive weights with ``mu' (-Lambda + Gamma) < 0``.

    Uses the left Perron vector of ``Gamma Lambda^{-1} + eps * ones``.  The
    result is re-checked by direct multiplication and the function raises
    :class:`CompositionError` if the construction fails; that does not
    mean no such vector exists.
    """
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    lam = np.diag(Lambda)
    if np.any(lam <= 0):
        raise SpecificationError("decay rates must be positive")
    base = Gamma / lam[None, :]
    if spectral_radius(base) >= 1.0:
        raise CompositionError("small-gain condition rho(Lambda^-1 Gamma) < 1 does not hold")
    M = base.shape[0]
    for eps in (1e-8, 1e-10, 1e-12, 0.0):
        A = base + eps * np.ones((M, M))
        if spectral_radius(A, method="dense") >= 1.0:
            continue
        vals, vecs = np.linalg.eig(A.T)
        k = int(np.argmax(vals.real))
        mu = np.abs(vecs[:, k].real)
        if mu.max() <= 0:
            continue
        mu = mu / mu.max()
        H = mu @ (-Lambda + Gamma)
        if np.all(mu > 0) and np.all(H < 0):
            return mu
    raise CompositionError("could not construct a strictly positive weight vector")


@dataclass
class OverallLyapCertificate:
    mu: np.ndarray
    lambda_sigma: float
    H: np.ndarray
    P_sigma1: np.ndarray
    P_sigma2: np.ndarray
    Q_sigma: np.ndarray
    R_sigma: np.ndarray
    P_blocks: list[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "lambda_sigma": self.lambda_sigma, "H": self.H.tolist(),
                "P_sigma1": self.P_sigma1.tolist(), "P_sigma2": self.P_sigma2.tolist(),
                "Q_sigma": self.Q_sigma.tolist(), "R_sigma": self.R_sigma.tolist(),
                "P_blocks": [np.asarray(P).tolist() for P in self.P_blocks]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "OverallLyapCertificate":
        arr = lambda k: np.asarray(data[k], dtype=float)  # noqa: E731
        return cls(arr("mu"), float(data["lambda_sigma"]), arr("H"), arr("P_sigma1"), arr("P_sigma2"),
                   arr("Q_sigma"), arr("R_sigma"), [np.asarray(P, dtype=float) for P in data.get("P_blocks", [])])


def compose_overall_lyapunov(certs: Sequence[SubsystemLyapCertificate], mu,
                             neighbors: Sequence[Sequence[int]]) -> OverallLyapCertificate:
    """Weighted sum ``V = sum_i mu_i V_i`` and its decay rate.

    The decay rate is ``-max_j H_j / mu_j`` with ``H = mu' (-Lambda + Gamma)``,
    i.e. ``lambda_j - sum_i (mu_i / mu_j) gamma_ij`` minimised over ``j``.
    """
    mu = np.asarray(mu, dtype=float)
    Lambda, Gamma = build_lambda_gamma(certs, neighbors)
    if mu.shape != (len(certs),) or np.any(mu <= 0):
        raise CompositionError("mu must be a strictly positive vector with one entry per node")
    H = mu @ (-Lambda + Gamma)
    ratios = H / mu
    worst = int(np.argmax(ratios))
    lambda_sigma = float(-ratios[worst])
    if not 0.0 < lambda_sigma < 1.0:
        raise CompositionError(
            f"composed decay rate {lambda_sigma:.6g} is outside (0, 1); limiting node {worst}"
        )
    return OverallLyapCertificate(
        mu=mu,
        lambda_sigma=lambda_sigma,
        H=H,
        P_sigma1=scipy.linalg.block_diag(*[m * c.P1 for m, c in zip(mu, certs)]),
        P_sigma2=scipy.linalg.block_diag(*[m * c.P2 for m, c in zip(mu, certs)]),
        Q_sigma=scipy.linalg.block_diag(*[m * c.Q for m, c in zip(mu, certs)]),
        R_sigma=scipy.linalg.block_diag(*[m * c.R for m, c in zip(mu, certs)]),
        P_blocks=[c.P1 for c in certs],
    )


@dataclass
class OverallTrajCertificate:
    N: int
    rho_S: float
    b: float
    sigma0: float
    sigma: float
    g_bar: float
    b_bar: float
    h: float
    disturbance_gain: float
    output_gain: float
    M_factor: float
    S: np.ndarray
    tight_disturbance_gain: float = 0.0
    tight_output_gain: float = 0.0

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "N", "rho_S", "b", "sigma0", "sigma", "g_bar", "b_bar", "h", "disturbance_gain",
            "output_gain", "M_factor", "tight_disturbance_gain", "tight_output_gain")}
        out["S"] = self.S.tolist()
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "OverallTrajCertificate":
        kw = dict(data)
        kw["S"] = np.asarray(kw["S"], dtype=float)
        return cls(**kw)


def _S_matrix(certs: Sequence[SubsystemIossCertificate], G: np.ndarray, N: int) -> np.ndarray:
    return np.diag([c.eta ** N * c.p_gain for c in certs]) + G


def _choose_N(certs, G, rho_G, max_N: int = 100000) -> tuple[int, np.ndarray]:
    target = 0.5 * (1.0 + rho_G)
    for N in range(1, max_N + 1):
        S = _S_matrix(certs, G, N)
        if spectral_radius(S) < target:
            return N, S
    raise CompositionError("no block length N brings rho(S) below the target")


def derive_trajectory_certificate(certs: Sequence[SubsystemIossCertificate], G,
                                  xi_cap: int = 200) -> OverallTrajCertificate:
    """Constants of the network-level bound

        |dx_t| <= h sigma^t |dx_0| + disturbance_gain max_{k<t} |dw_k|
                  + output_gain max_{k<t} |dy_k|.
    """
    G = np.asarray(G, dtype=float)
    rho_G = spectral_radius(G)
    if not rho_G < 1.0:
        raise CompositionError(f"small-gain condition fails: rho(G) = {rho_G:.6g}")
    M = len(certs)
    N, S = _choose_N(certs, G, rho_G)
    rho_S = spectral_radius(S)
    sigma0 = rho_S + 1e-9
    b = 1.0
    power = np.eye(M)
    for xi in range(1, xi_cap + 1):
        power = power @ S
        b = max(b, np.linalg.norm(power, 2) / sigma0 ** xi)
    # Beyond xi_cap: |S^xi| <= cond(V) rho(S)^xi for diagonalisable S.
    vals, vecs = np.linalg.eig(S)
    cond = np.linalg.cond(vecs)
    if np.isfinite(cond):
        b = max(b, float(cond) * (rho_S / sigma0) ** (xi_cap + 1))
    else:
        raise CompositionError("S is not diagonalisable; no tail bound available")
    sigma = sigma0 ** (1.0 / (2 * N))
    g_bar = float(np.linalg.norm(np.linalg.inv(np.eye(M) - G), 2))
    b_bar = b * (g_bar + 1.0 / (1.0 - sigma0))
    p_max = max(c.p_gain for c in certs)
    h = g_bar * b * p_max * sigma ** (-N)
    q_tilde = max(c.q_gain / (1.0 - c.eta) for c in certs)
    r_tilde = max(c.r_gain / (1.0 - c.eta) for c in certs)
    root_M = float(np.sqrt(M))
    return OverallTrajCertificate(
        N=N, rho_S=rho_S, b=float(b), sigma0=sigma0, sigma=sigma, g_bar=g_bar, b_bar=b_bar, h=h,
        disturbance_gain=b_bar * root_M * q_tilde, output_gain=b_bar * root_M * r_tilde,
        M_factor=root_M, S=S,
        tight_disturbance_gain=b_bar * q_tilde, tight_output_gain=b_bar * r_tilde,
    )


def check_small_gain_uniform(rows: Mapping[str, Sequence[float]]) -> tuple[float, str]:
    """Size-independent test from worst-case rows of each class.

    ``rows`` maps a class name to the largest possible entries of its gain
    matrix row.  Since ``rho`` of a nonnegative matrix never exceeds its
    largest row sum, ``bound < 1`` certifies every network built from these
    classes.
    """
    if not rows:
        return 0.0, Verdict.NOT_RUN
    bound = max(float(np.sum(r)) for r in rows.values())
    return bound, verdict_of(bound)
