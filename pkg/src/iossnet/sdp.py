"""Eigenvalue minimisation for block-diagonal affine matrix pencils.

A pencil is ``F(theta) = blockdiag_b(F0_b + sum_k theta_k F_bk)``.  The
largest eigenvalue of ``F`` is convex in ``theta``, so an LMI system
``F(theta) <= -margin I`` is feasible iff the minimum of ``lambda_max``
is at most ``-margin``.  The minimiser here smooths ``lambda_max`` with a
log-sum-exp over all block eigenvalues and runs L-BFGS on a decreasing
sequence of smoothing levels.

The optimiser is never trusted: a ``feasible`` status is only reported
after the eigenvalues of every block have been recomputed at the returned
point.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import NumericError, SpecificationError

log = logging.getLogger(__name__)

__all__ = [
    "PencilBlock",
    "AffineMatrixPencil",
    "Status",
    "FeasibilityResult",
    "ConicSolver",
    "lambda_max",
    "block_lambda_max",
    "minimize_lambda_max",
    "bisect_objective",
]

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PencilBlock:
    """One diagonal block: ``F0 + sum_k theta_k coeffs[k]``."""

    F0: np.ndarray
    coeffs: np.ndarray  # (var_count, size, size)
    label: str = ""

    @property
    def size(self) -> int:
        return self.F0.shape[0]


@dataclass(frozen=True, eq=False)
class AffineMatrixPencil:
    blocks: tuple[PencilBlock, ...]
    var_count: int
    objective: np.ndarray | None = None
    initial: np.ndarray | None = None
    var_names: tuple[str, ...] = ()
    _groups: list = field(init=False, repr=False)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        for idx, blk in enumerate(blocks):
            F0 = np.asarray(blk.F0, dtype=float)
            C = np.asarray(blk.coeffs, dtype=float).reshape(self.var_count, *F0.shape)
            if F0.ndim != 2 or F0.shape[0] != F0.shape[1]:
                raise SpecificationError(f"block {idx}: constant term must be square")
            if np.max(np.abs(F0 - F0.T), initial=0.0) > SYMMETRY_TOL:
                raise SpecificationError(f"block {idx}: constant term is not symmetric")
            if C.size and np.max(np.abs(C - C.transpose(0, 2, 1))) > SYMMETRY_TOL:
                raise SpecificationError(f"block {idx}: a coefficient matrix is not symmetric")
            if not (np.all(np.isfinite(F0)) and np.all(np.isfinite(C))):
                raise SpecificationError(f"block {idx}: non-finite entries")
        if self.objective is not None:
            obj = np.asarray(self.objective, dtype=float)
            if obj.shape != (self.var_count,):
                raise SpecificationError("objective length must equal var_count")
            object.__setattr__(self, "objective", obj)
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (self.var_count,):
                raise SpecificationError("initial point length must equal var_count")
            object.__setattr__(self, "initial", init)
        # Stack equally sized blocks so each group needs one batched eigh call.
        groups: dict[int, list[int]] = {}
        for idx, blk in enumerate(blocks):
            groups.setdefault(blk.size, []).append(idx)
        compiled = []
        for size, idxs in sorted(groups.items()):
            F0 = np.stack([np.asarray(blocks[i].F0, dtype=float) for i in idxs])
            C = np.stack(
                [np.asarray(blocks[i].coeffs, dtype=float).reshape(self.var_count, size, size) for i in idxs]
            )
            compiled.append((np.array(idxs), F0, C))
        object.__setattr__(self, "_groups", compiled)

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def evaluate(self, theta) -> list[np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        out: list[np.ndarray] = [None] * len(self.blocks)  # type: ignore[list-item]
        for idxs, F0, C in self._groups:
            mats = F0 + np.einsum("k,bkij->bij", theta, C)
            for pos, i in enumerate(idxs):
                out[i] = mats[pos]
        return out

    def fix_variable(self, index: int, value: float) -> "AffineMatrixPencil":
        """Pencil with variable ``index`` substituted by ``value``."""
        keep = [k for k in range(self.var_count) if k != index]
        blocks = []
        for blk in self.blocks:
            C = np.asarray(blk.coeffs).reshape(self.var_count, blk.size, blk.size)
            blocks.append(PencilBlock(blk.F0 + value * C[index], C[keep], blk.label))
        return AffineMatrixPencil(
            tuple(blocks),
            self.var_count - 1,
            objective=None if self.objective is None else self.objective[keep],
            initial=None if self.initial is None else self.initial[keep],
            var_names=tuple(self.var_names[k] for k in keep) if self.var_names else (),
        )


class Status(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible-certified-none"
    INCONCLUSIVE = "inconclusive"


@dataclass
class FeasibilityResult:
    status: Status
    theta: np.ndarray
    achieved_lambda_max: float
    iterations: int

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


class ConicSolver(Protocol):
    """Adapter seam for an external conic solver."""

    def __call__(self, pencil: AffineMatrixPencil, margin: float, budget: int, seed: int) -> FeasibilityResult: ...


def block_lambda_max(pencil: AffineMatrixPencil, theta) -> np.ndarray:
    """Largest eigenvalue of every block, from a fresh symmetric eigensolve."""
    mats = pencil.evaluate(theta)
    out = np.empty(len(mats))
    for i, mat in enumerate(mats):
        if not np.all(np.isfinite(mat)):
            raise NumericError(f"block {i} ({pencil.blocks[i].label}) has non-finite entries")
        out[i] = np.linalg.eigvalsh(0.5 * (mat + mat.T))[-1]
    return out


def lambda_max(pencil: AffineMatrixPencil, theta) -> float:
    if not pencil.blocks:
        return -np.inf
    return float(np.max(block_lambda_max(pencil, theta)))


class _Found(Exception):
    def __init__(self, theta):
        self.theta = theta


class _Smoothed:
    """Soft-max of all block eigenvalues and its gradient."""

    def __init__(self, pencil: AffineMatrixPencil, margin: float):
        self.pencil = pencil
        self.margin = margin
        self.mu = 1.0
        self.evals = 0
        self.best_lam = np.inf
        self.best_theta = None

    def __call__(self, theta):
        self.evals += 1
        eigs = []
        for idxs, F0, C in self.pencil._groups:
            mats = F0 + np.einsum("k,bkij->bij", theta, C)
            if not np.all(np.isfinite(mats)):
                bad = int(idxs[np.argmax(~np.all(np.isfinite(mats), axis=(1, 2)))])
                raise NumericError(f"non-finite entries in block {bad} during iteration")
            lam, vec = np.linalg.eigh(mats)
            eigs.append((lam, vec, C))
        top = max(float(lam.max()) for lam, _, _ in eigs)
        if top < self.best_lam:
            self.best_lam = top
            self.best_theta = theta.copy()
        if top <= -self.margin:
            raise _Found(theta.copy())
        total = 0.0
        grad = np.zeros_like(theta)
        weights = []
        for lam, vec, C in eigs:
            wts = np.exp((lam - top) / self.mu)
            total += wts.sum()
            weights.append(wts)
        for (lam, vec, C), wts in zip(eigs, weights):
            W = np.einsum("bik,bk,bjk->bij", vec, wts / total, vec)
            grad += np.einsum("bkij,bij->k", C, W)
        value = top + self.mu * np.log(total)
        return value, grad


def minimize_lambda_max(
    pencil: AffineMatrixPencil,
    margin: float = 0.0,
    budget: int = 2000,
    seed: int = 0,
    theta0=None,
    early_stop: bool = True,
) -> FeasibilityResult:
    """Search for ``theta`` with ``lambda_max(F(theta)) <= -margin``.

    ``budget`` caps the total number of objective evaluations.  The seed
    only perturbs the starting point.  When the budget runs out the
    result is ``inconclusive``; ``infeasible-certified-none`` is returned
    only when some block has no variable dependence and a constant
    eigenvalue above ``-margin``.  With ``early_stop=False`` the search
    never gives up on an unreachable target, which turns it into a plain
    minimizer of ``lambda_max``.
    """
    if margin < 0:
        raise SpecificationError("margin must be >= 0")
    nvar = pencil.var_count
    for idx, blk in enumerate(pencil.blocks):
        C = np.asarray(blk.coeffs).reshape(nvar, blk.size, blk.size)
        if not np.any(C):
            top = float(np.linalg.eigvalsh(blk.F0)[-1])
            if top > -margin:
                return FeasibilityResult(Status.INFEASIBLE, np.zeros(nvar), top, 0)

    rng = np.random.default_rng(seed)
    if theta0 is not None:
        theta = np.asarray(theta0, dtype=float).copy()
    elif pencil.initial is not None:
        theta = pencil.initial.copy()
    else:
        theta = np.zeros(nvar)
    theta = theta + 1e-6 * rng.standard_normal(nvar)

    if nvar == 0:
        lam = lambda_max(pencil, theta)
        status = Status.FEASIBLE if lam <= -margin else Status.INCONCLUSIVE
        return FeasibilityResult(status, theta, lam, 0)

    fn = _Smoothed(pencil, margin)
    start = lambda_max(pencil, theta)
    if start <= -margin:
        return _verified(pencil, theta, margin, 0)
    scale = max(1.0, abs(start))
    schedule = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    per_stage = max(20, budget // len(schedule))
    found = None
    for stage, factor in enumerate(schedule):
        remaining = budget - fn.evals
        if remaining <= 0:
            break
        fn.mu = factor * scale
        try:
            res = minimize(
                fn, theta, jac=True, method="L-BFGS-B",
                options={"maxiter": min(per_stage, remaining), "maxfun": min(per_stage, remaining),
                         "gtol": 1e-14, "ftol": 1e-15, "maxcor": 30},
            )
            theta = res.x
        except _Found as hit:
            found = hit.theta
            break
        if fn.best_theta is not None:
            theta = fn.best_theta.copy()
        if early_stop and stage >= 2 and _dual_bound(pencil, theta, fn.mu) > -margin:
            # The weights of the smoothed problem certify (approximately)
            # that -margin is out of reach; give up early.
            break
    if found is not None:
        return _verified(pencil, found, margin, fn.evals)
    best = fn.best_theta if fn.best_theta is not None else theta
    return _verified(pencil, best, margin, fn.evals)


def _dual_bound(pencil: AffineMatrixPencil, theta, mu: float) -> float:
    """Lower estimate of ``min lambda_max`` from the soft-max weights at ``theta``.

    With unit-trace PSD weights ``W`` every ``theta'`` obeys
    ``lambda_max(F(theta')) >= <F0, W> + theta' . g`` where ``g`` is the
    smoothed gradient.  The term ``theta' . g`` is bounded heuristically by
    ``|g| (1 + |theta|)``, so the value is used only to stop early, never
    to claim infeasibility.
    """
    eigs = []
    for idxs, F0, C in pencil._groups:
        mats = F0 + np.einsum("k,bkij->bij", theta, C)
        lam, vec = np.linalg.eigh(mats)
        eigs.append((lam, vec, F0, C))
    top = max(float(lam.max()) for lam, *_ in eigs)
    total = sum(float(np.exp((lam - top) / mu).sum()) for lam, *_ in eigs)
    c0 = 0.0
    grad = np.zeros_like(theta)
    for lam, vec, F0, C in eigs:
        wts = np.exp((lam - top) / mu) / total
        W = np.einsum("bik,bk,bjk->bij", vec, wts, vec)
        c0 += float(np.einsum("bij,bij->", F0, W))
        grad += np.einsum("bkij,bij->k", C, W)
    return c0 - float(np.linalg.norm(grad)) * (1.0 + float(np.linalg.norm(theta)))


def _verified(pencil: AffineMatrixPencil, theta, margin: float, iterations: int) -> FeasibilityResult:
    lam = lambda_max(pencil, theta)
    status = Status.FEASIBLE if lam <= -margin else Status.INCONCLUSIVE
    return FeasibilityResult(status, np.asarray(theta, dtype=float), lam, iterations)


def _objective_variable(pencil: AffineMatrixPencil) -> int:
    obj = pencil.objective
    if obj is None:
        raise SpecificationError("pencil has no objective")
    nz = np.flatnonzero(obj)
    if len(nz) != 1 or obj[nz[0]] != 1.0:
        raise SpecificationError("bisection needs an objective equal to a single decision variable")
    return int(nz[0])


def bisect_objective(
    pencil: AffineMatrixPencil,
    tolerance: float = 1e-5,
    budget: int = 2000,
    margin: float = 0.0,
    seed: int = 0,
    max_doublings: int = 40,
) -> tuple[float, FeasibilityResult]:
    """Smallest objective level ``t`` at which the pencil is feasible.

    The objective must pick out a single decision variable ``t``; each
    bisection step substitutes a fixed level for it and calls
    :func:`minimize_lambda_max`.  Returns ``(t, result)`` where ``result``
    holds the witness at ``t`` with ``t`` re-inserted into ``theta``.  If no
    feasible level is found the returned ``t`` is ``inf`` and the result is
    inconclusive.
    """
    k = _objective_variable(pencil)

    def solve_at(level, start):
        fixed = pencil.fix_variable(k, level)
        res = minimize_lambda_max(fixed, margin=margin, budget=budget, seed=seed, theta0=start)
        return res

    def tighten(res, level):
        """Lowest level at which the witness of ``res`` stays feasible."""
        theta = res.theta

        def ok(lv):
            return lambda_max(pencil, np.insert(theta, k, lv)) <= -margin

        lo_lv, hi_lv = level - max(1.0, abs(level)), level
        if ok(lo_lv):
            return level
        for _ in range(50):
            mid = 0.5 * (lo_lv + hi_lv)
            if ok(mid):
                hi_lv = mid
            else:
                lo_lv = mid
        return hi_lv

    def with_level(res, level):
        theta = np.insert(res.theta, k, level)
        return FeasibilityResult(res.status, theta, res.achieved_lambda_max, res.iterations)

    iterations = 0
    start = None if pencil.initial is None else np.delete(pencil.initial, k)
    hi = 1.0
    hi_res = None
    for _ in range(max_doublings):
        res = solve_at(hi, start)
        iterations += res.iterations
        if res.feasible:
            hi_res = res
            hi = tighten(res, hi)
            break
        hi *= 2.0
    if hi_res is None:
        log.info("bisection found no feasible level up to %g", hi)
        return np.inf, FeasibilityResult(Status.INCONCLUSIVE, np.insert(res.theta, k, hi), res.achieved_lambda_max, iterations)

    lo = 0.0
    lo_res = solve_at(lo, hi_res.theta)
    iterations += lo_res.iterations
    if lo_res.feasible:
        # walk downward until infeasible (objectives may be negative)
        step = max(1.0, abs(hi))
        hi, hi_res = lo, lo_res
        for _ in range(max_doublings):
            lo = hi - step
            lo_res = solve_at(lo, hi_res.theta)
            iterations += lo_res.iterations
            if not lo_res.feasible:
                break
            hi, hi_res = lo, lo_res
            step *= 2.0
        else:
            out = with_level(hi_res, hi)
            out.iterations = iterations
            return hi, out

    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        res = solve_at(mid, hi_res.theta)
        iterations += res.iterations
        if res.feasible:
            hi, hi_res = tighten(res, mid), res
        else:
            lo = mid
    out = with_level(hi_res, hi)
    out.iterations = iterations
    return hi, out
