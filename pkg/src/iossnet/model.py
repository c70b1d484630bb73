"""Networks of coupled discrete-time subsystems.

A network node evolves as ``x+ = f(x, u, w, z)`` and measures
``y = h(x, u, w, z)`` where ``z`` stacks the states of the node's
neighbours.  Nodes sharing the same ``(f, h)`` pair are instances of one
:class:`SubsystemClass`, so certificates are computed per class and not
per node.

All vector-valued callables operate on the last array axis and broadcast
over leading axes, which lets the simulator advance whole batches of
trajectories at once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericError, SpecificationError

__all__ = [
    "Box",
    "GridSpec",
    "JacobianBundle",
    "Scheduling",
    "SubsystemClass",
    "NetworkSpec",
    "TrainParams",
    "grid_points",
    "finite_difference_jacobians",
    "step_network",
    "simulate",
    "make_train_network",
    "train_classes",
    "train_input",
    "MODELS",
    "ModelEntry",
    "register_model",
    "build_model",
]


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``lower <= v <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise SpecificationError(
                f"box bounds must be vectors of equal length, got {lo.shape} and {hi.shape}"
            )
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
            raise SpecificationError("box bounds must be finite")
        if np.any(lo > hi):
            raise SpecificationError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def concat(cls, *boxes: "Box") -> "Box":
        if not boxes:
            return cls(np.zeros(0), np.zeros(0))
        return cls(
            np.concatenate([b.lower for b in boxes]),
            np.concatenate([b.upper for b in boxes]),
        )

    @classmethod
    def uniform(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points, atol: float = 0.0) -> np.ndarray:
        """Boolean mask over the leading axes of ``points``."""
        pts = np.asarray(points, dtype=float)
        ok = (pts >= self.lower - atol) & (pts <= self.upper + atol)
        return np.all(ok, axis=-1)

    def sample(self, rng: np.random.Generator, size=()) -> np.ndarray:
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        return rng.uniform(self.lower, self.upper, size=shape + (self.dim,))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True)
class GridSpec:
    """Number of uniformly spaced points per gridded dimension."""

    points_per_dim: tuple[int, ...]

    def __post_init__(self):
        pts = tuple(int(v) for v in np.atleast_1d(self.points_per_dim))
        if any(v < 1 for v in pts):
            raise SpecificationError(f"grid entries must be >= 1, got {pts}")
        object.__setattr__(self, "points_per_dim", pts)

    @property
    def count(self) -> int:
        return int(np.prod(self.points_per_dim, dtype=np.int64)) if self.points_per_dim else 1


def grid_points(domain: Box, grid: GridSpec) -> np.ndarray:
    """Cartesian grid over ``domain``, one row per point.

    Each axis carries ``k`` uniformly spaced values including both
    endpoints; ``k == 1`` places the single value at the midpoint.  The
    last dimension varies fastest.
    """
    if len(grid.points_per_dim) != domain.dim:
        raise SpecificationError(
            f"grid has {len(grid.points_per_dim)} entries but domain has dimension {domain.dim}"
        )
    axes = []
    for lo, hi, k in zip(domain.lower, domain.upper, grid.points_per_dim):
        axes.append(np.array([0.5 * (lo + hi)]) if k == 1 else np.linspace(lo, hi, k))
    if not axes:
        return np.zeros((1, 0))
    return np.array(list(itertools.product(*axes)), dtype=float)


@dataclass(frozen=True)
class JacobianBundle:
    """Partial derivatives of ``(f, h)`` at one point.

    ``A = df/dx``, ``B = df/dw``, ``C = dh/dx``, ``D = dh/dw``,
    ``E = df/dz``, ``F = dh/dz``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray

    def check_dims(self, n: int, q: int, p: int, s: int) -> None:
        expected = {
            "A": (n, n), "B": (n, q), "C": (p, n),
            "D": (p, q), "E": (n, s), "F": (p, s),
        }
        for name, shape in expected.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise SpecificationError(f"Jacobian {name} has shape {got}, expected {shape}")


@dataclass(frozen=True)
class Scheduling:
    """Low-dimensional parametrisation of the points a class is gridded on.

    ``lift`` maps a scheduling vector to a full ``(x, u, w, z)`` point at
    which the Jacobians are evaluated.  Classes whose Jacobians depend on
    only a few coordinates (or on combinations such as velocity
    differences) grid over ``box`` instead of the whole domain.
    """

    box: Box
    lift: Callable[[np.ndarray], np.ndarray]


ArrayFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SubsystemClass:
    """A dynamics/output template shared by several network nodes.

    ``coupling_slots`` lists the state dimension of each neighbour in the
    order their states are concatenated into ``z``; its sum is ``s``.
    ``domain`` is a box over the concatenated ``(x, u, w, z)`` vector.

    If ``jacobians`` is omitted, central finite differences are used.  If
    ``scheduling`` is omitted, the grid runs over the domain coordinates
    listed in ``depends_on`` (all coordinates when that is ``None``) with
    every other coordinate pinned at the domain midpoint.
    """

    name: str
    n: int
    m: int
    q: int
    p: int
    coupling_slots: tuple[int, ...]
    dynamics: ArrayFn
    output: ArrayFn
    domain: Box
    jacobians: Callable[..., JacobianBundle] | None = None
    depends_on: tuple[int, ...] | None = None
    scheduling: Scheduling | None = None

    def __post_init__(self):
        object.__setattr__(self, "coupling_slots", tuple(int(v) for v in self.coupling_slots))
        for attr in ("n", "m", "q", "p"):
            if int(getattr(self, attr)) < 0:
                raise SpecificationError(f"class {self.name!r}: {attr} must be >= 0")
        if self.n < 1:
            raise SpecificationError(f"class {self.name!r}: state dimension must be >= 1")
        if self.domain.dim != self.n + self.m + self.q + self.s:
            raise SpecificationError(
                f"class {self.name!r}: domain has dimension {self.domain.dim}, "
                f"expected n+m+q+s = {self.n + self.m + self.q + self.s}"
            )

    @property
    def s(self) -> int:
        return sum(self.coupling_slots)

    @property
    def state_box(self) -> Box:
        return Box(self.domain.lower[: self.n], self.domain.upper[: self.n])

    @property
    def input_box(self) -> Box:
        lo = self.n
        return Box(self.domain.lower[lo : lo + self.m], self.domain.upper[lo : lo + self.m])

    @property
    def disturbance_box(self) -> Box:
        lo = self.n + self.m
        return Box(self.domain.lower[lo : lo + self.q], self.domain.upper[lo : lo + self.q])

    def split(self, point) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        point = np.asarray(point, dtype=float)
        a = self.n
        b = a + self.m
        c = b + self.q
        return point[..., :a], point[..., a:b], point[..., b:c], point[..., c:]

    def jacobian_at(self, point) -> JacobianBundle:
        x, u, w, z = self.split(point)
        if self.jacobians is None:
            jac = finite_difference_jacobians(self, x, u, w, z)
        else:
            jac = self.jacobians(x, u, w, z)
        jac.check_dims(self.n, self.q, self.p, self.s)
        return jac

    def grid_box(self) -> Box:
        if self.scheduling is not None:
            return self.scheduling.box
        dims = range(self.domain.dim) if self.depends_on is None else self.depends_on
        dims = list(dims)
        return Box(self.domain.lower[dims], self.domain.upper[dims])

    def lift(self, theta) -> np.ndarray:
        """Full domain point for a scheduling vector ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.scheduling is not None:
            return np.asarray(self.scheduling.lift(theta), dtype=float)
        point = self.domain.midpoint.copy()
        dims = range(self.domain.dim) if self.depends_on is None else self.depends_on
        point[list(dims)] = theta
        return point

    def grid_jacobians(self, grid: GridSpec) -> list[JacobianBundle]:
        return [self.jacobian_at(self.lift(t)) for t in grid_points(self.grid_box(), grid)]


def finite_difference_jacobians(cls: SubsystemClass, x, u, w, z) -> JacobianBundle:
    """Central differences with step ``1e-6 * (1 + |coordinate|)``."""
    x, u, w, z = (np.asarray(v, dtype=float) for v in (x, u, w, z))

    def diff(fn, arg_index, base_args, out_dim):
        base = base_args[arg_index]
        cols = []
        for k in range(base.shape[0]):
            h = 1e-6 * (1.0 + abs(base[k]))
            plus = [a.copy() for a in base_args]
            minus = [a.copy() for a in base_args]
            plus[arg_index][k] += h
            minus[arg_index][k] -= h
            cols.append((np.asarray(fn(*plus)) - np.asarray(fn(*minus))) / (2.0 * h))
        if not cols:
            return np.zeros((out_dim, 0))
        return np.stack(cols, axis=-1).reshape(out_dim, base.shape[0])

    args = [x, u, w, z]
    return JacobianBundle(
        A=diff(cls.dynamics, 0, args, cls.n),
        B=diff(cls.dynamics, 2, args, cls.n),
        C=diff(cls.output, 0, args, cls.p),
        D=diff(cls.output, 2, args, cls.p),
        E=diff(cls.dynamics, 3, args, cls.n),
        F=diff(cls.output, 3, args, cls.p),
    )


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Node-to-class assignment plus the neighbour lists.

    Nodes are indexed from 0.  The coupling vector ``z`` of node ``i`` is
    the concatenation of the neighbour states in the order of
    ``neighbors[i]``.  ``uniform`` marks models whose set of classes does
    not grow with the number of nodes, which is what makes the
    size-independent row-sum analysis meaningful.
    """

    classes: tuple[SubsystemClass, ...]
    assignment: tuple[str, ...]
    neighbors: tuple[tuple[int, ...], ...]
    uniform: bool = False
    name: str = "network"
    _by_name: dict = field(init=False, repr=False)
    _offset_cache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "assignment", tuple(self.assignment))
        object.__setattr__(self, "neighbors", tuple(tuple(int(j) for j in nb) for nb in self.neighbors))
        by_name = {}
        for c in self.classes:
            if c.name in by_name:
                raise SpecificationError(f"duplicate class name {c.name!r}")
            by_name[c.name] = c
        object.__setattr__(self, "_by_name", by_name)
        M = len(self.assignment)
        if M < 1:
            raise SpecificationError("network needs at least one node")
        if len(self.neighbors) != M:
            raise SpecificationError(
                f"neighbors has {len(self.neighbors)} entries for {M} nodes"
            )
        for i, (cname, nb) in enumerate(zip(self.assignment, self.neighbors)):
            if cname not in by_name:
                raise SpecificationError(f"node {i}: unknown class {cname!r}")
            if len(set(nb)) != len(nb):
                raise SpecificationError(f"node {i}: repeated neighbour")
            for j in nb:
                if not 0 <= j < M:
                    raise SpecificationError(f"node {i}: neighbour index {j} out of range")
                if j == i:
                    raise SpecificationError(f"node {i} lists itself as a neighbour")
            cls = by_name[cname]
            if len(nb) != len(cls.coupling_slots):
                raise SpecificationError(
                    f"node {i}: class {cname!r} expects {len(cls.coupling_slots)} neighbours, got {len(nb)}"
                )
            for slot, j in zip(cls.coupling_slots, nb):
                nj = by_name[self.assignment[j]].n
                if nj != slot:
                    raise SpecificationError(
                        f"node {i}: coupling slot of size {slot} holds neighbour {j} with state size {nj}"
                    )

    @property
    def M(self) -> int:
        return len(self.assignment)

    def class_of(self, i: int) -> SubsystemClass:
        return self._by_name[self.assignment[i]]

    def class_named(self, name: str) -> SubsystemClass:
        return self._by_name[name]

    @property
    def used_classes(self) -> tuple[SubsystemClass, ...]:
        names = set(self.assignment)
        return tuple(c for c in self.classes if c.name in names)

    def _offsets(self, attr: str) -> tuple[int, ...]:
        cache = self._offset_cache
        if attr not in cache:
            sizes = [getattr(self.class_of(i), attr) for i in range(self.M)]
            cache[attr] = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)]))
        return cache[attr]

    def slices(self, attr: str) -> list[slice]:
        """Per-node slices into a stacked vector; ``attr`` is n, m, q or p."""
        off = self._offsets(attr)
        return [slice(off[i], off[i + 1]) for i in range(self.M)]

    def size(self, attr: str) -> int:
        return self._offsets(attr)[-1]

    def coupling_layout(self, i: int) -> list[tuple[int, slice]]:
        """``(neighbour, slice of z)`` pairs for node ``i``."""
        out, start = [], 0
        for j, width in zip(self.neighbors[i], self.class_of(i).coupling_slots):
            out.append((j, slice(start, start + width)))
            start += width
        return out

    def gather_z(self, x, i: int) -> np.ndarray:
        xs = self.slices("n")
        parts = [np.asarray(x)[..., xs[j]] for j in self.neighbors[i]]
        if not parts:
            return np.zeros(np.shape(x)[:-1] + (0,))
        return np.concatenate(parts, axis=-1)

    def state_box(self) -> Box:
        return Box.concat(*(self.class_of(i).state_box for i in range(self.M)))

    def input_box(self) -> Box:
        return Box.concat(*(self.class_of(i).input_box for i in range(self.M)))

    def disturbance_box(self) -> Box:
        return Box.concat(*(self.class_of(i).disturbance_box for i in range(self.M)))


def step_network(spec: NetworkSpec, x, u, w) -> tuple[np.ndarray, np.ndarray]:
    """One step of the stacked network: returns ``(x_next, y)``.

    Inputs may carry leading batch axes; the last axis is the stacked
    vector.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    for arr, attr, label in ((x, "n", "state"), (u, "m", "input"), (w, "q", "disturbance")):
        if arr.shape[-1:] != (spec.size(attr),):
            raise SpecificationError(
                f"{label} has trailing dimension {arr.shape[-1:]} but the network expects {spec.size(attr)}"
            )
    xs, us, ws, ys = spec.slices("n"), spec.slices("m"), spec.slices("q"), spec.slices("p")
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], w.shape[:-1])
    x_next = np.empty(batch + (spec.size("n"),))
    y = np.empty(batch + (spec.size("p"),))
    for i in range(spec.M):
        cls = spec.class_of(i)
        xi, ui, wi = x[..., xs[i]], u[..., us[i]], w[..., ws[i]]
        zi = spec.gather_z(x, i)
        xn = np.asarray(cls.dynamics(xi, ui, wi, zi), dtype=float)
        yi = np.asarray(cls.output(xi, ui, wi, zi), dtype=float)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(yi))):
            raise NumericError(f"non-finite value produced by node {i} (class {cls.name!r})")
        x_next[..., xs[i]] = xn
        y[..., ys[i]] = yi
    return x_next, y


def simulate(spec: NetworkSpec, x0, u_seq, w_seq) -> tuple[np.ndarray, np.ndarray]:
    """Roll the network forward.

    ``u_seq`` and ``w_seq`` have shape ``(..., T, dim)``.  Returns states
    of shape ``(..., T + 1, n)`` and outputs of shape ``(..., T, p)``,
    where output ``t`` is measured at state ``t``.
    """
    x = np.asarray(x0, dtype=float)
    u_seq = np.asarray(u_seq, dtype=float)
    w_seq = np.asarray(w_seq, dtype=float)
    T = w_seq.shape[-2]
    states = [x]
    outputs = []
    for t in range(T):
        x, y = step_network(spec, x, u_seq[..., t, :], w_seq[..., t, :])
        states.append(np.broadcast_to(x, x.shape))
        outputs.append(y)
    batch = np.broadcast_shapes(*(s.shape for s in states))
    X = np.stack([np.broadcast_to(s, batch) for s in states], axis=-2)
    if outputs:
        Y = np.stack(outputs, axis=-2)
    else:
        Y = np.zeros(batch[:-1] + (0, spec.size("p")))
    return X, Y


# --------------------------------------------------------------------------
# Train model: carriages linked by springs and cubic dampers.


def _as_box(value) -> Box:
    if isinstance(value, Box):
        return value
    lo, hi = value
    return Box([lo], [hi])


@dataclass(frozen=True)
class TrainParams:
    """Physical constants of the carriage chain.

    The boxes are per-carriage scalar ranges.  ``position_box`` and
    ``disturbance_box`` only matter for sampling trajectories; the LMI grid
    depends on the velocity box alone.
    """

    delta: float = 0.1
    m_mass: float = 1.0
    k_spring: float = 0.25
    d_damp: float = 0.1
    velocity_box: Box = (-1.0, 1.0)
    force_box: Box = (-1.0, 1.0)
    position_box: Box = (-2.0, 2.0)
    disturbance_box: Box = (-0.01, 0.01)

    def __post_init__(self):
        for name in ("delta", "m_mass", "k_spring", "d_damp"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise SpecificationError(f"train parameter {name} must be > 0, got {v}")
            object.__setattr__(self, name, v)
        for name in ("velocity_box", "force_box", "position_box", "disturbance_box"):
            box = _as_box(getattr(self, name))
            if box.dim != 1:
                raise SpecificationError(f"train parameter {name} must be a scalar range")
            object.__setattr__(self, name, box)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise SpecificationError(f"unknown train parameter(s): {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[name] = [float(v.lower[0]), float(v.upper[0])] if isinstance(v, Box) else v
        return out


def _train_class(params: TrainParams, name: str, n_neighbors: int, driven: bool) -> SubsystemClass:
    delta, mass, k, d = params.delta, params.m_mass, params.k_spring, params.d_damp
    m_in = 1 if driven else 0
    nb = n_neighbors

    def dynamics(x, u, w, z):
        pos, vel = x[..., 0], x[..., 1]
        force = np.zeros(np.broadcast_shapes(pos.shape, z.shape[:-1]))
        for j in range(nb):
            force = force + k * (z[..., 2 * j] - pos) + d * (z[..., 2 * j + 1] - vel) ** 3
        if driven:
            force = force + u[..., 0]
        return np.stack(
            [pos + delta * vel + w[..., 0], vel + delta / mass * force + w[..., 1]], axis=-1
        )

    def output(x, u, w, z):
        return (x[..., 0] + w[..., 2])[..., None]

    def jacobians(x, u, w, z):
        vel = float(x[1])
        rel2 = [(float(z[2 * j + 1]) - vel) ** 2 for j in range(nb)]
        A = np.array([[1.0, delta], [-delta * k * nb / mass, 1.0 - 3.0 * delta * d / mass * sum(rel2)]])
        B = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        E = np.zeros((2, 2 * nb))
        for j in range(nb):
            E[1, 2 * j] = delta * k / mass
            E[1, 2 * j + 1] = 3.0 * delta * d / mass * rel2[j]
        C = np.array([[1.0, 0.0]])
        D = np.array([[0.0, 0.0, 1.0]])
        F = np.zeros((1, 2 * nb))
        return JacobianBundle(A, B, C, D, E, F)

    pos_box, vel_box = params.position_box, params.velocity_box
    state_box = Box.concat(pos_box, vel_box)
    parts = [state_box]
    if driven:
        parts.append(params.force_box)
    parts.append(Box.concat(*([params.disturbance_box] * 3)))
    parts.extend([state_box] * nb)
    domain = Box.concat(*parts)

    # Jacobians depend only on neighbour-minus-own velocity.
    span = float(vel_box.upper[0] - vel_box.lower[0])
    sched_box = Box.uniform(-span, span, nb)
    mid = domain.midpoint
    z_start = 2 + m_in + 3

    def lift(theta):
        point = mid.copy()
        for j in range(nb):
            point[z_start + 2 * j + 1] = point[1] + theta[j]
        return point

    return SubsystemClass(
        name=name,
        n=2,
        m=m_in,
        q=3,
        p=1,
        coupling_slots=(2,) * nb,
        dynamics=dynamics,
        output=output,
        domain=domain,
        jacobians=jacobians,
        scheduling=Scheduling(sched_box, lift),
    )


def train_classes(params: TrainParams) -> tuple[SubsystemClass, SubsystemClass]:
    """The end-carriage class (one neighbour, traction input) and the middle-carriage class."""
    return (
        _train_class(params, "boundary", 1, driven=True),
        _train_class(params, "interior", 2, driven=False),
    )


def make_train_network(M: int, params: TrainParams | None = None) -> NetworkSpec:
    """Chain of ``M`` carriages.

    The two end carriages share the ``boundary`` class and every other
    carriage uses ``interior``; both classes are always declared so the
    class set does not depend on ``M``.  Only the first carriage is meant
    to receive the traction force (see :func:`train_input`); the last one
    gets a zero input.
    """
    if int(M) != M or M < 2:
        raise SpecificationError(f"train network needs M >= 2 carriages, got {M}")
    M = int(M)
    params = params or TrainParams()
    boundary, interior = train_classes(params)
    assignment = ["boundary"] + ["interior"] * (M - 2) + ["boundary"]
    neighbors = [(1,)] + [(i - 1, i + 1) for i in range(1, M - 1)] + [(M - 2,)]
    return NetworkSpec(
        classes=(boundary, interior),
        assignment=tuple(assignment),
        neighbors=tuple(neighbors),
        uniform=True,
        name="train",
    )


def train_input(M: int, force) -> np.ndarray:
    """Stacked input placing ``force`` on the first carriage and zero on the last."""
    force = np.asarray(force, dtype=float)
    return np.stack([force, np.zeros_like(force)], axis=-1)


# --------------------------------------------------------------------------
# Model registry used by the command line.


@dataclass(frozen=True)
class ModelEntry:
    build: Callable[[int, Mapping], NetworkSpec]
    uniform: bool
    default_params: Callable[[], dict]


def _build_train(M: int, params: Mapping) -> NetworkSpec:
    return make_train_network(M, TrainParams.from_dict(params))


MODELS: dict[str, ModelEntry] = {
    "train": ModelEntry(_build_train, uniform=True, default_params=lambda: TrainParams().to_dict()),
}


def register_model(name: str, build: Callable[[int, Mapping], NetworkSpec], *, uniform: bool = False,
                   default_params: Callable[[], dict] = dict) -> None:
    """Make a model available to configuration files under ``name``."""
    MODELS[name] = ModelEntry(build, uniform, default_params)


def build_model(name: str, M: int, params: Mapping | None = None) -> NetworkSpec:
    try:
        entry = MODELS[name]
    except KeyError:
        raise SpecificationError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    merged = entry.default_params()
    merged.update(params or {})
    return entry.build(M, merged)
