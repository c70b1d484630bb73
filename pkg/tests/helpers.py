"""Small hand-checkable systems shared by the tests."""

import numpy as np

from iossnet.model import Box, JacobianBundle, NetworkSpec, SubsystemClass


def scalar_class(a=0.5, b=1.0, c=1.0, d=0.0, name="scalar", bound=1.0):
    """``x+ = a x + b w``, ``y = c x + d w`` with no coupling."""

    def dynamics(x, u, w, z):
        return a * x + b * w

    def output(x, u, w, z):
        return c * x + d * w

    def jacobians(x, u, w, z):
        return JacobianBundle(np.array([[a]]), np.array([[b]]), np.array([[c]]), np.array([[d]]),
                              np.zeros((1, 0)), np.zeros((1, 0)))

    return SubsystemClass(name=name, n=1, m=0, q=1, p=1, coupling_slots=(), dynamics=dynamics,
                          output=output, domain=Box([-bound, -bound], [bound, bound]),
                          jacobians=jacobians, depends_on=())


def scalar_network(**kw):
    cls = scalar_class(**kw)
    return NetworkSpec(classes=(cls,), assignment=(cls.name,), neighbors=((),), name="scalar")


def echo_class(n_neighbors, name="echo"):
    """State of size 2 whose next value is the sum of its neighbours' states."""

    def dynamics(x, u, w, z):
        out = np.zeros(np.broadcast_shapes(x.shape, z.shape[:-1] + (2,)))
        for j in range(n_neighbors):
            out = out + z[..., 2 * j:2 * j + 2]
        return out

    def output(x, u, w, z):
        return x[..., :1]

    dim = 2 + 0 + 0 + 2 * n_neighbors
    return SubsystemClass(name=name, n=2, m=0, q=0, p=1, coupling_slots=(2,) * n_neighbors,
                          dynamics=dynamics, output=output, domain=Box([-1.0] * dim, [1.0] * dim))


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store and print one acceptance line; the terminal summary repeats them in order."""
    ACCEPTANCE_RESULTS[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}: {detail}")
