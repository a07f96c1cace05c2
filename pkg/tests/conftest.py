import numpy as np
import pytest

from dlam import network_state as ns
from dlam import objective as obj


def central_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function over every entry of x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f(x)
        x[idx] = orig - step
        lo = f(x)
        x[idx] = orig
        g[idx] = (hi - lo) / (2.0 * step)
    return g


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(exact)), 1e-12)
    return float(np.linalg.norm(approx - exact)) / scale


def grid_minimize_1d(f, lo: float, hi: float, points: int = 20001) -> float:
    """Dense-grid 1-D minimizer, refined once around the best cell."""
    xs = np.linspace(lo, hi, points)
    vals = np.array([f(x) for x in xs])
    i = int(vals.argmin())
    span = xs[1] - xs[0]
    xs2 = np.linspace(xs[i] - span, xs[i] + span, 2001)
    vals2 = np.array([f(x) for x in xs2])
    return float(xs2[vals2.argmin()])


def random_one_hot(rng, classes: int, n: int) -> np.ndarray:
    y = np.zeros((classes, n))
    y[rng.integers(0, classes, n), np.arange(n)] = 1.0
    return y


def small_state(seed: int = 0, sizes=(3, 4, 3, 2), n: int = 5,
                activation=ns.ActivationKind.RELU, risk=ns.RiskKind.CROSS_ENTROPY,
                reg=ns.RegKind.NONE, lam: float = 0.0, scatter: float = 0.0):
    """A compact feasible state; ``scatter`` optionally perturbs z/a blocks.

    With scatter > 0 the blocks are moved off the zero-residual start (a is
    re-projected afterwards so the slab invariant still holds for eps >= 1).
    """
    rng = np.random.default_rng(seed)
    arch = ns.Architecture(sizes, activation=activation, risk=risk,
                           regularizer=reg, reg_weight=lam)
    x = rng.uniform(0.0, 1.0, (sizes[0], n))
    y = random_one_hot(rng, sizes[-1], n)
    state = ns.initialize(arch, x, y, seed=seed)
    if scatter > 0.0:
        for l in range(state.num_layers):
            state.z[l] = state.z[l] + rng.normal(0.0, scatter, state.z[l].shape)
            if l < state.num_layers - 1:
                h = ns.activation_apply(arch.activation[l], state.z[l])
                drift = state.a[l] + rng.normal(0.0, scatter, state.a[l].shape)
                state.a[l] = np.clip(drift, h - 1.0, h + 1.0)
    return state


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
