"""Target potentials and sampled checks of the standing assumptions.

Every potential ``u`` comes with its gradient ``h`` and the constants used
downstream: the monotonicity constant ``m`` (with the factor-two convention
``<h(x) - h(y), x - y> >= 2 m |x - y|^2``) and the local Lipschitz pair
``(L, l)`` in ``|h(x) - h(y)| <= L (1 + |x| + |y|)^l |x - y|``.

Evaluators act on the last axis, so ``x`` may carry any number of leading
batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]

#: absolute tolerance for sampled inequalities, scaled by (1 + magnitude)
CHECK_TOL = 1e-9
#: central finite-difference step for the gradient check
FD_STEP = 1e-5


@dataclass(frozen=True)
class PotentialSpec:
    name: str
    dim: int
    u: Field
    h: Field
    m: float
    L: float
    l: float
    global_lipschitz: Optional[float] = None
    params: tuple = ()

    def h0_norm(self) -> float:
        return float(np.linalg.norm(self.h(np.zeros(self.dim))))

    def u0(self) -> float:
        return float(self.u(np.zeros(self.dim)))


def _sqnorm(x):
    return np.sum(x * x, axis=-1)


def builtin_potential(name: str, dim: int, c: float = 1.0) -> PotentialSpec:
    """Instantiate one of the built-in targets.

    ``quadratic(c)``: ``u = c|x|^2/2``, globally ``c``-Lipschitz gradient.
    ``double_well(c)``: ``u = |x|^4/4 + c|x|^2/2``, cubic gradient growth.
    The name ``double_well`` is historical; for ``c > 0`` the target is
    unimodal and strongly log-concave.
    """
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    c = float(c)
    if not c > 0:
        raise ValueError(f"potential parameter c must be positive, got {c}")
    dim = int(dim)

    if name == "quadratic":
        return PotentialSpec(
            name="quadratic",
            dim=dim,
            u=lambda x: 0.5 * c * _sqnorm(np.asarray(x, dtype=float)),
            h=lambda x: c * np.asarray(x, dtype=float),
            m=c / 2,
            L=c,
            l=0.0,
            global_lipschitz=c,
            params=(("c", c),),
        )
    if name == "double_well":

        def u(x):
            r2 = _sqnorm(np.asarray(x, dtype=float))
            return 0.25 * r2 * r2 + 0.5 * c * r2

        def h(x):
            x = np.asarray(x, dtype=float)
            return (_sqnorm(x)[..., None] + c) * x

        # |h(x)-h(y)| <= (|x|^2 + |x||y| + |y|^2 + c)|x-y| <= (1+c)(1+|x|+|y|)^2 |x-y|
        return PotentialSpec(
            name="double_well",
            dim=dim,
            u=u,
            h=h,
            m=c / 2,
            L=1 + c,
            l=2.0,
            params=(("c", c),),
        )
    raise ValueError(f"unknown potential {name!r}; expected 'quadratic' or 'double_well'")


def sample_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples in the closed ball of the given radius."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def fd_gradient(u: Field, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of ``u`` at a batch of points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    grad = np.empty_like(x)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = step
        grad[:, j] = (u(x + e) - u(x - e)) / (2 * step)
    return grad


def check_assumptions(p: PotentialSpec, n_pairs: int, radius: float, seed: int) -> dict:
    """Count sampled violations of the monotonicity and local Lipschitz bounds.

    Pairs are drawn uniformly in ``B(0, radius)``. A violation is recorded
    only when the inequality fails by more than ``1e-9 * (1 + scale)``.
    ``gradient_mismatch_max`` is the largest relative deviation between
    ``h`` and central differences of ``u``, normalised by ``max(1, |fd|)``.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    x = sample_ball(rng, n_pairs, p.dim, radius)
    y = sample_ball(rng, n_pairs, p.dim, radius)
    dx = x - y
    dh = p.h(x) - p.h(y)
    dist2 = _sqnorm(dx)

    inner = np.sum(dh * dx, axis=-1)
    lower = 2 * p.m * dist2
    mono_bad = inner < lower - CHECK_TOL * (1 + np.abs(inner) + lower)

    lhs = np.linalg.norm(dh, axis=-1)
    nx, ny = np.linalg.norm(x, axis=-1), np.linalg.norm(y, axis=-1)
    rhs = p.L * (1 + nx + ny) ** p.l * np.sqrt(dist2)
    lip_bad = lhs > rhs + CHECK_TOL * (1 + lhs + rhs)

    fd = fd_gradient(p.u, x)
    mismatch = np.linalg.norm(fd - p.h(x), axis=-1) / np.maximum(1.0, np.linalg.norm(fd, axis=-1))

    return {
        "n_pairs": int(n_pairs),
        "monotonicity_violations": int(mono_bad.sum()),
        "lipschitz_violations": int(lip_bad.sum()),
        "gradient_mismatch_max": float(mismatch.max()),
    }
