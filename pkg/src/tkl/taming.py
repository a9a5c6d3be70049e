"""Monotonicity-preserving taming of a superlinear gradient.

With ``g(x) = h(x) - m x`` the tamed drift is

    h_lam(x) = t(|x|) g(x) + R_lam s(|x|) x + m x

where ``t`` switches ``g`` off across the shell ``r_lam - 1 < |x| < r_lam``
and ``s`` switches on a radial field of strength ``R_lam`` across
``r_lam - 2 < |x| < r_lam - 1``. Inside ``B(0, r_lam - 2)`` the drift is the
untouched gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .potential import PotentialSpec

#: the interior ball B(0, r_lam - 2) must have radius at least one
MIN_RADIUS = 3.0


class RegimeError(ValueError):
    """Parameters fall outside the regime where a construction or contraction bound applies."""


def taming_radius(lam: float, L: float, m: float, l: float) -> float:
    if not lam > 0:
        raise ValueError(f"step size must be positive, got {lam}")
    r = (L + m) * lam ** (-1.0 / (2.0 * (l + 2.0)))
    if r < MIN_RADIUS:
        raise RegimeError(
            f"taming radius r_lambda={r:.6g} < {MIN_RADIUS}: step size {lam:g} too large "
            f"for (L={L:g}, m={m:g}, l={l:g})"
        )
    return r


def taming_cap(p: PotentialSpec, r_lambda: float) -> float:
    """Closed-form bound ``(L + |h(0)|) r^(l+1)`` on ``sup |g|`` over ``B(0, r)``."""
    return (p.L + p.h0_norm()) * r_lambda ** (p.l + 1)


def weight_t(norm_x, r_lambda: float):
    return np.clip(r_lambda - np.asarray(norm_x, dtype=float), 0.0, 1.0)


def weight_s(norm_x, r_lambda: float):
    n = np.asarray(norm_x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        outer = r_lambda / n
    return np.where(n >= r_lambda, outer, np.clip(n - r_lambda + 2.0, 0.0, 1.0))


def effective_lipschitz(lam: float) -> float:
    if not lam > 0:
        raise ValueError(f"step size must be positive, got {lam}")
    return lam ** -0.5


@dataclass(frozen=True)
class TamedDrift:
    base: PotentialSpec
    lam: float
    r_lambda: float
    R_lambda: float
    M_lambda: float
    m_overridden: bool = False

    @classmethod
    def build(cls, p: PotentialSpec, lam: float, m_override: Optional[float] = None) -> "TamedDrift":
        """Tame ``p`` at step size ``lam``.

        ``m_override`` replaces the default Lipschitz constant ``lam**-0.5``
        used by the downstream weighted norm and regime checks. It does not
        change the drift itself.
        """
        r = taming_radius(lam, p.L, p.m, p.l)
        R = taming_cap(p, r)
        if m_override is None:
            M = effective_lipschitz(lam)
        else:
            M = float(m_override)
            if not M > 0:
                raise ValueError(f"M_lambda override must be positive, got {M}")
        return cls(p, float(lam), r, R, M, m_override is not None)

    @property
    def m(self) -> float:
        return self.base.m

    @property
    def dim(self) -> int:
        return self.base.dim

    def __call__(self, x) -> np.ndarray:
        return tamed_eval(self, x)

    def weights(self, x):
        n = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return weight_t(n, self.r_lambda), weight_s(n, self.r_lambda)


def tamed_eval(td: TamedDrift, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1)
    inner = norm <= td.r_lambda - 2.0
    if np.all(inner):
        return td.base.h(x)

    t = weight_t(norm, td.r_lambda)
    s = weight_s(norm, td.r_lambda)
    m = td.base.m
    out = td.R_lambda * s[..., None] * x + m * x
    # g is only needed where t > 0; skipping it elsewhere keeps far points finite
    live = t > 0
    if np.any(live):
        xl = x[live]
        out[live] += t[live][:, None] * (td.base.h(xl) - m * xl)
    if np.any(inner):
        out[inner] = td.base.h(x[inner])
    return out


def region_of(norm_x, r_lambda: float):
    """Region label 1..4 of the annular decomposition used in the taming proofs."""
    n = np.asarray(norm_x, dtype=float)
    return np.select(
        [n <= r_lambda - 2, n <= r_lambda - 1, n <= r_lambda],
        [1, 2, 3],
        default=4,
    )


__all__ = [
    "MIN_RADIUS",
    "RegimeError",
    "TamedDrift",
    "effective_lipschitz",
    "region_of",
    "tamed_eval",
    "taming_cap",
    "taming_radius",
    "weight_t",
    "weight_s",
]
