"""Tamed discretisations of the kinetic Langevin SDE and their analysis maps.

Two Markov chains on phase space ``z = (x, v)``:

* the stochastic exponential scheme, which freezes the tamed drift over a
  step and integrates the Ornstein-Uhlenbeck part exactly, with correlated
  Gaussian increments ``(Xi, Xi')`` of per-coordinate covariance ``C``;
* the OBABO splitting: half-step OU, half kick, drift, half kick, half-step OU.

Also here: the deterministic Verlet (BAB) map, an RK4 reference for the
Hamiltonian flow, the coordinate changes used in the log-Sobolev arguments
and the chain drivers, including synchronously coupled pairs.

All kernels act on arrays of shape ``(..., d)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import wnorm_sq
from .noise import NoiseStream
from .potential import PotentialSpec
from .taming import RegimeError, TamedDrift

SCHEMES = ("exponential", "obabo")
#: relative slack when comparing regime inequalities that are met with equality
REGIME_RTOL = 1e-12
#: below this weighted squared distance two coupled chains count as merged
MERGE_FLOOR = 1e-300
_SERIES_CUTOFF = 0.1


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape:
            raise ValueError(f"x and v shapes differ: {self.x.shape} vs {self.v.shape}")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v)))

    def __sub__(self, other: "PhaseState") -> "PhaseState":
        return PhaseState(self.x - other.x, self.v - other.v)


# -- coefficients ---------------------------------------------------------


def _series(x: float, coeff) -> float:
    total, term = 0.0, 1.0
    for k in range(1, 25):
        term *= x / k
        c = coeff(k)
        if c:
            total += c * term
    return total


def _phi2(x: float) -> float:
    """``x - 1 + exp(-x)`` without cancellation."""
    if x < _SERIES_CUTOFF:
        return _series(x, lambda k: (-1.0) ** k if k >= 2 else 0.0)
    return x + math.expm1(-x)


def _c22_bracket(x: float) -> float:
    """``x - 2(1 - e^-x) + (1 - e^-2x)/2`` without cancellation (~ x^3/3)."""
    if x < _SERIES_CUTOFF:
        return _series(x, lambda k: (-1.0) ** k * (2.0 - 2.0 ** (k - 1)) if k >= 2 else 0.0)
    y = -math.expm1(-x)
    return x - 2.0 * y + 0.5 * y * (2.0 - y)


def psi_coefficients(lam: float, gamma: float) -> tuple[float, float, float]:
    """``(psi0, psi1, psi2)`` at step ``lam``: ``e^{-gl}``, ``(1-e^{-gl})/g``, ``(gl+e^{-gl}-1)/g^2``."""
    if lam < 0 or not gamma > 0:
        raise ValueError(f"need lam >= 0 and gamma > 0, got lam={lam}, gamma={gamma}")
    x = gamma * lam
    if x == 0:
        return 1.0, 0.0, 0.0
    return math.exp(-x), -math.expm1(-x) / gamma, _phi2(x) / gamma**2


def noise_covariance(lam: float, gamma: float) -> np.ndarray:
    """Per-coordinate covariance of ``(Xi, Xi')``: ``int_0^lam [psi0, psi1]^T [psi0, psi1] dt``."""
    if lam < 0 or not gamma > 0:
        raise ValueError(f"need lam >= 0 and gamma > 0, got lam={lam}, gamma={gamma}")
    x = gamma * lam
    y = -math.expm1(-x)
    c11 = -math.expm1(-2.0 * x) / (2.0 * gamma)
    c12 = 0.5 * y * y / gamma**2
    c22 = _c22_bracket(x) / gamma**3
    return np.array([[c11, c12], [c12, c22]])


def chol2(C: np.ndarray, rtol: float = 1e-10) -> tuple[float, float, float]:
    """Lower-triangular factor ``(L11, L21, L22)`` of a 2x2 PSD matrix."""
    c11, c12, c22 = float(C[0, 0]), float(C[0, 1]), float(C[1, 1])
    if abs(c12 - float(C[1, 0])) > rtol * (abs(c12) + 1e-300):
        raise np.linalg.LinAlgError("noise covariance is not symmetric")
    if c11 < 0 or c22 < 0:
        raise np.linalg.LinAlgError(f"noise covariance has negative variance: {c11}, {c22}")
    if c11 == 0:
        if c12 != 0:
            raise np.linalg.LinAlgError("noise covariance is not positive semidefinite")
        return 0.0, 0.0, math.sqrt(c22)
    l11 = math.sqrt(c11)
    l21 = c12 / l11
    rest = c22 - l21 * l21
    if rest < -rtol * max(c22, 1e-300):
        raise np.linalg.LinAlgError(f"noise covariance is not positive semidefinite (Schur complement {rest})")
    return l11, l21, math.sqrt(max(rest, 0.0))


@dataclass(frozen=True)
class SchemeParams:
    lam: float
    gamma: float
    m: float
    M_lambda: float
    eta: float
    eta_half: float
    psi0: float
    psi1: float
    psi2: float
    C: np.ndarray = field(repr=False)
    chol: tuple = field(repr=False)
    a: float
    b: float
    f_lambda: float
    kappa: float

    @property
    def noise_scale(self) -> float:
        return math.sqrt(2.0 * self.gamma)

    def header(self) -> dict:
        """Derived constants, as echoed in run headers."""
        return {
            "lambda": self.lam,
            "gamma": self.gamma,
            "M_lambda": self.M_lambda,
            "eta": self.eta,
            "eta_half": self.eta_half,
            "psi0": self.psi0,
            "psi1": self.psi1,
            "psi2": self.psi2,
            "C11": float(self.C[0, 0]),
            "C12": float(self.C[0, 1]),
            "C22": float(self.C[1, 1]),
            "a": self.a,
            "b": self.b,
            "f_lambda": self.f_lambda,
            "kappa": self.kappa,
        }


def make_params(lam: float, gamma: float, m: float, M_lambda: float) -> SchemeParams:
    if not lam > 0 or not gamma > 0:
        raise ValueError(f"need lam > 0 and gamma > 0, got lam={lam}, gamma={gamma}")
    psi0, psi1, psi2 = psi_coefficients(lam, gamma)
    C = noise_covariance(lam, gamma)
    return SchemeParams(
        lam=float(lam),
        gamma=float(gamma),
        m=float(m),
        M_lambda=float(M_lambda),
        eta=math.exp(-gamma * lam),
        eta_half=math.exp(-0.5 * gamma * lam),
        psi0=psi0,
        psi1=psi1,
        psi2=psi2,
        C=C,
        chol=chol2(C),
        a=1.0 / M_lambda,
        b=1.0 / gamma,
        f_lambda=m * lam / (4.0 * gamma),
        kappa=m / (3.0 * gamma),
    )


def scheme_params(td: TamedDrift, gamma: float) -> SchemeParams:
    return make_params(td.lam, gamma, td.m, td.M_lambda)


def auto_gamma(scheme: str, M_lambda: float) -> float:
    """Smallest friction of the contraction regime of ``scheme``."""
    if scheme == "exponential":
        return 5.0 * math.sqrt(M_lambda)
    if scheme == "obabo":
        return 2.0 * math.sqrt(M_lambda)
    raise ValueError(f"unknown scheme {scheme!r}")


def _geq(lhs: float, rhs: float) -> bool:
    return lhs >= rhs * (1 - REGIME_RTOL)


def regime_conditions(scheme: str, sp: SchemeParams, purpose: str = "contraction") -> list[tuple[str, bool]]:
    """Named regime inequalities for ``scheme``.

    ``purpose='contraction'``: hypotheses of the almost-sure contraction
    results. ``purpose='w2'``: hypotheses of the Wasserstein convergence
    results (for OBABO only the friction bound ``gamma >= sqrt(M)``).
    """
    lam, g, M, m = sp.lam, sp.gamma, sp.M_lambda, sp.m
    if scheme == "exponential":
        return [
            ("gamma >= 5*sqrt(M_lambda)", _geq(g, 5.0 * math.sqrt(M))),
            ("lambda <= 1/(2*gamma)", _geq(1.0 / (2.0 * g), lam)),
        ]
    if scheme == "obabo":
        if purpose == "w2":
            return [("gamma >= sqrt(M_lambda)", _geq(g, math.sqrt(M)))]
        return [
            ("gamma >= 2*sqrt(M_lambda)", _geq(g, 2.0 * math.sqrt(M))),
            ("lambda <= m/(33*gamma^3)", _geq(m / (33.0 * g**3), lam)),
        ]
    raise ValueError(f"unknown scheme {scheme!r}")


def check_regime(scheme: str, sp: SchemeParams, purpose: str = "contraction") -> list[str]:
    """Raise :class:`RegimeError` naming the first violated condition; return the checked names."""
    conds = regime_conditions(scheme, sp, purpose)
    for name, ok in conds:
        if not ok:
            raise RegimeError(
                f"{scheme} {purpose} regime violated: {name} "
                f"(lambda={sp.lam:.17g}, gamma={sp.gamma:.17g}, M_lambda={sp.M_lambda:.17g}, m={sp.m:.17g})"
            )
    return [name for name, _ in conds]


# -- noise ----------------------------------------------------------------


def transform_pair(z: np.ndarray, chol: tuple, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Map standard normals ``z[..., :2d]`` to a pair with per-coordinate covariance ``L L^T``."""
    l11, l21, l22 = chol
    z1, z2 = z[..., :dim], z[..., dim : 2 * dim]
    return l11 * z1, l21 * z1 + l22 * z2


def sample_noise_pair(stream: NoiseStream, C: np.ndarray, dim: int, n_chains: Optional[int] = None):
    """Draw ``(Xi, Xi')``; per coordinate a centred Gaussian pair with covariance ``C``."""
    chol = chol2(np.asarray(C, dtype=float))
    z = stream.next(1 if n_chains is None else n_chains, 2 * dim)
    xi, xip = transform_pair(z, chol, dim)
    if n_chains is None:
        return xi[0], xip[0]
    return xi, xip


# -- one-step maps --------------------------------------------------------


def _exp_kernel(x, v, drift, sp: SchemeParams, xi, xip):
    hx = drift(x)
    s = sp.noise_scale
    v_new = sp.psi0 * v - sp.psi1 * hx + s * xi
    x_new = x + sp.psi1 * v - sp.psi2 * hx + s * xip
    return x_new, v_new


def _obabo_kernel(x, v, drift, sp: SchemeParams, g, gp):
    eh = sp.eta_half
    sig = math.sqrt(-math.expm1(-sp.gamma * sp.lam))  # sqrt(1 - eta_half^2)
    half = 0.5 * sp.lam
    v = eh * v + sig * g  # O
    v = v - half * drift(x)  # B
    x = x + sp.lam * v  # A
    v = v - half * drift(x)  # B
    v = eh * v + sig * gp  # O
    return x, v


def exp_step(z: PhaseState, td: TamedDrift, sp: SchemeParams, noise) -> PhaseState:
    """One step of the stochastic exponential scheme with noise ``(Xi, Xi')``."""
    xi, xip = noise
    return PhaseState(*_exp_kernel(z.x, z.v, td, sp, np.asarray(xi), np.asarray(xip)))


def obabo_step(z: PhaseState, td: TamedDrift, sp: SchemeParams, G, G_prime) -> PhaseState:
    """One OBABO step, executed as its five sub-steps."""
    return PhaseState(*_obabo_kernel(z.x, z.v, td, sp, np.asarray(G), np.asarray(G_prime)))


def obabo_closed_form(z: PhaseState, td: TamedDrift, sp: SchemeParams, G, G_prime) -> PhaseState:
    """The composed OBABO map written out in one formula (noise-to-state map)."""
    eh = sp.eta_half
    sig = math.sqrt(-math.expm1(-sp.gamma * sp.lam))
    lam = sp.lam
    G, G_prime = np.asarray(G), np.asarray(G_prime)
    h0 = td(z.x)
    x1 = z.x + lam * (eh * z.v + sig * G) - 0.5 * lam**2 * h0
    v1 = eh**2 * z.v - 0.5 * lam * eh * (h0 + td(x1)) + sig * (eh * G + G_prime)
    return PhaseState(x1, v1)


def verlet_map(z: PhaseState, td, lam: float) -> PhaseState:
    """Deterministic BAB (velocity Verlet) step with drift ``td``."""
    half = 0.5 * lam
    v = z.v - half * td(z.x)
    x = z.x + lam * v
    v = v - half * td(x)
    return PhaseState(x, v)


def hamiltonian_reference(z: PhaseState, p: PotentialSpec, t: float, substeps: int) -> PhaseState:
    """RK4 approximation of the flow ``x' = v, v' = -grad u(x)`` over time ``t``."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x, v = np.array(z.x, dtype=float), np.array(z.v, dtype=float)
    if t == 0:
        return PhaseState(x, v)
    dt = t / substeps
    h = p.h
    for _ in range(substeps):
        k1x, k1v = v, -h(x)
        k2x, k2v = v + 0.5 * dt * k1v, -h(x + 0.5 * dt * k1x)
        k3x, k3v = v + 0.5 * dt * k2v, -h(x + 0.5 * dt * k2x)
        k4x, k4v = v + dt * k3v, -h(x + dt * k3x)
        x = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return PhaseState(x, v)


def hamiltonian_energy(z: PhaseState, p: PotentialSpec) -> np.ndarray:
    return 0.5 * np.sum(z.v * z.v, axis=-1) + p.u(z.x)


# -- coordinate changes and mean maps -------------------------------------


def coord_map_M(z: PhaseState, gamma: float):
    return z.x, z.x + (2.0 / gamma) * z.v


def coord_map_M_inv(phi, psi, gamma: float) -> PhaseState:
    phi = np.asarray(phi, dtype=float)
    return PhaseState(phi, 0.5 * gamma * (np.asarray(psi, dtype=float) - phi))


def coord_map_S(z: PhaseState, a: float, b: float):
    if not a > b * b:
        raise ValueError(f"S map needs a > b^2, got a={a}, b={b}")
    return z.x + b * z.v, math.sqrt(a - b * b) * z.v


def coord_map_S_inv(p, q, a: float, b: float) -> PhaseState:
    if not a > b * b:
        raise ValueError(f"S map needs a > b^2, got a={a}, b={b}")
    v = np.asarray(q, dtype=float) / math.sqrt(a - b * b)
    return PhaseState(np.asarray(p, dtype=float) - b * v, v)


def mean_map_F(z: PhaseState, td, sp: SchemeParams) -> PhaseState:
    """Conditional mean of the next exponential-scheme iterate."""
    return PhaseState(*_exp_kernel(z.x, z.v, td, sp, 0.0, 0.0))


def mean_map_Fbar(phi, psi, td, sp: SchemeParams):
    """The exponential-scheme mean map in ``(phi, psi) = (x, x + 2v/gamma)`` coordinates."""
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    g, lam, eta = sp.gamma, sp.lam, sp.eta
    one_m_eta = -math.expm1(-g * lam)
    hp = td(phi)
    first = phi + 0.5 * one_m_eta * (psi - phi) - (lam - one_m_eta / g) / g * hp
    second = phi + 0.5 * (1.0 + eta) * (psi - phi) - (lam + one_m_eta / g) / g * hp
    return first, second


def sigma_bar(lam: float, gamma: float) -> np.ndarray:
    """Covariance of the exponential-scheme noise in ``M`` coordinates, term by term."""
    e1, e2 = math.exp(-gamma * lam), math.exp(-2.0 * gamma * lam)
    g2 = gamma * gamma
    s11 = 2 * lam / gamma - 3 / g2 + 4 * e1 / g2 - e2 / g2
    s12 = 2 * lam / gamma - 1 / g2 + e2 / g2
    s22 = 2 * lam / gamma + 5 / g2 - 8 * e1 / g2 + 3 * e2 / g2
    return np.array([[s11, s12], [s12, s22]])


def sigma_bar_from_C(lam: float, gamma: float) -> np.ndarray:
    """Same covariance via ``M (2 gamma C') M^T`` with ``C'`` ordered (position, velocity)."""
    C = noise_covariance(lam, gamma)
    cov = 2.0 * gamma * np.array([[C[1, 1], C[0, 1]], [C[0, 1], C[0, 0]]])
    Mmat = np.array([[1.0, 0.0], [1.0, 2.0 / gamma]])
    return Mmat @ cov @ Mmat.T


# -- chain drivers --------------------------------------------------------


@dataclass
class RunRecord:
    """States (thinned) of a batch of chains, and coupled-pair diagnostics.

    ``x`` and ``v`` have shape ``(n_records, n_chains, d)`` and correspond to
    ``steps``. For coupled runs ``ratios[n, k]`` is the weighted-norm squared
    ratio of pair ``k`` at step ``n + 1`` (NaN once the pair has merged).
    """

    scheme: str
    steps: np.ndarray
    x: np.ndarray
    v: np.ndarray
    x_tilde: Optional[np.ndarray] = None
    v_tilde: Optional[np.ndarray] = None
    ratios: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def final(self) -> PhaseState:
        return PhaseState(self.x[-1], self.v[-1])


def _kernel(scheme: str):
    if scheme == "exponential":
        return _exp_kernel
    if scheme == "obabo":
        return _obabo_kernel
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def _noise_for(scheme: str, z: np.ndarray, sp: SchemeParams, dim: int):
    if scheme == "exponential":
        return transform_pair(z, sp.chol, dim)
    return z[..., :dim], z[..., dim : 2 * dim]


def _as_batch(z: PhaseState) -> tuple[np.ndarray, np.ndarray]:
    x, v = np.atleast_2d(z.x).astype(float), np.atleast_2d(z.v).astype(float)
    return x.copy(), v.copy()


def _record_steps(n_steps: int, stride: int) -> np.ndarray:
    steps = np.arange(0, n_steps + 1, stride)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def _run_block(scheme, x, v, td, sp, n_steps, stream, stride, first_chain, tilde=None):
    kernel = _kernel(scheme)
    dim = x.shape[1]
    n = x.shape[0]
    steps = _record_steps(n_steps, stride)
    keep = set(steps.tolist())
    xs, vs = [x.copy()], [v.copy()]
    coupled = tilde is not None
    if coupled:
        xt, vt = tilde
        xts, vts = [xt.copy()], [vt.copy()]
        ratios = np.full((n_steps, n), np.nan)
        prev = wnorm_sq(x - xt, v - vt, sp.a, sp.b)
        live = prev > MERGE_FLOOR
    c0 = stream.counter
    for i in range(n_steps):
        z = stream.draw(n, 2 * dim, first_chain, counter=c0 + i)
        n1, n2 = _noise_for(scheme, z, sp, dim)
        x, v = kernel(x, v, td, sp, n1, n2)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise FloatingPointError(f"{scheme} chain produced a non-finite state at step {i + 1}")
        if coupled:
            xt, vt = kernel(xt, vt, td, sp, n1, n2)
            if not (np.all(np.isfinite(xt)) and np.all(np.isfinite(vt))):
                raise FloatingPointError(f"{scheme} coupled chain produced a non-finite state at step {i + 1}")
            cur = wnorm_sq(x - xt, v - vt, sp.a, sp.b)
            if np.any(live):
                ratios[i, live] = cur[live] / prev[live]
            live = live & (cur > MERGE_FLOOR)
            prev = cur
        if i + 1 in keep:
            xs.append(x.copy())
            vs.append(v.copy())
            if coupled:
                xts.append(xt.copy())
                vts.append(vt.copy())
    out = {"steps": steps, "x": np.stack(xs), "v": np.stack(vs)}
    if coupled:
        out.update(x_tilde=np.stack(xts), v_tilde=np.stack(vts), ratios=ratios)
    return out


def _blocks(n: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(int(threads), n))
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run(scheme, z0, td, sp, n_steps, stream, stride, threads, first_chain, z0_tilde=None):
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if abs(sp.lam - td.lam) > REGIME_RTOL * td.lam:
        raise ValueError(f"scheme step {sp.lam} does not match taming step {td.lam}")
    x, v = _as_batch(z0)
    tilde = None
    if z0_tilde is not None:
        tilde = _as_batch(z0_tilde)
        if tilde[0].shape != x.shape:
            raise ValueError("coupled initial states must have equal shapes")

    def job(block):
        a, b = block
        sub = NoiseStream(stream.seed, stream.counter, stream.stream)
        t = None if tilde is None else (tilde[0][a:b], tilde[1][a:b])
        return _run_block(scheme, x[a:b], v[a:b], td, sp, n_steps, sub, stride, first_chain + a, t)

    blocks = _blocks(x.shape[0], threads)
    if len(blocks) == 1:
        parts = [job(blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(job, blocks))
    stream.counter += n_steps

    rec = RunRecord(
        scheme=scheme,
        steps=parts[0]["steps"],
        x=np.concatenate([p["x"] for p in parts], axis=1),
        v=np.concatenate([p["v"] for p in parts], axis=1),
    )
    if tilde is not None:
        rec.x_tilde = np.concatenate([p["x_tilde"] for p in parts], axis=1)
        rec.v_tilde = np.concatenate([p["v_tilde"] for p in parts], axis=1)
        rec.ratios = np.concatenate([p["ratios"] for p in parts], axis=1)
    return rec


def run_chain(z0: PhaseState, td: TamedDrift, sp: SchemeParams, n_steps: int, stream: NoiseStream,
              scheme: str = "exponential", stride: int = 1, threads: int = 1, first_chain: int = 0) -> RunRecord:
    """Advance a batch of independent chains (rows of ``z0``).

    Chain ``k`` of the batch draws its noise as chain ``first_chain + k`` of
    ``stream``; the stream counter advances by ``n_steps``.
    """
    return _run(scheme, z0, td, sp, n_steps, stream, stride, threads, first_chain)


def run_coupled(z0: PhaseState, z0_tilde: PhaseState, td: TamedDrift, sp: SchemeParams, n_steps: int,
                stream: NoiseStream, scheme: str = "exponential", stride: int = 1, threads: int = 1,
                first_chain: int = 0) -> RunRecord:
    """Advance synchronously coupled pairs: row ``k`` of both batches shares every noise draw."""
    return _run(scheme, z0, td, sp, n_steps, stream, stride, threads, first_chain, z0_tilde)
