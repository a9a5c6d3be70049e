"""Verification suites producing pass/fail reports.

Each suite returns a :class:`SuiteReport` holding the number of cases run,
the recorded failures, measured quantities and the rows of its CSV table.
Everything except ``wall_time`` is a deterministic function of the inputs
and the seed, so serialised reports are byte-identical across reruns.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import brentq
from scipy.special import ndtri

from .metrics import jacobian_opnorm_fd, moment_bound_check, order_fit, w2_1d
from .noise import NoiseStream
from .potential import PotentialSpec
from .schemes import (
    PhaseState,
    SchemeParams,
    auto_gamma,
    check_regime,
    hamiltonian_reference,
    make_params,
    mean_map_Fbar,
    obabo_closed_form,
    run_chain,
    run_coupled,
    sigma_bar,
    sigma_bar_from_C,
    verlet_map,
)
from .taming import RegimeError, TamedDrift, region_of

EPS = np.finfo(float).eps
#: relative slack on the taming and contraction inequalities
REL_SLACK = 1e-9
#: rounding floor on taming inequalities, in ulps of the evaluated drifts
ROUND_ULPS = 64
#: failures stored per check; the total count is always kept
MAX_STORED = 20
#: below this many machine epsilons a contraction rate is not resolvable
RESOLVABLE_EPS = 64
NON_EXPANSION_SLACK = 1e-12


@dataclass
class Failure:
    case: int
    check: str
    input: str
    expected: str
    observed: str


@dataclass
class SuiteReport:
    name: str
    cases: int = 0
    failures: list = field(default_factory=list)
    failure_counts: dict = field(default_factory=dict)
    measured: dict = field(default_factory=dict)
    header: dict = field(default_factory=dict)
    columns: tuple = ()
    rows: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def count(self, check: str, n: int = 0) -> None:
        """Register ``check`` (so that it appears with a zero count) and add ``n`` failures."""
        self.failure_counts[check] = self.failure_counts.get(check, 0) + int(n)

    def fail(self, case: int, check: str, inp: str, expected: str, observed: str) -> None:
        self.count(check, 1)
        stored = sum(1 for f in self.failures if f.check == check)
        if stored < MAX_STORED:
            self.failures.append(Failure(int(case), check, inp, expected, observed))

    def check_array(self, check: str, ok: np.ndarray, describe: Callable[[int], tuple]) -> None:
        """Record every ``False`` entry of ``ok``; ``describe(i)`` gives (input, expected, observed)."""
        ok = np.asarray(ok, dtype=bool).ravel()
        self.cases += ok.size
        bad = np.flatnonzero(~ok)
        self.count(check, 0)
        for i in bad[:MAX_STORED]:
            self.fail(int(i), check, *describe(int(i)))
        # failures past the stored prefix are counted, not stored
        if bad.size > MAX_STORED:
            self.failure_counts[check] += bad.size - MAX_STORED

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        n_fail = sum(self.failure_counts.values())
        return f"{self.name}: {status} (cases={self.cases}, failures={n_fail})"

    def sort_failures(self) -> None:
        self.failures.sort(key=lambda f: (f.check, f.case))


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _finish(rep: SuiteReport, t0: float) -> SuiteReport:
    rep.sort_failures()
    rep.wall_time = time.perf_counter() - t0
    return rep


def _rng(seed: int, tag: int) -> np.random.Generator:
    return NoiseStream(seed, 0, tag).generator()


def _directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# -- taming ---------------------------------------------------------------


def stratified_pairs(r: float, dim: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairs covering the regions A1..A4, their boundary shells, radial and close pairs.

    Returns ``(x, y, stratum)`` with ``stratum`` an integer label per pair.
    """
    bands = [(0.0, r - 2), (r - 2, r - 1), (r - 1, r), (r, 3 * r)]
    shells = [(b, w) for b in (r - 2, r - 1, r) for w in (1e-6, 1e-3, 0.1)]
    n_strata = 8
    sizes = [n // n_strata + (1 if k < n % n_strata else 0) for k in range(n_strata)]
    xs, ys, labels = [], [], []

    def add(x, y, k):
        xs.append(x)
        ys.append(y)
        labels.append(np.full(x.shape[0], k))

    # 0: radius-uniform pairs over B(0, 3r), both ends independent
    k = sizes[0]
    add(_directions(rng, k, dim) * rng.uniform(0, 3 * r, (k, 1)),
        _directions(rng, k, dim) * rng.uniform(0, 3 * r, (k, 1)), 0)
    # 1-4: both ends in the same region
    for j, (lo, hi) in enumerate(bands):
        k = sizes[1 + j]
        add(_directions(rng, k, dim) * rng.uniform(lo, hi, (k, 1)),
            _directions(rng, k, dim) * rng.uniform(lo, hi, (k, 1)), 1 + j)
    # 5: thin shells around each region boundary, half of them on a common ray
    k = sizes[5]
    pick = rng.integers(0, len(shells), k)
    base = np.array([shells[i][0] for i in pick])[:, None]
    width = np.array([shells[i][1] for i in pick])[:, None]
    ux = _directions(rng, k, dim)
    uy = np.where(rng.random((k, 1)) < 0.5, ux, _directions(rng, k, dim))
    add(ux * (base + width * rng.uniform(-1, 1, (k, 1))), uy * (base + width * rng.uniform(-1, 1, (k, 1))), 5)
    # 6: radial pairs on a common ray
    k = sizes[6]
    u = _directions(rng, k, dim)
    add(u * rng.uniform(0, 3 * r, (k, 1)), u * rng.uniform(0, 3 * r, (k, 1)), 6)
    # 7: close pairs, separation 1e-6 .. 1e-1
    k = sizes[7]
    x = _directions(rng, k, dim) * rng.uniform(0, 3 * r, (k, 1))
    add(x, x + _directions(rng, k, dim) * 10.0 ** rng.uniform(-6, -1, (k, 1)), 7)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(labels)


def _jump(td: TamedDrift, u: np.ndarray, rho: float, delta: float) -> np.ndarray:
    """Richardson estimate of the jump of ``h_lam`` across ``|x| = rho`` along rays ``u``.

    For a continuous, piecewise smooth field the one-sided differences are
    linear in ``delta`` and cancel; a jump survives.
    """
    def gap(dl):
        return np.linalg.norm(td(u * (rho + dl)) - td(u * (rho - dl)), axis=1)

    return np.abs(2 * gap(delta) - gap(2 * delta))


def suite_taming(td: TamedDrift, n: int, seed: int) -> SuiteReport:
    """Agreement, Lipschitz, monotonicity and continuity of ``h_lam``, plus a growth report.

    Growth violations of ``|h_lam(x)| <= (2/sqrt(lam))(1 + |x|)`` are counted
    in ``measured["growth_violations"]`` together with the measured constant
    ``max |h_lam(x)| sqrt(lam) / (1 + |x|)``; they do not fail the suite.
    """
    t0 = time.perf_counter()
    rep = SuiteReport("taming")
    r, lam, M, m, dim = td.r_lambda, td.lam, td.M_lambda, td.m, td.dim
    rep.header = {
        "potential": td.base.name,
        "dim": dim,
        "lambda": lam,
        "r_lambda": r,
        "R_lambda": td.R_lambda,
        "M_lambda": M,
        "m_overridden": td.m_overridden,
    }

    # agreement inside B(0, r - 2)
    rng = _rng(seed, 1)
    inner = _directions(rng, n, dim) * ((r - 2) * rng.random((n, 1)) ** (1.0 / dim))
    h_true, h_tame = td.base.h(inner), td(inner)
    diff = np.linalg.norm(h_tame - h_true, axis=1)
    ok = diff <= 1e-12 * np.linalg.norm(h_true, axis=1)
    rep.check_array("agreement", ok, lambda i: (
        f"|x|={_fmt(np.linalg.norm(inner[i]))}", "h_lambda(x) == h(x)", f"diff={_fmt(diff[i])}"))

    x, y, stratum = stratified_pairs(r, dim, n, _rng(seed, 2))
    hx, hy = td(x), td(y)
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    dx, dh = x - y, hx - hy
    dist = np.linalg.norm(dx, axis=1)
    mag = np.linalg.norm(hx, axis=1) + np.linalg.norm(hy, axis=1)
    floor = ROUND_ULPS * EPS * mag

    def pair(i):
        return (f"stratum={stratum[i]} |x|={_fmt(nx[i])} |y|={_fmt(ny[i])} "
                f"regions=({region_of(nx[i], r)},{region_of(ny[i], r)}) |x-y|={_fmt(dist[i])}")

    # growth on every sampled point; report-only, the constant is not proved for every (L, m, l)
    pts = np.concatenate([x, y])
    hp = np.concatenate([hx, hy])
    npts = np.linalg.norm(pts, axis=1)
    growth = np.linalg.norm(hp, axis=1)
    bound = 2.0 / math.sqrt(lam) * (1 + npts)
    rep.cases += npts.size
    rep.measured["growth_violations"] = int(np.sum(growth > bound * (1 + REL_SLACK)))
    rep.measured["growth_constant"] = float(np.max(growth * math.sqrt(lam) / (1 + npts)))

    lip = np.linalg.norm(dh, axis=1)
    lip_bound = M * dist * (1 + REL_SLACK) + floor
    rep.check_array("lipschitz", lip <= lip_bound, lambda i: (
        pair(i), f"|dh| <= M_lambda|dx| = {_fmt(M * dist[i])}", _fmt(lip[i])))
    live = dist > 0
    rep.measured["lipschitz_ratio_max"] = float(np.max(lip[live] / (M * dist[live])))

    inner_prod = np.sum(dh * dx, axis=1)
    mono_bound = m * dist**2 * (1 - REL_SLACK) - floor * dist
    rep.check_array("monotonicity", inner_prod >= mono_bound, lambda i: (
        pair(i), f"<dh, dx> >= m|dx|^2 = {_fmt(m * dist[i] ** 2)}", _fmt(inner_prod[i])))
    rep.measured["monotonicity_ratio_min"] = float(np.min(inner_prod[live] / (m * dist[live] ** 2)))

    # continuity across |x| = r-2, r-1, r
    rng = _rng(seed, 3)
    n_dir = max(1, min(n, 1000))
    u = _directions(rng, n_dir, dim)
    for rho in (r - 2, r - 1, r):
        jump = _jump(td, u, rho, 1e-8 * rho)
        scale = 1 + np.linalg.norm(td(u * rho), axis=1)
        rep.check_array("continuity", jump <= 1e-9 * scale, lambda i, rho=rho, jump=jump: (
            f"|x|={_fmt(rho)} direction {i}", "jump <= 1e-9 (1 + |h_lambda|)", _fmt(jump[i])))
    return _finish(rep, t0)


# -- contraction ----------------------------------------------------------


def contraction_rate(scheme: str, sp: SchemeParams) -> float:
    return sp.f_lambda if scheme == "exponential" else sp.lam * sp.kappa


def suite_contraction(scheme: str, td: TamedDrift, sp: SchemeParams, n_pairs: int, n_steps: int, seed: int,
                      threads: int = 1, init: str = "target") -> SuiteReport:
    """Per-step weighted-norm contraction of synchronously coupled pairs.

    Both ends of every pair start independently, either from the invariant
    law (``init="target"``) or from standard normals (``init="gaussian"``).
    When the theoretical rate is below 64 machine epsilons the suite checks
    non-expansion instead and reports the measured rate.
    """
    t0 = time.perf_counter()
    checked = check_regime(scheme, sp, "contraction")
    rate = contraction_rate(scheme, sp)
    resolvable = rate >= RESOLVABLE_EPS * EPS
    limit = (1 - rate) * (1 + REL_SLACK) if resolvable else 1 + NON_EXPANSION_SLACK
    rep = SuiteReport(f"contraction[{scheme}]")
    rep.header = {"potential": td.base.name, "dim": td.dim, "r_lambda": td.r_lambda, "R_lambda": td.R_lambda,
                  "m_overridden": td.m_overridden, **sp.header(), "rate": rate,
                  "mode": "contraction" if resolvable else "non_expansion", "init": init,
                  "regimes_checked": "; ".join(checked)}

    rng = _rng(seed, 4)
    if init == "target":
        z0, z1 = sample_target(td.base, n_pairs, rng), sample_target(td.base, n_pairs, rng)
    elif init == "gaussian":
        shape = (n_pairs, td.dim)
        z0 = PhaseState(rng.standard_normal(shape), rng.standard_normal(shape))
        z1 = PhaseState(rng.standard_normal(shape), rng.standard_normal(shape))
    else:
        raise ValueError(f"unknown init {init!r}; expected 'target' or 'gaussian'")
    rec = run_coupled(z0, z1, td, sp, n_steps, NoiseStream(seed, 0, 0), scheme=scheme,
                      stride=n_steps, threads=threads)
    ratios = rec.ratios
    with np.errstate(invalid="ignore"):
        ok = ~(ratios > limit)  # NaN (merged pair) counts as satisfied
    rep.check_array("ratio", ok, lambda i: (
        f"step={i // n_pairs + 1} pair={i % n_pairs}", f"ratio <= {_fmt(limit)}",
        _fmt(ratios.ravel()[i])))

    finite = np.isfinite(ratios)
    worst = np.where(finite.any(axis=1), np.nanmax(np.where(finite, ratios, -np.inf), axis=1), np.nan)
    rep.columns = ("step", "worst_ratio", "bound", "pass")
    rep.rows = [(k + 1, worst[k], limit, int(not worst[k] > limit)) for k in range(n_steps)]
    rep.measured.update(
        worst_ratio=float(np.nanmax(worst)) if np.isfinite(worst).any() else float("nan"),
        theoretical_factor=1 - rate,
        measured_rate=1 - float(np.nanmax(worst)) if np.isfinite(worst).any() else float("nan"),
        merged_pairs=int(np.sum(~finite[-1])),
    )
    return _finish(rep, t0)


# -- Wasserstein convergence ----------------------------------------------


def _tail_halfwidth(p: PotentialSpec, level: float = 60.0) -> float:
    """Radius where ``u - u(0)`` reaches ``level`` along a coordinate axis (1-d targets)."""
    u0 = p.u0()

    def f(t):
        return float(p.u(np.array([t]))) - u0 - level

    hi = 1.0
    while f(hi) < 0:
        hi *= 2
    return brentq(f, 0.0, hi)


def marginal_ppf(p: PotentialSpec, grid: int = 200_001) -> Callable[[np.ndarray], np.ndarray]:
    """Inverse CDF of one position coordinate of ``exp(-u)``.

    Closed form for ``quadratic``; trapezoidal quadrature of the density for
    one-dimensional ``double_well``.
    """
    if p.name == "quadratic":
        sd = 1.0 / math.sqrt(p.global_lipschitz)
        return lambda q: sd * ndtri(np.asarray(q, dtype=float))
    if p.dim != 1:
        raise ValueError(f"no marginal oracle for {p.name} in dimension {p.dim}; only d=1 is supported")
    half = _tail_halfwidth(p)
    xs = np.linspace(-half, half, grid)
    dens = np.exp(-(p.u(xs[:, None]) - p.u0()))
    cdf = cumulative_trapezoid(dens, xs, initial=0.0)
    cdf /= cdf[-1]
    return lambda q: np.interp(np.asarray(q, dtype=float), cdf, xs)


def radial_ppf(p: PotentialSpec, grid: int = 200_001) -> Callable[[np.ndarray], np.ndarray]:
    """Inverse CDF of ``|x|`` under ``exp(-u)`` for a radially symmetric ``u``."""
    half = _tail_halfwidth(p)
    rs = np.linspace(0.0, half, grid)
    e1 = np.zeros((grid, p.dim))
    e1[:, 0] = rs
    dens = rs ** (p.dim - 1) * np.exp(-(p.u(e1) - p.u0()))
    cdf = cumulative_trapezoid(dens, rs, initial=0.0)
    cdf /= cdf[-1]
    return lambda q: np.interp(np.asarray(q, dtype=float), cdf, rs)


def sample_target(p: PotentialSpec, n: int, rng: np.random.Generator) -> PhaseState:
    """``n`` draws from the invariant law ``exp(-u(x) - |v|^2/2)`` of a radial potential."""
    if p.dim == 1:
        x = marginal_ppf(p)(rng.random((n, 1)))
    else:
        x = _directions(rng, n, p.dim) * radial_ppf(p)(rng.random((n, 1)))
    return PhaseState(x, rng.standard_normal((n, p.dim)))


def _w2_stat(points: np.ndarray, quantiles: np.ndarray) -> float:
    """Root-sum-square of per-coordinate W2 against the target quantile cloud."""
    return float(math.sqrt(sum(w2_1d(points[:, j], quantiles) ** 2 for j in range(points.shape[1]))))


def w2_null(p: PotentialSpec, n: int, seed: int, reps: int = 200) -> tuple[float, float, np.ndarray]:
    """Mean and standard deviation of the W2 statistic for ``n`` exact target draws."""
    ppf = marginal_ppf(p)
    q = ppf((np.arange(n) + 0.5) / n)
    rng = _rng(seed, 5)
    vals = np.array([_w2_stat(ppf(rng.random((n, p.dim))), q) for _ in range(reps)])
    return float(vals.mean()), float(vals.std(ddof=1)), q


def linear_gaussian_law(scheme: str, sp: SchemeParams, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate transition ``z' = A z + N(0, Q)`` of ``scheme`` on ``quadratic(c)``.

    Exact as long as the chain stays inside ``B(0, r_lam - 2)``, where the
    tamed drift is the linear gradient.
    """
    if scheme == "exponential":
        A = np.array([[1 - sp.psi2 * c, sp.psi1], [-sp.psi1 * c, sp.psi0]])
        C = sp.C
        Q = 2 * sp.gamma * np.array([[C[1, 1], C[0, 1]], [C[0, 1], C[0, 0]]])
        return A, Q
    if scheme == "obabo":
        eh, lam = sp.eta_half, sp.lam
        O = np.array([[1.0, 0.0], [0.0, eh]])
        QO = np.array([[0.0, 0.0], [0.0, -math.expm1(-sp.gamma * lam)]])
        B = np.array([[1.0, 0.0], [-0.5 * lam * c, 1.0]])
        Af = np.array([[1.0, lam], [0.0, 1.0]])
        core = O @ B @ Af @ B
        return core @ O, core @ QO @ core.T + QO
    raise ValueError(f"unknown scheme {scheme!r}")


def exact_plateau(scheme: str, sp: SchemeParams, c: float, dim: int) -> float:
    """W2 between the chain's stationary position law and the target, both Gaussian."""
    A, Q = linear_gaussian_law(scheme, sp, c)
    S = solve_discrete_lyapunov(A, Q)
    return math.sqrt(dim) * abs(math.sqrt(S[0, 0]) - 1.0 / math.sqrt(c))


def _w2_curve(rec, q: np.ndarray) -> np.ndarray:
    return np.array([_w2_stat(rec.x[k], q) for k in range(rec.x.shape[0])])


def suite_w2_convergence(td: TamedDrift, sp: SchemeParams, scheme: str, n_chains: int, n_steps: int, seed: int,
                         eps: float = 0.05, stride: Optional[int] = None, x0: float = 1.0,
                         stationary_steps: Optional[int] = None, reference: Optional[bool] = None,
                         threads: int = 1) -> SuiteReport:
    """Empirical position-W2 of ``n_chains`` replicas against the target.

    Checks (i) decay up to noise, ``w[k+1] <= w[k] + 3 sqrt(2) s0``, (ii) the
    tail plateau is at most ``eps``. For ``quadratic`` additionally (iii) the
    exact stationary plateau strictly drops when ``lambda`` is halved and
    (iv) chains started at the target stay within ``mu0 + 3 s0``. For
    ``double_well`` the plateau is compared with a ``lambda/100`` reference
    chain started at the target. ``mu0, s0`` are the mean and spread of the
    statistic for exact target samples of the same size.
    """
    if n_chains < 1000:
        raise ValueError(f"n_chains must be >= 1000, got {n_chains}")
    t0 = time.perf_counter()
    p = td.base
    checked = check_regime(scheme, sp, "w2")
    stride = stride or max(1, n_steps // 100)
    if reference is None:
        reference = p.name != "quadratic"
    if stationary_steps is None:
        stationary_steps = max(1, n_steps // 5)
    rep = SuiteReport(f"w2[{scheme}]")
    rep.header = {"potential": p.name, "dim": p.dim, "r_lambda": td.r_lambda, "R_lambda": td.R_lambda,
                  "m_overridden": td.m_overridden, **sp.header(), "n_chains": n_chains, "x0": x0,
                  "eps": eps, "regimes_checked": "; ".join(checked)}

    mu0, s0, q = w2_null(p, n_chains, seed)
    rep.measured.update(null_mean=mu0, null_sd=s0)
    shape = (n_chains, p.dim)
    z0 = PhaseState(np.full(shape, float(x0)), np.zeros(shape))
    rec = run_chain(z0, td, sp, n_steps, NoiseStream(seed, 0, 0), scheme=scheme, stride=stride, threads=threads)
    w = _w2_curve(rec, q)
    rep.columns = ("step", "empirical_w2", "stderr")
    rep.rows = [(int(s), w[k], s0) for k, s in enumerate(rec.steps)]

    tol = 3 * math.sqrt(2) * s0
    rep.check_array("decay", w[1:] <= w[:-1] + tol, lambda i: (
        f"step={rec.steps[i + 1]}", f"w2 <= previous + {_fmt(tol)} = {_fmt(w[i] + tol)}", _fmt(w[i + 1])))
    tail = w[-max(1, len(w) // 10):]
    plateau = float(tail.mean())
    rep.measured["plateau"] = plateau
    rep.check_array("plateau", np.array([plateau <= eps]), lambda i: (
        f"tail of {len(tail)} records", f"plateau <= {_fmt(eps)}", _fmt(plateau)))

    if p.name == "quadratic":
        c = p.global_lipschitz
        half = _halved(scheme, td, sp)
        e_full = exact_plateau(scheme, sp, c, p.dim)
        e_half = exact_plateau(scheme, half[1], c, p.dim)
        rep.measured.update(exact_plateau=e_full, exact_plateau_half=e_half, gamma_half=half[1].gamma)
        rep.check_array("halving", np.array([e_half < e_full]), lambda i: (
            "exact stationary law at lambda/2", f"plateau < {_fmt(e_full)}", _fmt(e_half)))

        rng = _rng(seed, 6)
        zs = sample_target(p, n_chains, rng)
        st = run_chain(zs, td, sp, stationary_steps, NoiseStream(seed, 0, 1), scheme=scheme,
                       stride=max(1, stationary_steps // 20), threads=threads)
        ws = _w2_curve(st, q)
        cap = mu0 + 3 * s0
        rep.check_array("stationarity", ws <= cap, lambda i: (
            f"start at target, step={st.steps[i]}", f"w2 <= mu0 + 3 s0 = {_fmt(cap)}", _fmt(ws[i])))
        rep.measured["stationary_w2_max"] = float(ws.max())

        # empirical plateau at lambda/2 from a stationary start, reported only
        sh = run_chain(zs, half[0], half[1], stationary_steps, NoiseStream(seed, 0, 2), scheme=scheme,
                       stride=stationary_steps, threads=threads)
        rep.measured["plateau_half_empirical"] = _w2_stat(sh.x[-1], q)

    if reference:
        ref = _reference_plateau(td, sp, scheme, n_chains, n_steps, seed, q, threads)
        rep.measured.update(ref)
        gap = abs(plateau - ref["reference_plateau"])
        tol_ref = 3 * math.sqrt(2) * s0
        rep.check_array("reference", np.array([gap <= tol_ref]), lambda i: (
            f"reference lambda={_fmt(ref['reference_lambda'])}",
            f"|plateau - reference| <= {_fmt(tol_ref)}", _fmt(gap)))
    return _finish(rep, t0)


def _regime_gamma(scheme: str, M: float) -> float:
    """Smallest friction meeting the W2 regime of ``scheme``."""
    return auto_gamma(scheme, M) if scheme == "exponential" else math.sqrt(M)


def _halved(scheme: str, td: TamedDrift, sp: SchemeParams) -> tuple[TamedDrift, SchemeParams]:
    m_override = td.M_lambda if td.m_overridden else None
    td2 = TamedDrift.build(td.base, td.lam / 2, m_override)
    gamma = max(sp.gamma, _regime_gamma(scheme, td2.M_lambda))
    return td2, make_params(td2.lam, gamma, td2.m, td2.M_lambda)


def _reference_plateau(td, sp, scheme, n_chains, n_steps, seed, q, threads) -> dict:
    lam_ref = td.lam / 100
    m_override = td.M_lambda if td.m_overridden else None
    td_ref = TamedDrift.build(td.base, lam_ref, m_override)
    gamma = max(sp.gamma, _regime_gamma(scheme, td_ref.M_lambda))
    sp_ref = make_params(lam_ref, gamma, td_ref.m, td_ref.M_lambda)
    check_regime(scheme, sp_ref, "w2")
    steps = 10 * n_steps
    zs = sample_target(td.base, n_chains, _rng(seed, 7))
    rec = run_chain(zs, td_ref, sp_ref, steps, NoiseStream(seed, 0, 3), scheme=scheme,
                    stride=max(1, steps // 100), threads=threads)
    w = _w2_curve(rec, q)
    tail = w[-max(1, len(w) // 10):]
    return {"reference_lambda": lam_ref, "reference_gamma": gamma, "reference_plateau": float(tail.mean())}


# -- LSI proxies ----------------------------------------------------------


def _lsi_precondition(sp: SchemeParams) -> None:
    if not sp.gamma > 0:
        raise RegimeError(f"friction must be positive, got gamma={sp.gamma}")
    if not sp.lam > 0:
        raise RegimeError(f"step size must be positive, got lambda={sp.lam}")
    if sp.lam * sp.gamma > 0.5 * (1 + 1e-12):
        raise RegimeError(f"lambda*gamma <= 1/2 violated (lambda*gamma={sp.lam * sp.gamma:.17g})")


def suite_lsi_proxies(td: TamedDrift, sp: SchemeParams, n_points: int, seed: int,
                      lambdas: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> SuiteReport:
    """Lipschitz proxies of the log-Sobolev arguments.

    (i) ``||DF_bar|| < 1`` at ``n_points`` points with ``phi`` inside
    ``B(0, r - 2)``; (ii) the OBABO noise map ``(G, G') -> Theta`` has
    Jacobian norm at most ``(1 + lam + lam^2 M/2) sqrt(1 - eta_half^2)``;
    (iii) ``||Sigma_bar||_op / (4 lam / gamma)`` is within 10% of one at the
    smallest step of ``lambdas`` and approaches one monotonically.
    """
    _lsi_precondition(sp)
    t0 = time.perf_counter()
    rep = SuiteReport("lsi_proxies")
    rep.header = {"potential": td.base.name, "dim": td.dim, "r_lambda": td.r_lambda, "R_lambda": td.R_lambda,
                  "m_overridden": td.m_overridden, **sp.header()}
    d, g = td.dim, sp.gamma
    rng = _rng(seed, 8)
    phi = _directions(rng, n_points, d) * ((td.r_lambda - 2) * rng.random((n_points, 1)) ** (1.0 / d))
    psi = phi + (2.0 / g) * rng.standard_normal((n_points, d))

    def fbar(z):
        a, b = mean_map_Fbar(z[:d], z[d:], td, sp)
        return np.concatenate([a, b])

    norms_f = np.array([jacobian_opnorm_fd(fbar, np.concatenate([phi[i], psi[i]]), max_iter=2000, tol=1e-14)
                        for i in range(n_points)])
    rep.check_array("fbar_contraction", norms_f < 1.0, lambda i: (
        f"phi={np.array2string(phi[i], precision=6)}", "||DF_bar|| < 1", _fmt(norms_f[i])))
    rep.measured["fbar_norm_max"] = float(norms_f.max())

    sig = math.sqrt(-math.expm1(-g * sp.lam))
    bound = (1 + sp.lam + sp.lam**2 * sp.M_lambda / 2) * sig * (1 + 1e-6)
    two_const = 2 * sig * (1 + 1e-6)
    x0 = phi[: min(n_points, 100)]
    v0 = rng.standard_normal(x0.shape)
    norms_t = np.empty(x0.shape[0])
    for i in range(x0.shape[0]):
        z = PhaseState(x0[i], v0[i])

        def theta(noise, z=z):
            out = obabo_closed_form(z, td, sp, noise[:d], noise[d:])
            return np.concatenate([out.x, out.v])

        norms_t[i] = jacobian_opnorm_fd(theta, np.zeros(2 * d), h=1e-5, max_iter=2000, tol=1e-14)
    rep.check_array("noise_map", norms_t <= bound, lambda i: (
        f"x={np.array2string(x0[i], precision=6)}", f"||D Theta|| <= {_fmt(bound)}", _fmt(norms_t[i])))
    rep.check_array("noise_map_2sqrt", norms_t <= two_const, lambda i: (
        f"x={np.array2string(x0[i], precision=6)}", f"||D Theta|| <= 2 sqrt(1 - eta_half^2) = {_fmt(two_const)}",
        _fmt(norms_t[i])))
    rep.measured.update(noise_map_norm_max=float(norms_t.max()), noise_map_bound=bound)

    lams = sorted(lambdas, reverse=True)
    ratios = np.array([np.linalg.norm(sigma_bar(lm, g), 2) / (4 * lm / g) for lm in lams])
    ratios_c = np.array([np.linalg.norm(sigma_bar_from_C(lm, g), 2) / (4 * lm / g) for lm in lams])
    dev = np.abs(ratios - 1)
    ok = np.array([dev[-1] <= 0.1, bool(np.all(np.diff(dev) <= 0))])
    rep.check_array("sigma_bar", ok, lambda i: (
        f"lambdas={lams}", ["ratio within 10% of 1 at smallest lambda", "|ratio - 1| nonincreasing"][i],
        np.array2string(ratios, precision=10)))
    excess = np.array([np.linalg.norm(sigma_bar(lm, g), 2) - 4 * lm / g for lm in lams])
    rep.measured.update(
        sigma_bar_ratios=ratios.tolist(),
        sigma_bar_from_C_ratios=ratios_c.tolist(),
        sigma_bar_c_fit=float(np.polyfit(np.square(lams), excess, 1)[0]),
    )
    rep.columns = ("lambda", "sigma_bar_opnorm_ratio", "from_C_ratio")
    rep.rows = [(lm, a, b) for lm, a, b in zip(lams, ratios, ratios_c)]
    return _finish(rep, t0)


# -- eta bounds -----------------------------------------------------------


def eta_grid(n_side: int = 10) -> list[tuple[float, float]]:
    """``n_side**2`` points with ``lambda * gamma`` spread over ``(0, 1/2]``."""
    products = np.linspace(0.05, 0.5, n_side)
    gammas = np.geomspace(0.1, 30.0, n_side)
    return [(float(x / g), float(g)) for g in gammas for x in products]


def suite_eta_bounds(grid: Sequence[tuple[float, float]]) -> SuiteReport:
    """``lg/2 <= 1 - eta <= lg`` and ``0 <= eta - 1 + lg <= (lg)^2/2`` with ``lg = lambda * gamma``."""
    t0 = time.perf_counter()
    rep = SuiteReport("eta_bounds")
    rep.columns = ("lambda", "gamma", "one_minus_eta", "lower", "upper", "pass")
    for k, (lam, gamma) in enumerate(grid):
        x = lam * gamma
        if not (lam > 0 and gamma > 0) or x > 0.5 * (1 + 1e-12):
            raise RegimeError(f"grid point {k} violates lambda*gamma <= 1/2: lambda={lam}, gamma={gamma}")
        one_m = -math.expm1(-x)
        second = x + math.expm1(-x)
        ok1 = x / 2 <= one_m <= x
        ok2 = 0 <= second <= x * x / 2
        rep.cases += 2
        rep.count("first", 0)
        rep.count("second", 0)
        if not ok1:
            rep.fail(k, "first", f"lambda={_fmt(lam)} gamma={_fmt(gamma)}", "lg/2 <= 1-eta <= lg", _fmt(one_m))
        if not ok2:
            rep.fail(k, "second", f"lambda={_fmt(lam)} gamma={_fmt(gamma)}", "0 <= eta-1+lg <= (lg)^2/2",
                     _fmt(second))
        rep.rows.append((lam, gamma, one_m, x / 2, x, int(ok1 and ok2)))
    return _finish(rep, t0)


# -- integrator order -----------------------------------------------------


def suite_order(p: PotentialSpec, lambdas: Sequence[float], n_starts: int, seed: int,
                slope_range: tuple[float, float] = (1.9, 2.3), substeps: int = 64,
                horizon: float = 0.05) -> SuiteReport:
    """One-step RMS velocity error of Verlet against the RK4 Hamiltonian flow.

    Starts are target draws conditioned on ``|x|`` staying inside the
    untouched ball of the coarsest step, so the tamed and true forces
    coincide along every step. The fixed-horizon error slope is reported as
    a measured value only.
    """
    t0 = time.perf_counter()
    lams = sorted(float(v) for v in lambdas)
    tds = {lm: TamedDrift.build(p, lm) for lm in lams}
    rho = min(td.r_lambda for td in tds.values()) - 2.25
    if rho <= 0:
        raise RegimeError(f"untouched ball too small for the order check (radius {rho:.6g})")
    rng = _rng(seed, 9)
    if p.dim == 1:
        ppf = marginal_ppf(p)
        lo, hi = np.interp([-rho, rho], ppf(np.linspace(1e-12, 1 - 1e-12, 20001)), np.linspace(1e-12, 1 - 1e-12, 20001))
        x = ppf(rng.uniform(lo, hi, (n_starts, 1)))
    else:
        x = _directions(rng, n_starts, p.dim) * (rho * rng.random((n_starts, 1)) ** (1.0 / p.dim))
    z0 = PhaseState(x, rng.standard_normal(x.shape))

    one_step, fixed = [], []
    for lm in lams:
        ref = hamiltonian_reference(z0, p, lm, substeps)
        out = verlet_map(z0, tds[lm], lm)
        one_step.append(float(np.sqrt(np.mean(np.sum((out.v - ref.v) ** 2, axis=1)))))
        n = max(1, int(round(horizon / lm)))
        z = z0
        for _ in range(n):
            z = verlet_map(z, tds[lm], lm)
        ref = hamiltonian_reference(z0, p, n * lm, substeps * n)
        fixed.append(float(np.sqrt(np.mean(np.sum((z.v - ref.v) ** 2, axis=1)))))

    slope = order_fit(lams, one_step)
    rep = SuiteReport("order")
    rep.header = {"potential": p.name, "dim": p.dim, "n_starts": n_starts, "start_radius": rho,
                  "substeps": substeps}
    rep.measured.update(slope=slope, fixed_horizon_slope=order_fit(lams, fixed), horizon=horizon)
    lo_s, hi_s = slope_range
    rep.check_array("slope", np.array([lo_s <= slope <= hi_s]), lambda i: (
        f"lambdas={lams}", f"{lo_s} <= slope <= {hi_s}", _fmt(slope)))
    rep.columns = ("lambda", "rms_velocity_error", "fixed_horizon_error")
    rep.rows = list(zip(lams, one_step, fixed))
    return _finish(rep, t0)


# -- moments --------------------------------------------------------------


def suite_moments(td: TamedDrift, sp: SchemeParams, scheme: str, n_chains: int, n_steps: int, burn_in: int,
                  seed: int, stride: int = 10, threads: int = 1) -> SuiteReport:
    """Stationary second moment against ``(2/m)(u(0) + d)``, errors across chains."""
    t0 = time.perf_counter()
    checked = check_regime(scheme, sp, "w2")
    p = td.base
    shape = (n_chains, p.dim)
    stream = NoiseStream(seed, 0, 0)
    z0 = PhaseState(np.zeros(shape), np.zeros(shape))
    warm = run_chain(z0, td, sp, burn_in, stream, scheme=scheme, stride=burn_in, threads=threads)
    rec = run_chain(warm.final(), td, sp, n_steps, stream, scheme=scheme, stride=stride, threads=threads)
    sq = np.sum(rec.x[1:] ** 2, axis=2)
    res = moment_bound_check(rec.x[1:].reshape(-1, p.dim), p, chain_means=sq.mean(axis=0))
    rep = SuiteReport(f"moments[{scheme}]")
    rep.header = {"potential": p.name, "dim": p.dim, **sp.header(), "burn_in": burn_in,
                  "regimes_checked": "; ".join(checked)}
    rep.measured.update(res)
    rep.check_array("moment_bound", np.array([not res["violated"]]), lambda i: (
        f"{n_chains} chains x {n_steps} steps", f"E|Y|^2 <= {_fmt(res['bound'])} + 3 se",
        f"{_fmt(res['second_moment'])} (se {_fmt(res['stderr'])})"))
    rep.columns = ("second_moment", "stderr", "bound", "pass")
    rep.rows = [(res["second_moment"], res["stderr"], res["bound"], int(not res["violated"]))]
    return _finish(rep, t0)


def with_cap(td: TamedDrift, R_lambda: float) -> TamedDrift:
    """Copy of ``td`` with a replaced cap, for fault injection."""
    return dataclasses.replace(td, R_lambda=float(R_lambda))


__all__ = [
    "Failure",
    "SuiteReport",
    "contraction_rate",
    "eta_grid",
    "exact_plateau",
    "linear_gaussian_law",
    "marginal_ppf",
    "radial_ppf",
    "sample_target",
    "stratified_pairs",
    "suite_contraction",
    "suite_eta_bounds",
    "suite_lsi_proxies",
    "suite_moments",
    "suite_order",
    "suite_taming",
    "suite_w2_convergence",
    "w2_null",
    "with_cap",
]
