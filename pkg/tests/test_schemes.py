import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad, simpson

from tkl.noise import NoiseStream
from tkl.potential import builtin_potential
from tkl.schemes import (
    PhaseState,
    auto_gamma,
    check_regime,
    chol2,
    coord_map_M,
    coord_map_M_inv,
    coord_map_S,
    coord_map_S_inv,
    exp_step,
    hamiltonian_energy,
    hamiltonian_reference,
    make_params,
    mean_map_F,
    mean_map_Fbar,
    noise_covariance,
    obabo_closed_form,
    obabo_step,
    psi_coefficients,
    run_chain,
    run_coupled,
    sample_noise_pair,
    scheme_params,
    sigma_bar,
    sigma_bar_from_C,
    verlet_map,
)
from tkl.taming import RegimeError, TamedDrift

GRID = [(lam, g) for lam in (1e-3, 1e-2, 1e-1) for g in (0.5, 1.0, 2.0, 5.0, 28.117)]


def zero_drift(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def quad_setup(lam=0.1, gamma=2.0):
    td = TamedDrift.build(builtin_potential("quadratic", 1), lam) if lam <= 1e-2 else TamedDrift(
        builtin_potential("quadratic", 1), lam, 50.0, 50.0, lam**-0.5)
    return td, make_params(lam, gamma, 0.5, lam**-0.5)


# -- coefficients ---------------------------------------------------------


def test_psi_example_against_quadrature():
    lam, g = 0.1, 2.0
    psi0, psi1, psi2 = psi_coefficients(lam, g)
    assert psi0 == pytest.approx(0.818731, abs=1e-6)
    assert psi1 == pytest.approx(0.0906346, abs=1e-7)
    # psi2 = int_0^lam psi1(t) dt; the oracle is numerical quadrature
    ref = quad(lambda t: (1 - math.exp(-g * t)) / g, 0, lam, epsabs=1e-16)[0]
    assert psi2 == pytest.approx(ref, rel=1e-12)
    assert psi2 == pytest.approx(0.00468269, abs=1e-8)


def test_psi_degenerate_and_small_step():
    assert psi_coefficients(0.0, 2.0) == (1.0, 0.0, 0.0)
    lam = 1e-9
    psi0, psi1, psi2 = psi_coefficients(lam, 1.0)
    assert psi1 == pytest.approx(lam, rel=1e-8)
    assert psi2 == pytest.approx(lam**2 / 2, rel=1e-8)


def test_covariance_example():
    C = noise_covariance(0.1, 2.0)
    assert C[0, 0] == pytest.approx(0.0824200, abs=1e-7)
    assert C[0, 1] == pytest.approx(0.0041073, abs=1e-7)
    # integral oracle gives 2.8768539e-4
    assert C[1, 1] == pytest.approx(2.8768539e-4, abs=1e-11)


@pytest.mark.parametrize("lam,g", GRID)
def test_covariance_matches_simpson_quadrature(lam, g):
    t = np.linspace(0, lam, 20001)
    p0 = np.exp(-g * t)
    p1 = -np.expm1(-g * t) / g
    C = noise_covariance(lam, g)
    assert abs(C[0, 0] - simpson(p0 * p0, x=t)) <= 1e-10
    assert abs(C[0, 1] - simpson(p0 * p1, x=t)) <= 1e-10
    assert abs(C[1, 1] - simpson(p1 * p1, x=t)) <= 1e-10
    assert C[0, 1] ** 2 <= C[0, 0] * C[1, 1]


@pytest.mark.parametrize("lam,g", [(1e-8, 1.0), (1e-6, 28.0), (0.05, 1.0)])
def test_covariance_small_steps_relative_accuracy(lam, g):
    t = np.linspace(0, lam, 4001)
    p1 = -np.expm1(-g * t) / g
    assert noise_covariance(lam, g)[1, 1] == pytest.approx(simpson(p1 * p1, x=t), rel=1e-9)


def test_chol2_reconstructs_and_rejects():
    C = noise_covariance(0.1, 2.0)
    l11, l21, l22 = chol2(C)
    Lm = np.array([[l11, 0], [l21, l22]])
    np.testing.assert_allclose(Lm @ Lm.T, C, rtol=1e-14)
    assert chol2(np.zeros((2, 2))) == (0.0, 0.0, 0.0)
    with pytest.raises(np.linalg.LinAlgError):
        chol2(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_sample_noise_pair_trivial_cases():
    xi, xip = sample_noise_pair(NoiseStream(1), np.zeros((2, 2)), 3)
    assert np.all(xi == 0) and np.all(xip == 0)
    s = NoiseStream(1)
    z = s.draw(1, 6)[0]
    xi, xip = sample_noise_pair(s, np.eye(2), 3)
    np.testing.assert_array_equal(xi, z[:3])
    np.testing.assert_array_equal(xip, z[3:])


def test_sample_noise_pair_covariance_monte_carlo():
    C = noise_covariance(0.1, 2.0)
    xi, xip = sample_noise_pair(NoiseStream(2024), C, 1, n_chains=1_000_000)
    a, b = xi[:, 0], xip[:, 0]
    n = a.size
    for est, var_prod, true in [
        (np.mean(a * a), np.var(a * a), C[0, 0]),
        (np.mean(a * b), np.var(a * b), C[0, 1]),
        (np.mean(b * b), np.var(b * b), C[1, 1]),
    ]:
        assert abs(est - true) <= 5 * math.sqrt(var_prod / n)


# -- one-step maps --------------------------------------------------------


def test_exp_step_example():
    td, sp = quad_setup()
    out = exp_step(PhaseState([1.0], [0.0]), td, sp, (np.zeros(1), np.zeros(1)))
    assert out.x[0] == pytest.approx(1 - sp.psi2, abs=1e-15)
    assert out.x[0] == pytest.approx(0.995317, abs=1e-6)
    assert out.v[0] == pytest.approx(-0.0906346, abs=1e-7)


def test_exp_step_free_motion():
    _, sp = quad_setup()
    z = PhaseState([1.0, -2.0], [3.0, 0.5])
    out = exp_step(z, zero_drift, sp, (np.zeros(2), np.zeros(2)))
    np.testing.assert_allclose(out.x, z.x + sp.psi1 * z.v)
    np.testing.assert_allclose(out.v, sp.psi0 * z.v)


def test_mean_map_is_noise_free_step():
    td, sp = quad_setup()
    z = PhaseState([0.3], [-1.2])
    a = mean_map_F(z, td, sp)
    b = exp_step(z, td, sp, (np.zeros(1), np.zeros(1)))
    np.testing.assert_array_equal(a.x, b.x)


def test_obabo_step_example():
    td, sp = quad_setup()
    out = obabo_step(PhaseState([1.0], [0.0]), td, sp, np.zeros(1), np.zeros(1))
    assert out.x[0] == pytest.approx(0.995, abs=1e-15)
    assert out.v[0] == pytest.approx(-0.09975 * math.exp(-0.1), abs=1e-15)


def test_obabo_free_motion():
    _, sp = quad_setup()
    z = PhaseState([1.0], [2.0])
    out = obabo_step(z, zero_drift, sp, np.zeros(1), np.zeros(1))
    assert out.x[0] == pytest.approx(1 + sp.lam * sp.eta_half * 2.0, rel=1e-15)
    assert out.v[0] == pytest.approx(sp.eta * 2.0, rel=1e-14)


@pytest.mark.parametrize("name,lam,gamma", [("quadratic", 0.1, 2.0), ("double_well", 1e-3, 28.117)])
def test_obabo_closed_form_agrees_with_substeps(name, lam, gamma):
    p = builtin_potential(name, 2)
    td = TamedDrift.build(p, lam) if lam < 0.01 else TamedDrift(p, lam, 50.0, 50.0, lam**-0.5)
    sp = make_params(lam, gamma, p.m, td.M_lambda)
    rng = np.random.default_rng(0)
    x, v, g1, g2 = (rng.standard_normal((10_000, 2)) for _ in range(4))
    z = PhaseState(x, v)
    a = obabo_step(z, td, sp, g1, g2)
    b = obabo_closed_form(z, td, sp, g1, g2)
    assert np.max(np.abs(a.x - b.x)) <= 1e-12
    assert np.max(np.abs(a.v - b.v)) <= 1e-12


def test_verlet_examples():
    td, _ = quad_setup()
    out = verlet_map(PhaseState([1.0], [0.0]), td, 0.1)
    assert out.x[0] == pytest.approx(0.995, abs=1e-15)
    assert out.v[0] == pytest.approx(-0.09975, abs=1e-15)
    free = verlet_map(PhaseState([1.0], [2.0]), zero_drift, 0.1)
    assert (free.x[0], free.v[0]) == pytest.approx((1.2, 2.0))


def test_verlet_equals_obabo_without_friction_or_noise():
    td, sp = quad_setup()
    frictionless = dataclasses.replace(sp, eta_half=1.0, gamma=1e-300)
    z = PhaseState([0.7], [-0.3])
    a = verlet_map(z, td, sp.lam)
    b = obabo_closed_form(z, td, dataclasses.replace(frictionless), np.zeros(1), np.zeros(1))
    np.testing.assert_allclose(a.x, b.x, rtol=1e-15)
    np.testing.assert_allclose(a.v, b.v, rtol=1e-15)


def test_verlet_energy_drift():
    p = builtin_potential("quadratic", 1)
    td = TamedDrift.build(p, 1e-2)
    z = PhaseState([1.0], [0.0])
    h0 = hamiltonian_energy(z, p)
    worst = 0.0
    for _ in range(100):
        z = verlet_map(z, td, 0.01)
        worst = max(worst, abs(float(hamiltonian_energy(z, p) - h0)))
    assert worst <= 1e-3


def test_hamiltonian_reference_quarter_period():
    p = builtin_potential("quadratic", 1)
    out = hamiltonian_reference(PhaseState([1.0], [0.0]), p, math.pi / 2, 10_000)
    assert abs(out.x[0]) <= 1e-8
    assert abs(out.v[0] + 1) <= 1e-8


def test_hamiltonian_reference_zero_time_and_validation():
    p = builtin_potential("quadratic", 1)
    z = PhaseState([0.4], [0.1])
    out = hamiltonian_reference(z, p, 0.0, 5)
    np.testing.assert_array_equal(out.x, z.x)
    with pytest.raises(ValueError):
        hamiltonian_reference(z, p, 1.0, 0)


def test_hamiltonian_reference_conserves_double_well_energy():
    p = builtin_potential("double_well", 1)
    rng = np.random.default_rng(4)
    x = rng.uniform(-1.4, 1.4, (200, 1))
    v = rng.uniform(-1.4, 1.4, (200, 1))
    z = PhaseState(x, v)
    out = hamiltonian_reference(z, p, 1.0, 10_000)
    assert np.max(np.abs(hamiltonian_energy(out, p) - hamiltonian_energy(z, p))) <= 1e-10


# -- coordinate maps ------------------------------------------------------


def test_coord_map_M_examples_and_roundtrip():
    phi, psi = coord_map_M(PhaseState([1.0], [3.0]), 2.0)
    assert (phi[0], psi[0]) == (1.0, 4.0)
    phi, psi = coord_map_M(PhaseState([2.5], [0.0]), 7.0)
    assert phi[0] == psi[0] == 2.5
    rng = np.random.default_rng(1)
    z = PhaseState(rng.standard_normal((10_000, 3)), rng.standard_normal((10_000, 3)))
    back = coord_map_M_inv(*coord_map_M(z, 2.0), 2.0)
    assert max(np.max(np.abs(back.x - z.x)), np.max(np.abs(back.v - z.v))) <= 1e-14


def test_coord_map_S_examples_and_roundtrip():
    p, q = coord_map_S(PhaseState([0.3], [0.4]), 1.0, 0.0)
    assert (p[0], q[0]) == (0.3, 0.4)
    p, q = coord_map_S(PhaseState([0.0], [1.0]), 4.0, 1.0)
    assert p[0] == 1.0 and q[0] == pytest.approx(math.sqrt(3))
    rng = np.random.default_rng(2)
    z = PhaseState(rng.standard_normal((10_000, 2)), rng.standard_normal((10_000, 2)))
    back = coord_map_S_inv(*coord_map_S(z, 4.0, 1.0), 4.0, 1.0)
    assert max(np.max(np.abs(back.x - z.x)), np.max(np.abs(back.v - z.v))) <= 1e-14
    with pytest.raises(ValueError):
        coord_map_S(z, 1.0, 1.0)


def test_fbar_without_drift_and_fixed_point():
    _, sp = quad_setup()
    phi, psi = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    a, b = mean_map_Fbar(phi, psi, zero_drift, sp)
    np.testing.assert_allclose(a, phi + (1 - sp.eta) / 2 * (psi - phi))
    np.testing.assert_allclose(b, phi + (1 + sp.eta) / 2 * (psi - phi))
    td, _ = quad_setup()
    a, b = mean_map_Fbar(np.zeros(1), np.zeros(1), td, sp)
    assert a[0] == b[0] == 0.0


def test_fbar_is_F_in_M_coordinates():
    td, sp = quad_setup()
    z = PhaseState([0.6], [-0.8])
    direct = coord_map_M(mean_map_F(z, td, sp), sp.gamma)
    via = mean_map_Fbar(*coord_map_M(z, sp.gamma), td, sp)
    np.testing.assert_allclose(direct[0], via[0], rtol=1e-14)
    np.testing.assert_allclose(direct[1], via[1], rtol=1e-14)


@pytest.mark.parametrize("lam,g", [(1e-2, 2.0), (1e-3, 2.0), (0.1, 5.0)])
def test_sigma_bar_entries(lam, g):
    disp, route = sigma_bar(lam, g), sigma_bar_from_C(lam, g)
    # position and cross entries agree between the closed form and M (2 gamma C) M^T
    assert disp[0, 0] == pytest.approx(route[0, 0], rel=1e-8)
    assert disp[0, 1] == pytest.approx(route[0, 1], rel=1e-8)
    # the closed-form (2,2) entry is short by 4 e (1 - e) / gamma^2 with e = exp(-gamma lam)
    e = math.exp(-g * lam)
    assert route[1, 1] - disp[1, 1] == pytest.approx(4 * e * (1 - e) / g**2, rel=1e-8)


# -- params and regimes ---------------------------------------------------


def test_params_derived_constants():
    sp = make_params(1e-3, 28.117, 0.5, 1e-3 ** -0.5)
    assert sp.eta_half**2 == pytest.approx(sp.eta, rel=1e-15)
    assert sp.a == pytest.approx(1e-3**0.5)
    assert sp.b == pytest.approx(1 / 28.117)
    assert sp.f_lambda == pytest.approx(0.5e-3 / (4 * 28.117))
    assert sp.f_lambda == pytest.approx(4.45e-6, rel=1e-3)
    assert sp.kappa == pytest.approx(0.5 / (3 * 28.117))
    assert sp.b**2 < sp.a / 4


def test_auto_gamma_and_regimes():
    M = 1e-3 ** -0.5
    assert auto_gamma("exponential", M) == pytest.approx(5 * 1e-3 ** -0.25)
    assert auto_gamma("obabo", M) == pytest.approx(2 * 1e-3 ** -0.25)
    sp = make_params(1e-3, auto_gamma("exponential", M), 0.5, M)
    assert len(check_regime("exponential", sp)) == 2
    with pytest.raises(RegimeError, match=r"lambda <= 1/\(2\*gamma\)"):
        check_regime("exponential", make_params(0.05, auto_gamma("exponential", M), 0.5, M))
    with pytest.raises(RegimeError, match="gamma >= 5"):
        check_regime("exponential", make_params(1e-3, 10.0, 0.5, M))
    with pytest.raises(RegimeError, match="m/\\(33"):
        check_regime("obabo", make_params(1e-3, 2 * M**0.5, 0.5, M))
    assert check_regime("obabo", make_params(1e-3, M**0.5, 0.5, M), "w2") == ["gamma >= sqrt(M_lambda)"]
    with pytest.raises(ValueError):
        auto_gamma("leapfrog", 1.0)
    with pytest.raises(ValueError):
        make_params(1e-3, -1.0, 0.5, 1.0)


# -- drivers --------------------------------------------------------------


def dw_setup(dim=1, lam=1e-3):
    td = TamedDrift.build(builtin_potential("double_well", dim), lam)
    return td, scheme_params(td, auto_gamma("exponential", td.M_lambda))


@pytest.mark.parametrize("scheme", ["exponential", "obabo"])
def test_coupled_equal_starts_stay_equal(scheme):
    td, sp = dw_setup(2)
    rng = np.random.default_rng(0)
    z = PhaseState(rng.standard_normal((8, 2)), rng.standard_normal((8, 2)))
    rec = run_coupled(z, z, td, sp, 50, NoiseStream(1), scheme=scheme)
    assert np.array_equal(rec.x, rec.x_tilde) and np.array_equal(rec.v, rec.v_tilde)
    assert np.all(np.isnan(rec.ratios))


@pytest.mark.parametrize("scheme", ["exponential", "obabo"])
def test_chain_is_independent_of_threads_and_blocks(scheme):
    td, sp = dw_setup(2)
    rng = np.random.default_rng(0)
    z = PhaseState(rng.standard_normal((9, 2)), rng.standard_normal((9, 2)))
    a = run_chain(z, td, sp, 40, NoiseStream(5), scheme=scheme, stride=7)
    b = run_chain(z, td, sp, 40, NoiseStream(5), scheme=scheme, stride=7, threads=4)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.steps, [0, 7, 14, 21, 28, 35, 40])
    # the tail of the batch, run alone with its global chain offset
    c = run_chain(PhaseState(z.x[4:], z.v[4:]), td, sp, 40, NoiseStream(5), scheme=scheme, stride=7, first_chain=4)
    np.testing.assert_array_equal(a.x[:, 4:], c.x)


def test_chain_advances_stream_and_continues_seamlessly():
    td, sp = dw_setup()
    z = PhaseState(np.zeros((3, 1)), np.zeros((3, 1)))
    s = NoiseStream(9)
    whole = run_chain(z, td, sp, 20, NoiseStream(9), stride=20)
    first = run_chain(z, td, sp, 12, s, stride=12)
    assert s.counter == 12
    second = run_chain(first.final(), td, sp, 8, s, stride=8)
    np.testing.assert_array_equal(whole.x[-1], second.x[-1])


def test_chain_matches_manual_exp_steps():
    td, sp = dw_setup()
    z0 = PhaseState(np.array([[0.3]]), np.array([[-0.2]]))
    rec = run_chain(z0, td, sp, 3, NoiseStream(4))
    s = NoiseStream(4)
    z = PhaseState(z0.x[0], z0.v[0])
    for _ in range(3):
        z = exp_step(z, td, sp, sample_noise_pair(s, sp.C, 1))
    np.testing.assert_allclose(rec.x[-1, 0], z.x, rtol=1e-15)


def test_driver_validation():
    td, sp = dw_setup()
    z = PhaseState(np.zeros((2, 1)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        run_chain(z, td, sp, 0, NoiseStream(1))
    with pytest.raises(ValueError):
        run_chain(z, td, sp, 5, NoiseStream(1), stride=0)
    with pytest.raises(ValueError):
        run_chain(z, td, dataclasses.replace(sp, lam=2e-3), 5, NoiseStream(1))
    with pytest.raises(ValueError):
        run_chain(z, td, sp, 5, NoiseStream(1), scheme="leapfrog")


def test_non_finite_state_aborts_with_step_index():
    td, sp = dw_setup()
    z = PhaseState(np.array([[np.nan]]), np.array([[0.0]]))
    with pytest.raises(FloatingPointError, match="step 1"):
        run_chain(z, td, sp, 3, NoiseStream(1))


def test_phase_state_validation():
    with pytest.raises(ValueError):
        PhaseState([1.0, 2.0], [1.0])
    assert not PhaseState([np.nan], [0.0]).is_finite()
