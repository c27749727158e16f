import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from spinboson_qfi import (
    CompositeSpace,
    Model,
    ModelParams,
    Target,
    build_dH,
    build_dK,
    build_hamiltonian,
    build_jump_operator,
    build_spin_operators,
    dicke_number_state,
    kraus_counting,
    kraus_homodyne,
)
from spinboson_qfi.models import frechet_expm, kraus_counting_with_derivative
from conftest import max_abs

finite = st.floats(-3, 3, allow_nan=False)
params_strategy = st.builds(
    ModelParams,
    model=st.sampled_from([Model.TC, Model.GD, Model.BTC]),
    omega=finite,
    delta_spin=finite,
    delta_boson=finite,
    lam=finite,
    kappa=st.floats(0.1, 3),
    gamma=st.floats(0.1, 3),
    phi_lo=st.floats(0, 2 * np.pi),
)


@given(params_strategy, st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_hamiltonian_is_hermitian(params, n_spins):
    H = build_hamiltonian(CompositeSpace(n_spins, 3), params)
    assert max_abs(H - H.conj().T) < 1e-12


def test_tc_without_drive_or_coupling_is_diagonal():
    space = CompositeSpace(3, 3)
    H = build_hamiltonian(space, ModelParams(Model.TC, delta_spin=1.0, delta_boson=2.0)).toarray()
    m, n = space.labels()
    assert np.allclose(H, np.diag(m + 2 * n))


def test_gd_coupling_matrix_element():
    space = CompositeSpace(2, 3)
    H = build_hamiltonian(space, ModelParams(Model.GD, lam=1.0))
    # (lambda/sqrt(S)) <1|a^dag|0> <1,1|Sz|1,1> with S = 1
    assert H[space.index(1, 1), space.index(1, 0)] == pytest.approx(1.0, abs=1e-15)
    dH = build_dH(space, ModelParams(Model.GD, lam=0.3), Target.LAMBDA)
    assert dH[space.index(1, 1), space.index(1, 0)] == pytest.approx(1.0, abs=1e-15)


def test_tc_coupling_matrix_element():
    space = CompositeSpace(3, 3)
    H = build_hamiltonian(space, ModelParams(Model.TC, lam=0.7))
    # (lam/sqrt(3/2)) <1|a^dag|0> <1/2|S-|3/2> = 0.7/sqrt(1.5) * 1 * sqrt(3)
    expected = 0.7 / np.sqrt(1.5) * np.sqrt(3)
    assert H[space.index(0.5, 1), space.index(1.5, 0)] == pytest.approx(expected, rel=1e-14)


def test_btc_hamiltonian_ignores_boson_parameters():
    space = CompositeSpace(4, 0)
    p = ModelParams(Model.BTC, omega=1.3, delta_boson=5.0, lam=2.0)
    spin = build_spin_operators(space)
    assert max_abs(build_hamiltonian(space, p) - 1.3 * spin["Sx"]) < 1e-15


def test_jump_operators():
    space = CompositeSpace(3, 2)
    L = build_jump_operator(space, ModelParams(Model.TC, kappa=1.0))
    assert np.allclose(L @ dicke_number_state(space, 1.5, 1), dicke_number_state(space, 1.5, 0))
    assert max_abs(L @ dicke_number_state(space, -0.5, 0)) == 0

    btc = CompositeSpace(2, 0)
    L = build_jump_operator(btc, ModelParams(Model.BTC, gamma=1.0))
    # sqrt(gamma/S) = 1 for S = 1; S-|1,1> = sqrt(2)|1,0>
    assert np.allclose(L @ dicke_number_state(btc, 1, 0), np.sqrt(2) * dicke_number_state(btc, 0, 0))
    assert max_abs(L @ dicke_number_state(btc, -1, 0)) == 0


def test_dH_omega_is_sx_for_every_model():
    space = CompositeSpace(3, 2)
    sx = build_spin_operators(space)["Sx"]
    for model in Model:
        assert max_abs(build_dH(space, ModelParams(model, omega=0.4, lam=0.2), Target.OMEGA) - sx) == 0


def test_dH_lambda_unsupported_for_btc():
    with pytest.raises(ValueError):
        build_dH(CompositeSpace(2, 0), ModelParams(Model.BTC), Target.LAMBDA)


@pytest.mark.parametrize("model", [Model.TC, Model.GD])
@pytest.mark.parametrize("target", [Target.OMEGA, Target.LAMBDA])
def test_dH_matches_central_difference(model, target):
    space = CompositeSpace(3, 4)
    p = ModelParams(model, omega=0.8, delta_spin=0.2, delta_boson=0.5, lam=0.6)
    h = 1e-4
    eta = p.value_of(target)
    fd = (build_hamiltonian(space, p.with_param(target, eta + h)) - build_hamiltonian(space, p.with_param(target, eta - h))) / (2 * h)
    assert max_abs(fd - build_dH(space, p, target)) < 1e-10


@given(st.sampled_from([1, 2, 3, 4, 5]), finite, finite, finite)
@settings(max_examples=30, deadline=None)
def test_gd_conserves_sz_without_drive(n_spins, delta_spin, delta_boson, lam):
    space = CompositeSpace(n_spins, 3)
    H = build_hamiltonian(space, ModelParams(Model.GD, delta_spin=delta_spin, delta_boson=delta_boson, lam=lam))
    sz = build_spin_operators(space)["Sz"]
    assert max_abs(H @ sz - sz @ H) < 1e-12


def test_no_click_kraus_on_single_boson_without_hamiltonian():
    space = CompositeSpace(1, 2)
    dt = 0.013
    K0, _ = kraus_counting(space, ModelParams(Model.TC, kappa=1.0), dt)
    i = space.index(0.5, 1)
    assert K0[i, i] == pytest.approx(np.exp(-0.5 * dt), rel=1e-14)


def test_no_click_kraus_approaches_identity():
    space = CompositeSpace(2, 3)
    p = ModelParams(Model.TC, omega=1.0, lam=0.5)
    devs = [max_abs(kraus_counting(space, p, dt).K0 - np.eye(space.dim)) for dt in (1e-2, 5e-3)]
    assert devs[1] < 0.55 * devs[0]


def completeness_residual_counting(space, p, dt):
    K0, K1 = kraus_counting(space, p, dt)
    K1 = K1.toarray()
    return max_abs(K0.conj().T @ K0 + K1.conj().T @ K1 - np.eye(space.dim))


@pytest.mark.parametrize("model", [Model.TC, Model.GD, Model.BTC])
def test_counting_completeness_is_second_order(model):
    space = CompositeSpace(2, 3 if model is not Model.BTC else 0)
    p = ModelParams(model, omega=1.0, delta_boson=0.3, lam=0.7)
    r1 = completeness_residual_counting(space, p, 1e-2)
    r2 = completeness_residual_counting(space, p, 5e-3)
    assert r1 < 1e-3
    assert 3.6 < r1 / r2 < 4.4


def test_kraus_reject_non_positive_dt():
    space = CompositeSpace(1, 1)
    with pytest.raises(ValueError):
        kraus_counting(space, ModelParams(), 0.0)
    with pytest.raises(ValueError):
        kraus_homodyne(space, ModelParams(), 1.0, -1e-3)
    with pytest.raises(ValueError):
        build_dK(space, ModelParams(), Target.OMEGA, "K0", 0.0)


def test_homodyne_kraus_is_identity_on_vacuum_without_hamiltonian():
    space = CompositeSpace(2, 2)
    K = kraus_homodyne(space, ModelParams(Model.TC), 0.0, 1e-3).toarray()
    _, n = space.labels()
    vac = n == 0
    assert np.allclose(K[:, vac], np.eye(space.dim)[:, vac], atol=0)


@pytest.mark.parametrize("omega,lam", [(0.0, 0.0), (1.3, 0.5)])
def test_homodyne_current_term_amplitude(omega, lam):
    space = CompositeSpace(3, 3)
    p = ModelParams(Model.TC, omega=omega, lam=lam, kappa=1.0, phi_lo=0.0)
    out = kraus_homodyne(space, p, 2.0, 1e-3) @ dicke_number_state(space, 1.5, 1)
    # J dt sqrt(kappa) <0|a|1>; no Hamiltonian term connects |S,S;1> to |S,S;0>
    assert out[space.index(1.5, 0)] == pytest.approx(2e-3, abs=1e-18)


def gauss_hermite_residual(space, p, dt, n_nodes=8):
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / np.sqrt(2 * np.pi)
    total = np.zeros((space.dim, space.dim), dtype=complex)
    for xi, wi in zip(x, w):
        K = kraus_homodyne(space, p, xi / np.sqrt(dt), dt).toarray()
        total += wi * K.conj().T @ K
    return max_abs(total - np.eye(space.dim))


@pytest.mark.parametrize("model,phi", [(Model.TC, 0.0), (Model.GD, np.pi / 2), (Model.BTC, 0.3)])
def test_homodyne_weighted_completeness_order(model, phi):
    space = CompositeSpace(2, 3 if model is not Model.BTC else 0)
    p = ModelParams(model, omega=1.0, delta_boson=0.3, lam=0.7, phi_lo=phi)
    r1, r2 = (gauss_hermite_residual(space, p, dt) for dt in (1e-2, 5e-3))
    assert r1 < 10 * 1e-2**1.5
    assert r1 / r2 > 2**1.5


def test_click_kraus_derivative_is_zero():
    space = CompositeSpace(2, 2)
    dK1 = build_dK(space, ModelParams(Model.TC, omega=1.0, lam=0.5), Target.OMEGA, "K1", 1e-3)
    assert dK1.nnz == 0 and dK1.shape == (space.dim, space.dim)


def test_no_click_derivative_commuting_case():
    # Sx commutes with H_eff when lambda = Delta = delta = 0
    space = CompositeSpace(3, 3)
    p = ModelParams(Model.TC, omega=0.9, kappa=1.0)
    dt = 0.05
    K0, dK0, _ = kraus_counting_with_derivative(space, p, Target.OMEGA, dt)
    sx = build_spin_operators(space)["Sx"].toarray()
    assert max_abs(dK0 - (-1j * dt) * sx @ K0) < 1e-14


@pytest.mark.parametrize("model", [Model.TC, Model.GD])
@pytest.mark.parametrize("target", [Target.OMEGA, Target.LAMBDA])
def test_no_click_derivative_matches_central_difference(model, target):
    space = CompositeSpace(3, 4)
    p = ModelParams(model, omega=0.8, delta_spin=0.2, delta_boson=0.5, lam=0.6)
    dt, h = 0.05, 1e-5
    eta = p.value_of(target)
    Kp = kraus_counting(space, p.with_param(target, eta + h), dt).K0
    Km = kraus_counting(space, p.with_param(target, eta - h), dt).K0
    assert max_abs((Kp - Km) / (2 * h) - build_dK(space, p, target, "K0", dt)) < 1e-8


def test_homodyne_derivative_matches_central_difference():
    space = CompositeSpace(3, 4)
    p = ModelParams(Model.GD, omega=0.8, delta_boson=0.5, lam=0.6, phi_lo=np.pi / 2)
    dt, h, J = 1e-2, 1e-4, 3.7
    for target in Target:
        eta = p.value_of(target)
        fd = (kraus_homodyne(space, p.with_param(target, eta + h), J, dt) - kraus_homodyne(space, p.with_param(target, eta - h), J, dt)) / (2 * h)
        assert max_abs(fd - build_dK(space, p, target, "K_J", dt, J)) < 1e-10


def test_frechet_block_exponential_matches_scipy(rng):
    A = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    E = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    expA, dexp = frechet_expm(0.3 * A, 0.3 * E)
    ref_exp, ref_d = sla.expm_frechet(0.3 * A, 0.3 * E)
    assert np.allclose(expA, ref_exp, atol=1e-12)
    assert np.allclose(dexp, ref_d, atol=1e-12)


def test_unknown_kraus_name():
    with pytest.raises(ValueError):
        build_dK(CompositeSpace(1, 1), ModelParams(), Target.OMEGA, "K2", 1e-3)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(Model.TC, kappa=0.0)
    with pytest.raises(ValueError):
        ModelParams(Model.BTC, gamma=-1.0)
    with pytest.raises(ValueError):
        ModelParams("XY")
    with pytest.raises(ValueError):
        ModelParams(Model.TC, omega=float("nan"))
    p = ModelParams("GD", omega=1, lam=2)
    assert p.model is Model.GD and p.with_param(Target.LAMBDA, 3.0).lam == 3.0
    assert p.to_dict()["model"] == "GD"


def test_builders_are_pure():
    space = CompositeSpace(3, 3)
    p = ModelParams(Model.GD, omega=0.5, lam=0.3, delta_boson=0.1)
    a, b = kraus_counting(space, p, 1e-2).K0, kraus_counting(space, p, 1e-2).K0
    assert np.array_equal(a, b)
