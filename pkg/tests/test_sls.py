import numpy as np
import pytest

from helpers import random_achievable_response, scale_pair, scaled_ltv
from robust_sls.operators import (
    FirResponse,
    LtvOperator,
    feedback_inverse,
    fir_apply,
    fir_l1_norm,
    lift_fir,
    ltv_apply,
    ltv_induced_norm,
)
from robust_sls.sls import (
    Plant,
    SystemResponse,
    UncertainPlant,
    achievability_residual,
    closed_loop_map,
    delta_hat,
    operator_achievability_residual,
    predicted_response,
    realize_controller,
    simulate_closed_loop,
)


# achievability_residual ------------------------------------------------------

def test_deadbeat_residual_is_zero(deadbeat_scalar):
    plant, resp = deadbeat_scalar
    np.testing.assert_array_equal(achievability_residual(plant, resp).taps, 0.0)


def test_open_loop_deadbeat_residual_is_zero():
    plant = Plant(np.zeros((2, 2)), np.eye(2))
    resp = SystemResponse.from_taps([np.eye(2)], [np.zeros((2, 2))])
    np.testing.assert_array_equal(achievability_residual(plant, resp).taps, 0.0)


def test_residual_of_perturbed_deadbeat(deadbeat_scalar):
    plant, _ = deadbeat_scalar
    resp = SystemResponse.from_taps([[[1.0]], [[0.0]]], [[[-1.9]], [[0.0]]])
    np.testing.assert_allclose(achievability_residual(plant, resp).taps.ravel(), [0.1, 0.0])


def test_response_requires_identity_first_tap():
    with pytest.raises(ValueError):
        SystemResponse.from_taps([[[0.9]]], [[[0.0]]])


def test_residual_dimension_mismatch(deadbeat_scalar):
    _, resp = deadbeat_scalar
    with pytest.raises(ValueError):
        achievability_residual(Plant(np.eye(2), np.eye(2)), resp)


def test_operator_residual_for_lti_plant():
    rng = np.random.default_rng(0)
    plant, resp = random_achievable_response(rng, 2, 3, 4)
    N = 9
    res = operator_achievability_residual(
        LtvOperator.static(plant.A, N),
        LtvOperator.static(plant.B, N),
        lift_fir(resp.phi_x, N),
        lift_fir(resp.phi_u, N),
    )
    assert np.abs(res.matrix).max() < 1e-12


def test_operator_residual_for_ltv_plant_and_controller():
    # Responses induced by an arbitrary causal LTV feedback satisfy the
    # operator constraints, with identity blocks on the first subdiagonal.
    rng = np.random.default_rng(1)
    n, p, N = 2, 1, 7
    A = LtvOperator.memoryless([rng.normal(size=(n, n)) for _ in range(N)])
    B = LtvOperator.memoryless([rng.normal(size=(n, p)) for _ in range(N)])
    K = scaled_ltv(rng, p, n, N)
    shift = LtvOperator.shift(n, N)
    closed = feedback_inverse(shift @ (A + B @ K))
    phi_x = closed @ shift
    phi_u = K @ phi_x
    res = operator_achievability_residual(A, B, phi_x, phi_u)
    assert np.abs(res.matrix).max() < 1e-10
    for i in range(1, N):
        np.testing.assert_allclose(phi_x.block(i, i - 1), np.eye(n), atol=1e-12)


# realization -----------------------------------------------------------------

def test_deadbeat_hand_simulation(deadbeat_scalar):
    plant, resp = deadbeat_scalar
    w = np.zeros((6, 1))
    w[0] = 1.0
    x, u, w_hat = simulate_closed_loop(plant, resp, w)
    np.testing.assert_array_equal(w_hat.ravel(), [0, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(u.ravel(), [0, -2, 0, 0, 0, 0])
    np.testing.assert_array_equal(x.ravel(), [0, 1, 0, 0, 0, 0])


def test_zero_input_keeps_controller_at_rest(deadbeat_scalar):
    _, resp = deadbeat_scalar
    ctrl = realize_controller(resp)
    for _ in range(10):
        assert ctrl.step([0.0]) == pytest.approx([0.0])
        assert ctrl.last_w_hat == pytest.approx([0.0])
    assert ctrl.buffer.shape == (resp.length, 1)


def test_zero_disturbance_gives_zero_traces():
    rng = np.random.default_rng(2)
    plant, resp = random_achievable_response(rng, 3, 3, 5)
    for trace in simulate_closed_loop(plant, resp, np.zeros((20, 3))):
        assert not trace.any()


@pytest.mark.parametrize("seed", range(5))
def test_nominal_simulation_matches_fir(seed):
    rng = np.random.default_rng(seed)
    plant, resp = random_achievable_response(rng, 3, 4, 6)
    w = rng.normal(size=(30, 3))
    x, u, _ = simulate_closed_loop(plant, resp, w)
    np.testing.assert_allclose(x, fir_apply(resp.phi_x, w), atol=1e-9)
    np.testing.assert_allclose(u, fir_apply(resp.phi_u, w), atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_closed_loop_map_matches_simulation(seed):
    rng = np.random.default_rng(seed)
    plant, resp = random_achievable_response(rng, 2, 3, 4)
    N = 15
    w, dy, du = rng.normal(size=(N, 2)), rng.normal(size=(N, 2)), rng.normal(size=(N, 3))
    x, u, w_hat = simulate_closed_loop(plant, resp, w, dy, du)
    maps = closed_loop_map(plant, resp, N)
    for row, trace in zip(maps, (x, u, w_hat)):
        predicted = sum(ltv_apply(op, sig) for op, sig in zip(row, (w, dy, du)))
        np.testing.assert_allclose(trace, predicted, atol=1e-9)


def test_traces_bounded_by_closed_loop_norms():
    rng = np.random.default_rng(7)
    plant, resp = random_achievable_response(rng, 2, 2, 4)
    N = 25
    maps = closed_loop_map(plant, resp, N)
    for _ in range(20):
        w, dy, du = (rng.uniform(-1, 1, size=(N, d)) for d in (2, 2, 2))
        traces = simulate_closed_loop(plant, resp, w, dy, du)
        for row, trace in zip(maps, traces):
            bound = sum(ltv_induced_norm(op) * np.abs(s).max() for op, s in zip(row, (w, dy, du)))
            assert np.abs(trace).max() <= bound + 1e-9


# delta_hat / robust response ---------------------------------------------------

def test_delta_hat_zero_without_perturbation(deadbeat_scalar):
    plant, resp = deadbeat_scalar
    d = delta_hat(UncertainPlant.nominal_only(plant, 6), resp, 6)
    assert d.strictly_causal
    assert not d.matrix.any()


def test_delta_hat_for_static_scalar_perturbation(deadbeat_scalar):
    plant, resp = deadbeat_scalar
    delta, N = 0.3, 6
    uplant = UncertainPlant(plant, LtvOperator.static([[delta]], N), None, epsilon=delta)
    d = delta_hat(uplant, resp, N)
    expected = delta * lift_fir(resp.phi_x, N).matrix
    np.testing.assert_allclose(d.matrix, expected)
    # phi_x[1] = 1 lands on the first subdiagonal
    np.testing.assert_allclose(np.diag(d.matrix, k=-1), delta)


@pytest.mark.parametrize("seed", range(10))
def test_delta_hat_norm_bound(seed):
    rng = np.random.default_rng(seed)
    plant, resp = random_achievable_response(rng, 2, 3, 3)
    N, eps = 10, 0.2
    da, db = scale_pair(scaled_ltv(rng, 2, 2, N), scaled_ltv(rng, 2, 3, N), eps)
    d = delta_hat(UncertainPlant(plant, da, db, eps), resp, N)
    assert ltv_induced_norm(d) <= eps * fir_l1_norm(resp.stacked) + 1e-12


def test_uncertain_plant_rejects_oversized_perturbation(deadbeat_scalar):
    plant, _ = deadbeat_scalar
    with pytest.raises(ValueError):
        UncertainPlant(plant, LtvOperator.static([[0.5]], 4), None, epsilon=0.4)


def test_predicted_response_without_perturbation(deadbeat_scalar):
    plant, resp = deadbeat_scalar
    rng = np.random.default_rng(0)
    w = rng.normal(size=(8, 1))
    x, u = predicted_response(UncertainPlant.nominal_only(plant, 8), resp, w)
    np.testing.assert_allclose(x, fir_apply(resp.phi_x, w), atol=1e-12)
    np.testing.assert_allclose(u, fir_apply(resp.phi_u, w), atol=1e-12)


def test_predicted_impulse_response_reads_taps():
    rng = np.random.default_rng(3)
    plant, resp = random_achievable_response(rng, 2, 2, 4)
    w = np.zeros((8, 2))
    w[0, 1] = 1.0
    x, _ = predicted_response(UncertainPlant.nominal_only(plant, 8), resp, w)
    np.testing.assert_allclose(x[1:5], resp.phi_x.taps[:, :, 1], atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_robust_response_identity(seed):
    rng = np.random.default_rng(seed)
    plant, resp = random_achievable_response(rng, 2, 2, 4)
    N = 20
    eps = 0.9 / fir_l1_norm(resp.stacked)
    da, db = scale_pair(scaled_ltv(rng, 2, 2, N, 3), scaled_ltv(rng, 2, 2, N, 3), eps)
    uplant = UncertainPlant(plant, da, db, eps)
    w = rng.normal(size=(N, 2))
    x, u, _ = simulate_closed_loop(uplant, resp, w)
    px, pu = predicted_response(uplant, resp, w)
    np.testing.assert_allclose(x, px, atol=1e-8)
    np.testing.assert_allclose(u, pu, atol=1e-8)


def test_simulation_rejects_short_perturbation(deadbeat_scalar):
    plant, resp = deadbeat_scalar
    uplant = UncertainPlant.nominal_only(plant, 4)
    with pytest.raises(ValueError):
        simulate_closed_loop(uplant, resp, np.zeros((6, 1)))


def test_static_perturbation_closed_form(deadbeat_scalar):
    # a = 2 + delta under u = -2 w_hat gives x_{t+1} = delta x_t + w_t.
    plant, resp = deadbeat_scalar
    delta, N = 0.4, 6
    uplant = UncertainPlant(plant, LtvOperator.static([[delta]], N), None, epsilon=delta)
    w = np.zeros((N, 1))
    w[0] = 1.0
    x, _, _ = simulate_closed_loop(uplant, resp, w)
    np.testing.assert_allclose(x.ravel(), [0, 1, delta, delta**2, delta**3, delta**4])
    px, _ = predicted_response(uplant, resp, w)
    np.testing.assert_allclose(px, x, atol=1e-14)
