import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from innovgrad.errors import DimensionError, DomainError, InstabilityError, ValidationError
from innovgrad.matrix_ops import solve_dare_predictive, spectral_radius
from innovgrad.model import (SystemModel, analyze, as_gain, check_assumptions, cross_cov,
                             innov_loss, innov_loss_gradient, innov_loss_gradient_expanded,
                             is_stabilizing, loss_difference, obs_gramian, pred_loss,
                             pred_loss_lower_bound)
from innovgrad.systems import example_gradient, example_loss, nilpotent_example, random_system, \
    random_stabilizing_gain

import oracles

seeds = st.integers(0, 2 ** 32 - 1)


def _draw(seed, n=None, p=None, observable_CA=False):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 5))
    p = p or int(rng.integers(1, 3))
    sys = random_system(rng, n, p, require_CA_observable=observable_CA)
    return sys, random_stabilizing_gain(sys, rng), rng


class TestSystemModel:
    def test_arrays_read_only(self):
        s = nilpotent_example()
        with pytest.raises(ValueError):
            s.A[0, 0] = 5.0

    def test_dimension_message(self):
        with pytest.raises(DimensionError, match="dimension"):
            SystemModel(A=np.eye(2), C=np.ones((1, 3)), Q_w=np.eye(2), R_v=[[1.0]])

    def test_singular_noise_rejected(self):
        with pytest.raises(ValidationError, match="positive definite"):
            SystemModel(A=np.eye(2) * 0.5, C=[[1.0, 0.0]], Q_w=np.diag([1.0, 0.0]), R_v=[[1.0]])

    def test_json_round_trip_is_exact(self, rng):
        s = random_system(rng, 3, 2)
        back = SystemModel.from_json(s.to_json())
        assert back == s

    def test_malformed_json_reports_position(self):
        with pytest.raises(ValidationError, match="line 1"):
            SystemModel.from_json('{"A": [[1]')

    def test_missing_key(self):
        with pytest.raises(ValidationError):
            SystemModel.from_json(json.dumps({"A": [[0.5]], "C": [[1.0]], "Q_w": [[1.0]]}))


class TestGainHandling:
    def test_vector_gain_for_single_output(self):
        s = nilpotent_example()
        assert as_gain(s, [0.1, 0.2]).shape == (2, 1)

    def test_wrong_shape(self):
        with pytest.raises(DimensionError):
            as_gain(nilpotent_example(), np.zeros((3, 1)))

    def test_unstable_gain_raises(self):
        with pytest.raises(InstabilityError, match="not stabilizing"):
            innov_loss(nilpotent_example(), [0.0, 1.5])
        assert not is_stabilizing(nilpotent_example(), [0.0, 1.0])
        assert issubclass(InstabilityError, ValidationError)


class TestExample:
    @pytest.mark.parametrize("l2", [0.0, 0.25, -0.5, 0.9])
    @pytest.mark.parametrize("l1", [-10.0, 3.0])
    def test_loss_and_gradient(self, l1, l2):
        a = analyze(nilpotent_example(), [l1, l2])
        assert a.J_innov == pytest.approx(example_loss(l2), abs=1e-12)
        assert np.allclose(a.grad, example_gradient(l2), atol=1e-10)
        assert a.grad[0, 0] == 0.0

    def test_key_values(self):
        assert innov_loss(nilpotent_example(), [0.0, 0.0]) == pytest.approx(3.0, abs=1e-14)
        assert innov_loss(nilpotent_example(), [0.0, 0.5]) == pytest.approx(4.0, abs=1e-14)

    def test_unobservable_direction(self):
        rep = check_assumptions(nilpotent_example())
        assert (rep.rank_obs_CA, rep.observable_CA, rep.observable_C) == (1, False, True)
        W = obs_gramian(nilpotent_example(), [0.3, 0.2])
        assert np.allclose(W[:, 0], 0.0)


class TestLossOracles:
    @given(seeds)
    def test_loss_matches_kron_solve(self, seed):
        s, L, _ = _draw(seed)
        ref = oracles.innov_loss_kron(s.A, s.C, s.Q_w, s.R_v, L)
        assert innov_loss(s, L) == pytest.approx(ref, rel=1e-10)

    @given(seeds)
    def test_gradient_matches_fd_of_independent_loss(self, seed):
        s, L, _ = _draw(seed)
        g = innov_loss_gradient(s, L)
        fd = oracles.fd_central(lambda M: oracles.innov_loss_kron(s.A, s.C, s.Q_w, s.R_v, M),
                                L, 1e-5)
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(np.linalg.norm(g), 1.0)

    @given(seeds)
    def test_expanded_and_factored_gradients_agree(self, seed):
        s, L, _ = _draw(seed)
        g1 = innov_loss_gradient(s, L)
        g2 = innov_loss_gradient_expanded(s, L)
        assert np.linalg.norm(g1 - g2) <= 1e-10 * (1 + np.linalg.norm(g1))

    @given(seeds)
    def test_loss_difference_matches_subtraction(self, seed):
        s, L, rng = _draw(seed)
        L2 = L + 1e-2 * rng.standard_normal(L.shape)
        if not is_stabilizing(s, L2):
            return
        d = loss_difference(s, L, L2)
        assert d == pytest.approx(innov_loss(s, L2) - innov_loss(s, L), rel=1e-6, abs=1e-12)


class TestInvariants:
    @given(seeds)
    def test_covariances_psd_and_loss_above_noise_floor(self, seed):
        s, L, _ = _draw(seed)
        a = analyze(s, L)
        for M in (a.P, a.P_minus, a.Sigma_delta, a.W_o):
            assert np.array_equal(M, M.T)
            assert np.linalg.eigvalsh(M)[0] >= -1e-10 * (1 + np.abs(M).max())
        assert a.J_innov >= np.trace(s.R_v) - 1e-12

    @given(seeds)
    def test_kalman_gain_is_global_minimum(self, seed):
        s, L, _ = _draw(seed, observable_CA=True)
        _, L_kf = solve_dare_predictive(s.A, s.C, s.Q_w, s.R_v)
        a = analyze(s, L_kf)
        assert a.K_norm <= 1e-8
        assert a.grad_norm <= 1e-8
        assert innov_loss(s, L) >= a.J_innov - 1e-12
        assert loss_difference(s, L_kf, L) >= 0.0

    @given(seeds)
    def test_predictor_identity(self, seed):
        s, L, _ = _draw(seed)
        AL = s.A @ L
        if not is_stabilizing(s, AL, form="predictor"):
            return
        assert innov_loss(s, L) == pytest.approx(pred_loss(s, AL), rel=1e-9)

    @given(seeds)
    def test_predictor_lower_bound(self, seed):
        s, L, _ = _draw(seed)
        AL = s.A @ L
        if not is_stabilizing(s, AL, form="predictor"):
            return
        assert pred_loss(s, AL) >= pred_loss_lower_bound(s, AL) - 1e-8

    def test_cross_cov_is_gradient_direction(self, rng):
        s, L, _ = _draw(7, 3, 2)
        a = analyze(s, L)
        assert np.allclose(a.K, cross_cov(s, L))
        assert np.allclose(a.grad, -2.0 * a.W_o @ a.K)

    def test_unstable_loss_difference_target(self):
        with pytest.raises(ValidationError):
            loss_difference(nilpotent_example(), [0.0, 0.0], [0.0, 2.0])


def test_domain_error_is_validation_error():
    assert issubclass(DomainError, ValidationError)
