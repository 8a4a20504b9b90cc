import json

import numpy as np
import pytest

from innovgrad.errors import DomainError, ValidationError
from innovgrad.matrix_ops import solve_dare_predictive
from innovgrad.model import SystemModel, analyze, innov_loss_gradient
from innovgrad.montecarlo import SimConfig, default_burn_in, fd_gradient, simulate
from innovgrad.systems import nilpotent_example, random_system


def test_burn_in_default():
    assert default_burn_in(10_000) == 1000
    assert default_burn_in(1_000_000) == 10_000
    assert SimConfig(horizon=500).burn_in == 1000


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(burn_in=-1), dict(seed=-1)])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        SimConfig(**kw)


def test_deterministic_per_seed():
    s = nilpotent_example()
    a = simulate(s, [0.0, 0.5], SimConfig(horizon=20_000, seed=7))
    b = simulate(s, [0.0, 0.5], SimConfig(horizon=20_000, seed=7))
    c = simulate(s, [0.0, 0.5], SimConfig(horizon=20_000, seed=8))
    assert a.to_json() == b.to_json()
    assert a.J_hat != c.J_hat


def test_symmetric_outputs_and_counts():
    e = simulate(nilpotent_example(), [0.1, 0.2], SimConfig(horizon=5000))
    assert np.array_equal(e.Sigma_delta_hat, e.Sigma_delta_hat.T)
    assert np.array_equal(e.P_hat, e.P_hat.T)
    assert e.n_samples == 5000
    d = json.loads(e.to_json())
    assert d["seed"] == 0 and d["horizon"] == 5000 and len(d["K_hat"]) == 2


def test_trivial_scalar_loss():
    # A = 0 makes the innovation w + v regardless of the gain
    s = SystemModel(A=[[0.0]], C=[[1.0]], Q_w=[[1.0]], R_v=[[1.0]])
    e = simulate(s, [[0.4]], SimConfig(horizon=1_000_000, seed=3))
    assert abs(e.J_hat - 2.0) <= 3 * e.stderr_J


def test_orthogonality_at_kalman_gain():
    s = random_system(np.random.default_rng(11), 2, 1)
    _, L = solve_dare_predictive(s.A, s.C, s.Q_w, s.R_v)
    e = simulate(s, L, SimConfig(horizon=1_000_000, seed=5))
    assert np.linalg.norm(e.K_hat) <= 5 * np.linalg.norm(e.stderr_K)


def test_error_shrinks_with_horizon():
    s = nilpotent_example()
    L = [0.0, 0.5]
    J = analyze(s, L).J_innov
    med = []
    for h in (10_000, 100_000):
        med.append(np.median([abs(simulate(s, L, SimConfig(horizon=h, seed=k)).J_hat - J)
                              for k in range(20)]))
    ratio = med[0] / med[1]
    assert np.sqrt(10) / 3 <= ratio <= 3 * np.sqrt(10)


def test_unstable_gain():
    with pytest.raises(DomainError):
        simulate(nilpotent_example(), [0.0, 1.0])


class TestFdGradient:
    def test_example(self):
        g = fd_gradient(nilpotent_example(), [0.0, 0.5], 1e-5)
        assert g[0, 0] == 0.0
        assert g[1, 0] == pytest.approx(16 / 3, rel=1e-5)

    def test_vanishes_at_kalman_gain(self, rng):
        s = random_system(rng, 3, 2)
        _, L = solve_dare_predictive(s.A, s.C, s.Q_w, s.R_v)
        # the residual is the h^2 truncation term, which scales with the loss
        J = analyze(s, L).J_innov
        assert np.linalg.norm(fd_gradient(s, L)) <= 1e-7 * J
        assert np.linalg.norm(fd_gradient(s, L, h=1e-6)) <= 1e-7

    def test_step_too_large(self):
        with pytest.raises(DomainError, match="smaller h"):
            fd_gradient(nilpotent_example(), [0.0, 0.99], h=0.1)

    def test_matches_analytic(self, rng):
        s = random_system(rng, 4, 2)
        L = np.zeros((4, 2))
        g = innov_loss_gradient(s, L)
        assert np.max(np.abs(fd_gradient(s, L) - g)) <= 1e-5 * np.linalg.norm(g)
