"""Built-in and randomly generated test plants."""
import numpy as np

from .matrix_ops import solve_dare_predictive, spectral_radius
from .model import (SystemModel, check_assumptions, closed_loop,
                    observability_matrix)

__all__ = ["nilpotent_example", "example_loss", "example_gradient", "random_system",
           "random_stabilizing_gain", "BUILTIN_SYSTEMS"]


def nilpotent_example():
    """Nilpotent two-state plant for which (A, C) is observable but (A, CA) is not.

    Every gain ``(l1, 0)`` is a stationary point of the innovations loss, and
    ``J(l1, l2) = (1 + 2 l2^2) / (1 - l2^2) + 2`` on ``|l2| < 1``.
    """
    return SystemModel(A=[[0.0, 1.0], [0.0, 0.0]], C=[[1.0, 0.0]],
                       Q_w=np.eye(2), R_v=[[1.0]])


def example_loss(l2):
    """Closed-form loss of :func:`nilpotent_example` (independent of l1)."""
    return (1.0 + 2.0 * l2 ** 2) / (1.0 - l2 ** 2) + 2.0


def example_gradient(l2):
    """Closed-form gradient of :func:`nilpotent_example`, as an ``(2, 1)`` array."""
    return np.array([[0.0], [6.0 * l2 / (1.0 - l2 ** 2) ** 2]])


BUILTIN_SYSTEMS = {"paper-example": nilpotent_example}


def _random_spd(rng, k, floor):
    B = rng.standard_normal((k, k))
    return B @ B.T / k + floor * np.eye(k)


def random_system(rng, n, p, rho_range=(0.3, 0.9), require_CA_observable=True,
                  min_obs_ratio=0.05, max_tries=10_000):
    """Draw a random plant with ``rho(A)`` uniform in `rho_range`.

    With `require_CA_observable` the draw is repeated until the observability
    matrix of (A, CA) has singular-value ratio ``sigma_min / sigma_max`` of at
    least `min_obs_ratio` and A is comfortably invertible (smallest singular
    value of ``A / rho(A)`` at least 0.05). The ratio tracks the conditioning
    of the loss Hessian at the Kalman gain closely, so this keeps descent
    tests well posed. Otherwise only (A, C) observability is enforced.
    """
    for _ in range(max_tries):
        A = rng.standard_normal((n, n))
        rho = spectral_radius(A)
        if rho == 0:
            continue
        A *= rng.uniform(*rho_range) / rho
        C = rng.standard_normal((p, n))
        sys = SystemModel(A=A, C=C, Q_w=_random_spd(rng, n, 0.2),
                          R_v=_random_spd(rng, p, 0.2))
        rep = check_assumptions(sys)
        if require_CA_observable:
            smin = np.linalg.svd(A, compute_uv=False)[-1] / spectral_radius(A)
            so = np.linalg.svd(observability_matrix(A, C @ A), compute_uv=False)
            if rep.observable_CA and smin >= 0.05 and so[-1] >= min_obs_ratio * so[0]:
                return sys
        elif rep.observable_C:
            return sys
    raise RuntimeError("could not draw a system with the requested properties")


def random_stabilizing_gain(sys, rng, scale=0.5, max_rho=0.95):
    """A random gain near the Kalman gain with ``rho(F(L)) < max_rho``.

    The perturbation ``scale * N(0, 1)`` (relative to ``1 + ||L_KF||_F``) is
    halved until the closed loop meets `max_rho`.
    """
    _, L_kf = solve_dare_predictive(sys.A, sys.C, sys.Q_w, sys.R_v)
    G = rng.standard_normal(L_kf.shape)
    G /= np.linalg.norm(G)
    s = scale * (1.0 + np.linalg.norm(L_kf))
    for _ in range(60):
        L = L_kf + s * G
        if spectral_radius(closed_loop(sys, L)) < max_rho:
            return L
        s *= 0.5
    return L_kf.copy()
