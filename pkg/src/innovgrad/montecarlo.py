"""Simulation of plant and filter, and a finite-difference gradient oracle.

The simulator runs the actual recursions for ``x``, ``y`` and ``xhat`` with
Gaussian noise and averages outer products after a burn-in period. Noise is
drawn from a Philox (counter-based) generator keyed by the seed, so a run is
reproducible bit for bit.
"""
import json
import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .errors import DomainError, ValidationError
from .matrix_ops import spectral_radius, sym_sqrt
from .model import as_gain, closed_loop, innov_loss

__all__ = ["SimConfig", "MonteCarloEstimate", "simulate", "fd_gradient",
           "default_burn_in"]


def default_burn_in(horizon):
    return max(1000, horizon // 100)


@dataclass
class SimConfig:
    horizon: int = 100_000
    burn_in: Optional[int] = None
    seed: int = 0
    x0: Optional[np.ndarray] = None
    xhat0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.burn_in is None:
            self.burn_in = default_burn_in(self.horizon)
        if self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class MonteCarloEstimate:
    Sigma_delta_hat: np.ndarray
    K_hat: np.ndarray
    P_hat: np.ndarray
    J_hat: float
    n_samples: int
    stderr_J: float
    #: naive i.i.d. standard error of each entry of K_hat
    stderr_K: np.ndarray
    seed: int
    horizon: int
    burn_in: int

    def to_dict(self):
        return {
            "Sigma_delta_hat": self.Sigma_delta_hat.tolist(),
            "K_hat": self.K_hat.tolist(),
            "P_hat": self.P_hat.tolist(),
            "J_hat": self.J_hat,
            "n_samples": self.n_samples,
            "stderr_J": self.stderr_J,
            "stderr_K": self.stderr_K.tolist(),
            "seed": self.seed,
            "horizon": self.horizon,
            "burn_in": self.burn_in,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


@numba.njit(cache=True)
def _run(A, C, L, W, V, x0, xh0, burn_in):
    # W[t] is w_t, V[t] is v_{t+1}
    n = A.shape[0]
    p = C.shape[0]
    T = W.shape[0]
    x = x0.copy()
    xh = xh0.copy()
    xn = np.empty(n)
    xm = np.empty(n)
    d = np.empty(p)
    e = np.empty(n)
    S_dd = np.zeros((p, p))
    S_ed = np.zeros((n, p))
    S_ed2 = np.zeros((n, p))
    S_ee = np.zeros((n, n))
    s_j = 0.0
    s_j2 = 0.0
    for t in range(T):
        for i in range(n):
            acc = W[t, i]
            accm = 0.0
            for k in range(n):
                acc += A[i, k] * x[k]
                accm += A[i, k] * xh[k]
            xn[i] = acc
            xm[i] = accm
        for i in range(p):
            acc = V[t, i]
            for k in range(n):
                acc += C[i, k] * (xn[k] - xm[k])
            d[i] = acc
        for i in range(n):
            acc = xm[i]
            for k in range(p):
                acc += L[i, k] * d[k]
            xh[i] = acc
            x[i] = xn[i]
            e[i] = x[i] - xh[i]
        if t >= burn_in:
            q = 0.0
            for i in range(p):
                q += d[i] * d[i]
                for k in range(p):
                    S_dd[i, k] += d[i] * d[k]
            s_j += q
            s_j2 += q * q
            for i in range(n):
                for k in range(p):
                    v = e[i] * d[k]
                    S_ed[i, k] += v
                    S_ed2[i, k] += v * v
                for k in range(n):
                    S_ee[i, k] += e[i] * e[k]
    return S_dd, S_ed, S_ed2, S_ee, s_j, s_j2


def simulate(sys, L, cfg=None):
    """Time averages of innovation and error statistics along one long run.

    Returns a :class:`MonteCarloEstimate` with ``Sigma_delta_hat = mean delta
    delta^T``, ``K_hat = mean e delta^T``, ``P_hat = mean e e^T`` and
    ``J_hat = mean ||delta||^2`` over ``cfg.horizon`` steps after burn-in.
    ``stderr_J`` uses the i.i.d. formula and is optimistic under serial
    correlation.
    """
    cfg = cfg or SimConfig()
    L = as_gain(sys, L)
    rho = spectral_radius(closed_loop(sys, L))
    if rho >= 1.0:
        raise DomainError(f"not stabilizing: rho(F(L)) = {rho:.6g}")
    n, p = sys.n, sys.p
    x0 = np.zeros(n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).ravel()
    xh0 = np.zeros(n) if cfg.xhat0 is None else np.asarray(cfg.xhat0, dtype=float).ravel()
    if x0.shape != (n,) or xh0.shape != (n,):
        raise ValidationError(f"x0 and xhat0 must have length {n}")
    T = cfg.horizon + cfg.burn_in
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    W = rng.standard_normal((T, n)) @ sym_sqrt(sys.Q_w)
    V = rng.standard_normal((T, p)) @ sym_sqrt(sys.R_v)
    S_dd, S_ed, S_ed2, S_ee, s_j, s_j2 = _run(
        np.ascontiguousarray(sys.A), np.ascontiguousarray(sys.C),
        np.ascontiguousarray(L), W, V, x0, xh0, cfg.burn_in)
    N = cfg.horizon
    Sd = S_dd / N
    P = S_ee / N
    K = S_ed / N
    J = s_j / N
    var_J = max(s_j2 / N - J * J, 0.0)
    var_K = np.clip(S_ed2 / N - K * K, 0.0, None)
    return MonteCarloEstimate(
        Sigma_delta_hat=0.5 * (Sd + Sd.T), K_hat=K, P_hat=0.5 * (P + P.T),
        J_hat=float(J), n_samples=N, stderr_J=math.sqrt(var_J / N),
        stderr_K=np.sqrt(var_K / N), seed=cfg.seed, horizon=N, burn_in=cfg.burn_in)


def fd_gradient(sys, L, h=1e-5):
    """Central finite differences of the analytic innovations loss, entry by entry."""
    L = as_gain(sys, L)
    G = np.zeros_like(L)
    for i in range(L.shape[0]):
        for j in range(L.shape[1]):
            E = np.zeros_like(L)
            E[i, j] = h
            for Lp in (L + E, L - E):
                if spectral_radius(closed_loop(sys, Lp)) >= 1.0 - 1e-9:
                    raise DomainError(
                        f"perturbed gain leaves the stabilizing set at entry ({i}, {j}); "
                        f"try a smaller h than {h:g}")
            G[i, j] = (innov_loss(sys, L + E) - innov_loss(sys, L - E)) / (2.0 * h)
    return G
