"""Plant description and steady-state quantities of a fixed-gain filter.

The filter under study is

    xhat_minus[t+1] = A xhat[t]
    delta[t+1]      = y[t+1] - C xhat_minus[t+1]
    xhat[t+1]       = xhat_minus[t+1] + L delta[t+1]

with error dynamics ``e[t+1] = F(L) e[t] + eta[t]`` where ``F(L) = (I - L C) A``.
All functions below are pure; a gain may be given as any array-like of shape
``(n, p)`` (a 1-D array is read as a column).
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InstabilityError, ValidationError
from .matrix_ops import (RANK_TOL, as_matrix, as_symmetric, lambda_min,
                         solve_dlyap, spectral_radius, sym_rank, sym_sqrt)

__all__ = [
    "SystemModel", "GainAnalysis", "AssumptionReport", "as_gain",
    "closed_loop", "predictor_closed_loop", "is_stabilizing",
    "effective_noise_cov", "error_cov", "apriori_cov", "innovation_cov",
    "innov_loss", "obs_gramian", "cross_cov", "innov_loss_gradient",
    "innov_loss_gradient_expanded", "loss_difference", "analyze",
    "predictor_error_cov", "pred_loss", "pred_obs_gramian",
    "pred_loss_lower_bound", "check_assumptions", "observability_matrix",
]

_PD_REL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Discrete LTI plant ``x+ = A x + w``, ``y = C x + v``.

    ``Q_w`` and ``R_v`` are the process and measurement noise covariances;
    both must be positive definite. Arrays are stored read-only.
    """

    A: np.ndarray
    C: np.ndarray
    Q_w: np.ndarray
    R_v: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        C = as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"dimension consistency: A must be square, got {A.shape}")
        if C.ndim == 2 and C.shape[1] != n and C.shape[0] == n and C.shape[1] == 1:
            # a bare vector for a single-output C
            C = C.T
        if C.shape[1] != n:
            raise DimensionError(f"dimension consistency: C must be p x {n}, got {C.shape}")
        p = C.shape[0]
        Q = as_symmetric(self.Q_w, "Q_w")
        R = as_symmetric(self.R_v, "R_v")
        if Q.shape != (n, n):
            raise DimensionError(f"dimension consistency: Q_w must be {n} x {n}, got {Q.shape}")
        if R.shape != (p, p):
            raise DimensionError(f"dimension consistency: R_v must be {p} x {p}, got {R.shape}")
        for name, S in (("Q_w", Q), ("R_v", R)):
            w = np.linalg.eigvalsh(S)
            if w[-1] <= 0 or w[0] <= _PD_REL * w[-1]:
                raise ValidationError(
                    f"{name} positive definite: lambda_min = {w[0]:.3g}, lambda_max = {w[-1]:.3g}")
        for name, val in (("A", A), ("C", C), ("Q_w", Q), ("R_v", R)):
            object.__setattr__(self, name, _frozen(val))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SystemModel):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("A", "C", "Q_w", "R_v"))

    __hash__ = None

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "C", "Q_w", "R_v")}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ValidationError("system JSON must be an object with keys A, C, Q_w, R_v")
        missing = [k for k in ("A", "C", "Q_w", "R_v") if k not in d]
        if missing:
            raise ValidationError(f"system JSON missing keys: {', '.join(missing)}")
        return cls(*(d[k] for k in ("A", "C", "Q_w", "R_v")))

    def to_json(self, **kw):
        # float repr is the shortest string that round-trips bit-exactly
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(d)


def as_gain(sys, L):
    """Validate a gain for `sys` and return it as an ``(n, p)`` array."""
    L = as_matrix(L, "L")
    if L.shape != (sys.n, sys.p):
        if L.T.shape == (sys.n, sys.p) and 1 in L.shape:
            L = L.T
        else:
            raise DimensionError(f"gain must be {sys.n} x {sys.p}, got {L.shape}")
    return L


def closed_loop(sys, L):
    """``F(L) = (I - L C) A``."""
    L = as_gain(sys, L)
    return (np.eye(sys.n) - L @ sys.C) @ sys.A


def predictor_closed_loop(sys, L):
    """``A - L C``, the error transition of the one-step predictor."""
    L = as_gain(sys, L)
    return sys.A - L @ sys.C


def is_stabilizing(sys, L, form="filter", margin=0.0):
    if form == "filter":
        M = closed_loop(sys, L)
    elif form == "predictor":
        M = predictor_closed_loop(sys, L)
    else:
        raise ValueError(f"unknown form {form!r}")
    return spectral_radius(M) < 1.0 - margin


def _stable_closed_loop(sys, L, margin=0.0):
    F = closed_loop(sys, L)
    rho = spectral_radius(F)
    if rho >= 1.0 - margin:
        raise InstabilityError(f"not stabilizing: rho(F(L)) = {rho:.6g}", rho)
    return F


def effective_noise_cov(sys, L):
    """``Q_eta(L) = (I - L C) Q_w (I - L C)^T + L R_v L^T``; positive definite for every L."""
    L = as_gain(sys, L)
    G = np.eye(sys.n) - L @ sys.C
    Q = G @ sys.Q_w @ G.T + L @ sys.R_v @ L.T
    return 0.5 * (Q + Q.T)


def error_cov(sys, L):
    """Steady-state a posteriori error covariance P(L)."""
    L = as_gain(sys, L)
    F = _stable_closed_loop(sys, L)
    return solve_dlyap(F, effective_noise_cov(sys, L))


def apriori_cov(sys, L):
    """Steady-state a priori error covariance ``A P(L) A^T + Q_w``."""
    P = error_cov(sys, L)
    Pm = sys.A @ P @ sys.A.T + sys.Q_w
    return 0.5 * (Pm + Pm.T)


def innovation_cov(sys, L):
    """Steady-state innovation covariance ``C P^-(L) C^T + R_v``."""
    S = sys.C @ apriori_cov(sys, L) @ sys.C.T + sys.R_v
    return 0.5 * (S + S.T)


def _loss_from_P(sys, P):
    CA = sys.C @ sys.A
    return float(np.trace(CA @ P @ CA.T) + np.trace(sys.C @ sys.Q_w @ sys.C.T)
                 + np.trace(sys.R_v))


def innov_loss(sys, L):
    """Innovations loss ``J(L) = Tr(Sigma_delta(L))``."""
    L = as_gain(sys, L)
    return _loss_from_P(sys, error_cov(sys, L))


def obs_gramian(sys, L):
    """Observability Gramian of ``(F(L), C A)``: ``W = F^T W F + A^T C^T C A``."""
    L = as_gain(sys, L)
    F = _stable_closed_loop(sys, L)
    CA = sys.C @ sys.A
    return solve_dlyap(F.T, CA.T @ CA)


def _cross_cov(sys, L, F, P):
    G = np.eye(sys.n) - L @ sys.C
    return F @ P @ sys.A.T @ sys.C.T + G @ sys.Q_w @ sys.C.T - L @ sys.R_v


def cross_cov(sys, L):
    """Steady-state cross-covariance ``K(L) = E[e delta^T]`` between error and innovation."""
    L = as_gain(sys, L)
    F = _stable_closed_loop(sys, L)
    P = solve_dlyap(F, effective_noise_cov(sys, L))
    return _cross_cov(sys, L, F, P)


def innov_loss_gradient(sys, L):
    """Gradient of the innovations loss, ``-2 W_o(L) K(L)``."""
    return analyze(sys, L).grad


def innov_loss_gradient_expanded(sys, L):
    """Gradient assembled from the row form of the differential of J.

    Computes ``[-2 C A P F^T W - 2 C Q_w (I - L C)^T W + 2 R_v L^T W]^T``
    directly, without forming K(L). Kept as a second code path for the
    factored gradient.
    """
    L = as_gain(sys, L)
    F = _stable_closed_loop(sys, L)
    P = solve_dlyap(F, effective_noise_cov(sys, L))
    CA = sys.C @ sys.A
    W = solve_dlyap(F.T, CA.T @ CA)
    G = np.eye(sys.n) - L @ sys.C
    row = (-2.0 * CA @ P @ F.T @ W - 2.0 * sys.C @ sys.Q_w @ G.T @ W
           + 2.0 * sys.R_v @ L.T @ W)
    return row.T


@dataclass(frozen=True, eq=False)
class GainAnalysis:
    """All steady-state quantities of the filter at one stabilizing gain."""

    L: np.ndarray
    F: np.ndarray
    rho_F: float
    Q_eta: np.ndarray
    P: np.ndarray
    P_minus: np.ndarray
    Sigma_delta: np.ndarray
    W_o: np.ndarray
    K: np.ndarray
    J_innov: float
    grad: np.ndarray
    lambda_min_Wo: float = field(default=np.nan)

    @property
    def grad_norm(self):
        return float(np.linalg.norm(self.grad))

    @property
    def K_norm(self):
        return float(np.linalg.norm(self.K))

    def to_dict(self):
        out = {}
        for k in ("L", "F", "Q_eta", "P", "P_minus", "Sigma_delta", "W_o", "K", "grad"):
            out[k] = getattr(self, k).tolist()
        out.update(rho_F=self.rho_F, J_innov=self.J_innov,
                   lambda_min_Wo=self.lambda_min_Wo, grad_norm=self.grad_norm,
                   K_norm=self.K_norm)
        return out


def analyze(sys, L, margin=0.0):
    """Compute every steady-state quantity at `L` with two Lyapunov solves.

    Raises :class:`InstabilityError` unless ``rho(F(L)) < 1 - margin``.
    """
    L = as_gain(sys, L)
    F = closed_loop(sys, L)
    rho = spectral_radius(F)
    if rho >= 1.0 - margin:
        raise InstabilityError(f"not stabilizing: rho(F(L)) = {rho:.6g}", rho)
    Q_eta = effective_noise_cov(sys, L)
    P = solve_dlyap(F, Q_eta, rho=rho)
    Pm = sys.A @ P @ sys.A.T + sys.Q_w
    Pm = 0.5 * (Pm + Pm.T)
    Sd = sys.C @ Pm @ sys.C.T + sys.R_v
    Sd = 0.5 * (Sd + Sd.T)
    CA = sys.C @ sys.A
    W = solve_dlyap(F.T, CA.T @ CA, rho=rho)
    K = _cross_cov(sys, L, F, P)
    return GainAnalysis(
        L=L, F=F, rho_F=rho, Q_eta=Q_eta, P=P, P_minus=Pm, Sigma_delta=Sd,
        W_o=W, K=K, J_innov=_loss_from_P(sys, P), grad=-2.0 * W @ K,
        lambda_min_Wo=lambda_min(W))


def loss_difference(sys, L_from, L_to, base=None):
    """``J(L_to) - J(L_from)`` without subtracting two large numbers.

    With ``D = L_to - L_from``, ``Sigma`` and ``K`` taken at `L_from`, the
    a priori covariances differ by the solution ``X`` of

        X = M X M^T + A (D Sigma D^T - D K^T - K D^T) A^T,  M = A (I - L_to C)

    and the loss difference is ``Tr(C X C^T)``. The result is accurate
    relative to its own size, so it stays meaningful when the two losses
    agree to machine precision. `base` may carry a precomputed
    :class:`GainAnalysis` at `L_from`.
    """
    L_from = as_gain(sys, L_from)
    L_to = as_gain(sys, L_to)
    if base is None:
        base = analyze(sys, L_from)
    _stable_closed_loop(sys, L_to)
    M = sys.A @ (np.eye(sys.n) - L_to @ sys.C)
    D = L_to - L_from
    DK = D @ base.K.T
    S = sys.A @ (D @ base.Sigma_delta @ D.T - DK - DK.T) @ sys.A.T
    X = solve_dlyap(M, 0.5 * (S + S.T))
    return float(np.trace(sys.C @ X @ sys.C.T))


def predictor_error_cov(sys, L):
    """Error covariance of the one-step predictor, ``P~ = M P~ M^T + Q_w + L R_v L^T`` with ``M = A - L C``."""
    L = as_gain(sys, L)
    M = predictor_closed_loop(sys, L)
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise InstabilityError(f"not stabilizing: rho(A - L C) = {rho:.6g}", rho)
    S = sys.Q_w + L @ sys.R_v @ L.T
    return solve_dlyap(M, 0.5 * (S + S.T))


def pred_loss(sys, L):
    """Innovations loss of the one-step predictor, ``Tr(C P~ C^T + R_v)``."""
    P = predictor_error_cov(sys, L)
    return float(np.trace(sys.C @ P @ sys.C.T) + np.trace(sys.R_v))


def pred_obs_gramian(sys, L):
    """Observability Gramian ``X_o`` of ``(A - L C, C)``."""
    L = as_gain(sys, L)
    M = predictor_closed_loop(sys, L)
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise InstabilityError(f"not stabilizing: rho(A - L C) = {rho:.6g}", rho)
    return solve_dlyap(M.T, sys.C.T @ sys.C)


def pred_loss_lower_bound(sys, L):
    """``lambda_min(Q_w + L R_v L^T) * Tr(X_o(L))``, a lower bound on the predictor loss."""
    L = as_gain(sys, L)
    S = sys.Q_w + L @ sys.R_v @ L.T
    return lambda_min(0.5 * (S + S.T)) * float(np.trace(pred_obs_gramian(sys, L)))


def observability_matrix(A, C):
    """Stack ``[C; C A; ...; C A^{n-1}]``."""
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def _complex_rank(M, tol):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class AssumptionReport:
    n: int
    rank_obs_CA: int
    observable_CA: bool
    rank_obs_C: int
    observable_C: bool
    stabilizable: bool
    A_invertible: bool

    def lines(self):
        return [
            f"(A, CA) observability rank {self.rank_obs_CA}/{self.n}: "
            f"{'observable' if self.observable_CA else 'NOT observable'}",
            f"(A, C)  observability rank {self.rank_obs_C}/{self.n}: "
            f"{'observable' if self.observable_C else 'NOT observable'}",
            f"(A, Q_w^1/2) stabilizable: {self.stabilizable}",
            f"A invertible: {self.A_invertible}",
        ]


def check_assumptions(sys, tol=RANK_TOL):
    """Observability of (A, CA) and (A, C), stabilizability of (A, Q_w^1/2), invertibility of A.

    Ranks use singular values relative to the largest with threshold `tol`;
    the stabilizability PBH test is applied to every eigenvalue of A with
    modulus at least ``1 - tol``.
    """
    A, C, n = sys.A, sys.C, sys.n
    r_ca = sym_rank(observability_matrix(A, C @ A), tol)
    r_c = sym_rank(observability_matrix(A, C), tol)
    Qh = sym_sqrt(sys.Q_w)
    stab = True
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - tol:
            pbh = np.hstack([A - lam * np.eye(n), Qh.astype(complex)])
            if _complex_rank(pbh, tol) < n:
                stab = False
    return AssumptionReport(
        n=n, rank_obs_CA=r_ca, observable_CA=r_ca == n, rank_obs_C=r_c,
        observable_C=r_c == n, stabilizable=stab,
        A_invertible=sym_rank(A, tol) == n)
