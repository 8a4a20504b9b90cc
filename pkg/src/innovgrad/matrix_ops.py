"""Dense real matrix kernels.

Everything here works on plain ``numpy.ndarray`` values. The two constructors
:func:`as_matrix` and :func:`as_symmetric` enforce the finiteness and
symmetry invariants; the remaining functions assume validated input.
"""
import logging
import math

import numpy as np

from .errors import (ConsistencyError, DimensionError, InstabilityError,
                     NotPSDError, NumericalError, ValidationError)

logger = logging.getLogger(__name__)

__all__ = [
    "as_matrix", "as_symmetric", "spectral_radius", "solve_dlyap",
    "solve_dare_predictive", "riccati_residual", "lyapunov_residual",
    "sym_rank", "sym_pinv_sqrt", "sym_sqrt", "lambda_min",
]

#: default relative threshold for rank decisions
RANK_TOL = 1e-8

_LYAP_STABILITY_MARGIN = 1e-9


def as_matrix(x, name="matrix"):
    """Return `x` as a finite 2-D float array (scalars and vectors are promoted).

    A 1-D input becomes a column vector, matching how gains of single-output
    systems are written.
    """
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D array, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name}: rows, cols >= 1 required, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: entries must be finite")
    return a


def as_symmetric(x, name="matrix"):
    """Validate symmetry of `x` and return its canonical symmetrization."""
    a = as_matrix(x, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name}: symmetric matrix must be square, got {a.shape}")
    scale = 1.0 + np.max(np.abs(a))
    asym = np.max(np.abs(a - a.T))
    if asym > 1e-12 * scale:
        raise ValidationError(f"{name}: symmetry violated (max |S_ij - S_ji| = {asym:.3g})")
    return 0.5 * (a + a.T)


def _require_square(M, name):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name}: square matrix required, got shape {M.shape}")


def spectral_radius(M):
    """Largest eigenvalue modulus of a square matrix."""
    M = np.asarray(M, dtype=float)
    _require_square(M, "spectral_radius")
    try:
        eigs = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        # LAPACK reports the failing QR sweep only in the message
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc
    return float(np.max(np.abs(eigs)))


def lambda_min(S):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(S)[0])


def lyapunov_residual(F, Q, X):
    """Frobenius norm of ``X - F X F^T - Q``."""
    return float(np.linalg.norm(X - F @ X @ F.T - Q))


def _fro(M):
    return math.sqrt(float((M * M).sum()))


def _smith_doubling(F, Q, max_iter):
    X = Q.copy()
    Fk = F.copy()
    for k in range(1, max_iter + 1):
        incr = Fk @ X @ Fk.T
        X = X + incr
        if _fro(incr) <= 1e-16 * _fro(X):
            return X, k
        Fk = Fk @ Fk
        if _fro(Fk) < 1e-150:
            return X, k
    raise NumericalError(
        f"Smith doubling did not settle after {max_iter} squarings", iterations=max_iter)


def solve_dlyap(F, Q, max_iter=100, refinements=3, rho=None):
    """Solve the discrete Lyapunov equation ``X = F X F^T + Q``.

    Uses squared Smith iteration (``X <- X + F_k X F_k^T``, ``F_k <- F_k^2``)
    followed by up to `refinements` rounds of residual correction.

    Parameters
    ----------
    F : (n, n) array
        Stable matrix, ``spectral_radius(F) < 1 - 1e-9``.
    Q : (n, n) array
        Symmetric right-hand side.
    rho : float, optional
        Spectral radius of `F` if the caller already has it.

    Returns
    -------
    X : (n, n) array
        Symmetric solution with ``||X - F X F^T - Q||_F <= 1e-10 (1 + ||X||_F)``.
    """
    F = np.asarray(F, dtype=float)
    Q = np.asarray(Q, dtype=float)
    _require_square(F, "solve_dlyap F")
    if Q.shape != F.shape:
        raise DimensionError(f"solve_dlyap: F is {F.shape} but Q is {Q.shape}")
    if rho is None:
        rho = spectral_radius(F)
    if rho >= 1.0 - _LYAP_STABILITY_MARGIN:
        raise InstabilityError(f"not stable: rho(F) = {rho:.12g}", rho)

    X, iters = _smith_doubling(F, Q, max_iter)
    X = 0.5 * (X + X.T)
    for _ in range(refinements):
        R = Q + F @ X @ F.T - X
        if _fro(R) <= 1e-13 * (1.0 + _fro(X)):
            break
        E, k = _smith_doubling(F, 0.5 * (R + R.T), max_iter)
        iters += k
        X = X + E
        X = 0.5 * (X + X.T)
    res = lyapunov_residual(F, Q, X)
    if not res <= 1e-10 * (1.0 + _fro(X)):
        raise NumericalError(
            f"Lyapunov residual {res:.3g} above tolerance (rho(F) = {rho:.6g})",
            iterations=iters)
    return X


def _riccati_map(A, C, Q, R, P):
    S = C @ P @ C.T + R
    G = np.linalg.solve(S, C @ P).T  # P C^T S^-1
    Pn = A @ (P - G @ C @ P) @ A.T + Q
    return 0.5 * (Pn + Pn.T)


def riccati_residual(A, C, Q_w, R_v, P):
    """Frobenius norm of the predictive Riccati equation residual at `P`."""
    return float(np.linalg.norm(_riccati_map(A, C, Q_w, R_v, P) - P))


def solve_dare_predictive(A, C, Q_w, R_v, tol=1e-13, max_iter=100_000):
    """Steady-state a priori covariance and Kalman gain by fixed-point iteration.

    Iterates ``P <- A (P - P C^T (C P C^T + R)^-1 C P) A^T + Q`` from
    ``P = Q_w`` until successive iterates differ by at most
    ``tol * max(1, ||P||_F)``.

    Returns
    -------
    Pminus : (n, n) array
        Fixed point of the Riccati map.
    L_KF : (n, p) array
        ``Pminus C^T (C Pminus C^T + R_v)^-1``; guaranteed to make
        ``(I - L_KF C) A`` stable.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    Q_w = np.asarray(Q_w, dtype=float)
    R_v = np.asarray(R_v, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n or Q_w.shape != (n, n) \
            or R_v.shape != (C.shape[0],) * 2:
        raise DimensionError("solve_dare_predictive: inconsistent dimensions")

    P = Q_w.copy()
    for it in range(1, max_iter + 1):
        Pn = _riccati_map(A, C, Q_w, R_v, P)
        if not np.all(np.isfinite(Pn)):
            raise NumericalError("Riccati iteration diverged", iterations=it)
        step = np.linalg.norm(Pn - P)
        P = Pn
        if step <= tol * max(1.0, np.linalg.norm(P)):
            break
    else:
        raise NumericalError(
            f"Riccati iteration did not converge in {max_iter} steps "
            f"(last step {step:.3g})", iterations=max_iter)
    logger.debug("DARE fixed point reached after %d iterations", it)

    res = riccati_residual(A, C, Q_w, R_v, P)
    if res > 1e-10 * (1.0 + np.linalg.norm(P)):
        raise NumericalError(f"Riccati residual {res:.3g} above tolerance", iterations=it)
    S = C @ P @ C.T + R_v
    L = np.linalg.solve(S, C @ P).T
    rho = spectral_radius((np.eye(n) - L @ C) @ A)
    if rho >= 1.0:
        raise ConsistencyError(f"Riccati gain is not stabilizing: rho = {rho:.6g}")
    return P, L


def sym_rank(M, tol=RANK_TOL):
    """Number of singular values above ``tol * sigma_max``."""
    if tol <= 0:
        raise ValidationError("sym_rank: tol must be positive")
    M = np.asarray(M, dtype=float)
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _psd_eig(N, tol, name):
    N = np.asarray(N, dtype=float)
    _require_square(N, name)
    w, V = np.linalg.eigh(0.5 * (N + N.T))
    top = max(w[-1], 0.0)
    if w[0] < -tol * top:
        raise NotPSDError(f"{name}: not psd (lambda_min = {w[0]:.3g}, lambda_max = {top:.3g})")
    return w, V, top


def sym_sqrt(N, tol=1e-10):
    """Symmetric psd square root via eigendecomposition."""
    w, V, _ = _psd_eig(N, tol, "sym_sqrt")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sym_pinv_sqrt(N, tol=1e-10):
    """Pseudo-inverse square root ``N^{+/2}`` of a symmetric psd matrix.

    Eigenvalues at or below ``tol * lambda_max`` are treated as zero.
    """
    w, V, top = _psd_eig(N, tol, "sym_pinv_sqrt")
    keep = w > tol * top if top > 0 else np.zeros_like(w, dtype=bool)
    d = np.zeros_like(w)
    d[keep] = 1.0 / np.sqrt(w[keep])
    return (V * d) @ V.T
