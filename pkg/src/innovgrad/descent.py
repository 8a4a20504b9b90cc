"""Gradient flow and gradient descent on the innovations loss.

Two integrators share one trajectory type:

* ``flow_rk4`` integrates ``dL/dt = 2 W_o(L) K(L)`` with classical RK4.
  A step is rejected (and halved) when a stage leaves the stability margin,
  when the loss increases, or when the step is too long for the local
  curvature to be tracked accurately.
* ``gd_linesearch`` takes ``L <- L - alpha grad`` with Armijo backtracking.

Acceptance decisions use :func:`innovgrad.model.loss_difference`, which stays
accurate after the loss itself has converged to machine precision.
"""
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import (ConsistencyError, DomainError, EmptyProbeError,
                     InstabilityError, PreconditionError, SamplingError,
                     StallError, ValidationError)
from .matrix_ops import (lambda_min, solve_dare_predictive, spectral_radius,
                         sym_pinv_sqrt)
from .model import (analyze, as_gain, check_assumptions, closed_loop,
                    cross_cov, innov_loss, innov_loss_gradient, loss_difference,
                    pred_loss, predictor_closed_loop)

logger = logging.getLogger(__name__)

__all__ = [
    "DescentConfig", "Sample", "DescentTrajectory", "RateCertificate",
    "LocalForms", "ProbePoint", "descend", "rate_certificate",
    "estimate_kappa_levelset", "local_quadratic_forms", "estimate_c_local",
    "boundary_crossing", "coercivity_probe", "default_ray_alphas",
    "optimality_gap",
]

MODES = ("flow_rk4", "gd_linesearch")


@dataclass
class DescentConfig:
    mode: str = "gd_linesearch"
    step_init: float = 1.0
    step_min: float = 1e-14
    grad_tol: float = 1e-10
    max_iters: int = 200_000
    armijo_slope: float = 1e-4
    backtrack_factor: float = 0.5
    stability_margin: float = 1e-9
    #: multiplier applied to the step after an accepted iteration
    step_growth: float = 2.0
    #: gd only; first trial step from the Barzilai-Borwein quotient
    bb_steps: bool = True
    #: RK4 only; largest accepted ``h * curvature`` along the flow
    rk4_max_z: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("step_init", "step_min", "grad_tol", "rk4_max_z"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.step_min > self.step_init:
            raise ValidationError("step_min must not exceed step_init")
        if not 0 < self.armijo_slope < 1:
            raise ValidationError("armijo_slope must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValidationError("backtrack_factor must lie in (0, 1)")
        if self.stability_margin < 0:
            raise ValidationError("stability_margin must be >= 0")
        if self.max_iters < 0:
            raise ValidationError("max_iters must be >= 0")
        if self.step_growth < 1:
            raise ValidationError("step_growth must be >= 1")


class Sample(NamedTuple):
    t: float
    L: np.ndarray
    J: float
    grad_norm: float
    rho_F: float
    lambda_min_Wo: float
    K_norm: float


CSV_FIELDS = ("t", "J", "grad_norm", "rho_F", "lambda_min_Wo", "K_norm")


@dataclass
class DescentTrajectory:
    samples: List[Sample] = field(default_factory=list)
    status: str = "max_iters"
    mode: str = "gd_linesearch"
    #: True when (A, CA) is unobservable, so convergence to L_KF is not guaranteed
    assumption_violating: bool = False
    rejected_steps: int = 0

    @property
    def final(self):
        return self.samples[-1]

    @property
    def converged(self):
        return self.status == "converged"

    def to_csv(self, fh=None):
        """Write the scalar columns as CSV (17 significant digits); return the text if `fh` is None."""
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for s in self.samples:
            w.writerow([f"{getattr(s, k):.17g}" for k in CSV_FIELDS])
        if fh is None:
            return out.getvalue()

    def gains_json(self, **kw):
        return json.dumps({
            "mode": self.mode, "status": self.status,
            "assumption_violating": self.assumption_violating,
            "samples": [{"t": s.t, "L": s.L.tolist()} for s in self.samples],
        }, **kw)


def _sample(t, a):
    return Sample(t=float(t), L=a.L.copy(), J=a.J_innov, grad_norm=a.grad_norm,
                  rho_F=a.rho_F, lambda_min_Wo=a.lambda_min_Wo, K_norm=a.K_norm)


def _try_analyze(sys, L, margin):
    try:
        return analyze(sys, L, margin=margin)
    except InstabilityError:
        return None


def descend(sys, L0, cfg=None):
    """Minimize the innovations loss from the stabilizing gain `L0`.

    Returns a :class:`DescentTrajectory` whose status is ``converged`` once
    ``||grad J||_F <= cfg.grad_tol`` or ``max_iters`` when the iteration budget
    is exhausted. Raises :class:`DomainError` if `L0` is not stabilizing with
    the configured margin and :class:`StallError` (carrying the trajectory so
    far) if no acceptable step above ``step_min`` exists.
    """
    cfg = cfg or DescentConfig()
    L = as_gain(sys, L0)
    a = _try_analyze(sys, L, cfg.stability_margin)
    if a is None:
        rho = spectral_radius(closed_loop(sys, L))
        raise DomainError(f"not stabilizing: rho(F(L0)) = {rho:.6g} "
                          f"(margin {cfg.stability_margin:g})")
    report = check_assumptions(sys)
    traj = DescentTrajectory(mode=cfg.mode, assumption_violating=not report.observable_CA)
    if traj.assumption_violating:
        logger.info("(A, CA) is not observable; descent may stop at a spurious point")
    traj.samples.append(_sample(0.0, a))
    step = cfg.step_init
    t = 0.0
    stepper = _rk4_step if cfg.mode == "flow_rk4" else _armijo_step
    for it in range(cfg.max_iters + 1):
        if a.grad_norm <= cfg.grad_tol:
            traj.status = "converged"
            break
        if it == cfg.max_iters:
            traj.status = "max_iters"
            break
        prev = a
        a, h, step, rejected = stepper(sys, a, step, cfg, traj)
        if cfg.mode == "gd_linesearch" and cfg.bb_steps:
            s_ = a.L - prev.L
            y_ = a.grad - prev.grad
            sy = float(np.sum(s_ * y_))
            if sy > 0:
                step = max(float(np.sum(s_ * s_)) / sy, cfg.step_min)
        traj.rejected_steps += rejected
        t = t + h if cfg.mode == "flow_rk4" else it + 1
        traj.samples.append(_sample(t, a))
    logger.debug("descent %s: %s after %d samples, %d rejections", cfg.mode,
                 traj.status, len(traj.samples), traj.rejected_steps)
    return traj


def _stall(traj, cfg, h):
    raise StallError(f"no acceptable step above step_min = {cfg.step_min:g} (last tried {h:.3g})",
                     trajectory=traj)


def _armijo_step(sys, a, alpha, cfg, traj):
    g = a.grad
    g2 = float(np.sum(g * g))
    rejected = 0
    while True:
        L_new = a.L - alpha * g
        b = _try_analyze(sys, L_new, cfg.stability_margin)
        if b is not None:
            dJ = loss_difference(sys, a.L, L_new, base=a)
            if dJ <= -cfg.armijo_slope * alpha * g2:
                return b, alpha, alpha * cfg.step_growth, rejected
        rejected += 1
        alpha *= cfg.backtrack_factor
        if alpha < cfg.step_min:
            _stall(traj, cfg, alpha)


def _rk4_step(sys, a, h, cfg, traj):
    rejected = 0
    margin = cfg.stability_margin
    while True:
        if h < cfg.step_min:
            _stall(traj, cfg, h)
        h_next = 0.5 * h
        k1 = -a.grad
        s2 = _try_analyze(sys, a.L + 0.5 * h * k1, margin)
        if s2 is not None:
            k2 = -s2.grad
            # curvature of the flow field along its own direction
            curv = np.linalg.norm(k2 - k1) / (0.5 * h * max(np.linalg.norm(k1), 1e-300))
            h_fit = 0.9 * cfg.rk4_max_z / curv if curv > 0 else math.inf
            if h * curv > cfg.rk4_max_z:
                h_next = min(h_next, h_fit)
            else:
                s3 = _try_analyze(sys, a.L + 0.5 * h * k2, margin)
                s4 = None
                if s3 is not None:
                    k3 = -s3.grad
                    s4 = _try_analyze(sys, a.L + h * k3, margin)
                if s4 is not None:
                    k4 = -s4.grad
                    L_new = a.L + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                    b = _try_analyze(sys, L_new, margin)
                    if b is not None and loss_difference(sys, a.L, L_new, base=a) <= 0.0:
                        return b, h, min(h * cfg.step_growth, h_fit), rejected
        rejected += 1
        h = h_next


@dataclass(frozen=True)
class RateCertificate:
    kappa_hat: float
    c_hat: float
    J_star: float
    bound_satisfied: bool
    max_violation: float
    #: decay exponent ``4 kappa_hat^2 / c_hat``
    rate: float
    n_samples: int

    def lines(self):
        return [
            f"kappa_hat (min lambda_min(W_o) on trajectory) = {self.kappa_hat:.6g}",
            f"c_hat (max (J - J*)/||K||^2 on trajectory)    = {self.c_hat:.6g}",
            f"J*                                            = {self.J_star:.17g}",
            f"rate 4 kappa^2 / c                            = {self.rate:.6g}",
            f"bound satisfied                               = {self.bound_satisfied}",
            f"max relative violation                        = {self.max_violation:.3g}",
        ]


def optimality_gap(sys, L, L_kf, base=None):
    """``J(L) - J(L_KF)`` computed as a nonnegative Lyapunov trace, not a difference."""
    return loss_difference(sys, L_kf, L, base=base)


def rate_certificate(sys, traj, tol=1e-6, K_floor=1e-12):
    """Check the geometric decay bound ``gap(t) <= gap(0) exp(-4 kappa^2 t / c)``.

    `kappa` and `c` are replaced by their extreme values along the
    trajectory itself. Samples with ``||K||_F < K_floor`` do not enter the
    estimate of `c`. Gaps are evaluated with :func:`optimality_gap`.
    """
    if traj.mode != "flow_rk4":
        raise PreconditionError("rate certificate needs a flow_rk4 trajectory")
    if not traj.converged:
        raise PreconditionError(f"trajectory did not converge (status {traj.status})")
    _, L_kf = solve_dare_predictive(sys.A, sys.C, sys.Q_w, sys.R_v)
    base = analyze(sys, L_kf)
    J_star = base.J_innov
    gaps = np.array([max(optimality_gap(sys, s.L, L_kf, base=base), 0.0)
                     for s in traj.samples])
    kappa = max(min(s.lambda_min_Wo for s in traj.samples), 0.0)
    ratios = [g / s.K_norm ** 2 for g, s in zip(gaps, traj.samples) if s.K_norm >= K_floor]
    c_hat = max(ratios) if ratios else math.inf
    rate = 4.0 * kappa ** 2 / c_hat if c_hat > 0 else 0.0
    ts = np.array([s.t for s in traj.samples])
    bound = gaps[0] * np.exp(-rate * ts) * (1.0 + tol)
    with np.errstate(divide="ignore", invalid="ignore"):
        excess = np.where(gaps > bound, (gaps - bound) / np.where(bound > 0, bound, 1.0), 0.0)
    max_violation = float(np.max(excess)) if excess.size else 0.0
    return RateCertificate(kappa_hat=kappa, c_hat=float(c_hat), J_star=J_star,
                           bound_satisfied=bool(np.all(gaps <= bound)),
                           max_violation=max_violation, rate=rate,
                           n_samples=len(traj.samples))


def estimate_kappa_levelset(sys, L0, n_samples=200, seed=0, trajectory=None,
                            max_draws=None):
    """Upper estimate of ``inf lambda_min(W_o(L))`` over the level set of `L0`.

    Gains ``L0 + s R`` (``R`` standard Gaussian) are kept when stabilizing
    and no worse than ``J(L0)``; the scale `s` doubles while more than half
    of a batch is kept and halves when fewer than a tenth are. The minimum
    over kept gains, `L0` and the optional trajectory samples is returned.
    Because only finitely many points are seen, the value can only
    overestimate the true infimum.
    """
    L0 = as_gain(sys, L0)
    a0 = analyze(sys, L0)
    rng = np.random.default_rng(seed)
    scale = 0.1 * (1.0 + np.linalg.norm(L0))
    max_draws = max_draws or 50 * n_samples
    best = a0.lambda_min_Wo
    if trajectory is not None:
        best = min([best] + [s.lambda_min_Wo for s in trajectory.samples])
    kept = drawn = 0
    batch = 20
    while kept < n_samples and drawn < max_draws:
        hits = 0
        for _ in range(batch):
            drawn += 1
            L = L0 + scale * rng.standard_normal(L0.shape)
            if spectral_radius(closed_loop(sys, L)) >= 1.0 - 1e-9:
                continue
            a = analyze(sys, L)
            if a.J_innov <= a0.J_innov:
                hits += 1
                best = min(best, a.lambda_min_Wo)
                kept += 1
                if kept >= n_samples:
                    break
        if hits > batch // 2:
            scale *= 2.0
        elif hits < batch // 10:
            scale *= 0.5
    if kept == 0:
        raise SamplingError(f"no level-set samples accepted in {drawn} draws")
    return max(best, 0.0)


@dataclass(frozen=True, eq=False)
class LocalForms:
    """Quadratic forms at the Kalman gain on the vectorized (row-major) gain space.

    ``D_K`` is the Jacobian of ``K`` at ``L_KF``; ``hessian`` the Hessian of
    ``J``; ``N = D_K^T D_K`` and ``M = hessian / 2``.
    """

    L_kf: np.ndarray
    D_K: np.ndarray
    hessian: np.ndarray
    N: np.ndarray
    M: np.ndarray
    beta: float


def _fd_jacobian(fn, L, h):
    n, p = L.shape
    cols = []
    for k in range(n * p):
        E = np.zeros(n * p)
        E[k] = h
        E = E.reshape(n, p)
        cols.append(((fn(L + E) - fn(L - E)) / (2.0 * h)).ravel())
    return np.column_stack(cols)


def local_quadratic_forms(sys, h=1e-6, kernel_tol=1e-10, pinv_tol=1e-10):
    """Finite-difference curvature of J and K at the Kalman gain and the ratio bound beta.

    ``beta = lambda_max(N^{+/2} M N^{+/2})`` bounds ``x^T M x <= beta x^T N x``
    provided every direction with ``x^T N x <= kernel_tol`` also has
    ``|x^T M x| <= 1e-8``; otherwise :class:`ConsistencyError` is raised.
    """
    _, L_kf = solve_dare_predictive(sys.A, sys.C, sys.Q_w, sys.R_v)
    D_K = _fd_jacobian(lambda L: cross_cov(sys, L), L_kf, h)
    H = _fd_jacobian(lambda L: innov_loss_gradient(sys, L), L_kf, h)
    H = 0.5 * (H + H.T)
    N = D_K.T @ D_K
    M = 0.5 * H
    w, V = np.linalg.eigh(N)
    for lam, x in zip(w, V.T):
        if lam <= kernel_tol and abs(x @ M @ x) > 1e-8:
            raise ConsistencyError(
                f"kernel condition violated: x^T N x = {lam:.3g} but x^T M x = {x @ M @ x:.3g}")
    R = sym_pinv_sqrt(N, pinv_tol)
    beta = float(np.linalg.eigvalsh(R @ M @ R)[-1])
    return LocalForms(L_kf=L_kf, D_K=D_K, hessian=H, N=N, M=M, beta=beta)


def estimate_c_local(sys, h=1e-6):
    """Limit of ``(J - J*) / ||K||^2`` at the Kalman gain (worst direction)."""
    rep = check_assumptions(sys)
    if not rep.observable_CA:
        raise PreconditionError("estimate_c_local requires (A, CA) observable")
    return local_quadratic_forms(sys, h).beta


class ProbePoint(NamedTuple):
    alpha: float
    J: float
    rho: float


def _closed_loop_rho(sys, L, form):
    M = closed_loop(sys, L) if form == "filter" else predictor_closed_loop(sys, L)
    return spectral_radius(M)


def boundary_crossing(sys, origin, direction, form="filter", t_start=1e-3, t_max=1e12):
    """Smallest located ``t > 0`` with ``rho(origin + t * direction) >= 1``.

    The segment is scanned with doubling steps from `t_start`, then the
    bracket is bisected to relative width ~1e-15. Returns ``math.inf`` if no
    crossing is found below `t_max`.
    """
    origin = as_gain(sys, origin)
    d = as_gain(sys, direction)
    if _closed_loop_rho(sys, origin, form) >= 1.0:
        raise DomainError("boundary_crossing: origin is not stabilizing")
    lo, hi = 0.0, t_start
    while _closed_loop_rho(sys, origin + hi * d, form) < 1.0:
        lo, hi = hi, 2.0 * hi
        if hi > t_max:
            return math.inf
    for _ in range(200):
        if hi - lo <= 4e-16 * hi:
            break
        mid = 0.5 * (lo + hi)
        if _closed_loop_rho(sys, origin + mid * d, form) < 1.0:
            lo = mid
        else:
            hi = mid
    return hi


def default_ray_alphas(sys, direction, n_grid=50, alpha_max=1e8, n_refine=12):
    """Geometric grid along a ray, refined toward the first exit from the predictor-stable set."""
    alphas = list(np.geomspace(1e-2, alpha_max, n_grid))
    t_exit = boundary_crossing(sys, np.zeros((sys.n, sys.p)), direction,
                               form="predictor", t_max=alpha_max)
    if math.isfinite(t_exit):
        alphas = [a for a in alphas if a < t_exit]
        alphas += [t_exit * (1.0 - 10.0 ** (-k)) for k in range(1, n_refine + 1)]
    return sorted(alphas)


def coercivity_probe(sys, direction, alphas=None, mode="ray", origin=None):
    """Evaluate the loss along a ray or toward the stability boundary.

    ``ray``: the predictor loss at ``alpha * direction``; points where
    ``A - L C`` is not stable are skipped. ``boundary``: the innovations loss
    at ``origin + alpha * t_b * direction`` where ``t_b`` is the located
    crossing of ``rho(F) = 1``, so `alphas` are fractions of the way there
    (points with ``alpha >= 1`` are skipped).

    Returns a list of :class:`ProbePoint`.
    """
    d = as_gain(sys, direction)
    nd = np.linalg.norm(d)
    if nd == 0:
        raise ValidationError("direction must be nonzero")
    d = d / nd
    pts = []
    if mode == "ray":
        if alphas is None:
            alphas = default_ray_alphas(sys, d)
        for al in alphas:
            L = al * d
            rho = _closed_loop_rho(sys, L, "predictor")
            if rho < 1.0 - 1e-9:
                pts.append(ProbePoint(float(al), pred_loss(sys, L), rho))
    elif mode == "boundary":
        origin = np.zeros((sys.n, sys.p)) if origin is None else as_gain(sys, origin)
        t_b = boundary_crossing(sys, origin, d, form="filter")
        if not math.isfinite(t_b):
            raise EmptyProbeError("no stability boundary along this direction")
        if alphas is None:
            alphas = [1.0 - 10.0 ** (-k) for k in range(0, 10)]
        for al in alphas:
            if not 0 <= al < 1:
                continue
            L = origin + al * t_b * d
            rho = _closed_loop_rho(sys, L, "filter")
            if rho < 1.0 - 1e-9:
                pts.append(ProbePoint(float(al), innov_loss(sys, L), rho))
    else:
        raise ValidationError(f"unknown probe mode {mode!r}")
    if not pts:
        raise EmptyProbeError("every probed point was outside the stabilizing set")
    return pts
