"""``innovgrad`` command-line interface.

Exit status: 0 on success, 2 for invalid input or a gain outside its
domain, 3 when a numerical method fails to converge.
"""
import argparse
import csv
import io
import json
import logging
import math
import os
import sys as _sys

import numpy as np

from . import descent as ds
from . import model as md
from .errors import NumericalError, ValidationError
from .matrix_ops import riccati_residual, solve_dare_predictive
from .montecarlo import SimConfig, fd_gradient, simulate
from .systems import BUILTIN_SYSTEMS, example_gradient, example_loss, nilpotent_example

logger = logging.getLogger("innovgrad")

COMMANDS = ("analyze", "kalman", "descend", "rate", "verify-grad", "montecarlo",
            "spurious-demo", "coercivity")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"usage error: {message}")


def build_parser():
    p = _Parser(prog="innovgrad",
                description="Gradient descent on the innovations loss of a linear filter.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--system", help="system JSON file or a built-in name (paper-example)")
    p.add_argument("--gain", help="gain JSON file: {\"L\": [[...]]} or a nested list")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None,
                   help="gradient-norm tolerance (descend, rate) or FD step (verify-grad)")
    p.add_argument("--horizon", type=int, default=1_000_000)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--mode", choices=("flow", "gd"), default="gd")
    p.add_argument("--probe", choices=("ray", "boundary"), default="boundary")
    p.add_argument("--out", help="write results here instead of standard output")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    return p


def _read_text(path, what):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {what} file {path!r}: {exc.strerror}") from exc


def load_system(name):
    if name is None:
        raise ValidationError("--system is required for this command")
    if name in BUILTIN_SYSTEMS:
        return BUILTIN_SYSTEMS[name]()
    try:
        return md.SystemModel.from_json(_read_text(name, "system"))
    except ValidationError as exc:
        raise ValidationError(f"{name}: {exc}") from exc


def load_gain(path, sys):
    if path is None:
        return np.zeros((sys.n, sys.p))
    text = _read_text(path, "gain")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON at line {exc.lineno} "
                              f"column {exc.colno}: {exc.msg}") from exc
    if isinstance(d, dict):
        if "L" not in d:
            raise ValidationError(f"{path}: gain JSON object needs key 'L'")
        d = d["L"]
    try:
        return md.as_gain(sys, d)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _num(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _fmt_matrix(M):
    M = np.atleast_2d(M)
    return "\n".join("  [" + "  ".join(f"{v: .10g}" for v in row) + "]" for row in M)


class Result:
    """What a subcommand produces: human lines, a JSON payload, optional rows for CSV."""

    def __init__(self, lines=(), payload=None, rows=None, columns=None):
        self.lines = list(lines)
        self.payload = payload if payload is not None else {}
        self.rows = rows
        self.columns = columns

    def render(self, fmt):
        if fmt == "json":
            return json.dumps(_jsonable(self.payload), indent=2) + "\n"
        if fmt == "csv":
            out = io.StringIO()
            w = csv.writer(out, lineterminator="\n")
            if self.rows is not None:
                w.writerow(self.columns)
                for r in self.rows:
                    w.writerow([_num(r[c]) for c in self.columns])
            else:
                w.writerow(["key", "value"])
                for k, v in self.payload.items():
                    if not isinstance(v, (list, dict, np.ndarray)):
                        w.writerow([k, _num(v)])
            return out.getvalue()
        return "\n".join(self.lines) + "\n"


def cmd_analyze(args):
    sys = load_system(args.system)
    L = load_gain(args.gain, sys)
    a = md.analyze(sys, L)
    rep = md.check_assumptions(sys)
    lines = [f"gain L:\n{_fmt_matrix(a.L)}",
             f"rho(F(L))       = {a.rho_F:.10g}",
             f"J_innov         = {a.J_innov:.17g}",
             f"||grad J||_F    = {a.grad_norm:.6g}",
             f"||K(L)||_F      = {a.K_norm:.6g}",
             f"lambda_min(W_o) = {a.lambda_min_Wo:.6g}",
             f"Sigma_delta:\n{_fmt_matrix(a.Sigma_delta)}",
             f"K(L):\n{_fmt_matrix(a.K)}",
             f"grad J:\n{_fmt_matrix(a.grad)}"] + rep.lines()
    payload = a.to_dict()
    payload["system"] = sys.to_dict()
    payload["assumptions"] = rep.__dict__
    return Result(lines, payload)


def cmd_kalman(args):
    sys = load_system(args.system)
    P, L = solve_dare_predictive(sys.A, sys.C, sys.Q_w, sys.R_v)
    res = riccati_residual(sys.A, sys.C, sys.Q_w, sys.R_v, P)
    a = md.analyze(sys, L)
    lines = [f"Kalman gain L_KF:\n{_fmt_matrix(L)}",
             f"a priori covariance P-:\n{_fmt_matrix(P)}",
             f"Riccati residual  = {res:.3g}",
             f"||K(L_KF)||_F     = {a.K_norm:.3g}",
             f"J_innov(L_KF)     = {a.J_innov:.17g}",
             f"rho(F(L_KF))      = {a.rho_F:.10g}"]
    return Result(lines, {"L_KF": L, "P_minus": P, "riccati_residual": res,
                          "K_norm": a.K_norm, "J_innov": a.J_innov, "rho_F": a.rho_F})


def _descent_cfg(args, mode):
    tol = 1e-10 if args.tol is None else args.tol
    if mode == "flow_rk4":
        return ds.DescentConfig(mode=mode, step_init=0.1, grad_tol=tol)
    return ds.DescentConfig(mode=mode, grad_tol=tol)


def _trajectory_result(traj, extra_lines=(), extra=None):
    f = traj.final
    lines = [f"mode {traj.mode}: {traj.status} after {len(traj.samples) - 1} steps "
             f"({traj.rejected_steps} rejected)",
             f"J: {traj.samples[0].J:.17g} -> {f.J:.17g}",
             f"||grad J||_F = {f.grad_norm:.3g}, rho(F) = {f.rho_F:.6g}",
             f"final gain:\n{_fmt_matrix(f.L)}"]
    if traj.assumption_violating:
        lines.append("warning: (A, CA) not observable; the limit may be a spurious stationary point")
    lines += list(extra_lines)
    rows = [{k: getattr(s, k) for k in ds.CSV_FIELDS} for s in traj.samples]
    payload = {"status": traj.status, "mode": traj.mode,
               "assumption_violating": traj.assumption_violating,
               "final_L": f.L, "final_J": f.J, "final_grad_norm": f.grad_norm,
               "samples": [dict(r, L=s.L) for r, s in zip(rows, traj.samples)]}
    payload.update(extra or {})
    return Result(lines, payload, rows, list(ds.CSV_FIELDS))


def cmd_descend(args):
    sys = load_system(args.system)
    L0 = load_gain(args.gain, sys)
    mode = "flow_rk4" if args.mode == "flow" else "gd_linesearch"
    traj = ds.descend(sys, L0, _descent_cfg(args, mode))
    res = _trajectory_result(traj)
    res.trajectory = traj
    return res


def cmd_rate(args):
    sys = load_system(args.system)
    L0 = load_gain(args.gain, sys)
    traj = ds.descend(sys, L0, _descent_cfg(args, "flow_rk4"))
    cert = ds.rate_certificate(sys, traj)
    kappa_ls = ds.estimate_kappa_levelset(sys, L0, n_samples=100, seed=args.seed,
                                          trajectory=traj)
    lines = cert.lines() + [
        f"kappa level-set estimate (upper estimate)     = {kappa_ls:.6g}"]
    extra = dict(cert.__dict__, kappa_levelset_upper_estimate=kappa_ls)
    if md.check_assumptions(sys).observable_CA:
        c_loc = ds.estimate_c_local(sys)
        lines.append(f"c local limit at L_KF                         = {c_loc:.6g}")
        extra["c_local"] = c_loc
    res = _trajectory_result(traj, lines, extra)
    res.trajectory = traj
    return res


def cmd_verify_grad(args):
    sys = load_system(args.system)
    L = load_gain(args.gain, sys)
    h = 1e-5 if args.tol is None else args.tol
    g = md.innov_loss_gradient(sys, L)
    g_fd = fd_gradient(sys, L, h)
    scale = max(float(np.linalg.norm(g)), 1e-12)
    mismatch = float(np.max(np.abs(g - g_fd))) / scale
    lines = [f"analytic gradient -2 W_o K:\n{_fmt_matrix(g)}",
             f"central differences (h = {h:g}):\n{_fmt_matrix(g_fd)}",
             f"max entrywise mismatch / ||grad||_F = {mismatch:.3e}"]
    return Result(lines, {"grad": g, "grad_fd": g_fd, "h": h,
                          "max_relative_mismatch": mismatch})


def cmd_montecarlo(args):
    sys = load_system(args.system)
    L = load_gain(args.gain, sys)
    est = simulate(sys, L, SimConfig(horizon=args.horizon, burn_in=args.burn_in,
                                     seed=args.seed))
    a = md.analyze(sys, L)
    rel = lambda x, y: float(np.linalg.norm(x - y) / max(np.linalg.norm(y), 1e-300))
    lines = [f"horizon {est.horizon}, burn-in {est.burn_in}, seed {est.seed}",
             f"J_hat = {est.J_hat:.10g} +- {est.stderr_J:.3g}   (analytic {a.J_innov:.10g})",
             f"Sigma_delta rel. error = {rel(est.Sigma_delta_hat, a.Sigma_delta):.3e}",
             f"P rel. error           = {rel(est.P_hat, a.P):.3e}",
             f"||K_hat - K||_F        = {float(np.linalg.norm(est.K_hat - a.K)):.3e}"]
    payload = est.to_dict()
    payload.update(J_innov=a.J_innov, Sigma_delta=a.Sigma_delta, K=a.K, P=a.P)
    return Result(lines, payload)


def cmd_spurious_demo(args):
    sys = nilpotent_example()
    rep = md.check_assumptions(sys)
    rows = []
    for l2 in (-0.9, -0.5, -0.25, 0.0, 0.25, 0.5, 0.9):
        for l1 in (-10.0, 0.0, 10.0):
            a = md.analyze(sys, [l1, l2])
            rows.append({"l1": l1, "l2": l2, "J": a.J_innov,
                         "J_formula": example_loss(l2),
                         "grad_l1": a.grad[0, 0], "grad_l2": a.grad[1, 0],
                         "grad_l2_formula": example_gradient(l2)[1, 0]})
    lines = ["A = [[0, 1], [0, 0]], C = [1, 0], Q_w = I, R_v = 1"] + rep.lines()
    lines.append(f"{'l1':>6} {'l2':>6} {'J':>20} {'formula':>20} {'dJ/dl1':>10} {'dJ/dl2':>14}")
    for r in rows:
        lines.append(f"{r['l1']:6.1f} {r['l2']:6.2f} {r['J']:20.15g} {r['J_formula']:20.15g} "
                     f"{r['grad_l1']:10.3g} {r['grad_l2']:14.10g}")
    lines.append("stationary line: every L = (l1, 0) has zero gradient (J = 3), "
                 "so descent started there never moves")
    traj = ds.descend(sys, [7.0, 0.0])
    lines.append(f"descend from (7, 0): {traj.status}, final L = {traj.final.L.ravel().tolist()}")
    payload = {"assumptions": rep.__dict__, "grid": rows,
               "stationary_start": [7.0, 0.0], "stationary_final": traj.final.L.ravel()}
    return Result(lines, payload, rows, list(rows[0]))


def cmd_coercivity(args):
    sys = load_system(args.system)
    if args.gain is not None:
        d = load_gain(args.gain, sys)
    elif args.system == "paper-example" and args.probe == "boundary":
        d = np.array([[0.0], [1.0]])
    else:
        d = np.random.default_rng(args.seed).standard_normal((sys.n, sys.p))
    pts = ds.coercivity_probe(sys, d, mode=args.probe)
    d = d / np.linalg.norm(d)
    rows = []
    for pt in pts:
        r = pt._asdict()
        if args.probe == "ray":
            r["lower_bound"] = md.pred_loss_lower_bound(sys, pt.alpha * d)
        rows.append(r)
    cols = list(rows[0])
    lines = [f"{args.probe} probe along direction {d.ravel().tolist()}",
             " ".join(f"{c:>22}" for c in cols)]
    lines += [" ".join(f"{r[c]:22.15g}" for c in cols) for r in rows]
    return Result(lines, {"direction": d, "mode": args.probe, "points": rows}, rows, cols)


HANDLERS = {
    "analyze": cmd_analyze, "kalman": cmd_kalman, "descend": cmd_descend,
    "rate": cmd_rate, "verify-grad": cmd_verify_grad, "montecarlo": cmd_montecarlo,
    "spurious-demo": cmd_spurious_demo, "coercivity": cmd_coercivity,
}


def _configure_logging():
    level = os.environ.get("INNOVGRAD_LOG", "error").lower()
    logging.basicConfig(stream=_sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level={"error": logging.ERROR, "info": logging.INFO,
                               "debug": logging.DEBUG}.get(level, logging.ERROR))


def run(argv=None, stdout=None):
    """Parse `argv`, run one subcommand, return the exit status."""
    stdout = stdout or _sys.stdout
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.horizon < 1 or (args.burn_in is not None and args.burn_in < 0):
            raise ValidationError("--horizon must be >= 1 and --burn-in >= 0")
        if args.tol is not None and not (args.tol > 0 and math.isfinite(args.tol)):
            raise ValidationError("--tol must be a positive number")
        result = HANDLERS[args.command](args)
        text = result.render(args.format)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
            traj = getattr(result, "trajectory", None)
            if traj is not None:
                with open(args.out + ".gains.json", "w") as fh:
                    fh.write(traj.gains_json(indent=1))
        else:
            stdout.write(text)
    except ValidationError as exc:
        print(f"innovgrad: error: {exc}", file=_sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"innovgrad: numerical failure: {exc}", file=_sys.stderr)
        return 3
    return 0


def main():
    _sys.exit(run())


if __name__ == "__main__":
    main()
