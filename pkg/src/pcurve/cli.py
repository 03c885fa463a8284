"""Command line front end: ``pcurve {solve,verify,converge,certify}``.

Exit codes: 0 ok, 2 invalid config, 3 background certification failed,
4 solver failure, 5 property violation (a ``replay.json`` is written).
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import _accel, config, estimates, geometry, mpoly, pde
from .errors import ConeError, ParameterError, SolverError
from .fieldio import write_binary, write_csv
from .solver import JsonLinesLog, continuation_solve, uniqueness_probe

log = logging.getLogger("pcurve")

EXIT_OK, EXIT_CONFIG, EXIT_CERT, EXIT_SOLVER, EXIT_PROPERTY = 0, 2, 3, 4, 5


class CertificationFailed(Exception):
    def __init__(self, report):
        super().__init__(f"background not certified: worst subset sum "
                         f"{report.worst_margin:.3e} at {report.worst_point}")
        self.report = report


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{v:.6e}" if v == v else "nan"
    return str(v)


def format_table(columns, rows):
    """Right-aligned text table."""
    cells = [[_fmt(v) for v in row] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def write_table(stem, columns, rows, extra=None):
    """``stem.txt`` (aligned text) and its JSON twin ``stem.json``."""
    with open(stem + ".txt", "w") as fh:
        fh.write(format_table(columns, rows))
    data = {"columns": list(columns), "rows": [list(r) for r in rows]}
    if extra:
        data.update(extra)
    write_json(stem + ".json", data)


def output_dir(args, spec):
    out = args.out or spec.output.dir or os.environ.get("PCURVE_OUT") or "pcurve-out"
    if not os.path.isabs(out) and not args.out and spec.output.dir:
        out = spec.resolve(out)
    os.makedirs(out, exist_ok=True)
    return out


def _certify(built, spec):
    prob = built.problem
    rep = geometry.certify_background(prob.geometry, prob.p, prob.t, 0.0, A=prob.A)
    if not rep.passed:
        raise CertificationFailed(rep)
    return rep


# ----------------------------------------------------------------- commands


def cmd_certify(args, spec):
    built = config.build_problem(spec)
    prob = built.problem
    rep = geometry.certify_background(prob.geometry, prob.p, prob.t, 0.0, A=prob.A)
    out = output_dir(args, spec)
    write_json(os.path.join(out, "certification.json"), rep.to_dict())
    print(f"certification {'passed' if rep.passed else 'FAILED'}: worst subset sum "
          f"{rep.worst_margin:.6e} at {rep.worst_point}")
    if not rep.passed:
        raise CertificationFailed(rep)
    return EXIT_OK


def cmd_solve(args, spec):
    built = config.build_problem(spec)
    prob = built.problem
    cert = _certify(built, spec)
    out = output_dir(args, spec)
    with open(os.path.join(out, "run.jsonl"), "w") as fh:
        u, trace, _ = continuation_solve(prob, spec.solver.newton(), spec.solver.continuation(),
                                         on_iter=JsonLinesLog(fh), certify=False)
    write_csv(os.path.join(out, "solution.csv"), u)
    write_binary(os.path.join(out, "solution.pcrv"), u)
    write_json(os.path.join(out, "trace.json"),
               {"certification": cert.to_dict(), "states": [st.summary() for st in trace]})
    est = estimates.check_solution(u, prob)
    est_d = est.to_dict()
    if spec.solver.uniqueness_trials > 0:
        uq = uniqueness_probe(prob, spec.solver.newton(), spec.solver.uniqueness_trials,
                              seed=args.seed or 0, reference=u)
        est_d["uniqueness"] = uq.to_dict()
    write_json(os.path.join(out, "estimates.json"), est_d)

    rows = [[i, st.s, st.step, st.newton_iterations, st.residual, st.cone_margin]
            for i, st in enumerate(trace)]
    final = {"final_residual": trace[-1].residual, "newton_iterations_total":
             int(sum(st.newton_iterations for st in trace)), "s_steps": len(trace) - 1,
             "c0_lower": est.bounds.lower, "c0_upper": est.bounds.upper,
             "inf_u": est.inf_u, "sup_u": est.sup_u, "c0_bounds_hold": est.bound_satisfied,
             "backend": _accel.backend()}
    write_table(os.path.join(out, "summary"),
                ["step", "s", "ds", "newton_iters", "residual", "cone_margin"], rows, final)
    with open(os.path.join(out, "summary.txt"), "a") as fh:
        fh.write("\n" + "".join(f"{k:>24}  {_fmt(v)}\n" for k, v in sorted(final.items())))

    if built.u_star is not None:
        err = float(np.abs(u - built.u_star).max())
        write_table(os.path.join(out, "errors"), ["grid", "h", "sup_error"],
                    [["x".join(map(str, prob.grid.shape)), prob.grid.hmax, err]],
                    {"mode": spec.f.mode})
        print(f"sup |u - u*| = {err:.3e}")
    print(f"solved: {len(trace) - 1} s-steps, final residual {trace[-1].residual:.3e}, "
          f"C0 bounds {'hold' if est.bound_satisfied else 'VIOLATED'}; artifacts in {out}")
    return EXIT_OK


def _corrupt_gradient(lam, p):
    return 0.5 * mpoly.mp_grad_eigen(lam, p)


def cmd_verify(args, spec):
    vf = spec.verify
    seed = vf.seed if args.seed is None else args.seed
    grad_fn = _corrupt_gradient if vf.fault_injection == "corrupt_gradient" else None
    out = output_dir(args, spec)
    reports, rows, replay = [], [], []
    for n in vf.dims:
        for p in range(1, n + 1):
            for t in vf.t_values:
                rep = estimates.property_sweep(n, p, t, vf.samples, seed, grad_fn=grad_fn)
                ones = np.ones(n)
                prod, bound, _ = estimates.appendix_inequality(ones, p)
                eq_gap = abs(prod - bound)
                if eq_gap > 1e-10:
                    rep.violations["product_equality"] = 1
                    rep.offending["product_equality"] = ones.tolist()
                d = rep.to_dict()
                d["product_equality_gap"] = eq_gap
                reports.append(d)
                rows.append([n, p, t, vf.samples, rep.total_violations,
                             min(rep.worst.values())])
                if rep.total_violations:
                    replay.append({"n": n, "p": p, "t": t, "seed": seed,
                                   "samples": vf.samples, "offending": rep.offending})
    ell = None
    try:
        built = config.build_problem(spec)
        prob = built.problem
        cert = geometry.certify_background(prob.geometry, prob.p, prob.t, 0.0, A=prob.A)
        if cert.passed:
            er = pde.ellipticity_certificate(np.zeros(prob.grid.shape), prob.geometry,
                                             prob.A, prob.p, prob.t)
            ell = {"min_eigenvalue": er.min_eigenvalue, "worst_point": er.worst_point}
            if not er.elliptic:
                replay.append({"ellipticity": ell})
    except ConeError as exc:
        log.info("ellipticity check skipped: %s", exc)
    total = int(sum(r[4] for r in rows)) + (0 if ell is None or ell["min_eigenvalue"] > 0 else 1)
    write_table(os.path.join(out, "verify"),
                ["n", "p", "t", "samples", "violations", "worst_margin"], rows,
                {"seed": seed, "fault_injection": vf.fault_injection, "sweeps": reports,
                 "ellipticity_at_zero": ell, "total_violations": total})
    print(f"verify: {len(rows)} sweeps, {total} violation(s)")
    if total:
        path = os.path.join(out, "replay.json")
        write_json(path, {"seed": seed, "fault_injection": vf.fault_injection, "cases": replay})
        print(f"offending samples written to {path}", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def observed_orders(h, err):
    """log(e_coarse/e_fine) / log(h_coarse/h_fine) between successive rows."""
    orders = [None]
    for k in range(1, len(err)):
        if err[k] > 0 and err[k - 1] > 0:
            orders.append(math.log(err[k - 1] / err[k]) / math.log(h[k - 1] / h[k]))
        else:
            orders.append(None)
    return orders


def cmd_converge(args, spec):
    res = sorted(set(spec.convergence.resolutions))
    if len(res) < 2:
        raise config.ConfigError("convergence study needs at least 2 resolutions")
    if spec.f.kind != "manufactured":
        raise config.ConfigError("convergence study needs a manufactured f")
    if spec.f.mode != "continuum":
        spec = config.from_dict({**config.to_dict(spec),
                                 "f": {**config.to_dict(spec)["f"], "mode": "continuum"}},
                                spec.base_dir)
    out = output_dir(args, spec)
    h, err, iters = [], [], []
    for m in res:
        built = config.build_problem(spec, (m,) * spec.n)
        _certify(built, spec)
        u, trace, _ = continuation_solve(built.problem, spec.solver.newton(),
                                         spec.solver.continuation(), certify=False)
        h.append(built.problem.grid.hmax)
        err.append(float(np.abs(u - built.u_star).max()))
        iters.append(int(sum(st.newton_iterations for st in trace)))
        log.info("resolution %d: sup error %.3e", m, err[-1])
    orders = observed_orders(h, err)
    rows = [[m, hk, ek, ok, it] for m, hk, ek, ok, it in zip(res, h, err, orders, iters)]
    write_table(os.path.join(out, "convergence"),
                ["points", "h", "sup_error", "order", "newton_iters"], rows)
    print(format_table(["points", "h", "sup_error", "order", "newton_iters"], rows), end="")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "converge": cmd_converge,
            "certify": cmd_certify}


def build_parser():
    ap = argparse.ArgumentParser(prog="pcurve",
                                 description="Prescribed p-curvature conformal metrics on flat tori.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML problem file")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for the numba kernels (default: all cores)")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="output directory (default $PCURVE_OUT)")
    ap.add_argument("--log-level", default="WARNING",
                    choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads:
        _accel.set_threads(args.threads)
    try:
        spec = config.load(args.config)
        return COMMANDS[args.command](args, spec)
    except (config.ConfigError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (SolverError, ConeError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
