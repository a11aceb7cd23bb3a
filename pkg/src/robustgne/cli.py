"""Command-line front end.

    robustgne solve    --config run.yaml [--out DIR] [--seed N] [--trace] [--exhaustive-projection]
    robustgne certify  --config run.yaml [--result DIR/result.json] [--out DIR]
    robustgne sweep    --config run.yaml [--out DIR] [--seed N]
    robustgne validate --config run.yaml [--out DIR] [--seed N]

Exit codes: 0 success, 1 usage/config/data error, 2 non-convergence.
"""

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time

import numpy as np

from .certificates import (
    active_support_estimate,
    aposteriori_certificate,
    apriori_certificate,
    count_support_of_equilibrium,
    dimension_bound,
    eps_required,
)
from .config import load_config, parse_config
from .errors import CenterOutside, ConfigError, RobustGNEError
from .experiment import Pipeline, per_trial_rows, run_example, run_validation_campaign
from .scenario import draw_multisample, dump_samples, load_samples

logger = logging.getLogger("robustgne")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(jsonable(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _runtime(t0):
    return {"seconds": time.perf_counter() - t0, "python": platform.python_version(),
            "numpy": np.__version__}


def _effective_config(args):
    cfg = load_config(args.config)
    data = cfg.effective()
    if getattr(args, "seed", None) is not None:
        data["scenario"]["seed"] = args.seed
        data["experiment"]["seed"] = args.seed
    if getattr(args, "exhaustive_projection", False):
        data["solver"]["exhaustive_projection"] = True
    if getattr(args, "trace", False):
        data["output"]["trace"] = True
    return parse_config(data)


def _out_dir(args, cfg):
    out = args.out or cfg.output.dir
    os.makedirs(out, exist_ok=True)
    return out


def _pipeline(cfg):
    return Pipeline(cfg.build_game(), cfg.space(), cfg.solver_kwargs())


def _trace_rows(trace):
    for kappa, x, mu, step, mask in trace:
        yield ([str(kappa)] + [format(v, ".17g") for v in x] + [format(v, ".17g") for v in mu]
               + [format(step, ".17g"), "".join(str(int(v)) for v in mask)])


def cmd_solve(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    out = _out_dir(args, cfg)
    model = cfg.build_model()
    S = draw_multisample(model, cfg.scenario.K)
    samples_path = os.path.join(out, "samples.txt")
    with open(samples_path, "w") as fh:
        dump_samples(S, fh)
    pipe = _pipeline(cfg)
    dom, res = pipe.solve(S, cfg.solver.M, trace=cfg.output.trace)
    margin = max(10 * cfg.solver.xi, 1e-6)
    try:
        facets, touching, with_box = pipe.facet_counts(dom, res, margin)
    except CenterOutside:
        # only reachable for an unconverged iterate outside the domain
        facets = touching = with_box = None
    trace_path = None
    if cfg.output.trace:
        trace_path = os.path.join(out, "trace.csv")
        nx, m = res.x.size, res.mu.size
        header = (["kappa"] + [f"x_{i + 1}" for i in range(nx)]
                  + [f"mu_{i + 1}" for i in range(m)] + ["step_norm", "mask"])
        write_csv(trace_path, header, _trace_rows(res.trace))
    ball = res.region.ball
    result = {
        "space": pipe.space,
        "x_star": res.x,
        "mu_star": res.mu,
        "sigma_star": pipe.sigma(res.x),
        "mask": res.mask,
        "residual": res.step_norm,
        "fixed_point_residual": res.fixed_point_residual,
        "iterations": res.iterations,
        "converged": res.converged,
        "gap_trapped": res.gap_trapped,
        "tau": res.tau,
        "tau_info": res.tau_info,
        "c": res.c,
        "M": min(cfg.solver.M, dom.coupling().m),
        "region": {
            "A": res.region.base.A, "b": res.region.base.b,
            "center": ball.center, "radius": ball.radius, "norm_order": ball.norm_order,
            "coupling_rows": dom.coupling().m,
            "sample_origin": dom.coupling_origin(),
        },
        "facets": facets,
        "facets_touching": touching,
        "facets_with_box": with_box,
        "samples_path": os.path.basename(samples_path),
        "trace_path": os.path.basename(trace_path) if trace_path else None,
    }
    doc = {"command": "solve", "config": cfg.effective(),
           "seeds": {"scenario": cfg.scenario.seed}, "result": result,
           "runtime": _runtime(t0)}
    write_json(os.path.join(out, "result.json"), doc)
    if not res.converged:
        print(f"no convergence after {res.iterations} iterations (step {res.step_norm:.3g})",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_certify(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    out = _out_dir(args, cfg)
    result_path = args.result or os.path.join(out, "result.json")
    try:
        with open(result_path) as fh:
            prior_doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read solve result {result_path}: {exc}") from exc
    r = prior_doc["result"]
    if not r["converged"] or r["facets"] is None:
        raise ConfigError(f"{result_path} holds an unconverged solve; nothing to certify")
    with open(os.path.join(os.path.dirname(result_path), r["samples_path"])) as fh:
        S = load_samples(fh)
    pipe = _pipeline(cfg)
    M = int(r["M"])
    x_star = np.asarray(r["x_star"], dtype=float)
    c = cfg.certificate
    g = cfg.game
    d = dimension_bound(g.n, M, g.N, c.aggregate_bound)
    eps_bar = c.eps_bar if c.eps_bar is not None else eps_required(d, S.K, c.beta)
    seeds = {"scenario": S.seed}
    prior = apriori_certificate(d, S.K, eps_bar, M=M, seeds=seeds)
    if c.support == "active":
        dom, res = pipe.solve(S, M)
        cp = dom.coupling()
        s_star, support = active_support_estimate(res.x, cp.A, cp.b, dom.coupling_origin(),
                                                  tol=max(10 * cfg.solver.xi, 1e-6))
    else:
        s_star, support = count_support_of_equilibrium(
            lambda Sp: pipe.equilibrium(Sp, M), S, x_star, key=pipe.key)
    post = aposteriori_certificate(s_star, len(r["facets"]), S.K, c.beta,
                                   heuristic=c.support == "active", seeds=seeds)
    doc = {"command": "certify", "config": cfg.effective(), "seeds": seeds,
           "result_path": os.path.basename(result_path),
           "support_samples": support,
           "certificates": [prior.to_dict(), post.to_dict()],
           "runtime": _runtime(t0)}
    write_json(os.path.join(out, "certificate.json"), doc)
    return EXIT_OK


def _experiment(args, runner, name):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    out = _out_dir(args, cfg)
    plan = cfg.build_plan()
    report = runner(plan)
    header, rows = per_trial_rows(plan, report)
    write_csv(os.path.join(out, "per_trial.csv"), header, rows)
    doc = {"command": name, "config": cfg.effective(),
           "seeds": {"experiment": plan.seed,
                     "trials": [list(s) for s in plan.trial_seeds()]},
           "report": report.payload(), "runtime": _runtime(t0)}
    write_json(os.path.join(out, f"{name}.json"), doc)
    failed = [row for row in report.rows if "error" in row]
    if failed:
        print(f"{len(failed)} trial(s) failed; see {name}.json", file=sys.stderr)
    if any(not row.get("converged", True) for row in report.rows):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(args):
    return _experiment(args, run_example, "sweep")


def cmd_validate(args):
    return _experiment(args, run_validation_campaign, "validate")


def build_parser():
    p = argparse.ArgumentParser(prog="robustgne",
                                description="Equilibria with scenario-certified robustness regions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (default: output.dir of the config)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the scenario and experiment seeds")

    sp = sub.add_parser("solve", help="solve one sampled game")
    common(sp)
    sp.add_argument("--trace", action="store_true", help="write the iterate trace CSV")
    sp.add_argument("--exhaustive-projection", action="store_true",
                    help="project onto every piece of the multiplier domain")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("certify", help="certificates for a previous solve")
    common(sp, seed=False)
    sp.add_argument("--result", help="result.json of the solve (default: OUT/result.json)")
    sp.set_defaults(func=cmd_certify)

    for name, func, text in (("sweep", cmd_sweep, "M-sweep on the aggregative example"),
                             ("validate", cmd_validate, "Monte Carlo validation campaign")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--exhaustive-projection", action="store_true",
                        help="project onto every piece of the multiplier domain")
        sp.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (RobustGNEError, ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
