"""Command line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error,
3 infeasible optimisation problem.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from . import forest as xt
from .mpc import MiqpProblem, solve_miqp
from .rl import BatchError, double_fqi, read_batch_csv

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("dhwflex")


class InputError(ValueError):
    pass


def _load_config(args) -> cfgmod.ScenarioConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg.scenario.seed = args.seed
    if getattr(args, "days", None) is not None:
        cfg.scenario.days = args.days
    if getattr(args, "freeze_models", False):
        cfg.scenario.freeze_models = True
    if getattr(args, "out", None):
        cfg.output.directory = args.out
    return cfg.validate()


def _run_info() -> dict:
    import scipy

    from . import __version__
    return {"dhwflex": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "forest_backend": xt.BACKEND}


def cmd_simulate(args) -> int:
    from .scenario import io as runio
    from .scenario import metrics, run_closed_loop

    cfg = _load_config(args)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(cfg, out / "effective_config.yaml")
    (out / "run_info.json").write_text(json.dumps(_run_info(), indent=2, sort_keys=True) + "\n")
    latest = []
    runlog = run_closed_loop(cfg, on_models=latest.append)
    runio.write_runlog(runlog, out, minute_log=cfg.output.write_minute_log)
    m = metrics(runlog)
    runio.write_metrics(m, out / runio.METRICS_FILE)
    if cfg.output.write_models and latest:
        mdir = out / "models"
        mdir.mkdir(exist_ok=True)
        for q in latest[-1]:
            q.save(mdir / f"{q.device_id}.xtrf")
    print(json.dumps(m, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not args.batch:
        raise InputError("train needs --batch PATH")
    batches = read_batch_csv(args.batch)
    r = cfg.rl
    b = cfg.fleet.bounds
    out = Path(cfg.output.directory) / "models"
    trained = []
    for i, dev in enumerate(sorted(batches)):
        batch = batches[dev]
        seed = int(np.random.SeedSequence([cfg.scenario.seed, i]).generate_state(1, np.uint64)[0] >> 1)
        batch = batch.subsample(r.max_batch, np.random.default_rng(seed))
        fp = xt.ForestParams(r.n_trees, r.k_candidates, r.n_min, seed)
        trained.append(double_fqi(batch, r.price, r.fee, r.iterations, fp,
                                  nominal_power=cfg.fleet.device.nominal_power, t_lower=b.lower,
                                  step_len=cfg.mpc.step_len, gamma=r.gamma,
                                  time_encoding=r.time_encoding, seed=seed))
    out.mkdir(parents=True, exist_ok=True)
    for q in trained:
        q.save(out / f"{q.device_id}.xtrf")
    print(f"trained {len(trained)} device model(s) into {out}")
    return EXIT_OK


def _read_problem(path) -> MiqpProblem:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"problem file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise InputError(f"{p}: invalid YAML: {exc}") from None
    if isinstance(doc, dict) and set(doc) == {"mpc"}:
        doc = doc["mpc"]
    if not isinstance(doc, dict):
        raise InputError(f"{p}: expected a mapping of problem fields")
    try:
        return MiqpProblem.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{p}: {exc}") from None


def solution_dict(sol) -> dict:
    d = {"status": sol.status, "objective": float(sol.objective), "node_count": int(sol.node_count),
         "notes": list(sol.notes)}
    if sol.feasible:
        d.update(pi=sol.pi.tolist(), sigma=sol.sigma.tolist(), theta=sol.theta.tolist(),
                 sigma0=sol.sigma0.tolist(), violation=float(sol.violation))
    return d


def cmd_mpc_solve(args) -> int:
    prob = _read_problem(args.problem)
    sol = solve_miqp(prob)
    d = solution_dict(sol)
    text = yaml.safe_dump(d, sort_keys=False)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "solution.yaml").write_text(text)
        if sol.feasible:
            import csv
            with open(out / "solution.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["quarter_index", "cluster", "pi_J", "sigma", "objective"])
                for s in range(prob.horizon):
                    for c in range(prob.n_clusters):
                        sig = sol.sigma0[c] if s == 0 else sol.sigma[c, s - 1]
                        w.writerow([s, c, repr(float(sol.pi[c, s])), int(sig), repr(float(sol.objective))])
    print(text, end="")
    if not sol.feasible:
        print(f"infeasible: {sol.status}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_report(args) -> int:
    from .scenario import io as runio

    m = runio.report(args.run_dir, args.out)
    print(json.dumps(m, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dhwflex", description="Water-heater fleet MPC and dispatch simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario YAML file (defaults if omitted)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--days", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--freeze-models", action="store_true", help="no nightly retraining")

    s = sub.add_parser("simulate", help="run the closed-loop scenario")
    common(s)
    s.set_defaults(func=cmd_simulate)
    t = sub.add_parser("train", help="train per-device dispatch models from a batch CSV")
    common(t)
    t.add_argument("--batch", required=True)
    t.set_defaults(func=cmd_train)
    m = sub.add_parser("mpc-solve", help="solve one MIQP snapshot")
    m.add_argument("problem")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mpc_solve)
    r = sub.add_parser("report", help="recompute metrics and figure series from a run directory")
    r.add_argument("run_dir")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    from .scenario.io import RunLogError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, BatchError, InputError, RunLogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level diagnostics
        log.debug("failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
