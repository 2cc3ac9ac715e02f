"""Command-line entry point for trials, benchmarks, sweeps and ablations.

Subcommands:

* ``run``             benchmark one configuration over randomized scenarios,
                      or replay a saved scenario file
* ``ablate``          representation-precision matrix and/or lambda sweep on
                      shared seeds
* ``replay``          re-run a single saved scenario and write its trajectory
* ``validate-config`` check robot/controller config files and exit

Outputs are CSV (one row per trial) plus a JSON summary; every file embeds
the configuration hash so results are reproducible from (spec, seeds).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench, controller as ctl, kinematics as kin, robot_shape as rs
from .bench import (Scenario, TrialConfig, make_trial_config,
                    run_benchmark, run_trial, sweep_lambda, write_csv,
                    write_summary_json)
from .controller import ControllerConfig

REP_CHOICES = ["points-fine", "points-coarse", "points-file", "spheres"]
KIND_CHOICES = ["bookshelf", "table"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--robot-config", type=Path, default=None,
                   help="robot model JSON (default: packaged Frankie-like model)")
    p.add_argument("--controller-config", type=Path, default=None,
                   help="controller JSON (default: packaged defaults)")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file with defaults for any flag (flags override)")
    p.add_argument("--out", type=Path, default=Path("results"),
                   help="output directory")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seeds", type=str, default=None,
                   help="explicit seed list 'a,b,c' or range 'a:b'")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--dt", type=float, default=bench.DT_DEFAULT)
    p.add_argument("--max-steps", type=int, default=bench.MAX_STEPS_DEFAULT)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdfreach",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark or replay a scenario")
    _add_common(run)
    run.add_argument("--kind", choices=KIND_CHOICES, default=None)
    run.add_argument("--replay", type=Path, default=None,
                     help="scenario JSON to run instead of generated scenes")
    run.add_argument("--seed", type=int, default=None,
                     help="override the seed label of a --replay scenario")
    run.add_argument("--rep", choices=REP_CHOICES, default="points-fine")
    run.add_argument("--points-file", type=Path, default=None)
    run.add_argument("--constraints", dest="constraints",
                     action="store_true", default=True)
    run.add_argument("--no-constraints", dest="constraints",
                     action="store_false")
    run.add_argument("--active-cost", dest="active_cost",
                     action="store_true", default=True)
    run.add_argument("--no-active-cost", dest="active_cost",
                     action="store_false")
    run.add_argument("--lambda-max", type=float, default=None)
    run.add_argument("--save-scenarios", action="store_true",
                     help="write each generated scenario JSON next to the CSV")

    ab = sub.add_parser("ablate", help="precision matrix and lambda sweep")
    _add_common(ab)
    ab.add_argument("--kind", choices=KIND_CHOICES, default="table")
    ab.add_argument("--which", choices=["precision", "lambda", "both"],
                    default="both")
    ab.add_argument("--lambdas", type=str, default="0,0.5,1.0,1.5,2.0")
    ab.add_argument("--rep", choices=REP_CHOICES, default="spheres",
                    help="representation used for the lambda sweep")

    rp = sub.add_parser("replay", help="re-run one saved scenario")
    rp.add_argument("scenario", type=Path)
    rp.add_argument("--robot-config", type=Path, default=None)
    rp.add_argument("--controller-config", type=Path, default=None)
    rp.add_argument("--rep", choices=REP_CHOICES, default="points-fine")
    rp.add_argument("--points-file", type=Path, default=None)
    rp.add_argument("--no-constraints", dest="constraints",
                    action="store_false", default=True)
    rp.add_argument("--no-active-cost", dest="active_cost",
                    action="store_false", default=True)
    rp.add_argument("--out", type=Path, default=Path("results"))
    rp.add_argument("--dt", type=float, default=bench.DT_DEFAULT)
    rp.add_argument("--max-steps", type=int, default=bench.MAX_STEPS_DEFAULT)

    vc = sub.add_parser("validate-config", help="validate config files")
    vc.add_argument("--robot-config", type=Path, default=None)
    vc.add_argument("--controller-config", type=Path, default=None)
    return ap


def _parse_seeds(text: str | None, n: int) -> list[int]:
    if text is None:
        return list(range(n))
    if ":" in text:
        a, b = text.split(":")
        seeds = list(range(int(a), int(b)))
    else:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    if len(seeds) < n:
        raise ValueError(f"seed list provides {len(seeds)} seeds, "
                         f"need {n}")
    return seeds[:n]


def _load_model(path: Path | None) -> kin.RobotModel:
    return kin.load_robot_model(path) if path else kin.load_default_model()


def _load_controller(path: Path | None) -> ControllerConfig:
    if path is None:
        return ctl.load_default_config()
    return ControllerConfig.from_json(path)


def _apply_config_file(args: argparse.Namespace) -> None:
    if getattr(args, "config", None) is None:
        return
    with open(args.config) as f:
        defaults = json.load(f)
    provided = {a[2:].replace("-", "_") for a in sys.argv if a.startswith("--")}
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if attr in provided or not hasattr(args, attr):
            continue
        if attr in ("out", "robot_config", "controller_config",
                    "points_file", "replay"):
            value = Path(value)
        setattr(args, attr, value)


def _setup_from_args(args, model, base_cfg) -> TrialConfig:
    return make_trial_config(
        model, args.rep, base_config=base_cfg,
        constraints=args.constraints, active_cost=args.active_cost,
        lambda_c_max=getattr(args, "lambda_max", None),
        points_file=str(args.points_file) if args.points_file else None,
        dt=args.dt, max_steps=args.max_steps)


def cmd_run(args) -> int:
    _apply_config_file(args)
    if args.replay is None and args.kind is None:
        print("error: either --kind or --replay is required", file=sys.stderr)
        return 2
    try:
        model = _load_model(args.robot_config)
        base_cfg = _load_controller(args.controller_config)
        setup = _setup_from_args(args, model, base_cfg)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    args.out.mkdir(parents=True, exist_ok=True)
    if args.replay is not None:
        try:
            scenario = Scenario.load(args.replay)
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
            print(f"error: cannot load scenario: {e}", file=sys.stderr)
            return 1
        if args.seed is not None:
            scenario.seed = args.seed
        summary = run_benchmark(scenario.kind, 1, setup,
                                seeds=[scenario.seed], scenarios=[scenario])
    else:
        seeds = _parse_seeds(args.seeds, args.trials)
        if args.save_scenarios:
            scen_dir = args.out / "scenarios"
            scen_dir.mkdir(exist_ok=True)
            for s in seeds:
                bench.generate_scenario(args.kind, s, model).save(
                    scen_dir / f"{args.kind}_{s}.json")
        summary = run_benchmark(args.kind, args.trials, setup, seeds=seeds,
                                parallelism=args.parallelism)
    write_csv(summary, args.out / "trials.csv")
    write_summary_json(summary, args.out / "summary.json")
    print(f"{summary.kind}: success {summary.success_rate:.1f}% | "
          f"collisions {summary.collision_rate:.1f}% | "
          f"local minima {summary.local_minimum_rate:.1f}% | "
          f"mean |a| {summary.mean_abs_accel:.3f} m/s^2 "
          f"[config {summary.config_hash}]")
    return 0


def cmd_ablate(args) -> int:
    _apply_config_file(args)
    try:
        model = _load_model(args.robot_config)
        base_cfg = _load_controller(args.controller_config)
        lambdas = [float(t) for t in args.lambdas.split(",") if t.strip()]
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    args.out.mkdir(parents=True, exist_ok=True)
    seeds = _parse_seeds(args.seeds, args.trials)
    rows = []
    if args.which in ("precision", "both"):
        for rep in ("points-fine", "points-coarse", "spheres"):
            setup = make_trial_config(model, rep, base_config=base_cfg,
                                      dt=args.dt, max_steps=args.max_steps)
            s = run_benchmark(args.kind, args.trials, setup, seeds=seeds,
                              parallelism=args.parallelism)
            write_csv(s, args.out / f"precision_{rep}.csv")
            rows.append({"ablation": "precision", "representation": rep,
                         "lambda_max": setup.controller.lambda_c_max,
                         "success_rate": s.success_rate,
                         "collision_rate": s.collision_rate,
                         "mean_abs_accel": s.mean_abs_accel,
                         "mean_step_time": s.mean_step_time,
                         "config_hash": s.config_hash})
    if args.which in ("lambda", "both"):
        sweep = sweep_lambda(args.kind, lambdas, args.trials, model,
                             representation=args.rep, base_config=base_cfg,
                             seeds=seeds, parallelism=args.parallelism)
        for lam, s in sweep.items():
            write_csv(s, args.out / f"lambda_{lam:g}.csv")
            rows.append({"ablation": "lambda", "representation": args.rep,
                         "lambda_max": lam,
                         "success_rate": s.success_rate,
                         "collision_rate": s.collision_rate,
                         "mean_abs_accel": s.mean_abs_accel,
                         "mean_step_time": s.mean_step_time,
                         "config_hash": s.config_hash})
    with open(args.out / "ablation_summary.json", "w") as f:
        json.dump(rows, f, indent=1)
    with open(args.out / "ablation_summary.csv", "w") as f:
        f.write("ablation,representation,lambda_max,success_rate,"
                "collision_rate,mean_abs_accel,mean_step_time,config_hash\n")
        for r in rows:
            f.write(f"{r['ablation']},{r['representation']},"
                    f"{r['lambda_max']:g},{r['success_rate']:.1f},"
                    f"{r['collision_rate']:.1f},{r['mean_abs_accel']:.4f},"
                    f"{r['mean_step_time']:.6f},{r['config_hash']}\n")
    for r in rows:
        print(f"{r['ablation']:9s} {r['representation']:13s} "
              f"lam={r['lambda_max']:g}: success {r['success_rate']:.1f}% "
              f"collisions {r['collision_rate']:.1f}% "
              f"step {1e3 * r['mean_step_time']:.2f} ms")
    return 0


def cmd_replay(args) -> int:
    try:
        model = _load_model(args.robot_config)
        base_cfg = _load_controller(args.controller_config)
        scenario = Scenario.load(args.scenario)
        setup = make_trial_config(
            model, args.rep, base_config=base_cfg,
            constraints=args.constraints, active_cost=args.active_cost,
            points_file=str(args.points_file) if args.points_file else None,
            dt=args.dt, max_steps=args.max_steps)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    setup.store_trajectory = True
    record = run_trial(scenario, setup)
    args.out.mkdir(parents=True, exist_ok=True)
    traj_path = args.out / f"replay_{scenario.kind}_{scenario.seed}.csv"
    with open(traj_path, "w") as f:
        f.write(f"# config {bench.config_hash(setup)}\n")
        f.write("step,base_x,base_y,base_theta,"
                + ",".join(f"q{i+1}" for i in range(7))
                + ",ee_x,ee_y,ee_z,min_distance,lambda_c,manipulability,"
                  "status\n")
        for i, (base, q, ee, rd, lam, manip, status) in \
                enumerate(record.trajectory):
            f.write(",".join(repr(float(v)) for v in
                             [i, *base, *q, *ee, rd, lam, manip])
                    + f",{status}\n")
    print(f"{scenario.kind} seed {scenario.seed}: {record.outcome.value} "
          f"in {record.steps} steps (min distance {record.min_distance:.3f} m)"
          f" -> {traj_path}")
    return 0


def cmd_validate(args) -> int:
    status = 0
    try:
        model = _load_model(args.robot_config)
        print(f"robot config ok: {model.name} "
              f"({len(model.joints)} joints, {model.sphere_radii.size} spheres)")
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"robot config invalid: {e}", file=sys.stderr)
        status = 1
    try:
        cfg = _load_controller(args.controller_config)
        cfg.validate()
        print("controller config ok")
    except (OSError, ValueError, KeyError, json.JSONDecodeError, TypeError) as e:
        print(f"controller config invalid: {e}", file=sys.stderr)
        status = 1
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "validate-config":
            return cmd_validate(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
