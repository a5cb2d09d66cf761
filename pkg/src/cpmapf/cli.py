"""Command-line front end.

One binary, subcommand style. Every subcommand takes an optional JSON config
file plus flag overrides (flags win), writes its outputs under --out, and is
deterministic for a fixed (config, seed) modulo runtime fields, which
--no-timing zeroes out. Exit codes: 0 ok, 2 config error, 1 runtime error.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .conformal import (CalibrationArtifact, calibrate, compute_alphas,
                        conformal_rank, empirical_coverage,
                        score_calibration_set)
from .prediction import make_predictor
from .simulation import (ScenarioConfig, build_instances, generate_dataset,
                         load_dataset, resolve_map, run_baseline,
                         run_open_loop_trial, save_dataset, write_results_csv)


class ConfigError(ValueError):
    pass


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scenario(args, overrides):
    base = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"--config: no such file {path}")
        base = json.loads(path.read_text())
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    try:
        return ScenarioConfig.from_json(json.dumps(base))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def _require_file(path, flag):
    if not path:
        raise ConfigError(f"{flag} is required")
    if not Path(path).exists():
        raise ConfigError(f"{flag}: no such file {path}")
    return path


def cmd_gen_map(args):
    m = resolve_map(f"warehouse-{args.size}" if args.map is None else args.map)
    out = _out_dir(args) / f"{m.name or 'map'}.json"
    out.write_text(m.to_json())
    print(out)
    return 0


def cmd_gen_data(args):
    if args.map is None:
        raise ConfigError("--map is required")
    m = resolve_map(args.map)
    ds = generate_dataset(m, args.agents, args.count, args.length, args.seed or 0)
    out = _out_dir(args) / "dataset.jsonl"
    save_dataset(ds, out)
    print(out)
    return 0


def default_anchors(T, H, warmup, stride):
    """Window-start anchors: warmup, warmup+stride, ... while truth fits."""
    out = []
    tau = warmup
    while tau + H <= T - 1:
        out.append(tau)
        tau += stride
    if not out:
        raise ConfigError(f"no valid anchors: T={T} too short for H={H}")
    return out


def cmd_calibrate(args):
    dataset = _require_file(args.dataset, "--dataset")
    if args.map is None:
        raise ConfigError("--map is required")
    m = resolve_map(args.map)
    ds = load_dataset(dataset)
    seed = args.seed or 0
    predictor = make_predictor(args.predictor)
    anchors = ([int(x) for x in args.anchors.split(",")] if args.anchors
               else default_anchors(ds.T, args.H, args.warmup, args.stride or args.H))

    cal_idx = ds.splits["cal"]
    if args.cal_size:
        cal_idx = cal_idx[:args.cal_size]
    records = score_calibration_set(
        build_instances(ds, cal_idx, predictor, m, args.H, anchors, seed),
        args.H, ds.m_agents)
    if args.cal2_size:
        if args.cal2_size >= len(records) - 9:
            raise ConfigError(f"--cal2-size {args.cal2_size} leaves too few cal1 instances")
        cal1, cal2 = records[:-args.cal2_size], records[-args.cal2_size:]
    else:
        half = len(records) // 2
        cal1, cal2 = records[:half], records[half:]
    alphas = compute_alphas(cal1, args.delta)
    intervals = calibrate(cal2, alphas, args.delta)
    artifact = CalibrationArtifact(intervals=intervals, alphas=alphas,
                                   map_name=m.name, predictor=args.predictor)

    out = _out_dir(args) / "calibration.json"
    artifact.save(out)
    p = conformal_rank(len(cal2), args.delta)
    print(f"p={p} cal2={len(cal2)} radii={['%.3f' % r for r in intervals.radii]}")

    test_idx = ds.splits["test"]
    if test_idx:
        test_records = score_calibration_set(
            build_instances(ds, test_idx, predictor, m, args.H, anchors, seed + 1),
            args.H, ds.m_agents)
        coverage = empirical_coverage(test_records, intervals)
        print(f"test_coverage={coverage:.4f} n={len(test_records)}")
    print(out)
    return 0


def cmd_solve(args):
    sc = _load_scenario(args, {
        "map": args.map, "n_controlled": args.controlled,
        "m_uncontrolled": args.uncontrolled, "predictor": args.predictor,
        "calibration_path": args.calibration, "w": args.w, "delta": args.delta,
    })
    calibration = None
    if sc.m_uncontrolled > 0:
        _require_file(sc.calibration_path, "--calibration")
    metrics, events, result = run_open_loop_trial(sc, calibration)
    out = _out_dir(args)
    if args.no_timing:
        metrics.strip_timing()
        result.solution.runtime_s = 0.0
    (out / "solution.json").write_text(result.solution.to_json())
    (out / "metrics.json").write_text(json.dumps(metrics.to_row()))
    with open(out / "events.jsonl", "w") as f:
        for e in events:
            f.write(json.dumps(e) + "\n")
    print(out / "solution.json")
    return 0


def cmd_lifelong(args):
    sc = _load_scenario(args, {
        "map": args.map, "n_controlled": args.controlled,
        "m_uncontrolled": args.uncontrolled, "predictor": args.predictor,
        "calibration_path": args.calibration, "w": args.w, "delta": args.delta,
        "H": args.H, "w_hat": args.w_hat, "T_hat": args.T_hat, "kind": args.kind,
    })
    if sc.kind == "CP" and sc.m_uncontrolled > 0:
        _require_file(sc.calibration_path, "--calibration")
    metrics, events = run_baseline(sc.kind, sc)
    if args.no_timing:
        metrics.strip_timing()
    out = _out_dir(args)
    with open(out / "events.jsonl", "w") as f:
        for e in events:
            f.write(json.dumps(e) + "\n")
    (out / "metrics.json").write_text(json.dumps(metrics.to_row()))
    print(out / "metrics.json")
    return 0


def _bench_one(payload):
    kind, seed, scenario_json = payload
    sc = replace(ScenarioConfig.from_json(scenario_json), seed=seed)
    metrics, _events = run_baseline(kind, sc)
    return metrics


def cmd_bench(args):
    sc = _load_scenario(args, {
        "map": args.map, "n_controlled": args.controlled,
        "m_uncontrolled": args.uncontrolled, "predictor": args.predictor,
        "calibration_path": args.calibration, "w": args.w, "delta": args.delta,
        "H": args.H, "w_hat": args.w_hat, "T_hat": args.T_hat,
    })
    kinds = [k.strip() for k in args.kinds.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    if "CP" in kinds and sc.m_uncontrolled > 0:
        _require_file(sc.calibration_path, "--calibration")
    jobs = [(kind, seed, sc.to_json()) for kind in kinds for seed in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_bench_one, jobs))
    else:
        records = [_bench_one(j) for j in jobs]
    if args.no_timing:
        for r in records:
            r.strip_timing()
    out = _out_dir(args) / "results.csv"
    write_results_csv(records, out)
    print(out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cpmapf")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--no-timing", action="store_true",
                       help="zero runtime fields for byte-stable outputs")
        p.add_argument("--config", default=None, help="JSON config file; flags win")

    p = sub.add_parser("gen-map", help="write a bundled warehouse map as JSON")
    common(p)
    p.add_argument("--size", default="small", choices=["small", "medium", "large"])
    p.add_argument("--map", default=None, help="convert an existing map file instead")
    p.set_defaults(handler=cmd_gen_map)

    p = sub.add_parser("gen-data", help="generate walker trajectory datasets")
    common(p)
    p.add_argument("--map", default=None)
    p.add_argument("--agents", type=int, default=4)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--length", type=int, default=64)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("calibrate", help="score the cal split and calibrate radii")
    common(p)
    p.add_argument("--map", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--predictor", default="astar")
    p.add_argument("--H", type=int, default=5)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--stride", type=int, default=None, help="anchor stride (default H)")
    p.add_argument("--anchors", default=None, help="comma list of anchor timesteps")
    p.add_argument("--cal-size", type=int, default=None)
    p.add_argument("--cal2-size", type=int, default=None)
    p.set_defaults(handler=cmd_calibrate)

    def scenario_flags(p):
        p.add_argument("--map", default=None)
        p.add_argument("--controlled", type=int, default=None)
        p.add_argument("--uncontrolled", type=int, default=None)
        p.add_argument("--predictor", default=None)
        p.add_argument("--calibration", default=None)
        p.add_argument("--w", type=float, default=None)
        p.add_argument("--delta", type=float, default=None)

    p = sub.add_parser("solve", help="one-shot plan and execution")
    common(p)
    scenario_flags(p)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("lifelong", help="rolling-horizon lifelong run")
    common(p)
    scenario_flags(p)
    p.add_argument("--H", type=int, default=None)
    p.add_argument("--w-hat", dest="w_hat", type=int, default=None)
    p.add_argument("--T-hat", dest="T_hat", type=int, default=None)
    p.add_argument("--kind", default="CP", choices=["IGNORE", "OBSTACLE", "PRED", "CP"])
    p.set_defaults(handler=cmd_lifelong)

    p = sub.add_parser("bench", help="baseline x seed matrix, CSV output")
    common(p)
    scenario_flags(p)
    p.add_argument("--H", type=int, default=None)
    p.add_argument("--w-hat", dest="w_hat", type=int, default=None)
    p.add_argument("--T-hat", dest="T_hat", type=int, default=None)
    p.add_argument("--kinds", default="IGNORE,OBSTACLE,PRED,CP")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure: structured record on stderr
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
