"""Command-line entry point: ``courteous <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
Every command first writes ``manifest.json`` into its output directory;
``courteous rerun <manifest>`` repeats the run from it.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from courteous import __version__, kernel
from courteous.costs import CostWeights
from courteous.courtesy import CourtesyMode, PlannerSettings
from courteous.data import (SYNTHETIC_THETA, DataError, DatasetConfig, SyntheticSpec,
                            generate_synthetic_demos, load_dataset, split_demos)
from courteous.demo import load_demos, save_demos
from courteous.irl import (IrlConfig, IrlError, evaluate, fit, load_weights, precompute_all,
                           save_weights, training_loss)
from courteous.optim import OptimizerSettings
from courteous.scenarios import ScenarioError, _parse_value, load_scenario
from courteous.sim import (SimSettings, SimulationError, simulate, sweep_lambda, write_log_csv,
                           write_summary_csv)

OUT_ENV = "COURTEOUS_OUT"
USAGE, RUNTIME = 2, 3

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list
    config_paths: list
    overrides: list
    seed: int
    output_dir: str
    version: str
    backend: str
    started: str
    resolved: dict = dataclasses.field(default_factory=dict)

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(
            json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def _lam_tag(lam: float) -> str:
    return f"{lam:g}"


def _split_overrides(items, prefixes):
    """Route ``prefix.key=value`` items to their prefix; the rest go to ''."""
    routed = {p: [] for p in prefixes}
    routed[""] = []
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        head, _, rest = key.partition(".")
        if head in prefixes and rest:
            routed[head].append((rest, value))
        else:
            routed[""].append(item)
    return routed


def _value(text: str):
    if text.startswith("@"):  # value read from a JSON file
        return json.loads(Path(text[1:]).read_text())
    return _parse_value(text)


def _replace(obj, pairs, what: str):
    """``dataclasses.replace`` with string values coerced to field types."""
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, text in pairs:
        if key not in names:
            raise UsageError(f"unknown {what} setting {key!r}")
        cur = getattr(obj, key)
        val = _value(text)
        if isinstance(cur, CostWeights) or (cur is None and key.endswith("weights")):
            val = CostWeights.from_dict(val)
        elif isinstance(cur, CourtesyMode) or key.endswith("mode"):
            val = CourtesyMode.parse(val)
        elif isinstance(cur, tuple):
            val = tuple(val)
        elif isinstance(cur, bool):
            val = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "on")
        elif isinstance(cur, (int, float)) and not isinstance(val, (int, float)):
            raise UsageError(f"{what} setting {key!r} needs a number")
        elif isinstance(cur, float):
            val = float(val)
        changes[key] = val
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {what} settings: {exc}") from exc


def _sim_settings(seed: int) -> SimSettings:
    opt = OptimizerSettings(seed=seed)
    return SimSettings(planner=PlannerSettings(robot=opt, human=opt))


def _scenario(args, extra=()):
    ref = args.scenario or args.scenario_pos
    if not ref:
        raise UsageError("a scenario is required (name or JSON path)")
    items = [f"{k}={v}" for k, v in extra]
    for item in args.set or ():
        k, _, v = item.partition("=")
        if v.startswith("@"):
            v = json.dumps(_value(v))
        items.append(f"{k}={v}")
    if args.mode:
        items.append(f"courtesy.mode={json.dumps(CourtesyMode.parse(args.mode).value)}")
    items.append(f"seed={args.seed}")
    return load_scenario(ref, items)


def _manifest(args, argv, resolved, config_paths=()) -> RunManifest:
    return RunManifest(
        command=args.command, argv=list(argv), config_paths=[str(p) for p in config_paths],
        overrides=list(args.set or ()), seed=args.seed, output_dir=str(_out_dir(args)),
        version=__version__, backend=kernel.BACKEND,
        started=time.strftime("%Y-%m-%dT%H:%M:%S%z"), resolved=resolved)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# commands ---------------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    scenario = _scenario(args)
    out = _out_dir(args)
    _manifest(args, argv, {"scenario": scenario.to_dict()}, _paths(args.scenario_ref)).write(out)
    stem = f"{scenario.name}_{scenario.courtesy.mode.value}_{_lam_tag(scenario.courtesy.lambda_c)}"
    try:
        log = simulate(scenario, _sim_settings(args.seed))
    except SimulationError as exc:
        if exc.log is not None:
            with open(out / f"{stem}.csv", "w", newline="") as fh:
                write_log_csv(exc.log, fh)
        raise
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        write_log_csv(log, fh)
    with open(out / f"{stem}_summary.csv", "w", newline="") as fh:
        write_summary_csv([(scenario.courtesy.lambda_c, log.metrics)], fh)
    m = log.metrics
    print(f"{stem}: merge_order={m.merge_order} clear_first={m.clear_first} "
          f"min_gap={m.min_gap:.3f} human_min_accel={m.human_min_accel:.3f} -> {out}")
    return 0


def _grid(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --lambda-grid {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise UsageError("--lambda-grid needs nonnegative values")
    return vals


def cmd_sweep(args, argv) -> int:
    scenario = _scenario(args)
    grid = _grid(args.lambda_grid)
    out = _out_dir(args)
    _manifest(args, argv, {"scenario": scenario.to_dict(), "lambda_grid": grid},
              _paths(args.scenario_ref)).write(out)
    rows = sweep_lambda(scenario, grid, _sim_settings(args.seed), workers=args.workers)
    path = out / f"{scenario.name}_{scenario.courtesy.mode.value}_sweep.csv"
    with open(path, "w", newline="") as fh:
        write_summary_csv(rows, fh)
    failed = [lam for lam, m in rows if isinstance(m, Exception)]
    print(f"{len(rows)} runs, {len(failed)} failed -> {path}")
    return RUNTIME if failed else 0


def _paths(ref):
    return [ref] if ref and Path(ref).is_file() else []


def _irl_inputs(args, routed):
    """Demos from --demos, --dataset or the synthetic generator."""
    spec = _replace(SyntheticSpec(temperature=1.0), routed["synthetic"], "synthetic")
    theta = CostWeights.from_dict({**SYNTHETIC_THETA.to_dict(),
                                   **{k: float(_value(v)) for k, v in routed["theta"]}})
    dcfg = _replace(DatasetConfig(), routed["dataset"], "dataset")
    resolved = {}
    if args.demos:
        demos = load_demos(args.demos)
        resolved["demos"] = str(args.demos)
    elif args.dataset:
        demos = load_dataset(args.dataset, dcfg)
        resolved["dataset"] = {"path": str(args.dataset), "config": _jsonable(dcfg)}
    else:
        demos, _ = generate_synthetic_demos(theta, theta.lambda_c, args.count, args.seed, spec)
        resolved["synthetic"] = {"theta": theta.to_dict(), "count": args.count,
                                 "spec": _jsonable(spec)}
    return demos, resolved


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, CourtesyMode):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def _irl_config(routed, args, use_courtesy: bool) -> IrlConfig:
    cfg = _replace(IrlConfig(workers=args.workers), routed["irl"], "irl")
    opt = dataclasses.replace(cfg.planner, seed=args.seed)
    return dataclasses.replace(cfg, use_courtesy_feature=use_courtesy, planner=opt)


def cmd_irl_fit(args, argv) -> int:
    routed = _split_overrides(args.set, ("irl", "synthetic", "theta", "dataset"))
    if routed[""]:
        raise UsageError(f"unknown settings {routed['']}")
    variants = {"on": [True], "off": [False], "both": [True, False]}[args.courtesy_feature]
    configs = {use: _irl_config(routed, args, use) for use in variants}
    out = _out_dir(args)
    demos, resolved = _irl_inputs(args, routed)
    resolved["irl"] = {("courtesy" if k else "plain"): _jsonable(c) for k, c in configs.items()}
    _manifest(args, argv, resolved, [p for p in (args.demos, args.dataset) if p]).write(out)
    if not demos:
        raise DataError("no demonstrations to fit")
    train, test = demos, []
    if args.train_size is not None:
        train, test = split_demos(demos, args.train_size, args.seed)
    save_demos(train, out / "train_demos.json")
    if test:
        save_demos(test, out / "test_demos.json")
    rows = []
    for use, cfg in configs.items():
        name = "courtesy" if use else "plain"
        stats = precompute_all(train, cfg)
        result = fit(train, cfg, stats)
        save_weights(result.weights, out / f"weights_{name}.json")
        _write_csv(out / f"curve_{name}.csv", ["epoch", "nll"], enumerate(result.curve))
        rows.append([name, training_loss(result, stats, cfg), result.used, result.skipped,
                     result.epochs, int(result.early_stopped)]
                    + [getattr(result.weights, f) for f in
                       ("theta_g", "theta_d", "theta_acc", "theta_steer", "theta_s", "lambda_c")])
    _write_csv(out / "fit_summary.csv",
               ["variant", "final_nll", "used", "skipped", "epochs", "early_stopped",
                "theta_g", "theta_d", "theta_acc", "theta_steer", "theta_s", "lambda_c"], rows)
    for r in rows:
        print(f"{r[0]}: nll={r[1]:.4f} used={r[2]} skipped={r[3]}")
    return 0


def cmd_irl_eval(args, argv) -> int:
    routed = _split_overrides(args.set, ("irl", "synthetic", "theta", "dataset"))
    if routed[""]:
        raise UsageError(f"unknown settings {routed['']}")
    if not args.weights:
        raise UsageError("--weights needs at least one file")
    weights = {Path(w).stem: load_weights(w) for w in args.weights}
    out = _out_dir(args)
    demos, resolved = _irl_inputs(args, routed)
    cfg = _irl_config(routed, args, True)
    resolved["irl"] = _jsonable(cfg)
    resolved["weights"] = {k: w.to_dict() for k, w in weights.items()}
    _manifest(args, argv, resolved, list(args.weights)).write(out)
    summary = []
    for name, w in weights.items():
        res = evaluate(w, demos, cfg)
        _write_csv(out / f"eval_{name}.csv",
                   ["demo", "med", "gap_error", "min_gap_planned", "min_gap_demo", "ok", "message"],
                   [[r.index, r.med, r.gap_error, r.min_gap_planned, r.min_gap_demo, int(r.ok),
                     r.message] for r in res.rows])
        gap_rows = []
        for r, (gp, gd) in zip([r for r in res.rows if r.ok], res.gaps):
            gap_rows += [[r.index, k, a, b] for k, (a, b) in enumerate(zip(gp, gd))]
        _write_csv(out / f"gaps_{name}.csv", ["demo", "step", "planned", "demonstrated"], gap_rows)
        ok = [r for r in res.rows if r.ok]
        summary.append([name, res.mean_med,
                        float(np.mean([r.gap_error for r in ok])) if ok else float("nan"),
                        len(ok), res.failed])
    _write_csv(out / "ab_summary.csv", ["weights", "mean_med", "mean_gap_error", "n", "failed"],
               summary)
    for s in summary:
        print(f"{s[0]}: mean MED={s[1]:.4f} over {s[3]} demos ({s[4]} failed)")
    return RUNTIME if any(s[3] == 0 for s in summary) else 0


def cmd_rerun(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    rerun_argv = list(manifest["argv"])
    if args.out:
        rerun_argv += ["--out", args.out]
    return main(rerun_argv)


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="courteous", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a setting; repeatable")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        sp.add_argument("--workers", type=int, default=1)

    for name in ("simulate", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("scenario_pos", nargs="?", metavar="SCENARIO")
        sp.add_argument("--scenario", help="built-in name or JSON file")
        sp.add_argument("--mode", choices=[m.value for m in CourtesyMode])
        common(sp)
        if name == "sweep":
            sp.add_argument("--lambda-grid", default="0,1,10,100,1000,10000")

    for name in ("irl-fit", "irl-eval"):
        sp = sub.add_parser(name)
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--demos", help="demonstrations JSON")
        src.add_argument("--dataset", help="NGSIM-style trajectory CSV")
        sp.add_argument("--count", type=int, default=30, help="synthetic demos to generate")
        common(sp)
        if name == "irl-fit":
            sp.add_argument("--courtesy-feature", choices=("on", "off", "both"), default="both")
            sp.add_argument("--train-size", type=int)
        else:
            sp.add_argument("--weights", nargs="+")

    sp = sub.add_parser("rerun")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    return p


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "irl-fit": cmd_irl_fit,
            "irl-eval": cmd_irl_eval, "rerun": cmd_rerun}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        if args.command in ("simulate", "sweep"):
            args.scenario_ref = args.scenario or args.scenario_pos
        return COMMANDS[args.command](args, argv)
    except (UsageError, ScenarioError, DataError, IrlError, json.JSONDecodeError,
            FileNotFoundError) as exc:
        print(f"courteous: error: {exc}", file=sys.stderr)
        return USAGE
    except Exception as exc:  # noqa: BLE001 - runtime failures map to one exit code
        print(f"courteous: failed: {exc}", file=sys.stderr)
        return RUNTIME


if __name__ == "__main__":
    sys.exit(main())
