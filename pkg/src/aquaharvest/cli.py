"""Command-line entry point: ``aquaharvest <subcommand>``.

Subcommands: ``simulate``, ``ingest``, ``calibrate lambda|beta``, ``solve``,
``compare`` and ``pipeline``. Every command writes its outputs plus a
``manifest.json`` (config snapshot, seeds, versions, outputs, wall-times)
under ``--out-dir``. The exit status is non-zero exactly when a stage
rejected its input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__
from . import rng as rngmod
from .calibrate import euler_grid, fit_beta, fit_lambda, model_lice_per_fish
from .config import Config, ConfigError, config_from_dict, load_config
from .ingest import (
    RemovalDistribution,
    extract_green_segments,
    load_distributions,
    load_segments,
    parse_lice_file,
    removal_distribution_at,
    save_distributions,
    save_segments,
    select_mechanical_only_periods,
    write_lice_file,
)
from .scenario import (
    compare_on_world,
    evaluate_on_world,
    exercise_indices,
    simulate_mean_model,
    simulate_world,
    train_rule,
)
from .stopping import StoppingRule

log = logging.getLogger("aquaharvest")

HISTOGRAM_TIMES = (1.09, 1.77)


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' rejected its input: {cause}")


class RunManifest:
    """Bookkeeping for one run; written as ``manifest.json``."""

    def __init__(self, out_dir: Path, command: str, cfg: Config):
        self.out_dir = out_dir
        self.data: dict[str, Any] = {
            "command": command,
            "config": cfg.to_dict(),
            "seeds": {"seed": cfg.globals.seed},
            "versions": {
                "aquaharvest": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "outputs": [],
            "wall_times": {},
            "status": "running",
        }

    def output(self, path: Path) -> Path:
        self.data["outputs"].append(str(path.relative_to(self.out_dir)))
        return path

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        log.info("stage %s ...", name)
        try:
            yield
        except (ValueError, OSError, KeyError) as exc:
            self.data["status"] = "failed"
            self.data["failed_stage"] = name
            self.data["error"] = str(exc)
            raise StageError(name, exc) from exc
        finally:
            self.data["wall_times"][name] = round(time.perf_counter() - t0, 3)

    def write(self, status: str | None = None) -> None:
        if status:
            self.data["status"] = status
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "manifest.json").write_text(json.dumps(self.data, indent=1))


def _dump(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"cannot serialise {type(o)}")


def _config_from_args(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    glob = cfg.globals
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "paths", None) is not None:
        changes["n_paths"] = args.paths
    if getattr(args, "eval_paths", None) is not None:
        changes["n_eval_paths"] = args.eval_paths
    if getattr(args, "mean_paths", None) is not None:
        changes["n_mean_paths"] = args.mean_paths
    if changes:
        cfg = cfg.replace(globals=dataclasses.replace(glob, **changes))
    if getattr(args, "region", None):
        cfg = cfg.replace(ingest=dataclasses.replace(cfg.ingest, region=args.region))
    return cfg


# --- simulate ------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out, "simulate", cfg)
    try:
        with man.stage("simulate"):
            mean_model = simulate_mean_model(cfg)
            world = simulate_world(cfg, rngmod.EVAL, cfg.globals.n_paths, mean_model, keep_sample=args.sample)
        with man.stage("write"):
            for name in ("s1", "d1", "s2", "d2", "host", "parasite", "removals"):
                np.save(man.output(out / f"{name}.npy"), getattr(world, name))
            np.save(man.output(out / "exercise_dates.npy"), world.exercise_dates)
            _write_sample_paths(world.sample_paths, man.output(out / "host_parasite_sample.csv"))
            summary = simulation_summary(world, mean_model)
            _dump(man.output(out / "summary.json"), summary)
    except StageError as exc:
        man.write()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    man.write("ok")
    print(json.dumps(summary, indent=1))
    return 0


def simulation_summary(world, mean_model) -> dict[str, Any]:
    grid = mean_model.grid
    k = int(np.searchsorted(grid, 1.77 + 1e-12, side="right") - 1)
    n177 = mean_model.removals[:, k]
    return {
        "n_paths": world.n_paths,
        "source": world.source,
        "mean_removals_t1.77": float(n177.mean()),
        "std_removals_t1.77": float(n177.std()),
        "mean_removals_T": float(world.removals[:, -1].mean()),
        "mean_host_T": float(world.host[:, -1].mean()),
        "mean_salmon_spot_T": float(world.s1[:, -1].mean()),
    }


def _write_sample_paths(sample: dict[str, np.ndarray], path: Path) -> None:
    rows = ["path,t,host,parasite,lice_per_fish"]
    if sample:
        for i in range(sample["host"].shape[0]):
            for t, h, p in zip(sample["grid"], sample["host"][i], sample["parasite"][i]):
                rows.append(f"{i},{t:.10g},{h:.10g},{p:.10g},{p / h:.10g}")
    path.write_text("\n".join(rows) + "\n")


# --- ingest / calibrate -----------------------------------------------------------------


def _ingest(cfg: Config, data_file: Path, out: Path, man: RunManifest):
    with man.stage("ingest"):
        records = parse_lice_file(data_file)
        periods = select_mechanical_only_periods(records, cfg.ingest.region, cfg.ingest.gap_weeks)
        if not periods:
            raise ValueError(f"no mechanical-only farming periods in region {cfg.ingest.region!r}")
        segments = extract_green_segments(periods, cfg.ingest.min_segment_points)
        times = sorted(set(HISTOGRAM_TIMES) | set(cfg.calibration.t_match))
        dists = [removal_distribution_at(periods, t) for t in times]
        save_segments(segments, man.output(out / "green_segments.csv"))
        save_distributions(dists, man.output(out / "removal_distributions.json"))
        man.data["ingest"] = {"n_records": len(records), "n_periods": len(periods), "n_segments": len(segments)}
    return periods, segments, dists


def cmd_ingest(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out, "ingest", cfg)
    try:
        _ingest(cfg, Path(args.input), out, man)
    except StageError as exc:
        man.write()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    man.write("ok")
    print(json.dumps(man.data["ingest"]))
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config_from_args(args)
    out_file = Path(args.out)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out_file.parent, f"calibrate {args.what}", cfg)
    grid = euler_grid(cfg.globals.T, cfg.globals.n_exercise)
    try:
        with man.stage(f"calibrate-{args.what}"):
            if args.what == "lambda":
                segments = load_segments(args.segments)
                res = fit_lambda(segments, cfg.bio, grid, cfg.calibration.lambda_max)
                inputs = {"segments": str(args.segments)}
            else:
                dists = load_distributions(args.target)
                if args.t is not None:
                    dists = [d for d in dists if abs(d.t - args.t) < 1e-9]
                else:
                    wanted = cfg.calibration.t_match
                    dists = [d for d in dists if any(abs(d.t - t) < 1e-9 for t in wanted)] or dists[-1:]
                if not dists:
                    raise ValueError("target file has no distribution at the requested time")
                bio = cfg.bio if args.lambda_rep is None else dataclasses.replace(cfg.bio, lambda_rep=args.lambda_rep)
                res = fit_beta(
                    dists, bio, cfg.threshold, grid, n_paths=args.paths, zeta=args.zeta, seed=cfg.globals.seed,
                    beta_max=cfg.calibration.beta_max,
                )
                inputs = {"target": str(args.target), "lambda_rep": bio.lambda_rep}
            payload = {"result": dataclasses.asdict(res), "inputs": inputs, "config": cfg.to_dict()}
            _dump(man.output(out_file), payload)
    except StageError as exc:
        man.write()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    man.write("ok")
    print(json.dumps(dataclasses.asdict(res), default=_json_default))
    return 0


# --- solve / compare ------------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    if args.c_tr is not None:
        cfg = cfg.replace(costs=dataclasses.replace(cfg.costs, c_tr=args.c_tr))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out.parent, "solve", cfg)
    try:
        with man.stage("simulate"):
            mean_model = simulate_mean_model(cfg)
            train = simulate_world(cfg, rngmod.TRAIN, cfg.globals.n_paths, mean_model)
        with man.stage("solve"):
            rule = train_rule(train, cfg, args.mode, args.feeding, mean_model)
        summary: dict[str, Any] = {"in_sample_value": rule.in_sample_value, "mode": rule.mode}
        if cfg.globals.n_eval_paths > 0 and not args.no_eval:
            with man.stage("evaluate"):
                world = simulate_world(cfg, rngmod.EVAL, cfg.globals.n_eval_paths, mean_model)
                ev = evaluate_on_world(rule, world, cfg, args.mode, args.feeding, mean_model)
                summary.update(V0=ev.v0, stderr=ev.stderr, mean_tau=ev.mean_tau, n_eval_paths=world.n_paths)
        rule.provenance["evaluation"] = summary
        rule.save(man.output(out))
    except StageError as exc:
        man.write()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    man.write("ok")
    print(json.dumps(summary))
    return 0


def cmd_compare(args) -> int:
    rules = [StoppingRule.load(p) for p in args.rules]
    cfgs = [config_from_dict(r.provenance["config"]) for r in rules]
    feedings = {r.provenance["feeding"] for r in rules}
    try:
        if len(feedings) != 1:
            raise ValueError(f"rules use different feeding models {sorted(feedings)}")
        by_mode = {r.provenance["mortality"]: r for r in rules}
        if set(by_mode) != {"stoch", "determ"}:
            raise ValueError("compare needs one stochastic-mortality and one deterministic-mortality rule")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    base = cfgs[0]
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.eval_paths is not None:
        changes["n_eval_paths"] = args.eval_paths
    cfg = base.replace(globals=dataclasses.replace(base.globals, **changes)) if changes else base
    c_tr = by_mode["stoch"].provenance.get("c_tr", cfg.costs.c_tr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out.parent, "compare", cfg)
    feeding = feedings.pop()
    try:
        with man.stage("simulate"):
            # the deterministic model's mean curves come from the rules' own configuration
            mean_model = simulate_mean_model(cfgs[0])
            world = simulate_world(cfg, rngmod.EVAL, cfg.globals.n_eval_paths, mean_model)
        with man.stage("compare"):
            report = compare_on_world(by_mode["stoch"], by_mode["determ"], world, cfg, feeding, mean_model, c_tr)
            payload = {"feeding": feeding, "c_tr": c_tr, **report.to_dict()}
            _dump(man.output(out), payload)
            np.save(man.output(out.with_suffix(".tau_diff.npy")), report.tau_diff)
    except StageError as exc:
        man.write()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    man.write("ok")
    print(json.dumps(payload, indent=1))
    return 0


# --- pipeline -------------------------------------------------------------------------


def run_pipeline(cfg: Config, out: Path, data_file: Path | None, synthetic: bool, feedings=("stoch", "determ")):
    """ingest -> calibrate -> simulate -> solve (both rules) -> compare.

    Returns the result dictionary and writes the report and plot data under
    ``out``. Raises :class:`StageError` naming the failing stage.
    """
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out, "pipeline", cfg)
    try:
        if synthetic:
            from .synthetic import generate_lice_records

            with man.stage("synthesize"):
                data_file = out / "synthetic_lice.csv"
                write_lice_file(generate_lice_records(cfg, seed=cfg.globals.seed), man.output(data_file))
        if data_file is None:
            with man.stage("ingest"):
                raise ValueError("no lice data file given (use --data or --synthetic)")
        periods, segments, dists = _ingest(cfg, Path(data_file), out, man)

        grid = euler_grid(cfg.globals.T, cfg.globals.n_exercise)
        with man.stage("calibrate-lambda"):
            lam = fit_lambda(segments, cfg.bio, grid, cfg.calibration.lambda_max)
            bio = dataclasses.replace(cfg.bio, lambda_rep=lam.lambda_rep)
        with man.stage("calibrate-beta"):
            targets = [d for d in dists if any(abs(d.t - t) < 1e-9 for t in cfg.calibration.t_match)]
            beta = fit_beta(
                targets, bio, cfg.threshold, grid, n_paths=cfg.calibration.n_paths, zeta=cfg.calibration.zeta,
                seed=cfg.globals.seed, beta_max=cfg.calibration.beta_max,
            )
            bio = dataclasses.replace(bio, beta1=beta.beta1, beta2=beta.beta2)
            cfg = cfg.replace(bio=bio)
            man.data["config"] = cfg.to_dict()
            _dump(man.output(out / "calibration.json"), {"lambda": lam, "beta": beta})

        with man.stage("simulate"):
            mean_model = simulate_mean_model(cfg)
            train = simulate_world(cfg, rngmod.TRAIN, cfg.globals.n_paths, mean_model)
            world = simulate_world(cfg, rngmod.EVAL, cfg.globals.n_eval_paths, mean_model, keep_sample=5)

        reports = {}
        for feeding in feedings:
            with man.stage(f"solve-{feeding}"):
                rule_s = train_rule(train, cfg, "stoch", feeding, mean_model)
                rule_d = train_rule(train, cfg, "determ", feeding, mean_model)
                rule_s.save(man.output(out / f"rule_stoch_{feeding}.json"))
                rule_d.save(man.output(out / f"rule_determ_{feeding}.json"))
            with man.stage(f"compare-{feeding}"):
                rep = compare_on_world(rule_s, rule_d, world, cfg, feeding, mean_model)
                reports[feeding] = rep.to_dict()
                np.save(man.output(out / f"tau_diff_{feeding}.npy"), rep.tau_diff)

        with man.stage("plot-data"):
            _write_plot_data(out, man, cfg, segments, dists, mean_model, world)
        result = {"calibration": {"lambda": lam.lambda_rep, "beta1": beta.beta1, "beta2": beta.beta2}, **reports}
        _dump(man.output(out / "report.json"), result)
    except StageError:
        man.write()
        raise
    man.write("ok")
    return result


def _write_plot_data(out: Path, man: RunManifest, cfg: Config, segments, dists, mean_model, world) -> None:
    grid = mean_model.grid
    rows = ["source,segment,t,lice_per_fish"]
    for i, s in enumerate(segments):
        rows += [f"data,{i},{t:.10g},{v:.10g}" for t, v in zip(s.times, s.lpf)]
    t_max = max((float(s.times[-1]) for s in segments), default=1.0)
    model_t = grid[grid <= t_max + 1e-12]
    rows += [f"model,-1,{t:.10g},{v:.10g}" for t, v in zip(model_t, model_lice_per_fish(cfg.bio, grid, model_t))]
    man.output(out / "lice_per_fish_trajectories.csv").write_text("\n".join(rows) + "\n")

    for t in HISTOGRAM_TIMES:
        data = next((d for d in dists if abs(d.t - t) < 1e-9), None)
        k = int(np.searchsorted(grid, t + 1e-12, side="right") - 1)
        model = RemovalDistribution.from_counts(t, mean_model.removals[:, k])
        mv, mf = model.histogram()
        dv, df = data.histogram() if data is not None else (np.zeros(0, int), np.zeros(0))
        n = max(mv.size, dv.size)
        mf = np.pad(mf, (0, n - mf.size))
        df = np.pad(df, (0, n - df.size))
        lines = ["count,data_freq,model_freq"] + [f"{c},{df[c]:.10g},{mf[c]:.10g}" for c in range(n)]
        man.output(out / f"removal_histogram_t{t:.2f}.csv").write_text("\n".join(lines) + "\n")

    _write_sample_paths(world.sample_paths, man.output(out / "host_parasite_sample.csv"))


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out_dir)
    try:
        result = run_pipeline(cfg, out, Path(args.data) if args.data else None, args.synthetic)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=1, default=_json_default))
    return 0


# --- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aquaharvest", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, paths=True):
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--seed", type=int)
        if paths:
            sp.add_argument("--paths", type=int, help="training / simulation path count")
            sp.add_argument("--eval-paths", type=int, dest="eval_paths")
            sp.add_argument("--mean-paths", type=int, dest="mean_paths")

    sp = sub.add_parser("simulate", help="simulate commodity and host-parasite paths")
    common(sp)
    sp.add_argument("--out-dir", default="runs/simulate")
    sp.add_argument("--sample", type=int, default=5, help="full fine-grid paths kept for plotting")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("ingest", help="select farming periods and extract calibration data")
    common(sp, paths=False)
    sp.add_argument("--input", required=True)
    sp.add_argument("--region")
    sp.add_argument("--out-dir", default="runs/ingest")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("calibrate", help="fit lambda or the beta parameters")
    csub = sp.add_subparsers(dest="what", required=True)
    sl = csub.add_parser("lambda")
    common(sl, paths=False)
    sl.add_argument("--segments", required=True)
    sl.add_argument("--out", required=True)
    sl.set_defaults(func=cmd_calibrate)
    sb = csub.add_parser("beta")
    common(sb, paths=False)
    sb.add_argument("--target", required=True)
    sb.add_argument("--lambda", type=float, dest="lambda_rep")
    sb.add_argument("--zeta", type=float, default=2.0)
    sb.add_argument("--paths", type=int, default=1000)
    sb.add_argument("--t", type=float, help="match time (default: config t_match)")
    sb.add_argument("--out", required=True)
    sb.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("solve", help="train a stopping rule")
    common(sp)
    sp.add_argument("--mode", choices=("stoch", "determ"), required=True, help="mortality model")
    sp.add_argument("--feeding", choices=("stoch", "determ"), default="stoch")
    sp.add_argument("--c-tr", type=float, dest="c_tr")
    sp.add_argument("--no-eval", action="store_true")
    sp.add_argument("--out", default="runs/rule.json")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("compare", help="compare two rules on a common stochastic world")
    sp.add_argument("--rules", nargs=2, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--eval-paths", type=int, dest="eval_paths")
    sp.add_argument("--out", default="runs/compare.json")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("pipeline", help="full ingest-to-comparison run")
    common(sp)
    sp.add_argument("--data", help="weekly lice export")
    sp.add_argument("--synthetic", action="store_true", help="use model-generated lice data")
    sp.add_argument("--region")
    sp.add_argument("--out-dir", default="runs/pipeline")
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
