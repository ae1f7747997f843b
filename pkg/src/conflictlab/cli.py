"""Command-line front end: simulate, train, assess, warn-eval, lanechange-eval, export.

Every run writes a manifest JSON (configuration echo, package version, seed
and wall time) next to its outputs. Data errors exit with code 1 and a
machine-readable error JSON on stderr; usage errors exit with code 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, evaluation, figures, gp, pipeline, synthetic
from .context import TrainingSample
from .evaluation import METRIC_DIRECTIONS, REFERENCE_THRESHOLDS
from .ingestion import (
    DataError,
    ParseError,
    filter_warning_events,
    parse_trajectory_csv,
    read_event_manifest,
    write_event_manifest,
)

ENV_OUT_DIR = "CONFLICTLAB_OUT_DIR"


class CliError(RuntimeError):
    def __init__(self, detail: str, path: str | None = None):
        super().__init__(detail)
        self.path = path


def _r(value) -> str:
    """Shortest round-trip decimal for CSV cells (plain or numpy floats)."""
    return repr(float(value))


def _default_out() -> str | None:
    return os.environ.get(ENV_OUT_DIR)


def _write_manifest(out: Path, command: str, args: argparse.Namespace, started: float, extra=None):
    target = out / "manifest.json" if out.is_dir() else out.with_suffix(out.suffix + ".manifest.json")
    doc = {
        "command": command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "wall_time_s": round(time.time() - started, 3),
        "config": {k: v for k, v in vars(args).items() if k != "func"},
    }
    if extra:
        doc.update(extra)
    target.write_text(json.dumps(doc, indent=2, default=str), encoding="utf-8")


def _load_corpus(data_dir: str, schema: str, frame_rate: float | None):
    data = Path(data_dir)
    csv_path = data / "trajectories.csv"
    if not csv_path.exists():
        raise CliError(f"no trajectories.csv under {data}", path=str(csv_path))
    result = parse_trajectory_csv(csv_path, schema, frame_rate=frame_rate)
    for row, reason in result.rejected_rows:
        print(f"[parse] row {row}: {reason}", file=sys.stderr)
    return result.trajectories


def _load_events(args, trajectories):
    manifest = Path(getattr(args, "events", None) or Path(args.data) / "events.jsonl")
    if not manifest.exists():
        raise CliError(f"no event manifest at {manifest}", path=str(manifest))
    return read_event_manifest(manifest, trajectories)


def _load_model(path: str) -> gp.GPModel:
    model_path = Path(path)
    if not model_path.exists():
        raise CliError(f"model file not found: {model_path}", path=str(model_path))
    return gp.load_model(model_path)


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.preset in synthetic.CONTEXT_PRESETS:
        spec = synthetic.GeneratorSpec(seed=args.seed, preset=args.preset, n_samples=args.samples)
        samples = synthetic.gen_context_corpus(spec)
        dim = samples[0].theta_array().shape[0]
        with (out / "samples.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"theta{j + 1}" for j in range(dim)] + ["log_s"])
            for sample in samples:
                writer.writerow([_r(v) for v in sample.theta_array()] + [_r(sample.log_s)])
        extra = {"n_samples": len(samples), "outputs": ["samples.csv"]}
    elif args.preset in ("encounters", "encounters-lateral"):
        params = synthetic.EncounterParams(
            n_events=args.events,
            lateral_amplitude=1.5 if args.preset.endswith("lateral") else 0.0,
        )
        spec = synthetic.GeneratorSpec(seed=args.seed, encounters=params)
        events = synthetic.gen_encounters(spec)
        _write_trajectories_csv(events, out / "trajectories.csv")
        write_event_manifest(events, out / "events.jsonl", source="trajectories.csv")
        extra = {"n_events": len(events), "outputs": ["trajectories.csv", "events.jsonl"]}
    else:
        raise CliError(f"unknown preset {args.preset!r}")
    _write_manifest(out, "simulate", args, started, extra)
    return 0


def _write_trajectories_csv(events, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "time", "x", "y", "vx", "vy", "ax", "length", "width"])
        seen = set()
        for event in events:
            for traj in (event.ego, event.target):
                if traj.vehicle_id in seen:
                    continue
                seen.add(traj.vehicle_id)
                for s in traj.states:
                    writer.writerow(
                        [traj.vehicle_id] + [_r(v) for v in (
                            s.time, s.position[0], s.position[1],
                            s.velocity[0], s.velocity[1], s.acceleration_long,
                            s.length, s.width,
                        )]
                    )


# -- train -------------------------------------------------------------------

def _load_training_samples(args) -> list[TrainingSample]:
    data = Path(args.data)
    samples_csv = data / "samples.csv"
    if samples_csv.exists():
        frame = pd.read_csv(samples_csv)
        if "log_s" not in frame.columns:
            raise CliError(f"{samples_csv} has no log_s column", path=str(samples_csv))
        feats = frame.drop(columns=["log_s"]).to_numpy(dtype=float)
        return [TrainingSample(theta=feats[i], log_s=float(v))
                for i, v in enumerate(frame["log_s"].to_numpy(dtype=float))]
    trajectories = _load_corpus(args.data, args.schema, args.frame_rate)
    events = _load_events(args, trajectories)
    return pipeline.training_samples_from_events(events)


def cmd_train(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = _load_training_samples(args)
    train_set, val_set, test_set = pipeline.split_three_way(samples, seed=args.seed)
    extra: dict = {"n_train": len(train_set), "n_val": len(val_set), "n_test": len(test_set)}

    if args.mode == "exact":
        model = gp.fit_exact(train_set, seed=args.seed, n_restarts=args.restarts)
    else:
        config = gp.SparseFitConfig(
            lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        )
        model, history = gp.fit_sparse(
            train_set, m=args.m, beta=args.beta, seed=args.seed,
            val_samples=val_set, config=config,
        )
        curves = out.with_name(out.stem + "_curves.csv")
        history.write_csv(curves)
        figures.render_training_curves(history.rows, curves.with_suffix(".png"))
        extra["curves"] = curves.name
        extra["epochs_run"] = len(history.rows)

    gp.save_model(model, out)
    if test_set:
        extra["test_nll"] = gp.evaluate_nll(model, test_set)
    _write_manifest(out, "train", args, started, extra)
    return 0


# -- assess ------------------------------------------------------------------

def cmd_assess(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trajectories = _load_corpus(args.data, args.schema, args.frame_rate)
    events = _load_events(args, trajectories)
    n_values = tuple(float(v) for v in args.n_list.split(","))

    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if args.metric == "unified":
            model = _load_model(args.model)
            header = ["event_id", "time", "s", "mu", "sigma", "exceedance", "n_max"]
            header += [f"p_at_{n:g}" for n in n_values]
            writer.writerow(header)
            for event in events:
                for row in pipeline.unified_rows(event, model, n_values):
                    writer.writerow([row["event_id"]] + [_r(row[k]) for k in header[1:]])
        else:
            writer.writerow(["event_id", "time", "value", "defined"])
            for event in events:
                for s in pipeline.metric_samples(event, args.metric):
                    writer.writerow([event.event_id, _r(s.time), _r(s.value), s.defined])
    _write_manifest(out, "assess", args, started, {"n_events": len(events)})
    return 0


# -- warn-eval ---------------------------------------------------------------

def cmd_warn_eval(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trajectories = _load_corpus(args.data, args.schema, args.frame_rate)
    events = filter_warning_events(_load_events(args, trajectories))
    if len(events) < 2:
        raise CliError("fewer than 2 events survive the warning filter")
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    model = _load_model(args.model) if "unified" in metric_names else None

    labeled = [evaluation.label_event(e) for e in events]
    report: dict = {"n_events": len(events), "metrics": {}}
    curves: dict[str, evaluation.RocResult] = {}
    for name in metric_names:
        samples = [pipeline.metric_samples(e, name, model) for e in events]
        roc = evaluation.sweep_roc(labeled, samples, METRIC_DIRECTIONS[name])
        curves[name] = roc
        outcomes = [
            evaluation.warning_stats(le, s, roc.optimal_threshold, METRIC_DIRECTIONS[name])
            for le, s in zip(labeled, samples)
        ]
        report["metrics"][name] = {
            "direction": METRIC_DIRECTIONS[name],
            "auc": roc.auc,
            "optimal_threshold": roc.optimal_threshold,
            "optimal_point": {"fpr": roc.optimal_point[0], "tpr": roc.optimal_point[1]},
            "degenerate": roc.degenerate,
            "roc_points": [
                {"threshold": t, "fpr": f, "tpr": p} for t, f, p in roc.points
            ],
            "outcomes": [
                {
                    "event_id": o.event_id,
                    "warned": o.warned,
                    "warning_period_pct": o.warning_period_pct,
                    "timeliness": o.timeliness,
                    "window_source": o.window_source,
                }
                for o in outcomes
            ],
        }
    out.write_text(json.dumps(report, indent=2, default=_json_float), encoding="utf-8")
    _export_roc_csv(report, out.with_name(out.stem + "_roc.csv"))
    _export_outcomes_csv(report, out.with_name(out.stem + "_outcomes.csv"))
    if not args.no_figures:
        figures.render_roc(curves, out.with_name(out.stem + "_roc.png"))
    _write_manifest(out, "warn-eval", args, started, {"metrics": metric_names})
    return 0


def _json_float(value):
    if isinstance(value, float) and (math.isinf(value) or math.isnan(value)):
        return repr(value)
    raise TypeError(f"not JSON serialisable: {value!r}")


def _export_roc_csv(report: dict, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "threshold", "fpr", "tpr"])
        for name, block in report["metrics"].items():
            for point in block["roc_points"]:
                writer.writerow([name, _r(point["threshold"]), _r(point["fpr"]), _r(point["tpr"])])


def _export_outcomes_csv(report: dict, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "event_id", "warned", "warning_period_pct", "timeliness", "window_source"])
        for name, block in report["metrics"].items():
            for o in block["outcomes"]:
                writer.writerow([name, o["event_id"], o["warned"],
                                 _r(o["warning_period_pct"]),
                                 "" if o["timeliness"] is None else _r(o["timeliness"]),
                                 o["window_source"]])


# -- lanechange-eval ---------------------------------------------------------

def cmd_lanechange_eval(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trajectories = _load_corpus(args.data, args.schema, args.frame_rate)
    centerlines = [float(v) for v in args.lanes.split(",")]
    model = _load_model(args.model)

    from .ingestion import extract_lane_changes, pair_interactions

    n_lane_changes = sum(
        len(extract_lane_changes(t, centerlines, args.lane_width)) for t in trajectories
    )
    events = pair_interactions(
        trajectories, max_gap=args.max_gap, lane_centerlines=centerlines, lane_width=args.lane_width
    )

    thresholds = {"ttc": args.ttc_threshold, "unified": args.n_threshold}
    episode_rows = []
    moment_values: dict[str, list[float]] = {"ttc": [], "unified": []}
    episode_means: dict[str, list[float]] = {"ttc": [], "unified": []}
    conflict_partition = {"both": 0, "ttc_only": 0, "unified_only": 0, "neither": 0}

    for event in events:
        flags = {}
        for name in ("ttc", "unified"):
            samples = pipeline.metric_samples(event, name, model)
            moment_values[name].extend(s.value for s in samples if s.defined and math.isfinite(s.value))
            episodes = evaluation.conflict_episodes(
                samples, thresholds[name], METRIC_DIRECTIONS[name],
                frame_rate=event.ego.frame_rate, min_duration=args.min_duration,
            )
            flags[name] = bool(episodes)
            for ep in episodes:
                vals = [s.value for s in samples
                        if ep.t_start - 1e-9 <= s.time <= ep.t_end + 1e-9 and s.defined]
                episode_means[name].append(float(np.mean(vals)))
                episode_rows.append({
                    "event_id": event.event_id, "metric": name,
                    "t_start": ep.t_start, "t_end": ep.t_end,
                    "n_frames": ep.n_frames, "peak_value": ep.peak_value,
                })
        if flags["ttc"] and flags["unified"]:
            conflict_partition["both"] += 1
        elif flags["ttc"]:
            conflict_partition["ttc_only"] += 1
        elif flags["unified"]:
            conflict_partition["unified_only"] += 1
        else:
            conflict_partition["neither"] += 1

    fits = {}
    for label, values in (
        ("unified_moments", moment_values["unified"]),
        ("unified_episode_means", episode_means["unified"]),
    ):
        try:
            fit = evaluation.fit_power_law(values)
            fits[label] = {"slope": fit.slope, "intercept": fit.intercept,
                           "r_squared": fit.r_squared, "n_bins": fit.n_bins}
        except evaluation.EvaluationError as exc:
            fits[label] = {"error": str(exc)}

    report = {
        "n_lane_changes": n_lane_changes,
        "n_paired_events": len(events),
        "thresholds": thresholds,
        "conflict_partition": conflict_partition,
        "power_law_fits": fits,
    }
    out.write_text(json.dumps(report, indent=2, default=_json_float), encoding="utf-8")

    episodes_csv = out.with_name(out.stem + "_episodes.csv")
    with episodes_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["event_id", "metric", "t_start", "t_end",
                                                "n_frames", "peak_value"])
        writer.writeheader()
        writer.writerows(episode_rows)

    if not args.no_figures:
        plot_fits = {
            "unified moments": evaluation.fit_power_law(moment_values["unified"])
            if "error" not in fits["unified_moments"] else None,
        }
        figures.render_intensity_histogram(
            {"unified moments": np.asarray(moment_values["unified"])},
            {k: v for k, v in plot_fits.items() if v is not None},
            out.with_name(out.stem + "_intensity.png"),
        )
    _write_manifest(out, "lanechange-eval", args, started,
                    {"n_events": len(events), "n_lane_changes": n_lane_changes})
    return 0


# -- export ------------------------------------------------------------------

def cmd_export(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.kind == "roc":
        report = _read_report(args.report)
        _export_roc_csv(report, out / "roc_points.csv")
    elif args.kind == "outcomes":
        report = _read_report(args.report)
        _export_outcomes_csv(report, out / "warning_outcomes.csv")
    elif args.kind == "curves":
        curves_path = Path(args.curves)
        if not curves_path.exists():
            raise CliError(f"curves file not found: {curves_path}", path=str(curves_path))
        frame = pd.read_csv(curves_path)
        figures.render_training_curves(frame.to_dict("records"), out / "training_curves.png")
    elif args.kind == "heatmap":
        _export_heatmap(args, out)
    else:
        raise CliError(f"unknown export kind {args.kind!r}")
    _write_manifest(out, "export", args, started)
    return 0


def _read_report(path_str: str | None) -> dict:
    if not path_str:
        raise CliError("--report is required for this export kind")
    path = Path(path_str)
    if not path.exists():
        raise CliError(f"report not found: {path}", path=str(path))
    return json.loads(path.read_text(encoding="utf-8"))


def _export_heatmap(args, out: Path) -> None:
    model = _load_model(args.model)
    trajectories = _load_corpus(args.data, args.schema, args.frame_rate)
    events = _load_events(args, trajectories)
    matches = [e for e in events if e.event_id == args.event_id]
    if not matches:
        raise CliError(f"event {args.event_id!r} not in manifest")
    event = matches[0]
    t = args.time if args.time is not None else event.overlap_window[0]
    ego = event.ego.state_at(t)
    target = event.target.state_at(t)
    grid = pipeline.heatmap_grid(ego, target, model, n=args.n, cells=args.cells)

    with (out / "heatmap.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_lat", "y_long", "s", "mu", "sigma", "density", "probability"])
        for i, yl in enumerate(grid["y_long"]):
            for j, xl in enumerate(grid["x_lat"]):
                writer.writerow([
                    _r(xl), _r(yl), _r(math.hypot(xl, yl)),
                    _r(grid["mu"][i, j]), _r(grid["sigma"][i, j]),
                    _r(grid["density"][i, j]), _r(grid["probability"][i, j]),
                ])
    figures.render_heatmap(grid["x_lat"], grid["y_long"], np.nan_to_num(grid["density"]),
                           out / "heatmap_density.png", "proximity density",
                           ego.length, ego.width, log_scale=True)
    figures.render_heatmap(grid["x_lat"], grid["y_long"], grid["probability"],
                           out / "heatmap_probability.png",
                           f"conflict probability (n={args.n:g})", ego.length, ego.width)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conflictlab",
        description="Probabilistic traffic-conflict detection and surrogate-metric benchmarking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_data(p, need_model=False):
        p.add_argument("--data", required=True, help="corpus directory (trajectories.csv [+ events.jsonl])")
        p.add_argument("--events", default=None, help="event manifest JSONL (default: <data>/events.jsonl)")
        p.add_argument("--schema", default="event_like", choices=["event_like", "highd_like"])
        p.add_argument("--frame-rate", type=float, default=None, dest="frame_rate",
                       help="frame rate for highd_like files")
        if need_model:
            p.add_argument("--model", required=True, help="trained model JSON")

    p = sub.add_parser("simulate", help="generate a synthetic corpus")
    p.add_argument("--preset", required=True,
                   help="one of: " + ", ".join(sorted(synthetic.CONTEXT_PRESETS)) + ", encounters, encounters-lateral")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=2000, help="context-corpus size")
    p.add_argument("--events", type=int, default=200, help="encounter-corpus size")
    p.add_argument("--out", default=_default_out(), required=_default_out() is None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the proximity model")
    p.add_argument("--data", required=True)
    p.add_argument("--events", default=None)
    p.add_argument("--schema", default="event_like", choices=["event_like", "highd_like"])
    p.add_argument("--frame-rate", type=float, default=None, dest="frame_rate")
    p.add_argument("--mode", choices=["exact", "sparse"], default="sparse")
    p.add_argument("--m", type=int, default=256, help="inducing point count (sparse)")
    p.add_argument("--beta", type=float, default=5.0, help="KL regularisation weight (sparse)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=2, help="extra optimisation starts (exact)")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=2048, dest="batch_size")
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("assess", help="per-frame metric values over events")
    add_common_data(p)
    p.add_argument("--model", default=None, help="trained model JSON (unified only)")
    p.add_argument("--metric", required=True, choices=["ttc", "drac", "psd", "unified"])
    p.add_argument("--n-list", default="1,17", dest="n_list",
                   help="comma-separated intensities for probability columns")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("warn-eval", help="ROC-based collision-warning comparison")
    add_common_data(p)
    p.add_argument("--model", default=None, help="trained model JSON (needed for unified)")
    p.add_argument("--metrics", default="ttc,drac,psd,unified")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_warn_eval)

    p = sub.add_parser("lanechange-eval", help="episode counting and intensity tails")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default="event_like", choices=["event_like", "highd_like"])
    p.add_argument("--frame-rate", type=float, default=None, dest="frame_rate")
    p.add_argument("--model", required=True)
    p.add_argument("--lanes", required=True, help="comma-separated lane-centreline lateral positions")
    p.add_argument("--lane-width", type=float, default=3.5, dest="lane_width")
    p.add_argument("--max-gap", type=float, default=100.0, dest="max_gap")
    p.add_argument("--ttc-threshold", type=float, default=REFERENCE_THRESHOLDS["ttc"], dest="ttc_threshold")
    p.add_argument("--n-threshold", type=float, default=REFERENCE_THRESHOLDS["unified"], dest="n_threshold")
    p.add_argument("--min-duration", type=float, default=1.0, dest="min_duration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_lanechange_eval)

    p = sub.add_parser("export", help="flatten reports to CSV and render figures")
    p.add_argument("--kind", required=True, choices=["roc", "outcomes", "curves", "heatmap"])
    p.add_argument("--report", default=None, help="report JSON (roc/outcomes)")
    p.add_argument("--curves", default=None, help="training-curves CSV (curves)")
    p.add_argument("--model", default=None, help="model JSON (heatmap)")
    p.add_argument("--data", default=None, help="corpus directory (heatmap)")
    p.add_argument("--events", default=None)
    p.add_argument("--schema", default="event_like", choices=["event_like", "highd_like"])
    p.add_argument("--frame-rate", type=float, default=None, dest="frame_rate")
    p.add_argument("--event-id", default=None, dest="event_id")
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--n", type=float, default=17.0, help="intensity for the probability heatmap")
    p.add_argument("--cells", type=int, default=81)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_out(), required=_default_out() is None,
                   help="output directory")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ParseError, DataError, gp.GPFitError, evaluation.EvaluationError,
            ValueError, OSError) as exc:
        payload = {"error": type(exc).__name__, "detail": str(exc)}
        path = getattr(exc, "path", None) or getattr(exc, "filename", None)
        if path:
            payload["path"] = str(path)
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
