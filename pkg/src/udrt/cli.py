"""Command-line entry points: simulate, train, run, bench, serve."""

from __future__ import annotations

import argparse
import json
import sys
import threading
from pathlib import Path
from typing import NoReturn

from . import pipeline as pl
from . import training
from .decision import ReviewStore, RetrainingSet, Thresholds, decision_to_json
from .simulator import RunConfig, generate_run, read_truth, write_truth
from .udfg import header_from_stream, read_udfg, write_udfg


class CliError(Exception):
    pass


def _fail(message: str) -> NoReturn:
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(2)


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau-conf", type=float, default=0.85,
                   help="confidence threshold for auto-acceptance")
    p.add_argument("--tau-margin", type=float, default=0.20,
                   help="margin threshold for auto-acceptance")


def _thresholds(args) -> Thresholds:
    if not 0 <= args.tau_conf <= 1 or not 0 <= args.tau_margin <= 1:
        raise CliError("thresholds must lie in [0, 1]")
    return Thresholds(tau_conf=args.tau_conf, tau_margin=args.tau_margin)


def _check_speed(speed: float) -> float:
    if not 0 < speed <= 110:
        raise CliError(f"speed-kmh must be in (0, 110], got {speed}")
    return speed


def cmd_simulate(args) -> int:
    try:
        config = RunConfig(
            length_m=args.length_m,
            speed_kmh=_check_speed(args.speed_kmh),
            pulse_pitch_mm=args.pulse_pitch_mm,
            depth_samples=args.depth_samples,
            noise_sigma=args.noise_sigma,
            defect_density_per_km=args.density_per_km,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(str(exc))
    stream, truth = generate_run(config)
    out = Path(args.out)
    count = write_udfg(out, header_from_stream(stream), stream.columns)
    truth_path = out.with_suffix(".truth.jsonl")
    write_truth(truth_path, truth)
    print(
        f"wrote {count} firing records to {out} "
        f"({len(truth)} indications, truth in {truth_path})"
    )
    return 0


def cmd_train(args) -> int:
    warm = None
    if args.warm_start:
        warm = training.load_model_bank(args.models)
    datasets: dict[int, list] = {g.group_id: [] for g in training.FUSION_GROUPS}
    if args.udfg:
        if not Path(args.udfg).exists():
            raise CliError(f"no such file: {args.udfg}")
        truth_path = args.truth or str(Path(args.udfg).with_suffix(".truth.jsonl"))
        if not Path(truth_path).exists():
            raise CliError(f"no such truth file: {truth_path}")
        stream = read_udfg(args.udfg)
        truth = read_truth(truth_path)
        datasets = training.build_group_datasets(
            stream, truth, seed=args.seed
        )
    if args.retraining_dir:
        extra = RetrainingSet(args.retraining_dir)
        for g in training.FUSION_GROUPS:
            datasets[g.group_id].extend(extra.as_dataset(g.group_id))
    if all(len(v) == 0 for v in datasets.values()):
        raise CliError(
            "nothing to train on: give --udfg and/or --retraining-dir"
        )
    settings = training.TrainSettings(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        jitter_px=args.jitter_px,
    )
    sizes = {gid: len(data) for gid, data in datasets.items()}
    print(f"training on {sizes} windows per group")
    models = training.train_group_models(
        datasets,
        settings,
        warm=warm,
        log=(lambda gid, epoch, loss: print(
            f"  G{gid} epoch {epoch:3d} loss {loss:.4f}"
        )) if args.verbose else None,
    )
    training.save_model_bank(models, args.models)
    for gid in sorted(models):
        meta = models[gid].metadata
        print(
            f"G{gid}: trained on {sizes.get(gid, 0)} windows, "
            f"final loss {meta.get('final_loss'):.4f}"
            if meta.get("final_loss") is not None
            else f"G{gid}: kept warm-start weights"
        )
    print(f"model bank written to {args.models}")
    return 0


def _open_stream(args):
    if not Path(args.udfg).exists():
        raise CliError(f"no such file: {args.udfg}")
    return read_udfg(args.udfg)


def cmd_run(args) -> int:
    stream = _open_stream(args)
    models = training.load_model_bank(args.models)
    store = ReviewStore(
        RetrainingSet(args.retraining_dir) if args.retraining_dir else None
    )
    out = open(args.out, "w", encoding="utf-8") if args.out else None
    write_lock = threading.Lock()

    def on_decision(decision):
        if out is not None:
            with write_lock:
                out.write(json.dumps(decision_to_json(decision)) + "\n")

    p = pl.Pipeline(
        models,
        thresholds=_thresholds(args),
        review_store=store,
        on_decision=on_decision,
    )
    try:
        summary = p.run(stream)
    finally:
        if out is not None:
            out.close()
    print(
        f"processed {summary.columns} columns in {summary.wall_s:.1f} s "
        f"({summary.sustained_columns_per_s:,.0f} columns/s)"
    )
    print(f"decisions: {summary.metrics.decisions_by_status}")
    if args.metrics:
        Path(args.metrics).write_text(
            json.dumps(summary.metrics.to_json(), indent=2) + "\n",
            encoding="utf-8",
        )
        print(f"metrics written to {args.metrics}")
    return 0


def cmd_bench(args) -> int:
    stream = _open_stream(args)
    models = training.load_model_bank(args.models)
    report = pl.bench(
        stream,
        models,
        speed_kmh=_check_speed(args.speed_kmh),
        thresholds=_thresholds(args),
    )
    verdict = "PASS" if report.passed else "FAIL"
    print(
        f"{verdict}: {report.achieved_columns_per_s:,.0f} columns/s achieved "
        f"vs {report.required_columns_per_s:,.0f} required; "
        f"p95 window latency {report.latency_ms['p95']:.2f} ms "
        f"vs {report.stride_period_ms:.2f} ms budget; "
        f"max producer lag {report.max_pace_lag_s * 1e3:.1f} ms; "
        f"threads={report.threads}"
    )
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8"
        )
        print(f"report written to {args.report}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import Broadcaster, ServiceHub, create_app, mount_ui

    stream = _open_stream(args)
    models = training.load_model_bank(args.models)
    store = ReviewStore(
        RetrainingSet(args.retraining_dir) if args.retraining_dir else None
    )
    broadcaster = Broadcaster()
    p = pl.Pipeline(
        models,
        thresholds=_thresholds(args),
        review_store=store,
        on_decision=broadcaster.publish,
    )
    hub = ServiceHub(
        review_store=store,
        metrics_provider=lambda: p.metrics.snapshot(
            len(stream.channels)
        ).to_json(),
        broadcaster=broadcaster,
    )
    app = create_app(hub)
    if args.ui_dir:
        if not Path(args.ui_dir).is_dir():
            raise CliError(f"no such UI directory: {args.ui_dir}")
        mount_ui(app, args.ui_dir)

    pace = None
    if args.speed_kmh is not None:
        pace = pl.required_columns_per_s(
            _check_speed(args.speed_kmh), stream.pulse_pitch_mm
        )

    worker = threading.Thread(
        target=lambda: p.run(stream, pace_columns_per_s=pace),
        name="udrt-pipeline",
        daemon=True,
    )
    worker.start()
    print(f"pipeline started; serving API on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udrt",
        description=(
            "Real-time decoding of multi-channel ultrasonic rail "
            "defectograms: simulate runs, train the classifier bank, "
            "decode recordings, benchmark, and serve the review API."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic .udfg run")
    p.add_argument("--length-m", type=float, required=True)
    p.add_argument("--speed-kmh", type=float, default=110.0)
    p.add_argument("--pulse-pitch-mm", type=float, default=1.0)
    p.add_argument("--depth-samples", type=int, default=128)
    p.add_argument("--noise-sigma", type=float, default=0.02)
    p.add_argument("--density-per-km", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .udfg path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the five-group model bank")
    p.add_argument("--models", required=True, help="model bank directory")
    p.add_argument("--udfg", help="training run (.udfg)")
    p.add_argument("--truth", help="ground truth (.truth.jsonl)")
    p.add_argument("--retraining-dir", help="expert retraining set directory")
    p.add_argument("--warm-start", action="store_true",
                   help="start from the existing bank in --models")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--jitter-px", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="decode a .udfg recording")
    p.add_argument("--udfg", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", help="decisions.jsonl path")
    p.add_argument("--metrics", help="metrics JSON path")
    p.add_argument("--retraining-dir")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="real-time throughput benchmark")
    p.add_argument("--udfg", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--speed-kmh", type=float, default=110.0)
    p.add_argument("--report", help="write the JSON report here")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the pipeline plus the review API")
    p.add_argument("--udfg", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--speed-kmh", type=float, default=None,
                   help="replay paced at this platform speed (default: full rate)")
    p.add_argument("--retraining-dir")
    p.add_argument("--ui-dir", help="serve a built review console from /ui")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _fail(str(exc))
    except (FileNotFoundError, ValueError) as exc:
        _fail(str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
