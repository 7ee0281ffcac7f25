"""Streaming pipeline: ingest -> fuse -> classifier bank -> decisions.

Three stage threads hand windows through bounded queues; a full queue
blocks the producer instead of dropping data, because flaw detection must
be lossless. The classifier bank fans the five group inferences out to a
worker pool when the thread budget allows, and falls back to in-thread
serial execution on small machines (the verdicts are identical either
way; the networks are pure functions).

The benchmark replays a recorded run at the wall-clock column rate implied
by a platform speed and reports whether the pipeline sustained it.
"""

from __future__ import annotations

import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classifier import ModelParams, Verdict, forward
from .decision import (
    DecisionMerger,
    DecisionStatus,
    ReviewStore,
    Thresholds,
    TrackDecision,
    compose,
)
from .ingest import ColumnStream, FrameAssembler, FrameWindow, apparent_depth
from .preprocess import TARGET_HW, FusedInput, fuse

_SENTINEL = None
_PACE_CHUNK = 128  # columns between pacing checks


def thread_budget() -> int:
    """Worker-parallelism cap: UDRT_THREADS, else the CPU count."""
    raw = os.environ.get("UDRT_THREADS", "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"UDRT_THREADS must be an integer, got {raw!r}")
        if value < 1:
            raise ValueError(f"UDRT_THREADS must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def _percentiles(samples: list[float]) -> dict[str, float]:
    if not samples:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
    arr = np.asarray(samples)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return {"p50": float(p50), "p95": float(p95), "p99": float(p99)}


@dataclass
class PipelineMetrics:
    """Snapshot of pipeline counters; all counters are monotone in-run."""

    columns_in: int
    windows_emitted: int
    frames_emitted: int
    decisions_by_status: dict[str, int]
    columns_per_s: float
    frames_per_s: float
    stage_latency_ms: dict[str, dict[str, float]]
    queue_depth: dict[str, int]
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "columns_in": self.columns_in,
            "windows_emitted": self.windows_emitted,
            "frames_emitted": self.frames_emitted,
            "decisions_by_status": self.decisions_by_status,
            "columns_per_s": self.columns_per_s,
            "frames_per_s": self.frames_per_s,
            "stage_latency_ms": self.stage_latency_ms,
            "queue_depth": self.queue_depth,
            "elapsed_s": self.elapsed_s,
        }


class MetricsCollector:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.columns_in = 0
        self.windows = 0
        self.decisions: dict[str, int] = {s.value: 0 for s in DecisionStatus}
        self.fuse_ms: list[float] = []
        self.classify_ms: list[float] = []
        self.decide_ms: list[float] = []
        self.window_ms: list[float] = []
        self.started = time.monotonic()
        self.finished: float | None = None
        self._queues: dict[str, queue.Queue] = {}

    def attach_queues(self, **queues: queue.Queue) -> None:
        self._queues = queues

    def add_columns(self, n: int) -> None:
        with self._lock:
            self.columns_in += n

    def add_window(self, fuse_ms, classify_ms, decide_ms, total_ms) -> None:
        with self._lock:
            self.windows += 1
            self.fuse_ms.append(fuse_ms)
            self.classify_ms.append(classify_ms)
            self.decide_ms.append(decide_ms)
            self.window_ms.append(total_ms)

    def add_decision(self, decision: TrackDecision) -> None:
        with self._lock:
            self.decisions[decision.status.value] += 1

    def mark_finished(self) -> None:
        with self._lock:
            self.finished = time.monotonic()

    def snapshot(self, channel_count: int = 7) -> PipelineMetrics:
        with self._lock:
            end = self.finished if self.finished is not None else time.monotonic()
            elapsed = max(end - self.started, 1e-9)
            return PipelineMetrics(
                columns_in=self.columns_in,
                windows_emitted=self.windows,
                frames_emitted=self.windows * channel_count,
                decisions_by_status=dict(self.decisions),
                columns_per_s=self.columns_in / elapsed,
                frames_per_s=self.windows * channel_count / elapsed,
                stage_latency_ms={
                    "fuse": _percentiles(self.fuse_ms),
                    "classify": _percentiles(self.classify_ms),
                    "decide": _percentiles(self.decide_ms),
                    "window_total": _percentiles(self.window_ms),
                },
                queue_depth={
                    name: q.qsize() for name, q in self._queues.items()
                },
                elapsed_s=elapsed,
            )


def estimate_depth_mm(fused: FusedInput) -> float:
    """Apparent depth of the strongest row of a fused window."""
    row_energy = fused.planes.sum(axis=(0, 2))
    row = int(np.argmax(row_energy))
    return apparent_depth(row, fused.planes.shape[1])


def classify_window(
    models: dict[int, ModelParams],
    fused_inputs: list[FusedInput],
    pool: ThreadPoolExecutor | None = None,
) -> list[Verdict]:
    """Run the five group classifiers; concurrently when given a pool."""
    if pool is None:
        return [forward(models[f.group_id], f) for f in fused_inputs]
    futures = [
        pool.submit(forward, models[f.group_id], f) for f in fused_inputs
    ]
    return [f.result() for f in futures]


@dataclass
class RunSummary:
    decisions: list[TrackDecision]
    metrics: PipelineMetrics
    wall_s: float
    columns: int
    sustained_columns_per_s: float
    max_pace_lag_s: float = 0.0


class Pipeline:
    """Owns the stage threads and shared state for one run."""

    def __init__(
        self,
        models: dict[int, ModelParams],
        *,
        thresholds: Thresholds = Thresholds(),
        review_store: ReviewStore | None = None,
        on_decision: Callable[[TrackDecision], None] | None = None,
        threads: int | None = None,
        queue_capacity: int = 4,
        frame_width: int = 512,
        target_hw: tuple[int, int] = TARGET_HW,
    ) -> None:
        self.models = models
        self.thresholds = thresholds
        self.review_store = review_store if review_store is not None else ReviewStore()
        self.on_decision = on_decision
        self.threads = threads if threads is not None else thread_budget()
        self.queue_capacity = queue_capacity
        self.frame_width = frame_width
        self.target_hw = target_hw
        self.metrics = MetricsCollector()
        self.max_pace_lag_s = 0.0
        self._stop = threading.Event()
        self._errors: list[BaseException] = []

    # queue helpers that keep responding to the stop flag

    def _put(self, q: queue.Queue, item) -> None:
        while not self._stop.is_set():
            try:
                q.put(item, timeout=0.2)
                return
            except queue.Full:
                continue
        raise RuntimeError("pipeline stopped")

    def _get(self, q: queue.Queue):
        while not self._stop.is_set():
            try:
                return q.get(timeout=0.2)
            except queue.Empty:
                continue
        raise RuntimeError("pipeline stopped")

    def _guard(self, fn, *args) -> None:
        try:
            fn(*args)
        except BaseException as exc:  # propagate to the orchestrator
            self._errors.append(exc)
            self._stop.set()

    def _ingest_loop(
        self, stream: ColumnStream, q_out: queue.Queue,
        pace_columns_per_s: float | None,
    ) -> None:
        assembler = FrameAssembler(
            stream.channels,
            stream.depth_samples,
            width=self.frame_width,
            max_raw=stream.max_raw,
            pulse_pitch_mm=stream.pulse_pitch_mm,
        )
        start = time.monotonic()
        pushed = 0
        for column in stream.columns:
            if self._stop.is_set():
                raise RuntimeError("pipeline stopped")
            windows = assembler.push_column(column)
            pushed += 1
            for window in windows:
                window.ready_at = time.monotonic()
                self._put(q_out, window)
            if pushed % _PACE_CHUNK == 0:
                self.metrics.add_columns(_PACE_CHUNK)
                if pace_columns_per_s is not None:
                    due = start + pushed / pace_columns_per_s
                    delay = due - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                    elif -delay > self.max_pace_lag_s:
                        # backpressure (or slow parsing) put us behind plan
                        self.max_pace_lag_s = -delay
        self.metrics.add_columns(pushed % _PACE_CHUNK)
        for window in assembler.finish():
            window.ready_at = time.monotonic()
            self._put(q_out, window)
        self._put(q_out, _SENTINEL)

    def _classify_loop(
        self, q_in: queue.Queue, q_out: queue.Queue,
        pool: ThreadPoolExecutor | None,
    ) -> None:
        while True:
            window = self._get(q_in)
            if window is _SENTINEL:
                self._put(q_out, _SENTINEL)
                return
            t0 = time.monotonic()
            fused_inputs = fuse(window.frames, self.target_hw)
            t1 = time.monotonic()
            verdicts = classify_window(self.models, fused_inputs, pool)
            depths = {
                f.group_id: estimate_depth_mm(f) for f in fused_inputs
            }
            t2 = time.monotonic()
            self._put(q_out, (window, verdicts, depths, t0, t1, t2))

    def _decide_loop(self, q_in: queue.Queue) -> None:
        merger = DecisionMerger()
        while True:
            item = self._get(q_in)
            if item is _SENTINEL:
                for decision, frames in merger.flush():
                    self._emit(decision, frames)
                return
            window, verdicts, depths, t0, t1, t2 = item
            decisions = compose(verdicts, self.thresholds, depths)
            final = merger.push_window(
                decisions, window.frames, window.track_start_m
            )
            for decision, frames in final:
                self._emit(decision, frames)
            t3 = time.monotonic()
            self.metrics.add_window(
                (t1 - t0) * 1e3,
                (t2 - t1) * 1e3,
                (t3 - t2) * 1e3,
                (t3 - window.ready_at) * 1e3,
            )

    def _emit(self, decision: TrackDecision, frames) -> None:
        recorded = self.review_store.record(decision, frames)
        self.metrics.add_decision(recorded)
        if self.on_decision is not None:
            self.on_decision(recorded)

    def run(
        self,
        stream: ColumnStream,
        *,
        pace_columns_per_s: float | None = None,
    ) -> RunSummary:
        q1: queue.Queue = queue.Queue(maxsize=self.queue_capacity)
        q2: queue.Queue = queue.Queue(maxsize=self.queue_capacity)
        self.metrics.attach_queues(ingest_to_fuse=q1, classify_to_decide=q2)

        # the bank only helps with real headroom; below four workers the
        # fan-out overhead outweighs the overlap
        pool = ThreadPoolExecutor(max_workers=5) if self.threads >= 4 else None
        threads = [
            threading.Thread(
                target=self._guard,
                args=(self._ingest_loop, stream, q1, pace_columns_per_s),
                name="udrt-ingest",
            ),
            threading.Thread(
                target=self._guard,
                args=(self._classify_loop, q1, q2, pool),
                name="udrt-classify",
            ),
            threading.Thread(
                target=self._guard,
                args=(self._decide_loop, q2),
                name="udrt-decide",
            ),
        ]
        t_start = time.monotonic()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        wall = time.monotonic() - t_start
        self.metrics.mark_finished()
        if pool is not None:
            pool.shutdown()
        if self._errors:
            raise self._errors[0]
        snapshot = self.metrics.snapshot(len(stream.channels))
        return RunSummary(
            decisions=self.review_store.decisions(),
            metrics=snapshot,
            wall_s=wall,
            columns=snapshot.columns_in,
            sustained_columns_per_s=snapshot.columns_in / max(wall, 1e-9),
            max_pace_lag_s=self.max_pace_lag_s,
        )


def required_columns_per_s(speed_kmh: float, pulse_pitch_mm: float) -> float:
    """Column rate implied by a platform speed and the pulse pitch."""
    meters_per_s = speed_kmh * 1000.0 / 3600.0
    return meters_per_s * 1000.0 / pulse_pitch_mm


@dataclass
class BenchReport:
    speed_kmh: float
    required_columns_per_s: float
    paced_columns_per_s: float
    achieved_columns_per_s: float
    max_pace_lag_s: float
    stride_period_ms: float
    latency_ms: dict[str, float]
    sustained: bool
    latency_ok: bool
    passed: bool
    columns: int
    wall_s: float
    threads: int
    decisions_by_status: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


#: A paced producer may fall at most this far behind its schedule before
#: the run counts as unsustained.
_MAX_LAG_S = 0.05


def bench(
    stream: ColumnStream,
    models: dict[int, ModelParams],
    *,
    speed_kmh: float,
    thresholds: Thresholds = Thresholds(),
    threads: int | None = None,
    frame_width: int = 512,
) -> BenchReport:
    """Replay a run at the speed-implied rate and judge the pipeline.

    The producer is paced at the column rate the platform speed implies
    (rounded up to whole columns per second). The run is sustained when
    backpressure never pushed the producer measurably behind its schedule,
    and passes when additionally the 95th-percentile window latency stayed
    below one stride period, the budget before the next window lands.
    """
    rate = required_columns_per_s(speed_kmh, stream.pulse_pitch_mm)
    pace = float(np.ceil(rate))
    pipeline = Pipeline(
        models,
        thresholds=thresholds,
        threads=threads,
        frame_width=frame_width,
    )
    summary = pipeline.run(stream, pace_columns_per_s=pace)
    stride_cols = frame_width // 2
    stride_period_ms = stride_cols / rate * 1e3
    latency = summary.metrics.stage_latency_ms["window_total"]
    sustained = (
        summary.max_pace_lag_s <= _MAX_LAG_S
        and summary.sustained_columns_per_s >= rate * 0.98
    )
    latency_ok = latency["p95"] < stride_period_ms
    return BenchReport(
        speed_kmh=speed_kmh,
        required_columns_per_s=rate,
        paced_columns_per_s=pace,
        achieved_columns_per_s=summary.sustained_columns_per_s,
        max_pace_lag_s=summary.max_pace_lag_s,
        stride_period_ms=stride_period_ms,
        latency_ms=latency,
        sustained=sustained,
        latency_ok=latency_ok,
        passed=sustained and latency_ok,
        columns=summary.columns,
        wall_s=summary.wall_s,
        threads=pipeline.threads,
        decisions_by_status=summary.metrics.decisions_by_status,
    )


def max_throughput(
    stream: ColumnStream,
    models: dict[int, ModelParams],
    *,
    thresholds: Thresholds = Thresholds(),
    threads: int | None = None,
    frame_width: int = 512,
) -> RunSummary:
    """Unpaced replay: how many columns per second the pipeline can do."""
    pipeline = Pipeline(
        models,
        thresholds=thresholds,
        threads=threads,
        frame_width=frame_width,
    )
    return pipeline.run(stream, pace_columns_per_s=None)
