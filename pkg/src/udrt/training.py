"""Labeled corpora and the five-model training bank.

A simulated run plus its ground truth becomes, per fusion group, a set of
(fused window, class) pairs: windows that mostly contain an indication of
a class the group knows are positives; windows free of such indications
are negatives, including "distractor" windows where some other group's
indication is visible. Windows that only clip an indication's edge are
ambiguous and excluded.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import classifier
from .classifier import ModelParams, topology_for_group
from .ingest import ColumnStream, FrameAssembler, FrameWindow
from .preprocess import TARGET_HW, FusedInput, fuse
from .simulator import GroundTruthRecord
from .taxonomy import FUSION_GROUPS, DefectClass

#: A window labels an indication as present when it covers at least this
#: fraction of the indication's extent.
MIN_COVER = 0.5


def iter_windows(
    stream: ColumnStream,
    *,
    width: int = 512,
    stride: int | None = None,
) -> Iterator[FrameWindow]:
    """Run the measurement stack over a column stream."""
    assembler = FrameAssembler(
        stream.channels,
        stream.depth_samples,
        width=width,
        stride=stride,
        max_raw=stream.max_raw,
        pulse_pitch_mm=stream.pulse_pitch_mm,
    )
    for column in stream.columns:
        yield from assembler.push_column(column)
    yield from assembler.finish()


def _cover(
    win_start: float, win_end: float, rec: GroundTruthRecord
) -> float:
    overlap = min(win_end, rec.end_m) - max(win_start, rec.start_m)
    extent = rec.end_m - rec.start_m
    return max(0.0, overlap) / extent if extent > 0 else 0.0


@dataclass
class WindowLabel:
    label: DefectClass | None  # None means ambiguous: exclude from training
    distractor: bool  # some other group's indication is visible here


def label_window(
    group_classes: Sequence[DefectClass],
    win_start: float,
    win_end: float,
    truth: Sequence[GroundTruthRecord],
    min_cover: float = MIN_COVER,
) -> WindowLabel:
    """Assign this window's training label for one group."""
    own_full: list[DefectClass] = []
    own_partial = False
    distractor = False
    for rec in truth:
        c = _cover(win_start, win_end, rec)
        if c <= 0.0:
            continue
        if rec.defect_class in group_classes:
            if c >= min_cover:
                own_full.append(rec.defect_class)
            else:
                own_partial = True
        else:
            distractor = True
    if len(own_full) == 1 and not own_partial:
        return WindowLabel(own_full[0], distractor)
    if own_full or own_partial:
        return WindowLabel(None, distractor)
    return WindowLabel(DefectClass.NO_INDICATION, distractor)


class _Reservoir:
    """Uniform fixed-size sample over a stream, fusing lazily on admit."""

    def __init__(self, cap: int, rng: np.random.Generator) -> None:
        self.cap = cap
        self.rng = rng
        self.items: list = []
        self.seen = 0

    def offer(self, make_sample) -> None:
        self.seen += 1
        if len(self.items) < self.cap:
            self.items.append(make_sample())
        else:
            j = int(self.rng.integers(self.seen))
            if j < self.cap:
                self.items[j] = make_sample()


def build_group_datasets(
    stream: ColumnStream,
    truth: Sequence[GroundTruthRecord],
    *,
    target_hw: tuple[int, int] = TARGET_HW,
    min_cover: float = MIN_COVER,
    max_distractor_ratio: float = 3.0,
    max_noise_ratio: float = 1.0,
    distractor_cap: int = 1200,
    noise_cap: int = 300,
    seed: int = 0,
) -> dict[int, list[tuple[FusedInput, DefectClass]]]:
    """Cut a run into per-group labeled datasets.

    Positives are all kept. Negatives are reservoir-sampled while
    streaming (so multi-km corpora stay in memory) and then capped
    relative to the positive count, preferring distractor windows over
    pure-noise ones so each classifier sees the patterns it must learn
    to ignore.
    """
    rng = np.random.default_rng(seed)
    positives: dict[int, list] = {g.group_id: [] for g in FUSION_GROUPS}
    distractors = {
        g.group_id: _Reservoir(distractor_cap, rng) for g in FUSION_GROUPS
    }
    noise = {g.group_id: _Reservoir(noise_cap, rng) for g in FUSION_GROUPS}

    for window in iter_windows(stream):
        if window.is_tail:
            continue
        fused_cache: dict[int, FusedInput] = {}

        def fused_for(gid: int) -> FusedInput:
            if not fused_cache:
                fused_cache.update(
                    {f.group_id: f for f in fuse(window.frames, target_hw)}
                )
            return fused_cache[gid]

        for g in FUSION_GROUPS:
            lab = label_window(
                g.class_set, window.track_start_m, window.track_end_m,
                truth, min_cover,
            )
            if lab.label is None:
                continue
            gid = g.group_id
            if lab.label is not DefectClass.NO_INDICATION:
                positives[gid].append((fused_for(gid), lab.label))
            elif lab.distractor:
                distractors[gid].offer(
                    lambda gid=gid: (fused_for(gid), DefectClass.NO_INDICATION)
                )
            else:
                noise[gid].offer(
                    lambda gid=gid: (fused_for(gid), DefectClass.NO_INDICATION)
                )

    datasets: dict[int, list] = {}
    for g in FUSION_GROUPS:
        gid = g.group_id
        pos = positives[gid]
        n_pos = max(len(pos), 1)
        picked = list(pos)
        for pool, ratio in (
            (distractors[gid].items, max_distractor_ratio),
            (noise[gid].items, max_noise_ratio),
        ):
            cap = int(ratio * n_pos)
            if len(pool) > cap:
                idx = rng.choice(len(pool), size=cap, replace=False)
                pool = [pool[i] for i in sorted(idx)]
            picked.extend(pool)
        datasets[gid] = picked
    return datasets


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    jitter_px: int = 2


def train_group_models(
    datasets: dict[int, list],
    settings: TrainSettings = TrainSettings(),
    *,
    warm: dict[int, ModelParams] | None = None,
    in_hw: int | None = None,
    log=None,
) -> dict[int, ModelParams]:
    """Train (or warm-start) one model per fusion group."""
    side = in_hw if in_hw is not None else TARGET_HW[0]
    models = {}
    for g in FUSION_GROUPS:
        gid = g.group_id
        data = datasets.get(gid, [])
        if not data and warm:
            models[gid] = warm[gid]
            continue
        init = warm.get(gid) if warm else None
        topology = None if init is not None else topology_for_group(gid, side)
        params = classifier.train(
            data,
            topology=topology,
            init=init,
            lr=settings.lr,
            epochs=settings.epochs,
            batch_size=settings.batch_size,
            seed=settings.seed + gid,
            jitter_px=settings.jitter_px,
            log=(lambda e, l, gid=gid: log(gid, e, l)) if log else None,
        )
        models[gid] = params
    return models


def save_model_bank(models: dict[int, ModelParams], directory: str | Path) -> None:
    directory = Path(directory)
    for gid, params in models.items():
        classifier.save_model(params, directory / f"G{gid}")


def load_model_bank(directory: str | Path) -> dict[int, ModelParams]:
    directory = Path(directory)
    models = {}
    for g in FUSION_GROUPS:
        model_dir = directory / f"G{g.group_id}"
        if not model_dir.exists():
            raise FileNotFoundError(
                f"model bank at {directory} is missing {model_dir.name}"
            )
        models[g.group_id] = classifier.load_model(model_dir)
    return models
