"""Verdict composition, confidence gating, and the expert review loop.

Per-window verdicts from the five classifiers are gated by two thresholds
(confidence and margin), composed into located track decisions, and merged
across overlapping windows. Anything uncertain or contradictory is
delegated: it enters a review queue, and the expert's label both resolves
the decision and feeds the per-group retraining set.
"""

from __future__ import annotations

import enum
import json
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classifier import Verdict
from .ingest import ChannelFrame
from .preprocess import fuse
from .taxonomy import DefectClass, groups_for_class

GROUP_COUNT = 5


class GateResult(enum.Enum):
    ACCEPT = "Accept"
    UNCERTAIN = "Uncertain"


class DecisionStatus(enum.Enum):
    AUTO_ACCEPTED = "AutoAccepted"
    DELEGATED = "Delegated"
    EXPERT_RESOLVED = "ExpertResolved"


class ReviewNotFoundError(KeyError):
    """No delegated decision with that id is awaiting review."""


class ReviewConflictError(RuntimeError):
    """The decision was already labeled."""


@dataclass(frozen=True)
class Thresholds:
    tau_conf: float = 0.85
    tau_margin: float = 0.20


@dataclass
class TrackDecision:
    """A located, confidence-gated result for a stretch of track."""

    track_start_m: float
    track_end_m: float
    defect_class: DefectClass
    confidence: float
    status: DecisionStatus
    verdicts: tuple[Verdict, ...]
    contributing_group_ids: tuple[int, ...]
    apparent_depth_mm: float | None = None
    decision_id: int | None = None
    expert_class: DefectClass | None = None
    expert_comment: str | None = None


def gate(verdict: Verdict, thresholds: Thresholds = Thresholds()) -> GateResult:
    """Accept iff both confidence and margin clear their thresholds."""
    ok = (
        verdict.confidence >= thresholds.tau_conf
        and verdict.margin >= thresholds.tau_margin
    )
    return GateResult.ACCEPT if ok else GateResult.UNCERTAIN


def _geometric_mean(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    return float(np.exp(np.log(np.maximum(arr, 1e-300)).mean()))


def compose(
    verdicts: Sequence[Verdict],
    thresholds: Thresholds = Thresholds(),
    depth_estimates: Mapping[int, float] | None = None,
) -> list[TrackDecision]:
    """Turn the five verdicts of one window into track decisions.

    Confidently-background verdicts drop out. If every survivor is an
    accepted indication and they agree (class sets are disjoint, so
    agreement means a single asserted class), one AutoAccepted decision per
    cluster is produced with the geometric mean of member confidences. Any
    uncertain survivor, or two accepted survivors asserting different
    classes, turns the whole window into a single Delegated decision that
    carries all five verdicts for the expert.
    """
    if len(verdicts) != GROUP_COUNT:
        raise ValueError(f"expected {GROUP_COUNT} verdicts, got {len(verdicts)}")
    extents = {(v.track_start_m, v.track_end_m) for v in verdicts}
    if len(extents) != 1:
        raise ValueError(f"verdicts disagree on the window extent: {extents}")
    start_m, end_m = next(iter(extents))
    depth_estimates = depth_estimates or {}

    survivors = [
        v
        for v in verdicts
        if not (
            v.top_class is DefectClass.NO_INDICATION
            and gate(v, thresholds) is GateResult.ACCEPT
        )
    ]
    if not survivors:
        return []

    def depth_for(groups: Iterable[int]) -> float | None:
        for gid in groups:
            if gid in depth_estimates:
                return depth_estimates[gid]
        return None

    any_uncertain = any(
        gate(v, thresholds) is GateResult.UNCERTAIN for v in survivors
    )
    asserted = {v.top_class for v in survivors} - {DefectClass.NO_INDICATION}
    if any_uncertain or len(asserted) > 1:
        lead = max(survivors, key=lambda v: v.confidence)
        contributing = tuple(sorted(v.group_id for v in survivors))
        return [
            TrackDecision(
                track_start_m=start_m,
                track_end_m=end_m,
                defect_class=lead.top_class,
                confidence=_geometric_mean([v.confidence for v in survivors]),
                status=DecisionStatus.DELEGATED,
                verdicts=tuple(verdicts),
                contributing_group_ids=contributing,
                apparent_depth_mm=depth_for(
                    [lead.group_id, *contributing]
                ),
            )
        ]

    # all survivors accepted; group them by asserted class
    decisions = []
    for cls in sorted(asserted, key=lambda c: c.value):
        members = [v for v in survivors if v.top_class is cls]
        gids = tuple(sorted(v.group_id for v in members))
        decisions.append(
            TrackDecision(
                track_start_m=start_m,
                track_end_m=end_m,
                defect_class=cls,
                confidence=_geometric_mean([v.confidence for v in members]),
                status=DecisionStatus.AUTO_ACCEPTED,
                verdicts=tuple(members),
                contributing_group_ids=gids,
                apparent_depth_mm=depth_for(gids),
            )
        )
    return decisions


class DecisionMerger:
    """Merges same-class decisions from overlapping adjacent windows.

    Windows arrive in track order; a decision stays open while the next
    window could still overlap it, and is emitted (with its id assigned by
    the caller) once the stream has moved past its end.
    """

    def __init__(self) -> None:
        self._open: list[tuple[TrackDecision, dict[int, ChannelFrame] | None]] = []

    def push_window(
        self,
        decisions: Sequence[TrackDecision],
        frames: dict[int, ChannelFrame] | None = None,
        window_start_m: float | None = None,
    ) -> list[tuple[TrackDecision, dict[int, ChannelFrame] | None]]:
        """Feed one window's decisions; return those now final."""
        emitted = []
        still_open = []
        horizon = window_start_m
        if horizon is None and decisions:
            horizon = decisions[0].track_start_m
        for open_dec, open_frames in self._open:
            merged = False
            if horizon is not None and open_dec.track_end_m < horizon:
                emitted.append((open_dec, open_frames))
                continue
            for dec in decisions:
                if (
                    dec.defect_class is open_dec.defect_class
                    and dec.status is open_dec.status
                    and dec.track_start_m <= open_dec.track_end_m
                    and open_dec.track_start_m <= dec.track_end_m
                ):
                    keep_new = dec.confidence > open_dec.confidence
                    base = dec if keep_new else open_dec
                    updated = replace(
                        base,
                        track_start_m=min(
                            dec.track_start_m, open_dec.track_start_m
                        ),
                        track_end_m=max(dec.track_end_m, open_dec.track_end_m),
                        confidence=max(dec.confidence, open_dec.confidence),
                    )
                    still_open.append(
                        (updated, frames if keep_new else open_frames)
                    )
                    decisions = [d for d in decisions if d is not dec]
                    merged = True
                    break
            if not merged:
                still_open.append((open_dec, open_frames))
        for dec in decisions:
            still_open.append((dec, frames))
        self._open = still_open
        return emitted

    def flush(self) -> list[tuple[TrackDecision, dict[int, ChannelFrame] | None]]:
        emitted, self._open = self._open, []
        return emitted


@dataclass
class ReviewItem:
    """One delegated decision waiting for the expert."""

    decision_id: int
    decision: TrackDecision
    frames: dict[int, ChannelFrame]
    created_at: float


@dataclass(frozen=True)
class ExpertLabel:
    decision_id: int
    defect_class: DefectClass
    comment: str | None = None
    timestamp: float = 0.0


@dataclass
class RetrainingEntry:
    group_id: int
    planes: np.ndarray
    label: DefectClass
    decision_id: int
    track_start_m: float
    track_end_m: float


class RetrainingSet:
    """Accumulated (input, expert label) pairs, per group.

    When given a directory, every entry is persisted as a raw float32 blob
    plus one line in index.jsonl; otherwise entries live in memory only.
    """

    def __init__(self, directory: str | Path | None = None) -> None:
        self._dir = Path(directory) if directory is not None else None
        self._entries: list[RetrainingEntry] = []
        self._next_id = 0
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            (self._dir / "blobs").mkdir(exist_ok=True)
            index = self._dir / "index.jsonl"
            if index.exists():
                self._load_existing(index)

    def _load_existing(self, index: Path) -> None:
        for line in index.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            meta = json.loads(line)
            blob = (self._dir / meta["blob"]).read_bytes()
            planes = np.frombuffer(blob, dtype="<f4").reshape(meta["shape"])
            self._entries.append(
                RetrainingEntry(
                    group_id=meta["group_id"],
                    planes=planes.copy(),
                    label=DefectClass(meta["label"]),
                    decision_id=meta["decision_id"],
                    track_start_m=meta["track_start_m"],
                    track_end_m=meta["track_end_m"],
                )
            )
            self._next_id = max(self._next_id, meta["entry_id"] + 1)

    def add(self, entry: RetrainingEntry) -> None:
        entry_id = self._next_id
        self._next_id += 1
        self._entries.append(entry)
        if self._dir is None:
            return
        blob_rel = f"blobs/entry_{entry_id:06d}.bin"
        planes32 = np.ascontiguousarray(entry.planes, dtype="<f4")
        (self._dir / blob_rel).write_bytes(planes32.tobytes())
        with open(self._dir / "index.jsonl", "a", encoding="utf-8") as f:
            f.write(
                json.dumps(
                    {
                        "entry_id": entry_id,
                        "group_id": entry.group_id,
                        "label": entry.label.value,
                        "blob": blob_rel,
                        "shape": list(entry.planes.shape),
                        "decision_id": entry.decision_id,
                        "track_start_m": entry.track_start_m,
                        "track_end_m": entry.track_end_m,
                    }
                )
                + "\n"
            )

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self, group_id: int | None = None) -> list[RetrainingEntry]:
        if group_id is None:
            return list(self._entries)
        return [e for e in self._entries if e.group_id == group_id]

    def as_dataset(self, group_id: int) -> list[tuple[np.ndarray, DefectClass]]:
        return [(e.planes, e.label) for e in self.entries(group_id)]


class ReviewStore:
    """Serialized mutation domain for decisions, the queue, and labels.

    All pipeline and API access is funneled through one lock, so readers
    always see a consistent snapshot.
    """

    def __init__(self, retraining: RetrainingSet | None = None) -> None:
        self._lock = threading.Lock()
        self._decisions: dict[int, TrackDecision] = {}
        self._queue: dict[int, ReviewItem] = {}
        self._next_id = 0
        self.retraining = retraining if retraining is not None else RetrainingSet()

    def record(
        self,
        decision: TrackDecision,
        frames: dict[int, ChannelFrame] | None = None,
    ) -> TrackDecision:
        """Assign an id, store the decision, and queue it if delegated."""
        with self._lock:
            decision.decision_id = self._next_id
            self._next_id += 1
            self._decisions[decision.decision_id] = decision
            if decision.status is DecisionStatus.DELEGATED:
                if frames is None:
                    raise ValueError(
                        "a delegated decision needs its window frames"
                    )
                self._queue[decision.decision_id] = ReviewItem(
                    decision_id=decision.decision_id,
                    decision=decision,
                    frames=frames,
                    created_at=time.time(),
                )
            return decision

    def decisions(self) -> list[TrackDecision]:
        with self._lock:
            return list(self._decisions.values())

    def pending(self) -> list[ReviewItem]:
        """Queue snapshot, FIFO by track coordinate."""
        with self._lock:
            return sorted(
                self._queue.values(),
                key=lambda item: item.decision.track_start_m,
            )

    def get_item(self, decision_id: int) -> ReviewItem:
        with self._lock:
            item = self._queue.get(decision_id)
            if item is None:
                if decision_id in self._decisions:
                    raise ReviewConflictError(
                        f"decision {decision_id} is not awaiting review"
                    )
                raise ReviewNotFoundError(decision_id)
            return item

    def apply_label(
        self, label: ExpertLabel
    ) -> tuple[TrackDecision, list[RetrainingEntry]]:
        """Resolve a delegated decision and route retraining entries.

        The labeled window becomes a training example for every group whose
        class set contains the expert's class; a NoIndication label instead
        becomes a negative example for each group that had asserted an
        indication.
        """
        with self._lock:
            decision = self._decisions.get(label.decision_id)
            if decision is None:
                raise ReviewNotFoundError(label.decision_id)
            item = self._queue.get(label.decision_id)
            if item is None:
                raise ReviewConflictError(
                    f"decision {label.decision_id} was already labeled or "
                    "never delegated"
                )
            del self._queue[label.decision_id]
            decision.status = DecisionStatus.EXPERT_RESOLVED
            decision.expert_class = label.defect_class
            decision.expert_comment = label.comment

            fused = {f.group_id: f for f in fuse(item.frames)}
            entries = []
            if label.defect_class is DefectClass.NO_INDICATION:
                target_groups = sorted(
                    {
                        v.group_id
                        for v in decision.verdicts
                        if v.top_class is not DefectClass.NO_INDICATION
                    }
                )
            else:
                target_groups = [
                    g.group_id for g in groups_for_class(label.defect_class)
                ]
            for gid in target_groups:
                entry = RetrainingEntry(
                    group_id=gid,
                    planes=fused[gid].planes,
                    label=label.defect_class,
                    decision_id=decision.decision_id,
                    track_start_m=decision.track_start_m,
                    track_end_m=decision.track_end_m,
                )
                self.retraining.add(entry)
                entries.append(entry)
            return decision, entries


# ---------------------------------------------------------------------------
# JSON serialization (decisions.jsonl and the live feed share this format)


def verdict_to_json(verdict: Verdict) -> dict:
    return {
        "group_id": verdict.group_id,
        "track_start_m": verdict.track_start_m,
        "track_end_m": verdict.track_end_m,
        "probabilities": list(verdict.probabilities),
        "top_class": verdict.top_class.value,
        "confidence": verdict.confidence,
        "margin": verdict.margin,
    }


def verdict_from_json(obj: dict) -> Verdict:
    return Verdict(
        group_id=obj["group_id"],
        track_start_m=obj["track_start_m"],
        track_end_m=obj["track_end_m"],
        probabilities=tuple(obj["probabilities"]),
        top_class=DefectClass(obj["top_class"]),
        confidence=obj["confidence"],
        margin=obj["margin"],
    )


def decision_to_json(decision: TrackDecision) -> dict:
    return {
        "decision_id": decision.decision_id,
        "track_start_m": decision.track_start_m,
        "track_end_m": decision.track_end_m,
        "class": decision.defect_class.value,
        "confidence": decision.confidence,
        "status": decision.status.value,
        "apparent_depth_mm": decision.apparent_depth_mm,
        "contributing_group_ids": list(decision.contributing_group_ids),
        "verdicts": [verdict_to_json(v) for v in decision.verdicts],
        "expert_class": (
            decision.expert_class.value if decision.expert_class else None
        ),
        "expert_comment": decision.expert_comment,
    }


def decision_from_json(obj: dict) -> TrackDecision:
    return TrackDecision(
        decision_id=obj["decision_id"],
        track_start_m=obj["track_start_m"],
        track_end_m=obj["track_end_m"],
        defect_class=DefectClass(obj["class"]),
        confidence=obj["confidence"],
        status=DecisionStatus(obj["status"]),
        apparent_depth_mm=obj["apparent_depth_mm"],
        contributing_group_ids=tuple(obj["contributing_group_ids"]),
        verdicts=tuple(verdict_from_json(v) for v in obj["verdicts"]),
        expert_class=(
            DefectClass(obj["expert_class"]) if obj["expert_class"] else None
        ),
        expert_comment=obj["expert_comment"],
    )
