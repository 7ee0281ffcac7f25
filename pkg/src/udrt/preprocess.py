"""Amplitude normalization, affine resampling, and channel fusion.

Frames leave the measurement stack at the acquisition resolution; before
classification they are mapped onto the classifier input grid by an affine
coordinate transform with bilinear sampling, and stacked into the five
fixed channel combinations, each of which feeds one specialized network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .taxonomy import FUSION_GROUPS

if TYPE_CHECKING:
    from .ingest import ChannelFrame

#: Classifier input resolution (height, width).
TARGET_HW: tuple[int, int] = (64, 64)


class AmplitudeRangeError(ValueError):
    """Raw amplitude outside [0, max_raw]: corrupt data upstream."""


class FusionConfigError(ValueError):
    """The configured channel set cannot satisfy a fusion group."""


def normalize(raw, max_raw: int):
    """Map raw ADC counts linearly onto [0, 1].

    Accepts a scalar or an ndarray. Values outside [0, max_raw] indicate
    corrupt data and are rejected.
    """
    if max_raw <= 0:
        raise ValueError(f"max_raw must be positive, got {max_raw}")
    arr = np.asarray(raw)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > max_raw:
        raise AmplitudeRangeError(
            f"raw amplitude outside [0, {max_raw}]"
        )
    out = arr / float(max_raw)
    return float(out) if np.isscalar(raw) or arr.ndim == 0 else out


def denormalize(value, max_raw: int):
    """Inverse of normalize, rounded to the nearest raw count."""
    arr = np.rint(np.asarray(value) * float(max_raw)).astype(np.int64)
    return int(arr) if np.isscalar(value) or arr.ndim == 0 else arr


# Sampling grids depend only on (source shape, target shape); cache them so
# the per-window hot path does no recomputation.
_GRID_CACHE: dict[tuple[int, int, int, int], tuple] = {}


def _grid(src_h: int, src_w: int, target_h: int, target_w: int):
    key = (src_h, src_w, target_h, target_w)
    cached = _GRID_CACHE.get(key)
    if cached is not None:
        return cached
    # source coords via x' = a*x + b, y' = c*y + d with b = d = 0
    ys = np.arange(target_h) * (src_h / target_h)
    xs = np.arange(target_w) * (src_w / target_w)
    y0 = np.minimum(ys.astype(np.int64), src_h - 1)
    x0 = np.minimum(xs.astype(np.int64), src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0).astype(np.float32)[:, None]
    fx = (xs - x0).astype(np.float32)[None, :]
    cached = (y0, y1, x0, x1, fy, fx)
    _GRID_CACHE[key] = cached
    return cached


def affine_resample(frame, target_h: int, target_w: int) -> np.ndarray:
    """Resample a frame onto (target_h, target_w) by bilinear interpolation.

    ``frame`` may be a ChannelFrame or a 2-D array. The affine map scales
    source coordinates by (H/target_h, W/target_w); at identity scale the
    output equals the input exactly, and the output never leaves the value
    range of the source.
    """
    if target_h < 8 or target_w < 8:
        raise ValueError("target dimensions must be >= 8")
    plane = frame if isinstance(frame, np.ndarray) else frame.data
    src_h, src_w = plane.shape
    y0, y1, x0, x1, fy, fx = _grid(src_h, src_w, target_h, target_w)
    a = plane[np.ix_(y0, x0)]
    b = plane[np.ix_(y0, x1)]
    c = plane[np.ix_(y1, x0)]
    d = plane[np.ix_(y1, x1)]
    top = a + (b - a) * fx
    bottom = c + (d - c) * fx
    return top + (bottom - top) * fy


@dataclass(slots=True)
class FusedInput:
    """Input tensor for one group's classifier: C planes of one window."""

    group_id: int
    track_start_m: float
    track_end_m: float
    planes: np.ndarray
    source_frame_ids: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        from .taxonomy import group_by_id

        group = group_by_id(self.group_id)
        if self.planes.shape[0] != group.channel_count:
            raise ValueError(
                f"group {self.group_id} expects {group.channel_count} planes,"
                f" got {self.planes.shape[0]}"
            )


def fuse(
    frames: Mapping[int, "ChannelFrame"],
    target_hw: tuple[int, int] = TARGET_HW,
) -> list[FusedInput]:
    """Route one window's channel frames into the five fusion groups.

    Each group receives exactly its angles, resampled to the classifier
    resolution and stacked ascending by angle. All frames must describe the
    same track window.
    """
    th, tw = target_hw
    for group in FUSION_GROUPS:
        for angle in group.angles:
            if angle not in frames:
                raise FusionConfigError(
                    f"fusion group {group.group_id} requires a channel at "
                    f"{angle:+d} degrees, which is not configured"
                )
    starts = {frames[a].track_start_m for g in FUSION_GROUPS for a in g.angles}
    if len(starts) != 1:
        raise ValueError(
            f"frames do not share one track_start_m: {sorted(starts)}"
        )

    resampled: dict[int, np.ndarray] = {}
    fused = []
    for group in FUSION_GROUPS:
        planes = np.empty(
            (group.channel_count, th, tw), dtype=np.float32
        )
        for i, angle in enumerate(group.angles):
            if angle not in resampled:
                resampled[angle] = affine_resample(frames[angle], th, tw)
            planes[i] = resampled[angle]
        any_frame = frames[group.angles[0]]
        fused.append(
            FusedInput(
                group_id=group.group_id,
                track_start_m=any_frame.track_start_m,
                track_end_m=any_frame.track_end_m,
                planes=planes,
                source_frame_ids=tuple(
                    (a, frames[a].window_index) for a in group.angles
                ),
            )
        )
    return fused
