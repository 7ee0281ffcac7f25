"""Synthetic defectogram runs with ground truth.

Indications are rendered phenomenologically, as the amplitude patterns an
operator would see on a B-scan, not as physical wave propagation: compact
2-D Gaussian blobs for cracks and holes, flat-topped full-depth bands for
joints and welds, slanted streaks for inclined cracks. Each class appears
only on its responding-angle channels and inside a characteristic apparent
depth band, which is what makes the classes learnable downstream.

Echo amplitudes, extents, and depth bands are conventions of this module,
chosen for clear class separation at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .ingest import AScanColumn, ChannelSpec, ColumnStream, DEFAULT_CHANNELS
from .taxonomy import DefectClass, class_signature

#: Columns rendered per batch; fixed so the noise stream is reproducible.
_CHUNK = 4096

#: Indications keep their extents at least this far apart, and at least
#: this far from the run ends, so scoring against ground truth stays
#: unambiguous.
MIN_SEPARATION_M = 0.5
_START_MARGIN_M = 0.5
_END_MARGIN_M = 0.8

RENDERABLE_CLASSES: tuple[DefectClass, ...] = tuple(
    c for c in DefectClass if c is not DefectClass.NO_INDICATION
)


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one simulated scanning run."""

    length_m: float
    speed_kmh: float
    pulse_pitch_mm: float = 1.0
    depth_samples: int = 128
    noise_sigma: float = 0.02
    defect_density_per_km: float = 0.0
    seed: int = 0
    channels: tuple[ChannelSpec, ...] = DEFAULT_CHANNELS
    amplitude_bits: int = 12
    sample_window_us: float = 60.0

    def __post_init__(self) -> None:
        if self.length_m <= 0:
            raise ValueError(f"length_m must be > 0, got {self.length_m}")
        if not 0 < self.speed_kmh <= 110:
            raise ValueError(
                f"speed_kmh must be in (0, 110], got {self.speed_kmh}"
            )
        if self.pulse_pitch_mm <= 0:
            raise ValueError(
                f"pulse_pitch_mm must be > 0, got {self.pulse_pitch_mm}"
            )
        if self.depth_samples < 16:
            raise ValueError(
                f"depth_samples must be >= 16, got {self.depth_samples}"
            )
        if self.noise_sigma < 0:
            raise ValueError(
                f"noise_sigma must be >= 0, got {self.noise_sigma}"
            )
        if self.defect_density_per_km < 0:
            raise ValueError("defect_density_per_km must be >= 0")

    @property
    def firing_count(self) -> int:
        return int(self.length_m * 1000 / self.pulse_pitch_mm + 1e-9)

    @property
    def max_raw(self) -> int:
        return (1 << self.amplitude_bits) - 1


@dataclass(frozen=True)
class GroundTruthRecord:
    """True location and type of one rendered indication."""

    defect_class: DefectClass
    start_m: float
    end_m: float
    apparent_depth_mm: float
    responding_angles: frozenset[int]

    def __post_init__(self) -> None:
        if not self.start_m < self.end_m:
            raise ValueError("start_m must be < end_m")
        if self.apparent_depth_mm < 0:
            raise ValueError("apparent_depth_mm must be >= 0")
        if self.responding_angles != class_signature(self.defect_class):
            raise ValueError(
                "responding_angles must equal the class signature"
            )


@dataclass(frozen=True)
class _Element:
    """One rendered pattern: a profile along the track times one in depth."""

    angles: frozenset[int]
    kind: str  # blob | band | inclined | halo
    center_m: float
    extent_mm: float
    depth_mm: float
    depth_sigma_mm: float
    amplitude: float
    depth_drift_mm: float = 0.0


@dataclass
class _Indication:
    truth: GroundTruthRecord
    elements: list[_Element]


# (depth range mm, extent range mm, depth thickness range mm) per blob class.
_BLOB_PARAMS: dict[DefectClass, tuple[tuple, tuple, tuple]] = {
    DefectClass.HEAD_HORIZONTAL_CRACK: ((12, 40), (20, 70), (2, 4)),
    DefectClass.HEAD_DELAMINATION: ((8, 35), (90, 200), (2, 4)),
    DefectClass.FOOT_DETACHMENT: ((150, 172), (60, 160), (2, 5)),
    DefectClass.VERTICAL_CRACK: ((10, 60), (20, 60), (3, 6)),
    DefectClass.BOLT_HOLE_INTACT: ((80, 100), (30, 50), (3, 5)),
    DefectClass.WEB_CRACK: ((55, 85), (40, 100), (3, 6)),
    DefectClass.WELD_VOID: ((105, 140), (20, 50), (3, 5)),
}

_BAND_EXTENTS = {
    DefectClass.BOLTED_JOINT: (100, 200),
    DefectClass.RAIL_JOINT: (50, 100),
    DefectClass.WELD: (20, 45),
}

_BAND_DEPTH_MM = 88.5  # mid rail height, reported for full-depth bands


def _build_indication(
    rng: np.random.Generator, cls: DefectClass, center_m: float
) -> _Indication:
    sig = class_signature(cls)
    peak = float(rng.uniform(0.5, 1.0))

    if cls in _BLOB_PARAMS:
        (dlo, dhi), (elo, ehi), (tlo, thi) = _BLOB_PARAMS[cls]
        depth = float(rng.uniform(dlo, dhi))
        extent = float(rng.uniform(elo, ehi))
        sigma_d = float(rng.uniform(tlo, thi))
        elements = [
            _Element(sig, "blob", center_m, extent, depth, sigma_d, peak)
        ]
    elif cls is DefectClass.BOLT_HOLE_STAR_CRACK:
        # radial cracking: the hole plus two diagonals crossing through it
        depth = float(rng.uniform(80, 100))
        extent = float(rng.uniform(60, 100))
        sigma_d = float(rng.uniform(3, 5))
        drift = float(rng.uniform(18, 28))
        elements = [
            _Element(sig, "blob", center_m, extent * 0.4, depth, sigma_d, peak),
            _Element(
                sig, "inclined", center_m, extent,
                depth - drift / 2, sigma_d * 0.8, peak * 0.8,
                depth_drift_mm=drift,
            ),
            _Element(
                sig, "inclined", center_m, extent,
                depth + drift / 2, sigma_d * 0.8, peak * 0.8,
                depth_drift_mm=-drift,
            ),
        ]
    elif cls is DefectClass.INCLINED_CRACK:
        depth0 = float(rng.uniform(20, 55))
        drift = float(rng.uniform(20, 40))
        extent = float(rng.uniform(40, 120))
        sigma_d = float(rng.uniform(2, 4))
        depth = depth0 + drift / 2
        elements = [
            _Element(
                sig, "inclined", center_m, extent, depth0, sigma_d, peak,
                depth_drift_mm=drift,
            )
        ]
    elif cls in _BAND_EXTENTS:
        elo, ehi = _BAND_EXTENTS[cls]
        extent = float(rng.uniform(elo, ehi))
        depth = _BAND_DEPTH_MM
        elements = [
            _Element(sig, "band", center_m, extent, depth, 0.0, peak * 0.85)
        ]
        if cls is DefectClass.BOLTED_JOINT:
            # a bolted joint carries its bolt holes on both sides of the gap
            hole_sig = class_signature(DefectClass.BOLT_HOLE_INTACT)
            hole_depth = float(rng.uniform(82, 98))
            for side in (-1.0, 1.0):
                elements.append(
                    _Element(
                        hole_sig,
                        "blob",
                        center_m + side * extent / 4000.0,
                        40.0,
                        hole_depth,
                        4.0,
                        peak,
                    )
                )
    else:  # pragma: no cover - closed class set
        raise AssertionError(f"no rendering recipe for {cls}")

    extent_m = extent / 1000.0
    truth = GroundTruthRecord(
        defect_class=cls,
        start_m=center_m - extent_m / 2,
        end_m=center_m + extent_m / 2,
        apparent_depth_mm=depth,
        responding_angles=sig,
    )
    return _Indication(truth=truth, elements=elements)


def _place_indications(
    config: RunConfig, rng: np.random.Generator
) -> list[_Indication]:
    expected = config.defect_density_per_km * config.length_m / 1000.0
    count = int(rng.poisson(expected)) if expected > 0 else 0
    placed: list[_Indication] = []
    occupied: list[tuple[float, float]] = []
    attempts = 0
    while len(placed) < count and attempts < 50 * count + 100:
        attempts += 1
        cls = RENDERABLE_CLASSES[int(rng.integers(len(RENDERABLE_CLASSES)))]
        lo = _START_MARGIN_M + 0.11
        hi = config.length_m - _END_MARGIN_M - 0.11
        if hi <= lo:
            break
        center = float(rng.uniform(lo, hi))
        ind = _build_indication(rng, cls, center)
        span = (ind.truth.start_m - MIN_SEPARATION_M, ind.truth.end_m + MIN_SEPARATION_M)
        if any(span[0] < e and s < span[1] for s, e in occupied):
            continue
        if ind.truth.start_m < _START_MARGIN_M:
            continue
        if ind.truth.end_m > config.length_m - _END_MARGIN_M:
            continue
        placed.append(ind)
        occupied.append((ind.truth.start_m, ind.truth.end_m))
    placed.sort(key=lambda i: i.truth.start_m)
    return placed


def _render_element(
    el: _Element,
    buf: np.ndarray,
    f0: int,
    config: RunConfig,
    channel_index: dict[int, int],
    depths_mm: np.ndarray,
) -> None:
    pitch_m = config.pulse_pitch_mm / 1000.0
    extent_m = el.extent_mm / 1000.0
    start, end = el.center_m - extent_m / 2, el.center_m + extent_m / 2
    n = buf.shape[0]
    for angle in el.angles:
        ci = channel_index.get(angle)
        if ci is None:
            continue
        offset_m = config.channels[ci].offset_mm / 1000.0
        # firing f insonifies track coordinate f*pitch - offset on this probe
        x = (np.arange(f0, f0 + n) * pitch_m) - offset_m
        mask = (x >= start) & (x <= end)
        if not mask.any():
            continue
        xm = x[mask]
        if el.kind == "band":
            # flat-topped profile: joints and welds read as sharp-edged bands
            u = (xm - el.center_m) / (extent_m / 2.0)
            g = np.exp(-(u**6))
            profile = el.amplitude * g[:, None] * np.ones_like(depths_mm)[None, :]
        elif el.kind == "inclined":
            frac = (xm - start) / extent_m
            d_center = el.depth_mm + el.depth_drift_mm * frac
            g = np.ones_like(xm)
            dd = depths_mm[None, :] - d_center[:, None]
            profile = el.amplitude * g[:, None] * np.exp(
                -(dd**2) / (2 * el.depth_sigma_mm**2)
            )
        else:  # blob | halo
            sigma_x = extent_m / 5.0
            g = np.exp(-((xm - el.center_m) ** 2) / (2 * sigma_x**2))
            h = np.exp(
                -((depths_mm - el.depth_mm) ** 2) / (2 * el.depth_sigma_mm**2)
            )
            profile = el.amplitude * g[:, None] * h[None, :]
        buf[mask, ci, :] += profile.astype(np.float32)


def generate_run(
    config: RunConfig,
) -> tuple[ColumnStream, list[GroundTruthRecord]]:
    """Simulate one run: a lazy firing stream plus its ground truth.

    The stream emits one column per pulse pitch; indications appear only on
    their signature channels within their extents; everything else is
    clipped Gaussian noise. Identical configs (seed included) reproduce the
    stream and the truth list exactly.
    """
    seq = np.random.SeedSequence(config.seed)
    seed_place, seed_noise = seq.spawn(2)
    indications = _place_indications(
        config, np.random.default_rng(seed_place)
    )
    truth = [ind.truth for ind in indications]

    channel_index = {
        spec.angle_deg: i for i, spec in enumerate(config.channels)
    }
    depths_mm = (
        np.arange(config.depth_samples)
        / config.depth_samples
        * (5900.0 * config.sample_window_us * 1e-6 / 2.0 * 1000.0)
    )
    n_firings = config.firing_count
    pitch_um = int(round(config.pulse_pitch_mm * 1000))
    max_raw = config.max_raw

    def _columns() -> Iterator[AScanColumn]:
        rng_noise = np.random.default_rng(seed_noise)
        n_channels = len(config.channels)
        for f0 in range(0, n_firings, _CHUNK):
            n = min(_CHUNK, n_firings - f0)
            if config.noise_sigma > 0:
                buf = rng_noise.standard_normal(
                    size=(n, n_channels, config.depth_samples),
                    dtype=np.float32,
                )
                buf *= config.noise_sigma
            else:
                buf = np.zeros(
                    (n, n_channels, config.depth_samples), dtype=np.float32
                )
            chunk_start_m = f0 * config.pulse_pitch_mm / 1000.0
            chunk_end_m = (f0 + n) * config.pulse_pitch_mm / 1000.0
            for ind in indications:
                # widest reach of any element, plus the probe lead
                if (
                    ind.truth.end_m + 0.3 >= chunk_start_m - 0.3
                    and ind.truth.start_m - 0.3 <= chunk_end_m + 0.3
                ):
                    for el in ind.elements:
                        _render_element(
                            el, buf, f0, config, channel_index, depths_mm
                        )
            np.clip(buf, 0.0, 1.0, out=buf)
            quantized = np.rint(buf * max_raw).astype(np.uint16)
            for i in range(n):
                yield AScanColumn(
                    encoder_position_um=(f0 + i) * pitch_um,
                    amplitudes=quantized[i],
                )

    stream = ColumnStream(
        channels=config.channels,
        depth_samples=config.depth_samples,
        amplitude_bits=config.amplitude_bits,
        pulse_pitch_mm=config.pulse_pitch_mm,
        sample_window_us=config.sample_window_us,
        columns=_columns(),
        column_count=n_firings,
    )
    return stream, truth


def write_truth(path: str | Path, truth: list[GroundTruthRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in truth:
            f.write(
                json.dumps(
                    {
                        "class": rec.defect_class.value,
                        "start_m": rec.start_m,
                        "end_m": rec.end_m,
                        "apparent_depth_mm": rec.apparent_depth_mm,
                        "responding_angles": sorted(rec.responding_angles),
                    }
                )
                + "\n"
            )


def read_truth(path: str | Path) -> list[GroundTruthRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                GroundTruthRecord(
                    defect_class=DefectClass(obj["class"]),
                    start_m=obj["start_m"],
                    end_m=obj["end_m"],
                    apparent_depth_mm=obj["apparent_depth_mm"],
                    responding_angles=frozenset(obj["responding_angles"]),
                )
            )
    return records
