"""Shared builders for decision/server tests."""

import numpy as np

from udrt.classifier import Verdict
from udrt.decision import compose
from udrt.ingest import ChannelFrame
from udrt.taxonomy import FUSION_GROUPS, DefectClass, group_by_id

WINDOW = (10.0, 10.512)


def verdict(group_id, top_class, confidence, margin=None, window=WINDOW):
    group = group_by_id(group_id)
    k = len(group.class_set)
    top_idx = group.class_set.index(top_class)
    rest = (1.0 - confidence) / (k - 1) if k > 1 else 0.0
    probs = [rest] * k
    probs[top_idx] = confidence
    if margin is None:
        margin = confidence - max(p for i, p in enumerate(probs) if i != top_idx)
    return Verdict(
        group_id=group_id,
        track_start_m=window[0],
        track_end_m=window[1],
        probabilities=tuple(probs),
        top_class=top_class,
        confidence=confidence,
        margin=margin,
    )


def quiet_bank(window=WINDOW, confidence=0.97):
    return {
        g.group_id: verdict(
            g.group_id, DefectClass.NO_INDICATION, confidence, window=window
        )
        for g in FUSION_GROUPS
    }


def make_frames(h=16, w=32, seed=0, start_m=10.0):
    rng = np.random.default_rng(seed)
    frames = {}
    for g in FUSION_GROUPS:
        for angle in g.angles:
            if angle in frames:
                continue
            frames[angle] = ChannelFrame(
                angle_deg=angle,
                track_start_m=start_m,
                track_end_m=start_m + w / 1000.0,
                data=rng.random((h, w), dtype=np.float32),
                window_index=0,
            )
    return frames


def delegated_decision(cls=DefectClass.VERTICAL_CRACK, start=10.0):
    bank = quiet_bank(window=(start, start + 0.512))
    bank[2] = verdict(2, cls, 0.55, margin=0.1, window=(start, start + 0.512))
    (decision,) = compose(list(bank.values()))
    return decision
