import numpy as np
import pytest

from udrt.simulator import GroundTruthRecord, RunConfig, generate_run
from udrt.taxonomy import FUSION_GROUPS, DefectClass, class_signature
from udrt.training import (
    TrainSettings,
    build_group_datasets,
    label_window,
    load_model_bank,
    save_model_bank,
    train_group_models,
)

G1 = FUSION_GROUPS[0]


def truth(cls, start, end):
    return GroundTruthRecord(
        defect_class=cls,
        start_m=start,
        end_m=end,
        apparent_depth_mm=30.0,
        responding_angles=class_signature(cls),
    )


class TestLabelWindow:
    def test_contained_indication_labels_positive(self):
        rec = truth(DefectClass.HEAD_HORIZONTAL_CRACK, 10.1, 10.16)
        lab = label_window(G1.class_set, 10.0, 10.512, [rec])
        assert lab.label is DefectClass.HEAD_HORIZONTAL_CRACK

    def test_edge_clip_is_ambiguous(self):
        rec = truth(DefectClass.HEAD_HORIZONTAL_CRACK, 10.45, 10.60)
        # window covers 0.062 of the 0.15 m extent: under half
        lab = label_window(G1.class_set, 10.0, 10.512, [rec])
        assert lab.label is None

    def test_other_groups_indication_is_distractor_negative(self):
        rec = truth(DefectClass.BOLT_HOLE_INTACT, 10.2, 10.24)
        lab = label_window(G1.class_set, 10.0, 10.512, [rec])
        assert lab.label is DefectClass.NO_INDICATION
        assert lab.distractor

    def test_clean_window_is_noise_negative(self):
        lab = label_window(G1.class_set, 10.0, 10.512, [])
        assert lab.label is DefectClass.NO_INDICATION
        assert not lab.distractor

    def test_two_own_indications_are_ambiguous(self):
        recs = [
            truth(DefectClass.HEAD_HORIZONTAL_CRACK, 10.05, 10.10),
            truth(DefectClass.HEAD_DELAMINATION, 10.30, 10.44),
        ]
        lab = label_window(G1.class_set, 10.0, 10.512, recs)
        assert lab.label is None


@pytest.fixture
def run():
    # per test: the stream is a one-shot iterator
    config = RunConfig(
        length_m=60.0,
        speed_kmh=100.0,
        noise_sigma=0.04,
        defect_density_per_km=220.0,
        seed=31,
    )
    return generate_run(config)


class TestDatasets:
    def test_every_group_gets_positives_and_negatives(self, run):
        stream, truth_list = run
        datasets = build_group_datasets(stream, truth_list, seed=1)
        for g in FUSION_GROUPS:
            labels = {label for _, label in datasets[g.group_id]}
            assert DefectClass.NO_INDICATION in labels
        all_positive_labels = {
            label
            for data in datasets.values()
            for _, label in data
            if label is not DefectClass.NO_INDICATION
        }
        truth_classes = {t.defect_class for t in truth_list}
        assert all_positive_labels <= truth_classes
        assert all_positive_labels  # at least some indications became samples

    def test_labels_belong_to_the_group(self, run):
        stream, truth_list = run
        datasets = build_group_datasets(stream, truth_list, seed=1)
        for g in FUSION_GROUPS:
            for fused, label in datasets[g.group_id]:
                assert fused.group_id == g.group_id
                assert label in g.class_set


class TestModelBank:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        datasets = {}
        for g in FUSION_GROUPS:
            datasets[g.group_id] = [
                (
                    rng.random((g.channel_count, 16, 16), dtype=np.float32),
                    g.class_set[i % len(g.class_set)],
                )
                for i in range(6)
            ]
        models = train_group_models(
            datasets,
            TrainSettings(epochs=2, batch_size=4, jitter_px=0),
            in_hw=16,
        )
        save_model_bank(models, tmp_path / "bank")
        loaded = load_model_bank(tmp_path / "bank")
        assert set(loaded) == {1, 2, 3, 4, 5}
        for gid, params in models.items():
            for (_, a), (_, b) in zip(params.arrays(), loaded[gid].arrays()):
                np.testing.assert_array_equal(a, b)

    def test_missing_group_detected(self, tmp_path):
        import shutil

        rng = np.random.default_rng(0)
        datasets = {
            g.group_id: [
                (rng.random((g.channel_count, 16, 16), dtype=np.float32),
                 DefectClass.NO_INDICATION)
            ]
            for g in FUSION_GROUPS
        }
        models = train_group_models(
            datasets, TrainSettings(epochs=1, batch_size=1, jitter_px=0), in_hw=16
        )
        save_model_bank(models, tmp_path / "bank")
        shutil.rmtree(tmp_path / "bank" / "G3")
        with pytest.raises(FileNotFoundError, match="G3"):
            load_model_bank(tmp_path / "bank")
