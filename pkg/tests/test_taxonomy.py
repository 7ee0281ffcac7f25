import pytest

from udrt.taxonomy import (
    FUSION_GROUPS,
    PROBE_ANGLES,
    DefectClass,
    class_signature,
    group_by_id,
    groups_for_class,
)


def test_head_horizontal_crack_answers_straight_probe_only():
    assert class_signature(DefectClass.HEAD_HORIZONTAL_CRACK) == {0}


def test_transverse_crack_answers_70_degree_pair():
    assert class_signature(DefectClass.VERTICAL_CRACK) == {-70, 70}


def test_inclined_crack_answers_0_and_35():
    assert class_signature(DefectClass.INCLINED_CRACK) == {-35, 0, 35}


def test_bolt_hole_answers_five_angle_combination():
    assert class_signature(DefectClass.BOLT_HOLE_INTACT) == {-70, -35, 0, 35, 70}


def test_no_indication_has_no_signature():
    with pytest.raises(ValueError):
        class_signature(DefectClass.NO_INDICATION)


def test_every_class_has_a_signature_within_probe_angles():
    for cls in DefectClass:
        if cls is DefectClass.NO_INDICATION:
            continue
        sig = class_signature(cls)
        assert sig
        assert sig <= set(PROBE_ANGLES)


def test_the_five_groups_cover_the_published_combinations():
    angles = {g.group_id: set(g.angles) for g in FUSION_GROUPS}
    assert angles == {
        1: {0},
        2: {-70, 70},
        3: {-70, -35, 0, 35, 70},
        4: {-35, 0, 35},
        5: {-55, 55},
    }


def test_group_class_sets_start_with_no_indication_and_are_unique():
    for g in FUSION_GROUPS:
        assert g.class_set[0] is DefectClass.NO_INDICATION
        assert len(set(g.class_set)) == len(g.class_set)


def test_every_class_belongs_to_exactly_one_group():
    seen = {}
    for g in FUSION_GROUPS:
        for cls in g.class_set[1:]:
            assert cls not in seen, f"{cls} in groups {seen[cls]} and {g.group_id}"
            seen[cls] = g.group_id
    missing = set(DefectClass) - set(seen) - {DefectClass.NO_INDICATION}
    assert not missing


def test_group_class_table_consistent_with_signatures():
    # each group can actually see every class it is responsible for: the
    # class echoes on all of the group's angles
    for g in FUSION_GROUPS:
        for cls in g.class_set[1:]:
            assert set(g.angles) <= class_signature(cls), (g.group_id, cls)


def test_group_lookup():
    assert group_by_id(3).channel_count == 5
    with pytest.raises(KeyError):
        group_by_id(6)
    assert [g.group_id for g in groups_for_class(DefectClass.WELD)] == [5]
    assert [g.group_id for g in groups_for_class(DefectClass.HEAD_DELAMINATION)] == [1]
