"""Rail indication taxonomy, probe-angle signatures, and the five fusion groups.

Every indication type reflects ultrasound back only on a characteristic
subset of probe angles, so channels are combined into five fixed groups,
each feeding one specialized classifier. This module is the single source
of truth for the class list, the per-class responding-angle signatures,
and the group -> class-set assignment used by the simulator, the fusion
stage, and the decision stage.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

PROBE_ANGLES: tuple[int, ...] = (-70, -55, -35, 0, 35, 55, 70)


class DefectClass(enum.Enum):
    """Closed set of indication types a decoded defectogram can carry.

    Technological indications are expected structural reflectors (joints,
    welds); the remaining members are genuine defects. BOLT_HOLE_INTACT is
    a helper class so classifiers learn to tell a healthy bolt hole from a
    star-cracked one.
    """

    NO_INDICATION = "NoIndication"
    # technological
    BOLTED_JOINT = "BoltedJoint"
    RAIL_JOINT = "RailJoint"
    WELD = "Weld"
    # defects
    HEAD_HORIZONTAL_CRACK = "HeadHorizontalCrack"
    HEAD_DELAMINATION = "HeadDelamination"
    FOOT_DETACHMENT = "FootDetachment"
    WEB_CRACK = "WebCrack"
    WELD_VOID = "WeldVoid"
    VERTICAL_CRACK = "VerticalCrack"
    INCLINED_CRACK = "InclinedCrack"
    BOLT_HOLE_STAR_CRACK = "BoltHoleStarCrack"
    # simulator helper
    BOLT_HOLE_INTACT = "BoltHoleIntact"


TECHNOLOGICAL_CLASSES = frozenset(
    {DefectClass.BOLTED_JOINT, DefectClass.RAIL_JOINT, DefectClass.WELD}
)

#: Classes that count as actual damage (everything that is neither a
#: technological reflector, an intact bolt hole, nor background).
DEFECT_CLASSES = frozenset(
    c
    for c in DefectClass
    if c
    not in TECHNOLOGICAL_CLASSES
    | {DefectClass.NO_INDICATION, DefectClass.BOLT_HOLE_INTACT}
)

_ALL = frozenset(PROBE_ANGLES)

# Responding-angle signature per class. Horizontal separations echo the 0
# degree probe; transverse cracks the +/-70 pair; bolt holes the five-angle
# combination; inclined cracks 0 and +/-35; web-region cracks +/-55. Joints
# and welds are strong reflectors visible on every channel; a weld void
# answers on the web pair plus 0 degrees.
_SIGNATURES: dict[DefectClass, frozenset[int]] = {
    DefectClass.HEAD_HORIZONTAL_CRACK: frozenset({0}),
    DefectClass.HEAD_DELAMINATION: frozenset({0}),
    DefectClass.FOOT_DETACHMENT: frozenset({0}),
    DefectClass.VERTICAL_CRACK: frozenset({-70, 70}),
    DefectClass.BOLT_HOLE_INTACT: frozenset({-70, -35, 0, 35, 70}),
    DefectClass.BOLT_HOLE_STAR_CRACK: frozenset({-70, -35, 0, 35, 70}),
    DefectClass.INCLINED_CRACK: frozenset({-35, 0, 35}),
    DefectClass.WEB_CRACK: frozenset({-55, 55}),
    DefectClass.WELD_VOID: frozenset({-55, 0, 55}),
    DefectClass.BOLTED_JOINT: _ALL,
    DefectClass.RAIL_JOINT: _ALL,
    DefectClass.WELD: _ALL,
}


def class_signature(defect_class: DefectClass) -> frozenset[int]:
    """Return the probe angles on which ``defect_class`` produces an echo."""
    if defect_class is DefectClass.NO_INDICATION:
        raise ValueError("NoIndication has no responding-angle signature")
    return _SIGNATURES[defect_class]


@dataclass(frozen=True)
class FusionGroup:
    """One of the five channel combinations routed to its own classifier.

    ``angles`` is sorted ascending; ``class_set`` starts with NO_INDICATION
    and lists the classes this group's classifier distinguishes.
    """

    group_id: int
    angles: tuple[int, ...]
    class_set: tuple[DefectClass, ...]

    def __post_init__(self) -> None:
        if self.angles != tuple(sorted(self.angles)):
            raise ValueError("group angles must be sorted ascending")
        if self.class_set[0] is not DefectClass.NO_INDICATION:
            raise ValueError("class_set must start with NoIndication")
        if len(set(self.class_set)) != len(self.class_set):
            raise ValueError("class_set contains duplicates")

    @property
    def channel_count(self) -> int:
        return len(self.angles)


FUSION_GROUPS: tuple[FusionGroup, ...] = (
    FusionGroup(
        1,
        (0,),
        (
            DefectClass.NO_INDICATION,
            DefectClass.HEAD_HORIZONTAL_CRACK,
            DefectClass.HEAD_DELAMINATION,
            DefectClass.FOOT_DETACHMENT,
        ),
    ),
    FusionGroup(
        2,
        (-70, 70),
        (DefectClass.NO_INDICATION, DefectClass.VERTICAL_CRACK),
    ),
    FusionGroup(
        3,
        (-70, -35, 0, 35, 70),
        (
            DefectClass.NO_INDICATION,
            DefectClass.BOLT_HOLE_INTACT,
            DefectClass.BOLTED_JOINT,
            DefectClass.BOLT_HOLE_STAR_CRACK,
        ),
    ),
    FusionGroup(
        4,
        (-35, 0, 35),
        (DefectClass.NO_INDICATION, DefectClass.INCLINED_CRACK),
    ),
    FusionGroup(
        5,
        (-55, 55),
        (
            DefectClass.NO_INDICATION,
            DefectClass.WEB_CRACK,
            DefectClass.WELD_VOID,
            DefectClass.RAIL_JOINT,
            DefectClass.WELD,
        ),
    ),
)

_GROUPS_BY_ID = {g.group_id: g for g in FUSION_GROUPS}


def group_by_id(group_id: int) -> FusionGroup:
    try:
        return _GROUPS_BY_ID[group_id]
    except KeyError:
        raise KeyError(f"unknown fusion group id {group_id}") from None


def groups_for_class(defect_class: DefectClass) -> tuple[FusionGroup, ...]:
    """Groups whose classifier knows ``defect_class`` (NoIndication: all)."""
    return tuple(g for g in FUSION_GROUPS if defect_class in g.class_set)
