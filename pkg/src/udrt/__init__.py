"""udrt: real-time decoding of multi-channel ultrasonic rail defectograms."""

from .taxonomy import (
    FUSION_GROUPS,
    PROBE_ANGLES,
    DefectClass,
    FusionGroup,
    class_signature,
    group_by_id,
    groups_for_class,
)
from .simulator import GroundTruthRecord, RunConfig, generate_run
from .ingest import (
    AScanColumn,
    ChannelFrame,
    ChannelSpec,
    ColumnStream,
    FrameAssembler,
    apparent_depth,
    correct_position,
)
from .preprocess import FusedInput, affine_resample, fuse, normalize
from .classifier import ModelParams, Verdict, forward, load_model, save_model, train
from .decision import (
    DecisionStatus,
    ExpertLabel,
    ReviewStore,
    RetrainingSet,
    Thresholds,
    TrackDecision,
    compose,
    gate,
)
from .pipeline import Pipeline, bench, thread_budget
from .udfg import read_udfg, write_udfg

__version__ = "0.1.0"

__all__ = [
    "AScanColumn",
    "ChannelFrame",
    "ChannelSpec",
    "ColumnStream",
    "DecisionStatus",
    "DefectClass",
    "ExpertLabel",
    "FrameAssembler",
    "FUSION_GROUPS",
    "FusedInput",
    "FusionGroup",
    "GroundTruthRecord",
    "ModelParams",
    "Pipeline",
    "PROBE_ANGLES",
    "ReviewStore",
    "RetrainingSet",
    "RunConfig",
    "Thresholds",
    "TrackDecision",
    "Verdict",
    "affine_resample",
    "apparent_depth",
    "bench",
    "class_signature",
    "compose",
    "correct_position",
    "forward",
    "fuse",
    "gate",
    "generate_run",
    "group_by_id",
    "groups_for_class",
    "load_model",
    "normalize",
    "read_udfg",
    "save_model",
    "thread_budget",
    "train",
    "write_udfg",
]
