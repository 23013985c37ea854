"""Known-configuration garment recognition and dual-arm flattening.

Pipeline: a grasped garment hangs in a reproducible shape determined by the
grasp point; a classifier recognizes which of the 50 (category, segment)
known configurations it is in; the matching pre-designed manipulation plan
is selected and played back on a mock dual-arm robot.
"""

from .dataset import (
    Capture,
    DatasetManifest,
    Modality,
    compose_modalities,
    load_manifest,
    mask_depth,
    save_manifest,
    segment_garment,
    validate_manifest,
)
from .errors import KCFlattenError
from .folds import EvalReport, FoldSplit, aggregate_report, make_folds, verify_folds
from .kcnet import KCNet, KCNetConfig, nll_loss, predict
from .labels import CATEGORIES, NUM_CLASSES, ClassLabel, GarmentCategory, GarmentInstance
from .plans import (
    ManipulationPlan,
    PlanRegistry,
    Workspace,
    build_default_registry,
    default_workspace,
    generate_flatten_template,
    parse_plan_csv,
    select_plan,
    validate_plan,
    write_plan_csv,
)
from .executor import ExecutionTrace, MockRobotState, execute_plan
from .synthgen import SyntheticSpec, build_synthetic_dataset, generate_instance, render_hang
from .training import ModelArtifact, TrainConfig, evaluate, run_kfold, train_fold

__version__ = "0.1.0"

__all__ = [
    "CATEGORIES",
    "Capture",
    "ClassLabel",
    "DatasetManifest",
    "EvalReport",
    "ExecutionTrace",
    "FoldSplit",
    "GarmentCategory",
    "GarmentInstance",
    "KCFlattenError",
    "KCNet",
    "KCNetConfig",
    "ManipulationPlan",
    "MockRobotState",
    "ModelArtifact",
    "Modality",
    "NUM_CLASSES",
    "PlanRegistry",
    "SyntheticSpec",
    "TrainConfig",
    "Workspace",
    "aggregate_report",
    "build_default_registry",
    "build_synthetic_dataset",
    "compose_modalities",
    "default_workspace",
    "evaluate",
    "execute_plan",
    "generate_flatten_template",
    "generate_instance",
    "load_manifest",
    "make_folds",
    "mask_depth",
    "nll_loss",
    "parse_plan_csv",
    "predict",
    "render_hang",
    "run_kfold",
    "save_manifest",
    "segment_garment",
    "select_plan",
    "train_fold",
    "validate_manifest",
    "validate_plan",
    "verify_folds",
    "write_plan_csv",
]
