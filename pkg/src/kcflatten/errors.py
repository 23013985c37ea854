"""Exception hierarchy shared across the package."""


class KCFlattenError(Exception):
    """Base class for all package errors."""


class LabelError(KCFlattenError):
    """Invalid category / segment / class-index combination."""


class DatasetError(KCFlattenError):
    """Manifest, image, masking or segmentation failure."""


class FoldError(KCFlattenError):
    """Cross-validation split cannot be constructed as requested."""


class ModelError(KCFlattenError):
    """Classifier configuration or input-contract violation."""


class TrainingError(KCFlattenError):
    """Training or evaluation driver failure."""


class LeakageError(TrainingError):
    """A test instance overlaps the instances a model was trained on."""


class PlanError(KCFlattenError):
    """Manipulation plan parsing, lookup or construction failure."""


class ExecutionError(KCFlattenError):
    """Plan execution precondition or per-step failure.

    Carries the step index when the failure is tied to a specific step.
    """

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index
