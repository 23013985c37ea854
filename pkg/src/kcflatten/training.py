"""Fold training, evaluation and the full k-fold experiment driver.

Training uses plain SGD with momentum and a step learning-rate schedule:
lr(epoch) = learning_rate * lr_decay ** (epoch // lr_step_epochs). There is
no validation split or early stopping; folds are trained for a fixed epoch
budget and tested on their held-out instances only.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .dataset import (
    DatasetManifest,
    Modality,
    compose_modalities,
    manifest_fingerprint,
)
from .errors import LeakageError, TrainingError
from .folds import EvalReport, FoldSplit, aggregate_report, make_folds
from .kcnet import KCNet, KCNetConfig, nll_loss
from .labels import (
    CATEGORIES,
    NUM_CLASSES,
    NUM_SEGMENTS,
    GarmentCategory,
    GarmentInstance,
)

ARTIFACT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    lr_step_epochs: int = 8
    epochs: int = 24
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    hflip_augment: bool = False  # off for protocol-faithful runs

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr_step_epochs <= 0:
            raise TrainingError("epochs, batch_size and lr_step_epochs must be positive")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_decay ** (epoch // config.lr_step_epochs)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float  # percent
    learning_rate: float


@dataclass(frozen=True)
class TrainingCurve:
    records: tuple[EpochStats, ...]

    def learning_rates(self) -> list[float]:
        return [r.learning_rate for r in self.records]

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "train_accuracy", "learning_rate"])
            for r in self.records:
                writer.writerow(
                    [r.epoch, repr(r.train_loss), repr(r.train_accuracy), repr(r.learning_rate)]
                )
        return path


class CaptureArrayDataset(Dataset):
    """Composed modality stacks for a subset of manifest instances.

    All stacks are decoded once and kept in memory; repeated epochs then
    avoid any image decoding.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        modality: Modality,
        instances: Iterable[GarmentInstance] | None = None,
        hflip: bool = False,
    ):
        wanted = None if instances is None else set(instances)
        self.entries = [
            e for e in manifest.entries if wanted is None or e.instance in wanted
        ]
        if modality.needs_rgb and any(e.rgb_path is None for e in self.entries):
            raise TrainingError(
                f"modality {modality} requires rgb but the dataset has "
                "depth-only captures"
            )
        self.modality = modality
        self.hflip = hflip
        self.instance_list = [e.instance for e in self.entries]
        stacks = []
        labels = []
        for e in self.entries:
            capture = manifest.load_capture(e)
            stacks.append(compose_modalities(capture, modality, manifest.max_depth_mm))
            labels.append(e.label.flat_index)
        self.stacks = (
            np.stack(stacks).astype(np.float32) if stacks else np.empty((0,), np.float32)
        )
        self.labels = np.asarray(labels, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int):
        stack = torch.from_numpy(self.stacks[idx])
        if self.hflip and torch.rand(()) < 0.5:
            stack = torch.flip(stack, dims=[2])
        return stack, int(self.labels[idx])


@dataclass
class ModelArtifact:
    """Trained parameters plus the provenance needed to reuse them safely."""

    state_dict: dict
    kc_config: KCNetConfig
    train_config: TrainConfig
    fold_id: int
    train_instances: frozenset[GarmentInstance]
    manifest_fingerprint: str

    def build_model(self) -> KCNet:
        model = KCNet(self.kc_config)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        payload = {
            "format_version": ARTIFACT_FORMAT_VERSION,
            "state_dict": self.state_dict,
            "kc_config": self.kc_config.to_dict(),
            "train_config": asdict(self.train_config),
            "fold_id": self.fold_id,
            "train_instances": sorted(
                (i.category.value, i.instance_id) for i in self.train_instances
            ),
            "manifest_fingerprint": self.manifest_fingerprint,
        }
        torch.save(payload, path)
        return path

    @classmethod
    def load(cls, path: Path | str) -> "ModelArtifact":
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
        version = payload.get("format_version")
        if version != ARTIFACT_FORMAT_VERSION:
            raise TrainingError(
                f"unsupported model artifact format {version!r} in {path}"
            )
        return cls(
            state_dict=payload["state_dict"],
            kc_config=KCNetConfig.from_dict(payload["kc_config"]),
            train_config=TrainConfig(**payload["train_config"]),
            fold_id=int(payload["fold_id"]),
            train_instances=frozenset(
                GarmentInstance(GarmentCategory.from_name(c), int(i))
                for c, i in payload["train_instances"]
            ),
            manifest_fingerprint=str(payload["manifest_fingerprint"]),
        )


def train_fold(
    fold: FoldSplit,
    manifest: DatasetManifest,
    kc_config: KCNetConfig,
    train_config: TrainConfig,
) -> tuple[ModelArtifact, TrainingCurve]:
    """Train one model on the fold's train instances only.

    Deterministic for a given seed on one platform/build: model init, batch
    order and augmentation all derive from ``train_config.seed``.
    """
    if not fold.train_instances:
        raise TrainingError(f"fold {fold.fold_id} has an empty train set")

    torch.manual_seed(train_config.seed)
    dataset = CaptureArrayDataset(
        manifest,
        kc_config.modality,
        instances=fold.train_instances,
        hflip=train_config.hflip_augment,
    )
    if len(dataset) == 0:
        raise TrainingError(
            f"fold {fold.fold_id}: no captures for the train instances"
        )
    model = KCNet(kc_config)
    model.train()
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=train_config.learning_rate,
        momentum=train_config.momentum,
    )
    generator = torch.Generator().manual_seed(train_config.seed)
    # a trailing batch of one sample breaks batch norm in train mode
    drop_last = len(dataset) % train_config.batch_size == 1 and len(dataset) > 1
    loader = DataLoader(
        dataset,
        batch_size=train_config.batch_size,
        shuffle=True,
        generator=generator,
        num_workers=0,
        drop_last=drop_last,
    )

    records = []
    for epoch in range(train_config.epochs):
        lr = lr_at_epoch(train_config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        total_loss = 0.0
        correct = 0
        seen = 0
        for stacks, labels in loader:
            optimizer.zero_grad()
            logprobs = model(stacks)
            loss = nll_loss(logprobs, labels)
            loss.backward()
            optimizer.step()
            n = labels.shape[0]
            total_loss += float(loss.detach()) * n
            correct += int((logprobs.detach().argmax(dim=1) == labels).sum())
            seen += n
        records.append(
            EpochStats(
                epoch=epoch,
                train_loss=total_loss / seen,
                train_accuracy=100.0 * correct / seen,
                learning_rate=lr,
            )
        )

    model.eval()
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    artifact = ModelArtifact(
        state_dict=state,
        kc_config=kc_config,
        train_config=train_config,
        fold_id=fold.fold_id,
        train_instances=fold.train_instances,
        manifest_fingerprint=manifest_fingerprint(manifest),
    )
    return artifact, TrainingCurve(tuple(records))


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    per_category: dict[GarmentCategory, float]  # percent
    confusion: np.ndarray  # (50, 50), rows = true class, cols = predicted
    overall: float  # percent
    n_samples: int


def accuracy_from_predictions(
    y_true: Sequence[int], y_pred: Sequence[int]
) -> EvalResult:
    """Per-category accuracies, overall accuracy and the confusion matrix
    from flat class indices."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise TrainingError("y_true and y_pred must be 1-D and equal length")
    if y_true.size == 0:
        raise TrainingError("cannot compute accuracy over zero samples")

    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    per_category = {}
    for cat in CATEGORIES:
        sel = (y_true // NUM_SEGMENTS) == cat.index
        if sel.any():
            per_category[cat] = 100.0 * float((y_pred[sel] == y_true[sel]).mean())
    overall = 100.0 * float(np.trace(confusion)) / y_true.size
    return EvalResult(
        per_category=per_category,
        confusion=confusion,
        overall=overall,
        n_samples=int(y_true.size),
    )


def evaluate(
    artifact: ModelArtifact,
    manifest: DatasetManifest,
    test_instances: Iterable[GarmentInstance],
    batch_size: int = 64,
) -> EvalResult:
    """Evaluate a trained artifact on held-out instances of its dataset.

    Refuses to run when the manifest differs from the one the artifact was
    trained on, or when any test instance overlaps the train instances.
    """
    test_instances = frozenset(test_instances)
    if not test_instances:
        raise TrainingError("no test instances given")
    fingerprint = manifest_fingerprint(manifest)
    if fingerprint != artifact.manifest_fingerprint:
        raise TrainingError(
            "manifest fingerprint does not match the artifact's training dataset"
        )
    overlap = test_instances & artifact.train_instances
    if overlap:
        names = ", ".join(
            f"{i.category.value}/{i.instance_id}"
            for i in sorted(overlap, key=GarmentInstance.sort_key)
        )
        raise LeakageError(f"test instances seen during training: {names}")

    dataset = CaptureArrayDataset(
        manifest, artifact.kc_config.modality, instances=test_instances
    )
    if len(dataset) == 0:
        raise TrainingError("test instances have no captures in the manifest")
    model = artifact.build_model()
    preds = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = torch.from_numpy(dataset.stacks[start : start + batch_size])
            logprobs = model(batch)
            preds.append(logprobs.argmax(dim=1).numpy())
    y_pred = np.concatenate(preds)
    return accuracy_from_predictions(dataset.labels, y_pred)


# --------------------------------------------------------------------------
# k-fold driver
# --------------------------------------------------------------------------


@dataclass
class KFoldResult:
    report: EvalReport
    artifacts: list[ModelArtifact]
    curves: list[TrainingCurve]
    fold_results: list[EvalResult]


def run_kfold(
    manifest: DatasetManifest,
    kc_config: KCNetConfig,
    train_config: TrainConfig,
    k: int = 4,
    fold_seed: int | None = None,
) -> KFoldResult:
    """Train and evaluate one model per fold; aggregate the accuracy grid.

    Fold f trains with seed ``train_config.seed + f`` so folds stay
    independent but the whole experiment is reproducible.
    """
    fold_splits = make_folds(manifest, k, seed=fold_seed)
    artifacts = []
    curves = []
    results = []
    for fold in fold_splits:
        fold_config = replace(train_config, seed=train_config.seed + fold.fold_id)
        artifact, curve = train_fold(fold, manifest, kc_config, fold_config)
        result = evaluate(artifact, manifest, fold.test_instances)
        artifacts.append(artifact)
        curves.append(curve)
        results.append(result)

    cells = {}
    for cat in CATEGORIES:
        row = []
        for fold, result in zip(fold_splits, results):
            if cat not in result.per_category:
                raise TrainingError(
                    f"fold {fold.fold_id} has no test captures for {cat.value}"
                )
            row.append(result.per_category[cat])
        cells[cat] = tuple(row)
    report = aggregate_report(cells, kc_config.modality)
    return KFoldResult(
        report=report, artifacts=artifacts, curves=curves, fold_results=results
    )
