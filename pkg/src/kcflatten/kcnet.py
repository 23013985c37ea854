"""KCNet: 18-layer residual backbone + fully connected head over 50 classes.

The network maps an image stack of a hung garment to log-probabilities over
the flat (category, segment) class space. The backbone is torchvision's
ResNet-18; its first convolution is adapted to the modality's channel count
and its classifier is replaced by a configurable fully connected head that
ends in log-softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torchvision.models import resnet18

from .dataset import Modality
from .errors import ModelError
from .labels import NUM_CLASSES, ClassLabel

BACKBONE_FEATURES = 512  # resnet18 penultimate width


@dataclass(frozen=True)
class KCNetConfig:
    modality: Modality
    input_resolution: int = 256
    head_widths: tuple[int, ...] = (BACKBONE_FEATURES, NUM_CLASSES)
    pretrained: bool = False

    def __post_init__(self) -> None:
        if self.input_resolution < 32:
            raise ModelError(
                f"input_resolution must be >= 32, got {self.input_resolution}"
            )
        if len(self.head_widths) < 2:
            raise ModelError("head_widths needs at least an input and output width")
        if self.head_widths[0] != BACKBONE_FEATURES:
            raise ModelError(
                f"head must start at the backbone width {BACKBONE_FEATURES}, "
                f"got {self.head_widths[0]}"
            )
        if self.head_widths[-1] != NUM_CLASSES:
            raise ModelError(
                f"head must end in {NUM_CLASSES} classes, got {self.head_widths[-1]}"
            )

    def to_dict(self) -> dict:
        return {
            "modality": self.modality.kind,
            "input_resolution": self.input_resolution,
            "head_widths": list(self.head_widths),
            "pretrained": self.pretrained,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KCNetConfig":
        return cls(
            modality=Modality.from_name(data["modality"]),
            input_resolution=int(data["input_resolution"]),
            head_widths=tuple(int(w) for w in data["head_widths"]),
            pretrained=bool(data.get("pretrained", False)),
        )


def adapt_input_channels(weights: Tensor, target_channels: int) -> Tensor:
    """Adapt 3-channel first-layer filters to 1, 3 or 4 input channels.

    1 channel: channel-mean of the source filters. 4 channels: the source
    filters with the channel-mean appended as channel 4. Note the mean
    construction scales activations: a 1-channel input replicated to 3
    channels through the source weights yields exactly 3x the adapted
    response.
    """
    if weights.ndim != 4 or weights.shape[1] != 3:
        raise ModelError(
            f"expected source weights with 3 input channels, got shape "
            f"{tuple(weights.shape)}"
        )
    if target_channels == 3:
        return weights.clone()
    mean = weights.mean(dim=1, keepdim=True)
    if target_channels == 1:
        return mean
    if target_channels == 4:
        return torch.cat([weights, mean], dim=1)
    raise ModelError(f"unsupported target channel count {target_channels}")


class KCNet(nn.Module):
    """Known-configuration classifier; forward returns log-probabilities."""

    def __init__(self, config: KCNetConfig):
        super().__init__()
        self.config = config
        backbone = resnet18(weights=_backbone_weights(config.pretrained))
        channels = config.modality.channel_count
        if channels != 3:
            conv1 = nn.Conv2d(
                channels, 64, kernel_size=7, stride=2, padding=3, bias=False
            )
            with torch.no_grad():
                conv1.weight.copy_(
                    adapt_input_channels(backbone.conv1.weight, channels)
                )
            backbone.conv1 = conv1
        backbone.fc = nn.Identity()
        self.backbone = backbone

        layers: list[nn.Module] = []
        widths = config.head_widths
        for i in range(len(widths) - 1):
            layers.append(nn.Linear(widths[i], widths[i + 1]))
            if i < len(widths) - 2:
                layers.append(nn.ReLU(inplace=True))
        self.head = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        """Log-probabilities, shape (50,) for a single stack or (N, 50)."""
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        if x.ndim != 4:
            raise ModelError(f"expected a (C,H,W) or (N,C,H,W) stack, got {x.ndim}-d")
        expected_c = self.config.modality.channel_count
        if x.shape[1] != expected_c:
            raise ModelError(
                f"stack has {x.shape[1]} channels; modality "
                f"{self.config.modality} expects {expected_c}"
            )
        res = self.config.input_resolution
        if x.shape[2] != res or x.shape[3] != res:
            raise ModelError(
                f"stack is {x.shape[3]}x{x.shape[2]}; configured input "
                f"resolution is {res}x{res}"
            )
        logits = self.head(self.backbone(x))
        logprobs = F.log_softmax(logits, dim=1)
        return logprobs.squeeze(0) if single else logprobs


def _backbone_weights(pretrained: bool):
    if not pretrained:
        return None
    try:
        from torchvision.models import ResNet18_Weights

        return ResNet18_Weights.IMAGENET1K_V1
    except Exception as e:  # pragma: no cover - depends on torchvision version
        raise ModelError(
            "pretrained backbone weights are unavailable; use pretrained=False"
        ) from e


def nll_loss(logprobs: Tensor, label: ClassLabel | Tensor) -> Tensor:
    """Negative log-likelihood of the true class under ``logprobs``.

    Accepts a single (50,) vector with a ClassLabel, or an (N, 50) batch
    with a tensor of flat class indices (averaged over the batch).
    """
    if isinstance(label, ClassLabel):
        if logprobs.ndim != 1:
            raise ModelError("a ClassLabel target requires a single logprob vector")
        return -logprobs[label.flat_index]
    if logprobs.ndim == 1:
        logprobs = logprobs.unsqueeze(0)
        label = label.reshape(1)
    return F.nll_loss(logprobs, label)


def predict(model: KCNet, image_stack: np.ndarray | Tensor) -> ClassLabel:
    """Argmax decode of a single image stack; ties break to the lowest
    flat index."""
    if isinstance(image_stack, np.ndarray):
        image_stack = torch.from_numpy(np.ascontiguousarray(image_stack))
    if image_stack.ndim != 3:
        raise ModelError("predict expects a single (C,H,W) stack")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logprobs = model(image_stack.float())
    finally:
        model.train(was_training)
    flat = int(np.argmax(logprobs.numpy()))  # np.argmax returns the first max
    return ClassLabel.from_flat_index(flat)
