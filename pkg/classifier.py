"""
CNN classifiers, their training loop and evaluation.

Two architectures are provided:

- ``simple_cnn``: conv(32, 3x3) -> ReLU -> maxpool(2) -> conv(64, 3x3) -> ReLU
  -> maxpool(2) -> dense(128) -> ReLU -> dense(num_classes)
- ``deep_cnn``: three blocks of two padded 3x3 convs (32 / 64 / 128 channels)
  with ReLU and maxpool(2), then dense(128) -> ReLU -> dense(num_classes)

Both expose a 128-dimensional penultimate feature used by the ``fid`` module.
Every call to :func:`train_classifier` starts from a fresh initialization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator
from sklearn.metrics import confusion_matrix
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from mixer import audit
from models import DatasetName, LabeledImageSet
from utils.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint
from utils.errors import DivergenceError, FormatError, RangeError, ShapeError
from utils.helpers import derive_seed, torch_generator
from utils.logging import get_logger

logger = get_logger()

FEATURE_DIM = 128


class ClassifierArchitecture(str, Enum):
    """Enumeration of classifier architectures."""
    SIMPLE_CNN = "simple_cnn"
    DEEP_CNN = "deep_cnn"


_ARCHITECTURE_DEFAULTS: dict[ClassifierArchitecture, dict[str, Any]] = {
    ClassifierArchitecture.SIMPLE_CNN: {"learning_rate": 1e-4, "epochs": 10},
    ClassifierArchitecture.DEEP_CNN: {"learning_rate": 1e-3, "epochs": 50},
}

# --- Per-dataset settings (models, learning rates, epochs) ---
RECOMMENDED_SETTINGS: dict[DatasetName, dict[str, Any]] = {
    DatasetName.MNIST: {"architecture": ClassifierArchitecture.SIMPLE_CNN, "learning_rate": 1e-4, "epochs": 10},
    DatasetName.FASHION_MNIST: {"architecture": ClassifierArchitecture.SIMPLE_CNN, "learning_rate": 1e-4, "epochs": 10},
    DatasetName.CIFAR10: {"architecture": ClassifierArchitecture.DEEP_CNN, "learning_rate": 1e-3, "epochs": 50},
}


class ClassifierConfig(BaseModel):
    """Training hyperparameters; unset learning rate and epochs follow the architecture."""
    architecture: ClassifierArchitecture = Field(default=ClassifierArchitecture.SIMPLE_CNN)
    learning_rate: float | None = Field(default=None, gt=0)
    epochs: int | None = Field(default=None, ge=0)
    batch_size: int = Field(default=128, ge=1)
    seed: int = Field(default=0)
    adam_betas: tuple[float, float] = Field(default=(0.9, 0.999))
    adam_eps: float = Field(default=1e-8, gt=0)

    @model_validator(mode="after")
    def _fill_architecture_defaults(self) -> "ClassifierConfig":
        defaults = _ARCHITECTURE_DEFAULTS[self.architecture]
        if self.learning_rate is None:
            self.learning_rate = defaults["learning_rate"]
        if self.epochs is None:
            self.epochs = defaults["epochs"]
        return self

    @classmethod
    def for_dataset(cls, dataset: DatasetName | str, **overrides: Any) -> "ClassifierConfig":
        settings = dict(RECOMMENDED_SETTINGS[DatasetName(dataset)])
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**settings)


# ============================================================================
# NETWORKS
# ============================================================================

def _flat_size(body: nn.Module, input_shape: tuple[int, int, int]) -> int:
    h, w, c = input_shape
    with torch.no_grad():
        try:
            return int(body(torch.zeros(1, c, h, w)).shape[1])
        except RuntimeError as e:
            raise ShapeError(f"input shape {input_shape} is too small for this architecture") from e


class SimpleCNN(nn.Module):
    def __init__(self, input_shape: tuple[int, int, int], num_classes: int):
        super().__init__()
        channels = input_shape[2]
        self.body = nn.Sequential(
            nn.Conv2d(channels, 32, kernel_size=3),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, kernel_size=3),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Flatten(),
        )
        self.head = nn.Sequential(nn.Linear(_flat_size(self.body, input_shape), FEATURE_DIM), nn.ReLU())
        self.output = nn.Linear(FEATURE_DIM, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.output(self.features(x))


class DeepCNN(nn.Module):
    def __init__(self, input_shape: tuple[int, int, int], num_classes: int):
        super().__init__()
        layers: list[nn.Module] = []
        in_channels = input_shape[2]
        for out_channels in (32, 64, 128):
            layers += [
                nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
                nn.ReLU(),
                nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ]
            in_channels = out_channels
        layers.append(nn.Flatten())
        self.body = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.Linear(_flat_size(self.body, input_shape), FEATURE_DIM), nn.ReLU())
        self.output = nn.Linear(FEATURE_DIM, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.output(self.features(x))


ARCHITECTURES: dict[ClassifierArchitecture, type[nn.Module]] = {
    ClassifierArchitecture.SIMPLE_CNN: SimpleCNN,
    ClassifierArchitecture.DEEP_CNN: DeepCNN,
}


def build_network(
    architecture: ClassifierArchitecture | str, input_shape: tuple[int, int, int], num_classes: int
) -> nn.Module:
    return ARCHITECTURES[ClassifierArchitecture(architecture)](tuple(input_shape), num_classes)


# ============================================================================
# TRAINED MODEL + REPORTS
# ============================================================================

def state_to_numpy(module: nn.Module) -> dict[str, np.ndarray]:
    return {name: tensor.detach().cpu().numpy().copy() for name, tensor in module.state_dict().items()}


@dataclass(frozen=True, eq=False)
class TrainedClassifier:
    """
    Immutable trained classifier.

    Attributes:
        architecture: Architecture tag.
        num_classes: Size of the label space.
        input_shape: (height, width, channels) the network accepts.
        parameters: Named parameter store (numpy arrays).
        manifest: Training record (config, dataset audit, loss curve, wall time).
    """
    architecture: ClassifierArchitecture
    num_classes: int
    input_shape: tuple[int, int, int]
    parameters: dict[str, np.ndarray]
    manifest: dict[str, Any] = field(default_factory=dict)

    @cached_property
    def module(self) -> nn.Module:
        network = build_network(self.architecture, self.input_shape, self.num_classes)
        network.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.parameters.items()})
        network.eval()
        return network


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    test_set: str
    sample_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": [None if np.isnan(v) else float(v) for v in self.per_class_accuracy],
            "confusion": self.confusion.tolist(),
            "test_set": self.test_set,
            "sample_count": self.sample_count,
        }


# ============================================================================
# TRAINING
# ============================================================================

def _batch(images: np.ndarray, indices: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(images[indices]).permute(0, 3, 1, 2).contiguous()


def _check_input(model_shape: tuple[int, ...], data: LabeledImageSet) -> None:
    if tuple(model_shape) != data.image_shape:
        raise ShapeError(f"{data.name}: image shape {data.image_shape} does not match model input {tuple(model_shape)}")


def train_classifier(
    data: LabeledImageSet,
    config: ClassifierConfig,
    *,
    log_context: dict[str, Any] | None = None,
) -> TrainedClassifier:
    """
    Train a freshly initialized classifier with Adam and cross-entropy.

    Raises:
        DivergenceError: If a batch loss is not finite.
        ShapeError: If the images are too small for the architecture.
        RangeError: If asked to train for at least one epoch on an empty set.
    """
    context = dict(log_context or {})
    if config.epochs and len(data) == 0:
        raise RangeError(f"{data.name}: cannot train on an empty set")

    torch.manual_seed(derive_seed(config.seed, "classifier", "init"))
    network = build_network(config.architecture, data.image_shape, data.num_classes)
    optimizer = torch.optim.Adam(
        network.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    loss_fn = nn.CrossEntropyLoss()
    count = len(data)
    loader = DataLoader(
        TensorDataset(_batch(data.images, np.arange(count)), torch.from_numpy(np.array(data.labels))),
        batch_size=config.batch_size,
        shuffle=count > 0,  # RandomSampler rejects empty sets
        generator=torch_generator(config.seed, "classifier", "shuffle"),
    )

    started = time.perf_counter()
    loss_curve: list[float] = []
    network.train()
    for epoch in range(config.epochs):
        running = 0.0
        for batch_index, (images, labels) in enumerate(loader):
            loss = loss_fn(network(images), labels)
            if not torch.isfinite(loss):
                raise DivergenceError("classifier", epoch, batch_index, float(loss.item()))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += float(loss.item()) * len(labels)
        loss_curve.append(running / count)
        logger.info(
            "Classifier epoch loss %.5f", loss_curve[-1], extra={**context, "epoch": epoch}
        )
    network.eval()

    manifest = {
        "config": config.model_dump(mode="json"),
        "dataset": data.name,
        "dataset_audit": audit(data).to_dict(),
        "loss_curve": loss_curve,
        "wall_time_s": time.perf_counter() - started,
        "torch_version": torch.__version__,
    }
    return TrainedClassifier(
        architecture=config.architecture,
        num_classes=data.num_classes,
        input_shape=data.image_shape,
        parameters=state_to_numpy(network),
        manifest=manifest,
    )


# ============================================================================
# INFERENCE
# ============================================================================

def _forward_batches(model: TrainedClassifier, data: LabeledImageSet, head: str, batch_size: int) -> np.ndarray:
    _check_input(model.input_shape, data)
    network = model.module
    fn = network.features if head == "features" else network.forward
    width = FEATURE_DIM if head == "features" else model.num_classes
    outputs = [np.zeros((0, width), dtype=np.float64)]
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            indices = np.arange(start, min(start + batch_size, len(data)))
            outputs.append(fn(_batch(data.images, indices)).double().numpy())
    return np.concatenate(outputs, axis=0)


def predict_proba(model: TrainedClassifier, data: LabeledImageSet, batch_size: int = 512) -> np.ndarray:
    logits = torch.from_numpy(_forward_batches(model, data, "logits", batch_size))
    return torch.softmax(logits, dim=1).numpy()


def evaluate(model: TrainedClassifier, test: LabeledImageSet, batch_size: int = 512) -> EvalReport:
    """
    Accuracy, per-class accuracy and confusion matrix of ``model`` on ``test``.

    Predictions are the argmax of the softmax; ties go to the lowest class index.

    Raises:
        ShapeError: If the test images do not match the model input shape.
        RangeError: If the test set is empty or uses a different label space.
    """
    _check_input(model.input_shape, test)
    if len(test) == 0:
        raise RangeError(f"{test.name}: cannot evaluate on an empty set")
    if test.num_classes != model.num_classes:
        raise RangeError(f"{test.name}: {test.num_classes} classes but model has {model.num_classes}")
    predictions = np.argmax(predict_proba(model, test, batch_size), axis=1)
    confusion = confusion_matrix(test.labels, predictions, labels=np.arange(model.num_classes)).astype(np.int64)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    return EvalReport(
        accuracy=float(np.trace(confusion) / confusion.sum()),
        per_class_accuracy=per_class,
        confusion=confusion,
        test_set=test.name,
        sample_count=len(test),
    )


def extract_features(model: TrainedClassifier, data: LabeledImageSet, batch_size: int = 512) -> np.ndarray:
    """Penultimate-layer activations, shape (count, 128)."""
    return _forward_batches(model, data, "features", batch_size)


# ============================================================================
# PERSISTENCE
# ============================================================================

def save_classifier(model: TrainedClassifier) -> bytes:
    return encode_checkpoint(
        Checkpoint(
            architecture=f"classifier/{model.architecture.value}",
            shape=model.input_shape,
            parameters=model.parameters,
            metadata={"num_classes": model.num_classes, "manifest": model.manifest},
        )
    )


def load_classifier(payload: bytes) -> TrainedClassifier:
    checkpoint = decode_checkpoint(payload)
    kind, _, arch = checkpoint.architecture.partition("/")
    if kind != "classifier" or arch not in {a.value for a in ClassifierArchitecture}:
        raise FormatError(f"Checkpoint holds {checkpoint.architecture!r}, not a classifier")
    if len(checkpoint.shape) != 3:
        raise FormatError(f"Classifier checkpoint has shape header {checkpoint.shape}")
    return TrainedClassifier(
        architecture=ClassifierArchitecture(arch),
        num_classes=int(checkpoint.metadata["num_classes"]),
        input_shape=tuple(checkpoint.shape),  # type: ignore[arg-type]
        parameters=checkpoint.parameters,
        manifest=checkpoint.metadata.get("manifest", {}),
    )
