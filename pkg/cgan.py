"""
Class-conditional DCGAN for 28x28 grayscale datasets.

Generator: label embedding (size num_classes) concatenated to the latent
vector, dense projection to a (2C, S/4, S/4) feature map, two
fractionally-strided conv blocks up to (channels, S, S), sigmoid output.

Discriminator: label embedding projected to one S x S plane and stacked as
an extra input channel, two strided conv blocks with LeakyReLU, dense logit
head (sigmoid applied inside the loss).

Training alternates one discriminator step (one real batch + one fake batch)
and one generator step per batch. An optional :class:`fid.FidMonitor` drives
early stopping; the returned generator then holds the best-distance weights.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch import nn
from torch.nn import functional as F
from torch.utils.data import DataLoader, TensorDataset

from classifier import state_to_numpy
from mixer import largest_remainder
from models import LabeledImageSet, Provenance, concatenate
from utils.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint
from utils.errors import DivergenceError, FormatError, RangeError, ShapeError
from utils.helpers import derive_seed, torch_generator
from utils.logging import get_logger

if TYPE_CHECKING:
    from fid import FidMonitor

logger = get_logger()

GAN_IMAGE_SHAPE = (28, 28, 1)
CHECKPOINT_TAG = "cgan/dcgan"
_SAMPLE_CHUNK = 1000


class GanTrainConfig(BaseModel):
    """cGAN hyperparameters. Adam momentum constants stay at their conventional defaults."""
    latent_dim: int = Field(default=100, ge=1)
    d_learning_rate: float = Field(default=1e-4, gt=0)
    g_learning_rate: float = Field(default=2e-5, gt=0)
    batch_size: int = Field(default=100, ge=1)
    epochs: int = Field(default=50, ge=0)
    seed: int = Field(default=0)
    base_channels: int = Field(default=64, ge=1)
    adam_betas: tuple[float, float] = Field(default=(0.9, 0.999))
    adam_eps: float = Field(default=1e-8, gt=0)
    leaky_slope: float = Field(default=0.2, ge=0)
    early_stopping_patience: int = Field(default=5, ge=1)
    early_stopping_min_delta: float = Field(default=0.01, ge=0)
    monitor_sample_count: int = Field(default=1000, ge=2)


# ============================================================================
# NETWORKS
# ============================================================================

class ConditionalGenerator(nn.Module):
    def __init__(
        self,
        latent_dim: int,
        num_classes: int,
        output_shape: Sequence[int] = GAN_IMAGE_SHAPE,
        base_channels: int = 64,
    ):
        super().__init__()
        size, _, channels = output_shape
        if size % 4:
            raise ShapeError(f"generator output size must be divisible by 4; got {size}")
        self.seed_size = size // 4
        self.seed_channels = 2 * base_channels
        self.label_embedding = nn.Embedding(num_classes, num_classes)
        self.project = nn.Sequential(
            nn.Linear(latent_dim + num_classes, self.seed_channels * self.seed_size ** 2),
            nn.BatchNorm1d(self.seed_channels * self.seed_size ** 2),
            nn.ReLU(),
        )
        self.upsample = nn.Sequential(
            nn.ConvTranspose2d(self.seed_channels, base_channels, kernel_size=4, stride=2, padding=1),
            nn.BatchNorm2d(base_channels),
            nn.ReLU(),
            nn.ConvTranspose2d(base_channels, channels, kernel_size=4, stride=2, padding=1),
        )

    def pre_activation(self, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        x = self.project(torch.cat([z, self.label_embedding(labels)], dim=1))
        x = x.view(-1, self.seed_channels, self.seed_size, self.seed_size)
        return self.upsample(x)

    def forward(self, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.pre_activation(z, labels))


class ConditionalDiscriminator(nn.Module):
    def __init__(
        self,
        num_classes: int,
        input_shape: Sequence[int] = GAN_IMAGE_SHAPE,
        base_channels: int = 64,
        leaky_slope: float = 0.2,
    ):
        super().__init__()
        size, _, channels = input_shape
        if size % 4:
            raise ShapeError(f"discriminator input size must be divisible by 4; got {size}")
        self.size = size
        self.label_embedding = nn.Embedding(num_classes, num_classes)
        self.label_plane = nn.Linear(num_classes, size * size)
        self.body = nn.Sequential(
            nn.Conv2d(channels + 1, base_channels, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(leaky_slope),
            nn.Conv2d(base_channels, 2 * base_channels, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(leaky_slope),
            nn.Flatten(),
        )
        self.head = nn.Linear(2 * base_channels * (size // 4) ** 2, 1)

    def forward(self, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Real/fake logits, shape (batch,)."""
        plane = self.label_plane(self.label_embedding(labels)).view(-1, 1, self.size, self.size)
        return self.head(self.body(torch.cat([images, plane], dim=1))).squeeze(1)


# ============================================================================
# LOSSES + OPTIMIZER
# ============================================================================

def binary_cross_entropy(logits: torch.Tensor, target: float) -> torch.Tensor:
    """Mean BCE of sigmoid(logits) against a constant target; logit 0 gives ln 2."""
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, target))


def discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return binary_cross_entropy(real_logits, 1.0) + binary_cross_entropy(fake_logits, 0.0)


def generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return binary_cross_entropy(fake_logits, 1.0)


def build_optimizer(
    parameters: Iterable[nn.Parameter],
    learning_rate: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.Adam:
    return torch.optim.Adam(parameters, lr=learning_rate, betas=betas, eps=eps)


# ============================================================================
# TRAINED GENERATOR
# ============================================================================

@dataclass(frozen=True, eq=False)
class TrainedGenerator:
    """
    Immutable trained generator.

    Attributes:
        parameters: Named parameter store (weights and batch-norm buffers).
        latent_dim: Size of the noise vector.
        num_classes: Size of the conditioning label space.
        output_shape: (height, width, channels) of generated images.
        base_channels: Width of the conv blocks.
        training_manifest: Config, dataset name, losses, distance history, wall time.
    """
    parameters: dict[str, np.ndarray]
    latent_dim: int
    num_classes: int
    output_shape: tuple[int, int, int] = GAN_IMAGE_SHAPE
    base_channels: int = 64
    training_manifest: dict[str, Any] = field(default_factory=dict)

    @cached_property
    def module(self) -> ConditionalGenerator:
        network = ConditionalGenerator(self.latent_dim, self.num_classes, self.output_shape, self.base_channels)
        network.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.parameters.items()})
        network.eval()
        return network


def _snapshot(network: ConditionalGenerator, config: GanTrainConfig, data: LabeledImageSet) -> TrainedGenerator:
    return TrainedGenerator(
        parameters=state_to_numpy(network),
        latent_dim=config.latent_dim,
        num_classes=data.num_classes,
        output_shape=data.image_shape,
        base_channels=config.base_channels,
    )


# ============================================================================
# TRAINING
# ============================================================================

def _check_finite(loss: torch.Tensor, stage: str, epoch: int, batch: int) -> None:
    if not torch.isfinite(loss):
        raise DivergenceError(stage, epoch, batch, float(loss.item()))


def train_cgan(
    data: LabeledImageSet,
    config: GanTrainConfig,
    monitor: "FidMonitor | None" = None,
) -> TrainedGenerator:
    """
    Train a conditional GAN on ``data``.

    Raises:
        ShapeError: If the images are not 28x28x1.
        RangeError: If the label space has fewer than 2 classes.
        DivergenceError: If a discriminator or generator loss is not finite.
    """
    if data.image_shape != GAN_IMAGE_SHAPE:
        raise ShapeError(f"{data.name}: cGAN training needs {GAN_IMAGE_SHAPE} images, got {data.image_shape}")
    if data.num_classes < 2:
        raise RangeError(f"cGAN training needs at least 2 classes; got {data.num_classes}")

    torch.manual_seed(derive_seed(config.seed, "cgan", "init"))
    generator = ConditionalGenerator(config.latent_dim, data.num_classes, data.image_shape, config.base_channels)
    discriminator = ConditionalDiscriminator(
        data.num_classes, data.image_shape, config.base_channels, config.leaky_slope
    )
    g_optimizer = build_optimizer(generator.parameters(), config.g_learning_rate, config.adam_betas, config.adam_eps)
    d_optimizer = build_optimizer(
        discriminator.parameters(), config.d_learning_rate, config.adam_betas, config.adam_eps
    )
    noise = torch_generator(config.seed, "cgan", "noise")
    count = len(data)
    loader = DataLoader(
        TensorDataset(
            torch.from_numpy(np.array(data.images)).permute(0, 3, 1, 2).contiguous(),
            torch.from_numpy(np.array(data.labels)),
        ),
        batch_size=config.batch_size,
        shuffle=count > 0,
        generator=torch_generator(config.seed, "cgan", "shuffle"),
    )
    context = {"dataset": data.name, "seed": config.seed}

    started = time.perf_counter()
    d_history: list[float] = []
    g_history: list[float] = []
    fid_history: list[float] = []
    best_state = copy.deepcopy(generator.state_dict())
    best_distance = float("inf")
    best_epoch = -1
    reference_distance = float("inf")
    stale_epochs = 0
    stopped_early = False

    for epoch in range(config.epochs):
        generator.train()
        discriminator.train()
        d_total = g_total = 0.0
        batches = 0
        for batch_index, (real, cond) in enumerate(loader):
            if len(cond) < 2:
                continue  # batch norm needs two samples
            z = torch.randn(len(cond), config.latent_dim, generator=noise)
            fake = generator(z, cond).detach()
            d_loss = discriminator_loss(discriminator(real, cond), discriminator(fake, cond))
            _check_finite(d_loss, "cgan.discriminator", epoch, batch_index)
            d_optimizer.zero_grad()
            d_loss.backward()
            d_optimizer.step()

            z = torch.randn(len(cond), config.latent_dim, generator=noise)
            g_loss = generator_loss(discriminator(generator(z, cond), cond))
            _check_finite(g_loss, "cgan.generator", epoch, batch_index)
            g_optimizer.zero_grad()
            g_loss.backward()
            g_optimizer.step()

            d_total += float(d_loss.item())
            g_total += float(g_loss.item())
            batches += 1

        d_history.append(d_total / max(batches, 1))
        g_history.append(g_total / max(batches, 1))
        extra = {**context, "epoch": epoch}

        if monitor is None:
            logger.info("cGAN losses d=%.4f g=%.4f", d_history[-1], g_history[-1], extra=extra)
            continue

        generator.eval()
        per_class = largest_remainder(config.monitor_sample_count, [1] * data.num_classes)
        probe = generate_synthetic_dataset(
            _snapshot(generator, config, data), per_class, derive_seed(config.seed, "cgan", "monitor")
        )
        distance = monitor.measure(probe)
        fid_history.append(distance)
        logger.info(
            "cGAN losses d=%.4f g=%.4f feature_frechet_distance=%.4f",
            d_history[-1], g_history[-1], distance, extra=extra,
        )
        if distance < best_distance:
            best_distance, best_epoch = distance, epoch
            best_state = copy.deepcopy(generator.state_dict())
        if distance < reference_distance * (1.0 - config.early_stopping_min_delta):
            reference_distance = distance
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.early_stopping_patience:
                stopped_early = True
                logger.info("Early stop: no distance improvement in %d epochs", stale_epochs, extra=extra)
                break

    if monitor is not None and best_epoch >= 0:
        generator.load_state_dict(best_state)
    generator.eval()

    manifest = {
        "config": config.model_dump(mode="json"),
        "dataset": data.name,
        "epochs_run": len(d_history),
        "d_loss_history": d_history,
        "g_loss_history": g_history,
        "final_losses": {
            "discriminator": d_history[-1] if d_history else None,
            "generator": g_history[-1] if g_history else None,
        },
        "feature_frechet_distance_history": fid_history,
        "best_epoch": best_epoch if monitor is not None else len(d_history) - 1,
        "stopped_early": stopped_early,
        "wall_time_s": time.perf_counter() - started,
        "torch_version": torch.__version__,
    }
    trained = _snapshot(generator, config, data)
    return TrainedGenerator(
        parameters=trained.parameters,
        latent_dim=trained.latent_dim,
        num_classes=trained.num_classes,
        output_shape=trained.output_shape,
        base_channels=trained.base_channels,
        training_manifest=manifest,
    )


# ============================================================================
# SAMPLING
# ============================================================================

def sample(gen: TrainedGenerator, label: int, count: int, seed: int) -> LabeledImageSet:
    """
    ``count`` images conditioned on ``label``; deterministic given ``seed``.

    Raises:
        RangeError: If the label is outside the generator's label space or count < 1.
    """
    if not 0 <= label < gen.num_classes:
        raise RangeError(f"label {label} outside [0, {gen.num_classes})")
    if count < 1:
        raise RangeError(f"sample count must be >= 1; got {count}")
    network = gen.module
    noise = torch_generator(seed, "latent")
    chunks = []
    with torch.no_grad():
        for start in range(0, count, _SAMPLE_CHUNK):
            size = min(_SAMPLE_CHUNK, count - start)
            z = torch.randn(size, gen.latent_dim, generator=noise)
            cond = torch.full((size,), label, dtype=torch.long)
            chunks.append(network(z, cond).permute(0, 2, 3, 1).numpy())
    images = np.concatenate(chunks, axis=0).astype(np.float32)
    return LabeledImageSet.from_arrays(
        images, np.full(count, label, dtype=np.int64), gen.num_classes, Provenance.SYNTHETIC,
        name=f"synthetic[label={label}]",
    )


def generate_synthetic_dataset(
    gen: TrainedGenerator,
    per_class: Sequence[int] | np.ndarray,
    seed: int,
    *,
    name: str = "synthetic",
) -> LabeledImageSet:
    """
    Synthetic set with exactly ``per_class[k]`` images of class k.

    Raises:
        RangeError: If ``per_class`` has the wrong length or a negative entry.
    """
    per_class = np.asarray(per_class, dtype=np.int64).reshape(-1)
    if per_class.shape[0] != gen.num_classes:
        raise RangeError(f"per_class has {per_class.shape[0]} entries; generator has {gen.num_classes} classes")
    if (per_class < 0).any():
        raise RangeError(f"per_class counts must be non-negative; got {per_class.tolist()}")
    parts = [
        sample(gen, k, int(n), derive_seed(seed, "class", k))
        for k, n in enumerate(per_class) if n > 0
    ]
    if not parts:
        return LabeledImageSet.empty(gen.output_shape, gen.num_classes, name=name)
    return concatenate(parts, name=name)


# ============================================================================
# PERSISTENCE
# ============================================================================

def save_generator(gen: TrainedGenerator) -> bytes:
    return encode_checkpoint(
        Checkpoint(
            architecture=CHECKPOINT_TAG,
            shape=gen.output_shape,
            parameters=gen.parameters,
            metadata={
                "latent_dim": gen.latent_dim,
                "num_classes": gen.num_classes,
                "base_channels": gen.base_channels,
                "training_manifest": gen.training_manifest,
            },
        )
    )


def load_generator(payload: bytes) -> TrainedGenerator:
    checkpoint = decode_checkpoint(payload)
    if checkpoint.architecture != CHECKPOINT_TAG:
        raise FormatError(f"Checkpoint holds {checkpoint.architecture!r}, not {CHECKPOINT_TAG!r}")
    meta = checkpoint.metadata
    try:
        return TrainedGenerator(
            parameters=checkpoint.parameters,
            latent_dim=int(meta["latent_dim"]),
            num_classes=int(meta["num_classes"]),
            output_shape=tuple(checkpoint.shape),  # type: ignore[arg-type]
            base_channels=int(meta["base_channels"]),
            training_manifest=meta.get("training_manifest", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Generator checkpoint metadata is incomplete: {e}") from e
