from __future__ import annotations

import hashlib
import os

import numpy as np
import torch

from .logging import get_logger

logger = get_logger()


def _tag_word(tag: int | str) -> int:
    if isinstance(tag, str):
        return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")
    return int(tag) & 0xFFFFFFFFFFFFFFFF


def derive_seed(seed: int, *stream: int | str) -> int:
    """Expand ``seed`` into an independent 63-bit seed for ``stream``.

    String stream tags are folded into integers by a digest of their full UTF-8
    bytes so that ``derive_seed(s, "mix", 3)`` is stable across processes and runs.
    """
    entropy: list[int] = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(_tag_word(tag) for tag in stream)]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & 0x7FFFFFFFFFFFFFFF


def numpy_rng(seed: int, *stream: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *stream))


def torch_generator(seed: int, *stream: int | str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *stream))
    return generator


def configure_determinism(enabled: bool, num_threads: int | None = None) -> None:
    """Switch torch into (or out of) deterministic execution."""
    torch.use_deterministic_algorithms(enabled, warn_only=False)
    torch.backends.cudnn.deterministic = enabled
    torch.backends.cudnn.benchmark = not enabled
    if enabled:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.set_num_threads(1)
    elif num_threads:
        torch.set_num_threads(num_threads)
    logger.debug("Deterministic mode %s", "on" if enabled else "off")


__all__ = ["derive_seed", "numpy_rng", "torch_generator", "configure_determinism"]
