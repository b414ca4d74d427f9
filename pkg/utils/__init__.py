"""Cross-cutting helpers for the synthmix pipeline.

Errors, logging, settings, atomic artifact I/O, the checkpoint container and
seeding helpers live in submodules; this package re-exports their public API.
"""
from .artifacts import *  # noqa: F401,F403
from .checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint
from .errors import *  # noqa: F401,F403
from .helpers import configure_determinism, derive_seed, numpy_rng, torch_generator
from .logging import *  # noqa: F401,F403
from .settings import CACHE_ENV_VAR, DATA_ENV_VAR, load_environment, resolve_cache_dir

__all__ = [
    'Checkpoint', 'encode_checkpoint', 'decode_checkpoint',
    'configure_determinism', 'derive_seed', 'numpy_rng', 'torch_generator',
    'load_environment', 'resolve_cache_dir', 'CACHE_ENV_VAR', 'DATA_ENV_VAR',
    'get_logger',
    'resolve_relative', 'save_artifact',
    'sha256_bytes', 'content_key',
    'SynthMixError', 'FormatError', 'ConsistencyError', 'RangeError', 'ShapeError',
    'ValidationError', 'CapacityError', 'NumericalError', 'DivergenceError',
]
