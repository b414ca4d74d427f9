"""Artifact helpers: path resolution, atomic writes and content hashing.

Every file the pipeline produces (checkpoints, caches, manifests, reports)
goes through :func:`save_artifact`, which writes to a temporary sibling and
renames it into place so readers never observe a half-written file.
"""

import hashlib
import io
import json
import os
from pathlib import Path
from typing import Any, Union


def resolve_relative(path: Union[str, Path], base_dir: Union[str, Path]) -> Path:
    """Resolve ``path`` against ``base_dir`` unless it is already absolute."""
    target = Path(path).expanduser()
    if not target.is_absolute():
        target = Path(base_dir) / target
    return target.resolve()


def save_artifact(
    content: Union[str, bytes, dict, list, io.BytesIO],
    path: Union[str, Path],
    *,
    overwrite: bool = True,
    encoding: str = "utf-8",
) -> Path:
    """Persist ``content`` to ``path`` atomically.

    Raises
    ------
    FileExistsError
        If the file exists and ``overwrite`` is ``False``.
    TypeError
        If the content type is unsupported.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and not overwrite:
        raise FileExistsError(f"Artifact already exists: {path}. Pass overwrite=True to replace.")

    tmp = path.with_suffix(path.suffix + f".{os.getpid()}.tmp")
    try:
        if isinstance(content, bytes):
            tmp.write_bytes(content)
        elif isinstance(content, io.BytesIO):
            tmp.write_bytes(content.getvalue())
        elif isinstance(content, (dict, list)):
            tmp.write_text(
                json.dumps(content, ensure_ascii=False, indent=2, sort_keys=True), encoding=encoding
            )
        elif isinstance(content, str):
            tmp.write_text(content, encoding=encoding)
        else:
            raise TypeError(f"Unsupported content type: {type(content)!r}")
        os.replace(tmp, path)  # atomic
        return path
    except Exception:
        # clean up temp on error
        try:
            if tmp.exists():
                tmp.unlink()
        finally:
            raise


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def content_key(payload: Any, length: int = 16) -> str:
    """Stable short hash of a JSON-serializable payload."""
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return sha256_bytes(encoded.encode("utf-8"))[:length]


__all__ = [
    "resolve_relative",
    "save_artifact",
    "sha256_bytes",
    "content_key",
]
