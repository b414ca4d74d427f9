import os
from pathlib import Path

from dotenv import load_dotenv

from .logging import get_logger

logger = get_logger()

CACHE_ENV_VAR = "SYNTHMIX_CACHE"
DATA_ENV_VAR = "SYNTHMIX_DATA_DIR"


def load_environment() -> None:
    """Load environment variables from the nearest .env file.

    The search walks up from the current working directory until a directory
    containing either a ``.env`` file or a ``.git`` folder is found.
    """
    path = os.getcwd()
    while path != os.path.dirname(path):
        if os.path.exists(os.path.join(path, ".env")) or os.path.exists(
            os.path.join(path, ".git")
        ):
            project_root = path
            break
        path = os.path.dirname(path)
    else:
        project_root = os.getcwd()

    dotenv_path = os.path.join(project_root, ".env")
    if os.path.exists(dotenv_path):
        load_dotenv(dotenv_path=dotenv_path)
    else:
        logger.debug(".env file not found; using process environment only.")


def resolve_cache_dir(
    explicit: str | Path | None = None,
    configured: str | Path | None = None,
    output_dir: str | Path | None = None,
) -> Path:
    """Return the cache directory, creating it if missing.

    Resolution order:
      1. ``explicit`` (the ``--cache-dir`` flag)
      2. ``SYNTHMIX_CACHE`` environment variable
      3. ``configured`` (the experiment config's ``cache_dir``)
      4. ``<output_dir>/cache`` or ``./.synthmix_cache``
    """
    if explicit is not None:
        path = Path(explicit)
    elif os.getenv(CACHE_ENV_VAR):
        path = Path(os.environ[CACHE_ENV_VAR])
    elif configured is not None:
        path = Path(configured)
    elif output_dir is not None:
        path = Path(output_dir) / "cache"
    else:
        path = Path.cwd() / ".synthmix_cache"
    path = path.expanduser().resolve()
    path.mkdir(parents=True, exist_ok=True)
    return path


__all__ = ["load_environment", "load_dotenv", "resolve_cache_dir", "CACHE_ENV_VAR", "DATA_ENV_VAR"]
