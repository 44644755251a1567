import logging
from pathlib import Path
from typing import Union

from shared import config
from shared.errors import TsdfError

logger = logging.getLogger(__name__)


def data_root() -> Path:
    return config.DATA_ROOT.resolve()


def resolve_data_path(path: Union[str, Path]) -> Path:
    """
    Resolve a tool argument against TSDF_DATA_ROOT.

    Relative paths are taken from the data root; anything that resolves
    outside it is refused.
    """
    root = data_root()
    candidate = Path(path)
    resolved = (candidate if candidate.is_absolute() else root / candidate).resolve()
    if resolved != root and root not in resolved.parents:
        raise TsdfError(f"Path {path} is outside the data root", "path_outside_data_root")
    return resolved


def failure(error: Exception) -> dict:
    """Tool-facing dict for an exception"""
    if isinstance(error, TsdfError):
        logger.info(f"Tool call failed: [{error.code}] {error}")
        return error.to_dict()
    logger.warning(f"Tool call failed with {type(error).__name__}: {error}")
    return {"success": False, "error": str(error), "code": "io_error"}
