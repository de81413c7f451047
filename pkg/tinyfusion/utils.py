import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

from .exceptions import ReportIOError


def read_bytes(path: Union[str, Path]) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise ReportIOError(f"Could not read {path}: {e.strerror or e}") from e


def ensure_directory(path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportIOError(f"Could not create directory {path}: {e.strerror or e}") from e
    if not os.access(path, os.W_OK):
        raise ReportIOError(f"Directory is not writable: {path}")
    return path


def dumps_json(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    tmp_name = None
    try:
        with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=directory,
                                         prefix=f".{path.name}.", suffix=".tmp",
                                         delete=False) as f:
            tmp_name = f.name
            f.write(text)
        os.replace(tmp_name, path)
    except OSError as e:
        if tmp_name is not None and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise ReportIOError(f"Could not write {path}: {e.strerror or e}") from e
    return path


def write_json_atomic(path: Union[str, Path], data: Any) -> Path:
    return write_text_atomic(path, dumps_json(data))
