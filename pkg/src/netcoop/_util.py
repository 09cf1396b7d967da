"""Small shared helpers: deterministic float formatting and atomic writes."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


def fmt12(v: float) -> str:
    """Decimal rendering with 12 significant digits (data CSVs)."""
    return format(float(v), ".12g")


def fmt17(v: float) -> str:
    """Decimal rendering with 17 significant digits (round-trips doubles)."""
    return format(float(v), ".17g")


def atomic_write_text(path, content: str) -> Path:
    """Write a file via a temp name + rename, so readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
