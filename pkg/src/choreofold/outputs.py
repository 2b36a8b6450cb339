"""Atomic file output and provenance headers."""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

from . import __version__


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def atomic_open(path):
    """Text handle whose content replaces ``path`` only on a clean exit."""
    buf = io.StringIO()
    yield buf
    atomic_write_text(path, buf.getvalue())


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(config: dict) -> dict:
    return {"package": "choreofold", "version": __version__, "config_sha256": config_hash(config)}


def header_lines(config: dict) -> list[str]:
    p = provenance(config)
    return [f"choreofold {p['version']} config-sha256={p['config_sha256']}"]


def num(x) -> str:
    """Shortest round-tripping decimal of ``x`` as a plain float."""
    return repr(float(x))
