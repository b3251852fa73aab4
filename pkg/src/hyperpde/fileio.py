"""Atomic file writes shared by dataset, checkpoint and report emitters.

Writers never leave partial files: content goes to a temp file in the
destination directory, then os.replace moves it into place.
"""

from __future__ import annotations

import json
import os
import tempfile


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str, obj) -> None:
    # sort_keys keeps reruns byte-identical
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_bytes(path: str) -> bytes:
    # OSError propagates: the CLI maps it to the I/O exit code
    with open(path, "rb") as fh:
        return fh.read()
