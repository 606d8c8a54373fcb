"""Atomic file writes and the float32 image-batch container."""
from __future__ import annotations

import contextlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np


@contextlib.contextmanager
def atomic_open(path, mode="w", **kw):
    """Write to a temp file beside ``path``, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    with atomic_open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bytes(path, data: bytes):
    with atomic_open(path, "wb") as fh:
        fh.write(data)


def write_image_batch(prefix, images, freq_axis, time_axis, labels):
    """Store ``images`` as ``<prefix>.f32`` plus a ``<prefix>.json`` sidecar.

    ``labels`` maps label names (e.g. ``fatigue``, ``subject``) to per-image
    integer sequences.
    """
    images = np.asarray(images)
    prefix = Path(prefix)
    write_bytes(prefix.with_suffix(".f32"), images.astype("<f4").tobytes())
    write_json(prefix.with_suffix(".json"), {
        "shape": list(images.shape),
        "freq_axis": [float(f) for f in freq_axis],
        "time_axis": [float(t) for t in time_axis],
        "labels": {k: [int(v) for v in vals] for k, vals in labels.items()},
    })


def read_image_batch(prefix):
    """Inverse of :func:`write_image_batch`: ``(images, meta)``."""
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    raw = np.fromfile(prefix.with_suffix(".f32"), dtype="<f4")
    return raw.reshape(meta["shape"]).astype(np.float32), meta
