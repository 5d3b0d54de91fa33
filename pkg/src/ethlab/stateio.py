"""Self-describing text format for matrices and states.

A state file is one JSON object::

    {"kind": "density" | "transition" | "generic",
     "dim": <int>,
     "site_dims": [<int>, ...],
     "entries": [[re, im], ...]}        # flat, row-major

``site_dims`` may be empty when the operator has no tensor structure; when
present their product must equal ``dim``.  Files are written atomically
(temp file then rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .linalg import LinalgError
from .states import DensityMatrix, TransitionMatrix

__all__ = ["save_state", "load_state", "atomic_write_text"]

KINDS = ("density", "transition", "generic")


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_state(path: str, obj, kind: str | None = None,
               site_dims: list[int] | None = None) -> None:
    """Write a DensityMatrix, TransitionMatrix or plain matrix to ``path``."""
    if isinstance(obj, DensityMatrix):
        m, kind = obj.matrix, kind or "density"
    elif isinstance(obj, TransitionMatrix):
        m, kind = obj.matrix, kind or "transition"
    else:
        m, kind = np.asarray(obj, dtype=complex), kind or "generic"
    if kind not in KINDS:
        raise ValueError(f"unknown state kind '{kind}'")
    dim = m.shape[0]
    if m.shape != (dim, dim):
        raise LinalgError(f"state file needs a square matrix, got {m.shape}")
    site_dims = list(site_dims or [])
    if site_dims and int(np.prod(site_dims)) != dim:
        raise LinalgError(
            f"site_dims {site_dims} inconsistent with dim {dim}"
        )
    entries = [[float(z.real), float(z.imag)] for z in m.ravel()]
    doc = {"kind": kind, "dim": dim, "site_dims": site_dims, "entries": entries}
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def load_state(path: str):
    """Read a state file; returns DensityMatrix, TransitionMatrix or ndarray."""
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("kind", "dim", "site_dims", "entries"):
        if key not in doc:
            raise ValueError(f"state file {path} missing field '{key}'")
    kind = doc["kind"]
    if kind not in KINDS:
        raise ValueError(f"state file {path} has unknown kind '{kind}'")
    dim = int(doc["dim"])
    entries = doc["entries"]
    if len(entries) != dim * dim:
        raise ValueError(
            f"state file {path}: {len(entries)} entries for dim {dim}"
        )
    flat = np.array([complex(re, im) for re, im in entries])
    m = flat.reshape(dim, dim)
    site_dims = [int(d) for d in doc["site_dims"]]
    if site_dims and int(np.prod(site_dims)) != dim:
        raise ValueError(f"state file {path}: site_dims inconsistent with dim")
    if kind == "density":
        return DensityMatrix(m)
    if kind == "transition":
        return TransitionMatrix(m, bra_index=0, ket_index=1)
    return m
