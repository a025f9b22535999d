"""Labeled seed derivation: one experiment seed expands into per-stage seeds."""

from __future__ import annotations

import hashlib
import os

import torch


def derive_seed(base: int, *labels) -> int:
    """Stable 63-bit subseed for ``labels`` under ``base``.

    >>> derive_seed(7, "adapt") == derive_seed(7, "adapt")
    True
    """
    key = ":".join([str(int(base)), *map(str, labels)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def set_deterministic(num_threads: int = 1) -> None:
    """Serialize torch CPU execution so fixed-seed runs are bit-reproducible."""
    torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(True)
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
