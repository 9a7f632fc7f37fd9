"""Seed derivation and small serialization helpers."""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np


def derive_seed(master: int, *tags: int | str) -> int:
    """Map (master seed, tags) to a stable derived seed.

    String tags are crc32-hashed so the derivation does not depend on
    Python's randomized ``hash``. Used to give every stage, fold, and
    worker its own independent, reproducible stream.
    """
    entropy = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def derive_rng(master: int, *tags: int | str) -> np.random.Generator:
    """Generator seeded with :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(master, *tags))


def write_json(path: str | Path, obj) -> None:
    """Write canonical JSON (sorted keys, trailing newline) for byte-stable outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def fmt_float(x: float) -> str:
    """Render a float with 17 significant digits (lossless for 64-bit)."""
    return format(float(x), ".17g")
