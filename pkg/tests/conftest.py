"""Shared fixtures: synthetic images on disk and reusable manifests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from aglbp import write_pgm

from synthtex import toroidal_texture, two_class_pack


@pytest.fixture(scope="session")
def toroidal() -> np.ndarray:
    return toroidal_texture()


@pytest.fixture(scope="session")
def pack_dir(tmp_path_factory) -> Path:
    """Two-class texture pack on disk: 20 train + 20 test 8-bit PGMs.

    Provides train.txt / test.txt (10+10 each) and all.txt (everything,
    with a group tag alternating a/b for group-holdout tests).
    """
    root = tmp_path_factory.mktemp("texpack")
    gratings, checkers = two_class_pack()
    train, test, everything = [], [], []
    for label, images in (("grating", gratings), ("checker", checkers)):
        for i, arr in enumerate(images):
            name = f"{label}_{i:02d}.pgm"
            write_pgm(root / name, arr)
            (train if i < 10 else test).append(f"{name} {label}")
            everything.append(f"{name} {label} {'a' if i % 2 == 0 else 'b'}")
    (root / "train.txt").write_text("\n".join(train) + "\n", encoding="ascii")
    (root / "test.txt").write_text("\n".join(test) + "\n", encoding="ascii")
    (root / "all.txt").write_text("\n".join(everything) + "\n", encoding="ascii")
    return root
