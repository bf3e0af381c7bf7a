"""Background-patch filtering by grayscale histogram entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

PATCH_SIZE = 224
DEFAULT_THRESHOLD = 5.0


@dataclass(eq=False)
class Patch:
    pixels: np.ndarray  # (224, 224) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {px.shape}")
        if px.dtype != np.uint8:
            if np.any((px < 0) | (px > 255)) or np.any(px != np.round(px)):
                raise ValueError("patch values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px


def patch_entropy(patch) -> float:
    """Shannon entropy in bits of the 256-bin grayscale histogram."""
    if not isinstance(patch, Patch):
        patch = Patch(patch)
    return float(_kernels.histogram_entropy(np.ascontiguousarray(patch.pixels).reshape(-1)))


def entropy_filter(patches, threshold: float = DEFAULT_THRESHOLD):
    """Keep patches with entropy >= threshold, in order. Returns (kept, n_discarded)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    kept = [p for p in patches if patch_entropy(p) >= threshold]
    return kept, len(patches) - len(kept)


def tile(image: np.ndarray) -> list:
    """Non-overlapping 224x224 tiles of a 2-D grayscale image; ragged edges dropped."""
    size = PATCH_SIZE
    h, w = image.shape[:2]
    return [
        Patch(image[r : r + size, c : c + size])
        for r in range(0, h - size + 1, size)
        for c in range(0, w - size + 1, size)
    ]
