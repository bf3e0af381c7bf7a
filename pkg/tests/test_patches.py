import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from evoqformer.patches import Patch, entropy_filter, patch_entropy, tile


def constant():
    return np.full((224, 224), 37, dtype=np.uint8)


def uniform():
    return (np.arange(224 * 224) % 256).astype(np.uint8).reshape(224, 224)


def half():
    px = np.zeros((224, 224), dtype=np.uint8)
    px[112:] = 255
    return px


def test_analytic_entropies():
    assert patch_entropy(constant()) == 0.0
    assert patch_entropy(uniform()) == 8.0
    assert patch_entropy(half()) == 1.0


def test_filter_examples():
    kept, dropped = entropy_filter([Patch(constant()), Patch(uniform())], threshold=5)
    assert dropped == 1 and len(kept) == 1 and patch_entropy(kept[0]) == 8.0
    assert entropy_filter([]) == ([], 0)


def test_patch_validation():
    with pytest.raises(ValueError):
        Patch(np.zeros((10, 10), dtype=np.uint8))
    with pytest.raises(ValueError):
        Patch(np.full((224, 224), 300.0))


def test_tile_drops_ragged_edges():
    assert len(tile(np.zeros((500, 460), dtype=np.uint8))) == 4


@given(st.integers(1, 256), st.integers(0, 10_000))
def test_entropy_matches_oracle(levels, seed):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, levels, 224 * 224).astype(np.uint8)
    assert patch_entropy(px.reshape(224, 224)) == pytest.approx(oracles.histogram_entropy(px.tolist()), abs=1e-10)


@given(st.integers(1, 8))
def test_entropy_monotone_in_equal_bins(b):
    """Splitting pixels evenly over 2^b values gives exactly b bits, growing with b."""
    n = 224 * 224
    px = (np.arange(n) % (2**b)).astype(np.uint8).reshape(224, 224)
    lower = (np.arange(n) % (2 ** (b - 1))).astype(np.uint8).reshape(224, 224)
    assert patch_entropy(px) == b
    assert patch_entropy(lower) < patch_entropy(px)
