import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metattr.grid import (GridSpec, PatchId, PatchSubset, apply_mask, apply_masks, complement,
                          neighbor_matrix, neighbors, pixel_mask, sample_subset)

G = GridSpec()
subsets = st.integers(0, (1 << G.n_patches) - 1).map(lambda b: PatchSubset(b, G.P))
images = st.integers(0, 2 ** 32 - 1).map(
    lambda s: np.random.default_rng(s).standard_normal((3, G.W, G.W)).astype(np.float32))


def test_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(W=30, C=4, P=8)
    with pytest.raises(ValueError):
        GridSpec(metric="euclid")
    assert GridSpec.vit_base().n_patches == 196


def test_patch_id_flat_round_trip():
    for k in range(G.n_patches):
        assert PatchId.from_flat(k, G.P).flat(G.P) == k
    assert PatchId.from_flat(0, 8) == (1, 1)
    assert PatchId.from_flat(63, 8) == (8, 8)


def test_hex_lsb_is_first_patch():
    s = PatchSubset.from_indices([0], 8)
    assert s.to_hex() == "0" * 15 + "1"
    assert PatchSubset.from_indices([63], 8).to_hex() == "8" + "0" * 15
    assert PatchSubset.full(2).to_hex() == "f"


@given(subsets)
def test_hex_round_trip(s):
    assert PatchSubset.from_hex(s.to_hex(), G.P) == s
    assert PatchSubset.from_mask(s.mask()) == s
    assert len(s) == int(s.mask().sum())


def test_subset_rejects_out_of_grid():
    with pytest.raises(ValueError):
        PatchSubset.from_indices([64], 8)
    with pytest.raises(ValueError):
        PatchSubset(1 << 16, 4)
    with pytest.raises(ValueError):
        PatchSubset.empty(4) | PatchSubset.empty(8)


def test_chebyshev_neighbourhood_sizes():
    # interior hop-2 window is 5x5; corners are clipped to 3x3
    assert len(neighbors((4, 4), G)) == 25
    assert len(neighbors((1, 1), G)) == 9
    assert len(neighbors((1, 4), G)) == 15
    assert neighbors((1, 1), G).patches()[-1] == PatchId(3, 3)


def test_manhattan_neighbourhood():
    g = GridSpec(metric="manhattan")
    assert len(neighbors((4, 4), g)) == 13


@pytest.mark.parametrize("hop", [0, 1, 2, 3])
def test_neighbourhood_contains_centre_and_is_bounded(hop):
    g = GridSpec(hop_radius=hop)
    for k in range(g.n_patches):
        z = PatchId.from_flat(k, g.P)
        n = neighbors(z, g)
        assert z in n
        assert len(n) <= (2 * hop + 1) ** 2


def test_neighbor_matrix_symmetric_and_read_only():
    m = neighbor_matrix(G)
    assert (m == m.T).all()
    with pytest.raises(ValueError):
        m[0, 0] = False


def test_neighbors_rejects_outside_patch():
    with pytest.raises(ValueError):
        neighbors((0, 1), G)
    with pytest.raises(ValueError):
        neighbors((9, 1), G)


@given(subsets)
def test_complement_partitions(s):
    c = complement(s, G)
    assert (s & c) == PatchSubset.empty(G.P)
    assert (s | c) == PatchSubset.full(G.P)


@settings(max_examples=50)
@given(images, subsets)
def test_masking_is_idempotent(x, s):
    once = apply_mask(x, s, G)
    np.testing.assert_array_equal(apply_mask(once, s, G), once)


@settings(max_examples=50)
@given(images, subsets, subsets)
def test_mask_composition(x, s, t):
    np.testing.assert_array_equal(apply_mask(x, s & t, G), apply_mask(apply_mask(x, s, G), t, G))


@settings(max_examples=30)
@given(images, st.lists(subsets, min_size=1, max_size=5))
def test_batched_masks_match_single(x, ss):
    batch = apply_masks(x, np.stack([s.mask() for s in ss]), G)
    for k, s in enumerate(ss):
        np.testing.assert_array_equal(batch[k], apply_mask(x, s, G))


def test_pixel_mask_blocks():
    s = PatchSubset.from_indices([PatchId(1, 2).flat(8)], 8)
    pix = pixel_mask(s, G)
    assert pix.sum() == 16
    assert pix[0:4, 4:8].all()


def test_apply_mask_shape_errors():
    with pytest.raises(ValueError):
        apply_mask(np.zeros((3, 16, 16)), PatchSubset.full(8), G)
    with pytest.raises(ValueError):
        apply_masks(np.zeros((3, 32, 32)), np.ones((2, 16), dtype=bool), G)


def test_sample_subset_stays_in_universe(rng):
    universe = complement(neighbors((4, 4), G), G)
    sizes = []
    for _ in range(200):
        b = sample_subset(rng, universe)
        assert b.issubset(universe)
        sizes.append(len(b))
    assert abs(np.mean(sizes) - len(universe) / 2) < 1.5
