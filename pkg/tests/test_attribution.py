import itertools

import numpy as np
import pytest

from metattr.attribution import (ExplanationHeatmap, MetaAttribution, compute_meta_attribution,
                                 exact_attribution, exact_heatmap, mc_attribution, random_control,
                                 transfer_explain)
from metattr.grid import GridSpec, PatchId, PatchSubset, complement, neighbors
from metattr.models import ClassifierHead, PatchEncoder, TargetModel


def test_exact_heatmap_matches_per_patch(target, images):
    hm = exact_heatmap(target, images[0], 2)
    for k in (0, 9, 27, 63):
        z = PatchId.from_flat(k, 8)
        assert hm.values[z.i - 1, z.j - 1] == pytest.approx(exact_attribution(target, images[0], z, 2), abs=1e-12)


def test_transfer_rule_reproduces_direct_attribution(target, images):
    for x in images[:3]:
        meta = compute_meta_attribution(target.encoder, x)
        for y in range(4):
            a = transfer_explain(meta, target.head, y).values
            b = exact_heatmap(target, x, y).values
            assert np.abs(a - b).max() <= 1e-5


def test_provenance_labels(target, images):
    meta = compute_meta_attribution(target.encoder, images[0])
    assert transfer_explain(meta, target.head, 0).provenance == "transferred_eq7"
    predicted = MetaAttribution(meta.g, meta.h, meta.grid, "predicted")
    assert transfer_explain(predicted, target.head, 0).provenance == "amortized_eq9"
    assert exact_heatmap(target, images[0], 0).provenance == "exact_eq5"


def test_antisymmetry(target, images):
    # swapping N(z) and its complement negates the two-state attribution
    x, y = images[1], 3
    z = PatchId(4, 5)
    nb = neighbors(z, target.grid)
    rest = complement(nb, target.grid)
    p = target.masked_proba(x, np.stack([nb.mask(), rest.mask()]))[:, y].astype(np.float64)
    swapped = np.log(p[1]) - np.log(p[0])
    assert swapped == pytest.approx(-exact_attribution(target, x, z, y), abs=1e-12)


def test_bias_shift_leaves_heatmap_unchanged(target, images):
    meta = compute_meta_attribution(target.encoder, images[2])
    shifted = target.head.copy()
    shifted.params["b"].data += 5.0
    a = transfer_explain(meta, target.head, 1).values
    b = transfer_explain(meta, shifted, 1).values
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_mc_oracle_exhaustive_on_tiny_grid(rng):
    grid = GridSpec(W=4, C=2, P=2, hop_radius=0)
    target = TargetModel(PatchEncoder(grid, seed=0).set_trainable(False), ClassifierHead(16, 3, seed=1))
    x = rng.standard_normal((3, 4, 4)).astype(np.float32)
    z, y = PatchId(1, 2), 1
    rest = complement(neighbors(z, grid), grid).indices()
    all_b = [PatchSubset.from_indices(c, 2) for r in range(len(rest) + 1)
             for c in itertools.combinations(rest, r)]
    assert len(all_b) == 8

    def f(s):
        return np.log(np.float64(target.predict_masked(x, s, y)))

    nb = neighbors(z, grid)
    expect = np.mean([f(nb | b) - f(b) for b in all_b])
    assert mc_attribution(target, x, z, y, subsets=all_b) == pytest.approx(expect, abs=1e-12)


def test_mc_sampling_is_seeded(target, images):
    z = PatchId(3, 3)
    a = mc_attribution(target, images[0], z, 0, 16, np.random.default_rng(4))
    b = mc_attribution(target, images[0], z, 0, 16, np.random.default_rng(4))
    assert a == b


def test_mc_rejects_bad_arguments(target, images):
    with pytest.raises(ValueError):
        mc_attribution(target, images[0], PatchId(1, 1), 0, 16)
    with pytest.raises(ValueError):
        mc_attribution(target, images[0], PatchId(1, 1), 0, subsets=[PatchSubset.full(8)])
    with pytest.raises(ValueError):
        exact_attribution(target, images[0], PatchId(1, 1), 9)


def test_meta_attribution_validation(grid):
    with pytest.raises(ValueError):
        MetaAttribution(np.zeros((8, 8, 4)), np.zeros((8, 8, 5)), grid)
    with pytest.raises(ValueError):
        MetaAttribution(np.zeros((8, 8, 4)), np.zeros((8, 8, 4)), grid, "guess")
    m = MetaAttribution(np.zeros((8, 8, 4)), np.ones((8, 8, 4)), grid)
    assert m.stacked().shape == (64, 8) and m.stacked()[:, 4:].min() == 1


def test_transfer_checks_head(target, images):
    meta = compute_meta_attribution(target.encoder, images[0])
    with pytest.raises(ValueError):
        transfer_explain(meta, ClassifierHead(8, 4), 0)
    with pytest.raises(ValueError):
        transfer_explain(meta, target.head, 4)


def test_random_control_range(grid, rng):
    hm = random_control(rng, grid)
    assert hm.values.shape == (8, 8) and np.abs(hm.values).max() <= 1
    with pytest.raises(ValueError):
        ExplanationHeatmap(np.zeros(64), 0, "saliency", grid)
