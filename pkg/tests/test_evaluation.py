import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metattr.attribution import ExplanationHeatmap, compute_meta_attribution, exact_heatmap
from metattr.evaluation import (FidelityCurve, bench_throughput, bound_report, check_bound,
                                correlation_study, evaluate_mode, fidelity_curve, fidelity_curves,
                                forward_passes, pearson, ranking, top_k, topk_masks, trapezoid_auc)
from metattr.explainer import ExplainerModel
from metattr.grid import PatchSubset
from metattr.models import ClassifierHead, TargetModel


class OracleExplainer:
    """Returns the exact meta-attribution: the zero-loss explainer."""

    def __init__(self, encoder):
        self.encoder, self.grid, self.embed_dim = encoder, encoder.grid, encoder.embed_dim

    def predict(self, images):
        return np.stack([compute_meta_attribution(self.encoder, x).stacked() for x in images])


def heatmap(values, grid, y=0):
    return ExplanationHeatmap(values, y, "random_control", grid)


def test_curve_endpoints(target, images, grid, rng):
    hm = heatmap(rng.standard_normal((8, 8)), grid)
    curves = fidelity_curves(target, hm, images[0], 1)
    assert curves["plus"].values[0] == 0.0
    assert curves["minus"].values[-1] == 0.0
    assert len(curves["plus"].values) == 65
    np.testing.assert_allclose(curves["plus"].sparsity, np.arange(65) / 64)


def test_curve_point_matches_manual_masking(target, images, grid, rng):
    values = rng.standard_normal((8, 8))
    x, y, k = images[1], 2, 10
    full = target.predict_proba(x[None])[0, y]
    top = top_k(values, k)
    rest = PatchSubset(PatchSubset.full(8).bits & ~top.bits, 8)
    plus = fidelity_curve(target, heatmap(values, grid), x, y, "plus")
    minus = fidelity_curve(target, heatmap(values, grid), x, y, "minus")
    assert plus.values[k] == pytest.approx(full - target.predict_masked(x, rest, y), abs=1e-7)
    assert minus.values[k] == pytest.approx(full - target.predict_masked(x, top, y), abs=1e-7)


@pytest.mark.parametrize("c", [0.0, 0.37, -2.5])
def test_constant_curve_auc(c):
    s = np.linspace(0, 1, 65)
    assert abs(FidelityCurve(s, np.full(65, c), "plus").auc - c) <= 1e-9


def test_trapezoid_exact_on_piecewise_linear():
    # breakpoints (0,0) (0.25,1) (1,0): area = 0.125 + 0.375
    assert trapezoid_auc([0, 0.25, 1], [0, 1, 0]) == pytest.approx(0.5, abs=1e-12)


def test_curve_validation():
    with pytest.raises(ValueError):
        FidelityCurve([0, 0.5, 0.5, 1], [0, 0, 0, 0], "plus")
    with pytest.raises(ValueError):
        FidelityCurve([0.1, 1], [0, 0], "plus")
    with pytest.raises(ValueError):
        FidelityCurve([0, 1], [0, 0], "sideways")


def test_ties_break_row_major():
    values = np.zeros((8, 8))
    values[5, 5] = 1.0
    assert ranking(values)[:4].tolist() == [45, 0, 1, 2]
    assert top_k(values, 3).indices() == [0, 1, 45]


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_topk_nested(seed, quantised):
    values = np.random.default_rng(seed).standard_normal(64)
    if quantised:
        values = np.round(values)
    m = topk_masks(values)
    assert (m[:-1] <= m[1:]).all()
    assert m.sum(axis=1).tolist() == list(range(65))


def test_bound_ideal_case():
    p = np.random.default_rng(0).uniform(0.1, 0.9, 100)
    r = bound_report(p, p, p, p)
    assert r.epsilon == 0 and r.bound == 0 and r.mean_abs_error == 0 and r.holds


def test_bound_analytic_perturbation():
    rng = np.random.default_rng(1)
    p_g, p_h = rng.uniform(0.05, 0.5, 200), rng.uniform(0.05, 0.5, 200)
    r = bound_report(p_g, 1.1 * p_g, p_h, p_h / 1.1)
    assert r.epsilon == pytest.approx(0.1, abs=1e-12)
    assert r.bound == pytest.approx(2 / 9, abs=1e-12)
    assert r.mean_abs_error == pytest.approx(2 * math.log(1.1), abs=1e-12)
    assert r.holds and 0.5 < r.mean_abs_error / r.bound < 1.0


def test_bound_inapplicable_is_reported():
    r = bound_report([0.1], [0.25], [0.1], [0.1])
    assert not r.applicable and r.bound is None and r.holds is None
    assert r.to_json()["n_triples"] == 1


def test_bound_rejects_unclamped():
    with pytest.raises(ValueError):
        bound_report([0.0], [0.1], [0.1], [0.1])


def test_check_bound_with_exact_prediction(target, images):
    metas = [compute_meta_attribution(target.encoder, x) for x in images[:2]]
    r = check_bound(metas, metas, target.head)
    assert r.epsilon == 0 and r.holds and r.n_triples == 2 * 64 * 4


def test_pearson_cases():
    assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([2, 2, 2], [1, 2, 3]) is None


def test_correlation_constant_model_is_undefined(encoder, images):
    head = ClassifierHead(16, 4)
    for p in head.parameters():
        p.data[:] = 0
    res = correlation_study(TargetModel(encoder, head), images[:2], n_pairs=20)
    assert res.r is None and len(res.pairs) == 20
    assert res.to_json()["pearson_r"] is None


def test_correlation_study_collects_pairs(target, images):
    res = correlation_study(target, images[:3], n_pairs=30, seed=2)
    assert len(res.pairs) == 30 and -1 <= res.r <= 1
    again = correlation_study(target, images[:3], n_pairs=30, seed=2, threads=3)
    assert again.pairs == res.pairs


def test_exact_mode_equals_zero_loss_tve(target, images):
    oracle = OracleExplainer(target.encoder)
    tve = evaluate_mode("TVE", images[:3], target, explainer=oracle)
    exact = evaluate_mode("exact", images[:3], target)
    assert tve.per_image == exact.per_image


def test_random_mode_reports_seed_band(target, images):
    res = evaluate_mode("random", images[:2], target, n_seeds=3)
    assert len(res.seed_means["plus"]) == 3 and len(res.per_image["minus"]) == 2
    rows = res.to_json(model="m", dataset="d")
    assert {r["direction"] for r in rows} == {"plus", "minus"}
    assert set(rows[0]) >= {"mode", "model", "dataset", "direction", "auc_mean", "auc_std", "per_image"}


def test_mode_requirements(target, images):
    with pytest.raises(ValueError, match="requires explainer"):
        evaluate_mode("TVE_PT", images[:1], target)
    with pytest.raises(ValueError, match="requires general_head"):
        evaluate_mode("TVE_Hg", images[:1], target, explainer=OracleExplainer(target.encoder))
    with pytest.raises(ValueError, match="unknown mode"):
        evaluate_mode("SHAP", images[:1], target)


def test_hg_mode_uses_general_head(target, images):
    oracle = OracleExplainer(target.encoder)
    res = evaluate_mode("TVE_Hg", images[:2], target, explainer=oracle, general_head=target.head)
    same = evaluate_mode("TVE", images[:2], target, explainer=oracle)
    np.testing.assert_allclose(res.per_image["plus"], same.per_image["plus"], atol=1e-12)


def test_exact_heatmap_feeds_curves(target, images):
    hm = exact_heatmap(target, images[0], 0)
    c = fidelity_curves(target, hm, images[0], 0)
    assert np.isfinite(c["plus"].auc) and np.isfinite(c["minus"].auc)


def test_bench(target, images, grid):
    explainer = ExplainerModel(grid, 16, seed=0)
    assert bench_throughput("TVE", target, images[:2], explainer, repeats=1) > 0
    with pytest.raises(ValueError):
        bench_throughput("exact", target, images[:0])
    with pytest.raises(ValueError):
        bench_throughput("TVE", target, images[:1])
    assert forward_passes("exact", grid) == 128 and forward_passes("TVE", grid) == 1
