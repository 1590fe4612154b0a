"""Fidelity curves, sparsity-AUC, explanation-error bounds, correlation and throughput."""

import gc
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .attribution import (exact_attribution, exact_heatmap, image_rng,
                          mc_attribution, random_control, transfer_explain)
from .explainer import explain_forward
from .grid import PatchId, PatchSubset
from .parallel import ordered_map

MODES = ("TVE", "TVE_Hg", "TVE_PT", "TVE_FT", "LFScratch", "woPT", "exact", "random")
EXPLAINER_MODES = ("TVE", "TVE_Hg", "TVE_PT", "TVE_FT", "LFScratch", "woPT")
DIRECTIONS = ("plus", "minus")


@dataclass
class FidelityCurve:
    sparsity: np.ndarray
    values: np.ndarray
    direction: str
    auc: float = field(init=False)

    def __post_init__(self):
        self.sparsity = np.asarray(self.sparsity, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        s = self.sparsity
        if len(s) < 2 or s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
            raise ValueError("sparsity must increase strictly from 0 to 1")
        self.auc = trapezoid_auc(s, self.values)

    @property
    def points(self):
        return list(zip(self.sparsity.tolist(), self.values.tolist()))


def trapezoid_auc(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def ranking(values):
    """Patch indices by decreasing score; ties keep row-major order."""
    return np.argsort(-np.asarray(values, dtype=np.float64).ravel(), kind="stable")


def topk_masks(values):
    """Bool [n+1, n]: row k marks the k highest-scoring patches S*(k)."""
    order = ranking(values)
    n = len(order)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return rank[None, :] < np.arange(n + 1)[:, None]


def top_k(values, k):
    return PatchSubset.from_mask(topk_masks(values)[k])


def fidelity_curves(target, heatmap, image, y):
    """Both fidelity-sparsity curves over the dense grid k = 0..P².

    plus[k]  = f(Z; x, y) - f(Z \\ S*(k); x, y)
    minus[k] = f(Z; x, y) - f(S*(k); x, y)
    """
    sel = topk_masks(heatmap.values)
    n = sel.shape[1]
    p = target.masked_proba(image, np.concatenate([~sel, sel]))[:, y].astype(np.float64)
    full = p[0]
    sparsity = np.arange(n + 1) / n
    return {"plus": FidelityCurve(sparsity, full - p[:n + 1], "plus"),
            "minus": FidelityCurve(sparsity, full - p[n + 1:], "minus")}


def fidelity_curve(target, heatmap, image, y, direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    return fidelity_curves(target, heatmap, image, y)[direction]


# ---------------------------------------------------------------- modes

@dataclass
class ModeResult:
    mode: str
    per_image: dict
    seed_means: dict = None

    def summary(self, direction):
        v = np.asarray(self.per_image[direction])
        return float(v.mean()), float(v.std())

    def to_json(self, model="", dataset=""):
        rows = []
        for d in DIRECTIONS:
            mean, std = self.summary(d)
            row = {"mode": self.mode, "model": model, "dataset": dataset, "direction": d,
                   "auc_mean": mean, "auc_std": std, "per_image": list(self.per_image[d])}
            if self.seed_means is not None:
                row["seed_means"] = list(self.seed_means[d])
            rows.append(row)
        return rows


def _require(mode, **artifacts):
    missing = [name for name, value in artifacts.items() if value is None]
    if missing:
        raise ValueError(f"mode {mode} requires {', '.join(missing)}")


def evaluate_mode(mode, images, target, explainer=None, general_head=None, n_seeds=20, seed=0,
                  threads=1):
    """Per-image Fidelity± AUCs for one explanation mode.

    The explained class is the target's prediction on the unmasked image.
    Explainer modes transfer the explainer's meta-attribution through
    ``target.head``; ``TVE_Hg`` uses ``general_head`` and its own predicted
    class instead. ``random`` averages ``n_seeds`` random heatmaps per image
    and also reports the per-seed means (the control band).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode in EXPLAINER_MODES:
        _require(mode, explainer=explainer)
    if mode == "TVE_Hg":
        _require(mode, general_head=general_head)
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    preds = target.predict(images)

    def one(k):
        x, y = images[k], int(preds[k])
        if mode == "random":
            curves = [fidelity_curves(target, random_control(image_rng(seed + s, k), target.grid), x, y)
                      for s in range(n_seeds)]
            return {d: [c[d].auc for c in curves] for d in DIRECTIONS}
        if mode == "exact":
            hm = exact_heatmap(target, x, y)
        elif mode == "TVE_Hg":
            meta = explain_forward(explainer, x)
            y_g = int(general_head.probabilities(target.encoder.encode(x[None])).argmax())
            hm = transfer_explain(meta, general_head, y_g)
        else:
            hm = transfer_explain(explain_forward(explainer, x), target.head, y)
        curves = fidelity_curves(target, hm, x, y)
        return {d: curves[d].auc for d in DIRECTIONS}

    rows = ordered_map(one, range(len(images)), threads)
    if mode == "random":
        per_seed = {d: np.array([r[d] for r in rows]) for d in DIRECTIONS}
        return ModeResult(mode, {d: per_seed[d].mean(axis=1).tolist() for d in DIRECTIONS},
                          {d: per_seed[d].mean(axis=0).tolist() for d in DIRECTIONS})
    return ModeResult(mode, {d: [r[d] for r in rows] for d in DIRECTIONS})


# ---------------------------------------------------------------- error bound

@dataclass
class BoundReport:
    epsilon: float
    mean_abs_error: float
    n_triples: int

    @property
    def applicable(self):
        return self.epsilon < 1.0

    @property
    def bound(self):
        return 2 * self.epsilon / (1 - self.epsilon) if self.applicable else None

    @property
    def holds(self):
        return self.mean_abs_error <= self.bound + 1e-9 if self.applicable else None

    def to_json(self):
        return {"epsilon": self.epsilon, "bound": self.bound, "mean_abs_error": self.mean_abs_error,
                "holds": self.holds, "applicable": self.applicable, "n_triples": self.n_triples}


def bound_report(p_g, p_g_hat, p_h, p_h_hat):
    """Measure ε and the mean |φ̂ - φ| from the four probability families.

    ε is the largest deviation from 1 of H(ĝ)/H(g) and H(h)/H(ĥ); the error
    is |log H(ĝ) - log H(ĥ) - log H(g) + log H(h)| averaged over all triples.
    """
    arrays = [np.asarray(a, dtype=np.float64).ravel() for a in (p_g, p_g_hat, p_h, p_h_hat)]
    if len({a.size for a in arrays}) != 1:
        raise ValueError("probability families differ in size")
    if any((a <= 0).any() for a in arrays):
        raise ValueError("probabilities must be clamped positive")
    p_g, p_g_hat, p_h, p_h_hat = arrays
    r_g = p_g_hat / p_g
    r_h = p_h / p_h_hat
    eps = float(max(np.abs(r_g - 1).max(), np.abs(r_h - 1).max()))
    err = float(np.mean(np.abs(np.log(r_g) + np.log(r_h))))
    return BoundReport(eps, err, p_g.size)


def check_bound(exact_metas, predicted_metas, head, classes=None):
    """Bound report over every (image, patch, class) triple, with clamped probabilities."""
    if len(exact_metas) != len(predicted_metas):
        raise ValueError("exact and predicted lists differ in length")
    classes = list(range(head.n_classes)) if classes is None else list(classes)
    fam = {k: [] for k in ("g", "gh", "h", "hh")}
    for ex, pr in zip(exact_metas, predicted_metas):
        n = ex.grid.n_patches
        for key, arr in (("g", ex.g), ("gh", pr.g), ("h", ex.h), ("hh", pr.h)):
            fam[key].append(head.probabilities(arr.reshape(n, -1))[:, classes])
    cat = {k: np.concatenate(v) for k, v in fam.items()}
    return bound_report(cat["g"], cat["gh"], cat["h"], cat["hh"])


# ---------------------------------------------------------------- correlation

@dataclass
class CorrelationResult:
    r: float | None
    n_samples: int
    pairs: list

    def to_json(self):
        return {"pearson_r": self.r, "n_samples": self.n_samples, "n_pairs": len(self.pairs),
                "scatter": [{"mc": m, "two_state": e} for m, e in self.pairs]}


def pearson(a, b):
    """Pearson r, or None when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom <= 1e-12 * max(1.0, np.abs(a).max(initial=0) * np.abs(b).max(initial=0)):
        return None
    return float(np.sum(da * db) / denom)


def correlation_study(target, images, n_samples=16, seed=0, n_pairs=200, threads=1):
    """Pair Monte-Carlo attributions with two-state ones for ``n_pairs`` (image, patch) draws."""
    images = np.asarray(images, dtype=np.float32)
    n = target.grid.n_patches
    per_image = -(-n_pairs // len(images))
    preds = target.predict(images)

    def one(k):
        rng = image_rng(seed, k)
        zs = rng.choice(n, size=min(per_image, n), replace=False)
        out = []
        for z in sorted(zs.tolist()):
            pid = PatchId.from_flat(z, target.grid.P)
            y = int(preds[k])
            out.append((mc_attribution(target, images[k], pid, y, n_samples, rng),
                        exact_attribution(target, images[k], pid, y)))
        return out

    pairs = [p for rows in ordered_map(one, range(len(images)), threads) for p in rows][:n_pairs]
    mc, ex = zip(*pairs)
    return CorrelationResult(pearson(mc, ex), n_samples, pairs)


# ---------------------------------------------------------------- throughput

BENCH_METHODS = ("TVE", "exact", "mc16")


def explain_one(method, target, image, y, explainer=None, rng=None):
    """Heatmap values for one image and class under ``method``."""
    if method == "TVE":
        return transfer_explain(explain_forward(explainer, image), target.head, y).values
    if method == "exact":
        return exact_heatmap(target, image, y).values
    if method == "mc16":
        P = target.grid.P
        rng = np.random.default_rng(0) if rng is None else rng
        return np.array([mc_attribution(target, image, PatchId.from_flat(z, P), y, 16, rng)
                         for z in range(P * P)]).reshape(P, P)
    raise ValueError(f"unknown method {method!r}; choose from {BENCH_METHODS}")


def explain_images(method, target, images, explainer=None, seed=0):
    """Explain every image for its predicted class; returns the heatmap values."""
    preds = target.predict(images)
    return [explain_one(method, target, x, int(preds[k]), explainer, image_rng(seed, k))
            for k, x in enumerate(images)]


def forward_passes(method, grid):
    """Model evaluations per explained image (the explainer forward counts as one)."""
    return {"TVE": 1, "exact": 2 * grid.n_patches, "mc16": 32 * grid.n_patches}[method]


def bench_table(cases, images, repeats=3):
    """Median images/second for each ``name -> (method, target, explainer)`` case.

    Within a repeat the cases take turns image by image (in rotating order),
    each accumulating only its own time, so load changes on the machine hit
    every case alike. Predicted classes are computed before timing. The
    garbage collector is paused while timing.
    """
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ValueError("n_images must be positive")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    names = list(cases)
    preds = {}
    for name, (method, target, explainer) in cases.items():
        if method not in BENCH_METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {BENCH_METHODS}")
        if method == "TVE" and explainer is None:
            raise ValueError(f"case {name}: TVE throughput needs an explainer")
        preds[name] = target.predict(images)
        explain_one(method, target, images[0], int(preds[name][0]), explainer)  # warm-up
    rates = {name: [] for name in names}
    was_enabled = gc.isenabled()
    try:
        for _ in range(repeats):
            gc.collect()
            gc.disable()
            spent = dict.fromkeys(names, 0.0)
            for k, x in enumerate(images):
                for j in range(len(names)):
                    name = names[(k + j) % len(names)]
                    method, target, explainer = cases[name]
                    rng = image_rng(0, k)
                    start = time.perf_counter()
                    explain_one(method, target, x, int(preds[name][k]), explainer, rng)
                    spent[name] += time.perf_counter() - start
            gc.enable()
            for name in names:
                rates[name].append(len(images) / spent[name])
    finally:
        if was_enabled:
            gc.enable()
    return {name: statistics.median(r) for name, r in rates.items()}


def bench_throughput(method, target, images, explainer=None, repeats=3):
    """Median images/second of one method over ``repeats`` timed runs after a warm-up."""
    return bench_table({method: (method, target, explainer)}, images, repeats)[method]
