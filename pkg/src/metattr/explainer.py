"""Amortized explainer E(x | θ) regressing meta-attributions, and its training loops."""

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .attribution import MetaAttribution, compute_meta_attribution, transfer_explain
from .grid import apply_masks, neighbor_matrix
from .layers import Module, ffn_block, init_linear, patchify
from .models import DivergenceError
from .optim import Adam
from .parallel import ordered_map
from .validation import check_images


class ExplainerModel(Module):
    """Per-patch trunk with neighbourhood pooling, then a stack of FFN heads -> 2D per patch.

    Each patch token is concatenated with the pooled tokens of its neighbourhood
    and of the complement, which is the context a meta-attribution depends on.
    The first head has no skip connection and the last has no activation.
    """

    def __init__(self, grid, embed_dim=16, d_e=64, n_heads=4, n_trunk=1, channels=3, seed=0):
        super().__init__()
        if n_heads < 2:
            raise ValueError("n_heads must be >= 2 (first and last head differ)")
        self.grid, self.embed_dim, self.d_e = grid, embed_dim, d_e
        self.n_heads, self.n_trunk, self.channels = n_heads, n_trunk, channels
        rng = np.random.default_rng(seed)
        n = grid.n_patches
        self._add_linear(rng, "embed", channels * grid.C * grid.C, d_e)
        self.add("pos", ad.Tensor(rng.normal(0, 0.5, size=(n, d_e)), requires_grad=True))
        self._add_linear(rng, "ctx", 3 * d_e, d_e)
        self.add("ctx.pos", ad.Tensor(np.zeros((n, d_e)), requires_grad=True))
        for i in range(n_trunk):
            self._add_linear(rng, f"trunk{i}.1", d_e, 2 * d_e)
            self._add_linear(rng, f"trunk{i}.2", 2 * d_e, d_e)
        for i in range(n_heads - 1):
            self._add_linear(rng, f"head{i}", d_e, d_e)
        self._add_linear(rng, f"head{n_heads - 1}", d_e, 2 * embed_dim)
        nb = neighbor_matrix(grid).astype(np.float64)
        self._pool_in = nb / n
        self._pool_out = (1.0 - nb) / n

    def _add_linear(self, rng, name, fan_in, fan_out):
        w, b = init_linear(rng, fan_in, fan_out)
        self.add(f"{name}.w", w)
        self.add(f"{name}.b", b)

    def config(self):
        return {"embed_dim": self.embed_dim, "d_e": self.d_e, "n_heads": self.n_heads,
                "n_trunk": self.n_trunk, "channels": self.channels}

    def forward(self, images, patches=None):
        """Images [B, ch, W, W] -> Tensor [B, P², 2D] (ĝ in the first D columns).

        With ``patches`` [B, k] only those patch rows are produced ([B, k, 2D]);
        everything after the pooling layer is per-patch, so the values agree.
        """
        p = self.params
        tok = ad.gelu(ad.Tensor(patchify(images, self.grid)) @ p["embed.w"] + p["embed.b"] + p["pos"])
        inside = ad.Tensor(self._pool_in) @ tok
        outside = ad.Tensor(self._pool_out) @ tok
        x = ad.gelu(ad.concat([tok, inside, outside], axis=-1) @ p["ctx.w"] + p["ctx.b"] + p["ctx.pos"])
        if patches is not None:
            x = x[np.arange(x.shape[0])[:, None], patches]
        for i in range(self.n_trunk):
            x = ffn_block(x, p[f"trunk{i}.1.w"], p[f"trunk{i}.1.b"], p[f"trunk{i}.2.w"], p[f"trunk{i}.2.b"])
        last = self.n_heads - 1
        for i in range(last):
            y = ad.gelu(ad.layer_norm(x) @ p[f"head{i}.w"] + p[f"head{i}.b"])
            x = y if i == 0 else x + y
        return ad.layer_norm(x) @ p[f"head{last}.w"] + p[f"head{last}.b"]

    def predict(self, images):
        """Inference-only forward as float32 [B, P², 2D]."""
        with ad.no_grad():
            return self.forward(np.asarray(images, dtype=np.float32)).data


def explain_forward(explainer, image):
    """One forward pass -> predicted MetaAttribution."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise ValueError(f"expected one image [ch, W, W], got {image.shape}")
    out = explainer.predict(check_images(image, explainer.grid))[0]
    P, D = explainer.grid.P, explainer.embed_dim
    return MetaAttribution(out[:, :D].reshape(P, P, D), out[:, D:].reshape(P, P, D),
                           explainer.grid, "predicted")


class TargetCache:
    """Exact meta-attribution targets keyed by (image hash, hop radius, metric)."""

    def __init__(self, encoder):
        self.encoder = encoder
        self._store = {}

    def _key(self, image):
        grid = self.encoder.grid
        digest = hashlib.sha1(np.ascontiguousarray(image, dtype=np.float32).tobytes()).hexdigest()
        return digest, grid.hop_radius, grid.metric

    def get(self, image):
        key = self._key(image)
        if key not in self._store:
            self._store[key] = compute_meta_attribution(self.encoder, image).stacked()
        return self._store[key]

    def __len__(self):
        return len(self._store)


def meta_targets(encoder, images, patches=None, cache=None, threads=1):
    """Exact targets [B, k, 2D] for the given patch indices [B, k] (all patches when None)."""
    grid = encoder.grid
    nb = neighbor_matrix(grid)

    def one(k):
        if cache is not None:
            full = cache.get(images[k])
            return full if patches is None else full[patches[k]]
        if patches is None:
            return compute_meta_attribution(encoder, images[k]).stacked()
        sel = nb[patches[k]]
        emb = encoder.encode(apply_masks(images[k], np.concatenate([sel, ~sel]), grid))
        half = len(sel)
        return np.concatenate([emb[:half], emb[half:]], axis=1)

    return np.stack(ordered_map(one, range(len(images)), threads))


def _loss_tensor(pred, targets):
    """Mean over sampled (image, patch) of ||ĝ - g||² + ||ĥ - h||²."""
    diff = pred - ad.Tensor(targets)
    return ad.mean(ad.sum(diff * diff, axis=-1))


def pretrain_loss(explainer, encoder, image, sampled_patches):
    """Differentiable per-image loss against targets computed from ``encoder``."""
    patches = np.asarray(sampled_patches, dtype=np.int64).reshape(1, -1)
    if patches.size == 0:
        raise ValueError("sampled_patches must be non-empty")
    image = np.asarray(image, dtype=np.float32)[None]
    targets = meta_targets(encoder, image, patches)
    return _loss_tensor(explainer.forward(image, patches), targets)


def evaluate_loss(explainer, targets, images):
    """Full-grid loss (every patch) against precomputed targets [n, P², 2D]."""
    pred = explainer.predict(images).astype(np.float64)
    return float(np.mean(np.sum((pred - targets) ** 2, axis=-1)))


def pretrain(explainer, encoder, images, *, steps, batch_size=16, patches_per_image=8, lr=1e-3,
             warmup_ratio=0.05, weight_decay=0.05, seed=0, checkpoint_every=None, cache=True,
             threads=1, on_checkpoint=None):
    """Minimise the meta-attribution regression loss; returns (trained copy, trace, checkpoints).

    Each step samples ``batch_size`` images and ``patches_per_image`` distinct
    patches per image, builds exact targets with the frozen ``encoder``, and
    takes one Adam step. ``trace`` holds ``{"step", "loss", "lr"}`` per step;
    ``checkpoints`` holds ``(step, state_dict)`` every ``checkpoint_every``
    steps (including step 0 and the final step).
    """
    if encoder is None or not encoder.frozen:
        raise ValueError("pre-training needs a frozen encoder")
    images = np.asarray(images, dtype=np.float32)
    n, n_patches = len(images), explainer.grid.n_patches
    if n == 0 and steps > 0:
        raise ValueError("empty dataset")
    k = min(patches_per_image, n_patches)
    model = explainer.copy().set_trainable(True)
    opt = Adam(model.parameters(), lr=lr, warmup_ratio=warmup_ratio, total_steps=steps,
               weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    store = TargetCache(encoder) if cache else None
    trace, checkpoints = [], []

    def snapshot(step):
        checkpoints.append((step, model.state_dict()))
        if on_checkpoint is not None:
            on_checkpoint(step, model)

    for step in range(steps):
        if checkpoint_every and step % checkpoint_every == 0:
            snapshot(step)
        idx = rng.integers(n, size=batch_size)
        patches = np.argsort(rng.random((batch_size, n_patches)), axis=1)[:, :k]
        batch = images[idx]
        targets = meta_targets(encoder, batch, patches, store, threads)
        opt.zero_grad()
        try:
            loss = _loss_tensor(model.forward(batch, patches), targets)
            loss.backward()
        except ad.NonFiniteError as exc:
            raise DivergenceError(step) from exc
        rate = opt.step()
        if rate is None:
            raise DivergenceError(step, "gradient")
        trace.append({"step": step, "loss": loss.item(), "lr": rate})
    if checkpoint_every:
        snapshot(steps)
    model.set_trainable(False)
    return model, trace, checkpoints


def finetune_explainer(explainer, encoder, images, *, steps, seed=0, **kw):
    """Continue training on targets from a (fine-tuned) encoder.

    ``explainer=None`` starts from a fresh initialisation (learning from scratch).
    """
    if explainer is None:
        explainer = ExplainerModel(encoder.grid, encoder.embed_dim, seed=seed)
    return pretrain(explainer, encoder, images, steps=steps, seed=seed, **kw)


class MetaAttributionExplainer(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper: ``fit`` pre-trains, ``transform`` emits [n, P, P, 2D].

    ``init`` warm-starts from an existing :class:`ExplainerModel` (copied).
    """

    def __init__(self, encoder=None, d_e=64, n_heads=4, n_trunk=1, steps=5000, batch_size=16,
                 patches_per_image=8, lr=1e-3, warmup_ratio=0.05, weight_decay=0.05,
                 checkpoint_every=None, init=None, cache=True, threads=1, random_state=0):
        self.encoder = encoder
        self.d_e = d_e
        self.n_heads = n_heads
        self.n_trunk = n_trunk
        self.steps = steps
        self.batch_size = batch_size
        self.patches_per_image = patches_per_image
        self.lr = lr
        self.warmup_ratio = warmup_ratio
        self.weight_decay = weight_decay
        self.checkpoint_every = checkpoint_every
        self.init = init
        self.cache = cache
        self.threads = threads
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.encoder is None:
            raise ValueError("MetaAttributionExplainer needs a frozen encoder")
        X = check_images(X, self.encoder.grid)
        seed = int(self.random_state)
        start = self.init if self.init is not None else ExplainerModel(
            self.encoder.grid, self.encoder.embed_dim, self.d_e, self.n_heads, self.n_trunk,
            X.shape[1], seed)
        self.model_, self.loss_trace_, self.checkpoints_ = pretrain(
            start, self.encoder, X, steps=self.steps, batch_size=self.batch_size,
            patches_per_image=self.patches_per_image, lr=self.lr, warmup_ratio=self.warmup_ratio,
            weight_decay=self.weight_decay, seed=seed, checkpoint_every=self.checkpoint_every,
            cache=self.cache, threads=self.threads)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X, self.model_.grid)
        P, D = self.model_.grid.P, self.model_.embed_dim
        return self.model_.predict(X).reshape(len(X), P, P, 2 * D)

    def meta_attributions(self, X):
        check_is_fitted(self, "model_")
        return [explain_forward(self.model_, x) for x in check_images(X, self.model_.grid)]

    def explain(self, X, head, y=None):
        """Heatmaps for ``head``; ``y`` defaults to the class each image is predicted as."""
        metas = self.meta_attributions(X)
        if y is None:
            if self.encoder is None:
                raise ValueError("y is required when no encoder is attached")
            y = head.probabilities(self.encoder.encode(np.asarray(X))).argmax(axis=1)
        y = np.broadcast_to(np.asarray(y), (len(metas),))
        return [transfer_explain(m, head, int(c)) for m, c in zip(metas, y)]
