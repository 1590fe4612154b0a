"""Reference target models f_t = H_t ∘ G, masked evaluation, and task training."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .grid import GridSpec, apply_mask, apply_masks
from .layers import Module, ffn_block, init_linear, patchify
from .optim import Adam
from .validation import check_images, check_labels

ENCODE_CHUNK = 256


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, what="loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class PatchEncoder(Module):
    """Backbone G: per-patch embedding with positions, mean pool, feed-forward stack.

    Masked patches are all-zero pixels, so their token is a fixed
    position-dependent vector and G stays defined on any masked image.
    """

    def __init__(self, grid=GridSpec(), d_model=32, embed_dim=16, n_blocks=2, channels=3, seed=0):
        super().__init__()
        self.grid = grid
        self.d_model, self.embed_dim, self.n_blocks, self.channels = d_model, embed_dim, n_blocks, channels
        rng = np.random.default_rng(seed)
        k = channels * grid.C * grid.C
        w, b = init_linear(rng, k, d_model)
        self.add("embed.w", w)
        self.add("embed.b", b)
        self.add("pos", ad.Tensor(rng.normal(0, 0.5, size=(grid.n_patches, d_model)), requires_grad=True))
        for i in range(n_blocks):
            w1, b1 = init_linear(rng, d_model, 2 * d_model)
            w2, b2 = init_linear(rng, 2 * d_model, d_model)
            for name, t in zip(("w1", "b1", "w2", "b2"), (w1, b1, w2, b2)):
                self.add(f"block{i}.{name}", t)
        w, b = init_linear(rng, d_model, embed_dim)
        self.add("out.w", w)
        self.add("out.b", b)

    @property
    def frozen(self):
        return not any(p.requires_grad for p in self.params.values())

    def config(self):
        return {"d_model": self.d_model, "embed_dim": self.embed_dim,
                "n_blocks": self.n_blocks, "channels": self.channels}

    def forward(self, images):
        """Images [B, ch, W, W] -> embeddings Tensor [B, D]."""
        p = self.params
        tokens = ad.Tensor(patchify(images, self.grid))
        h = ad.gelu(tokens @ p["embed.w"] + p["embed.b"] + p["pos"])
        x = ad.mean(h, axis=1)
        for i in range(self.n_blocks):
            x = ffn_block(x, p[f"block{i}.w1"], p[f"block{i}.b1"], p[f"block{i}.w2"], p[f"block{i}.b2"])
        return ad.layer_norm(x) @ p["out.w"] + p["out.b"]

    def encode(self, images):
        """Inference-only batched encoding; returns float32 [B, D]."""
        images = np.asarray(images, dtype=np.float32)
        out = np.empty((len(images), self.embed_dim), dtype=np.float32)
        with ad.no_grad():
            for s in range(0, len(images), ENCODE_CHUNK):
                out[s:s + ENCODE_CHUNK] = self.forward(images[s:s + ENCODE_CHUNK]).data
        return out


class ClassifierHead(Module):
    """H_t: linear map R^D -> R^|Y_t| followed by softmax."""

    def __init__(self, embed_dim=16, n_classes=4, task="quadrant", seed=0):
        super().__init__()
        self.embed_dim, self.n_classes, self.task = embed_dim, n_classes, task
        w, b = init_linear(np.random.default_rng(seed), embed_dim, n_classes)
        self.add("w", w)
        self.add("b", b)

    def config(self):
        return {"embed_dim": self.embed_dim, "n_classes": self.n_classes, "task": self.task}

    def logits(self, emb):
        return ad.as_tensor(emb) @ self.params["w"] + self.params["b"]

    def probabilities(self, emb, clamp=True):
        """Softmax outputs for embeddings [..., D], floored at P_MIN when ``clamp``."""
        emb = np.asarray(emb, dtype=np.float32)
        if emb.shape[-1] != self.embed_dim:
            raise ValueError(f"embedding width {emb.shape[-1]} does not match head input {self.embed_dim}")
        with ad.no_grad():
            p = ad.softmax(self.logits(emb.reshape(-1, self.embed_dim))).data
        p = p.reshape(emb.shape[:-1] + (self.n_classes,))
        return np.maximum(p, np.float32(ad.P_MIN)) if clamp else p

    def log_prob(self, emb, y):
        """log H_t(emb; y) for every row of ``emb`` [..., D], as float64."""
        if not 0 <= y < self.n_classes:
            raise ValueError(f"class {y} not in [0, {self.n_classes})")
        return np.log(self.probabilities(emb)[..., y].astype(np.float64))


class TargetModel:
    """f_t = H_t ∘ G with masked-input evaluation."""

    def __init__(self, encoder, head):
        if encoder.embed_dim != head.embed_dim:
            raise ValueError(f"encoder D={encoder.embed_dim} but head expects {head.embed_dim}")
        self.encoder, self.head = encoder, head

    @property
    def grid(self):
        return self.encoder.grid

    @property
    def n_classes(self):
        return self.head.n_classes

    def predict_proba(self, images, clamp=True):
        return self.head.probabilities(self.encoder.encode(images), clamp=clamp)

    def predict(self, images):
        return self.predict_proba(images).argmax(axis=1)

    def masked_proba(self, image, masks):
        """Clamped class probabilities for ``image`` under each bool mask [M, P²]."""
        return self.predict_proba(apply_masks(image, masks, self.grid))

    def predict_masked(self, image, subset, y):
        """f_t(S; x, y), clamped to [P_MIN, 1]."""
        if not 0 <= y < self.n_classes:
            raise ValueError(f"class {y} not in [0, {self.n_classes})")
        return float(self.predict_proba(apply_mask(image, subset, self.grid)[None])[0, y])


def encode_masked(encoder, image, subset):
    """G(S; x): the embedding of ``image`` with patches outside ``subset`` zeroed."""
    return encoder.encode(apply_mask(image, subset, encoder.grid)[None])[0]


def train_classifier(encoder, head, images, labels, *, epochs, batch_size, lr, seed,
                     train_encoder=True, warmup_ratio=0.05, weight_decay=0.05):
    """Cross-entropy training of (G, H) in place. Returns the per-step loss list."""
    encoder.set_trainable(train_encoder)
    head.set_trainable(True)
    params = head.parameters() + (encoder.parameters() if train_encoder else [])
    n = len(labels)
    steps_per_epoch = max(1, -(-n // batch_size))
    opt = Adam(params, lr=lr, warmup_ratio=warmup_ratio,
               total_steps=epochs * steps_per_epoch, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    losses = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            opt.zero_grad()
            try:
                loss = ad.cross_entropy(head.logits(encoder.forward(images[idx])), labels[idx])
                loss.backward()
            except ad.NonFiniteError as exc:
                raise DivergenceError(step) from exc
            if opt.step() is None:
                raise DivergenceError(step, "gradient")
            losses.append(loss.item())
            step += 1
    encoder.set_trainable(False)
    head.set_trainable(False)
    return losses


class PatchClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn style classifier over images [n, ch, W, W].

    With ``encoder`` given the backbone is warm-started from a copy; set
    ``train_encoder=False`` for classifier-tuning (only the head learns).
    ``head`` warm-starts the classifier the same way. The passed objects are
    never mutated.
    """

    def __init__(self, grid=None, d_model=32, embed_dim=16, n_blocks=2, encoder=None, head=None,
                 train_encoder=True, epochs=10, batch_size=64, lr=3e-3, warmup_ratio=0.05,
                 weight_decay=0.05, task="quadrant", random_state=0):
        self.grid = grid
        self.d_model = d_model
        self.embed_dim = embed_dim
        self.n_blocks = n_blocks
        self.encoder = encoder
        self.head = head
        self.train_encoder = train_encoder
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.warmup_ratio = warmup_ratio
        self.weight_decay = weight_decay
        self.task = task
        self.random_state = random_state

    def _grid(self):
        if self.encoder is not None:
            return self.encoder.grid
        return self.grid if self.grid is not None else GridSpec()

    def fit(self, X, y):
        grid = self._grid()
        X = check_images(X, grid)
        self.classes_, y_idx = np.unique(check_labels(y, len(X)), return_inverse=True)
        seed = int(self.random_state)
        if self.encoder is None:
            if not self.train_encoder:
                raise ValueError("train_encoder=False needs a pre-trained encoder")
            encoder = PatchEncoder(grid, self.d_model, self.embed_dim, self.n_blocks, X.shape[1], seed)
        else:
            encoder = self.encoder.copy()
        if self.head is None:
            head = ClassifierHead(encoder.embed_dim, len(self.classes_), self.task, seed + 1)
        else:
            head = self.head.copy()
            if head.n_classes != len(self.classes_):
                raise ValueError(f"warm-start head has {head.n_classes} classes, data has {len(self.classes_)}")
        self.loss_curve_ = train_classifier(
            encoder, head, X, y_idx, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            seed=seed, train_encoder=self.train_encoder, warmup_ratio=self.warmup_ratio,
            weight_decay=self.weight_decay)
        self.encoder_, self.head_ = encoder, head
        self.train_accuracy_ = float(np.mean(self.target_.predict(X) == y_idx))
        return self

    @property
    def target_(self):
        check_is_fitted(self, "head_")
        return TargetModel(self.encoder_, self.head_)

    def predict_proba(self, X):
        return self.target_.predict_proba(check_images(X, self._grid()))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def pretrain_backbone(dataset, grid=GridSpec(), epochs=10, seed=0, **kw):
    """Train (G, H_g) on the pre-training corpus; G comes back frozen."""
    clf = PatchClassifier(grid=grid, epochs=epochs, random_state=seed, task=dataset.task, **kw)
    clf.fit(dataset.images, dataset.labels)
    return clf.encoder_, clf.head_, clf.train_accuracy_


def finetune_head(encoder, dataset, seed=0, epochs=20, lr=1e-2, batch_size=64, **kw):
    """Classifier-tuning: a fresh H_t on the frozen G."""
    clf = PatchClassifier(encoder=encoder, train_encoder=False, epochs=epochs, lr=lr,
                          batch_size=batch_size, task=dataset.task, random_state=seed, **kw)
    clf.fit(dataset.images, dataset.labels)
    return clf.head_, clf.train_accuracy_


def finetune_full(encoder, head, dataset, seed=0, epochs=5, lr=1e-3, batch_size=64, **kw):
    """Full fine-tuning of copies of (G, H_t); the inputs are left untouched."""
    clf = PatchClassifier(encoder=encoder, head=head, train_encoder=True, epochs=epochs, lr=lr,
                          batch_size=batch_size, task=dataset.task, random_state=seed, **kw)
    clf.fit(dataset.images, dataset.labels)
    return clf.encoder_, clf.head_, clf.train_accuracy_

