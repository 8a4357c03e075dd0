"""Per-relation prediction models: an LSTM composes each path feature into a
vector, the score is the sigmoid of the mean cosine between those vectors and
the relation's own vector, and weights transfer from the most similar past
task found by factorizing the relation/entity-pair matrix.

All gradients are written out by hand so they can be checked against finite
differences; training uses adaptive-moment gradient steps.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kb import INVERSE_SUFFIX, PairMatrix                    # noqa: F401
from .metrics import confusion, mcc_score

Feature = tuple[tuple[str, ...], int]          # (relation labels, multiplicity)
Example = tuple[list[Feature], bool]           # (complete features, label)


class TrainingDataError(ValueError):
    """Training refused: no usable complete features in the data."""


@dataclass
class TrainingConfig:
    """Optimization schedule. Hidden/embedding sizes default to desk scale;
    the full-scale reference setting is 300/300 with SVD rank 300."""

    batch_size: int = 128
    max_epochs: int = 150
    dropout: float = 0.2
    hidden: int = 32
    emb_dim: int = 32
    lr: float = 5e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stop_patience: int = 10
    finetune_lr_scale: float = 0.1
    svd_rank: int = 16
    class_weighting: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "hidden", "emb_dim", "svd_rank"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience must be at least 1")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _label_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}|{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class RelationModel:
    """Scores path evidence for one target relation."""

    def __init__(self, relation: str, cfg: TrainingConfig | None = None):
        self.relation = relation
        self.cfg = cfg or TrainingConfig()
        h, e = self.cfg.hidden, self.cfg.emb_dim
        rng = np.random.default_rng(_label_seed(self.cfg.seed, relation))
        self.vocab: dict[str, int] = {}
        self.emb = np.zeros((0, e))
        scale = 1.0 / math.sqrt(h)
        self.Wx = rng.normal(0.0, scale, (4 * h, e))
        self.Wh = rng.normal(0.0, scale, (4 * h, h))
        self.b = np.zeros(4 * h)
        self.b[h:2 * h] = 1.0  # forget gate bias
        # relation vector starts from the relation's own embedding row when
        # the dimensions line up, otherwise from a seeded random draw
        if e == h:
            self.v_r = self._row(relation).copy()
        else:
            self.v_r = rng.normal(0.0, 0.4, h)
        self._rng = rng
        self.mu = 0.5
        # when tied, the relation vector is the relation's embedding row
        # (shared-model mode); otherwise it is a free parameter
        self.tied = False

    # -- vocabulary ----------------------------------------------------------

    def _row(self, label: str) -> np.ndarray:
        idx = self.vocab.get(label)
        if idx is None:
            idx = len(self.vocab)
            self.vocab[label] = idx
            row_rng = np.random.default_rng(_label_seed(self.cfg.seed, label))
            row = row_rng.normal(0.0, 0.4, self.cfg.emb_dim)
            self.emb = np.vstack([self.emb, row[None, :]])
        return self.emb[idx]

    def ensure_labels(self, labels) -> None:
        for label in labels:
            self._row(label)

    # -- forward -------------------------------------------------------------

    def compose(self, labels: tuple[str, ...], dropout_masks=None):
        """Final hidden state of the recurrent cell over the label sequence."""
        h_size = self.cfg.hidden
        h = np.zeros(h_size)
        c = np.zeros(h_size)
        cache = []
        for step, label in enumerate(labels):
            idx = self.vocab.get(label)
            if idx is None:
                self._row(label)
                idx = self.vocab[label]
            mask = dropout_masks[step] if dropout_masks is not None else None
            x = self.emb[idx] if mask is None else self.emb[idx] * mask
            z = self.Wx @ x + self.Wh @ h + self.b
            i = 1.0 / (1.0 + np.exp(-z[:h_size]))
            f = 1.0 / (1.0 + np.exp(-z[h_size:2 * h_size]))
            g = np.tanh(z[2 * h_size:3 * h_size])
            o = 1.0 / (1.0 + np.exp(-z[3 * h_size:]))
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            cache.append((idx, x, mask, h_prev, c_prev, i, f, g, o, c, tc))
        return h, cache

    @staticmethod
    def _cos(a: np.ndarray, b: np.ndarray) -> float:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(a, b) / (na * nb))

    def relation_vector(self) -> np.ndarray:
        if self.tied:
            if self.cfg.emb_dim != self.cfg.hidden:
                raise ValueError(
                    "a tied relation vector needs emb_dim == hidden"
                )
            return self._row(self.relation)
        return self.v_r

    def score(self, features: list[Feature]) -> float:
        """Probability that the pair holds the relation, from its features."""
        if not features:
            raise ValueError("cannot score an empty feature list")
        v_r = self.relation_vector()
        total = sum(n for _, n in features)
        mean = 0.0
        for labels, n in features:
            h, _ = self.compose(labels)
            mean += n * self._cos(v_r, h)
        return _sigmoid(mean / total)

    def classify(self, features: list[Feature]) -> bool:
        return self.score(features) >= self.mu

    # -- backward ------------------------------------------------------------

    def loss_and_grads(self, batch: list[Example], weights=(1.0, 1.0), dropout_rng=None):
        """Mean weighted negative log-likelihood and its exact gradients."""
        h_size, e_size = self.cfg.hidden, self.cfg.emb_dim
        p = self.cfg.dropout if dropout_rng is not None else 0.0
        # settle the vocabulary first: growth would reallocate the embedding
        # table mid-pass and orphan the gradient buffers
        self.ensure_labels(
            label for features, _ in batch for labels, _ in features for label in labels
        )
        if self.tied:
            self.ensure_labels([self.relation])
        grads = {
            "Wx": np.zeros_like(self.Wx),
            "Wh": np.zeros_like(self.Wh),
            "b": np.zeros_like(self.b),
            "v_r": np.zeros_like(self.v_r),
            "emb": np.zeros_like(self.emb),
        }
        total_loss = 0.0
        v_r = self.relation_vector()
        v_r_idx = self.vocab[self.relation] if self.tied else None
        for features, label in batch:
            total = sum(n for _, n in features)
            comps = []
            mean = 0.0
            for labels, n in features:
                masks = None
                if p > 0.0:
                    masks = [
                        (dropout_rng.random(e_size) >= p) / (1.0 - p)
                        for _ in labels
                    ]
                h, cache = self.compose(labels, masks)
                k = self._cos(v_r, h)
                comps.append((h, cache, masks, n, k))
                mean += n * k
            mean /= total
            prob = _sigmoid(mean)
            w = weights[1] if label else weights[0]
            y = 1.0 if label else 0.0
            eps = 1e-12
            total_loss += -w * (y * math.log(prob + eps) + (1 - y) * math.log(1 - prob + eps))
            dmean = w * (prob - y)
            for h, cache, masks, n, k in comps:
                dk = dmean * n / total
                nv, nh = np.linalg.norm(v_r), np.linalg.norm(h)
                if nv == 0.0 or nh == 0.0:
                    continue
                dv = dk * (h / (nv * nh) - k * v_r / (nv * nv))
                if v_r_idx is not None:
                    grads["emb"][v_r_idx] += dv
                else:
                    grads["v_r"] += dv
                dh = dk * (v_r / (nv * nh) - k * h / (nh * nh))
                self._backprop_lstm(dh, cache, grads)
        n_batch = len(batch)
        for key in grads:
            grads[key] /= n_batch
        return total_loss / n_batch, grads

    def _backprop_lstm(self, dh: np.ndarray, cache, grads) -> None:
        h_size = self.cfg.hidden
        dc = np.zeros(h_size)
        for idx, x, mask, h_prev, c_prev, i, f, g, o, c, tc in reversed(cache):
            do = dh * tc
            dct = dh * o * (1.0 - tc * tc) + dc
            di = dct * g
            df = dct * c_prev
            dg = dct * i
            dc = dct * f
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            grads["Wx"] += np.outer(dz, x)
            grads["Wh"] += np.outer(dz, h_prev)
            grads["b"] += dz
            dx = self.Wx.T @ dz
            grads["emb"][idx] += dx if mask is None else dx * mask
            dh = self.Wh.T @ dz

    # -- persistence / transfer ----------------------------------------------

    def state(self) -> dict:
        return {
            "relation": self.relation,
            "vocab": dict(self.vocab),
            "emb": self.emb.copy(),
            "Wx": self.Wx.copy(),
            "Wh": self.Wh.copy(),
            "b": self.b.copy(),
            "v_r": self.v_r.copy(),
            "mu": self.mu,
        }

    def load_state(self, state: dict) -> None:
        self.vocab = dict(state["vocab"])
        self.emb = state["emb"].copy()
        self.Wx = state["Wx"].copy()
        self.Wh = state["Wh"].copy()
        self.b = state["b"].copy()
        self.v_r = state["v_r"].copy()
        self.mu = state.get("mu", 0.5)

    def clone_for(self, relation: str) -> "RelationModel":
        """Transferred copy whose relation vector starts from this model's."""
        model = RelationModel(relation, self.cfg)
        model.vocab = dict(self.vocab)
        model.emb = self.emb.copy()
        model.Wx = self.Wx.copy()
        model.Wh = self.Wh.copy()
        model.b = self.b.copy()
        model.v_r = self.v_r.copy()
        return model


class _Adam:
    """Adaptive-moment gradient descent over the model's parameter dict."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def _grow(self, key: str, shape) -> None:
        for store in (self.m, self.v):
            cur = store.get(key)
            if cur is None:
                store[key] = np.zeros(shape)
            elif cur.shape != shape:
                grown = np.zeros(shape)
                grown[: cur.shape[0]] = cur
                store[key] = grown

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for key, grad in grads.items():
            self._grow(key, grad.shape)
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
            m_hat = self.m[key] / (1 - self.beta1 ** self.t)
            v_hat = self.v[key] / (1 - self.beta2 ** self.t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _usable(examples: list[Example]) -> list[Example]:
    return [ex for ex in examples if ex[0]]


def class_weights(examples: list[Example]) -> tuple[float, float]:
    """(negative, positive) weights inversely proportional to frequency."""
    pos = sum(1 for _, label in examples if label)
    neg = len(examples) - pos
    if pos == 0 or neg == 0:
        return 1.0, 1.0
    total = pos + neg
    return total / (2.0 * neg), total / (2.0 * pos)


def fit_model(
    model: RelationModel,
    train: list[Example],
    val: list[Example],
    finetune: bool = False,
) -> dict:
    """Mini-batch training with per-epoch shuffling, plateau learning-rate
    reduction, and early stopping on validation loss (best weights kept)."""
    cfg = model.cfg
    train = _usable(train)
    val = _usable(val)
    if not train:
        raise TrainingDataError(
            f"no instances with complete features for {model.relation!r}"
        )
    for features, _ in train + val:
        model.ensure_labels(label for labels, _ in features for label in labels)
    weights = class_weights(train) if cfg.class_weighting else (1.0, 1.0)
    lr = cfg.lr * (cfg.finetune_lr_scale if finetune else 1.0)
    opt = _Adam(lr)
    rng = np.random.default_rng(cfg.seed + 1)
    drop_rng = np.random.default_rng(cfg.seed + 2)
    params = {"Wx": model.Wx, "Wh": model.Wh, "b": model.b, "v_r": model.v_r}

    def val_loss() -> float:
        if not val:
            loss, _ = model.loss_and_grads(train, weights)
            return loss
        loss, _ = model.loss_and_grads(val, weights)
        return loss

    def epoch_mcc() -> float:
        probe = val if val else train
        mu = _threshold_or_none(model, probe)
        mu = 0.5 if mu is None else mu
        pairs = [(model.score(f) >= mu, label) for f, label in probe]
        return mcc_score(*confusion(pairs))

    best = val_loss()
    best_state = model.state()
    stale = 0
    history = {"epochs": 0, "val_loss": [best], "val_mcc": []}
    order = np.arange(len(train))
    for epoch in range(cfg.max_epochs):
        rng.shuffle(order)
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            _, grads = model.loss_and_grads(
                batch, weights, drop_rng if cfg.dropout > 0 else None
            )
            params["emb"] = model.emb
            opt.step(params, grads)
        history["epochs"] = epoch + 1
        loss = val_loss()
        history["val_loss"].append(loss)
        history["val_mcc"].append(epoch_mcc())
        if loss < best - 1e-9:
            best = loss
            best_state = model.state()
            stale = 0
        else:
            stale += 1
            if stale % cfg.plateau_patience == 0:
                opt.lr *= cfg.plateau_factor
            if stale >= cfg.early_stop_patience:
                break
    model.load_state(best_state)
    return history


def _threshold_or_none(model: RelationModel, val: list[Example]) -> float | None:
    pos = [model.score(f) for f, label in _usable(val) if label]
    neg = [model.score(f) for f, label in _usable(val) if not label]
    if not pos or not neg:
        return None
    return 0.5 * (sum(pos) / len(pos) + sum(neg) / len(neg))


def compute_threshold(model: RelationModel, val: list[Example]) -> float:
    """Midpoint of the mean prediction over positives and over negatives."""
    mu = _threshold_or_none(model, val)
    if mu is None:
        warnings.warn(
            f"one-sided validation data for {model.relation!r}; "
            "falling back to a 0.5 threshold"
        )
        return 0.5
    return mu


def validation_mcc(model: RelationModel, val: list[Example]) -> float:
    pairs = [(model.classify(f), label) for f, label in _usable(val)]
    if not pairs:
        return 0.0
    return mcc_score(*confusion(pairs))


def invert_label(label: str, suffix: str = INVERSE_SUFFIX) -> str:
    return label[: -len(suffix)] if label.endswith(suffix) else label + suffix


def reverse_examples(examples: list[Example], suffix: str = INVERSE_SUFFIX) -> list[Example]:
    """Reverse every path feature, inverting each relation label."""
    out = []
    for features, label in examples:
        reversed_features = [
            (tuple(invert_label(l, suffix) for l in reversed(labels)), n)
            for labels, n in features
        ]
        out.append((reversed_features, label))
    return out


def split_validation(train: list[Example], fraction: float = 0.1, seed: int = 0):
    """Carve a validation slice (10%) out of the training examples.

    Stratified: a class is never emptied out of the training side."""
    if len(train) < 2:
        return list(train), []
    n_val = max(1, round(fraction * len(train)))
    rng = np.random.default_rng(seed)
    by_class: dict[bool, list[int]] = {}
    for i, (_, label) in enumerate(train):
        by_class.setdefault(label, []).append(i)
    val_idx: set[int] = set()
    order = sorted(by_class, key=lambda c: -len(by_class[c]))
    while len(val_idx) < n_val:
        progressed = False
        for cls in order:
            pool = [i for i in by_class[cls] if i not in val_idx]
            if len(pool) > 1 and len(val_idx) < n_val:
                val_idx.add(pool[int(rng.integers(len(pool)))])
                progressed = True
        if not progressed:
            break
    tr = [ex for i, ex in enumerate(train) if i not in val_idx]
    va = [ex for i, ex in enumerate(train) if i in val_idx]
    return tr, va


def train_model(
    relation: str,
    train: list[Example],
    val: list[Example],
    cfg: TrainingConfig | None = None,
    init: RelationModel | None = None,
    inverse_suffix: str = INVERSE_SUFFIX,
):
    """Train the forward and inverse models for a relation.

    Returns (model, inverse_model, validation MCC).  With ``init`` given the
    weights start from the source task and fine-tune at a reduced rate.
    """
    cfg = cfg or TrainingConfig()
    if not val:
        train, val = split_validation(train, seed=cfg.seed)
    if init is not None:
        model = init.clone_for(relation)
        model.cfg = cfg
        fit_model(model, train, val, finetune=True)
    else:
        model = RelationModel(relation, cfg)
        fit_model(model, train, val)
    model.mu = compute_threshold(model, val)
    mcc = validation_mcc(model, val)

    inv_label = invert_label(relation, inverse_suffix)
    inv_train = reverse_examples(train, inverse_suffix)
    inv_val = reverse_examples(val, inverse_suffix)
    if init is not None:
        inverse_model = init.clone_for(inv_label)
        inverse_model.cfg = cfg
        fit_model(inverse_model, inv_train, inv_val, finetune=True)
    else:
        inverse_model = RelationModel(inv_label, cfg)
        fit_model(inverse_model, inv_train, inv_val)
    inverse_model.mu = compute_threshold(inverse_model, inv_val)
    return model, inverse_model, mcc


@dataclass
class TaskSimilarity:
    """Dense relation-by-relation similarity from a truncated factorization."""

    matrix: np.ndarray
    index: dict[int, int]

    def value(self, a: int, b: int) -> float:
        ia, ib = self.index.get(a), self.index.get(b)
        if ia is None or ib is None:
            return 0.0
        return float(self.matrix[ia, ib])


def task_similarity(matrix: PairMatrix, k: int) -> TaskSimilarity:
    """U_k S_k S_k^T U_k^T over the sparse relation/pair incidence matrix."""
    if k <= 0:
        raise ValueError("rank k must be positive")
    rids = matrix.relation_ids()
    if not rids:
        raise ValueError("the relation/pair matrix is empty")
    pairs = sorted({pair for rid in rids for pair in matrix.row(rid)})
    pair_index = {pair: j for j, pair in enumerate(pairs)}
    from scipy.sparse import lil_matrix
    from scipy.sparse.linalg import svds

    m = lil_matrix((len(rids), len(pairs)))
    for i, rid in enumerate(rids):
        for pair in matrix.row(rid):
            m[i, pair_index[pair]] = 1.0
    k_eff = min(k, len(rids), len(pairs))
    if k_eff < min(len(rids), len(pairs)):
        u, s, _ = svds(m.tocsc().astype(float), k=k_eff)
    else:
        u, s, _ = np.linalg.svd(m.toarray(), full_matrices=False)
        u, s = u[:, :k_eff], s[:k_eff]
    sim = (u * (s * s)) @ u.T
    sim = 0.5 * (sim + sim.T)
    return TaskSimilarity(sim, {rid: i for i, rid in enumerate(rids)})


def select_source_task(sim: TaskSimilarity, relation: int, trained: set[int]) -> int | None:
    """Most similar already-trained relation, or None for a random init."""
    best, best_score = None, -math.inf
    for candidate in sorted(trained):
        if candidate == relation:
            continue
        score = sim.value(relation, candidate)
        if score > best_score:
            best, best_score = candidate, score
    if best is None or best_score <= 0.0:
        return None
    return best
