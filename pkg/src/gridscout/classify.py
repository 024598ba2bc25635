"""Summary-statistic ranking models for square crops, plus ranking metrics.

Feature order is pinned (mean, max, min, variance, skew, kurtosis, area)
and recorded in serialized models. Logistic regression and the decision
forest are implemented directly so training is reproducible bit-for-bit
from a seed, with no dependence on external ML toolkits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imgio import atomic_write_bytes
from .squares import RotatedRect, SquareCrop  # re-exported: crops feed this module

FEATURE_ORDER = ("mean", "max", "min", "variance", "skew", "kurtosis", "area")

_MODEL_FORMAT = "gridscout-model"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    """Order-free intensity statistics of one crop plus its rect area."""

    mean: float
    max: float
    min: float
    variance: float
    skew: float
    kurtosis: float
    area: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_ORDER])


@dataclass(frozen=True)
class LinearModel:
    """Logistic regression on standardized features."""

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray


@dataclass(frozen=True)
class _Tree:
    """Flat binary tree; feature[i] == -1 marks node i as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray


@dataclass(frozen=True)
class ForestModel:
    trees: tuple = field(repr=False)
    tree_count: int = 100
    max_depth: int | None = None
    rng_seed: int = 0


def extract_features(crop: SquareCrop) -> FeatureVector:
    """Moments of the crop pixels; area is the source rect's width x height.

    Skew is m3/m2^1.5 and kurtosis is excess (m4/m2^2 - 3); both are defined
    as 0 when the variance is below 1e-12.
    """
    data = crop.pixels.data.ravel()
    if data.size == 0:
        raise ValueError("crop has no pixels")
    mu = float(data.mean())
    centered = data - mu
    m2 = float(np.mean(centered ** 2))
    if m2 < 1e-12:
        skew = kurtosis = 0.0
        m2 = 0.0
    else:
        m3 = float(np.mean(centered ** 3))
        m4 = float(np.mean(centered ** 4))
        skew = m3 / m2 ** 1.5
        kurtosis = m4 / (m2 * m2) - 3.0
    rect = crop.source_rect
    return FeatureVector(mean=mu, max=float(data.max()), min=float(data.min()),
                         variance=m2, skew=skew, kurtosis=kurtosis,
                         area=rect.width * rect.height)


def features_matrix(items) -> np.ndarray:
    """Stack FeatureVectors / rows into an (n, 7) float64 matrix."""
    rows = []
    for item in items:
        if isinstance(item, FeatureVector):
            rows.append(item.to_array())
        elif isinstance(item, SquareCrop):
            rows.append(extract_features(item).to_array())
        else:
            rows.append(np.asarray(item, dtype=np.float64))
    return np.vstack(rows) if rows else np.empty((0, len(FEATURE_ORDER)))


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return np.asarray(X, dtype=np.float64)
    return features_matrix(X)


def _as_labels(y) -> np.ndarray:
    arr = np.asarray(y)
    return arr.astype(np.float64).ravel()


# ---------------------------------------------------------------------------
# Logistic regression


def train_logreg(X, y, epochs: int = 10000, lr: float = 0.5,
                 l2: float = 1.0) -> LinearModel:
    """Full-batch gradient descent on L2-regularized logistic loss.

    Features are standardized internally (constants stored on the model);
    the bias is not regularized. Training stops when the gradient norm
    drops below 1e-6 or after `epochs` steps.
    """
    X = _as_matrix(X)
    y = _as_labels(y)
    n, d = X.shape
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("logistic regression needs both classes present")

    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds < 1e-12, 1.0, stds)
    Z = (X - means) / stds
    t = np.where(y > 0, 1.0, -1.0)

    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        z = Z @ w + b
        # d/dz log(1 + exp(-t z)) = -t * sigmoid(-t z)
        s = _sigmoid(-t * z)
        grad_w = -(Z * (t * s)[:, None]).mean(axis=0) + (l2 / n) * w
        grad_b = float(-(t * s).mean())
        gnorm = float(np.sqrt(np.dot(grad_w, grad_w) + grad_b * grad_b))
        if gnorm < 1e-6:
            break
        w -= lr * grad_w
        b -= lr * grad_b
    return LinearModel(weights=w, bias=b, feature_means=means, feature_stds=stds)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss(model: LinearModel, X, y, l2: float = 1.0) -> float:
    """The exact objective train_logreg minimizes, for external checks."""
    X = _as_matrix(X)
    y = _as_labels(y)
    n = X.shape[0]
    Z = (X - model.feature_means) / model.feature_stds
    t = np.where(y > 0, 1.0, -1.0)
    z = Z @ model.weights + model.bias
    # log(1 + exp(-tz)) computed stably
    m = np.maximum(0.0, -t * z)
    loss = float(np.mean(m + np.log(np.exp(-m) + np.exp(-t * z - m))))
    return loss + 0.5 * l2 * float(np.dot(model.weights, model.weights)) / n


# ---------------------------------------------------------------------------
# Decision forest


def _gini_best_split(values: np.ndarray, labels: np.ndarray):
    """Best (threshold, impurity drop) for one feature, or None."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    lab = labels[order]
    n = v.size
    distinct = np.nonzero(v[1:] > v[:-1])[0]
    if distinct.size == 0:
        return None
    pos = np.cumsum(lab)
    total_pos = pos[-1]
    # split after index i: left = [0..i], right = (i..n)
    i = distinct
    nl = (i + 1).astype(np.float64)
    nr = n - nl
    pl = pos[i] / nl
    pr = (total_pos - pos[i]) / nr
    gini_left = 2.0 * pl * (1.0 - pl)
    gini_right = 2.0 * pr * (1.0 - pr)
    weighted = (nl * gini_left + nr * gini_right) / n
    p = total_pos / n
    parent = 2.0 * p * (1.0 - p)
    gains = parent - weighted
    k = int(np.argmax(gains))
    if gains[k] <= 1e-12:
        return None
    thr = (v[i[k]] + v[i[k] + 1]) / 2.0
    return float(thr), float(gains[k])


def _grow_tree(X: np.ndarray, y: np.ndarray, max_depth, mtry: int,
               rng: np.random.Generator) -> _Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    prob: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        prob.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        labels = y[idx]
        p = float(labels.mean()) if idx.size else 0.0
        prob[node] = p
        if idx.size < 2 or p in (0.0, 1.0) or \
                (max_depth is not None and depth >= max_depth):
            continue
        cand = rng.choice(X.shape[1], size=mtry, replace=False)
        best = None
        for f in cand:
            res = _gini_best_split(X[idx, f], labels)
            if res is not None and (best is None or res[1] > best[2]):
                best = (int(f), res[0], res[1])
        if best is None:
            continue
        f, thr, _ = best
        go_left = X[idx, f] <= thr
        li = new_node()
        ri = new_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = li
        right[node] = ri
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))
    return _Tree(feature=np.array(feature, dtype=np.int32),
                 threshold=np.array(threshold),
                 left=np.array(left, dtype=np.int32),
                 right=np.array(right, dtype=np.int32),
                 prob=np.array(prob))


def train_forest(X, y, tree_count: int = 100, max_depth: int | None = None,
                 seed: int = 0) -> ForestModel:
    """Bootstrap forest with Gini splits over sqrt(d)-feature subsets.

    Single-class data yields a valid constant-probability model. All
    randomness comes from np.random.default_rng(seed).
    """
    X = _as_matrix(X)
    y = _as_labels(y)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples to train a forest")
    mtry = max(1, int(np.sqrt(d)))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(tree_count):
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], max_depth, mtry, rng))
    return ForestModel(trees=tuple(trees), tree_count=tree_count,
                       max_depth=max_depth, rng_seed=seed)


def _tree_predict(tree: _Tree, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while tree.feature[node] >= 0:
            if X[i, tree.feature[node]] <= tree.threshold[node]:
                node = tree.left[node]
            else:
                node = tree.right[node]
        out[i] = tree.prob[node]
    return out


def predict_scores(model, X) -> np.ndarray:
    """Scores in [0, 1] from either model kind."""
    X = _as_matrix(X)
    if isinstance(model, LinearModel):
        if X.shape[1] != model.weights.shape[0]:
            raise ValueError(
                f"feature dimension {X.shape[1]} does not match model "
                f"({model.weights.shape[0]})"
            )
        Z = (X - model.feature_means) / model.feature_stds
        return _sigmoid(Z @ model.weights + model.bias)
    if isinstance(model, ForestModel):
        dims = {int(t.feature.max(initial=-1)) for t in model.trees}
        needed = max(dims) + 1 if dims else 0
        if X.shape[1] < needed:
            raise ValueError(
                f"feature dimension {X.shape[1]} too small for forest "
                f"splits (needs >= {needed})"
            )
        acc = np.zeros(X.shape[0])
        for tree in model.trees:
            acc += _tree_predict(tree, X)
        return acc / len(model.trees)
    raise TypeError(f"unsupported model type {type(model)!r}")


# ---------------------------------------------------------------------------
# Metrics


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(random positive outscores random negative),
    ties 1/2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _as_labels(labels) > 0
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    from scipy.stats import rankdata
    ranks = rankdata(s, method="average")
    r_pos = float(ranks[y].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """AP over descending-score thresholds; ties broken by sample index."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = (_as_labels(labels) > 0).astype(np.float64)
    n_pos = float(y.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, y.size + 1)
    precision = tp / ranks
    return float((precision * hits).sum() / n_pos)


def permutation_importance(model, X, y, metric=roc_auc, repeats: int = 10,
                           seed: int = 0) -> np.ndarray:
    """Mean metric drop when one feature column is shuffled.

    One permutation is drawn per repeat and reused for every feature, so
    the result is exactly invariant to feature ordering.
    """
    X = _as_matrix(X)
    y = _as_labels(y)
    rng = np.random.default_rng(seed)
    baseline = metric(predict_scores(model, X), y)
    importance = np.zeros(X.shape[1])
    for _ in range(repeats):
        perm = rng.permutation(X.shape[0])
        for f in range(X.shape[1]):
            Xp = X.copy()
            Xp[:, f] = X[perm, f]
            importance[f] += baseline - metric(predict_scores(model, Xp), y)
    return importance / repeats


# ---------------------------------------------------------------------------
# Serialization


def save_model(model, path) -> None:
    """Write a model as versioned JSON with the feature order pinned."""
    doc = {"format": _MODEL_FORMAT, "version": _MODEL_VERSION,
           "feature_order": list(FEATURE_ORDER)}
    if isinstance(model, LinearModel):
        doc["kind"] = "logreg"
        doc["weights"] = model.weights.tolist()
        doc["bias"] = model.bias
        doc["feature_means"] = model.feature_means.tolist()
        doc["feature_stds"] = model.feature_stds.tolist()
    elif isinstance(model, ForestModel):
        doc["kind"] = "forest"
        doc["tree_count"] = model.tree_count
        doc["max_depth"] = model.max_depth
        doc["rng_seed"] = model.rng_seed
        doc["trees"] = [
            {"feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
             "left": t.left.tolist(), "right": t.right.tolist(),
             "prob": t.prob.tolist()}
            for t in model.trees
        ]
    else:
        raise TypeError(f"unsupported model type {type(model)!r}")
    payload = json.dumps(doc, indent=2, sort_keys=True).encode("ascii")
    atomic_write_bytes(path, payload + b"\n")


def load_model(path):
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format") != _MODEL_FORMAT:
        raise ValueError(f"not a model file: format {doc.get('format')!r}")
    if doc.get("version") != _MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    kind = doc.get("kind")
    if kind == "logreg":
        return LinearModel(weights=np.array(doc["weights"]),
                           bias=float(doc["bias"]),
                           feature_means=np.array(doc["feature_means"]),
                           feature_stds=np.array(doc["feature_stds"]))
    if kind == "forest":
        trees = tuple(
            _Tree(feature=np.array(t["feature"], dtype=np.int32),
                  threshold=np.array(t["threshold"], dtype=np.float64),
                  left=np.array(t["left"], dtype=np.int32),
                  right=np.array(t["right"], dtype=np.int32),
                  prob=np.array(t["prob"], dtype=np.float64))
            for t in doc["trees"]
        )
        return ForestModel(trees=trees, tree_count=int(doc["tree_count"]),
                           max_depth=doc["max_depth"],
                           rng_seed=int(doc["rng_seed"]))
    raise ValueError(f"unknown model kind {kind!r}")
