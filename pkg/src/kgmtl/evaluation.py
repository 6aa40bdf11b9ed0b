"""Measurement: classification thresholds, AUC, regression metrics, the
frozen-embedding linear probe, random baselines, and neighbor queries.

Classification works on a "larger means more plausible" score scale; the
scorers expose exactly that via ``classification_scores``. Regression is
measured on the normalized [0, 1] attribute scale throughout.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import DataError, Vocab
from .numerics import Rng


@dataclass
class EvalReport:
    task: str  # "triplet_classification" | "attribute_regression"
    split: str
    metrics: dict[str, float]
    threshold: float | None = None
    model_id: str = ""
    seed: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "split": self.split,
            "metrics": dict(self.metrics),
            "threshold": self.threshold,
            "model_id": self.model_id,
            "seed": self.seed,
            "notes": list(self.notes),
        }


@dataclass
class ProbeConfig:
    """Settings of the per-attribute linear regression probe.

    ``clip`` restricts probe predictions to [0, 1]; off by default so the
    probe stays a plain linear regressor.
    """

    lr_grid: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    epochs: int = 25
    batch_size: int = 32
    clip: bool = False

    def __post_init__(self):
        if not self.lr_grid:
            raise ValueError("learning-rate grid must be non-empty")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _check_two_classes(labels: np.ndarray, what: str) -> None:
    if labels.min() == labels.max():
        raise ValueError(f"{what} needs both classes present")


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def select_threshold(scores, labels) -> float:
    """Threshold maximizing accuracy on the given (dev) scores.

    Candidates are the midpoints between adjacent distinct sorted scores
    plus -inf/+inf sentinels; ``score >= threshold`` classifies positive.
    Ties favor the smallest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    _check_two_classes(labels, "threshold selection")
    distinct = np.unique(scores)
    candidates = np.concatenate(([-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]))
    best_theta = candidates[0]
    best_acc = -1.0
    for theta in candidates:
        acc = float(((scores >= theta) == labels).mean())
        if acc > best_acc:
            best_acc = acc
            best_theta = float(theta)
    return best_theta


def accuracy(scores, labels, threshold: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(((scores >= threshold) == labels).mean())


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank (Mann-Whitney) statistic.

    Equals the probability that a random positive outscores a random
    negative, with ties counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_two_classes(labels, "AUC")
    ranks = rankdata(scores)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def regression_metrics(y, y_hat) -> dict[str, float]:
    """RMSE, MAE, and R-squared of predictions against targets.

    R-squared is 1 - SS_res/SS_tot with SS_tot around the target mean; for
    constant targets it is undefined and omitted with a warning.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size == 0 or y.size != y_hat.size:
        raise ValueError("targets and predictions must have equal nonzero length")
    err = y - y_hat
    out = {
        "rmse": float(np.sqrt(np.mean(err * err))),
        "mae": float(np.mean(np.abs(err))),
    }
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        warnings.warn("constant targets: R^2 undefined, omitted", stacklevel=2)
    else:
        out["r2"] = 1.0 - float((err * err).sum()) / ss_tot
    return out


# ---------------------------------------------------------------------------
# Linear-regression probe over frozen embeddings
# ---------------------------------------------------------------------------


def _sgd_linear(X, y, lr, epochs, batch_size, gen):
    """Plain minibatch SGD on mean squared error for w.x + b."""
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb, yb = X[idx], y[idx]
            resid = Xb @ w + b - yb
            w -= lr * 2.0 * (Xb.T @ resid) / len(idx)
            b -= lr * 2.0 * resid.mean()
    return w, b


def _group_by_attr(triplets):
    groups: dict[int, list] = {}
    for t in triplets:
        groups.setdefault(t.attr, []).append(t)
    return groups


def probe_linear_regression(embeddings, attr_train, attr_dev, attr_test,
                            cfg: ProbeConfig | None = None, seed: int = 0,
                            model_id: str = "probe", normalizer=None) -> EvalReport:
    """Fit one linear regressor per attribute on frozen entity embeddings.

    For every attribute with training triplets, each learning rate in the
    grid trains an SGD regressor; the rate with the best dev RMSE wins
    (train RMSE breaks in when an attribute has no dev triplets). Test
    metrics are pooled over all attribute test triplets. Passing a
    ``normalizer`` reports metrics on denormalized (raw-scale) values.
    """
    cfg = cfg or ProbeConfig()
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] == 0:
        raise ValueError("embeddings must be a nonempty 2-d matrix")
    rng = Rng(seed)
    train_by = _group_by_attr(attr_train)
    dev_by = _group_by_attr(attr_dev)
    test_by = _group_by_attr(attr_test)

    notes = []
    pooled_y: list[float] = []
    pooled_pred: list[float] = []
    for a in sorted(set(train_by) | set(test_by)):
        rows = train_by.get(a)
        if not rows:
            notes.append(f"attribute {a}: no training triplets, skipped")
            continue
        X = embeddings[[t.entity for t in rows]]
        y = np.array([t.value for t in rows])
        dev_rows = dev_by.get(a, [])
        if dev_rows:
            Xs = embeddings[[t.entity for t in dev_rows]]
            ys = np.array([t.value for t in dev_rows])
        else:
            Xs, ys = X, y
            notes.append(f"attribute {a}: no dev triplets, selecting on train")
        best = None
        for lr in cfg.lr_grid:
            gen = rng.stream(f"probe/{a}/{lr}")
            w, b = _sgd_linear(X, y, lr, cfg.epochs, cfg.batch_size, gen)
            dev_pred = Xs @ w + b
            if cfg.clip:
                dev_pred = np.clip(dev_pred, 0.0, 1.0)
            rmse = float(np.sqrt(np.mean((dev_pred - ys) ** 2)))
            if best is None or rmse < best[0]:
                best = (rmse, w, b)
        _, w, b = best
        for t in test_by.get(a, []):
            pred = float(embeddings[t.entity] @ w + b)
            if cfg.clip:
                pred = min(1.0, max(0.0, pred))
            if normalizer is not None:
                pooled_y.append(t.raw_value)
                pooled_pred.append(normalizer.denormalize(a, pred))
            else:
                pooled_y.append(t.value)
                pooled_pred.append(pred)

    if not pooled_y:
        raise ValueError("no test triplets reachable by the probe")
    if normalizer is not None:
        notes.append("metrics computed on denormalized values")
    metrics = regression_metrics(np.array(pooled_y), np.array(pooled_pred))
    return EvalReport(task="attribute_regression", split="test", metrics=metrics,
                      model_id=model_id, seed=seed, notes=notes)


def baseline_predictors(kind: str, dims, seed: int = 0) -> np.ndarray:
    """Random reference points for the regression task.

    kind "r_guess": uniform [0,1] predictions, one per test triplet
    (``dims`` is the count). kind "r_init": an untrained uniform
    (-0.01, 0.01) embedding matrix (``dims`` is its shape) to feed the
    standard probe.
    """
    rng = Rng(seed)
    if kind == "r_guess":
        return rng.stream("rguess").random(int(dims))
    if kind == "r_init":
        return rng.stream("rinit").uniform(-0.01, 0.01, size=tuple(dims))
    raise ValueError(f"unknown baseline predictor {kind!r}")


# ---------------------------------------------------------------------------
# External embeddings
# ---------------------------------------------------------------------------


def load_external_embeddings(path, entities: Vocab):
    """Map entity names onto vectors from a `token v1 ... vd` text file.

    An entity whose full name appears as a token uses that vector
    directly; otherwise its name splits on whitespace/underscores and the
    covered tokens' vectors are averaged. Entities with no covered token
    get the zero vector. Returns (matrix [n_entities, d], coverage dict).
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: expected a token and at least one value")
            vec = np.array([float(v) for v in parts[1:]])
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DataError(
                    f"{path}:{lineno}: dimension {vec.size} != {dim} of earlier rows")
            vectors[parts[0]] = vec
    if dim is None:
        raise DataError(f"{path}: empty embedding file")

    out = np.zeros((len(entities), dim))
    covered = 0
    missing = []
    for i, name in enumerate(entities.names):
        if name in vectors:
            out[i] = vectors[name]
            covered += 1
            continue
        tokens = [t for t in re.split(r"[\s_]+", name) if t]
        hits = [vectors[t] for t in tokens if t in vectors]
        if hits:
            out[i] = np.mean(hits, axis=0)
            covered += 1
        else:
            missing.append(name)
    if missing:
        warnings.warn(f"{len(missing)} of {len(entities)} entities have no embedding "
                      "coverage and use the zero vector", stacklevel=2)
    return out, {"covered": covered, "missing": len(missing), "dim": int(dim)}


# ---------------------------------------------------------------------------
# Neighbor queries
# ---------------------------------------------------------------------------


def nearest_attributes(attr_id: int, k: int, attr_embeddings) -> list[tuple[int, float]]:
    """Top-k cosine neighbors of one attribute embedding, query excluded.

    Results sort by descending similarity, ties by ascending id. Zero-norm
    candidates get similarity 0 (no direction to compare).
    """
    emb = np.asarray(attr_embeddings, dtype=np.float64)
    n = emb.shape[0]
    if not 0 <= attr_id < n:
        raise IndexError(f"attribute id {attr_id} out of range")
    if k < 0 or k >= n:
        raise ValueError(f"k must be in [0, {n - 1}]")
    q = emb[attr_id]
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ValueError("query attribute has a zero-norm embedding")
    norms = np.linalg.norm(emb, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, emb @ q / (norms * qn), 0.0)
    order = sorted((i for i in range(n) if i != attr_id), key=lambda i: (-sims[i], i))
    return [(i, float(sims[i])) for i in order[:k]]


# ---------------------------------------------------------------------------
# Model-level reports
# ---------------------------------------------------------------------------


def score_split(model, splits, split: str):
    """Classification scores and labels for one split's pos+neg triplets."""
    pos = splits.rel(split)
    neg = splits.neg(split)
    triplets = pos + neg
    h = np.array([t.head for t in triplets], dtype=np.int64)
    r = np.array([t.rel for t in triplets], dtype=np.int64)
    t_ = np.array([t.tail for t in triplets], dtype=np.int64)
    out, _ = model.scorer.forward(model.store, h, r, t_)
    scores = model.scorer.classification_scores(out)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return scores, labels


def classification_report(model, splits, split: str = "test",
                          model_id: str = "", seed: int = 0) -> EvalReport:
    """Dev-selected threshold, then accuracy and AUC on the target split."""
    dev_scores, dev_labels = score_split(model, splits, "dev")
    theta = select_threshold(dev_scores, dev_labels)
    scores, labels = score_split(model, splits, split)
    metrics = {
        "accuracy": accuracy(scores, labels, theta),
        "auc": auc(scores, labels),
        "dev_accuracy": accuracy(dev_scores, dev_labels, theta),
    }
    return EvalReport(task="triplet_classification", split=split, metrics=metrics,
                      threshold=theta, model_id=model_id or model.spec.kind, seed=seed)


def attribute_prediction_report(model, splits, split: str = "test", side: str = "mean",
                                model_id: str = "", seed: int = 0,
                                normalizer=None) -> EvalReport:
    """Direct attribute regression metrics of the multi-task model.

    Passing a ``normalizer`` reports metrics on denormalized (raw-scale)
    values instead of the [0, 1] training scale.
    """
    rows = splits.attr(split)
    if not rows:
        raise ValueError(f"no attribute triplets in split {split!r}")
    ents = np.array([t.entity for t in rows], dtype=np.int64)
    attrs = np.array([t.attr for t in rows], dtype=np.int64)
    y = np.array([t.value for t in rows])
    pred = model.predict_attribute(ents, attrs, side=side)
    notes = []
    if normalizer is not None:
        y = np.array([t.raw_value for t in rows])
        pred = np.array([normalizer.denormalize(int(a), float(p))
                         for a, p in zip(attrs, pred)])
        notes.append("metrics computed on denormalized values")
    metrics = regression_metrics(y, pred)
    return EvalReport(task="attribute_regression", split=split, metrics=metrics,
                      model_id=model_id or model.spec.kind, seed=seed, notes=notes)
