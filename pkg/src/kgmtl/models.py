"""The model zoo: relational scorers, attribute regressors, and losses.

Seven relational model kinds share one interface: gather embeddings for a
batch of (head, relation, tail) ids, produce one score per triplet, and
accumulate parameter gradients on the way back. Kinds fall into three
output families:

probability  mtkgnn, er_mlp   sigmoid MLP over concatenated embeddings
raw score    cp, rescal, ntn  higher is more plausible; sigmoid for labels
energy       transe, transr   translation distance; lower is more plausible

The multi-task kind additionally owns two attribute regressors (one for
head entities, one for tail entities) that share the entity table with
the relational scorer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import (
    Array,
    ParamStore,
    Rng,
    bilinear_slices,
    bilinear_slices_backward,
    concat,
    concat_backward,
    dropout,
    dropout_backward,
    gather,
    gather_backward,
    sigmoid,
    sigmoid_backward,
    tanh,
    tanh_backward,
)

MODEL_KINDS = ("mtkgnn", "er_mlp", "cp", "rescal", "transe", "transr", "ntn")
POINTWISE_KINDS = ("mtkgnn", "er_mlp", "cp", "rescal", "ntn")
TRANSLATIONAL_KINDS = ("transe", "transr")

CLAMP_EPS = 1e-12


@dataclass
class ModelSpec:
    """Architecture description: model kind, vocabulary sizes, and dims.

    Entity, relation, and attribute embeddings share one dimensionality;
    the three fields exist so shape contracts stay explicit.
    """

    kind: str
    n_entities: int
    n_relations: int
    n_attributes: int = 0
    entity_dim: int = 50
    relation_dim: int = 50
    attr_dim: int = 50
    hidden_dim: int = 100
    attr_hidden_dim: int = 100
    dropout: float = 0.5
    ntn_slices: int = 4
    distance: str = "l2"
    init: str = "scaled"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if not (self.entity_dim == self.relation_dim == self.attr_dim):
            raise ValueError("entity, relation, and attribute dims must be equal")
        for name in ("n_entities", "n_relations", "entity_dim", "hidden_dim",
                     "attr_hidden_dim", "ntn_slices"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_attributes < 0:
            raise ValueError("n_attributes must be >= 0")
        if self.kind == "mtkgnn" and self.n_attributes < 1:
            raise ValueError("the multi-task kind needs at least one attribute")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.distance not in ("l1", "l2"):
            raise ValueError("distance must be 'l1' or 'l2'")
        if self.init not in ("paper", "scaled"):
            raise ValueError("init must be 'paper' or 'scaled'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# Parameter creation
# ---------------------------------------------------------------------------


def _create_param(store: ParamStore, rng: Rng, pid: str, shape, how: str,
                  spec: ModelSpec, fan_in: int | None = None) -> None:
    """Create one parameter from its own named init stream.

    Keying the stream by parameter id means the set of other parameters in
    the store never shifts this one's initial values, so two models whose
     specs overlap initialize their shared parameters identically.
    """
    if pid in store:
        return
    gen = rng.stream("init/" + pid)
    if how == "embedding":
        bound = 6.0 / math.sqrt(shape[-1])
        value = gen.uniform(-bound, bound, size=shape)
    elif how == "weight":
        std = 1.0 if spec.init == "paper" else 1.0 / math.sqrt(fan_in)
        value = gen.normal(0.0, std, size=shape)
    elif how == "zeros":
        value = np.zeros(shape)
    elif how == "identity":
        value = np.broadcast_to(np.eye(shape[-2], shape[-1]), shape).copy()
    else:
        raise ValueError(f"unknown init kind {how!r}")
    store.add(pid, value)


# ---------------------------------------------------------------------------
# Relational scorers
# ---------------------------------------------------------------------------


class RelationalScorer:
    """Common interface of all relational models.

    ``forward`` returns the model's natural per-triplet output (see module
    docstring); ``backward`` consumes the gradient with respect to that
    output. ``classification_scores`` maps outputs to a scale where larger
    always means more plausible.
    """

    score_kind = "raw"  # "probability" | "raw" | "energy"

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._rng: Rng | None = None

    def ensure_params(self, store: ParamStore, rng: Rng) -> None:
        raise NotImplementedError

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        raise NotImplementedError

    def backward(self, store, g, cache) -> None:
        raise NotImplementedError

    def backward_logits(self, store, g, cache) -> None:
        """Gradient entry point w.r.t. the pre-sigmoid classification logit.

        For raw-score kinds the output already is the logit.
        """
        self.backward(store, g, cache)

    def logits(self, cache) -> Array:
        return cache["out"]

    def classification_scores(self, out: Array) -> Array:
        if self.score_kind == "probability":
            return out
        if self.score_kind == "energy":
            return -out
        return sigmoid(out)

    def param_ids(self, store: ParamStore) -> list[str]:
        raise NotImplementedError

    def projection_plan(self, store: ParamStore) -> list[tuple[str, float, str]]:
        """(param id, max norm, mode) rules applied after each epoch.

        Mode "rows" bounds each first-axis slice; "global" bounds the whole
        tensor. Embedding rows are capped at norm 1, matrix-valued relation
        parameters at Frobenius norm 3.
        """
        raise NotImplementedError


def _embed_triplet(store, heads, rels, tails, rel_table="emb/relation"):
    E = store.value("emb/entity")
    eh = gather(E, heads)
    et = gather(E, tails)
    rk = gather(store.value(rel_table), rels)
    return eh, rk, et


class ConcatMLPScorer(RelationalScorer):
    """Sigmoid MLP over the concatenated [head; tail; relation] embeddings.

    One tanh hidden layer (no hidden bias) with dropout in training mode,
    then a scalar readout with bias. This is both the standalone MLP
    classifier baseline and the relational half of the multi-task model.
    """

    score_kind = "probability"

    def ensure_params(self, store, rng):
        d, h = self.spec.entity_dim, self.spec.hidden_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        _create_param(store, rng, "emb/relation", (self.spec.n_relations, d), "embedding", self.spec)
        _create_param(store, rng, "relnet/W", (3 * d, h), "weight", self.spec, fan_in=3 * d)
        _create_param(store, rng, "relnet/w", (h,), "weight", self.spec, fan_in=h)
        _create_param(store, rng, "relnet/b", (1,), "zeros", self.spec)

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        eh, rk, et = _embed_triplet(store, heads, rels, tails)
        x = concat([eh, et, rk])
        hidden = tanh(x @ store.value("relnet/W"))
        hidden_d, mask = dropout(hidden, self.spec.dropout, dropout_gen, training)
        logit = hidden_d @ store.value("relnet/w") + store.value("relnet/b")[0]
        p = sigmoid(logit)
        cache = {"heads": heads, "rels": rels, "tails": tails, "x": x,
                 "hidden": hidden, "hidden_d": hidden_d, "mask": mask,
                 "p": p, "out": logit}
        return p, cache

    def backward(self, store, g, cache):
        self.backward_logits(store, sigmoid_backward(g, cache["p"]), cache)

    def backward_logits(self, store, g, cache):
        d = self.spec.entity_dim
        hidden_d = cache["hidden_d"]
        store["relnet/w"].grad += hidden_d.T @ g
        store["relnet/b"].grad += g.sum(keepdims=True)
        dhidden = g[:, None] * store.value("relnet/w")[None, :]
        dhidden = dropout_backward(dhidden, cache["mask"])
        dpre = tanh_backward(dhidden, cache["hidden"])
        store["relnet/W"].grad += cache["x"].T @ dpre
        dx = dpre @ store.value("relnet/W").T
        deh, det, drk = concat_backward(dx, [d, d, d])
        eshape = store.value("emb/entity").shape
        store["emb/entity"].grad += gather_backward(deh, eshape, cache["heads"])
        store["emb/entity"].grad += gather_backward(det, eshape, cache["tails"])
        store["emb/relation"].grad += gather_backward(
            drk, store.value("emb/relation").shape, cache["rels"])

    def param_ids(self, store):
        return ["emb/entity", "emb/relation", "relnet/W", "relnet/w", "relnet/b"]

    def projection_plan(self, store):
        return [("emb/entity", 1.0, "rows"), ("emb/relation", 1.0, "rows")]


class TrilinearScorer(RelationalScorer):
    """Elementwise product score sum_d (e_head * r * e_tail)_d."""

    def ensure_params(self, store, rng):
        d = self.spec.entity_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        _create_param(store, rng, "emb/relation", (self.spec.n_relations, d), "embedding", self.spec)

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        eh, rk, et = _embed_triplet(store, heads, rels, tails)
        out = np.einsum("bd,bd,bd->b", eh, rk, et)
        return out, {"heads": heads, "rels": rels, "tails": tails,
                     "eh": eh, "rk": rk, "et": et, "out": out}

    def backward(self, store, g, cache):
        eh, rk, et = cache["eh"], cache["rk"], cache["et"]
        gb = g[:, None]
        eshape = store.value("emb/entity").shape
        store["emb/entity"].grad += gather_backward(gb * rk * et, eshape, cache["heads"])
        store["emb/entity"].grad += gather_backward(gb * rk * eh, eshape, cache["tails"])
        store["emb/relation"].grad += gather_backward(
            gb * eh * et, store.value("emb/relation").shape, cache["rels"])

    def param_ids(self, store):
        return ["emb/entity", "emb/relation"]

    def projection_plan(self, store):
        return [("emb/entity", 1.0, "rows"), ("emb/relation", 1.0, "rows")]


class BilinearScorer(RelationalScorer):
    """Relation-specific bilinear form e_head^T W_r e_tail."""

    def ensure_params(self, store, rng):
        d = self.spec.entity_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        _create_param(store, rng, "rescal/W", (self.spec.n_relations, d, d), "weight",
                      self.spec, fan_in=d)

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        E = store.value("emb/entity")
        eh, et = gather(E, heads), gather(E, tails)
        Wk = store.value("rescal/W")[np.asarray(rels)]
        out = np.einsum("bi,bij,bj->b", eh, Wk, et)
        return out, {"heads": heads, "rels": rels, "tails": tails,
                     "eh": eh, "et": et, "Wk": Wk, "out": out}

    def backward(self, store, g, cache):
        eh, et, Wk = cache["eh"], cache["et"], cache["Wk"]
        deh = np.einsum("b,bij,bj->bi", g, Wk, et)
        det = np.einsum("b,bij,bi->bj", g, Wk, eh)
        dWk = np.einsum("b,bi,bj->bij", g, eh, et)
        eshape = store.value("emb/entity").shape
        store["emb/entity"].grad += gather_backward(deh, eshape, cache["heads"])
        store["emb/entity"].grad += gather_backward(det, eshape, cache["tails"])
        np.add.at(store["rescal/W"].grad, np.asarray(cache["rels"]), dWk)

    def param_ids(self, store):
        return ["emb/entity", "rescal/W"]

    def projection_plan(self, store):
        return [("emb/entity", 1.0, "rows"), ("rescal/W", 3.0, "rows")]


def _distance_forward(diff: Array, kind: str):
    if kind == "l1":
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def _distance_backward(g: Array, diff: Array, out: Array, kind: str) -> Array:
    if kind == "l1":
        return g[:, None] * np.sign(diff)
    safe = np.where(out > 0, out, 1.0)
    return g[:, None] * diff / safe[:, None]


class TranslationScorer(RelationalScorer):
    """Energy ||e_head + r - e_tail|| (L2 by default, L1 optional)."""

    score_kind = "energy"

    def ensure_params(self, store, rng):
        d = self.spec.entity_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        _create_param(store, rng, "emb/relation", (self.spec.n_relations, d), "embedding", self.spec)

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        eh, rk, et = _embed_triplet(store, heads, rels, tails)
        diff = eh + rk - et
        out = _distance_forward(diff, self.spec.distance)
        return out, {"heads": heads, "rels": rels, "tails": tails, "diff": diff, "out": out}

    def backward(self, store, g, cache):
        dd = _distance_backward(g, cache["diff"], cache["out"], self.spec.distance)
        eshape = store.value("emb/entity").shape
        store["emb/entity"].grad += gather_backward(dd, eshape, cache["heads"])
        store["emb/entity"].grad += gather_backward(-dd, eshape, cache["tails"])
        store["emb/relation"].grad += gather_backward(
            dd, store.value("emb/relation").shape, cache["rels"])

    def param_ids(self, store):
        return ["emb/entity", "emb/relation"]

    def projection_plan(self, store):
        return [("emb/entity", 1.0, "rows"), ("emb/relation", 1.0, "rows")]


class ProjectedTranslationScorer(RelationalScorer):
    """Translation energy in a relation-specific projected space.

    One projection matrix per relation, applied to both entities:
    ||M_r e_head + r - M_r e_tail||. Projections start at the identity.
    """

    score_kind = "energy"

    def ensure_params(self, store, rng):
        d = self.spec.entity_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        _create_param(store, rng, "emb/relation", (self.spec.n_relations, d), "embedding", self.spec)
        _create_param(store, rng, "transr/M", (self.spec.n_relations, d, d), "identity", self.spec)

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        eh, rk, et = _embed_triplet(store, heads, rels, tails)
        Mk = store.value("transr/M")[np.asarray(rels)]
        ph = np.einsum("bn,bnm->bm", eh, Mk)
        pt = np.einsum("bn,bnm->bm", et, Mk)
        diff = ph + rk - pt
        out = _distance_forward(diff, self.spec.distance)
        return out, {"heads": heads, "rels": rels, "tails": tails,
                     "eh": eh, "et": et, "Mk": Mk, "diff": diff, "out": out}

    def backward(self, store, g, cache):
        dd = _distance_backward(g, cache["diff"], cache["out"], self.spec.distance)
        eh, et, Mk = cache["eh"], cache["et"], cache["Mk"]
        deh = np.einsum("bm,bnm->bn", dd, Mk)
        det = -np.einsum("bm,bnm->bn", dd, Mk)
        dMk = np.einsum("bn,bm->bnm", eh, dd) - np.einsum("bn,bm->bnm", et, dd)
        eshape = store.value("emb/entity").shape
        store["emb/entity"].grad += gather_backward(deh, eshape, cache["heads"])
        store["emb/entity"].grad += gather_backward(det, eshape, cache["tails"])
        store["emb/relation"].grad += gather_backward(
            dd, store.value("emb/relation").shape, cache["rels"])
        np.add.at(store["transr/M"].grad, np.asarray(cache["rels"]), dMk)

    def param_ids(self, store):
        return ["emb/entity", "emb/relation", "transr/M"]

    def projection_plan(self, store):
        return [("emb/entity", 1.0, "rows"), ("emb/relation", 1.0, "rows"),
                ("transr/M", 3.0, "rows")]


class TensorScorer(RelationalScorer):
    """Per-relation tensor model with bilinear slices plus a linear term.

    score = u_r . tanh(e_head^T W_r^[1:s] e_tail + V_r [e_head; e_tail] + b_r)

    Relation parameters are allocated lazily the first time a relation id
    is scored; each parameter draws from its own init stream so allocation
    order never changes values.
    """

    def ensure_params(self, store, rng):
        d = self.spec.entity_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        self._rng = rng

    def _ensure_relation(self, store, k: int):
        d, s = self.spec.entity_dim, self.spec.ntn_slices
        _create_param(store, self._rng, f"ntn/W/{k}", (d, d, s), "weight", self.spec, fan_in=d)
        _create_param(store, self._rng, f"ntn/V/{k}", (2 * d, s), "weight", self.spec, fan_in=2 * d)
        _create_param(store, self._rng, f"ntn/b/{k}", (s,), "zeros", self.spec)
        _create_param(store, self._rng, f"ntn/u/{k}", (s,), "weight", self.spec, fan_in=s)

    def forward(self, store, heads, rels, tails, training=False, dropout_gen=None):
        if int(np.max(rels)) >= self.spec.n_relations or int(np.min(rels)) < 0:
            raise IndexError("relation id out of range")
        d = self.spec.entity_dim
        E = store.value("emb/entity")
        eh, et = gather(E, heads), gather(E, tails)
        out = np.zeros(len(heads))
        groups = []
        for k in np.unique(np.asarray(rels)):
            k = int(k)
            self._ensure_relation(store, k)
            idx = np.flatnonzero(np.asarray(rels) == k)
            e1, e2 = eh[idx], et[idx]
            x = concat([e1, e2])
            pre = bilinear_slices(e1, store.value(f"ntn/W/{k}"), e2) \
                + x @ store.value(f"ntn/V/{k}") + store.value(f"ntn/b/{k}")
            hidden = tanh(pre)
            out[idx] = hidden @ store.value(f"ntn/u/{k}")
            groups.append({"k": k, "idx": idx, "e1": e1, "e2": e2, "x": x, "hidden": hidden})
        return out, {"heads": heads, "tails": tails, "groups": groups, "out": out, "dim": d}

    def backward(self, store, g, cache):
        d = cache["dim"]
        eshape = store.value("emb/entity").shape
        for grp in cache["groups"]:
            k, idx = grp["k"], grp["idx"]
            gk = g[idx]
            hidden, e1, e2, x = grp["hidden"], grp["e1"], grp["e2"], grp["x"]
            store[f"ntn/u/{k}"].grad += hidden.T @ gk
            dhidden = gk[:, None] * store.value(f"ntn/u/{k}")[None, :]
            dpre = tanh_backward(dhidden, hidden)
            de1, dW, de2 = bilinear_slices_backward(dpre, e1, store.value(f"ntn/W/{k}"), e2)
            store[f"ntn/W/{k}"].grad += dW
            store[f"ntn/V/{k}"].grad += x.T @ dpre
            store[f"ntn/b/{k}"].grad += dpre.sum(axis=0)
            dx = dpre @ store.value(f"ntn/V/{k}").T
            dxa, dxb = concat_backward(dx, [d, d])
            store["emb/entity"].grad += gather_backward(de1 + dxa, eshape, cache["heads"][idx])
            store["emb/entity"].grad += gather_backward(de2 + dxb, eshape, cache["tails"][idx])

    def param_ids(self, store):
        return ["emb/entity"] + sorted(p for p in store.ids() if p.startswith("ntn/"))

    def projection_plan(self, store):
        plan = [("emb/entity", 1.0, "rows")]
        for pid in sorted(store.ids()):
            if pid.startswith(("ntn/W/", "ntn/V/")):
                plan.append((pid, 3.0, "global"))
        return plan


_SCORERS = {
    "mtkgnn": ConcatMLPScorer,
    "er_mlp": ConcatMLPScorer,
    "cp": TrilinearScorer,
    "rescal": BilinearScorer,
    "transe": TranslationScorer,
    "transr": ProjectedTranslationScorer,
    "ntn": TensorScorer,
}


def make_scorer(spec: ModelSpec) -> RelationalScorer:
    return _SCORERS[spec.kind](spec)


# ---------------------------------------------------------------------------
# Attribute regressor
# ---------------------------------------------------------------------------


class AttributeRegressor:
    """One side of the attribute network: predicts a normalized value.

    sigmoid(u . tanh(W^T [attr_emb; entity_emb]) + b), with dropout on the
    hidden layer in training mode. The head and tail sides are two
    independent instances sharing only the embedding tables. Rows with
    mask 0 get fully zeroed inputs and must receive zero output gradient
    (the loss handles that), so they contribute nothing to any parameter.
    """

    def __init__(self, spec: ModelSpec, side: str):
        if side not in ("head", "tail"):
            raise ValueError("side must be 'head' or 'tail'")
        self.spec = spec
        self.side = side
        self.prefix = f"attrnet/{side}"

    def ensure_params(self, store, rng):
        d, h = self.spec.entity_dim, self.spec.attr_hidden_dim
        _create_param(store, rng, "emb/entity", (self.spec.n_entities, d), "embedding", self.spec)
        _create_param(store, rng, "emb/attribute", (self.spec.n_attributes, d), "embedding", self.spec)
        _create_param(store, rng, f"{self.prefix}/W", (2 * d, h), "weight", self.spec, fan_in=2 * d)
        _create_param(store, rng, f"{self.prefix}/u", (h,), "weight", self.spec, fan_in=h)
        _create_param(store, rng, f"{self.prefix}/b", (1,), "zeros", self.spec)

    def forward(self, store, ents, attrs, mask=None, training=False, dropout_gen=None):
        ea = gather(store.value("emb/attribute"), attrs)
        ee = gather(store.value("emb/entity"), ents)
        if mask is not None:
            ea = ea * mask[:, None]
            ee = ee * mask[:, None]
        x = concat([ea, ee])
        hidden = tanh(x @ store.value(f"{self.prefix}/W"))
        hidden_d, dmask = dropout(hidden, self.spec.dropout, dropout_gen, training)
        logit = hidden_d @ store.value(f"{self.prefix}/u") + store.value(f"{self.prefix}/b")[0]
        pred = sigmoid(logit)
        cache = {"ents": ents, "attrs": attrs, "mask": mask, "x": x, "hidden": hidden,
                 "hidden_d": hidden_d, "dmask": dmask, "pred": pred}
        return pred, cache

    def backward(self, store, g, cache):
        d = self.spec.entity_dim
        g = sigmoid_backward(g, cache["pred"])
        store[f"{self.prefix}/u"].grad += cache["hidden_d"].T @ g
        store[f"{self.prefix}/b"].grad += g.sum(keepdims=True)
        dhidden = g[:, None] * store.value(f"{self.prefix}/u")[None, :]
        dhidden = dropout_backward(dhidden, cache["dmask"])
        dpre = tanh_backward(dhidden, cache["hidden"])
        store[f"{self.prefix}/W"].grad += cache["x"].T @ dpre
        dx = dpre @ store.value(f"{self.prefix}/W").T
        dea, dee = concat_backward(dx, [d, d])
        if cache["mask"] is not None:
            dea = dea * cache["mask"][:, None]
            dee = dee * cache["mask"][:, None]
        store["emb/attribute"].grad += gather_backward(
            dea, store.value("emb/attribute").shape, cache["attrs"])
        store["emb/entity"].grad += gather_backward(
            dee, store.value("emb/entity").shape, cache["ents"])

    def param_ids(self, store):
        return ["emb/entity", "emb/attribute",
                f"{self.prefix}/W", f"{self.prefix}/u", f"{self.prefix}/b"]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def cross_entropy(probs: Array, targets: Array, eps: float = CLAMP_EPS):
    """Summed binary cross entropy with clamped probabilities.

    Returns (loss, gradient w.r.t. the pre-sigmoid logits). Probabilities
    are clamped to [eps, 1-eps] before the logs; the logit gradient is the
    textbook p - t, masked to zero exactly where the clamp is active so it
    stays the true gradient of the clamped loss.
    """
    p = np.clip(probs, eps, 1.0 - eps)
    t = np.asarray(targets, dtype=np.float64)
    loss = float(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum())
    interior = (probs > eps) & (probs < 1.0 - eps)
    dlogits = (probs - t) * interior
    return loss, dlogits


def masked_mse(preds: Array, targets: Array, mask: Array):
    """Mean squared error over unmasked rows only.

    A fully masked batch contributes zero loss and zero gradient.
    Returns (loss, gradient w.r.t. preds).
    """
    m = np.asarray(mask, dtype=np.float64)
    count = m.sum()
    if count == 0:
        return 0.0, np.zeros_like(preds)
    diff = (preds - targets) * m
    loss = float((diff * diff).sum() / count)
    return loss, 2.0 * diff / count


def hinge_loss(pos_energy: Array, neg_energy: Array, margin: float):
    """Summed pairwise hinge max(0, E_pos + margin - E_neg).

    Returns (loss, grad w.r.t. pos energies, grad w.r.t. neg energies).
    """
    if len(pos_energy) != len(neg_energy):
        raise ValueError("positive and negative batches must pair up")
    viol = pos_energy + margin - neg_energy
    active = (viol > 0).astype(np.float64)
    loss = float(np.where(viol > 0, viol, 0.0).sum())
    return loss, active, -active


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


@dataclass
class Model:
    """A spec, its parameter store, and the scorer(s) built over it."""

    spec: ModelSpec
    store: ParamStore
    rng: Rng
    scorer: RelationalScorer
    attr_head: AttributeRegressor | None = None
    attr_tail: AttributeRegressor | None = None
    seed: int = 0

    @property
    def is_multitask(self) -> bool:
        return self.attr_head is not None

    def rel_param_ids(self) -> list[str]:
        return self.scorer.param_ids(self.store)

    def attr_param_ids(self) -> list[str]:
        ids = list(dict.fromkeys(
            self.attr_head.param_ids(self.store) + self.attr_tail.param_ids(self.store)))
        return ids

    def param_count(self) -> int:
        return sum(p.value.size for _, p in self.store.items())

    def predict_attribute(self, ents, attrs, side: str = "mean") -> Array:
        """Normalized attribute predictions from the attribute regressors."""
        if not self.is_multitask:
            raise ValueError("attribute prediction needs the multi-task kind")
        ents = np.asarray(ents)
        attrs = np.asarray(attrs)
        if side == "head":
            return self.attr_head.forward(self.store, ents, attrs)[0]
        if side == "tail":
            return self.attr_tail.forward(self.store, ents, attrs)[0]
        if side == "mean":
            h = self.attr_head.forward(self.store, ents, attrs)[0]
            t = self.attr_tail.forward(self.store, ents, attrs)[0]
            return 0.5 * (h + t)
        raise ValueError("side must be 'head', 'tail', or 'mean'")

    def projection_plan(self) -> list[tuple[str, float, str]]:
        plan = list(self.scorer.projection_plan(self.store))
        if self.is_multitask:
            plan.append(("emb/attribute", 1.0, "rows"))
        return plan


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Initialize every parameter of a model from the given seed."""
    store = ParamStore()
    rng = Rng(seed)
    scorer = make_scorer(spec)
    scorer.ensure_params(store, rng)
    attr_head = attr_tail = None
    if spec.kind == "mtkgnn":
        attr_head = AttributeRegressor(spec, "head")
        attr_tail = AttributeRegressor(spec, "tail")
        attr_head.ensure_params(store, rng)
        attr_tail.ensure_params(store, rng)
    return Model(spec, store, rng, scorer, attr_head, attr_tail, seed)


def expected_param_count(spec: ModelSpec) -> int:
    """Closed-form parameter count, with lazy kinds counted fully allocated."""
    E, R, A = spec.n_entities, spec.n_relations, spec.n_attributes
    d, h, ha, s = spec.entity_dim, spec.hidden_dim, spec.attr_hidden_dim, spec.ntn_slices
    mlp = 3 * d * h + h + 1
    per_attr_side = 2 * d * ha + ha + 1
    counts = {
        "er_mlp": E * d + R * d + mlp,
        "mtkgnn": E * d + R * d + A * d + mlp + 2 * per_attr_side,
        "cp": E * d + R * d,
        "rescal": E * d + R * d * d,
        "transe": E * d + R * d,
        "transr": E * d + R * d + R * d * d,
        "ntn": E * d + R * (d * d * s + 2 * d * s + 2 * s),
    }
    return counts[spec.kind]
