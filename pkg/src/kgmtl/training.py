"""Training loops: the multi-task epoch schedule, single-task baselines,
margin sweeps, norm projection, and checkpointing.

Every epoch shuffles the pool of positive and frozen negative triplets,
draws one batch of size beta (or sweeps the pool in chunks, by config),
and applies one Adam update to the relational parameters. The multi-task
kind then optionally runs Attribute Training (an attribute batch built
from the same relational batch) and k rounds of Attribute-Specific
Training (all triplets of one sampled attribute, through both regressor
sides). Embedding rows are projected onto the unit ball at the end of
each epoch; matrix-valued relation parameters onto the Frobenius ball of
radius 3.

All randomness flows through named per-epoch streams, so a checkpoint
only needs (seed, epoch) to resume bitwise-identically.
"""

from __future__ import annotations

import json
import math
import struct
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AttrTriplet, DataError, KnowledgeGraph
from .evaluation import accuracy, score_split, select_threshold
from .models import (
    Model,
    ModelSpec,
    TRANSLATIONAL_KINDS,
    build_model,
    cross_entropy,
    hinge_loss,
    make_scorer,
    masked_mse,
)
from .numerics import NumericError, ParamStore, Rng, project_norm

CHECKPOINT_MAGIC = b"KGCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Everything a training run depends on besides the data itself."""

    model: ModelSpec
    batch_size: int = 500
    iterations: int = 500
    lr: float = 1e-3
    ast_k: int = 4
    use_rel: bool = True
    use_at: bool = True
    use_ast: bool = True
    seed: int = 0
    epoch_mode: str = "single_batch"  # or "sweep"
    margin: float | None = None
    margins: tuple[float, ...] = (1.0, 2.0, 4.0)
    embedding_max_norm: float = 1.0
    matrix_max_norm: float = 3.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.ast_k < 0:
            raise ValueError("ast_k must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epoch_mode not in ("single_batch", "sweep"):
            raise ValueError("epoch_mode must be 'single_batch' or 'sweep'")
        if not self.margins or any(m <= 0 for m in self.margins):
            raise ValueError("margins must be positive")
        self.margins = tuple(self.margins)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margins"] = list(self.margins)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelSpec.from_dict(d["model"])
        d["margins"] = tuple(d.get("margins", (1.0, 2.0, 4.0)))
        return cls(**d)


@dataclass
class AttrBatch:
    """Inputs of one attribute update, head and tail sides.

    Each side is (entity ids, attribute ids, targets, mask); mask 0 marks
    slots whose entity has no training attribute, which enter the network
    as zero vectors and contribute nothing to the loss or gradients.
    """

    head: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    tail: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


@dataclass
class TrainResult:
    model: Model
    log: list[dict]
    cfg: TrainConfig
    margin: float | None = None
    sweep: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Attribute batch construction
# ---------------------------------------------------------------------------


def build_attr_index(attr_train: list[AttrTriplet]) -> dict[int, list[AttrTriplet]]:
    """Entity id -> its training attribute triplets."""
    index: dict[int, list[AttrTriplet]] = {}
    for t in attr_train:
        index.setdefault(t.entity, []).append(t)
    return index


def _sample_side(ents: np.ndarray, attr_index, gen) -> tuple:
    n = len(ents)
    attrs = np.zeros(n, dtype=np.int64)
    targets = np.zeros(n)
    mask = np.zeros(n)
    for i, e in enumerate(ents):
        rows = attr_index.get(int(e))
        if rows:
            t = rows[int(gen.integers(0, len(rows)))]
            attrs[i] = t.attr
            targets[i] = t.value
            mask[i] = 1.0
    return np.asarray(ents, dtype=np.int64), attrs, targets, mask


def build_attributes(rel_batch, attr_index, gen) -> AttrBatch:
    """One attribute triplet per batch entity, head and tail sides.

    ``rel_batch`` is either a (heads, tails) pair of id arrays or a list
    of triplets with .head/.tail. Entities without training attributes
    yield masked zero-input slots.
    """
    if isinstance(rel_batch, tuple):
        heads, tails = rel_batch
    else:
        heads = np.array([t.head for t in rel_batch], dtype=np.int64)
        tails = np.array([t.tail for t in rel_batch], dtype=np.int64)
    return AttrBatch(head=_sample_side(heads, attr_index, gen),
                     tail=_sample_side(tails, attr_index, gen))


# ---------------------------------------------------------------------------
# Shared pieces of the epoch loop
# ---------------------------------------------------------------------------


def _triplet_arrays(triplets):
    h = np.array([t.head for t in triplets], dtype=np.int64)
    r = np.array([t.rel for t in triplets], dtype=np.int64)
    t_ = np.array([t.tail for t in triplets], dtype=np.int64)
    return h, r, t_


def _chunks(perm: np.ndarray, batch_size: int, mode: str):
    if mode == "single_batch":
        return [perm[:batch_size]]
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


def _apply_projections(model: Model, cfg: TrainConfig) -> None:
    for pid, norm, mode in model.projection_plan():
        bound = cfg.embedding_max_norm if norm <= 1.0 else cfg.matrix_max_norm
        value = model.store[pid].value
        if mode == "rows":
            project_norm(value, bound)
        else:
            # whole-tensor Frobenius bound; reshape views the same memory
            project_norm(value.reshape(-1), bound)


def _check_finite(loss: float, what: str, epoch: int, chunk: int) -> None:
    if not math.isfinite(loss):
        raise NumericError(f"non-finite {what} loss at epoch {epoch}, batch {chunk}")


def _attr_update(model: Model, cfg: TrainConfig, batch: AttrBatch,
                 dropout_gen, epoch: int, chunk: int) -> float:
    store = model.store
    he, ha, ht, hm = batch.head
    te, ta, tt, tm = batch.tail
    pred_h, cache_h = model.attr_head.forward(store, he, ha, mask=hm,
                                              training=True, dropout_gen=dropout_gen)
    pred_t, cache_t = model.attr_tail.forward(store, te, ta, mask=tm,
                                              training=True, dropout_gen=dropout_gen)
    loss_h, dh = masked_mse(pred_h, ht, hm)
    loss_t, dt = masked_mse(pred_t, tt, tm)
    loss = loss_h + loss_t
    _check_finite(loss, "attribute", epoch, chunk)
    model.attr_head.backward(store, dh, cache_h)
    model.attr_tail.backward(store, dt, cache_t)
    store.adam_step(model.attr_param_ids(), lr=cfg.lr)
    return loss


def _train_pointwise(kg: KnowledgeGraph, cfg: TrainConfig, model: Model,
                     start_epoch: int, update_hook) -> TrainResult:
    """Cross-entropy training; covers the multi-task kind and all
    sigmoid-scored baselines."""
    splits = kg.splits
    pos_h, pos_r, pos_t = _triplet_arrays(splits.rel_train)
    neg_h, neg_r, neg_t = _triplet_arrays(splits.neg_train)
    heads = np.concatenate([pos_h, neg_h])
    rels = np.concatenate([pos_r, neg_r])
    tails = np.concatenate([pos_t, neg_t])
    labels = np.concatenate([np.ones(len(pos_h)), np.zeros(len(neg_h))])

    multitask = model.is_multitask
    do_at = multitask and cfg.use_at
    do_ast = multitask and cfg.use_ast and cfg.ast_k > 0
    attr_index = build_attr_index(splits.attr_train) if multitask else {}
    by_attr: dict[int, list[AttrTriplet]] = {}
    for t in splits.attr_train:
        by_attr.setdefault(t.attr, []).append(t)
    eligible = sorted(by_attr)
    if multitask and not eligible:
        do_at = do_ast = False

    rng = model.rng
    scorer = model.scorer
    log = []
    for epoch in range(start_epoch, cfg.iterations):
        t0 = time.perf_counter()
        loss_rel_total = 0.0
        loss_attr_total = 0.0
        perm = rng.stream("batch/rel", epoch).permutation(len(heads))
        for ci, idx in enumerate(_chunks(perm, cfg.batch_size, cfg.epoch_mode)):
            h, r, t_, y = heads[idx], rels[idx], tails[idx], labels[idx]
            if cfg.use_rel:
                dgen = rng.stream(f"dropout/rel/{ci}", epoch)
                out, cache = scorer.forward(model.store, h, r, t_, training=True,
                                            dropout_gen=dgen)
                probs = scorer.classification_scores(out)
                loss, dlogits = cross_entropy(probs, y)
                _check_finite(loss, "relational", epoch, ci)
                scorer.backward_logits(model.store, dlogits, cache)
                model.store.adam_step(model.rel_param_ids(), lr=cfg.lr)
                if update_hook:
                    update_hook("rel", epoch, model)
                loss_rel_total += loss
            if do_at:
                batch = build_attributes((h, t_), attr_index,
                                         rng.stream(f"at/sample/{ci}", epoch))
                loss_attr_total += _attr_update(model, cfg, batch,
                                                rng.stream(f"dropout/at/{ci}", epoch),
                                                epoch, ci)
                if update_hook:
                    update_hook("at", epoch, model)
        if do_ast:
            for j in range(cfg.ast_k):
                gen = rng.stream(f"ast/sample/{j}", epoch)
                a = eligible[int(gen.integers(0, len(eligible)))]
                rows = by_attr[a]
                if len(rows) >= cfg.batch_size:
                    sel = gen.choice(len(rows), size=cfg.batch_size, replace=False)
                else:
                    sel = gen.integers(0, len(rows), size=cfg.batch_size)
                ents = np.array([rows[i].entity for i in sel], dtype=np.int64)
                attrs = np.full(len(sel), a, dtype=np.int64)
                targets = np.array([rows[i].value for i in sel])
                ones = np.ones(len(sel))
                side = (ents, attrs, targets, ones)
                batch = AttrBatch(head=side, tail=side)
                loss_attr_total += _attr_update(model, cfg, batch,
                                                rng.stream(f"dropout/ast/{j}", epoch),
                                                epoch, -1)
                if update_hook:
                    update_hook("ast", epoch, model)
        _apply_projections(model, cfg)
        log.append({"epoch": epoch, "loss_rel": loss_rel_total,
                    "loss_attr": loss_attr_total,
                    "seconds": time.perf_counter() - t0})
    return TrainResult(model=model, log=log, cfg=cfg)


def _train_translational(kg: KnowledgeGraph, cfg: TrainConfig, model: Model,
                         margin: float, start_epoch: int, update_hook) -> TrainResult:
    """Pairwise hinge training over aligned positive/corrupted pairs."""
    splits = kg.splits
    pos = _triplet_arrays(splits.rel_train)
    neg = _triplet_arrays(splits.neg_train)
    n = len(pos[0])
    rng = model.rng
    scorer = model.scorer
    log = []
    for epoch in range(start_epoch, cfg.iterations):
        t0 = time.perf_counter()
        loss_total = 0.0
        perm = rng.stream("batch/rel", epoch).permutation(n)
        for ci, idx in enumerate(_chunks(perm, cfg.batch_size, cfg.epoch_mode)):
            e_pos, cache_p = scorer.forward(model.store, pos[0][idx], pos[1][idx],
                                            pos[2][idx], training=True)
            e_neg, cache_n = scorer.forward(model.store, neg[0][idx], neg[1][idx],
                                            neg[2][idx], training=True)
            loss, dp, dn = hinge_loss(e_pos, e_neg, margin)
            _check_finite(loss, "hinge", epoch, ci)
            scorer.backward(model.store, dp, cache_p)
            scorer.backward(model.store, dn, cache_n)
            model.store.adam_step(model.rel_param_ids(), lr=cfg.lr)
            if update_hook:
                update_hook("rel", epoch, model)
            loss_total += loss
        _apply_projections(model, cfg)
        log.append({"epoch": epoch, "loss_rel": loss_total, "loss_attr": 0.0,
                    "seconds": time.perf_counter() - t0})
    return TrainResult(model=model, log=log, cfg=cfg, margin=margin)


def _dev_accuracy(model: Model, splits) -> float:
    scores, labels = score_split(model, splits, "dev")
    theta = select_threshold(scores, labels)
    return accuracy(scores, labels, theta)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def train_mtkgnn(kg: KnowledgeGraph, cfg: TrainConfig, update_hook=None,
                 resume: "Checkpoint | None" = None) -> TrainResult:
    """Train the multi-task model (or its ablations) per the epoch schedule."""
    if cfg.model.kind != "mtkgnn":
        raise ValueError("train_mtkgnn requires the multi-task model kind")
    if not cfg.use_rel and not (cfg.use_at or cfg.use_ast):
        raise ValueError("all tasks disabled: enable the relational or an "
                         "attribute task")
    if not cfg.use_rel and not kg.splits.attr_train:
        raise ValueError("cannot train attribute tasks alone without "
                         "training attribute triplets")
    if cfg.use_rel and cfg.model.n_attributes > 0 and not (cfg.use_at or cfg.use_ast):
        warnings.warn("attribute tasks disabled: training reduces to the "
                      "relational classifier alone", stacklevel=2)
    model, start = _model_and_start(kg, cfg, resume)
    return _train_pointwise(kg, cfg, model, start, update_hook)


def train_baseline(kg: KnowledgeGraph, cfg: TrainConfig, update_hook=None,
                   resume: "Checkpoint | None" = None) -> TrainResult:
    """Train a single-task baseline; translational kinds sweep margins.

    The sweep trains one model per candidate margin and keeps the one with
    the best dev accuracy, ties going to the smallest margin. A fixed
    ``cfg.margin`` skips the sweep.
    """
    kind = cfg.model.kind
    if kind == "mtkgnn":
        raise ValueError("use train_mtkgnn for the multi-task kind")
    if not cfg.use_rel:
        raise ValueError("single-task baselines cannot drop the relational task")
    if kind not in TRANSLATIONAL_KINDS:
        model, start = _model_and_start(kg, cfg, resume)
        return _train_pointwise(kg, cfg, model, start, update_hook)

    if resume is not None:
        model, start = _model_and_start(kg, cfg, resume)
        margin = resume.cfg.margin if cfg.margin is None else cfg.margin
        if margin is None:
            raise ValueError("resuming a translational model needs a fixed margin")
        return _train_translational(kg, cfg, model, margin, start, update_hook)

    candidates = (cfg.margin,) if cfg.margin is not None else cfg.margins
    best = None
    sweep = []
    for lam in candidates:
        model = build_model(cfg.model, cfg.seed)
        result = _train_translational(kg, cfg, model, lam, 0, update_hook)
        acc = _dev_accuracy(model, kg.splits)
        sweep.append({"margin": lam, "dev_accuracy": acc})
        if best is None or acc > best[0]:
            best = (acc, result)
    result = best[1]
    result.sweep = sweep
    return result


def train_model(kg: KnowledgeGraph, cfg: TrainConfig, update_hook=None,
                resume: "Checkpoint | None" = None) -> TrainResult:
    if cfg.model.kind == "mtkgnn":
        return train_mtkgnn(kg, cfg, update_hook, resume)
    return train_baseline(kg, cfg, update_hook, resume)


def _model_and_start(kg: KnowledgeGraph, cfg: TrainConfig, resume):
    if resume is None:
        return build_model(cfg.model, cfg.seed), 0
    if resume.spec != cfg.model:
        raise ValueError("checkpoint model spec differs from the requested one")
    if resume.seed != cfg.seed:
        raise ValueError("checkpoint seed differs from the requested one")
    if resume.vocab_hashes != kg.vocab_hashes():
        raise ValueError("checkpoint vocabulary hashes do not match this dataset")
    return model_from_checkpoint(resume), resume.epoch


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    spec: ModelSpec
    cfg: TrainConfig
    vocab_hashes: dict[str, str]
    epoch: int
    seed: int
    adam_step: int
    tensors: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]


def save_checkpoint(path, model: Model, cfg: TrainConfig,
                    vocab_hashes: dict[str, str], epoch: int) -> None:
    """Versioned binary container: JSON header plus raw float64 payloads.

    Each tensor stores its value and both Adam moment accumulators so a
    resumed run continues bitwise-identically.
    """
    ids = sorted(model.store.ids())
    header = {
        "model_spec": model.spec.to_dict(),
        "train_config": cfg.to_dict(),
        "vocab_hashes": dict(vocab_hashes),
        "epoch": int(epoch),
        "seed": int(cfg.seed),
        "adam_step": int(model.store.step),
        "tensors": [{"id": pid, "shape": list(model.store.value(pid).shape)}
                    for pid in ids],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for pid in ids:
            p = model.store[pid]
            for arr in (p.value, p.m, p.v):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expect_vocab_hashes: dict[str, str] | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if off + hlen > len(raw):
        raise DataError(f"{path}: corrupt checkpoint (truncated header)")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen

    if expect_vocab_hashes is not None and header["vocab_hashes"] != expect_vocab_hashes:
        raise DataError(f"{path}: vocabulary hashes do not match this dataset")

    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        nbytes = size * 8
        if off + 3 * nbytes > len(raw):
            raise DataError(f"{path}: corrupt checkpoint (truncated tensor data)")
        arrs = []
        for _ in range(3):
            arrs.append(np.frombuffer(raw, dtype="<f8", count=size,
                                      offset=off).reshape(shape).copy())
            off += nbytes
        tensors[entry["id"]] = tuple(arrs)
    if off != len(raw):
        raise DataError(f"{path}: corrupt checkpoint (trailing bytes)")

    return Checkpoint(
        spec=ModelSpec.from_dict(header["model_spec"]),
        cfg=TrainConfig.from_dict(header["train_config"]),
        vocab_hashes=header["vocab_hashes"],
        epoch=int(header["epoch"]),
        seed=int(header["seed"]),
        adam_step=int(header["adam_step"]),
        tensors=tensors,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    """Rebuild a live model, including optimizer state, from a checkpoint."""
    store = ParamStore()
    for pid in sorted(ckpt.tensors):
        value, m, v = ckpt.tensors[pid]
        store.add(pid, value.copy())
        store[pid].m[:] = m
        store[pid].v[:] = v
    store.step = ckpt.adam_step
    rng = Rng(ckpt.seed)
    scorer = make_scorer(ckpt.spec)
    scorer.ensure_params(store, rng)
    model = Model(ckpt.spec, store, rng, scorer, seed=ckpt.seed)
    if ckpt.spec.kind == "mtkgnn":
        from .models import AttributeRegressor

        model.attr_head = AttributeRegressor(ckpt.spec, "head")
        model.attr_tail = AttributeRegressor(ckpt.spec, "tail")
        model.attr_head.ensure_params(store, rng)
        model.attr_tail.ensure_params(store, rng)
    return model
