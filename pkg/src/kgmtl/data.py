"""Knowledge-graph data model: vocabularies, triplets, splits, and files.

A graph is a set of relational triplets (head, relation, tail) plus a set
of attribute triplets (entity, attribute, value) whose values are
normalized per attribute into [0, 1]. Ingestion is TSV (UTF-8, no
header); a prepared dataset lives in a manifest directory of nine TSVs
plus a normalizer JSON, from which everything can be reloaded with
identical id assignments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng

CORRUPT_MAX_RETRIES = 1000


class DataError(ValueError):
    """Malformed input file, inconsistent vocabulary, or bad split."""


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


class Vocab:
    """An ordered string vocabulary with dense 0-based ids.

    Insertion order is the id order, so ids are deterministic given the
    input order and lookup round-trips both ways.
    """

    def __init__(self, kind: str, names=()):
        self.kind = kind
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        """Return the id for ``name``, registering it if new."""
        idx = self._index.get(name)
        if idx is None:
            idx = len(self._names)
            self._index[name] = idx
            self._names.append(name)
        return idx

    def id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown {self.kind} name {name!r}") from None

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.blake2b("\n".join(self._names).encode("utf-8"), digest_size=8)
        return h.hexdigest()


@dataclass(frozen=True)
class RelTriplet:
    head: int
    rel: int
    tail: int


@dataclass(frozen=True)
class AttrTriplet:
    entity: int
    attr: int
    value: float       # normalized, in [0, 1]
    raw_value: float   # original units


@dataclass(frozen=True)
class LabeledRelTriplet:
    triplet: RelTriplet
    label: int  # 1 iff drawn from the positive set


class AttributeNormalizer:
    """Per-attribute min/max scaling fitted on training values only.

    ``normalize`` maps raw values affinely onto [0, 1] and clamps anything
    outside the training range to the boundary. An attribute whose
    training values are all identical maps to the constant 0.5 and
    denormalizes back to that single value.
    """

    def __init__(self, stats: dict[int, tuple[float, float]]):
        for a, (lo, hi) in stats.items():
            if lo > hi:
                raise DataError(f"attribute {a}: min {lo} > max {hi}")
        self._stats = dict(stats)

    @classmethod
    def fit(cls, train_rows) -> "AttributeNormalizer":
        """Fit from (entity, attribute, raw_value) training rows."""
        stats: dict[int, tuple[float, float]] = {}
        for _, a, v in train_rows:
            lo, hi = stats.get(a, (v, v))
            stats[a] = (min(lo, v), max(hi, v))
        return cls(stats)

    def range(self, attr: int) -> tuple[float, float]:
        try:
            return self._stats[attr]
        except KeyError:
            raise DataError(f"no training statistics for attribute id {attr}") from None

    def normalize(self, attr: int, raw: float) -> float:
        lo, hi = self.range(attr)
        if hi == lo:
            return 0.5
        return min(1.0, max(0.0, (raw - lo) / (hi - lo)))

    def denormalize(self, attr: int, value: float) -> float:
        lo, hi = self.range(attr)
        if hi == lo:
            return lo
        return lo + value * (hi - lo)

    def attribute_ids(self) -> list[int]:
        return sorted(self._stats)

    def to_json(self, attr_vocab: Vocab) -> str:
        payload = {
            attr_vocab.name(a): {"min": lo, "max": hi}
            for a, (lo, hi) in sorted(self._stats.items())
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str, attr_vocab: Vocab) -> "AttributeNormalizer":
        payload = json.loads(text)
        stats = {attr_vocab.id(name): (d["min"], d["max"]) for name, d in payload.items()}
        return cls(stats)


@dataclass
class DatasetSplits:
    """Train/dev/test splits of both triplet kinds plus frozen negatives."""

    rel_train: list[RelTriplet] = field(default_factory=list)
    rel_dev: list[RelTriplet] = field(default_factory=list)
    rel_test: list[RelTriplet] = field(default_factory=list)
    attr_train: list[AttrTriplet] = field(default_factory=list)
    attr_dev: list[AttrTriplet] = field(default_factory=list)
    attr_test: list[AttrTriplet] = field(default_factory=list)
    neg_train: list[RelTriplet] = field(default_factory=list)
    neg_dev: list[RelTriplet] = field(default_factory=list)
    neg_test: list[RelTriplet] = field(default_factory=list)
    drop_counts: dict[str, int] = field(default_factory=dict)

    def rel(self, split: str) -> list[RelTriplet]:
        return getattr(self, f"rel_{split}")

    def attr(self, split: str) -> list[AttrTriplet]:
        return getattr(self, f"attr_{split}")

    def neg(self, split: str) -> list[RelTriplet]:
        return getattr(self, f"neg_{split}")

    def all_positive(self) -> set[RelTriplet]:
        return set(self.rel_train) | set(self.rel_dev) | set(self.rel_test)


@dataclass
class KnowledgeGraph:
    """Vocabularies plus prepared splits and the fitted normalizer."""

    entities: Vocab
    relations: Vocab
    attributes: Vocab
    splits: DatasetSplits
    normalizer: AttributeNormalizer

    def vocab_hashes(self) -> dict[str, str]:
        return {
            "entities": self.entities.content_hash(),
            "relations": self.relations.content_hash(),
            "attributes": self.attributes.content_hash(),
        }

    def sizes(self) -> dict[str, int]:
        return {
            "entities": len(self.entities),
            "relations": len(self.relations),
            "attributes": len(self.attributes),
        }

    def stats(self) -> dict[str, int]:
        s = self.splits
        return {
            "rel_triplets": len(s.rel_train) + len(s.rel_dev) + len(s.rel_test),
            "attr_triplets": len(s.attr_train) + len(s.attr_dev) + len(s.attr_test),
            "entities": len(self.entities),
            "relations": len(self.relations),
            "attributes": len(self.attributes),
        }


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------


def _parse_value(text: str, path, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad numeric value {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}:{lineno}: non-finite value {text!r}")
    return v


def parse_rel_file(path) -> list[tuple[str, str, str]]:
    """Read `head<TAB>relation<TAB>tail` rows."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def parse_attr_file(path) -> list[tuple[str, str, float]]:
    """Read `entity<TAB>attribute<TAB>value` rows; value is a decimal literal."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            rows.append((fields[0], fields[1], _parse_value(fields[2], path, lineno)))
    return rows


def load_triplets(rel_path, attr_path):
    """Parse both triplet files; returns (relational rows, attribute rows)."""
    for p in (rel_path, attr_path):
        if not Path(p).exists():
            raise DataError(f"input file not found: {p}")
    return parse_rel_file(rel_path), parse_attr_file(attr_path)


def build_vocabs(raw_rel, raw_attr) -> tuple[Vocab, Vocab, Vocab]:
    """First-appearance vocabularies over the raw rows."""
    ents = Vocab("entity")
    rels = Vocab("relation")
    attrs = Vocab("attribute")
    for h, r, t in raw_rel:
        ents.add(h)
        rels.add(r)
        ents.add(t)
    for e, a, _ in raw_attr:
        ents.add(e)
        attrs.add(a)
    return ents, rels, attrs


# ---------------------------------------------------------------------------
# Normalization + splitting
# ---------------------------------------------------------------------------


def fit_normalizer(train_attr_rows) -> AttributeNormalizer:
    """Fit min/max statistics from (entity, attr, raw) training rows."""
    return AttributeNormalizer.fit(train_attr_rows)


def _cut(n: int, ratios) -> tuple[int, int]:
    c1 = int(n * ratios[0])
    c2 = int(n * (ratios[0] + ratios[1]))
    return c1, c2


def split_dataset(rel: list[RelTriplet], attr_rows, ratios=(0.8, 0.1, 0.1),
                  seed: int = 0) -> tuple[DatasetSplits, AttributeNormalizer]:
    """Shuffle, split, and filter the dataset; fit the normalizer on train.

    ``attr_rows`` are raw (entity, attr, raw_value) triplets. Dev/test
    rows whose entity, relation, or attribute never occurs in the train
    portion are dropped and counted in ``drop_counts``. Negatives are not
    generated here; see :func:`add_negatives`.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise DataError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    rng = Rng(seed)
    rel = list(rel)
    attr_rows = list(attr_rows)

    rperm = rng.stream("split/rel").permutation(len(rel))
    aperm = rng.stream("split/attr").permutation(len(attr_rows))
    rc1, rc2 = _cut(len(rel), ratios)
    ac1, ac2 = _cut(len(attr_rows), ratios)
    rel_train = [rel[i] for i in rperm[:rc1]]
    rel_dev = [rel[i] for i in rperm[rc1:rc2]]
    rel_test = [rel[i] for i in rperm[rc2:]]
    attr_train = [attr_rows[i] for i in aperm[:ac1]]
    attr_dev = [attr_rows[i] for i in aperm[ac1:ac2]]
    attr_test = [attr_rows[i] for i in aperm[ac2:]]

    if not rel_train:
        raise DataError("empty training split")

    seen_ents = {t.head for t in rel_train} | {t.tail for t in rel_train}
    seen_ents |= {e for e, _, _ in attr_train}
    seen_rels = {t.rel for t in rel_train}
    seen_attrs = {a for _, a, _ in attr_train}

    drops: dict[str, int] = {}

    def keep_rel(rows, key):
        kept = [t for t in rows if t.head in seen_ents and t.tail in seen_ents and t.rel in seen_rels]
        drops[key] = len(rows) - len(kept)
        return kept

    def keep_attr(rows, key):
        kept = [(e, a, v) for e, a, v in rows if e in seen_ents and a in seen_attrs]
        drops[key] = len(rows) - len(kept)
        return kept

    rel_dev = keep_rel(rel_dev, "rel_dev")
    rel_test = keep_rel(rel_test, "rel_test")
    attr_dev = keep_attr(attr_dev, "attr_dev")
    attr_test = keep_attr(attr_test, "attr_test")

    normalizer = fit_normalizer(attr_train)

    def finalize(rows):
        return [AttrTriplet(e, a, normalizer.normalize(a, v), v) for e, a, v in rows]

    splits = DatasetSplits(
        rel_train=rel_train, rel_dev=rel_dev, rel_test=rel_test,
        attr_train=finalize(attr_train), attr_dev=finalize(attr_dev),
        attr_test=finalize(attr_test), drop_counts=drops,
    )
    return splits, normalizer


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------


def corrupt(positives: list[RelTriplet], full_positive_set: set[RelTriplet],
            n_entities: int, seed_or_gen) -> list[RelTriplet]:
    """One corrupted triplet per positive, 1:1 ratio.

    A coin flip picks the head or tail slot; the replacement entity is
    drawn uniformly and resampled until the corrupted triplet is outside
    ``full_positive_set``. Exceeding the retry bound means the graph is
    too dense to corrupt.
    """
    if n_entities < 2:
        raise DataError("need at least 2 entities to corrupt triplets")
    gen = seed_or_gen if isinstance(seed_or_gen, np.random.Generator) \
        else Rng(int(seed_or_gen)).stream("corrupt")
    out: list[RelTriplet] = []
    for pos in positives:
        corrupt_head = bool(gen.integers(0, 2))
        for _ in range(CORRUPT_MAX_RETRIES):
            e = int(gen.integers(0, n_entities))
            cand = RelTriplet(e, pos.rel, pos.tail) if corrupt_head else RelTriplet(pos.head, pos.rel, e)
            if cand not in full_positive_set:
                out.append(cand)
                break
        else:
            raise DataError(
                f"could not corrupt {pos} within {CORRUPT_MAX_RETRIES} tries; graph too dense")
    return out


def add_negatives(splits: DatasetSplits, n_entities: int, seed: int) -> None:
    """Fill frozen negative sets for all three splits in place."""
    full = splits.all_positive()
    rng = Rng(seed)
    splits.neg_train = corrupt(splits.rel_train, full, n_entities, rng.stream("corrupt/train"))
    splits.neg_dev = corrupt(splits.rel_dev, full, n_entities, rng.stream("corrupt/dev"))
    splits.neg_test = corrupt(splits.rel_test, full, n_entities, rng.stream("corrupt/test"))


def build_knowledge_graph(raw_rel, raw_attr, ratios=(0.8, 0.1, 0.1),
                          seed: int = 0) -> KnowledgeGraph:
    """Full preparation pipeline from raw name rows to a ready graph."""
    ents, rels, attrs = build_vocabs(raw_rel, raw_attr)
    rel_ids = [RelTriplet(ents.id(h), rels.id(r), ents.id(t)) for h, r, t in raw_rel]
    attr_ids = [(ents.id(e), attrs.id(a), v) for e, a, v in raw_attr]
    splits, normalizer = split_dataset(rel_ids, attr_ids, ratios, seed)
    add_negatives(splits, len(ents), seed)
    return KnowledgeGraph(ents, rels, attrs, splits, normalizer)


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelationRule:
    """Emission rule of one synthetic relation.

    A pair (head, tail) qualifies when the entity types match
    (src_type, dst_type) and the latent-scalar predicate holds:
    ``gt``:   z_head > z_tail + delta
    ``lt``:   z_tail > z_head + delta
    ``near``: |z_head - z_tail| < delta
    """

    src_type: int
    dst_type: int
    op: str
    delta: float


@dataclass(frozen=True)
class AttrRule:
    """Affine map raw = intercept + slope * z, gated by entity types."""

    slope: float
    intercept: float
    allowed_types: tuple[int, ...]


@dataclass
class SyntheticConfig:
    n_entities: int
    n_relations: int
    n_attributes: int
    noise: float
    seed: int
    n_types: int = 4
    max_per_relation: int = 3000
    attr_density: float = 0.75

    def __post_init__(self):
        if min(self.n_entities, self.n_relations, self.n_attributes) < 2:
            raise DataError("synthetic generator needs at least 2 of each element kind")
        if self.noise < 0:
            raise DataError("noise must be non-negative")


@dataclass
class SyntheticKG:
    rel_rows: list[tuple[str, str, str]]
    attr_rows: list[tuple[str, str, float]]
    z: np.ndarray
    types: np.ndarray
    relation_rules: list[RelationRule]
    attr_rules: list[AttrRule]


def _predicate(rule: RelationRule, zh: np.ndarray, zt: np.ndarray) -> np.ndarray:
    if rule.op == "gt":
        return zh > zt + rule.delta
    if rule.op == "lt":
        return zt > zh + rule.delta
    if rule.op == "near":
        return np.abs(zh - zt) < rule.delta
    raise DataError(f"unknown relation rule op {rule.op!r}")


def emit_relation(z: np.ndarray, types: np.ndarray, rule: RelationRule,
                  cap: int | None = None,
                  gen: np.random.Generator | None = None) -> list[tuple[int, int]]:
    """All (head, tail) entity-id pairs a rule emits, optionally capped.

    Self-pairs are excluded. When more than ``cap`` pairs qualify, a
    uniform subsample of exactly ``cap`` is kept (requires ``gen``).
    """
    heads = np.flatnonzero(types == rule.src_type)
    tails = np.flatnonzero(types == rule.dst_type)
    if heads.size == 0 or tails.size == 0:
        return []
    hh, tt = np.meshgrid(heads, tails, indexing="ij")
    hh = hh.ravel()
    tt = tt.ravel()
    ok = (hh != tt) & _predicate(rule, z[hh], z[tt])
    hh, tt = hh[ok], tt[ok]
    if cap is not None and hh.size > cap:
        keep = gen.choice(hh.size, size=cap, replace=False)
        keep.sort()
        hh, tt = hh[keep], tt[keep]
    return list(zip(hh.tolist(), tt.tolist()))


def gen_synthetic(cfg: SyntheticConfig) -> SyntheticKG:
    """Seeded synthetic knowledge graph with informative attributes.

    Every entity carries a latent scalar z ~ U[0,1] and a latent type.
    Relations are emitted by type-compatibility plus a threshold predicate
    on (z_head, z_tail); attribute raw values are affine in z with
    Gaussian noise of ``noise`` times the attribute's slope magnitude.
    Attribute values therefore predict exactly the quantity the relation
    rules test, which is what makes the attribute task informative for
    the relational one.
    """
    rng = Rng(cfg.seed)
    z = rng.stream("synth/z").random(cfg.n_entities)
    types = rng.stream("synth/types").integers(0, cfg.n_types, size=cfg.n_entities)

    gen_rules = rng.stream("synth/rules")
    ops = ("gt", "lt", "near")
    relation_rules = []
    for _ in range(cfg.n_relations):
        src = int(gen_rules.integers(0, cfg.n_types))
        dst = int(gen_rules.integers(0, cfg.n_types))
        op = ops[int(gen_rules.integers(0, len(ops)))]
        delta = float(gen_rules.uniform(0.05, 0.2)) if op == "near" \
            else float(gen_rules.uniform(0.1, 0.35))
        relation_rules.append(RelationRule(src, dst, op, delta))

    attr_rules = []
    for _ in range(cfg.n_attributes):
        slope = float(gen_rules.uniform(50.0, 150.0)) * (1.0 if gen_rules.random() < 0.5 else -1.0)
        intercept = float(gen_rules.uniform(-10.0, 10.0))
        k = 1 + int(gen_rules.integers(0, 2))
        allowed = tuple(sorted(int(t) for t in gen_rules.choice(cfg.n_types, size=k, replace=False)))
        attr_rules.append(AttrRule(slope, intercept, allowed))

    ename = [f"e{i}" for i in range(cfg.n_entities)]
    rel_rows: list[tuple[str, str, str]] = []
    for r, rule in enumerate(relation_rules):
        pairs = emit_relation(z, types, rule, cap=cfg.max_per_relation,
                              gen=rng.stream(f"synth/rel/{r}"))
        rel_rows.extend((ename[h], f"r{r}", ename[t]) for h, t in pairs)

    attr_rows: list[tuple[str, str, float]] = []
    for a, ar in enumerate(attr_rules):
        gen_a = rng.stream(f"synth/attr/{a}")
        eligible = np.flatnonzero(np.isin(types, ar.allowed_types))
        include = gen_a.random(eligible.size) < cfg.attr_density
        chosen = eligible[include]
        noise = gen_a.normal(0.0, 1.0, size=chosen.size) * cfg.noise * abs(ar.slope)
        raws = ar.intercept + ar.slope * z[chosen] + noise
        attr_rows.extend((ename[e], f"a{a}", float(v)) for e, v in zip(chosen.tolist(), raws))

    return SyntheticKG(rel_rows, attr_rows, z, types, relation_rules, attr_rules)


# ---------------------------------------------------------------------------
# Split manifest IO
# ---------------------------------------------------------------------------

_MANIFEST_SPLITS = ("train", "dev", "test")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_triplet_files(rel_path, attr_path, rel_rows, attr_rows) -> None:
    """Write raw (unsplit) triplet TSVs, e.g. from the synthetic generator."""
    with open(rel_path, "w", encoding="utf-8") as f:
        for h, r, t in rel_rows:
            f.write(f"{h}\t{r}\t{t}\n")
    with open(attr_path, "w", encoding="utf-8") as f:
        for e, a, v in attr_rows:
            f.write(f"{e}\t{a}\t{_fmt(v)}\n")


def write_manifest(out_dir, kg: KnowledgeGraph) -> None:
    """Write the split manifest: nine TSVs, normalizer.json, vocab files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ents, rels, attrs = kg.entities, kg.relations, kg.attributes

    def write_rel(path, rows):
        with open(path, "w", encoding="utf-8") as f:
            for t in rows:
                f.write(f"{ents.name(t.head)}\t{rels.name(t.rel)}\t{ents.name(t.tail)}\n")

    for split in _MANIFEST_SPLITS:
        write_rel(out / f"rel_{split}.tsv", kg.splits.rel(split))
        write_rel(out / f"neg_{split}.tsv", kg.splits.neg(split))
        with open(out / f"attr_{split}.tsv", "w", encoding="utf-8") as f:
            for t in kg.splits.attr(split):
                f.write(f"{ents.name(t.entity)}\t{attrs.name(t.attr)}\t{_fmt(t.raw_value)}\n")

    (out / "normalizer.json").write_text(kg.normalizer.to_json(attrs), encoding="utf-8")
    for fname, vocab in (("entities.tsv", ents), ("relations.tsv", rels), ("attributes.tsv", attrs)):
        (out / fname).write_text("".join(n + "\n" for n in vocab.names), encoding="utf-8")


def load_manifest(manifest_dir) -> KnowledgeGraph:
    """Reload a manifest written by :func:`write_manifest`.

    Vocabulary files pin the id order, so reloading reproduces the exact
    id assignments of the original preparation run.
    """
    d = Path(manifest_dir)
    if not d.is_dir():
        raise DataError(f"manifest directory not found: {d}")
    for required in ("rel_train.tsv", "normalizer.json", "entities.tsv"):
        if not (d / required).exists():
            raise DataError(f"manifest is missing {required}")

    def read_vocab(fname, kind):
        lines = (d / fname).read_text(encoding="utf-8").splitlines()
        return Vocab(kind, lines)

    ents = read_vocab("entities.tsv", "entity")
    rels = read_vocab("relations.tsv", "relation")
    attrs = read_vocab("attributes.tsv", "attribute")
    normalizer = AttributeNormalizer.from_json((d / "normalizer.json").read_text(encoding="utf-8"), attrs)

    def rel_list(path):
        return [RelTriplet(ents.id(h), rels.id(r), ents.id(t)) for h, r, t in parse_rel_file(path)]

    def attr_list(path):
        rows = parse_attr_file(path)
        out = []
        for e, a, raw in rows:
            aid = attrs.id(a)
            out.append(AttrTriplet(ents.id(e), aid, normalizer.normalize(aid, raw), raw))
        return out

    splits = DatasetSplits()
    for split in _MANIFEST_SPLITS:
        setattr(splits, f"rel_{split}", rel_list(d / f"rel_{split}.tsv"))
        setattr(splits, f"neg_{split}", rel_list(d / f"neg_{split}.tsv"))
        setattr(splits, f"attr_{split}", attr_list(d / f"attr_{split}.tsv"))
    return KnowledgeGraph(ents, rels, attrs, splits, normalizer)
