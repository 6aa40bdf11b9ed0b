"""Command-line entry point: prepare, train, eval, export, neighbors, bench.

Every command reads its parameters from defaults, then an optional JSON
config file (``--config``), then explicit flags, in that order of
precedence. The fully resolved configuration is echoed to the output
directory as ``config.json`` so any run can be reproduced from its
artifacts alone.

Output layout: training-style commands write into ``<root>/<run-id>/``
where the root comes from ``--out``, the ``KGMTL_OUT`` environment
variable, or ``./out``. A run directory holds ``config.json`` plus,
depending on the command, ``checkpoint.bin``, ``log.jsonl``,
``report.json``, and ``results.csv``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or inconsistent input files), 3 numeric failure during
training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import difflib
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, KnowledgeGraph, load_manifest, load_triplets, build_knowledge_graph, write_manifest
from .evaluation import (
    EvalReport,
    ProbeConfig,
    attribute_prediction_report,
    baseline_predictors,
    classification_report,
    nearest_attributes,
    probe_linear_regression,
    regression_metrics,
)
from .models import MODEL_KINDS, TRANSLATIONAL_KINDS, ModelSpec
from .numerics import NumericError
from .training import TrainConfig, load_checkpoint, model_from_checkpoint, save_checkpoint, train_model

OUT_ROOT_ENV = "KGMTL_OUT"

_KIND_ALIASES = {
    "mt-kgnn": "mtkgnn",
    "mt_kgnn": "mtkgnn",
    "er-mlp": "er_mlp",
    "r-guess": "r_guess",
    "r-init": "r_init",
}

_PSEUDO_KINDS = ("r_guess", "r_init")


class UsageError(Exception):
    """Bad flags, bad config files, or contradictory requests."""


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """A command name plus its fully resolved parameter bundle.

    ``params`` always contains every parameter the command understands,
    defaults applied, so serializing it captures the whole run.
    """

    command: str
    params: dict

    def to_dict(self) -> dict:
        return {"command": self.command, **self.params}

    @classmethod
    def resolve(cls, command: str, defaults: dict, config_path,
                flags: dict) -> "RunConfig":
        """Merge defaults, then config-file values, then explicit flags."""
        params = dict(defaults)
        if config_path:
            try:
                payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except OSError as e:
                raise UsageError(f"cannot read config file: {e}") from None
            except json.JSONDecodeError as e:
                raise UsageError(f"{config_path}: invalid JSON ({e})") from None
            if not isinstance(payload, dict):
                raise UsageError(f"{config_path}: config must be a JSON object")
            file_command = payload.pop("command", command)
            if file_command != command:
                raise UsageError(
                    f"{config_path}: config is for command {file_command!r}, "
                    f"not {command!r}")
            unknown = sorted(set(payload) - set(defaults))
            if unknown:
                raise UsageError(f"{config_path}: unknown keys {unknown}")
            params.update(payload)
        params.update({k: v for k, v in flags.items() if v is not None})
        return cls(command, params)


def _field_defaults(cls, names) -> dict:
    """Pull default values for ``names`` off a dataclass definition."""
    out = {}
    for f in dataclasses.fields(cls):
        if f.name not in names:
            continue
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


_MODEL_FIELD_NAMES = ("hidden_dim", "attr_hidden_dim", "dropout", "ntn_slices",
                      "distance", "init")
_TRAIN_FIELD_NAMES = ("batch_size", "iterations", "lr", "ast_k", "use_rel",
                      "use_at", "use_ast", "epoch_mode", "margin", "seed")


def _train_defaults() -> dict:
    params = {"manifest": None, "model": None, "dim": 50,
              "run_id": None, "out": None}
    params.update(_field_defaults(ModelSpec, _MODEL_FIELD_NAMES))
    params.update(_field_defaults(TrainConfig, _TRAIN_FIELD_NAMES))
    params["margins"] = list(_field_defaults(TrainConfig, ("margins",))["margins"])
    return params


def _probe_defaults() -> dict:
    d = _field_defaults(ProbeConfig, ("epochs", "batch_size", "clip"))
    grid = _field_defaults(ProbeConfig, ("lr_grid",))["lr_grid"]
    return {"probe_epochs": d["epochs"], "probe_batch_size": d["batch_size"],
            "probe_clip": d["clip"], "probe_lr_grid": list(grid)}


def _prepare_defaults() -> dict:
    return {"rel": None, "attr": None, "out": None, "seed": 0,
            "ratios": [0.8, 0.1, 0.1]}


def _eval_defaults() -> dict:
    params = {"checkpoint": None, "manifest": None, "task": "triplet",
              "split": "test", "side": "mean", "probe": False,
              "denormalize": False, "seed": 0, "run_id": None, "out": None}
    params.update(_probe_defaults())
    return params


def _bench_defaults() -> dict:
    params = _train_defaults()
    del params["model"], params["seed"]
    params.update(_probe_defaults())
    params.update({"models": None, "seeds": [0], "split": "test",
                   "side": "mean", "denormalize": False})
    return params


def _normalize_kind(name: str) -> str:
    if not name:
        raise UsageError("a model kind is required (--model)")
    kind = name.strip().lower().replace("-", "_")
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in MODEL_KINDS + _PSEUDO_KINDS:
        raise UsageError(
            f"unknown model {name!r}; expected one of "
            f"{', '.join(MODEL_KINDS + _PSEUDO_KINDS)}")
    return kind


def _require(params: dict, *names: str) -> None:
    for n in names:
        if params.get(n) in (None, ""):
            raise UsageError(f"missing required parameter --{n.replace('_', '-')}")


def _model_spec(params: dict, kind: str, kg: KnowledgeGraph) -> ModelSpec:
    sizes = kg.sizes()
    dim = int(params["dim"])
    return ModelSpec(
        kind=kind,
        n_entities=sizes["entities"],
        n_relations=sizes["relations"],
        n_attributes=sizes["attributes"],
        entity_dim=dim,
        relation_dim=dim,
        attr_dim=dim,
        hidden_dim=int(params["hidden_dim"]),
        attr_hidden_dim=int(params["attr_hidden_dim"]),
        dropout=float(params["dropout"]),
        ntn_slices=int(params["ntn_slices"]),
        distance=params["distance"],
        init=params["init"],
    )


def _train_config(params: dict, spec: ModelSpec, seed: int) -> TrainConfig:
    margin = params["margin"]
    return TrainConfig(
        model=spec,
        batch_size=int(params["batch_size"]),
        iterations=int(params["iterations"]),
        lr=float(params["lr"]),
        ast_k=int(params["ast_k"]),
        use_rel=bool(params["use_rel"]),
        use_at=bool(params["use_at"]),
        use_ast=bool(params["use_ast"]),
        seed=int(seed),
        epoch_mode=params["epoch_mode"],
        margin=None if margin is None else float(margin),
        margins=tuple(float(m) for m in params["margins"]),
    )


def _probe_config(params: dict) -> ProbeConfig:
    return ProbeConfig(
        lr_grid=tuple(float(lr) for lr in params["probe_lr_grid"]),
        epochs=int(params["probe_epochs"]),
        batch_size=int(params["probe_batch_size"]),
        clip=bool(params["probe_clip"]),
    )


# ---------------------------------------------------------------------------
# Artifact plumbing
# ---------------------------------------------------------------------------


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "out"))


def _run_dir(params: dict, default_id: str) -> Path:
    if params.get("out"):
        d = Path(params["out"])
    else:
        d = _out_root() / (params.get("run_id") or default_id)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _echo_config(run_dir: Path, cfg: RunConfig) -> None:
    _write_json(run_dir / "config.json", cfg.to_dict())


def _print_report(report: EvalReport) -> None:
    rows = [("task", report.task), ("split", report.split),
            ("model", report.model_id), ("seed", report.seed)]
    if report.threshold is not None:
        rows.append(("threshold", f"{report.threshold:.6f}"))
    for k in sorted(report.metrics):
        rows.append((k, f"{report.metrics[k]:.6f}"))
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    for note in report.notes:
        print(f"note: {note}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_prepare(cfg: RunConfig) -> int:
    params = cfg.params
    _require(params, "rel", "attr", "out")
    ratios = tuple(float(r) for r in params["ratios"])
    raw_rel, raw_attr = load_triplets(params["rel"], params["attr"])
    kg = build_knowledge_graph(raw_rel, raw_attr, ratios=ratios,
                               seed=int(params["seed"]))
    out = Path(params["out"])
    write_manifest(out, kg)
    _echo_config(out, cfg)

    stats = kg.stats()
    width = max(len(k) for k in stats)
    for k in ("entities", "relations", "attributes", "rel_triplets",
              "attr_triplets"):
        print(f"{k:<{width}}  {stats[k]}")
    drops = kg.splits.drop_counts
    dropped = {k: v for k, v in drops.items() if v}
    if dropped:
        print("dropped (entity unseen in train): "
              + ", ".join(f"{k}={v}" for k, v in sorted(dropped.items())))
    print(f"wrote manifest to {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    params = cfg.params
    _require(params, "manifest", "model")
    kind = _normalize_kind(params["model"])
    if kind in _PSEUDO_KINDS:
        raise UsageError(f"{kind} is a reference predictor, not a trainable "
                         "model; use it with the bench command")
    params["model"] = kind
    kg = load_manifest(params["manifest"])
    spec = _model_spec(params, kind, kg)
    train_cfg = _train_config(params, spec, int(params["seed"]))

    run_dir = _run_dir(params, f"train-{kind}-s{params['seed']}")
    _echo_config(run_dir, cfg)
    result = train_model(kg, train_cfg)

    save_checkpoint(run_dir / "checkpoint.bin", result.model, train_cfg,
                    kg.vocab_hashes(), epoch=train_cfg.iterations)
    with open(run_dir / "log.jsonl", "w", encoding="utf-8") as f:
        for entry in result.log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    if result.sweep:
        _write_json(run_dir / "sweep.json",
                    {"margin": result.margin, "candidates": result.sweep})
        print(f"margin {result.margin} selected from "
              f"{[c['margin'] for c in result.sweep]} by dev accuracy")
    if result.log:
        last = result.log[-1]
        print(f"epoch {last['epoch']}: loss_rel {last['loss_rel']:.6f} "
              f"loss_attr {last['loss_attr']:.6f}")
    print(f"wrote {run_dir / 'checkpoint.bin'}")
    return 0


def _load_model(params: dict, kg: KnowledgeGraph):
    ckpt = load_checkpoint(params["checkpoint"],
                           expect_vocab_hashes=kg.vocab_hashes())
    return model_from_checkpoint(ckpt), ckpt


def cmd_eval(cfg: RunConfig) -> int:
    params = cfg.params
    _require(params, "checkpoint", "manifest")
    kg = load_manifest(params["manifest"])
    model, ckpt = _load_model(params, kg)
    task, split, seed = params["task"], params["split"], int(params["seed"])
    normalizer = kg.normalizer if params["denormalize"] else None

    if task == "triplet":
        report = classification_report(model, kg.splits, split=split, seed=seed)
    elif task == "attribute":
        if params["probe"]:
            embeddings = model.store.value("emb/entity")
            report = probe_linear_regression(
                embeddings, kg.splits.attr_train, kg.splits.attr_dev,
                kg.splits.attr(split), cfg=_probe_config(params), seed=seed,
                model_id=f"{model.spec.kind}+probe", normalizer=normalizer)
            report.split = split
        elif model.is_multitask:
            report = attribute_prediction_report(
                model, kg.splits, split=split, side=params["side"], seed=seed,
                normalizer=normalizer)
        else:
            raise UsageError(
                f"model kind {model.spec.kind!r} has no attribute branch; "
                "pass --probe to evaluate its frozen embeddings with a "
                "linear regressor")
    else:
        raise UsageError(f"unknown task {params['task']!r}; expected "
                         "'triplet' or 'attribute'")

    probe_tag = "-probe" if params["probe"] else ""
    run_dir = _run_dir(params,
                       f"eval-{model.spec.kind}-{task}{probe_tag}-{split}-s{seed}")
    _echo_config(run_dir, cfg)
    _write_json(run_dir / "report.json", report.to_dict())
    _print_report(report)
    print(f"wrote {run_dir / 'report.json'}")
    return 0


_EXPORT_TABLES = {
    "entity": ("emb/entity", "entities"),
    "relation": ("emb/relation", "relations"),
    "attribute": ("emb/attribute", "attributes"),
}


def cmd_export(cfg: RunConfig) -> int:
    params = cfg.params
    _require(params, "checkpoint", "manifest", "path")
    kg = load_manifest(params["manifest"])
    model, _ = _load_model(params, kg)
    pid, vocab_name = _EXPORT_TABLES[params["what"]]
    if pid not in model.store.ids():
        raise UsageError(f"this model has no {params['what']} embeddings")
    table = model.store.value(pid)
    names = getattr(kg, vocab_name).names
    if len(names) != table.shape[0]:
        raise DataError(f"{vocab_name} vocabulary size {len(names)} does not "
                        f"match embedding rows {table.shape[0]}")
    path = Path(params["path"])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for name, row in zip(names, table):
            f.write(name + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {table.shape[0]} x {table.shape[1]} {params['what']} "
          f"embeddings to {path}")
    return 0


def cmd_neighbors(cfg: RunConfig) -> int:
    params = cfg.params
    _require(params, "checkpoint", "manifest", "attribute")
    kg = load_manifest(params["manifest"])
    model, _ = _load_model(params, kg)
    if "emb/attribute" not in model.store.ids():
        raise UsageError("this model has no attribute embeddings")
    name = params["attribute"]
    if name not in kg.attributes:
        close = difflib.get_close_matches(name, kg.attributes.names, n=3,
                                          cutoff=0.4)
        hint = f"; close matches: {', '.join(close)}" if close else ""
        raise UsageError(f"unknown attribute {name!r}{hint}")
    table = model.store.value("emb/attribute")
    k = min(int(params["k"]), len(kg.attributes) - 1)
    if k < 1:
        raise UsageError("need at least two attributes to query neighbors")
    print(f"# nearest {k} attributes to {name}")
    for idx, sim in nearest_attributes(kg.attributes.id(name), k, table):
        print(f"{kg.attributes.name(idx)}\t{sim:.4f}")
    return 0


_BENCH_METRICS = ("accuracy", "auc", "rmse", "mae", "r2")


def _bench_cell(kind: str, seed: int, params: dict, kg: KnowledgeGraph) -> dict:
    """Train and evaluate one (model, seed) cell of the benchmark grid."""
    cell: dict = {"model": kind, "seed": seed}
    split = params["split"]
    normalizer = kg.normalizer if params["denormalize"] else None
    has_attrs = bool(kg.splits.attr(split)) and bool(kg.splits.attr_train)

    if kind == "r_guess":
        rows = kg.splits.attr(split)
        if not rows:
            raise DataError(f"no attribute triplets in split {split!r}")
        y = np.array([t.value for t in rows])
        pred = baseline_predictors("r_guess", len(rows), seed=seed)
        if normalizer is not None:
            y = np.array([t.raw_value for t in rows])
            pred = np.array([normalizer.denormalize(t.attr, float(p))
                             for t, p in zip(rows, pred)])
        cell.update(regression_metrics(y, pred))
        return cell

    if kind == "r_init":
        emb = baseline_predictors("r_init", (len(kg.entities), int(params["dim"])),
                                  seed=seed)
        report = probe_linear_regression(
            emb, kg.splits.attr_train, kg.splits.attr_dev,
            kg.splits.attr(split), cfg=_probe_config(params), seed=seed,
            model_id="r_init+probe", normalizer=normalizer)
        cell.update(report.metrics)
        return cell

    spec = _model_spec(params, kind, kg)
    train_cfg = _train_config(params, spec, seed)
    result = train_model(kg, train_cfg)
    rel_report = classification_report(result.model, kg.splits, split=split,
                                       seed=seed)
    cell["accuracy"] = rel_report.metrics["accuracy"]
    cell["auc"] = rel_report.metrics["auc"]
    if has_attrs:
        if result.model.is_multitask:
            attr_report = attribute_prediction_report(
                result.model, kg.splits, split=split, side=params["side"],
                seed=seed, normalizer=normalizer)
        else:
            attr_report = probe_linear_regression(
                result.model.store.value("emb/entity"), kg.splits.attr_train,
                kg.splits.attr_dev, kg.splits.attr(split),
                cfg=_probe_config(params), seed=seed,
                model_id=f"{kind}+probe", normalizer=normalizer)
        cell.update(attr_report.metrics)
    return cell


def _aggregate_cells(kinds, cells) -> dict:
    agg: dict = {}
    for kind in kinds:
        rows = [c for c in cells if c["model"] == kind and "error" not in c]
        agg[kind] = {}
        for metric in _BENCH_METRICS:
            vals = [c[metric] for c in rows if metric in c]
            if not vals:
                continue
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            agg[kind][metric] = {"mean": float(np.mean(vals)), "std": std,
                                 "n": len(vals)}
    return agg


def _bench_table(kinds, agg, cells) -> str:
    headers = ["model", *_BENCH_METRICS, "errors"]
    lines = []
    for kind in kinds:
        n_err = sum(1 for c in cells if c["model"] == kind and "error" in c)
        row = [kind]
        for metric in _BENCH_METRICS:
            stat = agg[kind].get(metric)
            row.append("-" if stat is None
                       else f"{stat['mean']:.4f}±{stat['std']:.4f}")
        row.append(str(n_err))
        lines.append(row)
    widths = [max(len(h), *(len(r[i]) for r in lines)) if lines else len(h)
              for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*headers)]
    out += [fmt.format(*row) for row in lines]
    return "\n".join(out)


def cmd_bench(cfg: RunConfig) -> int:
    params = cfg.params
    _require(params, "manifest", "models")
    kinds = [_normalize_kind(m) for m in params["models"]]
    params["models"] = kinds
    seeds = [int(s) for s in params["seeds"]]
    if not seeds:
        raise UsageError("at least one seed is required")
    kg = load_manifest(params["manifest"])

    cells = []
    for kind in kinds:
        for seed in seeds:
            try:
                cells.append(_bench_cell(kind, seed, params, kg))
            except Exception as e:  # record the failure, keep the grid going
                cells.append({"model": kind, "seed": seed,
                              "error": f"{type(e).__name__}: {e}"})

    agg = _aggregate_cells(kinds, cells)
    run_dir = _run_dir(params, "bench-" + "-".join(kinds) + "-s"
                       + "-".join(str(s) for s in seeds))
    _echo_config(run_dir, cfg)
    _write_json(run_dir / "report.json",
                {"models": kinds, "seeds": seeds, "split": params["split"],
                 "cells": cells, "aggregate": agg})

    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["model"]
    for metric in _BENCH_METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    header.append("errors")
    writer.writerow(header)
    for kind in kinds:
        row = [kind]
        for metric in _BENCH_METRICS:
            stat = agg[kind].get(metric)
            row += ["", ""] if stat is None else [repr(stat["mean"]), repr(stat["std"])]
        row.append(sum(1 for c in cells if c["model"] == kind and "error" in c))
        writer.writerow(row)
    (run_dir / "results.csv").write_text(buf.getvalue(), encoding="utf-8")

    print(_bench_table(kinds, agg, cells))
    for c in cells:
        if "error" in c:
            print(f"failed: model={c['model']} seed={c['seed']}: {c['error']}",
                  file=sys.stderr)
    print(f"wrote {run_dir / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems via UsageError."""

    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, help="embedding dimension (default 50)")
    p.add_argument("--hidden-dim", type=int,
                   help="relational hidden layer width (default 100)")
    p.add_argument("--attr-hidden-dim", type=int,
                   help="attribute hidden layer width (default 100)")
    p.add_argument("--dropout", type=float,
                   help="hidden-layer dropout rate (default 0.5)")
    p.add_argument("--ntn-slices", type=int,
                   help="tensor slices for the ntn kind (default 4)")
    p.add_argument("--distance", choices=("l1", "l2"),
                   help="translational distance (default l2)")
    p.add_argument("--init", choices=("scaled", "paper"),
                   help="weight initialization scheme (default scaled)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int, help="triplets per batch (default 500)")
    p.add_argument("--iterations", type=int, help="training epochs (default 500)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--ast-k", type=int,
                   help="attribute-specific updates per epoch (default 4)")
    p.add_argument("--no-relnet", dest="use_rel", action="store_false",
                   default=None, help="drop the relational task (attribute "
                   "branch only; multi-task kind only)")
    p.add_argument("--no-at", dest="use_at", action="store_false", default=None,
                   help="drop the per-batch attribute update")
    p.add_argument("--no-ast", dest="use_ast", action="store_false", default=None,
                   help="drop the attribute-specific updates")
    p.add_argument("--epoch-mode", choices=("single_batch", "sweep"),
                   help="one batch per epoch (default) or a full pass")
    p.add_argument("--margin", type=float,
                   help="fixed hinge margin for translational kinds")
    p.add_argument("--margin-sweep", action="store_true", default=None,
                   help="sweep margins and keep the best dev accuracy "
                   "(default when --margin is absent)")
    p.add_argument("--margins", type=float, nargs="+",
                   help="candidate margins for the sweep (default 1 2 4)")


def _add_probe_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--probe-lr-grid", type=float, nargs="+",
                   help="probe learning-rate grid (default 1e-2 1e-3 1e-4)")
    p.add_argument("--probe-epochs", type=int, help="probe epochs (default 25)")
    p.add_argument("--probe-batch-size", type=int,
                   help="probe minibatch size (default 32)")
    p.add_argument("--probe-clip", action="store_true", default=None,
                   help="clip probe predictions to [0, 1]")


def _add_out_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-id", help="run directory name under the output root")
    p.add_argument("--out", help="explicit run directory (overrides --run-id "
                   f"and ${OUT_ROOT_ENV})")
    p.add_argument("--config", help="JSON file of parameter defaults; "
                   "explicit flags override it")


def build_parser() -> _Parser:
    parser = _Parser(prog="kgmtl",
                     description="Knowledge-graph embeddings with joint "
                                 "relational and attribute training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split raw triplet files into a manifest")
    p.add_argument("--rel", help="relational triplet TSV (head rel tail)")
    p.add_argument("--attr", help="attribute triplet TSV (entity attr value); "
                   "required, may be empty")
    p.add_argument("--out", help="manifest output directory")
    p.add_argument("--seed", type=int, help="shuffle seed (default 0)")
    p.add_argument("--ratios", type=float, nargs=3,
                   metavar=("TRAIN", "DEV", "TEST"),
                   help="split fractions (default 0.8 0.1 0.1)")
    p.add_argument("--config", help="JSON file of parameter defaults")
    p.set_defaults(func=cmd_prepare, defaults=_prepare_defaults)

    p = sub.add_parser("train", help="train one model on a manifest")
    p.add_argument("--manifest", help="manifest directory from prepare")
    p.add_argument("--model", help="model kind: " + ", ".join(MODEL_KINDS))
    p.add_argument("--seed", type=int, help="training seed (default 0)")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=cmd_train, defaults=_train_defaults)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", help="checkpoint.bin from train")
    p.add_argument("--manifest", help="manifest directory from prepare")
    p.add_argument("--task", choices=("triplet", "attribute"),
                   help="triplet classification or attribute regression")
    p.add_argument("--split", choices=("train", "dev", "test"),
                   help="evaluation split (default test)")
    p.add_argument("--side", choices=("head", "tail", "mean"),
                   help="attribute branch side for direct prediction")
    p.add_argument("--probe", action="store_true", default=None,
                   help="regress attributes from frozen entity embeddings")
    p.add_argument("--denormalize", action="store_true", default=None,
                   help="report attribute metrics on the raw value scale")
    p.add_argument("--seed", type=int, help="probe/report seed (default 0)")
    _add_probe_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=cmd_eval, defaults=_eval_defaults)

    p = sub.add_parser("export", help="write an embedding table as TSV")
    p.add_argument("--checkpoint", help="checkpoint.bin from train")
    p.add_argument("--manifest", help="manifest directory (provides names)")
    p.add_argument("--what", choices=tuple(_EXPORT_TABLES), default="entity",
                   help="which embedding table (default entity)")
    p.add_argument("--path", help="output TSV path")
    p.add_argument("--config", help="JSON file of parameter defaults")
    p.set_defaults(func=cmd_export,
                   defaults=lambda: {"checkpoint": None, "manifest": None,
                                     "what": "entity", "path": None})

    p = sub.add_parser("neighbors",
                       help="print nearest attributes by embedding cosine")
    p.add_argument("--checkpoint", help="checkpoint.bin from train")
    p.add_argument("--manifest", help="manifest directory (provides names)")
    p.add_argument("--attribute", help="query attribute name")
    p.add_argument("-k", type=int, help="neighbor count (default 5)")
    p.add_argument("--config", help="JSON file of parameter defaults")
    p.set_defaults(func=cmd_neighbors,
                   defaults=lambda: {"checkpoint": None, "manifest": None,
                                     "attribute": None, "k": 5})

    p = sub.add_parser("bench",
                       help="train and evaluate a model grid over seeds")
    p.add_argument("--manifest", help="manifest directory from prepare")
    p.add_argument("--models", nargs="+",
                   help="model kinds; also accepts r_guess and r_init")
    p.add_argument("--seeds", type=int, nargs="+", help="seed list (default 0)")
    p.add_argument("--split", choices=("train", "dev", "test"),
                   help="evaluation split (default test)")
    p.add_argument("--side", choices=("head", "tail", "mean"),
                   help="attribute branch side for direct prediction")
    p.add_argument("--denormalize", action="store_true", default=None,
                   help="report attribute metrics on the raw value scale")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_probe_flags(p)
    _add_out_flags(p)
    p.set_defaults(func=cmd_bench, defaults=_bench_defaults)

    return parser


_NON_PARAM_KEYS = ("command", "func", "defaults", "config", "margin_sweep")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        flags = {k: v for k, v in vars(ns).items() if k not in _NON_PARAM_KEYS}
        cfg = RunConfig.resolve(ns.command, ns.defaults(),
                                getattr(ns, "config", None), flags)
        if getattr(ns, "margin_sweep", None):
            if ns.margin is not None:
                raise UsageError("--margin and --margin-sweep are mutually "
                                 "exclusive")
            cfg.params["margin"] = None
        return ns.func(cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
