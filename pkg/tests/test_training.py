"""Training-loop tests: attribute batch construction, determinism, the
single-task reduction, norm projection, margin sweeps, and checkpoints."""

import numpy as np
import pytest

from kgmtl.data import (
    AttrTriplet,
    RelTriplet,
    SyntheticConfig,
    build_knowledge_graph,
    gen_synthetic,
)
from kgmtl.models import ModelSpec, build_model
from kgmtl.numerics import NumericError, Rng
from kgmtl.training import (
    AttrBatch,
    Checkpoint,
    TrainConfig,
    _train_pointwise,
    build_attr_index,
    build_attributes,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train_baseline,
    train_mtkgnn,
    train_model,
)


@pytest.fixture(scope="module")
def toy_kg():
    g = gen_synthetic(SyntheticConfig(n_entities=60, n_relations=3, n_attributes=3,
                                      noise=0.05, seed=11, max_per_relation=400))
    return build_knowledge_graph(g.rel_rows, g.attr_rows, seed=11)


def spec_for(kg, kind, **kw):
    base = dict(kind=kind, n_entities=len(kg.entities), n_relations=len(kg.relations),
                n_attributes=len(kg.attributes), entity_dim=8, relation_dim=8,
                attr_dim=8, hidden_dim=10, attr_hidden_dim=10)
    base.update(kw)
    return ModelSpec(**base)


def cfg_for(kg, kind, **kw):
    base = dict(model=spec_for(kg, kind), batch_size=64, iterations=5, seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestBuildAttributes:
    def attr(self, e, a, v):
        return AttrTriplet(e, a, v, v)

    def test_singleton_attribute_always_selected(self):
        index = build_attr_index([self.attr(2, 1, 0.7)])
        gen = Rng(0).stream("t")
        heads = np.array([2, 2, 2])
        tails = np.array([2, 2, 2])
        batch = build_attributes((heads, tails), index, gen)
        for ents, attrs, targets, mask in (batch.head, batch.tail):
            np.testing.assert_array_equal(attrs, 1)
            np.testing.assert_array_equal(targets, 0.7)
            np.testing.assert_array_equal(mask, 1.0)

    def test_entity_without_attributes_masked_with_zero_slot(self):
        index = build_attr_index([self.attr(0, 2, 0.4)])
        batch = build_attributes((np.array([5]), np.array([0])), index, Rng(1).stream("t"))
        ents, attrs, targets, mask = batch.head
        assert mask[0] == 0.0 and attrs[0] == 0 and targets[0] == 0.0
        assert batch.tail[3][0] == 1.0  # the tail entity does have attributes

    def test_sampling_is_uniform_over_an_entitys_attributes(self):
        index = build_attr_index([self.attr(1, 0, 0.1), self.attr(1, 1, 0.9)])
        gen = Rng(2).stream("t")
        heads = np.ones(10_000, dtype=np.int64)
        batch = build_attributes((heads, heads), index, gen)
        frac = (batch.head[1] == 0).mean()
        assert abs(frac - 0.5) < 0.02

    def test_accepts_triplet_lists(self):
        index = build_attr_index([self.attr(0, 1, 0.5)])
        rel = [RelTriplet(0, 0, 3)]
        batch = build_attributes(rel, index, Rng(3).stream("t"))
        assert batch.head[3][0] == 1.0 and batch.tail[3][0] == 0.0


class TestDeterminismAndReduction:
    def test_identical_runs_identical_parameters(self, toy_kg):
        r1 = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn"))
        r2 = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn"))
        for pid, p in r1.model.store.items():
            np.testing.assert_array_equal(p.value, r2.model.store.value(pid), err_msg=pid)
        assert [e["loss_rel"] for e in r1.log] == [e["loss_rel"] for e in r2.log]

    def test_different_seed_changes_trajectory(self, toy_kg):
        r1 = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", seed=1))
        r2 = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", seed=2))
        assert not np.array_equal(r1.model.store.value("emb/entity"),
                                  r2.model.store.value("emb/entity"))

    def test_attr_tasks_off_reduces_to_mlp_baseline_bitwise(self, toy_kg):
        """With both attribute tasks disabled, the multi-task trainer walks
        the exact same trajectory as the standalone MLP classifier."""
        with pytest.warns(UserWarning, match="attribute tasks disabled"):
            mt = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", use_at=False, use_ast=False))
        mlp = train_baseline(toy_kg, cfg_for(toy_kg, "er_mlp"))
        for pid in mlp.model.store.ids():
            np.testing.assert_array_equal(mt.model.store.value(pid),
                                          mlp.model.store.value(pid), err_msg=pid)

    def test_loss_decreases_when_overfitting_one_batch(self, toy_kg):
        cfg = cfg_for(toy_kg, "mtkgnn", iterations=200, batch_size=10_000,
                      use_at=False, use_ast=False, lr=1e-2)
        with pytest.warns(UserWarning):
            result = train_mtkgnn(toy_kg, cfg)
        assert result.log[-1]["loss_rel"] < result.log[0]["loss_rel"]

    def test_log_schema(self, toy_kg):
        result = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=2))
        assert len(result.log) == 2
        for rec in result.log:
            assert set(rec) == {"epoch", "loss_rel", "loss_attr", "seconds"}
            assert rec["loss_attr"] > 0.0


class TestUpdateSchedule:
    def test_ast_runs_exactly_k_updates_per_epoch(self, toy_kg):
        counts = {"rel": 0, "at": 0, "ast": 0}
        train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=3, ast_k=4),
                     update_hook=lambda task, epoch, model: counts.__setitem__(
                         task, counts[task] + 1))
        assert counts == {"rel": 3, "at": 3, "ast": 12}

    def test_attribute_update_moves_entity_embeddings(self, toy_kg):
        """Entity rows change during attribute updates: the shared-table
        mechanism that lets the attribute task inform the relational one."""
        snapshots = []

        def hook(task, epoch, model):
            snapshots.append((task, model.store.value("emb/entity").copy()))

        train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=1, ast_k=1), update_hook=hook)
        tasks = [t for t, _ in snapshots]
        assert tasks == ["rel", "at", "ast"]
        after_rel, after_at = snapshots[0][1], snapshots[1][1]
        assert not np.array_equal(after_rel, after_at)

    def test_sweep_mode_consumes_whole_pool(self, toy_kg):
        n_pool = 2 * len(toy_kg.splits.rel_train)
        batches = []
        train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=1, epoch_mode="sweep",
                                     use_ast=False),
                     update_hook=lambda task, *_: batches.append(task))
        n_rel = batches.count("rel")
        assert n_rel == -(-n_pool // 64)  # ceil division over chunk size
        assert batches.count("at") == n_rel

    def test_single_batch_mode_one_update_per_epoch(self, toy_kg):
        batches = []
        train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=2, use_at=False,
                                     use_ast=True, ast_k=0),
                     update_hook=lambda task, *_: batches.append(task))
        assert batches == ["rel", "rel"]


class TestProjection:
    @pytest.mark.parametrize("kind", ["mtkgnn", "er_mlp", "cp", "rescal",
                                      "transe", "transr", "ntn"])
    def test_norm_invariants_hold_after_training(self, toy_kg, kind):
        cfg = cfg_for(toy_kg, kind, iterations=4, margin=1.0)
        result = train_model(toy_kg, cfg)
        store = result.model.store
        for pid in ("emb/entity", "emb/relation", "emb/attribute"):
            if pid in store:
                rows = np.linalg.norm(store.value(pid), axis=1)
                assert rows.max() <= 1.0 + 1e-9, pid
        for pid in store.ids():
            if pid.startswith(("rescal/W", "transr/M")):
                slices = store.value(pid)
                fro = np.sqrt((slices ** 2).sum(axis=(1, 2)))
                assert fro.max() <= 3.0 + 1e-9, pid
            if pid.startswith(("ntn/W/", "ntn/V/")):
                assert np.linalg.norm(store.value(pid)) <= 3.0 + 1e-9, pid


class TestTranslationalTraining:
    def test_golden_triplets_get_lower_energy_than_corrupted(self):
        raw_rel = [("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d"), ("d", "r", "a"),
                   ("a", "r", "c"), ("b", "r", "d")] * 4
        kg = build_knowledge_graph(raw_rel, [], ratios=(0.8, 0.1, 0.1), seed=5)
        spec = spec_for(kg, "transe")
        cfg = TrainConfig(model=spec, batch_size=32, iterations=150, seed=5,
                          margin=1.0, lr=0.02)
        result = train_baseline(kg, cfg)
        model = result.model
        h, r, t = (np.array(x) for x in zip(*[(x.head, x.rel, x.tail)
                                              for x in kg.splits.rel_train]))
        hn, rn, tn = (np.array(x) for x in zip(*[(x.head, x.rel, x.tail)
                                                 for x in kg.splits.neg_train]))
        e_pos, _ = model.scorer.forward(model.store, h, r, t)
        e_neg, _ = model.scorer.forward(model.store, hn, rn, tn)
        assert e_pos.mean() < e_neg.mean()

    def test_margin_sweep_picks_best_dev_accuracy_smallest_on_tie(self, toy_kg):
        cfg = cfg_for(toy_kg, "transe", iterations=4)
        result = train_baseline(toy_kg, cfg)
        assert len(result.sweep) == 3
        best = max(e["dev_accuracy"] for e in result.sweep)
        expected = min(e["margin"] for e in result.sweep if e["dev_accuracy"] == best)
        assert result.margin == expected

    def test_fixed_margin_skips_sweep(self, toy_kg):
        result = train_baseline(toy_kg, cfg_for(toy_kg, "transr", iterations=2, margin=2.0))
        assert result.margin == 2.0
        assert result.sweep == [{"margin": 2.0, "dev_accuracy": result.sweep[0]["dev_accuracy"]}]

    def test_translational_determinism(self, toy_kg):
        r1 = train_baseline(toy_kg, cfg_for(toy_kg, "transe", iterations=3, margin=1.0))
        r2 = train_baseline(toy_kg, cfg_for(toy_kg, "transe", iterations=3, margin=1.0))
        np.testing.assert_array_equal(r1.model.store.value("emb/entity"),
                                      r2.model.store.value("emb/entity"))


class TestCheckpoints:
    def run_and_save(self, kg, tmp_path, iterations=3, kind="mtkgnn"):
        cfg = cfg_for(kg, kind, iterations=iterations)
        result = train_model(kg, cfg)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, result.model, cfg, kg.vocab_hashes(), epoch=iterations)
        return cfg, result, path

    def test_round_trip_bitwise(self, toy_kg, tmp_path):
        cfg, result, path = self.run_and_save(toy_kg, tmp_path)
        ckpt = load_checkpoint(path, expect_vocab_hashes=toy_kg.vocab_hashes())
        assert ckpt.epoch == 3 and ckpt.seed == cfg.seed
        assert ckpt.spec == cfg.model
        assert ckpt.adam_step == result.model.store.step
        model2 = model_from_checkpoint(ckpt)
        for pid, p in result.model.store.items():
            np.testing.assert_array_equal(p.value, model2.store.value(pid))
            np.testing.assert_array_equal(p.m, model2.store[pid].m)
            np.testing.assert_array_equal(p.v, model2.store[pid].v)

    def test_resume_is_bitwise_identical_to_uninterrupted_run(self, toy_kg, tmp_path):
        full = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=6))
        cfg3 = cfg_for(toy_kg, "mtkgnn", iterations=3)
        half = train_mtkgnn(toy_kg, cfg3)
        path = tmp_path / "half.bin"
        save_checkpoint(path, half.model, cfg3, toy_kg.vocab_hashes(), epoch=3)
        ckpt = load_checkpoint(path)
        resumed = train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", iterations=6), resume=ckpt)
        for pid, p in full.model.store.items():
            np.testing.assert_array_equal(p.value, resumed.model.store.value(pid),
                                          err_msg=pid)

    def test_vocab_hash_mismatch_rejected(self, toy_kg, tmp_path):
        _, _, path = self.run_and_save(toy_kg, tmp_path)
        bad = dict(toy_kg.vocab_hashes(), entities="0" * 16)
        with pytest.raises(ValueError, match="hash"):
            load_checkpoint(path, expect_vocab_hashes=bad)

    def test_truncated_file_rejected(self, toy_kg, tmp_path):
        _, _, path = self.run_and_save(toy_kg, tmp_path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 100])
        with pytest.raises(ValueError, match="corrupt"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_resume_with_wrong_seed_rejected(self, toy_kg, tmp_path):
        cfg, _, path = self.run_and_save(toy_kg, tmp_path)
        ckpt = load_checkpoint(path)
        with pytest.raises(ValueError, match="seed"):
            train_mtkgnn(toy_kg, cfg_for(toy_kg, "mtkgnn", seed=99), resume=ckpt)


class TestFailureModes:
    def test_nonfinite_loss_aborts_with_epoch_in_message(self, toy_kg):
        cfg = cfg_for(toy_kg, "mtkgnn", use_at=False, use_ast=False, iterations=1)
        model = build_model(cfg.model, cfg.seed)
        model.store["relnet/w"].value[0] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="epoch 0"):
            _train_pointwise(toy_kg, cfg, model, 0, None)

    def test_mtkgnn_entry_point_rejects_other_kinds(self, toy_kg):
        with pytest.raises(ValueError, match="multi-task"):
            train_mtkgnn(toy_kg, cfg_for(toy_kg, "cp"))
        with pytest.raises(ValueError, match="multi-task"):
            train_baseline(toy_kg, cfg_for(toy_kg, "mtkgnn"))

    def test_config_round_trip(self, toy_kg):
        cfg = cfg_for(toy_kg, "transe", margin=2.0, epoch_mode="sweep")
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
