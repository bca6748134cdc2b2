import copy

import numpy as np
import pytest
import torch

from mintrec import objectives as obj
from mintrec import synthgen, data, trainer
from mintrec.trainer import CheckpointError, TrainConfig


def _fixed_batch(dataset, seed=0, n=64):
    pairs = trainer.train_pairs(dataset)
    sampler = obj.NegativeSampler(pairs[0], pairs[1], np.unique(pairs[1]), dataset.m)
    rng = np.random.default_rng(seed)
    return trainer.make_batch(np.arange(min(n, len(pairs[0]))), pairs, sampler, rng)


def _forward(model, batch):
    comps = model.batch_losses(batch, torch.Generator().manual_seed(0))
    return {k: v.detach().clone() for k, v in comps.items()}, model.invariant_embeddings().clone()


# ------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(ablation="nope")
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate) == (256, 0.001)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_wo_senior_zeroes_beta():
    assert TrainConfig(ablation="wo_senior").effective_weights.beta == 0.0
    assert TrainConfig(ablation="wo_senior").to_dict()["weights"]["beta"] == 0.0


# ------------------------------------------------------------ training


def test_trace_total_is_weighted_sum(tiny_run):
    result, _ = tiny_run
    w = obj.LossWeights()
    by_epoch = {}
    for e, c, v in result.trace:
        by_epoch.setdefault(e, {})[c] = v
    assert sorted(by_epoch) == [0, 1, 2, 3]
    for comps in by_epoch.values():
        assert set(comps) == {"dis", "smo", "bpr", "reg", "cons", "total"}
        expected = sum(w.of(k) * comps[k] for k in obj.COMPONENTS)
        assert abs(comps["total"] - expected) <= 1e-8


def test_trace_file_round_trip(tiny_run):
    result, out = tiny_run
    assert trainer.read_trace(out / "loss_trace.csv") == [(e, c, float(v)) for e, c, v in result.trace]


def test_same_seed_identical_traces(tiny_dataset):
    cfg = TrainConfig(epochs=2, seed=4, patience=0)
    a = trainer.train(tiny_dataset, cfg)
    b = trainer.train(tiny_dataset, cfg)
    assert a.trace == b.trace
    for k, v in a.model.state_dict().items():
        assert torch.equal(v, b.model.state_dict()[k])


@pytest.fixture(scope="module")
def bundle50(tmp_path_factory):
    out = tmp_path_factory.mktemp("b50")
    synthgen.generate(synthgen.GeneratorConfig(n_patients=50, n_interactions=500, n_threads=30, seed=11), out)
    return data.load_dataset(out)


@pytest.mark.parametrize("seed", range(5))
def test_two_epochs_reduce_total(bundle50, seed):
    res = trainer.train(bundle50, TrainConfig(epochs=2, seed=seed, patience=0))
    total = res.component_trace("total")
    assert total[2] < total[0]


def test_wo_senior_gradient_ignores_regularizers(tiny_dataset):
    cfg = TrainConfig(ablation="wo_senior", seed=0)
    model = trainer.init_model(tiny_dataset, cfg)
    batch = _fixed_batch(tiny_dataset)
    comps = model.batch_losses(batch, torch.Generator().manual_seed(0))
    full = obj.total_objective(comps, cfg.effective_weights)
    without = obj.total_objective({k: v for k, v in comps.items() if k not in ("reg", "cons")},
                                  cfg.effective_weights)
    g_full = torch.autograd.grad(full, list(model.parameters()), retain_graph=True, allow_unused=True)
    g_wo = torch.autograd.grad(without, list(model.parameters()), allow_unused=True)
    for a, b in zip(g_full, g_wo):
        assert (a is None and b is None) or torch.equal(a, b)


def test_untouched_parameters_stay_fixed(tiny_dataset):
    """Thread and stage rows that never appear get no gradient and must not move."""
    cfg = TrainConfig(epochs=1, seed=0, patience=0)
    before = trainer.init_model(tiny_dataset, cfg).state_dict()
    before = {k: v.clone() for k, v in before.items()}
    after = trainer.train(tiny_dataset, cfg).model.state_dict()
    used_threads = np.unique(tiny_dataset.threads[tiny_dataset.mask])
    unused = np.setdiff1d(np.arange(tiny_dataset.graph.n_threads), used_threads)
    if len(unused):
        idx = torch.as_tensor(unused)
        assert torch.equal(before["tables.thread.weight"][idx], after["tables.thread.weight"][idx])
    assert not torch.equal(before["tables.thread.weight"], after["tables.thread.weight"])


def test_w_vae_has_no_invariant_branch(tiny_dataset):
    res = trainer.train(tiny_dataset, TrainConfig(epochs=1, seed=0, ablation="w_vae", patience=0))
    keys = res.model.state_dict().keys()
    assert not any(k.startswith("invariant.") for k in keys)
    assert "static_x.weight" in keys
    model = res.model
    batch = _fixed_batch(tiny_dataset)
    comps = model.batch_losses(batch, torch.Generator().manual_seed(0))
    assert set(comps) == set(obj.COMPONENTS)


def test_divergence_names_component(tiny_dataset, monkeypatch):
    from mintrec.model import MintModel

    original = MintModel.batch_losses

    def broken(self, batch, gen):
        comps = original(self, batch, gen)
        comps["smo"] = comps["smo"] * float("nan")
        return comps

    monkeypatch.setattr(MintModel, "batch_losses", broken)
    with pytest.raises(trainer.TrainingDiverged, match="smo"):
        trainer.train(tiny_dataset, TrainConfig(epochs=1, seed=0))


# ---------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bit_identical(tiny_run, tiny_dataset):
    result, out = tiny_run
    batch = _fixed_batch(tiny_dataset)
    comps_a, emb_a = _forward(result.model, batch)
    loaded = trainer.load_checkpoint(out / "model.ckpt")
    model = trainer.model_from_checkpoint(loaded, tiny_dataset)
    comps_b, emb_b = _forward(model, batch)
    assert torch.equal(emb_a, emb_b)
    for k in comps_a:
        assert torch.equal(comps_a[k], comps_b[k])
    assert loaded.epoch == result.checkpoint.epoch
    assert loaded.config == result.checkpoint.config


def test_truncated_file_rejected(tiny_run, tmp_path):
    raw = (tiny_run[1] / "model.ckpt").read_bytes()
    for cut in (5, 40, len(raw) - 3):
        p = tmp_path / f"cut{cut}.ckpt"
        p.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="offset|bytes"):
            trainer.load_checkpoint(p)


def test_corrupt_array_names_offset(tiny_run, tmp_path):
    raw = bytearray((tiny_run[1] / "model.ckpt").read_bytes())
    raw[-10] ^= 0xFF
    p = tmp_path / "bad.ckpt"
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="offset"):
        trainer.load_checkpoint(p)


def test_version_mismatch(tiny_run, tmp_path):
    raw = bytearray((tiny_run[1] / "model.ckpt").read_bytes())
    raw[8:12] = (99).to_bytes(4, "little")
    p = tmp_path / "v.ckpt"
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 99"):
        trainer.load_checkpoint(p)


def test_w_vae_checkpoint_refused_as_full(tiny_dataset, tmp_path):
    res = trainer.train(tiny_dataset, TrainConfig(epochs=1, seed=0, ablation="w_vae", checkpoint_dir=str(tmp_path)))
    ckpt = trainer.load_checkpoint(tmp_path / "model.ckpt")
    with pytest.raises(CheckpointError, match="w_vae"):
        trainer.model_from_checkpoint(ckpt, tiny_dataset, expect_ablation="full")
    full = trainer.init_model(tiny_dataset, TrainConfig())
    with pytest.raises(CheckpointError, match="incompatible"):
        trainer.load_params(full, ckpt.params)


def test_failed_load_leaves_model_untouched(tiny_run, tiny_dataset):
    model = trainer.init_model(tiny_dataset, TrainConfig(seed=9))
    before = copy.deepcopy(model.state_dict())
    params = dict(tiny_run[0].checkpoint.params)
    params.pop(sorted(params)[0])
    with pytest.raises(CheckpointError):
        trainer.load_params(model, params)
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])


def test_float32_training_runs(tiny_dataset):
    res = trainer.train(tiny_dataset, TrainConfig(epochs=1, seed=0, precision="float32"))
    assert next(res.model.parameters()).dtype == torch.float32
    assert np.isfinite(res.component_trace("total")).all()
