import csv
import filecmp
import json

import numpy as np
import pytest

from mintrec import cli, data, evaluator, trainer
from mintrec.cli import main


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tiny_bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    assert main(["train", "--data", str(tiny_bundle), "--epochs", "4", "--seed", "1", "--out", str(out)]) == 0
    return out


# ------------------------------------------------------------- generate


def test_generate_bladder_counts_and_repeatable(tmp_path, capsys):
    args = ["generate", "--patients", "296", "--interactions", "9867", "--seekers", "189", "--helpers", "243",
            "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert "n_interactions" in capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    meta = data.read_meta(tmp_path / "a")
    assert (meta["n_patients"], meta["n_interactions"]) == (296, 9867)
    names = ["interactions.csv", "activities.csv", "meta.json", "ground_truth.json"]
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors


def test_generate_requires_out(capsys):
    assert main(["generate", "--patients", "20", "--interactions", "50"]) == 2
    assert "--out" in capsys.readouterr().err


def test_generate_refuses_non_empty_dir(tmp_path):
    (tmp_path / "keep.txt").write_text("x")
    assert main(["generate", "--patients", "20", "--interactions", "50", "--out", str(tmp_path)]) == 2
    assert main(["generate", "--patients", "20", "--interactions", "50", "--out", str(tmp_path), "--force"]) == 0
    assert not (tmp_path / "keep.txt").exists()


def test_infeasible_generate_is_usage_error(tmp_path):
    assert main(["generate", "--patients", "1", "--interactions", "5", "--out", str(tmp_path / "x")]) == 2


# ---------------------------------------------------------------- config


def test_config_precedence_and_unknown_keys(tmp_path, tiny_bundle):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nepochs = 2\nalpha = 0.5\nbeta = 0.02\n")
    out = tmp_path / "r"
    assert main(["train", "--data", str(tiny_bundle), "--config", str(cfg), "--alpha", "0.001", "--out", str(out)]) == 0
    echo = (out / "effective_config.txt").read_text()
    assert "alpha = 0.001" in echo and "beta = 0.02" in echo and "epochs = 2" in echo
    assert max(e for e, _, _ in trainer.read_trace(out / "loss_trace.csv")) == 2
    cfg.write_text("epochs = 2\nlearning_rte = 0.1\n")
    assert main(["train", "--data", str(tiny_bundle), "--config", str(cfg), "--out", str(tmp_path / "r2")]) == 2


def test_every_key_has_default_and_help():
    for name, key in cli.KEYS.items():
        assert key.help, name
    assert cli.KEYS["epochs"].default == 100


@pytest.mark.parametrize("command", ["generate", "train", "evaluate", "recommend", "export-embeddings"])
def test_help_renders(command, capsys):
    assert main([command, "--help"]) == 0
    assert "--" in capsys.readouterr().out


def test_bladder_weights_reach_trainer():
    ns = cli.build_parser().parse_args(["train", "--data", "d", "--alpha", "0.001", "--beta", "0.01"])
    tcfg = cli.train_config(cli.resolve_config(ns))
    assert (tcfg.weights.alpha, tcfg.weights.beta) == (0.001, 0.01)


# ----------------------------------------------------------------- train


def test_train_writes_checkpoint_and_trace(trained):
    assert (trained / "model.ckpt").is_file()
    rows = _csv(trained / "loss_trace.csv")
    assert list(rows[0]) == ["epoch", "component", "value"]
    assert sorted({int(r["epoch"]) for r in rows}) == list(range(5))


def test_train_epoch_rows(tiny_bundle, tmp_path):
    assert main(["train", "--data", str(tiny_bundle), "--epochs", "50", "--seed", "1", "--out", str(tmp_path)]) == 0
    epochs = {int(r["epoch"]) for r in _csv(tmp_path / "loss_trace.csv")}
    assert epochs == set(range(51))  # 50 epoch rows plus the initial state


def test_wo_senior_echoes_zero_beta(tiny_bundle, tmp_path):
    assert main(["train", "--data", str(tiny_bundle), "--epochs", "1", "--ablation", "wo_senior",
                 "--out", str(tmp_path)]) == 0
    assert "beta = 0.0" in (tmp_path / "effective_config.txt").read_text()
    ckpt = trainer.load_checkpoint(tmp_path / "model.ckpt")
    assert ckpt.config["weights"]["beta"] == 0.0


def test_divergence_exit_code(tiny_bundle, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise trainer.TrainingDiverged("dis", 1, float("nan"))

    monkeypatch.setattr(trainer, "train", boom)
    assert main(["train", "--data", str(tiny_bundle), "--epochs", "1", "--out", str(tmp_path)]) == 3
    assert "dis" in capsys.readouterr().err


def test_missing_data_is_usage_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 2


# -------------------------------------------------------------- evaluate


def test_evaluate_matches_api(trained, tiny_bundle, tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", "--data", str(tiny_bundle), "--checkpoint", str(trained), "--out", str(out)]) == 0
    rows = _csv(out / "metrics.csv")
    ds = data.load_dataset(tiny_bundle)
    model = trainer.model_from_checkpoint(trainer.load_checkpoint(trained / "model.ckpt"), ds)
    api = evaluator.evaluate(model, trainer.eval_queries(ds, "test"))
    for r in rows:
        key = r["metric"] + (f"@{r['K']}" if r["K"] else "")
        assert float(r["value"]) == api[key]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["models"]["full"] == api


def test_evaluate_baseline_two_rows_per_metric(trained, tiny_bundle, tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", "--data", str(tiny_bundle), "--checkpoint", str(trained), "--baseline",
                 "--plot-data", "--out", str(out)]) == 0
    rows = _csv(out / "metrics.csv")
    per_metric = {}
    for r in rows:
        per_metric.setdefault((r["metric"], r["K"]), set()).add(r["model"])
    assert all(v == {"full", "bpr_mf"} for v in per_metric.values())
    assert len(rows) == 2 * len(per_metric)
    assert {r["model"] for r in _csv(out / "plot_k.csv")} == {"mint", "bpr_mf"}
    assert {r["series"] for r in _csv(out / "plot_epochs.csv")} == {"loss", "valid"}


def test_evaluate_missing_checkpoint(tiny_bundle, tmp_path):
    assert main(["evaluate", "--data", str(tiny_bundle), "--checkpoint", str(tmp_path / "none.ckpt")]) == 2


def test_evaluate_ablation_guard(trained, tiny_bundle, tmp_path):
    assert main(["evaluate", "--data", str(tiny_bundle), "--checkpoint", str(trained), "--ablation", "w_vae",
                 "--out", str(tmp_path)]) == 2


def test_single_pair_memorised_gives_mrr_one(tmp_path):
    bundle = tmp_path / "toy"
    inter = data.InteractionLog(np.zeros(10, dtype=np.int64), np.ones(10, dtype=np.int64),
                                np.zeros(10, dtype=np.int64), np.arange(10, dtype=np.int64) * 100 + 50)
    acts = data.ActivityLog(np.repeat([0, 1], 10), np.tile(np.arange(10) * 100, 2),
                            np.zeros(20, dtype=np.int64), np.zeros(20, dtype=np.int64))
    data.save_bundle(bundle, inter, acts, T=10)
    assert main(["train", "--data", str(bundle), "--epochs", "2", "--out", str(tmp_path / "r")]) == 0
    assert main(["evaluate", "--data", str(bundle), "--checkpoint", str(tmp_path / "r"),
                 "--out", str(tmp_path / "e")]) == 0
    mrr = [r for r in _csv(tmp_path / "e" / "metrics.csv") if r["metric"] == "MRR"]
    assert float(mrr[0]["value"]) == 1.0


# ------------------------------------------------------------- recommend


def _a_seeker(tiny_bundle):
    ds = data.load_dataset(tiny_bundle)
    return int(trainer.train_pairs(ds)[0][0]), ds


def test_recommend_top3(trained, tiny_bundle, tmp_path, capsys):
    seeker, _ = _a_seeker(tiny_bundle)
    assert main(["recommend", "--data", str(tiny_bundle), "--checkpoint", str(trained), "--seeker", str(seeker),
                 "--k", "3", "--out", str(tmp_path)]) == 0
    rows = _csv(tmp_path / "recommendations.csv")
    assert len(rows) == 3
    scores = [float(r["score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    for r in rows:
        assert int(r["helper_more_senior"]) == (float(r["o_t"]) > float(r["s_t"]))
    assert "senior" in capsys.readouterr().out


def test_recommend_k_above_helpers(trained, tiny_bundle, tmp_path, caplog):
    seeker, ds = _a_seeker(tiny_bundle)
    n_helpers = len(np.unique(trainer.train_pairs(ds)[1]))
    assert main(["recommend", "--data", str(tiny_bundle), "--checkpoint", str(trained), "--seeker", str(seeker),
                 "--k", "1000", "--out", str(tmp_path)]) == 0
    assert len(_csv(tmp_path / "recommendations.csv")) == n_helpers
    assert "exceeds" in caplog.text


def test_recommend_unknown_seeker(trained, tiny_bundle):
    assert main(["recommend", "--data", str(tiny_bundle), "--checkpoint", str(trained), "--seeker", "99999"]) == 2


# ---------------------------------------------------------------- export


def test_export_rows_header_and_determinism(trained, tiny_bundle, tmp_path):
    args = ["export-embeddings", "--data", str(tiny_bundle), "--checkpoint", str(trained)]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "embeddings.csv").read_text()
    assert text == (tmp_path / "b" / "embeddings.csv").read_text()
    lines = text.splitlines()
    ckpt = trainer.load_checkpoint(trained / "model.ckpt")
    header = lines[0].split(",")
    assert len(header) == ckpt.model["d_x"] + ckpt.model["d_z"] + 2
    assert len(lines) - 1 == 2 * ckpt.model["m"]


def test_unknown_command_exit_2():
    assert main(["frobnicate"]) == 2
