"""Command-line entry point: ``mintrec generate | train | evaluate | recommend | export-embeddings``.

Settings come from three layers, later ones winning: built-in defaults,
an optional ``--config`` file of flat ``key = value`` lines, then explicit
command-line flags. The merged settings are written as
``effective_config.txt`` next to every output.

Exit codes: 0 success, 2 usage or input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data, evaluator, kernels, metrics, synthgen, trainer
from .objectives import LossWeights

log = logging.getLogger("mintrec")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3

CONFIG_ECHO = "effective_config.txt"


class UsageError(Exception):
    """Bad flags, config keys or input files; maps to exit code 2."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_or_none(text):
    t = str(text).strip().lower()
    return None if t in ("", "none", "auto") else int(t)


def _ks(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(k) for k in text)
    ks = tuple(int(k) for k in str(text).replace(" ", "").split(",") if k)
    if not ks or min(ks) < 1:
        raise ValueError("ks must be a comma-separated list of positive integers")
    return ks


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    help: str


_GEN = synthgen.GeneratorConfig()
_TRAIN = trainer.TrainConfig()
_W = LossWeights()

KEYS = {
    # shared
    "seed": Key(int, 0, "random seed for generation, training and sampling"),
    "T": Key(_int_or_none, None, "time steps per patient; 'auto' uses the bundle's meta.json (10 if absent)"),
    # generation
    "patients": Key(int, _GEN.n_patients, "number of patients"),
    "interactions": Key(int, _GEN.n_interactions, "number of seeker-helper interactions"),
    "threads": Key(int, _GEN.n_threads, "number of discussion threads"),
    "stages": Key(int, _GEN.n_stages, "number of health stages"),
    "seekers": Key(_int_or_none, None, "designated seekers ('auto' = 60% of patients)"),
    "helpers": Key(_int_or_none, None, "designated helpers ('auto' = 80% of patients)"),
    "communities": Key(int, _GEN.n_communities, "latent thread communities"),
    "span_days": Key(int, _GEN.span_days, "length of the simulated observation window in days"),
    "seniority_gap": Key(float, _GEN.seniority_gap, "planted helper-minus-seeker seniority margin"),
    "noise_rate": Key(float, _GEN.noise_rate, "share of interactions planted against the seniority order"),
    # training
    "epochs": Key(int, 100, "training epochs"),
    "batch_size": Key(int, _TRAIN.batch_size, "triplets per mini-batch"),
    "learning_rate": Key(float, _TRAIN.learning_rate, "Adam step size"),
    "alpha": Key(float, _W.alpha, "weight of the disentangling ELBO term"),
    "beta": Key(float, _W.beta, "weight of the monotonic regularizer plus seniority constraint"),
    "gamma": Key(float, _W.gamma, "weight of the smoothness term"),
    "lam": Key(float, _W.lam, "weight of the BPR term"),
    "ablation": Key(str, "full", "full | w_vae | wo_senior"),
    "patience": Key(int, 0, "early-stopping patience in epochs on validation NDCG@10 (0 = run all epochs)"),
    "clip_norm": Key(float, _TRAIN.clip_norm, "global gradient-norm clip (0 disables)"),
    "layers": Key(int, _TRAIN.layers, "graph propagation layers"),
    "layer_average": Key(str, _TRAIN.layer_average, "mean (1/(L+1)) | over_l (1/L)"),
    "d_x": Key(int, _TRAIN.d_x, "time-invariant latent size"),
    "d_z": Key(int, _TRAIN.d_z, "time-varying latent size"),
    "hidden": Key(int, _TRAIN.hidden, "hidden width of the prior, time-varying encoder and decoder"),
    "hidden_x": Key(int, _TRAIN.hidden_x, "hidden width of the time-invariant encoder"),
    "graph_decoder": Key(_bool, _TRAIN.graph_decoder, "condition the decoder on snapshot neighbourhoods"),
    "constraint_mode": Key(str, _TRAIN.constraint_mode, "hinge | raw"),
    "precision": Key(str, _TRAIN.precision, "float64 | float32"),
    # evaluation
    "ks": Key(_ks, (3, 5, 10), "cut-offs reported by evaluate"),
    "split": Key(str, "test", "split evaluated by evaluate: test | valid"),
    "baseline_epochs": Key(int, 200, "epoch cap for the BPR-MF baseline (early stopping, patience 10)"),
    "baseline_dim": Key(int, 16, "BPR-MF embedding size"),
}


def parse_config_file(path):
    """Read flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value, f"{path}:{lineno}")
    return out


def _coerce(key, value, where):
    try:
        return KEYS[key].parse(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: bad value for {key!r}: {exc}") from None


def resolve_config(args):
    """Defaults, then the config file, then flags that were given explicitly."""
    cfg = {k: spec.default for k, spec in KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key in KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = _coerce(key, value, f"--{key.replace('_', '-')}")
    return cfg


def format_config(cfg, command):
    lines = [f"# mintrec {command}: effective configuration (defaults < --config < flags)"]
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {'auto' if value is None else value}")
    return "\n".join(lines) + "\n"


def write_config_echo(directory, cfg, command):
    path = Path(directory) / CONFIG_ECHO
    path.write_text(format_config(cfg, command), encoding="utf-8")
    return path


def train_config(cfg, checkpoint_dir=None):
    try:
        return trainer.TrainConfig(
            batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"], epochs=cfg["epochs"],
            weights=LossWeights(alpha=cfg["alpha"], gamma=cfg["gamma"], lam=cfg["lam"], beta=cfg["beta"]),
            seed=cfg["seed"], ablation=cfg["ablation"], checkpoint_dir=checkpoint_dir,
            patience=cfg["patience"], clip_norm=cfg["clip_norm"], d_x=cfg["d_x"], d_z=cfg["d_z"],
            hidden=cfg["hidden"], hidden_x=cfg["hidden_x"], layers=cfg["layers"],
            layer_average=cfg["layer_average"], graph_decoder=cfg["graph_decoder"],
            constraint_mode=cfg["constraint_mode"], precision=cfg["precision"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def effective_echo(cfg, tcfg):
    """The config as echoed after training: β is 0 for wo_senior."""
    out = dict(cfg)
    w = tcfg.effective_weights
    out.update(alpha=w.alpha, beta=w.beta, gamma=w.gamma, lam=w.lam)
    return out


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _load_dataset(path, cfg):
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"dataset directory not found: {path}")
    config = None if cfg["T"] is None else data.DataConfig(T=cfg["T"])
    return data.load_dataset(path, config)


def _resolve_checkpoint(path):
    path = Path(path)
    if path.is_dir():
        path = path / "model.ckpt"
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return path


def _load_model(args, cfg, dataset, expect_ablation=None):
    ckpt = trainer.load_checkpoint(_resolve_checkpoint(args.checkpoint))
    return ckpt, trainer.model_from_checkpoint(ckpt, dataset, expect_ablation)


def _out_dir(path, default=None):
    if path is None:
        if default is None:
            raise UsageError("--out is required")
        path = default
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args, cfg):
    if args.out is None:
        raise UsageError("generate requires --out")
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()):
        if not args.force:
            raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    gcfg = synthgen.GeneratorConfig(
        n_patients=cfg["patients"], n_threads=cfg["threads"], n_stages=cfg["stages"],
        n_interactions=cfg["interactions"], T=10 if cfg["T"] is None else cfg["T"],
        seniority_gap=cfg["seniority_gap"], noise_rate=cfg["noise_rate"], seed=cfg["seed"],
        n_seekers=cfg["seekers"], n_helpers=cfg["helpers"], n_communities=cfg["communities"],
        span_days=cfg["span_days"])
    try:
        gcfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta = synthgen.generate(gcfg, out)
    write_config_echo(out, cfg, "generate")
    report = synthgen.ground_truth_report(out)
    print(f"bundle      {out}")
    for key in ("n_patients", "n_threads", "n_stages", "n_interactions", "n_activities", "n_seekers", "n_helpers"):
        print(f"{key:<24}{meta[key]}")
    print(f"{'satisfaction_rate':<24}{report['satisfaction_rate']:.4f}")
    print(f"{'thread_overlap_rate':<24}{report['thread_overlap_rate']:.4f}")
    return EXIT_OK


def cmd_train(args, cfg):
    dataset = _load_dataset(args.data, cfg)
    out = _out_dir(args.out, Path(args.data) / "run")
    tcfg = train_config(cfg, checkpoint_dir=str(out))
    write_config_echo(out, effective_echo(cfg, tcfg), "train")

    def progress(epoch, total, score):
        log.info("epoch %d  total %.6f  valid NDCG@%d %.4f", epoch, total, tcfg.eval_k, score)

    result = trainer.train(dataset, tcfg, progress=progress)
    print(f"checkpoint  {out / 'model.ckpt'}")
    print(f"loss trace  {out / 'loss_trace.csv'}")
    print(f"epochs run  {max(e for e, _, _ in result.trace)}  best epoch {result.best_epoch}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    dataset = _load_dataset(args.data, cfg)
    ckpt_path = _resolve_checkpoint(args.checkpoint)
    ckpt = trainer.load_checkpoint(ckpt_path)
    model = trainer.model_from_checkpoint(ckpt, dataset, args.ablation)
    out = _out_dir(args.out, ckpt_path.parent / "eval")
    ks = cfg["ks"]
    queries = trainer.eval_queries(dataset, cfg["split"])
    if len(queries["seeker"]) == 0:
        raise UsageError(f"split {cfg['split']!r} has no queries with seekers and helpers seen in training")
    summaries = {ckpt.ablation: evaluator.evaluate(model, queries, ks)}
    rows = evaluator.summary_rows(ckpt.ablation, summaries[ckpt.ablation])
    n_cand = len(model.train_helpers)
    extra = {"split": cfg["split"], "n_queries": int(len(queries["seeker"])),
             "dropped_queries": int(queries["dropped"]), "n_candidates": int(n_cand),
             "query_hash": evaluator.query_set_hash(queries),
             "null_hit": {f"HIT@{k}": evaluator.null_hit_at_k(n_cand, k) for k in ks}}
    baseline = None
    if args.baseline:
        bcfg = trainer.TrainConfig(batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
                                   epochs=cfg["baseline_epochs"], seed=cfg["seed"], patience=10)
        baseline = evaluator.train_baseline(dataset, bcfg, dim=cfg["baseline_dim"])
        summaries["bpr_mf"] = evaluator.evaluate(baseline.model, queries, ks)
        rows += evaluator.summary_rows("bpr_mf", summaries["bpr_mf"])
    evaluator.write_metrics_csv(out / "metrics.csv", rows)
    evaluator.write_summary_json(out / "summary.json", summaries, extra)
    if args.plot_data:
        _write_plot_data(out, ckpt_path.parent, model, queries, baseline)
    write_config_echo(out, cfg, "evaluate")

    for name, summary in summaries.items():
        print(name.ljust(10) + "  ".join(f"{k} {v:.4f}" for k, v in summary.items()))
    print(f"metrics     {out / 'metrics.csv'}")
    return EXIT_OK


def _write_plot_data(out, run_dir, model, queries, baseline):
    """Per-epoch and per-K series as long-format CSVs."""
    series = []
    trace_path = run_dir / "loss_trace.csv"
    if trace_path.is_file():
        series += [("mint", "loss", comp, e, v) for e, comp, v in trainer.read_trace(trace_path)]
    else:
        log.warning("no loss trace next to the checkpoint; per-epoch loss series omitted")
    valid_path = run_dir / "valid_trace.csv"
    if valid_path.is_file():
        with open(valid_path, newline="", encoding="utf-8") as fh:
            series += [("mint", "valid", f"{r['metric']}@{r['K']}", int(r["epoch"]), float(r["value"]))
                       for r in csv.DictReader(fh)]
    if baseline is not None:
        series += [("bpr_mf", "loss", comp, e, v) for e, comp, v in baseline.trace]
        series += [("bpr_mf", "valid", f"{name}@{k}", e, v) for e, name, k, v in baseline.valid_trace]
    with open(out / "plot_epochs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "series", "name", "epoch", "value"])
        for row in series:
            w.writerow([*row[:4], repr(float(row[4]))])

    scorers = [("mint", model)] + ([("bpr_mf", baseline.model)] if baseline is not None else [])
    k_max = len(model.train_helpers)
    ks = [k for k in (1, 2, 3, 5, 10, 20, 50, 100) if k <= k_max]
    with open(out / "plot_k.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "K", "value"])
        for name, scorer in scorers:
            ranks = evaluator.evaluate_ranks(scorer, queries)
            for k in ks:
                w.writerow([name, "NDCG", k, repr(metrics.ndcg_at_k(ranks, k))])
                w.writerow([name, "HIT", k, repr(metrics.hit_at_k(ranks, k))])


def cmd_recommend(args, cfg):
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    dataset = _load_dataset(args.data, cfg)
    _, model = _load_model(args, cfg, dataset)
    seeker = args.seeker
    if not evaluator.scorer_knows_seeker(model, seeker):
        raise UsageError(f"unknown seeker {seeker}: not seen as a seeker in the training split")
    helpers = model.train_helpers
    k = args.k
    if k > len(helpers):
        log.warning("k=%d exceeds the %d known helpers; listing all of them", k, len(helpers))
        k = len(helpers)
    scores = model.helper_scores([seeker], helpers)[0]
    order = np.lexsort((helpers, -scores))[:k]

    # seniority now: the seeker's latest step and every helper at that moment
    acts = dataset.activities
    sen, _, ptr = data.seniority_per_event(acts, dataset.m, dataset.graph.n_threads, dataset.graph.n_stages)
    tl = dataset.timelines[seeker]
    last = max(tl.length - 1, 0)
    tau = int(tl.timestamp[last])
    s_t = float(dataset.seniority[seeker, last])
    o_all = kernels.value_at_time(ptr, acts.timestamp, sen, tau)

    rows = []
    for rank, j in enumerate(order, start=1):
        h = int(helpers[j])
        o_t = float(o_all[h])
        rows.append((rank, h, float(scores[j]), o_t, s_t, o_t > s_t))
    print(f"seeker {seeker}  step {last + 1}  s_t {s_t:.4f}")
    print(f"{'rank':>4}  {'helper':>7}  {'score':>10}  {'o_t':>7}  {'s_t':>7}  senior")
    for rank, h, score, o_t, s, flag in rows:
        print(f"{rank:>4}  {h:>7}  {score:>10.6f}  {o_t:>7.4f}  {s:>7.4f}  {'yes' if flag else 'no'}")
    if args.out is not None:
        out = _out_dir(args.out)
        with open(out / "recommendations.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "helper", "score", "o_t", "s_t", "helper_more_senior"])
            for rank, h, score, o_t, s, flag in rows:
                w.writerow([rank, h, repr(score), repr(o_t), repr(s), int(flag)])
        write_config_echo(out, cfg, "recommend")
    return EXIT_OK


def export_rows(model, dataset):
    """One row per (patient, role): propagated x mean of that role's view, then z mean at the last real step."""
    m = dataset.m
    e = model.invariant_embeddings().double().numpy()
    z = model.z_means().double().numpy()
    last = np.maximum(dataset.mask.sum(1) - 1, 0)
    z_last = z[np.arange(m), last]
    rows = []
    for p in range(m):
        for role, offset in (("seeker", 0), ("helper", m)):
            rows.append([p, role, *e[offset + p].tolist(), *z_last[p].tolist()])
    return rows


def cmd_export(args, cfg):
    dataset = _load_dataset(args.data, cfg)
    _, model = _load_model(args, cfg, dataset)
    out = _out_dir(args.out)
    rows = export_rows(model, dataset)
    d_x, d_z = model.cfg.d_x, model.cfg.d_z
    path = out / "embeddings.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient", "role", *(f"x{i}" for i in range(d_x)), *(f"z{i}" for i in range(d_z))])
        for row in rows:
            w.writerow(row[:2] + [repr(v) for v in row[2:]])
    write_config_echo(out, cfg, "export-embeddings")
    print(f"embeddings  {path}  ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--seed", help="random seed (default 0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _help(name):
    # argparse treats help strings as %-format templates
    return KEYS[name.replace("-", "_")].help.replace("%", "%%")


def _add_train_flags(p):
    for flag in ("epochs", "batch-size", "learning-rate", "alpha", "beta", "gamma", "lam", "patience",
                 "hidden", "hidden-x", "layers", "precision"):
        p.add_argument(f"--{flag}", help=_help(flag))
    p.add_argument("--ablation", choices=trainer.ABLATIONS, help=_help("ablation"))


def build_parser():
    parser = argparse.ArgumentParser(prog="mintrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset bundle")
    _add_common(g)
    for flag in ("patients", "interactions", "threads", "stages", "seekers", "helpers", "noise-rate",
                 "seniority-gap", "T"):
        g.add_argument(f"--{flag}", help=_help(flag))
    g.add_argument("--force", action="store_true", help="replace a non-empty output directory")

    t = sub.add_parser("train", help="fit the model and write a checkpoint plus loss trace")
    _add_common(t)
    t.add_argument("--data", required=True, help="dataset bundle directory")
    _add_train_flags(t)

    e = sub.add_parser("evaluate", help="rank held-out helpers and write metric reports")
    _add_common(e)
    e.add_argument("--data", required=True, help="dataset bundle directory")
    e.add_argument("--checkpoint", required=True, help="model.ckpt or the training output directory")
    e.add_argument("--ablation", choices=trainer.ABLATIONS, default=None,
                   help="refuse checkpoints trained with a different ablation")
    e.add_argument("--split", help=_help("split"))
    e.add_argument("--baseline", action="store_true", help="also train and report BPR-MF")
    e.add_argument("--plot-data", action="store_true", help="write per-epoch and per-K CSV series")

    r = sub.add_parser("recommend", help="top-K helpers for one seeker")
    _add_common(r)
    r.add_argument("--data", required=True, help="dataset bundle directory")
    r.add_argument("--checkpoint", required=True, help="model.ckpt or the training output directory")
    r.add_argument("--seeker", required=True, type=int, help="seeker patient id")
    r.add_argument("--k", type=int, default=3, help="number of helpers (default 3)")

    x = sub.add_parser("export-embeddings", help="posterior-mean embeddings per patient and role")
    _add_common(x)
    x.add_argument("--data", required=True, help="dataset bundle directory")
    x.add_argument("--checkpoint", required=True, help="model.ckpt or the training output directory")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "export-embeddings": cmd_export,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except trainer.TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, data.DatasetError, trainer.CheckpointError, evaluator.UnknownSeeker,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
