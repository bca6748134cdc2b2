"""Mini-batch training, ablation switches and the binary checkpoint format."""

from __future__ import annotations

import base64
import copy
import csv
import io
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from . import objectives as obj
from .model import ABLATIONS, MintModel, ModelConfig
from .vae import DTYPE

log = logging.getLogger(__name__)

MAGIC = b"MINTCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class TrainingDiverged(RuntimeError):
    def __init__(self, component, epoch, value):
        super().__init__(f"non-finite loss component {component!r} ({value}) at epoch {epoch}")
        self.component = component
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.001
    epochs: int = 100
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    seed: int = 0
    ablation: str = "full"
    checkpoint_dir: str | None = None
    patience: int = 10
    clip_norm: float = 5.0
    eval_k: int = 10
    d_x: int = 8
    d_z: int = 8
    d_thread: int = 8
    d_stage: int = 8
    hidden: int = 32
    hidden_x: int = 96
    layers: int = 3
    layer_average: str = "mean"
    graph_decoder: bool = True
    constraint_mode: str = "hinge"
    init_log_sigma: float = -3.0
    x_mean_gain: float = 4.0
    feature_std: float = 1.0
    detach_target: bool = True
    precision: str = "float64"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", obj.LossWeights(**self.weights))

    @property
    def effective_weights(self):
        if self.ablation == "wo_senior":
            return replace(self.weights, beta=0.0)
        return self.weights

    def model_config(self, dataset):
        return ModelConfig(
            m=dataset.m, n_threads=dataset.graph.n_threads, n_stages=dataset.graph.n_stages, T=dataset.T,
            d_thread=self.d_thread, d_stage=self.d_stage, d_x=self.d_x, d_z=self.d_z, hidden=self.hidden, hidden_x=self.hidden_x,
            layers=self.layers, layer_average=self.layer_average, graph_decoder=self.graph_decoder,
            ablation=self.ablation, constraint_mode=self.constraint_mode,
            init_log_sigma=self.init_log_sigma, x_mean_gain=self.x_mean_gain, feature_std=self.feature_std,
            detach_target=self.detach_target, precision=self.precision)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.effective_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = obj.LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class Checkpoint:
    params: dict
    config: dict
    model: dict
    epoch: int
    rng: dict
    meta: dict = field(default_factory=dict)

    @property
    def ablation(self):
        return self.model["ablation"]


@dataclass
class TrainResult:
    model: MintModel
    checkpoint: Checkpoint
    trace: list  # (epoch, component, value)
    valid_trace: list  # (epoch, metric, K, value)
    best_epoch: int

    def component_trace(self, component):
        return np.array([v for e, c, v in self.trace if c == component])


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def train_pairs(dataset):
    p = dataset.pair_rows("train")
    return p["seeker"], p["helper"], p["seeker_step"], p["helper_step"]


def eval_queries(dataset, split="test"):
    """Queries of a split whose seeker and helper both appear in training."""
    seekers, helpers, _, _ = train_pairs(dataset)
    known_s = np.zeros(dataset.m, dtype=bool)
    known_h = np.zeros(dataset.m, dtype=bool)
    known_s[seekers] = True
    known_h[helpers] = True
    p = dataset.pair_rows(split)
    keep = known_s[p["seeker"]] & known_h[p["helper"]]
    return {"seeker": p["seeker"][keep], "helper": p["helper"][keep],
            "step": p["seeker_step"][keep], "dropped": int((~keep).sum())}


def iter_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def make_batch(idx, pairs, sampler, rng):
    seekers, helpers, s_step, h_step = pairs
    neg = sampler.draw(seekers[idx], rng)
    ok = neg >= 0
    if not ok.all():
        log.warning("skipping %d triplets without a valid negative", int((~ok).sum()))
    idx = idx[ok]
    return obj.TripletBatch(seekers[idx], helpers[idx], neg[ok], s_step[idx], h_step[idx])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def validation_ndcg(scorer, queries, k):
    if len(queries["seeker"]) == 0:
        return float("nan")
    ranks = rank_queries(scorer, queries)
    return metrics.ndcg_at_k(ranks, k)


def rank_queries(scorer, queries):
    helpers = scorer.train_helpers
    col = np.searchsorted(helpers, queries["helper"])
    scores = scorer.helper_scores(queries["seeker"], helpers)
    return metrics.ranks_from_scores(scores, col)


def _weighted_total(comps, weights):
    return obj.total_objective(comps, weights)


def init_model(dataset, config):
    """The untrained model ``train`` starts from for this config and seed."""
    torch.manual_seed(config.seed)
    return MintModel(config.model_config(dataset)).attach(dataset)


def train(dataset, config=None, progress=None):
    """Fit the model on the training split; returns a :class:`TrainResult`."""
    config = TrainConfig() if config is None else config
    weights = config.effective_weights
    model = init_model(dataset, config)
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    pairs = train_pairs(dataset)
    sampler = obj.NegativeSampler(pairs[0], pairs[1], model.train_helpers, dataset.m)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    valid = eval_queries(dataset, "valid")
    n = len(pairs[0])
    if n == 0:
        raise ValueError("training split is empty")

    trace, valid_trace = [], []
    comps0 = _initial_components(model, pairs, sampler, config)
    _record(trace, 0, comps0, weights)
    best = (-np.inf, 0, copy.deepcopy(model.state_dict()))
    stale = 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        sums, count = {}, 0
        for idx in iter_batches(n, config.batch_size, rng):
            batch = make_batch(idx, pairs, sampler, rng)
            if len(batch) == 0:
                continue
            comps = model.batch_losses(batch, gen)
            for name, value in comps.items():
                if not torch.isfinite(value):
                    raise TrainingDiverged(name, epoch, value.item())
            loss = _weighted_total(comps, weights)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if config.clip_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            for name, value in comps.items():
                sums[name] = sums.get(name, 0.0) + float(value.detach()) * len(batch)
            count += len(batch)
        _record(trace, epoch, {k: v / count for k, v in sums.items()}, weights)
        model.eval()
        score = validation_ndcg(model, valid, config.eval_k)
        valid_trace.append((epoch, "NDCG", config.eval_k, score))
        if progress is not None:
            progress(epoch, trace[-1][2], score)
        if not np.isnan(score):
            if score > best[0]:
                best = (score, epoch, copy.deepcopy(model.state_dict()))
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best[1])
                    break
    best_epoch = epoch
    if np.isfinite(best[0]):
        model.load_state_dict(best[2])
        best_epoch = best[1]
    model.eval()
    ckpt = make_checkpoint(model, config, epoch, rng, gen, dataset, best_epoch)
    if config.checkpoint_dir:
        out = Path(config.checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out / "model.ckpt")
        write_trace(out / "loss_trace.csv", trace)
        write_valid_trace(out / "valid_trace.csv", valid_trace)
    return TrainResult(model=model, checkpoint=ckpt, trace=trace, valid_trace=valid_trace, best_epoch=best_epoch)


@torch.no_grad()
def _initial_components(model, pairs, sampler, config):
    """Loss components before any update, averaged over one pass of the training pairs."""
    rng = np.random.default_rng([config.seed, 1])
    gen = torch.Generator().manual_seed(config.seed + 1_000_003)
    sums, count = {}, 0
    for idx in iter_batches(len(pairs[0]), config.batch_size, rng):
        batch = make_batch(idx, pairs, sampler, rng)
        if len(batch) == 0:
            continue
        comps = model.batch_losses(batch, gen)
        for name, value in comps.items():
            sums[name] = sums.get(name, 0.0) + value.item() * len(batch)
        count += len(batch)
    return {k: v / count for k, v in sums.items()}


def _record(trace, epoch, comps, weights):
    for name in obj.COMPONENTS:
        if name in comps:
            trace.append((epoch, name, float(comps[name])))
    total = sum(weights.of(name) * comps[name] for name in obj.COMPONENTS if name in comps)
    trace.append((epoch, "total", float(total)))


def write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "component", "value"])
        for epoch, comp, value in trace:
            w.writerow([epoch, comp, repr(float(value))])


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["epoch"]), r["component"], float(r["value"])) for r in csv.DictReader(fh)]


def write_valid_trace(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "metric", "K", "value"])
        for row in rows:
            w.writerow([row[0], row[1], row[2], repr(float(row[3]))])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def make_checkpoint(model, config, epoch, rng, gen, dataset=None, best_epoch=None):
    params = {k: v.detach().cpu().numpy().astype("<f8", copy=True) for k, v in model.state_dict().items()}
    return Checkpoint(
        params=params,
        config=config.to_dict(),
        model=model.cfg.to_dict(),
        epoch=int(epoch),
        rng={
            "numpy": rng.bit_generator.state,
            "torch": base64.b64encode(gen.get_state().numpy().tobytes()).decode("ascii"),
        },
        meta={
            "dataset": getattr(dataset, "fingerprint", "") if dataset is not None else "",
            "best_epoch": int(best_epoch if best_epoch is not None else epoch),
        },
    )


def save_checkpoint(ckpt, path):
    """Layout: magic, u32 version, u64 manifest length, JSON manifest, little-endian f8 blob."""
    blob = io.BytesIO()
    arrays = []
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        raw = arr.tobytes()
        arrays.append({"name": name, "shape": list(arr.shape), "offset": blob.tell(),
                       "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        blob.write(raw)
    manifest = json.dumps({
        "arrays": arrays, "config": ckpt.config, "model": ckpt.model,
        "epoch": ckpt.epoch, "rng": ckpt.rng, "meta": ckpt.meta,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)))
        fh.write(manifest)
        fh.write(blob.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header ({len(raw)} bytes, need {_HEADER.size} at offset 0)")
    magic, version, mlen = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes at offset 0")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    start = _HEADER.size
    if start + mlen > len(raw):
        raise CheckpointError(f"{path}: manifest at offset {start} needs {mlen} bytes, file has {len(raw) - start}")
    try:
        manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest at offset {start}: {exc}") from None
    base = start + mlen
    params = {}
    for a in manifest["arrays"]:
        lo = base + a["offset"]
        hi = lo + a["nbytes"]
        if hi > len(raw):
            raise CheckpointError(f"{path}: array {a['name']!r} spans bytes {lo}..{hi} but file ends at {len(raw)}")
        chunk = raw[lo:hi]
        if zlib.crc32(chunk) != a["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch in array {a['name']!r} at offset {lo}")
        params[a["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(a["shape"]).copy()
    return Checkpoint(params=params, config=manifest["config"], model=manifest["model"],
                      epoch=manifest["epoch"], rng=manifest["rng"], meta=manifest["meta"])


def model_from_checkpoint(ckpt, dataset, expect_ablation=None):
    """Rebuild a model bound to ``dataset``; raises on ablation or shape mismatch."""
    if expect_ablation is not None and ckpt.ablation != expect_ablation:
        raise CheckpointError(
            f"checkpoint was trained with ablation {ckpt.ablation!r}, not {expect_ablation!r}")
    cfg = ModelConfig(**ckpt.model)
    fp = ckpt.meta.get("dataset")
    if fp and dataset.fingerprint and fp != dataset.fingerprint:
        raise CheckpointError(f"checkpoint was trained on dataset {fp}, got {dataset.fingerprint}")
    model = MintModel(cfg).attach(dataset)
    load_params(model, ckpt.params)
    model.eval()
    return model


def load_params(model, params):
    expected = model.state_dict()
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"incompatible checkpoint: missing {missing}, unexpected {extra}")
    for k, v in expected.items():
        if tuple(v.shape) != tuple(params[k].shape):
            raise CheckpointError(f"incompatible checkpoint: {k} has shape {params[k].shape}, expected {tuple(v.shape)}")
    model.load_state_dict({k: torch.as_tensor(v, dtype=expected[k].dtype) for k, v in params.items()})
