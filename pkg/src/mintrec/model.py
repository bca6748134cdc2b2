"""The recommender: disentangled VAE encoders feeding graph propagation and scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import graph as gp
from . import objectives as obj
from . import vae
from .data import adjacency_from_edges
from .vae import DTYPE

ABLATIONS = ("full", "w_vae", "wo_senior")
PRECISIONS = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class ModelConfig:
    m: int
    n_threads: int
    n_stages: int
    T: int
    d_thread: int = 8
    d_stage: int = 8
    d_x: int = 8
    d_z: int = 8
    hidden: int = 32
    hidden_x: int = 96
    layers: int = 3
    layer_average: str = "mean"
    graph_decoder: bool = True
    ablation: str = "full"
    constraint_mode: str = "hinge"
    init_log_sigma: float = -3.0
    x_mean_gain: float = 4.0
    feature_std: float = 1.0
    detach_target: bool = True
    precision: str = "float64"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.constraint_mode not in ("hinge", "raw"):
            raise ValueError("constraint_mode must be 'hinge' or 'raw'")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")

    def to_dict(self):
        return asdict(self)


class MintModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d_u = cfg.d_thread + cfg.d_stage
        self.tables = vae.EmbeddingTables(cfg.n_threads, cfg.n_stages, cfg.d_thread, cfg.d_stage, cfg.feature_std)
        self.prior = vae.PriorNet(cfg.d_z, cfg.hidden)
        self.varying = vae.VaryingEncoder(d_u, cfg.d_z, cfg.hidden, cfg.init_log_sigma)
        if cfg.ablation == "w_vae":
            self.static_x = nn.Embedding(cfg.m, cfg.d_x, dtype=DTYPE)
            nn.init.normal_(self.static_x.weight, std=0.1)
            self.invariant = None
            self.decoder = vae.Decoder(cfg.d_z, d_u, cfg.hidden)
        else:
            self.static_x = None
            self.invariant = vae.InvariantEncoder(d_u, cfg.d_x, cfg.hidden_x, cfg.init_log_sigma, cfg.x_mean_gain)
            self.decoder = vae.Decoder(cfg.d_x + cfg.d_z, d_u, cfg.hidden)
        self._data = None
        # parameters are always initialised in double precision, then cast
        self.dtype = PRECISIONS[cfg.precision]
        self.to(self.dtype)

    # ------------------------------------------------------------------ data
    def attach(self, dataset, train_idx=None):
        """Bind timelines and the training graph; rebuilds every graph operator."""
        if dataset.m != self.cfg.m or dataset.T != self.cfg.T:
            raise ValueError("dataset does not match model dimensions")
        idx = dataset.split["train"] if train_idx is None else train_idx
        pairs = dataset.graph.pairs
        seekers, helpers, steps = pairs["seeker"][idx], pairs["helper"][idx], pairs["seeker_step"][idx]
        m, T = self.cfg.m, self.cfg.T
        adj = adjacency_from_edges(seekers, helpers, m)
        self.a_hat = gp.to_torch(gp.normalize_adjacency(adj.A), self.dtype)
        self.step_ops = None
        if self.cfg.graph_decoder and self.invariant is not None:
            self.step_ops = [gp.to_torch(gp.neighbor_operator(seekers[steps < t], helpers[steps < t], m), self.dtype)
                             for t in range(1, T + 1)]
        is_seeker = np.zeros(m, dtype=bool)
        is_helper = np.zeros(m, dtype=bool)
        is_seeker[seekers] = True
        is_helper[helpers] = True
        self._data = {
            "threads": torch.as_tensor(dataset.threads, dtype=torch.long),
            "stages": torch.as_tensor(dataset.stages, dtype=torch.long),
            "mask": torch.as_tensor(dataset.mask, dtype=torch.bool),
            "seniority": torch.as_tensor(dataset.seniority, dtype=self.dtype),
            "is_seeker": is_seeker,
            "is_helper": is_helper,
        }
        return self

    @property
    def train_seekers(self):
        return np.flatnonzero(self._data["is_seeker"])

    @property
    def known_seeker_mask(self):
        return self._data["is_seeker"]

    @property
    def train_helpers(self):
        return np.flatnonzero(self._data["is_helper"])

    def features(self, patients=None):
        d = self._data
        sel = slice(None) if patients is None else torch.as_tensor(patients, dtype=torch.long)
        return vae.embed_features(d["threads"][sel], d["stages"][sel], d["mask"][sel], self.tables), d["mask"][sel]

    # -------------------------------------------------------------- forward
    def invariant_params(self, u_all=None, mask_all=None):
        if self.invariant is None:
            return None
        if u_all is None:
            u_all, mask_all = self.features()
        return self.invariant(u_all, mask_all)

    def propagate(self, x):
        e = gp.propagate(torch.cat([x, x], 0), self.a_hat, self.cfg.layers, self.cfg.layer_average)
        return e.averaged

    def batch_losses(self, batch, gen):
        """Unweighted loss components for a triplet batch; ``gen`` drives the sampling noise."""
        cfg = self.cfg
        m = cfg.m
        u_all, mask_all = self.features()
        x_params_all = self.invariant_params(u_all, mask_all)
        if x_params_all is None:
            x_all = self.static_x.weight
        else:
            x_all = vae.reparameterize(x_params_all, _noise(x_params_all.mu, gen))
        e = self.propagate(x_all)
        comps = {"bpr": obj.bpr_loss(e[:m], e[m:], batch.seeker, batch.pos, batch.neg)}

        patients, inv = np.unique(np.concatenate([batch.seeker, batch.pos, batch.neg]), return_inverse=True)
        p_t = torch.as_tensor(patients, dtype=torch.long)
        u, mask = u_all[p_t], mask_all[p_t]
        z_params = self.varying(u)
        z = vae.reparameterize(z_params, _noise(z_params.mu, gen))
        prior = self.prior(z)
        if x_params_all is None:
            recon = self.decoder(z)
            x_params = None
        else:
            x_params = x_params_all[p_t]
            recon = self.decoder(self._decoder_condition(x_all, p_t), z)
        target = u.detach() if cfg.detach_target else u
        comps["dis"] = vae.elbo_loss(target, mask, x_params, z_params, recon, prior)
        comps["smo"] = obj.smoothness_loss(z, mask)
        sen = self._data["seniority"][p_t]
        comps["reg"] = obj.monotonic_regularizer(z, sen, mask)
        n = len(batch)
        rows_s = torch.as_tensor(inv[:n])
        rows_h = torch.as_tensor(inv[n:2 * n])
        z_p = z[rows_s, torch.as_tensor(batch.seeker_step)]
        z_q = z[rows_h, torch.as_tensor(batch.helper_step)]
        comps["cons"] = obj.seniority_constraint_loss(z_p, z_q, cfg.constraint_mode)
        return comps

    def _decoder_condition(self, x_all, p_t):
        T = self.cfg.T
        if self.step_ops is None:
            return x_all[p_t].unsqueeze(1).expand(-1, T, -1)
        return torch.stack([(op @ x_all)[p_t] for op in self.step_ops], dim=1)

    # ------------------------------------------------------------ inference
    @torch.no_grad()
    def invariant_embeddings(self):
        """Propagated embeddings (2m, D_x) built from posterior means."""
        if self.invariant is None:
            x = self.static_x.weight
        else:
            x = self.invariant_params().mu
        return self.propagate(x)

    @torch.no_grad()
    def x_means(self):
        if self.invariant is None:
            return self.static_x.weight.clone()
        return self.invariant_params().mu

    @torch.no_grad()
    def z_means(self, patients=None):
        u, _ = self.features(patients)
        return self.varying(u).mu

    @torch.no_grad()
    def helper_scores(self, seekers, helpers=None):
        """Dot-product scores (len(seekers), len(helpers)) as a numpy array."""
        e = self.invariant_embeddings()
        m = self.cfg.m
        helpers = self.train_helpers if helpers is None else np.asarray(helpers)
        e_p = e[torch.as_tensor(np.asarray(seekers), dtype=torch.long)]
        e_q = e[torch.as_tensor(m + helpers, dtype=torch.long)]
        return (e_p @ e_q.T).numpy()


def _noise(like, gen):
    return torch.randn(like.shape, generator=gen, dtype=like.dtype)
