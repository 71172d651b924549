"""Non-interactive generative policy: a CVAE over H-step control sequences.

The encoder sees the ego observation and a demonstrated sequence and
outputs a diagonal Gaussian over a small latent; the decoder maps the
observation and a latent sample back to a control sequence. Inputs and
outputs are standardized with statistics fixed at training time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tn
from .config import PolicyConfig
from .dataset import TrainingWindow, make_observation
from .dynamics import clamp_controls, rollout_array
from .optim import Adam
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "invgame-policy"
CHECKPOINT_VERSION = 1
OBS_DIM = 3

__all__ = [
    "GenerativePolicy",
    "CandidateSet",
    "make_observation",
    "elbo",
    "elbo_terms",
    "train_policy",
    "sample_candidates",
]


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg: str, checkpoint: GenerativePolicy):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class GenerativePolicy:
    horizon: int
    latent_dim: int
    hidden: int
    sigma_rec: float
    params: dict[str, np.ndarray]
    norm: dict[str, np.ndarray]
    logvar_min: float = -6.0
    logvar_max: float = 2.0
    curve: list[float] = field(default_factory=list)

    @classmethod
    def init(
        cls,
        horizon: int = 10,
        latent_dim: int = 4,
        hidden: int = 64,
        sigma_rec: float = 0.1,
        seed: int = 0,
        logvar_min: float = -6.0,
        logvar_max: float = 2.0,
    ) -> GenerativePolicy:
        rng = np.random.default_rng(seed)
        act = 2 * horizon

        def dense(n_in, n_out):
            return rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)), np.zeros(n_out)

        p = {}
        p["enc_w1"], p["enc_b1"] = dense(OBS_DIM + act, hidden)
        p["enc_wmu"], p["enc_bmu"] = dense(hidden, latent_dim)
        p["enc_wlv"], p["enc_blv"] = dense(hidden, latent_dim)
        p["dec_w1"], p["dec_b1"] = dense(OBS_DIM + latent_dim, hidden)
        p["dec_w2"], p["dec_b2"] = dense(hidden, act)
        norm = {
            "obs_mean": np.zeros(OBS_DIM),
            "obs_std": np.ones(OBS_DIM),
            "act_mean": np.zeros(act),
            "act_std": np.ones(act),
        }
        return cls(horizon, latent_dim, hidden, sigma_rec, p, norm, logvar_min, logvar_max)

    # -- network pieces (work with or without a tape) --

    def encode(self, params: dict, obs: np.ndarray, actions: np.ndarray) -> tuple[Tensor, Tensor]:
        n = self.norm
        x = np.concatenate(
            [(obs - n["obs_mean"]) / n["obs_std"], (actions - n["act_mean"]) / n["act_std"]], axis=-1
        )
        h = tn.tanh(tn.matmul(x, params["enc_w1"]) + params["enc_b1"])
        mu = tn.matmul(h, params["enc_wmu"]) + params["enc_bmu"]
        logvar = tn.clip(tn.matmul(h, params["enc_wlv"]) + params["enc_blv"], self.logvar_min, self.logvar_max)
        return mu, logvar

    def decode(self, params: dict, obs: np.ndarray, z) -> Tensor:
        n = self.norm
        obs_n = tn.constant((obs - n["obs_mean"]) / n["obs_std"])
        x = tn.concat([obs_n, z if isinstance(z, Tensor) else tn.constant(z)], axis=-1)
        h = tn.tanh(tn.matmul(x, params["dec_w1"]) + params["dec_b1"])
        out = tn.matmul(h, params["dec_w2"]) + params["dec_b2"]
        return out * n["act_std"] + n["act_mean"]

    def decode_mean(self, obs, z) -> np.ndarray:
        """Decoder output as (..., H, 2) controls, no tape."""
        obs = np.asarray(obs, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        obs_b = np.broadcast_to(obs, z.shape[:-1] + (OBS_DIM,))
        out = self.decode(self.params, obs_b, z).value
        return out.reshape(out.shape[:-1] + (self.horizon, 2))

    # -- persistence --

    def to_dict(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "version": CHECKPOINT_VERSION,
            "horizon": self.horizon,
            "latent_dim": self.latent_dim,
            "hidden": self.hidden,
            "sigma_rec": self.sigma_rec,
            "logvar_min": self.logvar_min,
            "logvar_max": self.logvar_max,
            "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in self.params.items()},
            "norm": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in self.norm.items()},
            "curve": list(self.curve),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GenerativePolicy:
        if d.get("kind") != CHECKPOINT_KIND or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a version-{CHECKPOINT_VERSION} policy checkpoint")
        unpack = lambda group: {
            k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in group.items()
        }
        return cls(
            d["horizon"], d["latent_dim"], d["hidden"], d["sigma_rec"],
            unpack(d["params"]), unpack(d["norm"]), d["logvar_min"], d["logvar_max"], list(d.get("curve", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> GenerativePolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))


def elbo_terms(
    policy: GenerativePolicy, params: dict, obs, actions, eps
) -> tuple[Tensor, Tensor]:
    """Per-sample Gaussian reconstruction log-likelihood and KL to N(0, I)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    acts = np.asarray(actions, dtype=np.float64).reshape(len(obs), -1)
    eps = np.asarray(eps, dtype=np.float64).reshape(len(obs), -1)
    mu, logvar = policy.encode(params, obs, acts)
    z = mu + tn.exp(logvar * 0.5) * eps
    recon_mean = policy.decode(params, obs, z)
    sig = policy.sigma_rec
    d = acts.shape[1]
    sq = tn.square((recon_mean - acts) / sig).sum(axis=1)
    recon = sq * -0.5 - 0.5 * d * math.log(2.0 * math.pi * sig * sig)
    kl = (tn.exp(logvar) + tn.square(mu) - 1.0 - logvar).sum(axis=1) * 0.5
    return recon, kl


def elbo(policy: GenerativePolicy, obs, actions, eps=None, params: dict | None = None) -> Tensor:
    """Evidence lower bound of ``actions`` (H, 2) given ``obs``; scalar Tensor.

    ``eps`` is the reparameterization noise (zeros if omitted). ``params``
    may map names to taped leaves for differentiation.
    """
    params = policy.params if params is None else params
    if eps is None:
        eps = np.zeros(policy.latent_dim)
    recon, kl = elbo_terms(policy, params, obs, actions, eps)
    out = (recon - kl).sum()
    if not np.isfinite(out.value):
        raise tn.NonFiniteError("non-finite ELBO")
    return out


def _fit_norm(policy: GenerativePolicy, obs: np.ndarray, acts: np.ndarray) -> None:
    policy.norm = {
        "obs_mean": obs.mean(axis=0),
        "obs_std": np.maximum(obs.std(axis=0), 1e-3),
        "act_mean": acts.mean(axis=0),
        "act_std": np.maximum(acts.std(axis=0), 1e-3),
    }


def train_policy(
    windows: Sequence[TrainingWindow],
    epochs: int = 60,
    batch_size: int = 256,
    learning_rate: float = 2e-3,
    seed: int = 1,
    config: PolicyConfig | None = None,
) -> GenerativePolicy:
    """Fit the CVAE by Adam ascent on the mean ELBO; deterministic in ``seed``."""
    if not windows:
        raise ValueError("no training windows")
    cfg = config or PolicyConfig()
    H = len(windows[0].controls)
    policy = GenerativePolicy.init(
        H, cfg.latent_dim, cfg.hidden, cfg.sigma_rec, seed, cfg.logvar_min, cfg.logvar_max
    )
    obs = np.stack([w.observation for w in windows])
    acts = np.stack([w.controls.reshape(-1) for w in windows])
    _fit_norm(policy, obs, acts)
    rng = np.random.default_rng(seed)
    opt = Adam(policy.params, lr=learning_rate)
    last_good = {k: v.copy() for k, v in policy.params.items()}
    n = len(obs)
    names = list(policy.params)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            eps = rng.standard_normal((len(idx), policy.latent_dim))
            tape = Tape()
            leaves = {k: tape.leaf(policy.params[k]) for k in names}
            try:
                recon, kl = elbo_terms(policy, leaves, obs[idx], acts[idx], eps)
                loss = (kl - recon).sum() / float(len(idx))
            except tn.NonFiniteError as exc:
                policy.params = last_good
                raise TrainingDiverged(f"epoch {epoch}: {exc}", policy) from None
            grads = tape.backward(loss)
            opt.step({k: grads[leaves[k].node] for k in names})
            total -= loss.item() * len(idx)
        mean_elbo = total / n
        if not np.isfinite(mean_elbo) or not all(np.isfinite(v).all() for v in policy.params.values()):
            policy.params = last_good
            raise TrainingDiverged(f"epoch {epoch}: non-finite ELBO", policy)
        last_good = {k: v.copy() for k, v in policy.params.items()}
        policy.curve.append(mean_elbo)
        log.info("policy epoch %d: mean ELBO %.4f", epoch, mean_elbo)
    return policy


@dataclass
class CandidateSet:
    """K sampled control sequences of one agent and their rollouts.

    Candidates are ordered by decreasing prior density of their latent
    sample, so index 0 is the most typical one.
    """

    agent: int
    controls: np.ndarray  # (K, H, 2)
    states: np.ndarray  # (K, H+1, 3)
    log_prior: np.ndarray  # (K,)

    def __len__(self) -> int:
        return len(self.controls)


def sample_candidates(
    policy: GenerativePolicy,
    obs,
    state,
    K: int,
    seed: int,
    agent: int = 0,
    dt: float = 0.1,
) -> CandidateSet:
    """Decode K latent draws into clamped control sequences and roll them out."""
    if K < 2:
        raise ValueError("need at least two candidates")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((K, policy.latent_dim))
    sq = np.sum(z * z, axis=1)
    order = np.argsort(sq, kind="stable")
    z = z[order]
    log_prior = -0.5 * sq[order] - 0.5 * policy.latent_dim * math.log(2.0 * math.pi)
    controls = clamp_controls(policy.decode_mean(obs, z))
    states = rollout_array(np.broadcast_to(np.asarray(state, dtype=np.float64), (K, 3)), controls, dt)
    return CandidateSet(agent, controls, states, log_prior)
