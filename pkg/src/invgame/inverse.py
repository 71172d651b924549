"""Inverse game: fit the joint cost net so the equilibrium explains demonstrations.

Demonstrated H-step control sequences are scored under each agent's
equilibrium mixed strategy with a Gaussian kernel around every candidate.
Gradients flow through a fixed number of unrolled best-response iterations.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tn
from .config import GameConfig, InverseConfig
from .dataset import Dataset, make_observation
from .game import JointCostNet, all_pair_costs, solve_nash_costs
from .optim import Adam
from .policy import CandidateSet, GenerativePolicy, sample_candidates
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


class InverseTrainingError(FloatingPointError):
    def __init__(self, msg: str, checkpoint: JointCostNet | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class JointWindow:
    """All agents of one demonstration at step t, with their next H controls."""

    demo: int
    t: int
    joint_states: np.ndarray  # (M, 3)
    observations: np.ndarray  # (M, 3)
    controls: np.ndarray  # (M, H, 2)

    @property
    def key(self) -> tuple[int, int]:
        return (self.demo, self.t)


def extract_joint_windows(dataset: Dataset, H: int, stride: int = 1) -> list[JointWindow]:
    if H < 1 or stride < 1:
        raise ValueError("H and stride must be at least 1")
    out = []
    for i, demo in enumerate(dataset.demos):
        xs, us = demo.joint_states(), demo.joint_controls()
        params = demo.config.params
        for t in range(0, demo.T - H + 1, stride):
            obs = np.stack([make_observation(xs[t], j, p.goal, p.v_pref) for j, p in enumerate(params)])
            out.append(JointWindow(i, t, xs[t].copy(), obs, np.ascontiguousarray(us[t : t + H].transpose(1, 0, 2))))
    return out


def candidate_seed(base: int, demo: int, agent: int, t: int) -> int:
    return int(np.random.SeedSequence([base, demo, agent, t]).generate_state(1)[0])


def window_candidates(policy: GenerativePolicy, window: JointWindow, K: int, seed: int, dt: float = 0.1) -> list[CandidateSet]:
    out = []
    for j in range(len(window.joint_states)):
        cs = sample_candidates(
            policy, window.observations[j], window.joint_states[j], K, candidate_seed(seed, window.demo, j, window.t), j, dt
        )
        if not np.all(np.isfinite(cs.controls)):
            raise InverseTrainingError(f"window {window.key}: non-finite candidates for agent {j}")
        out.append(cs)
    return out


def kernel_logits(candidates: np.ndarray, demo: np.ndarray, h: float) -> np.ndarray:
    """Per-candidate log Gaussian kernel (without normalizer) at the demo."""
    d = (np.asarray(candidates) - np.asarray(demo)[None]) / h
    return -0.5 * np.sum(d.reshape(len(d), -1) ** 2, axis=1)


def kde_loglik(weights, candidates, demo, h: float):
    """log sum_m w_m N(demo; cand_m, h^2 I) over all 2H coordinates.

    ``weights`` may be a Tensor (the result is then a Tensor) or an array.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    demo = np.asarray(demo, dtype=np.float64)
    if candidates.shape[1:] != demo.shape:
        raise ValueError(f"demo shape {demo.shape} does not match candidates {candidates.shape[1:]}")
    ell = kernel_logits(candidates, demo, h)
    top = float(ell.max())
    norm = 0.5 * demo.size * math.log(2.0 * math.pi * h * h)
    kern = np.exp(ell - top)
    if isinstance(weights, Tensor):
        mix = (weights * kern).sum()
        return tn.log(mix) + (top - norm)
    mix = float(np.dot(np.asarray(weights, dtype=np.float64), kern))
    if not mix > 0.0:
        raise tn.NonFiniteError("mixture density underflow")
    return math.log(mix) + top - norm


def _window_nll(
    net: JointCostNet,
    params: dict,
    window: JointWindow,
    candidates: Sequence[CandidateSet],
    hyper: InverseConfig,
    game: GameConfig,
) -> Tensor:
    costs = all_pair_costs(net, candidates, params)
    sol = solve_nash_costs(
        costs, len(candidates[0]), damping=game.damping, tol=game.tol, temperature=game.temperature, unroll=hyper.unroll
    )
    W = sol.weights_tensor
    total = None
    for j, cs in enumerate(candidates):
        ll = kde_loglik(W[j], cs.controls, window.controls[j], hyper.bandwidth)
        total = ll if total is None else total + ll
    return -total


def window_nll(
    net: JointCostNet,
    policy: GenerativePolicy,
    window: JointWindow,
    hyper: InverseConfig | None = None,
    seed: int | None = None,
    game: GameConfig | None = None,
    params: dict | None = None,
    candidates: Sequence[CandidateSet] | None = None,
) -> Tensor:
    """Negative KDE log-likelihood of every agent's demo under the equilibrium."""
    hyper = hyper or InverseConfig()
    game = game or GameConfig()
    if candidates is None:
        candidates = window_candidates(policy, window, hyper.n_candidates, hyper.seed if seed is None else seed)
    out = _window_nll(net, net.params if params is None else params, window, candidates, hyper, game)
    if not np.isfinite(out.value):
        raise tn.NonFiniteError(f"window {window.key}: non-finite NLL")
    return out


def uniform_nll(window: JointWindow, candidates: Sequence[CandidateSet], h: float) -> float:
    """NLL with every agent weighting its candidates uniformly."""
    return -sum(
        kde_loglik(np.full(len(cs), 1.0 / len(cs)), cs.controls, window.controls[j], h) for j, cs in enumerate(candidates)
    )


def grad_gamma(
    net: JointCostNet,
    windows: Sequence[JointWindow],
    candidates: Sequence[Sequence[CandidateSet]],
    hyper: InverseConfig | None = None,
    game: GameConfig | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch NLL and its exact gradient with respect to every net parameter.

    Windows are accumulated in the given order so the result does not depend
    on scheduling.
    """
    hyper = hyper or InverseConfig()
    game = game or GameConfig()
    if not windows:
        raise ValueError("empty batch")
    names = list(net.params)
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in net.params.items()}
    for w, cands in zip(windows, candidates):
        tape = Tape()
        leaves = {k: tape.leaf(net.params[k]) for k in names}
        try:
            loss = _window_nll(net, leaves, w, cands, hyper, game)
        except tn.NonFiniteError as exc:
            raise InverseTrainingError(f"window {w.key}: {exc}") from None
        g = tape.backward(loss)
        for k in names:
            gk = g[leaves[k].node]
            if not np.all(np.isfinite(gk)):
                raise InverseTrainingError(f"window {w.key}: non-finite gradient")
            acc[k] += gk
        total += loss.item()
    n = float(len(windows))
    return total / n, {k: v / n for k, v in acc.items()}


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def add(self, epoch: int, nll: float, grad_norm: float, seconds: float) -> None:
        if not math.isfinite(nll):
            raise InverseTrainingError(f"epoch {epoch}: non-finite NLL")
        self.epochs.append(epoch)
        self.nll.append(nll)
        self.grad_norm.append(grad_norm)
        self.seconds.append(seconds)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "nll", "grad_norm", "seconds"])
            for row in zip(self.epochs, self.nll, self.grad_norm, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])


def _mean_nll(net, windows, cands, hyper, game) -> float:
    return float(
        np.mean([_window_nll(net, net.params, w, c, hyper, game).item() for w, c in zip(windows, cands)])
    )


def train_game(
    dataset: Dataset,
    policy: GenerativePolicy,
    hyper: InverseConfig | None = None,
    game: GameConfig | None = None,
    checkpoint_dir: str | Path | None = None,
    dt: float = 0.1,
) -> tuple[JointCostNet, TrainReport]:
    """Adam minimization of the mean window NLL; deterministic in ``hyper.seed``.

    Row 0 of the report is the NLL of the initial (zero-output) net; row e is
    the full-dataset NLL after epoch e. The gradient norm column holds the
    mean minibatch gradient norm of that epoch.
    """
    hyper = hyper or InverseConfig()
    game = game or GameConfig()
    if not len(dataset):
        raise ValueError("empty dataset")
    windows = extract_joint_windows(dataset, policy.horizon, hyper.window_stride)
    cands = [window_candidates(policy, w, hyper.n_candidates, hyper.seed, dt) for w in windows]
    log.info("inverse game: %d windows, K=%d", len(windows), hyper.n_candidates)
    net = JointCostNet.init(hyper.seed, game.hidden, game.init_scale)
    report = TrainReport()
    t0 = time.perf_counter()
    report.add(0, _mean_nll(net, windows, cands, hyper, game), 0.0, time.perf_counter() - t0)
    opt = Adam(net.params, lr=hyper.learning_rate)
    rng = np.random.default_rng(hyper.seed)
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    for epoch in range(1, hyper.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(windows))
        norms = []
        last_good = {k: v.copy() for k, v in net.params.items()}
        for b in range(0, len(order), hyper.batch_size):
            idx = sorted(order[b : b + hyper.batch_size])
            try:
                _, grads = grad_gamma(net, [windows[i] for i in idx], [cands[i] for i in idx], hyper, game)
            except InverseTrainingError as exc:
                net.params = last_good
                raise InverseTrainingError(str(exc), net) from None
            norms.append(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
            opt.step(grads)
        nll = _mean_nll(net, windows, cands, hyper, game)
        if not math.isfinite(nll):
            net.params = last_good
            raise InverseTrainingError(f"epoch {epoch}: non-finite NLL", net)
        report.add(epoch, nll, float(np.mean(norms)), time.perf_counter() - start)
        log.info("game epoch %d: NLL %.4f (grad norm %.3g)", epoch, nll, report.grad_norm[-1])
        if ckpt is not None:
            net.save(ckpt / f"joint_cost_epoch{epoch:03d}.json")
        opt.lr *= hyper.lr_decay
    return net, report
