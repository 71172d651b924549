"""Interaction game over sampled candidate sequences.

Each agent holds a mixed strategy over its K candidates. Its objective is
the expected pairwise joint cost against every other agent plus a KL term
against the (uniform) sample prior, so the best response is a softmin of
expected costs. The equilibrium is found by damped simultaneous best
responses; the same code runs on a tape for differentiation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tn
from .policy import CandidateSet
from .tensor import Tensor

FEATURE_VERSION = "pair-features-v1"
FEATURE_DIM = 8
CHECKPOINT_KIND = "invgame-joint-cost"
CHECKPOINT_VERSION = 1


class NashInputError(ValueError):
    pass


# -- features ------------------------------------------------------------------


def pair_features(s_j, u_j, s_k, u_k) -> np.ndarray:
    """Features of (agent j, agent k) at one step, from j's point of view.

    Broadcasts over leading axes: relative position of k in j's frame (2),
    cos/sin of k's heading relative to j (2), then u_j (2) and u_k (2).
    """
    s_j, s_k = np.asarray(s_j, dtype=np.float64), np.asarray(s_k, dtype=np.float64)
    u_j, u_k = np.asarray(u_j, dtype=np.float64), np.asarray(u_k, dtype=np.float64)
    dx = s_k[..., 0] - s_j[..., 0]
    dy = s_k[..., 1] - s_j[..., 1]
    c, s = np.cos(s_j[..., 2]), np.sin(s_j[..., 2])
    rel = s_k[..., 2] - s_j[..., 2]
    shape = np.broadcast_shapes(dx.shape, u_j.shape[:-1], u_k.shape[:-1])
    out = np.empty(shape + (FEATURE_DIM,))
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = np.cos(rel)
    out[..., 3] = np.sin(rel)
    out[..., 4:6] = u_j
    out[..., 6:8] = u_k
    return out


def candidate_pair_features(cand_j: CandidateSet, cand_k: CandidateSet) -> np.ndarray:
    """(K_j, K_k, H, 8) features for every candidate pairing and step t < H."""
    H = cand_j.controls.shape[1]
    if cand_k.controls.shape[1] != H:
        raise NashInputError("candidate horizons differ")
    sj = cand_j.states[:, None, :H, :]
    sk = cand_k.states[None, :, :H, :]
    return pair_features(sj, cand_j.controls[:, None], sk, cand_k.controls[None, :])


# -- network -------------------------------------------------------------------


@dataclass
class JointCostNet:
    """MLP l(features) with tanh hidden layers and a linear scalar output."""

    params: dict[str, np.ndarray]
    hidden: tuple[int, ...]

    @classmethod
    def init(cls, seed: int = 0, hidden: Sequence[int] = (32, 32), init_scale: float = 0.1) -> JointCostNet:
        rng = np.random.default_rng(seed)
        sizes = [FEATURE_DIM, *hidden]
        params = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"w{i}"] = rng.normal(0.0, init_scale / math.sqrt(a), (a, b))
            params[f"b{i}"] = np.zeros(b)
        n = len(hidden)
        params[f"w{n}"] = np.zeros((sizes[-1], 1))
        params[f"b{n}"] = np.zeros(1)
        return cls(params, tuple(int(h) for h in hidden))

    @classmethod
    def zeros(cls, hidden: Sequence[int] = (32, 32)) -> JointCostNet:
        net = cls.init(0, hidden)
        net.params = {k: np.zeros_like(v) for k, v in net.params.items()}
        return net

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def forward(self, features, params: dict | None = None) -> Tensor:
        """Per-row cost of a (N, 8) feature array; shape (N,)."""
        p = self.params if params is None else params
        h = features
        for i in range(self.n_layers - 1):
            h = tn.tanh(tn.matmul(h, p[f"w{i}"]) + p[f"b{i}"])
        n = self.n_layers - 1
        out = tn.matmul(h, p[f"w{n}"]) + p[f"b{n}"]
        return out.reshape(-1)

    def __call__(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        return self.forward(f.reshape(-1, FEATURE_DIM)).value.reshape(f.shape[:-1])

    def to_dict(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "version": CHECKPOINT_VERSION,
            "features": FEATURE_VERSION,
            "hidden": list(self.hidden),
            "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> JointCostNet:
        if d.get("kind") != CHECKPOINT_KIND or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a version-{CHECKPOINT_VERSION} joint-cost checkpoint")
        if d.get("features") != FEATURE_VERSION:
            raise ValueError(f"feature order {d.get('features')!r} is not {FEATURE_VERSION!r}")
        params = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(params, tuple(d["hidden"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> JointCostNet:
        return cls.from_dict(json.loads(Path(path).read_text()))


def pair_cost_matrix(net: JointCostNet, cand_j: CandidateSet, cand_k: CandidateSet, params: dict | None = None) -> Tensor:
    """C[m, n] = sum over t < H of l(features of candidate m of j, candidate n of k)."""
    f = candidate_pair_features(cand_j, cand_k)
    kj, kk, H, _ = f.shape
    out = net.forward(f.reshape(-1, FEATURE_DIM), params).reshape(kj, kk, H).sum(axis=2)
    if not np.all(np.isfinite(out.value)):
        raise tn.NonFiniteError("non-finite pair cost")
    return out


@dataclass
class PairCosts:
    """Cost matrices of every ordered pair (j, k), j != k, stacked as (P, K, K)."""

    pairs: list[tuple[int, int]]
    matrices: Tensor
    n_agents: int

    def matrix(self, j: int, k: int) -> np.ndarray:
        return self.matrices.value[self.pairs.index((j, k))]


def all_pair_costs(net: JointCostNet, candidates: Sequence[CandidateSet], params: dict | None = None) -> PairCosts:
    """One batched network pass over all ordered agent pairs."""
    M = len(candidates)
    if M < 1:
        raise NashInputError("no candidate sets")
    K = len(candidates[0])
    if any(len(c) != K for c in candidates):
        raise NashInputError("all agents need the same number of candidates")
    pairs = [(j, k) for j in range(M) for k in range(M) if j != k]
    if not pairs:
        return PairCosts(pairs, tn.constant(np.zeros((0, K, K))), M)
    feats = np.stack([candidate_pair_features(candidates[j], candidates[k]) for j, k in pairs])
    P, _, _, H, _ = feats.shape
    mats = net.forward(feats.reshape(-1, FEATURE_DIM), params).reshape(P, K, K, H).sum(axis=3)
    if not np.all(np.isfinite(mats.value)):
        raise tn.NonFiniteError("non-finite pair cost")
    return PairCosts(pairs, mats, M)


# -- equilibrium ---------------------------------------------------------------


def best_response(expected_costs, temperature: float = 1.0):
    """Softmin of expected costs: the minimizer of w.c + T * KL(w || uniform)."""
    c = expected_costs
    if isinstance(c, Tensor):
        return tn.softmax(c * (-1.0 / temperature), axis=-1)
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise NashInputError("expected costs must be finite")
    z = -c / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class NashSolution:
    weights: np.ndarray  # (M, K)
    iterations: int
    residual: float
    converged: bool
    weights_tensor: Tensor | None = None

    def strategy(self, j: int) -> np.ndarray:
        return self.weights[j]


def _expected_costs(costs: PairCosts, W, K: int):
    """c_j = sum over k != j of C_jk w_k, shape (M, K)."""
    P = len(costs.pairs)
    ks = np.array([k for _, k in costs.pairs])
    sel = np.zeros((costs.n_agents, P))
    for p, (j, _) in enumerate(costs.pairs):
        sel[j, p] = 1.0
    wk = tn.gather(W, ks, axis=0).reshape(P, 1, K)
    per_pair = (costs.matrices * wk).sum(axis=2)
    return tn.matmul(sel, per_pair)


def solve_nash_costs(
    costs: PairCosts,
    K: int,
    max_iters: int = 50,
    damping: float = 0.5,
    tol: float = 1e-8,
    temperature: float = 1.0,
    unroll: int | None = None,
) -> NashSolution:
    """Damped Jacobi best-response iteration from uniform strategies.

    With ``unroll`` set, exactly that many iterations run (the graph shape
    is fixed for differentiation); the convergence flag is still reported.
    """
    if not 0.0 < damping <= 1.0:
        raise NashInputError("damping must be in (0, 1]")
    M = costs.n_agents
    W = tn.constant(np.full((M, K), 1.0 / K))
    if M == 1 or not costs.pairs:
        return NashSolution(W.value.copy(), 0, 0.0, True, W)
    n_iter = unroll if unroll is not None else max_iters
    residual = math.inf
    it = 0
    for it in range(1, n_iter + 1):
        c = _expected_costs(costs, W, K)
        br = tn.softmax(c * (-1.0 / temperature), axis=-1)
        W_new = W * (1.0 - damping) + br * damping
        residual = float(np.max(np.abs(W_new.value - W.value)))
        W = W_new
        if unroll is None and residual < tol:
            break
    if not np.all(np.isfinite(W.value)):
        raise tn.NonFiniteError("non-finite equilibrium weights")
    return NashSolution(W.value.copy(), it, residual, residual < tol, W)


def solve_nash(
    candidates: Sequence[CandidateSet],
    net: JointCostNet,
    max_iters: int = 50,
    damping: float = 0.5,
    tol: float = 1e-8,
    temperature: float = 1.0,
    params: dict | None = None,
    unroll: int | None = None,
) -> NashSolution:
    costs = all_pair_costs(net, candidates, params)
    return solve_nash_costs(costs, len(candidates[0]), max_iters, damping, tol, temperature, unroll)


def _kl_uniform(w: np.ndarray) -> np.ndarray:
    K = w.shape[-1]
    safe = np.where(w > 0, w, 1.0)
    return np.sum(np.where(w > 0, w * np.log(K * safe), 0.0), axis=-1)


def objective(weights: np.ndarray, costs: PairCosts, temperature: float = 1.0) -> np.ndarray:
    """Per-agent J_j = sum_k w_j.C_jk.w_k + T * KL(w_j || uniform)."""
    W = np.asarray(weights, dtype=np.float64)
    c = _expected_costs(costs, tn.constant(W), W.shape[1]).value if costs.pairs else np.zeros_like(W)
    return np.sum(W * c, axis=1) + temperature * _kl_uniform(W)


def exploitability(solution: NashSolution | np.ndarray, costs: PairCosts, temperature: float = 1.0) -> float:
    """Largest unilateral objective improvement available to any agent."""
    W = solution.weights if isinstance(solution, NashSolution) else np.asarray(solution, dtype=np.float64)
    K = W.shape[1]
    if not costs.pairs:
        c = np.zeros_like(W)
    else:
        c = _expected_costs(costs, tn.constant(W), K).value
    current = np.sum(W * c, axis=1) + temperature * _kl_uniform(W)
    z = -c / temperature
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.sum(np.exp(z - zmax[:, None]), axis=1))
    best = -temperature * lse + temperature * math.log(K)
    return float(np.max(current - best))


def predict_joint(
    solution: NashSolution, candidates: Sequence[CandidateSet], selection: str = "weight"
) -> tuple[list[np.ndarray], list[int]]:
    """Pick one candidate per agent; ties go to the lowest index.

    ``"weight"`` takes the argmax equilibrium weight. ``"density"`` takes the
    argmax of ``log_prior + log w``: the weights reweight samples drawn from
    the prior, so this is the mode of the equilibrium density on the support.
    With a zero net both reduce to the highest-prior candidate when the
    candidates are sorted by prior.
    """
    if selection == "weight":
        scores = [solution.weights[j] for j in range(len(candidates))]
    elif selection == "density":
        with np.errstate(divide="ignore"):
            scores = [c.log_prior + np.log(solution.weights[j]) for j, c in enumerate(candidates)]
    else:
        raise ValueError(f"unknown selection {selection!r}")
    idx = [int(np.argmax(s)) for s in scores]
    return [candidates[j].controls[i] for j, i in enumerate(idx)], idx
