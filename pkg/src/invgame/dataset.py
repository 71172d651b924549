"""Synthetic multi-agent demonstrations: sampling, generation, JSONL storage, windowing."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import BenchConfig
from .dynamics import Trajectory, wrap_angle
from .ilqgames import RuntimeCostParams, solve_ilqgames

log = logging.getLogger(__name__)

FORMAT_NAME = "invgame-demonstrations"
FORMAT_VERSION = 1
MAX_REJECTIONS = 1000


class DatasetError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class TrialConfig:
    seed: int
    initial_states: np.ndarray  # (M, 3)
    params: list[RuntimeCostParams]
    T: int
    dt: float
    circle_radius: float

    @property
    def n_agents(self) -> int:
        return len(self.params)

    def __eq__(self, other):
        if not isinstance(other, TrialConfig):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.initial_states, other.initial_states)
            and self.params == other.params
            and (self.T, self.dt, self.circle_radius) == (other.T, other.dt, other.circle_radius)
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "T": self.T,
            "dt": self.dt,
            "circle_radius": self.circle_radius,
            "initial_states": self.initial_states.tolist(),
            "params": [p.to_dict() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrialConfig:
        return cls(
            seed=int(d["seed"]),
            initial_states=np.array(d["initial_states"], dtype=np.float64).reshape(-1, 3),
            params=[RuntimeCostParams.from_dict(p) for p in d["params"]],
            T=int(d["T"]),
            dt=float(d["dt"]),
            circle_radius=float(d["circle_radius"]),
        )


@dataclass
class Demonstration:
    config: TrialConfig
    trajectories: list[Trajectory]
    converged: bool
    iterations: int = 0

    def __post_init__(self):
        lengths = {len(tr) for tr in self.trajectories}
        dts = {tr.dt for tr in self.trajectories}
        if len(lengths) > 1 or len(dts) > 1:
            raise ValueError("all trajectories of a demonstration must share length and dt")

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            self.config == other.config
            and self.converged == other.converged
            and self.iterations == other.iterations
            and self.trajectories == other.trajectories
        )

    @property
    def T(self) -> int:
        return len(self.trajectories[0])

    def joint_states(self) -> np.ndarray:
        """(T+1, M, 3)"""
        return np.stack([tr.states for tr in self.trajectories], axis=1)

    def joint_controls(self) -> np.ndarray:
        """(T, M, 2)"""
        return np.stack([tr.controls for tr in self.trajectories], axis=1)


@dataclass
class Dataset:
    demos: list[Demonstration]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.demos)

    def __getitem__(self, i) -> Demonstration:
        return self.demos[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.metadata == other.metadata and self.demos == other.demos


def sample_trial_config(seed: int, bench: BenchConfig | None = None) -> TrialConfig:
    """Random circle-crossing scene, deterministic in ``seed``.

    Starts are uniform on the circle (resampled until every pair is at least
    ``min_separation_factor`` radii apart), agents face the center and each
    goal is the antipodal point plus a uniform jitter.
    """
    bench = bench or BenchConfig()
    ds, cost, dyn = bench.dataset, bench.cost, bench.dynamics
    rng = np.random.default_rng(seed)
    min_sep = ds.min_separation_factor * dyn.agent_radius
    for _ in range(MAX_REJECTIONS):
        angles = rng.uniform(0.0, 2.0 * math.pi, ds.n_agents)
        starts = ds.circle_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        gaps = np.linalg.norm(starts[:, None] - starts[None], axis=-1)
        gaps[np.diag_indices(ds.n_agents)] = np.inf
        if gaps.min() >= min_sep:
            break
    else:
        raise DatasetError(f"no valid start layout after {MAX_REJECTIONS} draws (seed {seed})")
    headings = wrap_angle(angles + math.pi)
    half = cost.goal_jitter / 2.0
    goals = -starts + rng.uniform(-half, half, size=(ds.n_agents, 2))
    v_pref = rng.uniform(cost.v_pref_range[0], cost.v_pref_range[1], ds.n_agents)
    params = [
        RuntimeCostParams(
            goal=tuple(goals[j]),
            start=tuple(starts[j]),
            v_pref=float(v_pref[j]),
            w_ref=cost.w_ref,
            w_vel=cost.w_vel,
            w_omega=cost.w_omega,
            w_prox=cost.w_prox,
            d_safe=cost.d_safe,
        )
        for j in range(ds.n_agents)
    ]
    init = np.column_stack([starts, headings])
    return TrialConfig(int(seed), init, params, ds.T, dyn.dt, ds.circle_radius)


def trial_seed(master: int, index: int, attempt: int = 0) -> int:
    return int(np.random.SeedSequence([master, index, attempt]).generate_state(1)[0])


def min_pairwise_distance(joint_states: np.ndarray) -> float:
    pos = joint_states[..., :2]
    d = np.linalg.norm(pos[:, :, None] - pos[:, None], axis=-1)
    m = d.shape[1]
    d[:, np.arange(m), np.arange(m)] = np.inf
    return float(d.min())


def simulate_trial(config: TrialConfig, bench: BenchConfig) -> Demonstration:
    """Full-horizon iLQGames solve of one trial."""
    res = solve_ilqgames(
        config.initial_states,
        config.params,
        config.T,
        max_iters=bench.dataset.ilq_max_iters,
        tol=bench.dataset.ilq_tol,
        dt=config.dt,
        omega_bias=bench.dataset.omega_bias,
    )
    return Demonstration(config, res.trajectories(), bool(res.converged), int(res.iterations))


def _attempt(args) -> tuple[int, int, Demonstration]:
    index, attempt, seed, bench = args
    return index, attempt, simulate_trial(sample_trial_config(seed, bench), bench)


def generate_dataset(
    n_trials: int, seed: int, bench: BenchConfig | None = None, threads: int = 1
) -> Dataset:
    """``n_trials`` expert demonstrations; a pure function of its arguments.

    Trials whose solve does not converge, or whose agents come closer than
    two radii, are redrawn with the next attempt seed and counted in the
    metadata.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    bench = bench or BenchConfig()
    limit = 2 * bench.dynamics.agent_radius
    demos: list[Demonstration | None] = [None] * n_trials
    attempts = [0] * n_trials
    failures = {"not_converged": 0, "collision": 0}
    pending = list(range(n_trials))
    pool = ProcessPoolExecutor(threads) if threads > 1 else None
    try:
        while pending:
            jobs = [(i, attempts[i], trial_seed(seed, i, attempts[i]), bench) for i in pending]
            results = pool.map(_attempt, jobs) if pool else map(_attempt, jobs)
            retry = []
            for i, _, demo in results:
                if not demo.converged:
                    failures["not_converged"] += 1
                elif min_pairwise_distance(demo.joint_states()) < limit:
                    failures["collision"] += 1
                else:
                    demos[i] = demo
                    continue
                attempts[i] += 1
                retry.append(i)
            pending = retry
            total = sum(failures.values())
            if total > bench.dataset.max_failure_rate * n_trials:
                raise DatasetError(
                    f"{total} failed trials for {n_trials} requested "
                    f"(not converged: {failures['not_converged']}, collisions: {failures['collision']})"
                )
    finally:
        if pool:
            pool.shutdown()
    meta = {
        "n_trials": n_trials,
        "seed": seed,
        "resampled": sum(failures.values()),
        "not_converged": failures["not_converged"],
        "collisions": failures["collision"],
        "config_hash": bench.hash(),
    }
    log.info("generated %d demonstrations (%d resampled)", n_trials, meta["resampled"])
    return Dataset([d for d in demos if d is not None], meta)


# --- persistence -------------------------------------------------------------


def _demo_record(index: int, demo: Demonstration) -> dict:
    return {
        "index": index,
        "config": demo.config.to_dict(),
        "converged": demo.converged,
        "iterations": demo.iterations,
        "dt": demo.trajectories[0].dt,
        "states": [tr.states.tolist() for tr in demo.trajectories],
        "controls": [tr.controls.tolist() for tr in demo.trajectories],
    }


def save(dataset: Dataset, path: str | Path) -> None:
    """Write JSONL: one header record, then one demonstration per line."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_demos": len(dataset),
        "metadata": dataset.metadata,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, demo in enumerate(dataset.demos):
            fh.write(json.dumps(_demo_record(i, demo), sort_keys=True) + "\n")


def _field(rec: dict, name: str, lineno: int, index: int):
    if name not in rec:
        raise DatasetFormatError(f"line {lineno} (record {index}): missing field '{name}'")
    return rec[name]


def _parse_demo(rec: dict, lineno: int, index: int) -> Demonstration:
    try:
        config = TrialConfig.from_dict(_field(rec, "config", lineno, index))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {lineno} (record {index}): field 'config': {exc}") from None
    dt = float(_field(rec, "dt", lineno, index))
    states = _field(rec, "states", lineno, index)
    controls = _field(rec, "controls", lineno, index)
    if len(states) != len(controls):
        raise DatasetFormatError(
            f"line {lineno} (record {index}): field 'states' has {len(states)} agents, "
            f"'controls' has {len(controls)}"
        )
    trajs = []
    for j, (s, u) in enumerate(zip(states, controls)):
        try:
            tr = Trajectory(
                np.array(s, dtype=np.float64).reshape(-1, 3),
                np.array(u, dtype=np.float64).reshape(-1, 2),
                dt,
            )
            tr.validate(atol=1e-12)
        except ValueError as exc:
            raise DatasetFormatError(
                f"line {lineno} (record {index}): field 'states' of agent {j}: {exc}"
            ) from None
        trajs.append(tr)
    return Demonstration(
        config, trajs, bool(_field(rec, "converged", lineno, index)), int(rec.get("iterations", 0))
    )


def load(path: str | Path) -> Dataset:
    """Read a file written by :func:`save`, re-validating every trajectory."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file, missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: header is not valid JSON ({exc})") from None
    if header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"line 1: field 'format' is {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"line 1: field 'version' is {header.get('version')!r}, expected {FORMAT_VERSION}"
        )
    n = int(_field(header, "n_demos", 1, -1))
    demos = []
    for index in range(n):
        lineno = index + 2
        if lineno > len(lines):
            raise DatasetFormatError(
                f"line {lineno}: record {index} missing (file truncated, {n} records expected)"
            )
        try:
            rec = json.loads(lines[lineno - 1])
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno} (record {index}): invalid JSON ({exc})") from None
        if rec.get("index") != index:
            raise DatasetFormatError(
                f"line {lineno} (record {index}): field 'index' is {rec.get('index')!r}"
            )
        demos.append(_parse_demo(rec, lineno, index))
    if len(lines) > n + 1:
        raise DatasetFormatError(f"line {n + 2}: unexpected record beyond the {n} declared")
    return Dataset(demos, header.get("metadata", {}))


# --- windows -----------------------------------------------------------------


def make_observation(joint_states, agent: int, goal, v_pref: float) -> np.ndarray:
    """Ego observation: goal offset rotated into the agent's heading frame, plus v_pref."""
    s = np.asarray(joint_states, dtype=np.float64)[agent]
    dx, dy = np.asarray(goal, dtype=np.float64) - s[:2]
    c, sn = math.cos(s[2]), math.sin(s[2])
    return np.array([c * dx + sn * dy, -sn * dx + c * dy, float(v_pref)])


@dataclass
class TrainingWindow:
    demo: int
    agent: int
    t: int
    observation: np.ndarray  # (3,)
    controls: np.ndarray  # (H, 2)
    joint_states: np.ndarray  # (M, 3)


def extract_windows(dataset: Dataset, H: int, stride: int = 1) -> list[TrainingWindow]:
    """Every (demo, agent, t) window with t stepping by ``stride`` and t + H <= T."""
    if H < 1 or stride < 1:
        raise ValueError("H and stride must be at least 1")
    if not len(dataset):
        return []
    shortest = min(d.T for d in dataset.demos)
    if H > shortest:
        raise ValueError(f"horizon {H} exceeds the shortest demonstration ({shortest} steps)")
    out = []
    for i, demo in enumerate(dataset.demos):
        xs = demo.joint_states()
        us = demo.joint_controls()
        for j, p in enumerate(demo.config.params):
            for t in range(0, demo.T - H + 1, stride):
                out.append(
                    TrainingWindow(
                        i, j, t, make_observation(xs[t], j, p.goal, p.v_pref), us[t : t + H, j].copy(), xs[t].copy()
                    )
                )
    return out
