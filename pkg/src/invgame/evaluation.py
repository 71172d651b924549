"""Closed-loop benchmark: one robot under three policies among iLQGames agents.

Every step the other agents replan with a receding-horizon iLQGames solve
that treats the robot as one more iLQGames agent. The robot then acts per
its policy kind. Trial configs are shared across kinds (paired design).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .config import BenchConfig
from .dataset import TrialConfig, make_observation, sample_trial_config, trial_seed
from .dynamics import Trajectory, step_array
from .game import JointCostNet, predict_joint, solve_nash
from .ilqgames import RuntimeCostParams, receding_horizon_solve, stage_cost
from .inverse import candidate_seed
from .policy import GenerativePolicy, sample_candidates

log = logging.getLogger(__name__)

POLICY_KINDS = ("ground_truth", "non_interactive", "interactive")
CSV_HEADER = ["trial", "kind", "runtime_cost", "min_distance", "converged"]
COLLISION_DISTANCE = 0.6


class EvaluationError(RuntimeError):
    pass


@dataclass
class TrialResult:
    trial: int
    kind: str
    robot: int
    trajectories: list[Trajectory]
    params: list[RuntimeCostParams]
    runtime_cost: float
    min_distance: float
    flagged: bool = False
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return not self.flagged

    def recompute(self) -> tuple[float, float]:
        others = [tr for k, tr in enumerate(self.trajectories) if k != self.robot]
        return (
            runtime_cost_metric(self.trajectories[self.robot], self.params[self.robot], others, self.robot),
            min_distance_metric(self.trajectories, self.robot),
        )


# -- metrics -------------------------------------------------------------------


def runtime_cost_metric(
    robot: Trajectory,
    params: RuntimeCostParams,
    others: Sequence[Trajectory],
    robot_index: int = 0,
) -> float:
    """Sum over executed steps of the robot's presumed iLQGames stage cost.

    ``robot_index`` places the robot among the others when assembling joint
    states; the sum does not depend on it.
    """
    T = len(robot.controls)
    if any(len(o.states) != len(robot.states) for o in others):
        raise ValueError("trajectories are not aligned in time")
    trajs = list(others)
    trajs.insert(robot_index, robot)
    joint = np.stack([tr.states for tr in trajs], axis=1)
    return float(sum(stage_cost(params, joint[t], robot_index, robot.controls[t], t, robot.dt) for t in range(T)))


def min_distance_metric(trajectories: Sequence[Trajectory], robot: int = 0) -> float:
    """Smallest center-to-center robot distance to any other agent; inf if alone."""
    if len(trajectories) < 2:
        return math.inf
    p = trajectories[robot].states[:, :2]
    best = math.inf
    for k, tr in enumerate(trajectories):
        if k != robot:
            best = min(best, float(np.min(np.hypot(*(tr.states[:, :2] - p).T))))
    return best


# -- closed loop ---------------------------------------------------------------


def closed_loop_rollout(
    kind: str,
    config: TrialConfig,
    bench: BenchConfig,
    policy: GenerativePolicy | None = None,
    net: JointCostNet | None = None,
    seed: int = 0,
    trial: int = 0,
) -> TrialResult:
    """Run one trial for ``config.T`` steps with the robot driven by ``kind``.

    ``seed`` fixes the candidate draws; the same seed gives the robot the
    same candidates under both learned kinds.
    """
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    if kind != "ground_truth" and policy is None:
        raise EvaluationError(f"{kind} needs a trained policy")
    if kind == "interactive" and net is None:
        raise EvaluationError("interactive needs a trained joint cost net")
    ev, g = bench.eval, bench.game
    r = ev.robot
    params = list(config.params)
    M, T, dt = config.n_agents, config.T, config.dt
    xs = np.empty((T + 1, M, 3))
    us = np.empty((T, M, 2))
    xs[0] = config.initial_states
    plan = None
    diag = {"ilq_not_converged": 0, "nash_not_converged": 0}
    flagged, reason = False, ""
    for t in range(T):
        try:
            res = receding_horizon_solve(
                xs[t], params, t, ev.horizon, plan, ev.ilq_max_iters, ev.ilq_tol, dt, bench.dataset.omega_bias
            )
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            flagged, reason = True, f"step {t}: iLQGames failed ({exc})"
            break
        diag["ilq_not_converged"] += not res.converged
        plan = res.controls
        u = plan[0].copy()
        if kind != "ground_truth":
            seeds = [candidate_seed(seed, trial, j, t) for j in range(M)]
            obs = [make_observation(xs[t], j, params[j].goal, params[j].v_pref) for j in range(M)]
            if kind == "non_interactive":
                cs = sample_candidates(policy, obs[r], xs[t, r], ev.n_candidates, seeds[r], r, dt)
                u[r] = cs.controls[0, 0]
            else:
                cands = [sample_candidates(policy, obs[j], xs[t, j], ev.n_candidates, seeds[j], j, dt) for j in range(M)]
                try:
                    sol = solve_nash(cands, net, g.max_iters, g.damping, g.tol, g.temperature)
                except FloatingPointError as exc:
                    flagged, reason = True, f"step {t}: equilibrium failed ({exc})"
                    break
                diag["nash_not_converged"] += not sol.converged
                joint, _ = predict_joint(sol, cands, ev.selection)
                u[r] = joint[r][0]
        us[t] = u
        xs[t + 1] = step_array(xs[t], u, dt)
    n = t + 1 if not flagged else t
    trajs = [Trajectory(xs[: n + 1, k].copy(), us[:n, k].copy(), dt) for k in range(M)]
    result = TrialResult(trial, kind, r, trajs, params, math.nan, math.nan, flagged, reason, diag)
    if not flagged:
        result.runtime_cost, result.min_distance = result.recompute()
    return result


# -- benchmark -----------------------------------------------------------------


@dataclass
class BenchmarkReport:
    results: list[TrialResult]
    summary: dict
    warnings: list[str]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for res in self.results:
            w.writerow([res.trial, res.kind, repr(res.runtime_cost), repr(res.min_distance), int(res.converged)])
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(self.csv_text())
        (out / "summary.json").write_text(
            json.dumps({"warnings": self.warnings, "summary": self.summary}, indent=2, sort_keys=True) + "\n"
        )
        lines = [f"WARNING: {w}" for w in self.warnings]
        if lines:
            lines.append("")
        lines.append(f"collision threshold (center distance): {COLLISION_DISTANCE} m")
        lines.append(f"{'kind':<16} {'metric':<13} {'q1':>10} {'median':>10} {'q3':>10}   n")
        for kind, s in self.summary.items():
            for metric in ("runtime_cost", "min_distance"):
                q = s[metric]
                lines.append(f"{kind:<16} {metric:<13} {q['q1']:>10.4f} {q['median']:>10.4f} {q['q3']:>10.4f}   {s['n']}")
        (out / "report.txt").write_text("\n".join(lines) + "\n")


def summarize(results: Sequence[TrialResult], kinds: Sequence[str] = POLICY_KINDS) -> dict:
    """Quartiles per kind and metric over unflagged trials."""
    out = {}
    for kind in kinds:
        rows = [r for r in results if r.kind == kind]
        ok = [r for r in rows if not r.flagged]
        entry = {"n": len(ok), "flagged": len(rows) - len(ok)}
        for metric in ("runtime_cost", "min_distance"):
            vals = np.array([getattr(r, metric) for r in ok], dtype=np.float64)
            if len(vals):
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                entry[metric] = {"q1": float(q1), "median": float(med), "q3": float(q3)}
            else:
                entry[metric] = {"q1": math.nan, "median": math.nan, "q3": math.nan}
        out[kind] = entry
    return out


def flag_warnings(summary: dict, n_trials: int, max_rate: float) -> list[str]:
    return [
        f"{kind}: {s['flagged']} of {n_trials} trials flagged"
        for kind, s in summary.items()
        if s["flagged"] > max_rate * n_trials
    ]


def eval_trial_configs(bench: BenchConfig, n_trials: int) -> list[TrialConfig]:
    return [sample_trial_config(trial_seed(bench.eval.seed, i), bench) for i in range(n_trials)]


def _run_job(args) -> TrialResult:
    kind, config, bench, policy, net, seed, trial = args
    return closed_loop_rollout(kind, config, bench, policy, net, seed, trial)


def evaluate_benchmark(
    bench: BenchConfig,
    policy: GenerativePolicy | None,
    net: JointCostNet | None,
    n_trials: int | None = None,
    kinds: Sequence[str] = POLICY_KINDS,
    threads: int = 1,
) -> BenchmarkReport:
    """Paired trials for every kind; results ordered by (trial, kind)."""
    n = bench.eval.n_trials if n_trials is None else n_trials
    if n < 1:
        raise ValueError("n_trials must be at least 1")
    configs = eval_trial_configs(bench, n)
    jobs = [(k, c, bench, policy, net, bench.eval.seed, i) for i, c in enumerate(configs) for k in kinds]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
            log.info("trial %d %s done", job[6], job[0])
    summary = summarize(results, kinds)
    warnings = flag_warnings(summary, n, bench.eval.max_flag_rate)
    for res in results:
        if res.flagged:
            log.warning("trial %d %s excluded: %s", res.trial, res.kind, res.reason)
    for w in warnings:
        log.warning(w)
    return BenchmarkReport(results, summary, warnings)


# -- rendering -----------------------------------------------------------------

_COLORS = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def render_trial_svg(result: TrialResult, path: str | Path, every: int = 10, size: int = 480) -> Path:
    """Static SVG of one trial: paths, agent disks every ``every`` steps, goal crosses."""
    pts = np.concatenate([tr.states[:, :2] for tr in result.trajectories] + [np.array([p.goal for p in result.params])])
    lo, hi = pts.min(axis=0) - 1.0, pts.max(axis=0) + 1.0
    scale = size / float(max(hi - lo))

    def xy(p):
        return (p[0] - lo[0]) * scale, size - (p[1] - lo[1]) * scale

    def f(v):
        return f"{v:.2f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f"<title>{escape(f'trial {result.trial} ({result.kind})')}</title>",
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    radius = 0.3 * scale
    for k, tr in enumerate(result.trajectories):
        color = _COLORS[k % len(_COLORS)]
        d = " ".join(("M" if i == 0 else "L") + f"{f(x)},{f(y)}" for i, (x, y) in enumerate(map(xy, tr.states)))
        parts.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for i in range(0, len(tr.states), every):
            x, y = xy(tr.states[i])
            parts.append(
                f'<circle cx="{f(x)}" cy="{f(y)}" r="{f(radius)}" fill="{color}" fill-opacity="0.15" stroke="{color}"/>'
            )
        gx, gy = xy(result.params[k].goal)
        c = 6.0
        parts.append(
            f'<g stroke="{color}" stroke-width="2"><line x1="{f(gx - c)}" y1="{f(gy - c)}" x2="{f(gx + c)}" y2="{f(gy + c)}"/>'
            f'<line x1="{f(gx - c)}" y1="{f(gy + c)}" x2="{f(gx + c)}" y2="{f(gy - c)}"/></g>'
        )
        if k == result.robot:
            x, y = xy(tr.states[0])
            parts.append(
                f'<text x="{f(x)}" y="{f(y + 5)}" font-family="sans-serif" font-size="14" '
                f'text-anchor="middle" font-weight="bold">R</text>'
            )
    parts.append("</svg>")
    out = Path(path)
    out.write_text("\n".join(parts) + "\n")
    return out
