"""Iterative linear-quadratic games for M unicycle agents.

The joint state stacks every agent's ``(x, y, heading)`` into a vector of
size 3M; each agent owns a 2-dimensional control. One iteration linearizes
the dynamics and quadraticizes every agent's cost around the current
trajectories, solves the resulting LQ game with a coupled Riccati recursion
and rolls the new feedback policy out with a backtracking line search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    AGENT_RADIUS,
    DT,
    OMEGA_MAX,
    V_MAX,
    AgentState,
    Control,
    Trajectory,
    clamp_controls,
    linearize_array,
    step_array,
    wrap_angle,
)

log = logging.getLogger(__name__)

PSD_FLOOR = 1e-6
MAX_CONDITION = 1e13
NEWTON_REGION = 1e-6  # state change below which full steps skip the merit test
MERIT_RTOL = 1e-12


class SingularGameError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RuntimeCostParams:
    """One agent's navigation cost.

    The reference point moves from ``start`` toward ``goal`` at ``v_pref``
    and stops at the goal.
    """

    goal: tuple[float, float]
    start: tuple[float, float]
    v_pref: float
    w_ref: float = 1.0
    w_vel: float = 0.5
    w_omega: float = 0.1
    w_prox: float = 20.0
    d_safe: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        for name in ("w_ref", "w_vel", "w_omega", "w_prox"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.d_safe < 2 * AGENT_RADIUS:
            raise ValueError(f"d_safe must be at least {2 * AGENT_RADIUS}")
        if not 0 <= self.v_pref <= V_MAX:
            raise ValueError(f"v_pref {self.v_pref} outside [0, {V_MAX}]")

    def to_dict(self) -> dict:
        return {
            "goal": list(self.goal),
            "start": list(self.start),
            "v_pref": self.v_pref,
            "w_ref": self.w_ref,
            "w_vel": self.w_vel,
            "w_omega": self.w_omega,
            "w_prox": self.w_prox,
            "d_safe": self.d_safe,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RuntimeCostParams:
        return cls(**d)


def reference_point(params: RuntimeCostParams, t, dt: float = DT) -> np.ndarray:
    """Reference position(s) at integer step(s) ``t``; shape (..., 2)."""
    start = np.asarray(params.start)
    delta = np.asarray(params.goal) - start
    length = float(np.hypot(*delta))
    t = np.asarray(t, dtype=np.float64)
    if length == 0.0:
        return np.broadcast_to(start, t.shape + (2,)).copy()
    along = np.minimum(params.v_pref * t * dt, length)
    return start + along[..., None] * (delta / length)


def stage_cost(
    params: RuntimeCostParams,
    joint_states,
    agent: int,
    u,
    t: int,
    dt: float = DT,
) -> float:
    """Running cost of ``agent`` at step ``t``; ``u=None`` gives the terminal (state-only) cost."""
    xs = np.array(
        [s.to_array() if isinstance(s, AgentState) else s for s in joint_states], dtype=np.float64
    )
    p = xs[agent, :2]
    ref = reference_point(params, t, dt)
    cost = params.w_ref * float(np.sum((p - ref) ** 2))
    if u is not None:
        u = u.to_array() if isinstance(u, Control) else np.asarray(u, dtype=np.float64)
        cost += params.w_vel * (u[0] - params.v_pref) ** 2 + params.w_omega * u[1] ** 2
    for k in range(len(xs)):
        if k != agent:
            gap = params.d_safe - float(np.hypot(*(p - xs[k, :2])))
            if gap > 0:
                cost += params.w_prox * gap * gap
    return float(cost)


class _CostTable:
    """Per-agent cost parameters stacked for vectorized evaluation."""

    def __init__(self, params: Sequence[RuntimeCostParams], dt: float):
        self.params = list(params)
        self.m = len(self.params)
        self.dt = dt
        get = lambda name: np.array([getattr(p, name) for p in self.params], dtype=np.float64)
        self.v_pref = get("v_pref")
        self.w_ref = get("w_ref")
        self.w_vel = get("w_vel")
        self.w_omega = get("w_omega")
        self.w_prox = get("w_prox")
        self.d_safe = get("d_safe")

    def references(self, t0: int, n: int) -> np.ndarray:
        """Reference positions for steps t0..t0+n-1, shape (n, M, 2)."""
        steps = np.arange(t0, t0 + n)
        return np.stack([reference_point(p, steps, self.dt) for p in self.params], axis=1)

    def agent_costs(self, xs: np.ndarray, us: np.ndarray, t0: int) -> np.ndarray:
        """Total cost per agent for joint states (T+1, M, 3) and controls (T, M, 2)."""
        return self.cost_parts(xs, us, t0)[0]

    def merit(self, xs: np.ndarray, us: np.ndarray, t0: int) -> tuple[float, np.ndarray]:
        """Line-search merit: agent costs with each pair's proximity term counted once.

        With shared proximity weights this is an exact potential of the game.
        """
        costs, prox = self.cost_parts(xs, us, t0)
        return float(costs.sum() - 0.5 * prox.sum()), costs

    def cost_parts(self, xs: np.ndarray, us: np.ndarray, t0: int) -> tuple[np.ndarray, np.ndarray]:
        pos = xs[..., :2]
        refs = self.references(t0, len(xs))
        cost = self.w_ref * np.sum((pos - refs) ** 2, axis=-1)
        diff = pos[:, :, None, :] - pos[:, None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        gap = np.maximum(self.d_safe[None, :, None] - dist, 0.0)
        idx = np.arange(self.m)
        gap[:, idx, idx] = 0.0
        prox = (self.w_prox * np.sum(gap * gap, axis=-1)).sum(axis=0)
        total = cost.sum(axis=0) + prox
        total += np.sum(self.w_vel * (us[..., 0] - self.v_pref) ** 2, axis=0)
        total += np.sum(self.w_omega * us[..., 1] ** 2, axis=0)
        return total, prox


@dataclass
class LQGameStage:
    """Linear dynamics and quadratic costs of every agent at one step.

    ``A``/``B``/``R``/``r`` are ``None`` on the terminal stage. ``B[j]``
    maps agent j's control into the joint state.
    """

    A: np.ndarray | None
    B: np.ndarray | None
    Q: np.ndarray
    l: np.ndarray
    R: np.ndarray | None
    r: np.ndarray | None


@dataclass
class FeedbackPolicy:
    """Gains ``P`` (T, M, 2, 3M) and feedforward ``alpha`` (T, M, 2).

    Agent j plays ``u = u_ref - P[t, j] @ dx - alpha[t, j]``.
    """

    P: np.ndarray
    alpha: np.ndarray


@dataclass
class _LQArrays:
    A: np.ndarray  # (T, n, n)
    B: np.ndarray  # (T, M, n, 2)
    Q: np.ndarray  # (T+1, M, n, n)
    l: np.ndarray  # (T+1, M, n)
    R: np.ndarray  # (T, M, 2, 2)
    r: np.ndarray  # (T, M, 2)

    def stages(self) -> list[LQGameStage]:
        T = len(self.A)
        out = [
            LQGameStage(self.A[t], self.B[t], self.Q[t], self.l[t], self.R[t], self.r[t])
            for t in range(T)
        ]
        out.append(LQGameStage(None, None, self.Q[T], self.l[T], None, None))
        return out


def _project_psd(H: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    w, V = np.linalg.eigh(H)
    return (V * np.maximum(w, floor)[..., None, :]) @ np.swapaxes(V, -1, -2)


def _quadraticize_all(
    table: _CostTable, xs: np.ndarray, us: np.ndarray, t0: int
) -> _LQArrays:
    T, M = us.shape[0], table.m
    n = 3 * M
    dt = table.dt
    A_blk, B_blk = linearize_array(xs[:-1], us, dt)  # (T, M, 3, 3), (T, M, 3, 2)
    A = np.zeros((T, n, n))
    B = np.zeros((T, M, n, 2))
    for j in range(M):
        A[:, 3 * j : 3 * j + 3, 3 * j : 3 * j + 3] = A_blk[:, j]
        B[:, j, 3 * j : 3 * j + 3, :] = B_blk[:, j]

    Q = np.zeros((T + 1, M, n, n))
    l = np.zeros((T + 1, M, n))
    pos = xs[..., :2]
    refs = table.references(t0, T + 1)
    for j in range(M):
        pj = slice(3 * j, 3 * j + 2)
        l[:, j, pj] = 2.0 * table.w_ref[j] * (pos[:, j] - refs[:, j])
        Q[:, j, pj, pj] += 2.0 * table.w_ref[j] * np.eye(2)
        for k in range(M):
            if k == j:
                continue
            pk = slice(3 * k, 3 * k + 2)
            d = pos[:, j] - pos[:, k]
            rho = np.sqrt(np.sum(d * d, axis=-1))
            gap = table.d_safe[j] - rho
            active = gap > 0
            if not active.any():
                continue
            w = table.w_prox[j]
            rho_s = np.maximum(rho, 1e-9)
            nrm = d / rho_s[:, None]
            g = np.where(active, -2.0 * w * gap, 0.0)[:, None] * nrm
            outer = nrm[:, :, None] * nrm[:, None, :]
            tang = (np.eye(2) - outer) * (gap / rho_s)[:, None, None]
            H = 2.0 * w * (outer - tang) * active[:, None, None]
            l[:, j, pj] += g
            l[:, j, pk] -= g
            Q[:, j, pj, pj] += H
            Q[:, j, pk, pk] += H
            Q[:, j, pj, pk] -= H
            Q[:, j, pk, pj] -= H

    Q = _project_psd(Q)
    R = np.zeros((T, M, 2, 2))
    R[..., 0, 0] = np.maximum(2.0 * table.w_vel, PSD_FLOOR)
    R[..., 1, 1] = np.maximum(2.0 * table.w_omega, PSD_FLOOR)
    r = np.empty((T, M, 2))
    r[..., 0] = 2.0 * table.w_vel * (us[..., 0] - table.v_pref)
    r[..., 1] = 2.0 * table.w_omega * us[..., 1]
    arrays = _LQArrays(A, B, Q, l, R, r)
    for name in ("A", "B", "Q", "l", "R", "r"):
        val = getattr(arrays, name)
        if not np.isfinite(val).all():
            bad = int(np.argwhere(~np.isfinite(val))[0][0])
            raise FloatingPointError(f"non-finite {name} in expansion at step {t0 + bad}")
    return arrays


def quadraticize(
    params: Sequence[RuntimeCostParams],
    xs: np.ndarray,
    us: np.ndarray,
    t: int,
    dt: float = DT,
    t0: int = 0,
) -> LQGameStage:
    """LQ expansion of every agent's cost and the dynamics at local step ``t``.

    ``xs`` (T+1, M, 3) and ``us`` (T, M, 2) are the joint trajectory; ``t0``
    is the absolute step of ``xs[0]`` (reference timing). ``t == T`` gives
    the terminal stage.
    """
    xs = np.asarray(xs, dtype=np.float64)
    us = np.asarray(us, dtype=np.float64)
    if not 0 <= t <= len(us):
        raise IndexError(f"step {t} outside trajectory of length {len(us)}")
    return _quadraticize_all(_CostTable(params, dt), xs, us, t0).stages()[t]


def _solve_lq_arrays(arr: _LQArrays, equilibrium: str = "feedback") -> FeedbackPolicy:
    if equilibrium not in ("feedback", "open_loop"):
        raise ValueError(f"unknown equilibrium type {equilibrium!r}")
    T, M = arr.R.shape[0], arr.R.shape[1]
    n = arr.Q.shape[-1]
    Z = arr.Q[T].copy()
    zeta = arr.l[T].copy()
    P_all = np.empty((T, M, 2, n))
    a_all = np.empty((T, M, 2))
    for t in range(T - 1, -1, -1):
        A, B, R, r = arr.A[t], arr.B[t], arr.R[t], arr.r[t]
        Bt = B.transpose(0, 2, 1)  # (M, 2, n)
        Bcat = np.concatenate(list(B), axis=1)  # (n, 2M)
        BZ = Bt @ Z
        S = (BZ @ Bcat).reshape(2 * M, 2 * M)
        for j in range(M):
            S[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] += R[j]
        rhs = np.empty((2 * M, n + 1))
        rhs[:, :n] = (BZ @ A).reshape(2 * M, n)
        rhs[:, n] = ((Bt @ zeta[..., None])[..., 0] + r).reshape(-1)
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise SingularGameError(f"joint LQ system singular at step {t} (condition {cond:.3e})")
        sol = np.linalg.solve(S, rhs)
        P = sol[:, :n].reshape(M, 2, n)
        alpha = sol[:, n].reshape(M, 2)
        P_all[t] = P
        a_all[t] = alpha
        F = A - Bcat @ sol[:, :n]
        beta = -Bcat @ sol[:, n]
        PR = P.transpose(0, 2, 1) @ R  # P_j^T R_j
        carry = zeta + Z @ beta
        if equilibrium == "feedback":
            grad = carry @ F
        else:
            # others' gains left out: agent j treats their trajectories as fixed
            own = A[None] - B @ P
            grad = (carry[:, None, :] @ own)[:, 0]
        zeta = (
            grad
            + arr.l[t]
            + (PR @ alpha[..., None])[..., 0]
            - (P.transpose(0, 2, 1) @ r[..., None])[..., 0]
        )
        Z = F.T[None] @ Z @ F[None] + arr.Q[t] + PR @ P
    return FeedbackPolicy(P_all, a_all)


def solve_lq_game(stages: Sequence[LQGameStage], equilibrium: str = "feedback") -> FeedbackPolicy:
    """Nash gains of a finite-horizon LQ game by a coupled Riccati recursion.

    ``stages`` holds T dynamic stages followed by one terminal stage. With
    ``equilibrium="feedback"`` this is the feedback Nash solution. With
    ``"open_loop"`` the gains are the same but each agent's value gradient
    is propagated as if the others' trajectories were fixed, so a zero
    feedforward term certifies the open-loop Nash conditions.
    """
    if len(stages) < 1 or stages[-1].A is not None:
        raise ValueError("stages must end with a terminal stage (A is None)")
    dyn = stages[:-1]
    M, n = stages[-1].l.shape
    if dyn:
        arr = _LQArrays(
            np.stack([s.A for s in dyn]),
            np.stack([s.B for s in dyn]),
            np.stack([s.Q for s in stages]),
            np.stack([s.l for s in stages]),
            np.stack([s.R for s in dyn]),
            np.stack([s.r for s in dyn]),
        )
    else:
        arr = _LQArrays(
            np.zeros((0, n, n)), np.zeros((0, M, n, 2)), stages[-1].Q[None], stages[-1].l[None],
            np.zeros((0, M, 2, 2)), np.zeros((0, M, 2)),
        )
    for t, st in enumerate(dyn):
        for j in range(M):
            if np.linalg.eigvalsh(st.R[j]).min() <= 0:
                raise ValueError(f"R of agent {j} is not positive definite at step {t}")
    return _solve_lq_arrays(arr, equilibrium)


@dataclass
class ILQResult:
    """Converged (or best) joint trajectory of an iLQGames solve."""

    states: np.ndarray  # (T+1, M, 3)
    controls: np.ndarray  # (T, M, 2)
    policy: FeedbackPolicy
    costs: np.ndarray  # (M,)
    converged: bool
    iterations: int
    dt: float = DT
    merit_history: list[float] = field(default_factory=list)

    def trajectories(self) -> list[Trajectory]:
        return [
            Trajectory(self.states[:, j].copy(), self.controls[:, j].copy(), self.dt)
            for j in range(self.states.shape[1])
        ]


def _state_change(a: np.ndarray, b: np.ndarray) -> float:
    d = np.abs(a - b)
    d[..., 2] = np.abs(wrap_angle(a[..., 2] - b[..., 2]))
    return float(d.max()) if d.size else 0.0


def _feedback_rollout(
    x0: np.ndarray,
    xs: np.ndarray,
    us: np.ndarray,
    policy: FeedbackPolicy,
    step_size: float,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    T, M = us.shape[:2]
    new_x = np.empty_like(xs)
    new_u = np.empty_like(us)
    new_x[0] = x0
    for t in range(T):
        dx = new_x[t] - xs[t]
        dx[:, 2] = wrap_angle(dx[:, 2])
        u = us[t] - policy.P[t] @ dx.reshape(-1) - step_size * policy.alpha[t]
        new_u[t] = clamp_controls(u)
        new_x[t + 1] = step_array(new_x[t], new_u[t], dt, check=False)
    return new_x, new_u


def initial_controls(params: Sequence[RuntimeCostParams], T: int, omega_bias: float = 0.05) -> np.ndarray:
    """Straight-ahead guess at each agent's preferred speed.

    A small common turn rate breaks the left/right tie of exactly head-on
    encounters, where the proximity gradient has no lateral component.
    """
    u = np.empty((T, len(params), 2))
    u[..., 0] = [p.v_pref for p in params]
    u[..., 1] = omega_bias
    return clamp_controls(u)


def solve_ilqgames(
    x0,
    params: Sequence[RuntimeCostParams],
    T: int,
    max_iters: int = 100,
    tol: float = 1e-3,
    dt: float = DT,
    t0: int = 0,
    u_init: np.ndarray | None = None,
    omega_bias: float = 0.05,
    max_halvings: int = 12,
    equilibrium: str = "open_loop",
) -> ILQResult:
    """Run iLQGames from joint state ``x0`` (M, 3) over ``T`` steps.

    ``t0`` is the absolute step of ``x0`` so references line up when the
    solver is used in a receding-horizon loop. Stops when the largest state
    change between accepted iterates is below ``tol``; otherwise returns the
    best iterate with ``converged=False``. Step sizes halve until the
    potential merit (see ``_CostTable.merit``) does not increase.
    """
    if T < 1 or max_iters < 1:
        raise ValueError("T and max_iters must be at least 1")
    x0 = np.array(
        [s.to_array() if isinstance(s, AgentState) else s for s in x0], dtype=np.float64
    ).reshape(-1, 3)
    table = _CostTable(params, dt)
    if table.m != len(x0):
        raise ValueError(f"{len(x0)} initial states for {table.m} cost functions")
    us = clamp_controls(initial_controls(params, T, omega_bias) if u_init is None else u_init)
    xs = np.empty((T + 1, table.m, 3))
    xs[0] = x0
    for t in range(T):
        xs[t + 1] = step_array(xs[t], us[t], dt, check=False)
    merit, costs = table.merit(xs, us, t0)
    history = [merit]
    converged = False
    policy = FeedbackPolicy(np.zeros((T, table.m, 2, 3 * table.m)), np.zeros((T, table.m, 2)))
    it = 0
    for it in range(1, max_iters + 1):
        policy = _solve_lq_arrays(_quadraticize_all(table, xs, us, t0), equilibrium)
        accepted = False
        full_change = None
        for h in range(max_halvings + 1):
            step_size = 0.5**h
            nx, nu = _feedback_rollout(x0, xs, us, policy, step_size, dt)
            change = _state_change(nx, xs)
            if full_change is None:
                full_change = change
            nmerit, ncosts = table.merit(nx, nu, t0)
            # near a fixed point the merit cannot resolve the step; allow rounding-level noise
            tiny = h == 0 and change < NEWTON_REGION and nmerit <= history[-1] + MERIT_RTOL * abs(history[-1])
            if nmerit <= history[-1] or tiny:
                xs, us, costs = nx, nu, ncosts
                history.append(nmerit)
                accepted = True
                break
        if accepted and change < tol:
            converged = True
            break
        if not accepted:
            converged = full_change < tol
            break
    return ILQResult(xs, us, policy, costs, converged, it, dt, history)


def shift_plan(us: np.ndarray) -> np.ndarray:
    """Warm start for the next receding-horizon solve: drop the first step, repeat the last."""
    return np.concatenate([us[1:], us[-1:]], axis=0)


def receding_horizon_solve(
    x: np.ndarray,
    params: Sequence[RuntimeCostParams],
    t: int,
    horizon: int,
    u_prev: np.ndarray | None = None,
    max_iters: int = 30,
    tol: float = 1e-3,
    dt: float = DT,
    omega_bias: float = 0.05,
) -> ILQResult:
    """One replanning step at absolute time ``t``, warm-started from ``u_prev``."""
    u_init = None if u_prev is None else shift_plan(u_prev)
    return solve_ilqgames(
        x, params, horizon, max_iters=max_iters, tol=tol, dt=dt, t0=t, u_init=u_init, omega_bias=omega_bias
    )


def simulate_receding_horizon(
    x0,
    params: Sequence[RuntimeCostParams],
    T: int,
    horizon: int,
    max_iters: int = 30,
    tol: float = 1e-3,
    dt: float = DT,
    omega_bias: float = 0.05,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Every agent executes the first control of an H-step solve, T times.

    Returns joint states (T+1, M, 3), controls (T, M, 2) and the number of
    solves that hit the iteration cap.
    """
    x = np.asarray(x0, dtype=np.float64).reshape(-1, 3)
    xs = np.empty((T + 1,) + x.shape)
    us = np.empty((T, len(x), 2))
    xs[0] = x
    plan = None
    missed = 0
    for t in range(T):
        res = receding_horizon_solve(xs[t], params, t, horizon, plan, max_iters, tol, dt, omega_bias)
        missed += not res.converged
        plan = res.controls
        us[t] = plan[0]
        xs[t + 1] = step_array(xs[t], us[t], dt)
    return xs, us, missed


def total_costs(
    params: Sequence[RuntimeCostParams], xs: np.ndarray, us: np.ndarray, dt: float = DT, t0: int = 0
) -> np.ndarray:
    """Every agent's summed running plus terminal cost along a joint trajectory."""
    return _CostTable(params, dt).agent_costs(np.asarray(xs), np.asarray(us), t0)


def _unilateral_ilqr(
    agent: int,
    xs: np.ndarray,
    us: np.ndarray,
    params: Sequence[RuntimeCostParams],
    dt: float,
    t0: int,
    max_iters: int,
    tol: float,
) -> float:
    """Best cost agent ``agent`` reaches by re-planning alone; others are frozen."""
    table = _CostTable(params, dt)
    xs = xs.copy()
    us = us.copy()
    best = table.agent_costs(xs, us, t0)[agent]
    sl = slice(3 * agent, 3 * agent + 3)
    for _ in range(max_iters):
        arr = _quadraticize_all(table, xs, us, t0)
        own = _LQArrays(
            arr.A[:, sl, sl],
            arr.B[:, agent : agent + 1, sl, :],
            arr.Q[:, agent : agent + 1, sl, sl],
            arr.l[:, agent : agent + 1, sl],
            arr.R[:, agent : agent + 1],
            arr.r[:, agent : agent + 1],
        )
        pol = _solve_lq_arrays(own)
        accepted = False
        for h in range(16):
            a = 0.5**h
            nx = xs.copy()
            nu = us.copy()
            for t in range(len(us)):
                dx = nx[t, agent] - xs[t, agent]
                dx[2] = wrap_angle(dx[2])
                u = us[t, agent] - pol.P[t, 0] @ dx - a * pol.alpha[t, 0]
                nu[t, agent] = clamp_controls(u)
                nx[t + 1, agent] = step_array(nx[t, agent], nu[t, agent], dt, check=False)
            c = table.agent_costs(nx, nu, t0)[agent]
            if c < best:
                change = _state_change(nx, xs)
                xs, us, best = nx, nu, c
                accepted = True
                break
        if not accepted or change < tol:
            break
    return float(best)


def verify_open_loop_nash(
    states: np.ndarray,
    controls: np.ndarray,
    params: Sequence[RuntimeCostParams],
    dt: float = DT,
    t0: int = 0,
    max_iters: int = 50,
    tol: float = 1e-6,
) -> float:
    """Largest cost decrease any single agent finds by deviating alone.

    ``states`` (T+1, M, 3) and ``controls`` (T, M, 2) must be dynamically
    consistent. Each agent in turn re-plans with iLQR against the others'
    fixed trajectories; an equilibrium leaves (almost) nothing to gain.
    """
    xs = np.asarray(states, dtype=np.float64)
    us = np.asarray(controls, dtype=np.float64)
    base = _CostTable(params, dt).agent_costs(xs, us, t0)
    gains = [
        base[j] - _unilateral_ilqr(j, xs, us, params, dt, t0, max_iters, tol)
        for j in range(len(params))
    ]
    return float(max(gains))
