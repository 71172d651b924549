"""Unicycle (Dubins-car with controlled speed) agent model.

States are ``(x, y, heading)`` and controls ``(v, omega)``. The array
functions operate on any leading batch shape so whole groups of agents or
candidate rollouts step together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

V_MAX = 2.0
OMEGA_MAX = 2.0
DT = 0.1
AGENT_RADIUS = 0.3


class ControlBoundError(ValueError):
    pass


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(theta, dtype=np.float64), 2.0 * math.pi)


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading)):
            raise ValueError(f"non-finite state {self}")
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])

    @classmethod
    def from_array(cls, a) -> AgentState:
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Control:
    v: float
    omega: float

    def to_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])

    @classmethod
    def from_array(cls, a) -> Control:
        return cls(float(a[0]), float(a[1]))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``states`` has shape (T+1, 3), ``controls`` (T, 2)."""

    states: np.ndarray
    controls: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.states.shape != (len(self.controls) + 1, 3):
            raise ValueError(
                f"states {self.states.shape} do not match controls {self.controls.shape}"
            )

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.dt == other.dt
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.controls, other.controls)
        )

    def __len__(self) -> int:
        return len(self.controls)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def validate(self, atol: float = 0.0) -> None:
        """Raise if any stored state differs from re-stepping the controls."""
        if len(self.controls):
            nxt = step_array(self.states[:-1], self.controls, self.dt)
            err = np.abs(nxt - self.states[1:])
            err[:, 2] = np.abs(wrap_angle(nxt[:, 2] - self.states[1:, 2]))
            bad = np.flatnonzero(err.max(axis=1) > atol)
            if bad.size:
                raise ValueError(f"trajectory breaks the dynamics at step {int(bad[0])}")


def check_bounds(controls, v_max: float = V_MAX, omega_max: float = OMEGA_MAX) -> None:
    u = np.asarray(controls, dtype=np.float64)
    if np.any(np.abs(u[..., 0]) > v_max) or np.any(np.abs(u[..., 1]) > omega_max):
        raise ControlBoundError(
            f"control out of bounds (|v| <= {v_max}, |omega| <= {omega_max})"
        )


def clamp_controls(controls, v_max: float = V_MAX, omega_max: float = OMEGA_MAX) -> np.ndarray:
    u = np.array(controls, dtype=np.float64)
    np.clip(u[..., 0], -v_max, v_max, out=u[..., 0])
    np.clip(u[..., 1], -omega_max, omega_max, out=u[..., 1])
    return u


def step_array(
    states,
    controls,
    dt: float,
    check: bool = True,
    v_max: float = V_MAX,
    omega_max: float = OMEGA_MAX,
) -> np.ndarray:
    """Forward-Euler step for arrays shaped (..., 3) and (..., 2)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if check:
        check_bounds(controls, v_max, omega_max)
    s = np.asarray(states, dtype=np.float64)
    u = np.asarray(controls, dtype=np.float64)
    v, w, th = u[..., 0], u[..., 1], s[..., 2]
    out = np.empty(np.broadcast_shapes(s.shape, u.shape[:-1] + (3,)))
    out[..., 0] = s[..., 0] + v * np.cos(th) * dt
    out[..., 1] = s[..., 1] + v * np.sin(th) * dt
    out[..., 2] = wrap_angle(th + w * dt)
    return out


def step(
    s: AgentState,
    u: Control,
    dt: float = DT,
    v_max: float = V_MAX,
    omega_max: float = OMEGA_MAX,
) -> AgentState:
    """Advance one agent by one Euler step; out-of-bound controls are rejected."""
    return AgentState.from_array(
        step_array(s.to_array(), u.to_array(), dt, v_max=v_max, omega_max=omega_max)
    )


def rollout_array(s0, controls, dt: float) -> np.ndarray:
    """Roll out controls shaped (..., T, 2) from states (..., 3); returns (..., T+1, 3)."""
    u = np.asarray(controls, dtype=np.float64)
    check_bounds(u)
    s = np.asarray(s0, dtype=np.float64)
    n = u.shape[-2]
    out = np.empty(u.shape[:-2] + (n + 1, 3))
    out[..., 0, :] = s
    for t in range(n):
        out[..., t + 1, :] = step_array(out[..., t, :], u[..., t, :], dt, check=False)
    return out


def rollout(s0: AgentState, controls: Sequence[Control] | np.ndarray, dt: float = DT) -> Trajectory:
    u = np.array(
        [c.to_array() for c in controls] if len(controls) and isinstance(controls[0], Control) else controls,
        dtype=np.float64,
    ).reshape(-1, 2)
    return Trajectory(rollout_array(s0.to_array(), u, dt), u, dt)


def linearize_array(states, controls, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of :func:`step_array`; returns A (..., 3, 3) and B (..., 3, 2)."""
    s = np.asarray(states, dtype=np.float64)
    u = np.asarray(controls, dtype=np.float64)
    th, v = s[..., 2], u[..., 0]
    c, sn = np.cos(th), np.sin(th)
    batch = np.broadcast_shapes(s.shape[:-1], u.shape[:-1])
    A = np.zeros(batch + (3, 3))
    A[..., 0, 0] = A[..., 1, 1] = A[..., 2, 2] = 1.0
    A[..., 0, 2] = -v * sn * dt
    A[..., 1, 2] = v * c * dt
    B = np.zeros(batch + (3, 2))
    B[..., 0, 0] = c * dt
    B[..., 1, 0] = sn * dt
    B[..., 2, 1] = dt
    return A, B


def linearize(s: AgentState, u: Control, dt: float = DT) -> tuple[np.ndarray, np.ndarray]:
    check_bounds(u.to_array())
    return linearize_array(s.to_array(), u.to_array(), dt)
