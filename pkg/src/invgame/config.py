"""Benchmark configuration: every tunable constant of the pipeline in one place."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class DynamicsConfig:
    dt: float = 0.1
    agent_radius: float = 0.3


@dataclass
class CostConfig:
    w_ref: float = 1.0
    w_vel: float = 0.5
    w_omega: float = 0.1
    w_prox: float = 20.0
    d_safe: float = 0.9
    v_pref_range: tuple[float, float] = (0.6, 1.2)
    goal_jitter: float = 1.0  # side of the square box around the antipodal point


@dataclass
class DatasetConfig:
    n_demos: int = 50
    seed: int = 0
    n_agents: int = 5
    circle_radius: float = 4.0
    T: int = 60
    min_separation_factor: float = 3.0  # start separation >= factor * agent radius
    ilq_max_iters: int = 100
    ilq_tol: float = 1e-3
    omega_bias: float = 0.05
    max_failure_rate: float = 0.2


@dataclass
class PolicyConfig:
    horizon: int = 10
    latent_dim: int = 4
    hidden: int = 64
    sigma_rec: float = 0.1
    logvar_min: float = -6.0
    logvar_max: float = 2.0
    window_stride: int = 1
    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 2e-3
    seed: int = 1


@dataclass
class GameConfig:
    hidden: tuple[int, ...] = (32, 32)
    damping: float = 0.5
    max_iters: int = 50
    tol: float = 1e-8
    temperature: float = 1.0
    init_scale: float = 1.0


@dataclass
class InverseConfig:
    learning_rate: float = 1e-2
    lr_decay: float = 0.8  # learning rate multiplier applied after every epoch
    epochs: int = 8
    batch_size: int = 16
    unroll: int = 20
    bandwidth: float = 0.1
    n_candidates: int = 16
    window_stride: int = 10
    seed: int = 2


@dataclass
class EvalConfig:
    n_trials: int = 100
    seed: int = 10_000
    robot: int = 0
    horizon: int = 10
    ilq_max_iters: int = 30
    ilq_tol: float = 1e-3
    n_candidates: int = 16
    max_flag_rate: float = 0.1
    selection: str = "weight"  # "weight" or "density", see game.predict_joint


@dataclass
class BenchConfig:
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    game: GameConfig = field(default_factory=GameConfig)
    inverse: InverseConfig = field(default_factory=InverseConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> BenchConfig:
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, fld in sections.items():
            section_cls = fld.default_factory
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"section '{name}' must be a mapping")
            known = {f.name: f for f in dataclasses.fields(section_cls)}
            bad = set(raw) - set(known)
            if bad:
                raise ConfigError(f"unknown keys in '{name}': {sorted(bad)}")
            defaults = section_cls()
            values = {}
            for key, value in raw.items():
                default = getattr(defaults, key)
                if isinstance(default, tuple):
                    value = tuple(value)
                elif isinstance(default, bool) or not isinstance(default, (int, float)):
                    pass
                elif isinstance(default, int) and not isinstance(value, int):
                    raise ConfigError(f"{name}.{key} must be an integer")
                elif isinstance(default, float) and isinstance(value, (int, float)):
                    value = float(value)
                values[key] = value
            kwargs[name] = section_cls(**values)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d, c, ds = self.dynamics, self.cost, self.dataset
        checks = [
            (d.dt > 0, "dynamics.dt must be positive"),
            (c.d_safe >= 2 * d.agent_radius, "cost.d_safe must be at least twice the agent radius"),
            (min(c.w_ref, c.w_vel, c.w_omega, c.w_prox) >= 0, "cost weights must be non-negative"),
            (0 <= c.v_pref_range[0] <= c.v_pref_range[1], "cost.v_pref_range must be ordered"),
            (ds.n_agents >= 2, "dataset.n_agents must be at least 2"),
            (ds.T >= 1 and ds.n_demos >= 1, "dataset.T and dataset.n_demos must be positive"),
            (self.policy.horizon >= 1, "policy.horizon must be positive"),
            (self.policy.horizon <= ds.T, "policy.horizon must not exceed dataset.T"),
            (self.inverse.n_candidates >= 2, "inverse.n_candidates must be at least 2"),
            (self.eval.n_candidates >= 2, "eval.n_candidates must be at least 2"),
            (self.eval.selection in ("weight", "density"), "eval.selection must be 'weight' or 'density'"),
            (0.0 < self.inverse.lr_decay <= 1.0, "inverse.lr_decay must be in (0, 1]"),
            (0 < self.game.damping <= 1, "game.damping must be in (0, 1]"),
            (self.inverse.bandwidth > 0, "inverse.bandwidth must be positive"),
            (self.inverse.unroll >= 1, "inverse.unroll must be positive"),
            (0 <= self.eval.robot < ds.n_agents, "eval.robot must index an agent"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def load_config(path: str | Path | None) -> BenchConfig:
    if path is None:
        return BenchConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return BenchConfig.from_dict(data)


def write_resolved(cfg: BenchConfig, directory: str | Path) -> Path:
    out = Path(directory) / "resolved_config.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out
