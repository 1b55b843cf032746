"""Scenario description shared by server, client and the experiment harness."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Mapping

from .controllers import CONTROLLERS

SCENARIOS = ("microsim", "us06", "udds")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "microsim"
    controller: str = "wie"
    n_vehicles: int = 74
    n_cav_string: int = 5
    laps: int = 6
    tick: float = 0.1
    seed: int = 0
    v2v_delay: float = 0.1
    stale_after: float = 0.5
    max_time: float = 0.0      # 0 picks a per-lap allowance
    cycle_file: str = ""
    speed_factor_min: float = 0.9  # virtual drivers want U(min, 1) x zone limit

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        object.__setattr__(self, "controller", self.controller.lower())
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.kind!r}; choose from {SCENARIOS}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if self.tick <= 0:
            raise ValueError("tick must be positive")
        if self.laps < 1:
            raise ValueError("laps must be at least 1")
        if not 0.0 < self.speed_factor_min <= 1.0:
            raise ValueError("speed_factor_min must lie in (0, 1]")
        if self.n_vehicles < 2:
            raise ValueError("need at least two vehicles")
        if self.kind == "microsim" and self.controller == "mpc-c" and self.n_cav_string >= self.n_vehicles - 1:
            raise ValueError("CAV string must leave at least one human-driven leader")

    @property
    def is_cycle(self) -> bool:
        return self.kind != "microsim"

    @property
    def vehicle_count(self) -> int:
        return 2 if self.is_cycle else self.n_vehicles

    @property
    def time_limit(self) -> float:
        return self.max_time if self.max_time > 0 else 900.0 * self.laps + 600.0

    @property
    def discard_laps(self) -> int:
        return 1 if self.kind == "microsim" else 0

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, str] | None = None, **overrides) -> "ScenarioConfig":
        base = cls(**{k: v for k, v in overrides.items() if v is not None and k in ("kind", "controller")})
        vals = {}
        for f in fields(cls):
            raw = overrides.get(f.name)
            if raw is None and cfg and f.name in cfg:
                raw = cfg[f.name]
            if raw is None:
                continue
            typ = type(getattr(base, f.name))
            vals[f.name] = typ(raw)
        return replace(base, **vals)
