"""Flat ``key = value`` configuration with environment overrides.

Keys are grouped by prefix: scenario keys are bare (``laps``, ``seed``),
track keys are bare geometry names (``straight_length``, ``a_c``), driver
keys start with ``wie_`` or ``idm_``, and MPC keys with ``mpcu_`` or
``mpcc_``.  Any key can be overridden by ``VILSIM_<KEY>`` in the environment.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .drivers import idm_from_config, wie99_from_config
from .mpc import params_from_config
from .sim.controllers import ControllerParams
from .sim.scenario import ScenarioConfig
from .track import TrackMap, track_from_config

ENV_PREFIX = "VILSIM_"


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        out[key.lower()] = value
    return out


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> dict[str, str]:
    """Read ``path`` (if given) and apply ``VILSIM_*`` overrides from ``env``."""
    cfg = parse_config(Path(path).read_text(), str(path)) if path else {}
    env = os.environ if env is None else env
    for key, value in env.items():
        if key.startswith(ENV_PREFIX) and len(key) > len(ENV_PREFIX):
            cfg[key[len(ENV_PREFIX):].lower()] = value
    return cfg


def _strip(cfg: Mapping[str, str], prefix: str) -> dict[str, str]:
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


@dataclass(frozen=True)
class Settings:
    track: TrackMap
    params: ControllerParams

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, str] | None = None) -> "Settings":
        cfg = cfg or {}
        params = ControllerParams(
            wie=wie99_from_config(cfg), idm=idm_from_config(cfg),
            mpc_u=params_from_config("mpc-u", _strip(cfg, "mpcu_")),
            mpc_c=params_from_config("mpc-c", _strip(cfg, "mpcc_")))
        return cls(track_from_config(cfg), params)


def scenario_from_config(cfg: Mapping[str, str], **overrides) -> ScenarioConfig:
    return ScenarioConfig.from_mapping(cfg, **overrides)
