"""JSON round-tripping for configuration dataclasses."""

from __future__ import annotations

import dataclasses
import json
import os

from .env import EnvConfig, OpenLoopTable, PerturbationConfig
from .errors import ConfigError

_TUPLE_FIELDS = (
    "swing_bounds", "extension_bounds",
    "feedback_swing_bounds", "feedback_extension_bounds",
    "desired_direction",
)


def env_config_to_dict(cfg: EnvConfig) -> dict:
    return dataclasses.asdict(cfg)


def env_config_from_dict(data: dict) -> EnvConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(EnvConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown environment config keys: {sorted(unknown)}")
    for name in _TUPLE_FIELDS:
        if name in data and data[name] is not None:
            data[name] = tuple(data[name])
    if "perturbation" in data and isinstance(data["perturbation"], dict):
        pdata = dict(data["perturbation"])
        if "magnitude_range" in pdata:
            pdata["magnitude_range"] = tuple(pdata["magnitude_range"])
        data["perturbation"] = PerturbationConfig(**pdata)
    if data.get("open_loop_table") is not None and isinstance(data["open_loop_table"], dict):
        tdata = dict(data["open_loop_table"])
        data["open_loop_table"] = OpenLoopTable(
            times=tuple(tdata["times"]),
            actions=tuple(tuple(row) for row in tdata["actions"]),
            period=float(tdata["period"]),
        )
    cfg = EnvConfig(**data)
    cfg.validate()
    return cfg


def save_json(path: str, obj) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_json(path: str):
    with open(path) as fh:
        return json.load(fh)
