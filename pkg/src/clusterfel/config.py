"""Run configuration: a JSON document layered over the packaged defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from . import datagen, fedsim, jfvo, wireless
from .errors import ValidationError

SECTIONS = ("seed", "scenario", "topology", "radio", "compute", "fading", "train",
            "calibration", "ssca", "beta_noise", "normalize_emd")


def default_config() -> dict:
    text = resources.files("clusterfel").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``."""
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ValidationError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _build(cls, d: Mapping, section: str, **extra):
    names = {f.name for f in fields(cls)}
    bad = set(d) - names
    if bad:
        raise ValidationError(f"[{section}] unknown keys {sorted(bad)}")
    try:
        return cls(**{**d, **extra})
    except TypeError as exc:
        raise ValidationError(f"[{section}] {exc}") from exc


def scenario(cfg: Mapping, seed: int | None = None) -> datagen.Scenario:
    d = dict(cfg["scenario"])
    d["rng_seed"] = int(cfg["seed"] if seed is None else seed)
    return datagen.Scenario.from_dict(d)


def radio(cfg: Mapping) -> wireless.RadioParams:
    return _build(wireless.RadioParams, cfg.get("radio", {}), "radio")


def compute(cfg: Mapping) -> wireless.ComputeParams:
    """Compute model; local epochs follow the training config unless set explicitly."""
    d = dict(cfg.get("compute", {}))
    d.setdefault("local_epochs", int(cfg["train"].get("local_epochs", 1)))
    return _build(wireless.ComputeParams, d, "compute")


def fading(cfg: Mapping, seed: int) -> wireless.FadingModel:
    return _build(wireless.FadingModel, cfg.get("fading", {}), "fading", rng_seed=int(seed))


def train(cfg: Mapping, seed: int) -> fedsim.TrainConfig:
    return _build(fedsim.TrainConfig, cfg["train"], "train", rng_seed=int(seed))


def schedule(cfg: Mapping) -> jfvo.SscaSchedule:
    return _build(jfvo.SscaSchedule, cfg.get("ssca", {}), "ssca")


def dumps(cfg: Mapping[str, Any]) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
