"""Flat ``key = value`` experiment configuration.

One assignment per line, ``#`` starts a comment. Keys mirror the usual
CIFAR training tables (batch_size, epoch, schedule, wd, gamma, lr, f_ext, ...).
Unknown or repeated keys and invalid values raise ConfigError before any work
starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backbone import NetworkConfig, StageSpec
from .errors import ConfigError
from .forest import ForestParams
from .train import TrainConfig


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    v = v.strip()
    if v in ("", "none", "-"):
        return ()
    return tuple(int(p) for p in v.replace("/", ",").split(",") if p.strip())


def _opt_int(v: str) -> int | None:
    return None if v.lower() in ("none", "all", "") else int(v)


def _difficulty(v: str):
    try:
        return float(v)
    except ValueError:
        return v


def _dia_stages(v: str):
    return None if v.lower() == "all" else _int_list(v)


# key -> (section, field, parser)
KEYS = {
    "depth": ("net", "depth", int),
    "widths": ("net", "widths", _int_list),
    "blocks": ("net", "blocks", int),
    "block": ("net", "block", str),
    "attention": ("net", "attention", str),
    "reduction_ratio": ("net", "reduction", int),
    "cells": ("net", "cells", int),
    "output_activation": ("net", "output_activation", str),
    "f_ext": ("net", "f_ext", str),
    "use_bn": ("net", "use_batch_norm", _bool),
    "skip_removal_fraction": ("net", "skip_removal_fraction", float),
    "dia_stages": ("net", "dia_stages", _dia_stages),
    "num_classes": ("train", "num_classes", int),
    "batch_size": ("train", "batch_size", int),
    "epoch": ("train", "epochs", int),
    "lr": ("train", "lr", float),
    "momentum": ("train", "momentum", float),
    "wd": ("train", "weight_decay", float),
    "schedule": ("train", "schedule", _int_list),
    "gamma": ("train", "gamma", float),
    "augment": ("train", "augment", _bool),
    "seed": ("train", "seed", int),
    "dataset": ("train", "dataset", str),
    "data_dir": ("train", "data_dir", str),
    "subset": ("train", "subset", _opt_int),
    "test_subset": ("train", "test_subset", _opt_int),
    "difficulty": ("train", "difficulty", _difficulty),
    "max_steps": ("train", "max_steps", _opt_int),
    "eval_interval": ("train", "eval_interval", int),
    "precision": ("train", "precision", int),
    "analysis_samples": ("analysis", "samples", int),
    "forest_trees": ("forest", "n_trees", int),
    "forest_max_depth": ("forest", "max_depth", _opt_int),
    "forest_min_leaf": ("forest", "min_leaf", int),
    "forest_max_features": ("forest", "max_features", float),
    "forest_bootstrap": ("forest", "bootstrap", _bool),
    "forest_jobs": ("forest", "n_jobs", int),
    "out_dir": ("out", "out_dir", str),
}


@dataclass
class ExperimentConfig:
    network: NetworkConfig
    train: TrainConfig
    forest: ForestParams = field(default_factory=ForestParams)
    analysis_samples: int = 512
    out_dir: str = "runs"


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    values: dict[str, dict] = {"net": {}, "train": {}, "analysis": {}, "forest": {}, "out": {}}
    seen = set()
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        section, name, parse = KEYS[key]
        try:
            values[section][name] = parse(val)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
    for key, val in (overrides or {}).items():
        section, name, _ = KEYS[key]
        values[section][name] = val
    return build_config(values)


def build_config(values: dict[str, dict]) -> ExperimentConfig:
    train = TrainConfig(**values["train"])
    net = dict(values["net"])
    depth = net.pop("depth", None)
    widths = net.pop("widths", (16, 32, 64))
    blocks = net.pop("blocks", None)
    block = net.get("block", "basic")
    if train.dataset == "cifar10":
        net["num_classes"] = 10
    elif train.dataset == "cifar100":
        net["num_classes"] = 100
    else:
        net["num_classes"] = train.num_classes
    if not widths:
        raise ConfigError("widths must list at least one stage width")
    if blocks is None:
        if depth is None:
            blocks = 2
        else:
            per = 6 if block == "basic" else 9
            if depth <= 2 or (depth - 2) % per:
                raise ConfigError(f"depth {depth} is not {per}n+2 for {block} blocks")
            blocks = (depth - 2) // per
    net["stages"] = [StageSpec(w, blocks, 1 if i == 0 else 2) for i, w in enumerate(widths)]
    network = NetworkConfig(**net)
    forest = ForestParams(seed=train.seed, **values["forest"])
    if forest.n_trees < 1 or forest.min_leaf < 1 or not 0 < forest.max_features <= 1:
        raise ConfigError("forest_trees, forest_min_leaf must be >= 1 and forest_max_features in (0, 1]")
    samples = values["analysis"].get("samples", 512)
    if samples < 2 * forest.min_leaf:
        raise ConfigError("analysis_samples too small for the forest leaf size")
    return ExperimentConfig(network, train, forest, samples, values["out"].get("out_dir", "runs"))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)
