"""Experiment configuration: YAML file -> validated, hashable settings.

Schema (every section optional except ``dataset``)::

    seed: 0                      # master seed; per-run seeds derive from it
    runs: 100                    # mask seeds per experiment
    dataset:
      kind: synthetic-wearable   # see DATASET_KINDS
      path: null                 # required for real datasets
      params: {}                 # generator / loader keyword arguments
      test_subjects: 2           # held-out subject count (synthetic kinds)
      split_seed: 0              # seeded subject split (real kinds)
    imputer:
      checkpoint: null           # reuse a trained model instead of training
      segment_stride: 60
      config: {}                 # ImputerConfig overrides
    classifier:
      checkpoint: null
      config: {}                 # ClassifierConfig overrides
    bench:
      experiments: [sources, lengths]   # and/or segments
      strategies: [linear, mean, median, mode, nearest, spline, transformer]
      ratio: 0.1
      gap_length_range: [1, 120]
      pattern: per_channel       # or all_sensors
      gaps_per_channel: {S: 24, M: 6, L: 2}
      length_classes: {S: [1, 5], M: [6, 30], L: [31, 120]}
      segment_class: L           # gap class of the one-gap-per-frame experiment
    downstream:
      task: har
      strategies: [none, mean, linear, transformer]
      rates: [0.0, 0.1, 0.2, 0.3, 0.4]
      gap_length_range: [1, 32]
"""

from __future__ import annotations

import copy
import inspect
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from .baselines import KINDS as IMPUTER_KINDS, ImputerDescriptor
from .classifier import ClassifierConfig
from .datasets import HarSpec, sinusoid_mixture, wearable_suite_spec
from .engine import config_hash
from .imputer import ImputerConfig
from .masking import ALL_SENSORS, PER_CHANNEL

DATASET_KINDS = ("synthetic-wearable", "synthetic-har", "sinusoid", "novartis", "wesad", "ucihar")
REAL_KINDS = ("novartis", "wesad", "ucihar")
BENCH_EXPERIMENTS = ("sources", "lengths", "segments")


def _keywords(fn, drop=()) -> set[str]:
    return {k for k in inspect.signature(fn).parameters if k not in drop}


DATASET_PARAMS: dict[str, set[str]] = {
    "synthetic-wearable": _keywords(wearable_suite_spec),
    "sinusoid": _keywords(sinusoid_mixture, ("n_segments",)) | {"n_train", "n_test"},
    "synthetic-har": {f.name for f in fields(HarSpec)},
    "novartis": {"channels"},
    "wesad": {"n_train"},
    "ucihar": {"split"},
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "runs": 100,
    "dataset": {"kind": None, "path": None, "params": {}, "test_subjects": 2, "split_seed": 0},
    "imputer": {"checkpoint": None, "segment_stride": 60, "config": {}},
    "classifier": {"checkpoint": None, "config": {}},
    "bench": {
        "experiments": ["sources", "lengths"],
        "strategies": ["linear", "mean", "median", "mode", "nearest", "spline", "transformer"],
        "ratio": 0.1,
        "gap_length_range": [1, 120],
        "pattern": PER_CHANNEL,
        "gaps_per_channel": {"S": 24, "M": 6, "L": 2},
        "length_classes": {"S": [1, 5], "M": [6, 30], "L": [31, 120]},
        "segment_class": "L",
    },
    "downstream": {
        "task": "har",
        "strategies": ["none", "mean", "linear", "transformer"],
        "rates": [0.0, 0.1, 0.2, 0.3, 0.4],
        "gap_length_range": [1, 32],
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict) and key not in ("params", "config"):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _check_fields(cls, overrides: dict, where: str) -> None:
    known = {f.name for f in fields(cls)}
    for key in overrides:
        if key not in known:
            raise ConfigError(f"unknown {where} field {key!r}")


def _check_range(value, where: str) -> None:
    if not (isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, int) for v in value)):
        raise ConfigError(f"{where} must be a pair of integers")
    if not 1 <= value[0] <= value[1]:
        raise ConfigError(f"{where} must satisfy 1 <= lo <= hi, got {value}")


def _check_strategy(name: str, allowed, where: str) -> None:
    kind = str(name).split(":")[0]
    if kind not in allowed:
        raise ConfigError(f"{where}: unknown strategy {name!r}")
    if kind != "none":
        try:
            ImputerDescriptor.parse(str(name))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ExperimentConfig:
    data: dict
    source_text: str = ""
    source_path: Path | None = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def runs(self) -> int:
        return int(self.data["runs"])

    def hash(self) -> str:
        return config_hash(self.data)

    def imputer_overrides(self) -> dict:
        return dict(self.data["imputer"]["config"])

    def classifier_overrides(self) -> dict:
        return dict(self.data["classifier"]["config"])

    def with_overrides(self, seed: int | None = None, runs: int | None = None) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = int(seed)
        if runs is not None:
            data["runs"] = int(runs)
        cfg = ExperimentConfig(data, self.source_text, self.source_path)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d = self.data
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(d["runs"], int) or d["runs"] < 1:
            raise ConfigError("runs must be an integer >= 1")
        ds = d["dataset"]
        if ds["kind"] not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {', '.join(DATASET_KINDS)}; got {ds['kind']!r}")
        if ds["kind"] in REAL_KINDS:
            if not ds["path"]:
                raise ConfigError(f"dataset.path is required for {ds['kind']}")
            if not Path(ds["path"]).exists():
                raise ConfigError(f"dataset.path {ds['path']} does not exist")
        if not isinstance(ds["params"], dict):
            raise ConfigError("dataset.params must be a mapping")
        unknown = set(ds["params"]) - DATASET_PARAMS[ds["kind"]]
        if unknown:
            raise ConfigError(f"dataset.params for {ds['kind']} has unknown keys {sorted(unknown)}")
        if not isinstance(ds["test_subjects"], int) or ds["test_subjects"] < 0:
            raise ConfigError("dataset.test_subjects must be a non-negative integer")
        _check_fields(ImputerConfig, d["imputer"]["config"], "imputer.config")
        _check_fields(ClassifierConfig, d["classifier"]["config"], "classifier.config")
        for section in ("imputer", "classifier"):
            ck = d[section]["checkpoint"]
            if ck is not None and not Path(ck).exists():
                raise ConfigError(f"{section}.checkpoint {ck} does not exist")
        b = d["bench"]
        if not b["experiments"] or any(e not in BENCH_EXPERIMENTS for e in b["experiments"]):
            raise ConfigError(f"bench.experiments must be a non-empty subset of {', '.join(BENCH_EXPERIMENTS)}")
        if b["segment_class"] not in ("S", "M", "L"):
            raise ConfigError("bench.segment_class must be S, M or L")
        if not b["strategies"]:
            raise ConfigError("bench.strategies is empty")
        for s in b["strategies"]:
            _check_strategy(s, IMPUTER_KINDS, "bench.strategies")
        if not 0.0 <= float(b["ratio"]) < 1.0:
            raise ConfigError("bench.ratio must lie in [0, 1)")
        _check_range(b["gap_length_range"], "bench.gap_length_range")
        if b["pattern"] not in (PER_CHANNEL, ALL_SENSORS):
            raise ConfigError(f"bench.pattern must be {PER_CHANNEL} or {ALL_SENSORS}")
        for cls in ("S", "M", "L"):
            _check_range(b["length_classes"].get(cls), f"bench.length_classes.{cls}")
            if not isinstance(b["gaps_per_channel"].get(cls), int) or b["gaps_per_channel"][cls] < 0:
                raise ConfigError(f"bench.gaps_per_channel.{cls} must be a non-negative integer")
        ds_ = d["downstream"]
        for s in ds_["strategies"]:
            _check_strategy(s, ("none", "mean", "linear", "transformer", "median", "nearest", "spline"), "downstream.strategies")
        for r in ds_["rates"]:
            if not 0.0 <= float(r) < 1.0:
                raise ConfigError(f"downstream rate {r} outside [0, 1)")
        _check_range(ds_["gap_length_range"], "downstream.gap_length_range")
        try:
            ImputerConfig(**d["imputer"]["config"])
            ClassifierConfig(**d["classifier"]["config"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def parse_config(text: str, source_path: Path | None = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    cfg = ExperimentConfig(_merge(DEFAULTS, raw), text, source_path)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), path)
