"""JSON run configuration with strict key checking.

A config file is an object with optional sections ``data``, ``network``,
``train`` and ``paths``. Any key not listed below is rejected so typos fail
loudly instead of silently falling back to a default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace

from .data import SyntheticSpec
from .network import NetworkConfig, TrainConfig
from .similarity import SimilarityMeasure


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    n: int = 200
    seed: int = 0
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    checkpoint: str = "checkpoint.racw"
    out_dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        spec = dataclasses.asdict(self.data.spec)
        spec.pop("rng_seed")
        return {
            "data": {"n": self.data.n, "seed": self.data.seed, **spec},
            "network": self.network.to_dict(),
            "train": dataclasses.asdict(self.train),
            "paths": dataclasses.asdict(self.paths),
        }


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section, given, allowed):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _build(section, cls, values):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] section: {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys("top level", raw, ("data", "network", "train", "paths"))
    for name, value in raw.items():
        if not isinstance(value, dict):
            raise ConfigError(f"section [{name}] must be an object")

    data_raw = dict(raw.get("data", {}))
    spec_fields = _field_names(SyntheticSpec) - {"rng_seed"}
    _check_keys("data", data_raw, spec_fields | {"n", "seed"})
    n = data_raw.pop("n", DataConfig.n)
    seed = data_raw.pop("seed", DataConfig.seed)
    for k in ("T_range", "reps_range", "duration_range", "gap_range"):
        if k in data_raw:
            if not (isinstance(data_raw[k], list) and len(data_raw[k]) == 2):
                raise ConfigError(f"[data] {k} must be a two-element list")
            data_raw[k] = tuple(data_raw[k])
    spec = _build("data", SyntheticSpec, data_raw)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid [data] section: {exc}") from None
    if not (isinstance(n, int) and n >= 0):
        raise ConfigError("[data] n must be a non-negative integer")
    if not isinstance(seed, int):
        raise ConfigError("[data] seed must be an integer")

    net_raw = dict(raw.get("network", {}))
    _check_keys("network", net_raw, _field_names(NetworkConfig))
    if "similarity" in net_raw:
        sim = net_raw["similarity"]
        if isinstance(sim, str):
            sim = {"kind": sim}
        if not isinstance(sim, dict):
            raise ConfigError("[network] similarity must be a string or an object")
        _check_keys("network.similarity", sim, _field_names(SimilarityMeasure))
        net_raw["similarity"] = _build("network.similarity", SimilarityMeasure, sim)

    train_raw = dict(raw.get("train", {}))
    _check_keys("train", train_raw, _field_names(TrainConfig))
    paths_raw = dict(raw.get("paths", {}))
    _check_keys("paths", paths_raw, _field_names(PathsConfig))

    return RunConfig(
        data=DataConfig(n=n, seed=seed, spec=spec),
        network=_build("network", NetworkConfig, net_raw),
        train=_build("train", TrainConfig, train_raw),
        paths=_build("paths", PathsConfig, paths_raw),
    )


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(raw)


def override(cfg: RunConfig, *, seed=None, lam=None, similarity=None, stride=None, target=None,
             threshold=None, epochs=None, learning_rate=None) -> RunConfig:
    """Apply command-line switches on top of a loaded config."""
    net, tr, data = cfg.network, cfg.train, cfg.data
    try:
        if seed is not None:
            net = replace(net, seed=seed)
            data = replace(data, seed=seed)
        if lam is not None:
            net = replace(net, lam=lam)
        if similarity is not None:
            net = replace(net, similarity=replace(net.similarity, kind=similarity))
        if target is not None:
            net = replace(net, target_mode=target)
        if stride is not None:
            tr = replace(tr, stride=stride)
        if threshold is not None:
            tr = replace(tr, prominence_threshold=threshold)
        if epochs is not None:
            tr = replace(tr, epochs=epochs)
        if learning_rate is not None:
            tr = replace(tr, learning_rate=learning_rate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return replace(cfg, network=net, train=tr, data=data)
