"""Run configuration: JSON in, validated dataclass out."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeSpec, SpeciesStatistics, make_spin_algebra
from .single import ModelParams, default_coupling, random_coupling

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "lattice": {"d": 1, "L": 12, "a": 1.0, "dt": 0.25},
    "statistics": {"eps": [1, 1, 1], "masses": [1.0, 1.0, 1.0]},
    "coupling": {"pattern": "diagonal", "strength": 0.5},
    "caps": [1, 1, 1],
    "max_particles": None,
    "T": 2.0,
    "kappa": 0.5,
    "seed": 0,
    "margins": [2.0, 4.0, 6.0],
    "evolve": {"t": 2.0, "samples": 20, "charges": [0, 1]},
    "multitime": {"target": [1.0, 0.5], "paths": [[[0, 4], [1, 2]], [[1, 2], [0, 4]]],
                  "kappas": [0.0, 0.5, 1.0], "substeps": 4, "margin": 2.0},
    "consistency": {"n_probes": 4, "margin": 4.0, "t_max": 1.0},
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def as_dict(self) -> dict:
        return {"error": "config", "field": self.field, "message": self.message}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(path + k, "unknown key")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        schema = raw.get("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise ConfigError("schema", f"unsupported schema {schema!r} (expected {SCHEMA_VERSION})")
        cfg = cls(_merge(DEFAULTS, raw))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def __getitem__(self, key):
        return self.data[key]

    def with_seed(self, seed) -> "RunConfig":
        new = copy.deepcopy(self.data)
        new["seed"] = int(seed)
        return RunConfig.from_dict(new)

    def validate(self) -> None:
        d = self.data
        lat = d["lattice"]
        try:
            LatticeSpec(**lat)
        except (TypeError, ValueError) as exc:
            raise ConfigError("lattice", str(exc)) from exc
        st = d["statistics"]
        if len(st["eps"]) != 3 or len(st["masses"]) != 3:
            raise ConfigError("statistics", "eps and masses need three entries")
        try:
            SpeciesStatistics(*st["eps"], *st["masses"])
        except ValueError as exc:
            raise ConfigError("statistics", str(exc)) from exc
        if d["coupling"]["pattern"] not in ("diagonal", "random"):
            raise ConfigError("coupling.pattern", "must be 'diagonal' or 'random'")
        if len(d["caps"]) != 3 or any(int(c) < 0 for c in d["caps"]):
            raise ConfigError("caps", "need three nonnegative caps")
        if not d["T"] > 0:
            raise ConfigError("T", "must be positive")
        seed = d["seed"]
        if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if any(m < 0 for m in d["margins"]):
            raise ConfigError("margins", "must be nonnegative")
        mt = d["multitime"]
        if len(mt["target"]) < 1:
            raise ConfigError("multitime.target", "need at least one clock time")
        for i, path in enumerate(mt["paths"]):
            for move in path:
                if len(move) != 2:
                    raise ConfigError(f"multitime.paths[{i}]", "moves are [clock, steps]")

    def params(self) -> ModelParams:
        d = self.data
        spec = LatticeSpec(**d["lattice"])
        algebra = make_spin_algebra(spec.d)
        stats = SpeciesStatistics(*d["statistics"]["eps"], *d["statistics"]["masses"])
        c = d["coupling"]
        if c["pattern"] == "diagonal":
            g = default_coupling(algebra.ds, c["strength"])
        else:
            g = random_coupling(algebra.ds, np.random.default_rng(d["seed"]), c["strength"])
        return ModelParams(spec, algebra, stats, g, tuple(d["caps"]))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, sort_keys=True)


def default_config() -> RunConfig:
    return RunConfig()


__all__ = ["RunConfig", "ConfigError", "DEFAULTS", "SCHEMA_VERSION", "default_config"]
