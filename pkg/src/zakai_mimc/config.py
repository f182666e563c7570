"""Experiment configuration: defaults, validation, and YAML round-trip."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import yaml

from ._validation import RHO_STABLE_MAX, RHO_STABLE_SLACK
from .errors import ConfigError, StabilityViolation

_SCHEMES = {"a", "b"}
_FUNCTIONALS = {"trap", "rect"}
_METHODS = {"mimc", "mlmc"}


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; defaults mirror the baseline test case."""

    mu: float = 0.081
    rho: float = 0.2
    T: float = 5.0
    x0: float = 5.0
    x_min: float = -10.0
    x_max: float = 20.0
    h0: float = 1.0
    k0: float | str = 0.25  # number or "auto"
    scheme: str = "a"
    functional: str = "trap"
    method: str = "mimc"
    epsilon: float | list = 1e-3  # number or sweep list
    alpha: float | str = "auto"  # number in (0,1) or "auto"
    global_seed: int = 0
    safety: float = 3.0
    pilot_samples: int = 200
    pilot_diag: int = 3
    r: float = 0.1
    cap_l1: int = 10
    cap_l2: int = 8
    max_work_units: float = 1e12
    output_dir: str = "."
    schema_version: int = 1

    # -- derived views ------------------------------------------------------

    @property
    def epsilon_list(self) -> list:
        if isinstance(self.epsilon, (list, tuple)):
            return [float(e) for e in self.epsilon]
        return [float(self.epsilon)]

    @property
    def epsilon_value(self) -> float:
        return self.epsilon_list[0]

    @property
    def k0_reference(self) -> float:
        """Baseline k0 used when k0='auto': 1/4, snapped so T/k0 is an integer."""
        return self.T / math.ceil(self.T / 0.25)

    @property
    def k0_value(self) -> float:
        return self.k0_reference if self.k0 == "auto" else float(self.k0)

    # -- validation ---------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.rho > RHO_STABLE_MAX + RHO_STABLE_SLACK:
            raise StabilityViolation(
                f"rho={self.rho} violates the mean-square stability bound "
                f"1/sqrt(2) ~ {RHO_STABLE_MAX:.6f}; the implicit Milstein scheme "
                "is only unconditionally stable below it"
            )
        if self.T <= 0 or self.h0 <= 0:
            raise ConfigError("T and h0 must be positive")
        if self.k0 != "auto" and not float(self.k0) > 0:
            raise ConfigError("k0 must be positive or 'auto'")
        if self.scheme not in _SCHEMES:
            raise ConfigError(f"scheme must be one of {sorted(_SCHEMES)}")
        if self.functional not in _FUNCTIONALS:
            raise ConfigError(f"functional must be one of {sorted(_FUNCTIONALS)}")
        if self.method not in _METHODS:
            raise ConfigError(f"method must be one of {sorted(_METHODS)}")
        if any(e <= 0 for e in self.epsilon_list):
            raise ConfigError("epsilon values must be positive")
        if self.alpha != "auto" and not (0.0 < float(self.alpha) < 1.0):
            raise ConfigError("alpha must lie in (0, 1) or be 'auto'")
        if self.safety < 1.0:
            raise ConfigError("safety must be >= 1")
        if self.pilot_samples < 2:
            raise ConfigError("pilot_samples must be >= 2")
        if not self.x_min < self.x0 < self.x_max:
            raise ConfigError("x0 must lie strictly inside (x_min, x_max)")
        return self

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "model": {"mu": self.mu, "rho": self.rho, "T": self.T, "x0": self.x0},
            "domain": {"x_min": self.x_min, "x_max": self.x_max},
            "base": {"h0": self.h0, "k0": self.k0},
            "run": {
                "scheme": self.scheme,
                "functional": self.functional,
                "method": self.method,
                "epsilon": self.epsilon,
                "alpha": self.alpha,
                "global_seed": self.global_seed,
                "output_dir": self.output_dir,
            },
            "estimator": {
                "safety": self.safety,
                "pilot_samples": self.pilot_samples,
                "pilot_diag": self.pilot_diag,
                "r": self.r,
                "cap_l1": self.cap_l1,
                "cap_l2": self.cap_l2,
                "max_work_units": self.max_work_units,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        known = {f.name for f in fields(cls)}
        flat: dict = {}
        for key, value in data.items():
            if key == "schema_version":
                flat["schema_version"] = int(value)
            elif isinstance(value, dict):
                for k, v in value.items():
                    if k not in known:
                        raise ConfigError(f"unknown config key {key}.{k}")
                    flat[k] = v
            elif key in known:
                flat[key] = value
            else:
                raise ConfigError(f"unknown config key {key}")
        try:
            cfg = cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_yaml())
