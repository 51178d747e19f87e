"""Named feature and weight vectors.

The reward is a linear form w^T phi over named per-trajectory feature sums.
Six base features exist (speed, control, lane, car, obstacle, fence); a
session may restrict to a subset or append extra features after a feature
augmentation, so both vectors carry their name tuple explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_FEATURES: tuple[str, ...] = ("speed", "control", "lane", "car", "obstacle", "fence")


class DimensionMismatchError(ValueError):
    """Weight and feature vectors disagree on the active feature set."""


def _check_names(names) -> tuple[str, ...]:
    names = tuple(names)
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate feature names: {names}")
    return names


@dataclass(frozen=True)
class FeatureVector:
    """Per-trajectory feature sums, keyed by feature name.

    Sign conventions are baked into the per-timestep transformations:
    lane is a positive Gaussian bump, all other base features are
    penalties and sum to non-positive values.
    """

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", _check_names(self.names))
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(self.names),):
            raise ValueError(f"expected {len(self.names)} values, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dict(cls, mapping) -> "FeatureVector":
        names = tuple(mapping)
        return cls(names, np.array([mapping[n] for n in names], dtype=np.float64))

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise KeyError(name) from None

    @property
    def speed(self) -> float:
        return self["speed"]

    @property
    def control(self) -> float:
        return self["control"]

    @property
    def lane(self) -> float:
        return self["lane"]

    @property
    def car(self) -> float:
        return self["car"]

    @property
    def obstacle(self) -> float:
        return self["obstacle"]

    @property
    def fence(self) -> float:
        return self["fence"]

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def to_json_dict(self):
        return self.as_dict()


@dataclass(frozen=True)
class WeightVector:
    """A point in reward-parameter space, keyed by feature name."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", _check_names(self.names))
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(self.names),):
            raise ValueError(f"expected {len(self.names)} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("weight values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dict(cls, mapping) -> "WeightVector":
        names = tuple(mapping)
        return cls(names, np.array([float(mapping[n]) for n in names], dtype=np.float64))

    @classmethod
    def zeros(cls, names=BASE_FEATURES) -> "WeightVector":
        names = tuple(names)
        return cls(names, np.zeros(len(names)))

    @property
    def dim(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.values[self.names.index(name)])
        except ValueError:
            raise KeyError(name) from None

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def normalized(self) -> "WeightVector":
        """Unit L2 version; the zero vector is returned unchanged."""
        n = self.norm()
        if n == 0.0:
            return self
        return WeightVector(self.names, self.values / n)

    def scale(self, c: float) -> "WeightVector":
        return WeightVector(self.names, self.values * c)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def to_json_dict(self):
        return self.as_dict()

    def base_array(self) -> np.ndarray:
        """Dense coefficients over BASE_FEATURES, zero where inactive.

        Raises if any name is not a base feature (augmented weights are
        not plannable; they only enter posterior recomputation).
        """
        out = np.zeros(len(BASE_FEATURES))
        for n, v in zip(self.names, self.values):
            try:
                out[BASE_FEATURES.index(n)] = v
            except ValueError:
                raise DimensionMismatchError(f"{n!r} is not a base feature") from None
        return out


def reward(w: WeightVector, features: FeatureVector) -> float:
    """Linear reward w^T phi. Weight and feature names must match exactly."""
    if w.names != features.names:
        raise DimensionMismatchError(
            f"weight features {w.names} do not match trajectory features {features.names}"
        )
    return float(np.dot(w.values, features.values))
