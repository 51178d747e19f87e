"""Parametric distributions over initial placements.

The development and deployment pools are uniform box distributions over the
starting positions of the other cars and cones, with rejection of entities
that would start inside the ego's collision radius. Deployment uses a
tighter lateral range for the cars so its difficulty distribution shifts
while staying inside the development support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .driving import CarState, EnvironmentSpec, PhysicsConfig
from .seeding import rng_for

_MAX_REJECTION_ATTEMPTS = 10_000


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvironmentDistribution:
    """Uniform boxes over entity placements.

    The development defaults cover a long road stretch, so most samples are
    sparse and the reciprocal-distance difficulty histogram keeps the
    long-tail shape; the deployment pool (see `deploy_distribution_from`)
    restricts to the interactive stretch near the ego.
    """

    n_other_cars: int = 2
    n_cones: int = 2
    car_x_range: tuple[float, float] = (-0.75, 0.75)
    car_y_range: tuple[float, float] = (-8.0, 8.0)
    cone_x_range: tuple[float, float] = (-0.75, 0.75)
    cone_y_range: tuple[float, float] = (0.0, 8.0)
    other_car_speed: float = 0.8
    ego_init: CarState = field(default_factory=lambda: CarState(0.0, 0.0, math.pi / 2, 1.0))
    grid_resolution: float = 0.25
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    def __post_init__(self):
        for name in ("car_x_range", "car_y_range", "cone_x_range", "cone_y_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n_other_cars < 0 or self.n_cones < 0:
            raise ValueError("entity counts must be non-negative")
        if self.grid_resolution <= 0:
            raise ValueError("grid_resolution must be positive")

    def to_json_dict(self):
        return {
            "n_other_cars": self.n_other_cars,
            "n_cones": self.n_cones,
            "car_x_range": list(self.car_x_range),
            "car_y_range": list(self.car_y_range),
            "cone_x_range": list(self.cone_x_range),
            "cone_y_range": list(self.cone_y_range),
            "other_car_speed": self.other_car_speed,
            "ego_init": self.ego_init.to_json_dict(),
            "grid_resolution": self.grid_resolution,
            "physics": self.physics.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d) -> "EnvironmentDistribution":
        d = dict(d)
        if "ego_init" in d:
            d["ego_init"] = CarState.from_json_dict(d["ego_init"])
        if "physics" in d:
            d["physics"] = PhysicsConfig.from_json_dict(d["physics"])
        for name in ("car_x_range", "car_y_range", "cone_x_range", "cone_y_range"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def check_deploy_within_devel(devel: EnvironmentDistribution, deploy: EnvironmentDistribution) -> None:
    """Deployment supports must not exceed development supports."""
    for name in ("car_x_range", "car_y_range", "cone_x_range", "cone_y_range"):
        dv, dp = getattr(devel, name), getattr(deploy, name)
        if dp[0] < dv[0] or dp[1] > dv[1]:
            raise ValueError(f"deploy {name} {dp} not contained in devel {name} {dv}")


def _sample_entity(rng, x_range, y_range, ego, d_min, what: str) -> tuple[float, float]:
    for _ in range(_MAX_REJECTION_ATTEMPTS):
        x = rng.uniform(x_range[0], x_range[1])
        y = rng.uniform(y_range[0], y_range[1])
        if math.hypot(x - ego.x, y - ego.y) > d_min:
            return x, y
    raise SamplingError(
        f"could not place a {what} outside the ego collision radius after "
        f"{_MAX_REJECTION_ATTEMPTS} attempts; ranges x={x_range} y={y_range} are degenerate"
    )


def sample_environments(dist: EnvironmentDistribution, n: int, seed) -> list[EnvironmentSpec]:
    """Draw n environments with entities uniform over their boxes.

    Entities landing within d_min of the ego are rejection-resampled.
    Deterministic for a given seed.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = rng_for(seed, "env-sample") if isinstance(seed, int) else np.random.default_rng(seed)
    ego = dist.ego_init
    d_min = dist.physics.d_min
    out = []
    for _ in range(n):
        cars = []
        for _ in range(dist.n_other_cars):
            x, y = _sample_entity(rng, dist.car_x_range, dist.car_y_range, ego, d_min, "car")
            cars.append(CarState(x, y, math.pi / 2, dist.other_car_speed))
        cones = []
        for _ in range(dist.n_cones):
            cones.append(
                _sample_entity(rng, dist.cone_x_range, dist.cone_y_range, ego, d_min, "cone")
            )
        out.append(
            EnvironmentSpec(
                ego_init=ego,
                other_cars=tuple(cars),
                cones=tuple(cones),
                physics=dist.physics,
            )
        )
    return out


def _axis_points(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def enumerate_grid(dist: EnvironmentDistribution, limit: int | None = None) -> Iterator[EnvironmentSpec]:
    """Lazily yield the Cartesian grid over entity positions.

    The same ego-proximity filter as sampling applies; environments whose
    entities collide with each other are not excluded.
    """
    import itertools

    ego = dist.ego_init
    d_min = dist.physics.d_min
    car_xs = _axis_points(*dist.car_x_range, dist.grid_resolution)
    car_ys = _axis_points(*dist.car_y_range, dist.grid_resolution)
    cone_xs = _axis_points(*dist.cone_x_range, dist.grid_resolution)
    cone_ys = _axis_points(*dist.cone_y_range, dist.grid_resolution)

    car_points = [
        (x, y) for x in car_xs for y in car_ys
        if math.hypot(x - ego.x, y - ego.y) > d_min
    ]
    cone_points = [
        (x, y) for x in cone_xs for y in cone_ys
        if math.hypot(x - ego.x, y - ego.y) > d_min
    ]
    yielded = 0
    for cars in itertools.product(car_points, repeat=dist.n_other_cars):
        for cones in itertools.product(cone_points, repeat=dist.n_cones):
            if limit is not None and yielded >= limit:
                return
            yield EnvironmentSpec(
                ego_init=ego,
                other_cars=tuple(
                    CarState(x, y, math.pi / 2, dist.other_car_speed) for x, y in cars
                ),
                cones=tuple(cones),
                physics=dist.physics,
            )
            yielded += 1


def deploy_distribution_from(
    devel: EnvironmentDistribution,
    car_x_range=(-0.4, 0.4),
    car_y_range=(-1.5, 1.5),
    cone_y_range=(0.2, 2.0),
) -> EnvironmentDistribution:
    """Deployment pool: the interactive stretch of the devel support,
    with the tighter lateral car range centered on the ego."""
    from dataclasses import replace

    deploy = replace(
        devel,
        car_x_range=tuple(car_x_range),
        car_y_range=tuple(car_y_range),
        cone_y_range=tuple(cone_y_range),
    )
    check_deploy_within_devel(devel, deploy)
    return deploy
