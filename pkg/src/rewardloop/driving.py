"""Lane-merge driving micro-world.

Point-mass vehicle dynamics under explicit Euler, six differentiable reward
features summed per trajectory, and seven per-timestep violation predicates
used for evaluation only. Everything here is a pure function; the module
also houses the vectorized array engine the planner differentiates through.

Conventions:
  * x is the lateral coordinate (lanes are vertical strips of constant x),
    y is the longitudinal coordinate, heading 0 points along +x, so a car
    driving down the road has heading pi/2.
  * Per-timestep quantities are evaluated at the post-control states
    x_1..x_H paired with controls u_0..u_{H-1}; feature sums and violation
    counts therefore have exactly `horizon` contributions.
  * Proximity kernels are unnormalized Gaussians exp(-||z||^2 / (2 d^2)),
    so each entity contributes at most 1 per step and the lane feature
    peaks at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .features import BASE_FEATURES, FeatureVector, WeightVector, reward
from .seeding import content_digest

__all__ = [
    "CarState",
    "Control",
    "PhysicsConfig",
    "EnvironmentSpec",
    "Trajectory",
    "ViolationReport",
    "dynamics_step",
    "rollout",
    "compute_features",
    "reward",
    "count_violations",
    "difficulty",
    "other_car_positions",
    "wrong_lane_center",
]

_FAR_AWAY = 1.0e9  # padding coordinate; its Gaussian underflows to exactly 0


@dataclass(frozen=True)
class CarState:
    """Vehicle state: lateral x, longitudinal y, heading theta, speed v."""

    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "CarState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def to_json_dict(self):
        return {"x": self.x, "y": self.y, "theta": self.theta, "v": self.v}

    @classmethod
    def from_json_dict(cls, d) -> "CarState":
        return cls(float(d["x"]), float(d["y"]), float(d["theta"]), float(d["v"]))


@dataclass(frozen=True)
class Control:
    """Steering rate and acceleration. Comfort is penalized, never clamped."""

    u_steer: float
    u_acc: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_steer, self.u_acc], dtype=np.float64)

    def to_json_dict(self):
        return {"u_steer": self.u_steer, "u_acc": self.u_acc}

    @classmethod
    def from_json_dict(cls, d) -> "Control":
        return cls(float(d["u_steer"]), float(d["u_acc"]))


@dataclass(frozen=True)
class PhysicsConfig:
    """World geometry and dynamics constants.

    Defaults describe a three-lane road scaled so a merge to the leftmost
    lane completes within a 10-step horizon at dt = 0.1 s.
    """

    dt: float = 0.1
    alpha: float = 0.1
    v_goal: float = 1.0
    v_min: float = 0.2
    v_max: float = 2.0
    u_max: tuple[float, float] = (2.0, 2.0)
    d_min: float = 0.15
    d_lane: float = 0.15
    d_car: float = 0.2
    d_obs: float = 0.2
    lane_centers: tuple[float, ...] = (-0.5, 0.0, 0.5)
    x_fence_left: float = -0.75
    x_fence_right: float = 0.75
    x_goal: float = -0.5

    def __post_init__(self):
        object.__setattr__(self, "u_max", tuple(float(u) for u in self.u_max))
        object.__setattr__(self, "lane_centers", tuple(float(c) for c in self.lane_centers))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not (self.v_min < self.v_goal < self.v_max):
            raise ValueError("require v_min < v_goal < v_max")
        if min(self.d_min, self.d_lane, self.d_car, self.d_obs) <= 0:
            raise ValueError("widths must be positive")
        if not all(self.x_fence_left < c < self.x_fence_right for c in self.lane_centers):
            raise ValueError("lane centers must lie strictly between the fences")

    def to_json_dict(self):
        d = {
            "dt": self.dt,
            "alpha": self.alpha,
            "v_goal": self.v_goal,
            "v_min": self.v_min,
            "v_max": self.v_max,
            "u_max": list(self.u_max),
            "d_min": self.d_min,
            "d_lane": self.d_lane,
            "d_car": self.d_car,
            "d_obs": self.d_obs,
            "lane_centers": list(self.lane_centers),
            "x_fence_left": self.x_fence_left,
            "x_fence_right": self.x_fence_right,
            "x_goal": self.x_goal,
        }
        return d

    @classmethod
    def from_json_dict(cls, d) -> "PhysicsConfig":
        d = dict(d)
        d["u_max"] = tuple(d.get("u_max", (2.0, 2.0)))
        d["lane_centers"] = tuple(d.get("lane_centers", (-0.5, 0.0, 0.5)))
        return cls(**d)


def wrong_lane_center(physics: PhysicsConfig) -> float | None:
    """Center of the lane a merging car should not be in.

    For a leftward merge this is the lane left of the target; when the
    target is already the leftmost lane it is the lane to the target's
    right (the lane the car has to leave). Returns None when the road has
    a single lane.
    """
    lanes = sorted(physics.lane_centers)
    if len(lanes) < 2:
        return None
    ti = int(np.argmin([abs(c - physics.x_goal) for c in lanes]))
    return lanes[1] if ti == 0 else lanes[ti - 1]


@dataclass(frozen=True)
class EnvironmentSpec:
    """One MDP-without-reward: initial placements on the shared road.

    Other cars move forward along their heading at their fixed initial
    speed; cones are static. No entity may start within d_min of the ego.
    """

    ego_init: CarState
    other_cars: tuple[CarState, ...] = ()
    cones: tuple[tuple[float, float], ...] = ()
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    def __post_init__(self):
        object.__setattr__(self, "other_cars", tuple(self.other_cars))
        object.__setattr__(
            self, "cones", tuple((float(x), float(y)) for x, y in self.cones)
        )
        ex, ey = self.ego_init.x, self.ego_init.y
        for car in self.other_cars:
            if math.hypot(car.x - ex, car.y - ey) <= self.physics.d_min:
                raise ValueError("other car initialized within d_min of ego")
        for cx, cy in self.cones:
            if math.hypot(cx - ex, cy - ey) <= self.physics.d_min:
                raise ValueError("cone initialized within d_min of ego")

    def content_key(self) -> int:
        parts = [self.ego_init.as_array()]
        parts.append(
            np.array([c.as_array() for c in self.other_cars]).reshape(-1, 4)
            if self.other_cars
            else np.zeros((0, 4))
        )
        parts.append(np.array(self.cones, dtype=np.float64).reshape(-1, 2))
        phys = self.physics
        parts.append(
            np.array(
                [
                    phys.dt, phys.alpha, phys.v_goal, phys.v_min, phys.v_max,
                    *phys.u_max, phys.d_min, phys.d_lane, phys.d_car, phys.d_obs,
                    *phys.lane_centers, phys.x_fence_left, phys.x_fence_right,
                    phys.x_goal,
                ]
            )
        )
        return content_digest(*parts)

    def to_json_dict(self):
        return {
            "ego_init": self.ego_init.to_json_dict(),
            "other_cars": [c.to_json_dict() for c in self.other_cars],
            "cones": [list(c) for c in self.cones],
            "physics": self.physics.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d) -> "EnvironmentSpec":
        return cls(
            ego_init=CarState.from_json_dict(d["ego_init"]),
            other_cars=tuple(CarState.from_json_dict(c) for c in d["other_cars"]),
            cones=tuple((float(x), float(y)) for x, y in d["cones"]),
            physics=PhysicsConfig.from_json_dict(d["physics"]),
        )


@dataclass(frozen=True)
class Trajectory:
    """Executed states (H+1), controls (H) and their summed features."""

    states: tuple[CarState, ...]
    controls: tuple[Control, ...]
    features: FeatureVector

    @property
    def horizon(self) -> int:
        return len(self.controls)

    def states_array(self) -> np.ndarray:
        return np.array([s.as_array() for s in self.states])

    def controls_array(self) -> np.ndarray:
        if not self.controls:
            return np.zeros((0, 2))
        return np.array([c.as_array() for c in self.controls])

    def to_json_dict(self, weights: WeightVector | None = None, label: str | None = None):
        d = {
            "states": [s.to_json_dict() for s in self.states],
            "controls": [c.to_json_dict() for c in self.controls],
            "features": self.features.as_dict(),
        }
        if weights is not None:
            d["reward"] = {"under": label or "weights", "value": reward(weights, self.features)}
        return d

    @classmethod
    def from_json_dict(cls, d) -> "Trajectory":
        return cls(
            states=tuple(CarState.from_json_dict(s) for s in d["states"]),
            controls=tuple(Control.from_json_dict(c) for c in d["controls"]),
            features=FeatureVector.from_dict(d["features"]),
        )


@dataclass(frozen=True)
class ViolationReport:
    """Per-timestep boolean constraint counts, summed over the horizon
    (and over entities for the two crash predicates)."""

    overspeed: int = 0
    underspeed: int = 0
    uncomfortable: int = 0
    collision: int = 0
    crash_object: int = 0
    offtrack: int = 0
    wronglane: int = 0

    def total(self) -> int:
        return (
            self.overspeed + self.underspeed + self.uncomfortable
            + self.collision + self.crash_object + self.offtrack + self.wronglane
        )

    def __add__(self, other: "ViolationReport") -> "ViolationReport":
        return ViolationReport(
            self.overspeed + other.overspeed,
            self.underspeed + other.underspeed,
            self.uncomfortable + other.uncomfortable,
            self.collision + other.collision,
            self.crash_object + other.crash_object,
            self.offtrack + other.offtrack,
            self.wronglane + other.wronglane,
        )

    def to_json_dict(self):
        return {
            "overspeed": self.overspeed,
            "underspeed": self.underspeed,
            "uncomfortable": self.uncomfortable,
            "collision": self.collision,
            "crash_object": self.crash_object,
            "offtrack": self.offtrack,
            "wronglane": self.wronglane,
            "total": self.total(),
        }


# ---------------------------------------------------------------------------
# Array engine. Everything below operates on batches; the public scalar
# operations are thin wrappers over batch size 1 so that scalar and batched
# paths produce bit-identical floats.
# ---------------------------------------------------------------------------


class EnvBatch:
    """Per-environment constants stacked for vectorized evaluation.

    Entity slots are padded with a far-away coordinate whose Gaussian
    kernel underflows to exactly zero, so mixed entity counts in one batch
    cannot perturb the unpadded elements.
    """

    def __init__(self, envs: list[EnvironmentSpec], horizon: int):
        B = len(envs)
        self.horizon = horizon
        get = lambda attr: np.array([getattr(e.physics, attr) for e in envs])
        self.dt = get("dt")
        self.alpha = get("alpha")
        self.v_goal = get("v_goal")
        self.x_goal = get("x_goal")
        self.d_lane2 = get("d_lane") ** 2
        self.d_car2 = get("d_car") ** 2
        self.d_obs2 = get("d_obs") ** 2
        self.x_fl = get("x_fence_left")
        self.x_fr = get("x_fence_right")

        max_cars = max((len(e.other_cars) for e in envs), default=0)
        max_cones = max((len(e.cones) for e in envs), default=0)
        # car tracks at timesteps t = 1..H: (B, max_cars, H, 2)
        self.car_xy = np.full((B, max_cars, horizon, 2), _FAR_AWAY)
        t = np.arange(1, horizon + 1, dtype=np.float64)
        for b, env in enumerate(envs):
            for i, car in enumerate(env.other_cars):
                dist = t * env.physics.dt * car.v
                self.car_xy[b, i, :, 0] = car.x + dist * np.cos(car.theta)
                self.car_xy[b, i, :, 1] = car.y + dist * np.sin(car.theta)
        self.cone_xy = np.full((B, max_cones, 2), _FAR_AWAY)
        for b, env in enumerate(envs):
            for j, (cx, cy) in enumerate(env.cones):
                self.cone_xy[b, j] = (cx, cy)

    def repeat(self, k: int) -> "EnvBatch":
        """Tile every element k times (restart fan-out), element-major."""
        out = object.__new__(EnvBatch)
        out.horizon = self.horizon
        for name in ("dt", "alpha", "v_goal", "x_goal", "d_lane2", "d_car2",
                     "d_obs2", "x_fl", "x_fr", "car_xy", "cone_xy"):
            out.__dict__[name] = np.repeat(getattr(self, name), k, axis=0)
        return out


def rollout_states_batch(x0: np.ndarray, U: np.ndarray, dt: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Explicit Euler forward pass. x0 (B,4), U (B,H,2) -> X (B,H+1,4)."""
    B, H, _ = U.shape
    X = np.empty((B, H + 1, 4))
    X[:, 0] = x0
    for t in range(H):
        x, y, th, v = X[:, t, 0], X[:, t, 1], X[:, t, 2], X[:, t, 3]
        X[:, t + 1, 0] = x + dt * v * np.cos(th)
        X[:, t + 1, 1] = y + dt * v * np.sin(th)
        X[:, t + 1, 2] = th + dt * U[:, t, 0]
        X[:, t + 1, 3] = v + dt * (U[:, t, 1] - alpha * v)
    return X


def _proximity_terms(xs, ys, ea: EnvBatch):
    """Gaussian kernels and offsets for cars and cones at each timestep."""
    dx_c = xs[:, None, :] - ea.car_xy[:, :, :, 0]
    dy_c = ys[:, None, :] - ea.car_xy[:, :, :, 1]
    e_c = np.exp(-(dx_c**2 + dy_c**2) / (2.0 * ea.d_car2[:, None, None]))
    dx_o = xs[:, None, :] - ea.cone_xy[:, :, None, 0]
    dy_o = ys[:, None, :] - ea.cone_xy[:, :, None, 1]
    e_o = np.exp(-(dx_o**2 + dy_o**2) / (2.0 * ea.d_obs2[:, None, None]))
    return dx_c, dy_c, e_c, dx_o, dy_o, e_o


def features_per_step_batch(X: np.ndarray, U: np.ndarray, ea: EnvBatch):
    """Per-timestep feature values, each (B, H), ordered as BASE_FEATURES."""
    xs, ys, vs = X[:, 1:, 0], X[:, 1:, 1], X[:, 1:, 3]
    speed = -((vs - ea.v_goal[:, None]) ** 2)
    control = -(U[:, :, 0] ** 2 + U[:, :, 1] ** 2)
    lane = np.exp(-((xs - ea.x_goal[:, None]) ** 2) / (2.0 * ea.d_lane2[:, None]))
    _, _, e_c, _, _, e_o = _proximity_terms(xs, ys, ea)
    car = -e_c.sum(axis=1)
    obstacle = -e_o.sum(axis=1)
    fence = -np.maximum(ea.x_fl[:, None] - xs, 0.0) - np.maximum(xs - ea.x_fr[:, None], 0.0)
    return np.stack([speed, control, lane, car, obstacle, fence], axis=1)


def features_batch(X: np.ndarray, U: np.ndarray, ea: EnvBatch) -> np.ndarray:
    """Summed feature vector per element: (B, 6) ordered as BASE_FEATURES."""
    return features_per_step_batch(X, U, ea).sum(axis=2)


def reward_and_grad_batch(W6: np.ndarray, x0: np.ndarray, U: np.ndarray, ea: EnvBatch):
    """Cumulative reward and its gradient w.r.t. controls.

    W6 (B,6) dense over BASE_FEATURES, x0 (B,4), U (B,H,2).
    Returns (R (B,), dU (B,H,2), X (B,H+1,4)). The reverse pass is the
    exact adjoint of the Euler rollout; validated against central finite
    differences in the test suite.
    """
    B, H, _ = U.shape
    X = rollout_states_batch(x0, U, ea.dt, ea.alpha)
    xs, ys, ths, vs = X[:, 1:, 0], X[:, 1:, 1], X[:, 1:, 2], X[:, 1:, 3]

    w_speed, w_ctrl, w_lane = W6[:, 0], W6[:, 1], W6[:, 2]
    w_car, w_obs, w_fence = W6[:, 3], W6[:, 4], W6[:, 5]

    lane = np.exp(-((xs - ea.x_goal[:, None]) ** 2) / (2.0 * ea.d_lane2[:, None]))
    dx_c, dy_c, e_c, dx_o, dy_o, e_o = _proximity_terms(xs, ys, ea)

    speed = -((vs - ea.v_goal[:, None]) ** 2)
    control = -(U[:, :, 0] ** 2 + U[:, :, 1] ** 2)
    car = -e_c.sum(axis=1)
    obstacle = -e_o.sum(axis=1)
    fence = -np.maximum(ea.x_fl[:, None] - xs, 0.0) - np.maximum(xs - ea.x_fr[:, None], 0.0)
    phi = np.stack(
        [speed.sum(1), control.sum(1), lane.sum(1), car.sum(1), obstacle.sum(1), fence.sum(1)],
        axis=1,
    )
    R = np.sum(W6 * phi, axis=1)

    # direct reward gradient at each post state x_t, t = 1..H: (B, H, 4)
    g = np.zeros((B, H, 4))
    g[:, :, 0] = (
        w_lane[:, None] * lane * (-(xs - ea.x_goal[:, None]) / ea.d_lane2[:, None])
        + w_car[:, None] * (e_c * dx_c).sum(axis=1) / ea.d_car2[:, None]
        + w_obs[:, None] * (e_o * dx_o).sum(axis=1) / ea.d_obs2[:, None]
        + w_fence[:, None] * (
            (xs < ea.x_fl[:, None]).astype(np.float64)
            - (xs > ea.x_fr[:, None]).astype(np.float64)
        )
    )
    g[:, :, 1] = (
        w_car[:, None] * (e_c * dy_c).sum(axis=1) / ea.d_car2[:, None]
        + w_obs[:, None] * (e_o * dy_o).sum(axis=1) / ea.d_obs2[:, None]
    )
    g[:, :, 3] = w_speed[:, None] * (-2.0 * (vs - ea.v_goal[:, None]))

    dU = np.empty((B, H, 2))
    lam = np.zeros((B, 4))
    dt, alpha = ea.dt, ea.alpha
    for t in range(H - 1, -1, -1):
        lam_new = g[:, t, :].copy()
        if t + 1 < H:
            # pull back lambda_{t+2} through the Jacobian at (x_{t+1}, u_{t+1})
            th1, v1 = ths[:, t], vs[:, t]
            lam_new[:, 0] += lam[:, 0]
            lam_new[:, 1] += lam[:, 1]
            lam_new[:, 2] += (
                -dt * v1 * np.sin(th1) * lam[:, 0]
                + dt * v1 * np.cos(th1) * lam[:, 1]
                + lam[:, 2]
            )
            lam_new[:, 3] += (
                dt * np.cos(th1) * lam[:, 0]
                + dt * np.sin(th1) * lam[:, 1]
                + (1.0 - dt * alpha) * lam[:, 3]
            )
        dU[:, t, 0] = dt * lam_new[:, 2] - 2.0 * w_ctrl * U[:, t, 0]
        dU[:, t, 1] = dt * lam_new[:, 3] - 2.0 * w_ctrl * U[:, t, 1]
        lam = lam_new
    return R, dU, X


def violations_batch(X: np.ndarray, U: np.ndarray, envs: list[EnvironmentSpec]) -> list[ViolationReport]:
    B, H = U.shape[0], U.shape[1]
    ea = EnvBatch(envs, H)
    xs, ys, vs = X[:, 1:, 0], X[:, 1:, 1], X[:, 1:, 3]
    reports = []
    for b, env in enumerate(envs):
        p = env.physics
        over = int(np.count_nonzero(vs[b] > p.v_max))
        under = int(np.count_nonzero(vs[b] < p.v_min))
        u_inf = np.maximum(np.abs(U[b, :, 0]), np.abs(U[b, :, 1]))
        uncomfortable = int(np.count_nonzero(u_inf > max(p.u_max)))
        n_cars, n_cones = len(env.other_cars), len(env.cones)
        coll = 0
        if n_cars:
            d2 = (xs[b][None, :] - ea.car_xy[b, :n_cars, :, 0]) ** 2 + (
                ys[b][None, :] - ea.car_xy[b, :n_cars, :, 1]
            ) ** 2
            coll = int(np.count_nonzero(np.sqrt(d2) <= p.d_min))
        crash = 0
        if n_cones:
            d2 = (xs[b][None, :] - ea.cone_xy[b, :n_cones, None, 0]) ** 2 + (
                ys[b][None, :] - ea.cone_xy[b, :n_cones, None, 1]
            ) ** 2
            crash = int(np.count_nonzero(np.sqrt(d2) <= p.d_min))
        off = int(np.count_nonzero((xs[b] < p.x_fence_left) | (xs[b] > p.x_fence_right)))
        wl_center = wrong_lane_center(p)
        wrong = 0
        if wl_center is not None:
            wrong = int(np.count_nonzero(np.abs(xs[b] - wl_center) <= p.d_lane))
        reports.append(
            ViolationReport(over, under, uncomfortable, coll, crash, off, wrong)
        )
    return reports


def _feature_subset(phi6: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
    idx = [BASE_FEATURES.index(n) for n in names]
    return phi6[idx]


# ---------------------------------------------------------------------------
# Public scalar operations
# ---------------------------------------------------------------------------


def dynamics_step(state: CarState, control: Control, physics: PhysicsConfig) -> CarState:
    """One explicit-Euler step of the point-mass vehicle model."""
    x0 = state.as_array()[None, :]
    U = control.as_array()[None, None, :]
    X = rollout_states_batch(
        x0, U, np.array([physics.dt]), np.array([physics.alpha])
    )
    return CarState.from_array(X[0, 1])


def rollout(
    init: CarState,
    controls: list[Control],
    env: EnvironmentSpec,
    names: tuple[str, ...] = BASE_FEATURES,
) -> Trajectory:
    """Chain dynamics steps from `init` and attach summed features."""
    if not controls:
        raise ValueError("controls must be non-empty")
    U = np.array([c.as_array() for c in controls])[None, :, :]
    H = len(controls)
    ea = EnvBatch([env], H)
    X = rollout_states_batch(init.as_array()[None, :], U, ea.dt, ea.alpha)
    phi6 = features_batch(X, U, ea)[0]
    fv = FeatureVector(tuple(names), _feature_subset(phi6, tuple(names)))
    return Trajectory(
        states=tuple(CarState.from_array(X[0, t]) for t in range(H + 1)),
        controls=tuple(controls),
        features=fv,
    )


def compute_features(
    traj: Trajectory, env: EnvironmentSpec, names: tuple[str, ...] = BASE_FEATURES
) -> FeatureVector:
    """Recompute the summed feature vector from a trajectory's states/controls."""
    U = traj.controls_array()[None, :, :]
    H = traj.horizon
    ea = EnvBatch([env], H)
    X = traj.states_array()[None, :, :]
    phi6 = features_batch(X, U, ea)[0]
    return FeatureVector(tuple(names), _feature_subset(phi6, tuple(names)))


def count_violations(traj: Trajectory, env: EnvironmentSpec) -> ViolationReport:
    """Apply the seven per-timestep constraint predicates and sum counts."""
    X = traj.states_array()[None, :, :]
    U = traj.controls_array()[None, :, :]
    return violations_batch(X, U, [env])[0]


def difficulty(env: EnvironmentSpec) -> float:
    """Sum of reciprocal initial distances from the ego to every entity."""
    ex, ey = env.ego_init.x, env.ego_init.y
    total = 0.0
    for car in env.other_cars:
        total += 1.0 / math.hypot(car.x - ex, car.y - ey)
    for cx, cy in env.cones:
        total += 1.0 / math.hypot(cx - ex, cy - ey)
    return total


def other_car_positions(env: EnvironmentSpec, t: int) -> np.ndarray:
    """Positions of the constant-speed other cars at timestep t, shape (n, 2)."""
    out = np.zeros((len(env.other_cars), 2))
    for i, car in enumerate(env.other_cars):
        dist = t * env.physics.dt * car.v
        out[i, 0] = car.x + dist * np.cos(car.theta)
        out[i, 1] = car.y + dist * np.sin(car.theta)
    return out
