"""Finite-horizon shooting planner.

Gradient ascent on cumulative reward over the open-loop control sequence
(Adam-style adaptive updates, several random restarts plus one all-zeros
restart), receding-horizon style: optimize `horizon` steps, execute the
first `replan_every`, re-plan from the reached state until `horizon` steps
have been executed. `plan_worst_case` runs the same machinery as descent
and exists only to normalize regret.

Restart noise is seeded from (config seed, weight bytes, environment
content, phase), so planning the same problem returns bit-identical results
whether it runs alone or inside any batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .driving import CarState, Control, EnvBatch, EnvironmentSpec, Trajectory, features_batch, reward_and_grad_batch, rollout_states_batch
from .features import BASE_FEATURES, FeatureVector, WeightVector
from .seeding import content_digest, rng_for

_TIE_EPS = 1e-9
_INIT_RANGE = 0.5
_ADAM_BETAS = (0.9, 0.999)
_ADAM_EPS = 1e-8


class PlannerError(RuntimeError):
    """Raised when every restart of an optimization went non-finite."""

    def __init__(self, message: str, index: int = 0):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 10
    replan_every: int = 5
    opt_steps: int = 200
    step_size: float = 0.05
    restarts: int = 2
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.replan_every <= self.horizon):
            raise ValueError("require 1 <= replan_every <= horizon")
        if self.opt_steps < 1:
            raise ValueError("opt_steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    def to_json_dict(self):
        return {
            "horizon": self.horizon,
            "replan_every": self.replan_every,
            "opt_steps": self.opt_steps,
            "step_size": self.step_size,
            "restarts": self.restarts,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d) -> "PlannerConfig":
        return cls(**d)


class _WindowedEnvBatch:
    """View of an EnvBatch with car tracks shifted to a later time window."""

    def __init__(self, base: EnvBatch, offset: int, length: int):
        self.horizon = length
        for name in ("dt", "alpha", "v_goal", "x_goal", "d_lane2", "d_car2",
                     "d_obs2", "x_fl", "x_fr", "cone_xy"):
            self.__dict__[name] = getattr(base, name)
        self.car_xy = base.car_xy[:, :, offset:offset + length, :]


def _init_controls(w_opt, envs, cfg: PlannerConfig, phase: int, sense: int) -> np.ndarray:
    """Restart initializations, (B, R, H, 2); restart 0 is all zeros."""
    B, R, H = len(envs), cfg.restarts, cfg.horizon
    U0 = np.zeros((B, R, H, 2))
    if R > 1:
        for b, env in enumerate(envs):
            rng = rng_for(cfg.seed, "plan-init", sense + 1, phase,
                          content_digest(w_opt[b]), env.content_key())
            U0[b, 1:] = rng.uniform(-_INIT_RANGE, _INIT_RANGE, size=(R - 1, H, 2))
    return U0


def _optimize_phase(w_opt, x_start, envs, ea_win, cfg: PlannerConfig, phase: int, sense: int):
    """One receding-horizon phase; returns best controls per element.

    Restarts with non-finite rewards are aborted (their best is discarded);
    ties across surviving restarts go to the lowest restart index.
    """
    B, R, H = len(envs), cfg.restarts, cfg.horizon
    U = _init_controls(w_opt, envs, cfg, phase, sense)
    U = U.reshape(B * R, H, 2)
    w_rep = np.repeat(w_opt, R, axis=0)
    x_rep = np.repeat(x_start, R, axis=0)
    ea_rep = ea_win  # already repeated by caller

    b1, b2 = _ADAM_BETAS
    m = np.zeros_like(U)
    v = np.zeros_like(U)
    best_val = np.full(B * R, -np.inf)
    best_U = U.copy()
    dead = np.zeros(B * R, dtype=bool)

    def consider(r_val, u_now):
        finite = np.isfinite(r_val)
        np.logical_or(dead, ~finite, out=dead)
        improved = finite & ~dead & (r_val > best_val)
        if improved.any():
            best_val[improved] = r_val[improved]
            best_U[improved] = u_now[improved]

    for step in range(1, cfg.opt_steps + 1):
        r_val, g, _ = reward_and_grad_batch(w_rep, x_rep, U, ea_rep)
        consider(r_val, U)
        bad = ~np.isfinite(g).all(axis=(1, 2))
        if bad.any():
            dead |= bad
            g[bad] = 0.0
        g[dead] = 0.0
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**step)
        vhat = v / (1.0 - b2**step)
        U = U + cfg.step_size * mhat / (np.sqrt(vhat) + _ADAM_EPS)
    r_val, _, _ = reward_and_grad_batch(w_rep, x_rep, U, ea_rep)
    consider(r_val, U)

    best_val = best_val.reshape(B, R)
    best_U = best_U.reshape(B, R, H, 2)
    alive = ~dead.reshape(B, R) & np.isfinite(best_val)
    alive_best = np.where(alive, best_val, -np.inf)
    top = alive_best.max(axis=1)
    out = np.empty((B, H, 2))
    for b in range(B):
        if not np.isfinite(top[b]):
            raise PlannerError(
                f"all {R} restarts produced non-finite rewards (element {b})", index=b
            )
        pick = int(np.argmax(alive_best[b] >= top[b] - _TIE_EPS))
        out[b] = best_U[b, pick]
    return out


def _plan_batch_impl(ws, envs, cfg: PlannerConfig, sense: int) -> list[Trajectory]:
    if len(ws) != len(envs):
        raise ValueError("ws and envs must have equal length")
    if not ws:
        return []
    B, H = len(envs), cfg.horizon
    W6 = np.stack([w.base_array() for w in ws])
    w_opt = sense * W6

    n_phases = -(-H // cfg.replan_every)
    track_len = (n_phases - 1) * cfg.replan_every + H
    ea_full = EnvBatch(envs, track_len)
    ea_full_rep = ea_full.repeat(cfg.restarts)

    x_start = np.stack([e.ego_init.as_array() for e in envs])
    exec_controls = np.zeros((B, H, 2))
    executed = 0
    phase = 0
    while executed < H:
        win = _WindowedEnvBatch(ea_full_rep, executed, H)
        u_phase = _optimize_phase(w_opt, x_start, envs, win, cfg, phase, sense)
        k = min(cfg.replan_every, H - executed)
        exec_controls[:, executed:executed + k] = u_phase[:, :k]
        ea_step = _WindowedEnvBatch(ea_full, executed, k)
        X = rollout_states_batch(x_start, u_phase[:, :k], ea_step.dt, ea_step.alpha)
        x_start = X[:, k]
        executed += k
        phase += 1

    ea_exec = _WindowedEnvBatch(ea_full, 0, H)
    x0 = np.stack([e.ego_init.as_array() for e in envs])
    X_opt = rollout_states_batch(x0, exec_controls, ea_exec.dt, ea_exec.alpha)
    phi_opt = features_batch(X_opt, exec_controls, ea_exec)
    r_opt = np.sum(w_opt * phi_opt, axis=1)

    U_zero = np.zeros((B, H, 2))
    X_zero = rollout_states_batch(x0, U_zero, ea_exec.dt, ea_exec.alpha)
    phi_zero = features_batch(X_zero, U_zero, ea_exec)
    r_zero = np.sum(w_opt * phi_zero, axis=1)

    out = []
    for b in range(B):
        # zero-control rollout wins ties; guarantees the ascent/descent bound
        if r_opt[b] > r_zero[b] + _TIE_EPS:
            X, U, phi6 = X_opt[b], exec_controls[b], phi_opt[b]
        else:
            X, U, phi6 = X_zero[b], U_zero[b], phi_zero[b]
        names = ws[b].names
        idx = [BASE_FEATURES.index(n) for n in names]
        traj = Trajectory(
            states=tuple(CarState.from_array(X[t]) for t in range(H + 1)),
            controls=tuple(Control(float(U[t, 0]), float(U[t, 1])) for t in range(H)),
            features=FeatureVector(names, phi6[idx]),
        )
        out.append(traj)
    return out


def plan(w: WeightVector, env: EnvironmentSpec, cfg: PlannerConfig) -> Trajectory:
    """Best trajectory found by gradient ascent on cumulative reward."""
    return _plan_batch_impl([w], [env], cfg, sense=+1)[0]


def plan_batch(ws: list[WeightVector], envs: list[EnvironmentSpec], cfg: PlannerConfig) -> list[Trajectory]:
    """Vectorized planning; element i is bit-identical to plan(ws[i], envs[i], cfg)."""
    return _plan_batch_impl(list(ws), list(envs), cfg, sense=+1)


def plan_worst_case(w: WeightVector, env: EnvironmentSpec, cfg: PlannerConfig) -> Trajectory:
    """Reward-minimizing counterpart of plan; used for regret normalization."""
    return _plan_batch_impl([w], [env], cfg, sense=-1)[0]


def plan_worst_case_batch(ws, envs, cfg: PlannerConfig) -> list[Trajectory]:
    return _plan_batch_impl(list(ws), list(envs), cfg, sense=-1)
