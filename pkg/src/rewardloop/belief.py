"""Posterior over the true reward weights.

The designer is modeled as approximately optimal: the probability of
observing a proxy weight vector scales with exp(beta * sum of true-reward
values of the proxy's planned trajectories). Inverting that observation
model with a sequential-importance-resampling particle filter yields a
belief over the true weights, updated either against every environment
seen so far (joint mode) or only the newest one (independent mode).

The intractable normalizer of the observation model is approximated with a
shared per-iteration sample set of alternative proxies; following the
trick that avoids planning per candidate weight inside the inference loop,
the candidate's own normalizer term reuses the observed proxy's feature
sums instead of planning under the candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .driving import EnvironmentSpec, Trajectory
from .features import BASE_FEATURES, WeightVector
from .planner import PlannerConfig, plan_batch
from .seeding import rng_for

_ENTROPY_RIDGE = 1e-6


class BeliefError(RuntimeError):
    pass


@dataclass(frozen=True)
class DesignerModelConfig:
    """Rationality and approximation knobs for the designer model.

    The forward temperature simulates a noisy designer and is divided by
    the number of environments in scope when the rule is
    "scaled_by_env_count"; the inverse temperature (default 1) is what the
    particle filter inverts.
    """

    beta_forward: float = 0.1
    beta_inverse: float = 1.0
    beta_forward_rule: str = "scaled_by_env_count"
    n_normalizer_samples: int = 32
    n_designer_candidates: int = 50
    designer_noise: float = 0.3

    def __post_init__(self):
        if self.beta_forward < 0 or self.beta_inverse < 0:
            raise ValueError("rationality temperatures must be >= 0")
        if self.beta_forward_rule not in ("fixed", "scaled_by_env_count"):
            raise ValueError(f"unknown beta_forward_rule {self.beta_forward_rule!r}")
        if self.n_normalizer_samples < 1:
            raise ValueError("n_normalizer_samples must be >= 1")
        if self.n_designer_candidates < 1:
            raise ValueError("n_designer_candidates must be >= 1")

    def effective_beta_forward(self, n_envs: int) -> float:
        if self.beta_forward_rule == "scaled_by_env_count":
            return self.beta_forward / max(n_envs, 1)
        return self.beta_forward

    def to_json_dict(self):
        return {
            "beta_forward": self.beta_forward,
            "beta_inverse": self.beta_inverse,
            "beta_forward_rule": self.beta_forward_rule,
            "n_normalizer_samples": self.n_normalizer_samples,
            "n_designer_candidates": self.n_designer_candidates,
            "designer_noise": self.designer_noise,
        }

    @classmethod
    def from_json_dict(cls, d) -> "DesignerModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class ProxyObservation:
    """One designed reward: weights plus the environments they were
    designed against. Trajectories planned under the proxy are attached
    when available so later updates and feature augmentation can reuse
    them without re-planning."""

    weights: WeightVector
    scope: str  # "joint" | "independent"
    env_indices: tuple[int, ...]
    trajectories: tuple[Trajectory, ...] | None = None

    def __post_init__(self):
        if self.scope not in ("joint", "independent"):
            raise ValueError(f"unknown scope {self.scope!r}")
        object.__setattr__(self, "env_indices", tuple(int(i) for i in self.env_indices))
        if self.scope == "independent" and len(self.env_indices) != 1:
            raise ValueError("independent-scope proxies are designed against exactly one environment")
        if self.trajectories is not None:
            object.__setattr__(self, "trajectories", tuple(self.trajectories))
            if len(self.trajectories) != len(self.env_indices):
                raise ValueError("one trajectory per designed-against environment required")

    def to_json_dict(self):
        d = {
            "weights": self.weights.as_dict(),
            "scope": self.scope,
            "env_indices": list(self.env_indices),
        }
        if self.trajectories is not None:
            d["trajectories"] = [t.to_json_dict() for t in self.trajectories]
        return d

    @classmethod
    def from_json_dict(cls, d) -> "ProxyObservation":
        trajs = None
        if d.get("trajectories") is not None:
            trajs = tuple(Trajectory.from_json_dict(t) for t in d["trajectories"])
        return cls(
            weights=WeightVector.from_dict(d["weights"]),
            scope=d["scope"],
            env_indices=tuple(d["env_indices"]),
            trajectories=trajs,
        )


@dataclass(frozen=True)
class ParticleBelief:
    """Weighted particle cloud over weight space.

    Particles keep their raw prior-cube values; unit normalization happens
    at the planning boundary and in the posterior-mean estimate, never in
    storage, so entropy reflects the actual cloud.
    """

    names: tuple[str, ...]
    particles: np.ndarray  # (N, d)
    log_weights: np.ndarray  # (N,), logsumexp == 0
    generation: int = 0
    seed_lineage: tuple = ()
    map_point: np.ndarray | None = None  # argmax of the last update's likelihood

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=np.float64)
        lw = np.asarray(self.log_weights, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("particles must be a (N, d) array with N >= 1")
        if p.shape[1] != len(self.names):
            raise ValueError("particle dimension must match the feature names")
        if lw.shape != (p.shape[0],):
            raise ValueError("one log weight per particle required")
        p.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def weights_linear(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def particle_vector(self, i: int) -> WeightVector:
        return WeightVector(self.names, self.particles[i])

    def posterior_mean(self) -> WeightVector:
        """Weighted mean of unit-normalized particles."""
        norms = np.linalg.norm(self.particles, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = self.particles / safe[:, None]
        mean = self.weights_linear() @ unit
        return WeightVector(self.names, mean)

    def map_estimate(self) -> WeightVector:
        if self.map_point is not None:
            return WeightVector(self.names, self.map_point)
        return self.posterior_mean()

    def to_json_dict(self):
        d = {
            "names": list(self.names),
            "particles": self.particles.tolist(),
            "log_weights": self.log_weights.tolist(),
            "generation": self.generation,
            "seed_lineage": list(self.seed_lineage),
        }
        if self.map_point is not None:
            d["map_point"] = list(self.map_point)
        return d

    @classmethod
    def from_json_dict(cls, d) -> "ParticleBelief":
        return cls(
            names=tuple(d["names"]),
            particles=np.array(d["particles"], dtype=np.float64),
            log_weights=np.array(d["log_weights"], dtype=np.float64),
            generation=int(d["generation"]),
            seed_lineage=tuple(d.get("seed_lineage", ())),
            map_point=None if d.get("map_point") is None else np.array(d["map_point"]),
        )


def sample_prior(names, n_particles: int, seed) -> ParticleBelief:
    """Uniform prior over the [-1, 1]^d hypercube."""
    names = tuple(names)
    rng = rng_for(seed, "prior") if isinstance(seed, int) else seed
    particles = rng.uniform(-1.0, 1.0, size=(n_particles, len(names)))
    lw = np.full(n_particles, -math.log(n_particles))
    return ParticleBelief(names, particles, lw, generation=0, seed_lineage=(seed if isinstance(seed, int) else -1,))


def _plan_for(w: WeightVector, envs, planner_cfg: PlannerConfig) -> list[Trajectory]:
    wn = w.normalized()
    return plan_batch([wn] * len(envs), list(envs), planner_cfg)


def _feature_sum(trajs, names) -> np.ndarray:
    total = np.zeros(len(names))
    for t in trajs:
        if t.features.names != tuple(names):
            raise BeliefError(
                f"trajectory features {t.features.names} do not match belief space {tuple(names)}"
            )
        total = total + t.features.values
    return total


class NormalizerSet:
    """Per-iteration proxy sample set with cached planned feature sums.

    The same set is shared by every particle (and by the hypothetical
    updates during acquisition) so normalizer differences reflect the
    candidate weight, not sampling noise.
    """

    def __init__(self, names, proxies: np.ndarray, planner_cfg: PlannerConfig):
        self.names = tuple(names)
        self.proxies = np.asarray(proxies, dtype=np.float64)
        if self.proxies.ndim != 2 or self.proxies.shape[0] < 1:
            raise BeliefError("normalizer sample set must be non-empty")
        self._planner_cfg = planner_cfg
        self._env_features: dict[int, np.ndarray] = {}

    @property
    def n(self) -> int:
        return self.proxies.shape[0]

    def _ensure_env(self, env: EnvironmentSpec) -> np.ndarray:
        key = env.content_key()
        if key not in self._env_features:
            uniq, inverse = np.unique(self.proxies, axis=0, return_inverse=True)
            ws = [WeightVector(self.names, row).normalized() for row in uniq]
            trajs = plan_batch(ws, [env] * len(ws), self._planner_cfg)
            feats = np.stack([t.features.values for t in trajs])
            self._env_features[key] = feats[inverse]
        return self._env_features[key]

    def total_features(self, envs) -> np.ndarray:
        """Feature sums of each normalizer proxy, summed over envs: (n, d)."""
        total = np.zeros((self.n, len(self.names)))
        for env in envs:
            total = total + self._ensure_env(env)
        return total


def draw_normalizer_set(belief: ParticleBelief, cfg: DesignerModelConfig, planner_cfg: PlannerConfig, seed) -> NormalizerSet:
    """Draw the iteration's shared normalizer proxies from the belief."""
    rng = rng_for(seed, "normalizer") if isinstance(seed, int) else seed
    idx = rng.choice(belief.n_particles, size=cfg.n_normalizer_samples, p=belief.weights_linear())
    return NormalizerSet(belief.names, belief.particles[idx], planner_cfg)


def designer_log_potential(
    w_true: WeightVector,
    w_proxy: WeightVector,
    envs,
    beta: float,
    planner_cfg: PlannerConfig,
    proxy_trajectories=None,
) -> float:
    """Unnormalized log observation potential: beta times the true-reward
    value of the proxy's planned trajectory, summed over environments."""
    if w_true.names != w_proxy.names:
        raise BeliefError("true and proxy weights live in different feature spaces")
    if beta == 0.0:
        return 0.0
    trajs = proxy_trajectories or _plan_for(w_proxy, envs, planner_cfg)
    phi = _feature_sum(trajs, w_true.names)
    return float(beta * np.dot(w_true.values, phi))


def _loglik_rows(particles: np.ndarray, beta: float, phi_proxy: np.ndarray, phi_norm: np.ndarray) -> np.ndarray:
    """Normalized log-likelihood of the proxy for each particle row."""
    n = phi_norm.shape[0]
    if beta == 0.0:
        return np.full(particles.shape[0], -math.log(n + 1))
    s_prox = beta * (particles @ phi_proxy)
    s_norm = beta * (particles @ phi_norm.T)
    stacked = np.concatenate([s_norm, s_prox[:, None]], axis=1)
    return s_prox - logsumexp(stacked, axis=1)


def normalized_log_likelihood(
    w_true: WeightVector,
    w_proxy: WeightVector,
    envs,
    beta: float,
    normalizer: NormalizerSet,
    planner_cfg: PlannerConfig,
    proxy_trajectories=None,
) -> float:
    """Log of the approximately normalized designer likelihood.

    The normalizing sum runs over the shared proxy samples plus one term
    for the candidate itself, which reuses the observed proxy's feature
    sums (planning under every candidate weight would dominate the run
    time of inference).
    """
    if normalizer is None or normalizer.n < 1:
        raise BeliefError("a non-empty normalizer sample set is required")
    if beta == 0.0:
        return float(-math.log(normalizer.n + 1))
    trajs = proxy_trajectories or _plan_for(w_proxy, envs, planner_cfg)
    phi_proxy = _feature_sum(trajs, w_true.names)
    phi_norm = normalizer.total_features(envs)
    return float(_loglik_rows(w_true.values[None, :], beta, phi_proxy, phi_norm)[0])


def systematic_resample(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling indices; equal weights return the identity."""
    n = log_weights.shape[0]
    w = np.exp(log_weights - logsumexp(log_weights))
    c = np.cumsum(w)
    c[-1] = 1.0
    positions = (rng.uniform() + np.arange(n)) / n
    return np.searchsorted(c, positions, side="right")


def _apply_update(
    belief: ParticleBelief,
    proxy: ProxyObservation,
    envs,
    cfg: DesignerModelConfig,
    planner_cfg: PlannerConfig,
    normalizer: NormalizerSet,
    seed,
) -> ParticleBelief:
    if proxy.weights.names != belief.names:
        raise BeliefError("proxy weights do not match the belief's feature space")
    beta = cfg.beta_inverse
    if beta == 0.0:
        loglik = np.full(belief.n_particles, -math.log(normalizer.n + 1))
    else:
        trajs = proxy.trajectories or _plan_for(proxy.weights, envs, planner_cfg)
        if len(trajs) != len(envs):
            trajs = _plan_for(proxy.weights, envs, planner_cfg)
        phi_proxy = _feature_sum(trajs, belief.names)
        phi_norm = normalizer.total_features(envs)
        loglik = _loglik_rows(belief.particles, beta, phi_proxy, phi_norm)

    new_lw = belief.log_weights + loglik
    z = logsumexp(new_lw)
    if not np.isfinite(z):
        raise BeliefError("degenerate posterior: all particle weights vanished")
    new_lw = new_lw - z

    rng = rng_for(seed, "resample", belief.generation) if isinstance(seed, int) else seed
    idx = systematic_resample(new_lw, rng)
    resampled = belief.particles[idx]
    uniform = np.full(belief.n_particles, -math.log(belief.n_particles))
    score = belief.log_weights + loglik
    map_point = belief.particles[int(np.argmax(score))]
    lineage = belief.seed_lineage + ((seed,) if isinstance(seed, int) else ())
    return ParticleBelief(
        belief.names, resampled, uniform,
        generation=belief.generation + 1,
        seed_lineage=lineage,
        map_point=map_point,
    )


def update_joint(
    belief: ParticleBelief,
    proxy: ProxyObservation,
    all_envs,
    cfg: DesignerModelConfig,
    planner_cfg: PlannerConfig,
    normalizer: NormalizerSet,
    seed,
) -> ParticleBelief:
    """Importance-reweight against a proxy designed for every environment
    so far, then resample back to equally weighted particles."""
    if proxy.scope != "joint":
        raise BeliefError("update_joint requires a joint-scope proxy")
    return _apply_update(belief, proxy, list(all_envs), cfg, planner_cfg, normalizer, seed)


def update_independent(
    belief: ParticleBelief,
    proxy: ProxyObservation,
    new_env: EnvironmentSpec,
    cfg: DesignerModelConfig,
    planner_cfg: PlannerConfig,
    normalizer: NormalizerSet,
    seed,
) -> ParticleBelief:
    """Update relying on the newest environment only."""
    if proxy.scope != "independent":
        raise BeliefError("update_independent requires an independent-scope proxy")
    return _apply_update(belief, proxy, [new_env], cfg, planner_cfg, normalizer, seed)


def entropy(belief: ParticleBelief) -> float:
    """Gaussian-approximation differential entropy of the particle cloud,
    0.5 * log det(2 pi e (Sigma + ridge I))."""
    n, d = belief.particles.shape
    if n < d + 2:
        raise BeliefError(f"need at least dim + 2 = {d + 2} particles, have {n}")
    w = belief.weights_linear()
    mean = w @ belief.particles
    centered = belief.particles - mean
    cov = (centered * w[:, None]).T @ centered
    cov = cov + _ENTROPY_RIDGE * np.eye(d)
    sign, logdet = np.linalg.slogdet(2.0 * math.pi * math.e * cov)
    if sign <= 0:
        raise BeliefError("particle covariance is not positive definite")
    return float(0.5 * logdet)


def simulate_designer(
    w_star: WeightVector,
    envs,
    cfg: DesignerModelConfig,
    planner_cfg: PlannerConfig,
    seed,
    scope: str = "joint",
    env_indices=None,
) -> ProxyObservation:
    """Draw a proxy the way a noisy rational designer would.

    Candidates are the true weights plus isotropic Gaussian perturbations
    (renormalized); one is sampled with probability proportional to
    exp(observation potential) at the forward temperature.
    """
    envs = list(envs)
    if not envs:
        raise BeliefError("designer needs at least one environment")
    rng = rng_for(seed, "designer") if isinstance(seed, int) else seed
    star = w_star.normalized()
    d = star.dim
    n_cand = cfg.n_designer_candidates
    cand = np.empty((n_cand, d))
    cand[0] = star.values
    noise = rng.normal(0.0, cfg.designer_noise, size=(n_cand - 1, d))
    raw = star.values[None, :] + noise
    norms = np.linalg.norm(raw, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    cand[1:] = raw / norms[:, None]

    beta_eff = cfg.effective_beta_forward(len(envs))
    cand_ws = [WeightVector(star.names, row) for row in cand]
    if beta_eff == 0.0:
        potentials = np.zeros(n_cand)
        all_trajs = None
    else:
        pairs_w = []
        pairs_env = []
        for w in cand_ws:
            wn = w.normalized()
            for env in envs:
                pairs_w.append(wn)
                pairs_env.append(env)
        trajs = plan_batch(pairs_w, pairs_env, planner_cfg)
        phi = np.stack([t.features.values for t in trajs]).reshape(n_cand, len(envs), d)
        potentials = beta_eff * np.einsum("ced,d->c", phi, w_star.values)
        all_trajs = [trajs[c * len(envs):(c + 1) * len(envs)] for c in range(n_cand)]

    logits = potentials - potentials.max()
    probs = np.exp(logits)
    probs = probs / probs.sum()
    pick = int(rng.choice(n_cand, p=probs))

    if env_indices is None:
        env_indices = tuple(range(len(envs)))
    # at zero temperature no planning happened; updates plan on demand
    picked_trajs = tuple(all_trajs[pick]) if all_trajs is not None else None
    return ProxyObservation(
        weights=cand_ws[pick],
        scope=scope,
        env_indices=tuple(env_indices),
        trajectories=picked_trajs,
    )
