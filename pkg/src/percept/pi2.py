"""Episodic policy improvement with a per-timestep KL trust region.

The policy is time-varying linear-Gaussian, u ~ N(K_t x + k_t, Sigma_t), with
the feedback K_t and the exploration covariance Sigma_t fixed; only the
open-loop controls k_t are learned. Each iteration samples a batch of
rollouts, computes suffix reward sums S_t per sample, and moves k_t to the
softmax-weighted average of the sampled controls, exp(beta_t S_t), with the
temperature beta_t chosen per timestep as large as possible subject to
KL(new || old) = 0.5 dk' Sigma_t^-1 dk <= epsilon (closed form: only the mean
moves). If even the unweighted average (beta = 0) violates the bound, dk is
scaled radially onto the trust-region boundary. KL(beta) is assumed monotone
for the bisection; if the probes say otherwise, a 256-point grid scan picks
the feasible beta with maximal KL instead.

Rewards follow the appendix convention r_t = R(x_{t+1}): the reward for a
step reflects the state the control produced.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

BETA_MAX = 1e4
KL_TOL = 1e-9
# offsets the evaluation rng substream far away from rollout indices
EVAL_STREAM_TAG = 987654321


class RolloutError(RuntimeError):
    """An episode produced a non-finite state."""


@dataclass(frozen=True)
class LinearGaussianPolicy:
    feedback: np.ndarray  # (T, du, dx), fixed
    k: np.ndarray         # (T, du), learned open-loop controls
    sigma: np.ndarray     # (T, du, du), fixed exploration covariance

    def __post_init__(self):
        t, du, dx = self.feedback.shape
        if self.k.shape != (t, du) or self.sigma.shape != (t, du, du):
            raise ValueError("inconsistent policy shapes")
        for arr in (self.feedback, self.k, self.sigma):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite policy parameters")
        object.__setattr__(self, "_chol", np.linalg.cholesky(self.sigma))

    @property
    def horizon(self) -> int:
        return self.feedback.shape[0]

    @property
    def control_dim(self) -> int:
        return self.feedback.shape[1]

    @property
    def state_dim(self) -> int:
        return self.feedback.shape[2]

    def mean_control(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.feedback[t] @ x + self.k[t]

    def sample_control(self, t: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.mean_control(t, x) + self._chol[t] @ rng.standard_normal(self.control_dim)


@dataclass(frozen=True)
class Rollout:
    states: np.ndarray    # (T+1, dx)
    controls: np.ndarray  # (T, du)
    rewards: np.ndarray   # (T,)

    def __post_init__(self):
        t = self.controls.shape[0]
        if self.states.shape[0] != t + 1 or self.rewards.shape != (t,):
            raise ValueError("inconsistent rollout lengths")
        for arr in (self.states, self.controls, self.rewards):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite rollout")


@dataclass(frozen=True)
class PI2Config:
    n_iterations: int = 11
    n_samples: int = 10
    epsilon: float = 0.1
    beta_max: float = BETA_MAX
    seed: int = 0
    eval_episodes: int = 50

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.n_iterations < 1 or self.beta_max <= 0 or self.eval_episodes < 1:
            raise ValueError("bad config")


def bootstrap_from_demo(reference: np.ndarray, feedback: np.ndarray, sigma0: np.ndarray) -> LinearGaussianPolicy:
    """Trajectory-following initialization: k_t = -K_t x_hat_t, so the mean
    control at state x is K_t (x - x_hat_t)."""
    t, du, dx = feedback.shape
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != (t, dx):
        raise ValueError(f"reference states must be ({t}, {dx}), got {reference.shape}")
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    if sigma0.shape == (du, du):
        sigma = np.broadcast_to(sigma0, (t, du, du)).copy()
    elif sigma0.shape == (t, du, du):
        sigma = sigma0.copy()
    else:
        raise ValueError("sigma0 must be (du, du) or (T, du, du)")
    k = -np.einsum("tij,tj->ti", feedback, reference)
    return LinearGaussianPolicy(feedback=feedback, k=k, sigma=sigma)


def bootstrap_from_controls(
    controls: np.ndarray, state_dim: int, sigma0: np.ndarray
) -> LinearGaussianPolicy:
    """Demonstrated-torque initialization: zero feedback and k_t set to the
    demo's control sequence, so the policy replays the demonstrated behavior
    plus exploration noise.

    This is the bootstrap of choice when the demonstration records controls
    rather than only poses; pose-only demos go through bootstrap_from_demo.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 2:
        raise ValueError(f"controls must be (T, du), got shape {controls.shape}")
    if state_dim < 1:
        raise ValueError(f"state_dim must be >= 1, got {state_dim}")
    t, du = controls.shape
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    if sigma0.shape == (du, du):
        sigma = np.broadcast_to(sigma0, (t, du, du)).copy()
    elif sigma0.shape == (t, du, du):
        sigma = sigma0.copy()
    else:
        raise ValueError("sigma0 must be (du, du) or (T, du, du)")
    feedback = np.zeros((t, du, state_dim))
    return LinearGaussianPolicy(feedback=feedback, k=controls.copy(), sigma=sigma)


def _run_episode(policy, env, reward_fn, rng):
    """One episode; returns (Rollout, final env state)."""
    t_max = policy.horizon
    state = env.initial_state()
    xv = np.asarray(env.state_vector(state), dtype=np.float64)
    states = np.zeros((t_max + 1, policy.state_dim))
    controls = np.zeros((t_max, policy.control_dim))
    rewards = np.zeros(t_max)
    states[0] = xv
    for t in range(t_max):
        u = policy.sample_control(t, xv, rng)
        controls[t] = u
        state = env.step(state, u)
        xv = np.asarray(env.state_vector(state), dtype=np.float64)
        if not np.all(np.isfinite(xv)):
            raise RolloutError(f"non-finite state at step {t}")
        states[t + 1] = xv
        obs = env.observe(state, rng)
        rewards[t] = reward_fn(state, obs)
    return Rollout(states=states, controls=controls, rewards=rewards), state


def sample_rollouts(policy, env, reward_fn, n: int, seed) -> list[Rollout]:
    """n independent episodes, rollout i on its own substream of seed (any
    SeedSequence entropy: int or tuple of ints)."""
    if env.horizon != policy.horizon:
        raise ValueError("env horizon != policy horizon")
    base = np.atleast_1d(np.asarray(seed, dtype=np.uint64)).tolist()
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([*base, i]))
        out.append(_run_episode(policy, env, reward_fn, rng)[0])
    return out


def cost_to_go(rewards: np.ndarray) -> np.ndarray:
    """Suffix sums S_t = sum of rewards from t to the end."""
    return np.cumsum(np.asarray(rewards, dtype=np.float64)[::-1])[::-1]


def softmax_weights(scores: np.ndarray, beta: float) -> np.ndarray:
    """Normalized exp(beta * (S - max S)); uniform when scores tie."""
    w = np.exp(beta * (scores - np.max(scores)))
    return w / w.sum()


def _weighted_controls(controls: np.ndarray, scores: np.ndarray, beta: float) -> np.ndarray:
    # unnormalized weights, one division at the end: for tied scores every
    # weight is exactly 1.0 and the result is bit-equal to the sample mean
    w = np.exp(beta * (scores - np.max(scores)))
    return (w[:, None] * controls).sum(axis=0) / w.sum()


def _kl(k_new: np.ndarray, k_old: np.ndarray, sigma: np.ndarray) -> float:
    dk = k_new - k_old
    return float(0.5 * dk @ np.linalg.solve(sigma, dk))


def _grid_scan(controls, scores, sigma, k_old, epsilon, beta_max):
    # log-spaced so the small-beta region, where the feasible window usually
    # lives, is covered densely; zero is included explicitly
    grid = np.concatenate([[0.0], np.geomspace(1e-4, beta_max, 255)])
    best = (0.0, _weighted_controls(controls, scores, 0.0), -1.0)
    for beta in grid:
        k_new = _weighted_controls(controls, scores, float(beta))
        kl = _kl(k_new, k_old, sigma)
        if kl <= epsilon and kl > best[2]:
            best = (float(beta), k_new, kl)
    return best[0], best[1]


def solve_beta(controls, scores, sigma, k_old, epsilon, beta_max=BETA_MAX):
    """Largest feasible temperature and the control it induces.

    Feasible means KL(k(beta) || k_old) <= epsilon. Bisection on [0,
    beta_max], 60 iterations or KL within 1e-9 of the bound; if beta = 0
    already violates the bound its step is scaled radially onto the boundary;
    a non-monotone KL(beta) probe falls back to a grid scan keeping the
    feasible beta with maximal KL.
    """
    controls = np.asarray(controls, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    k0 = _weighted_controls(controls, scores, 0.0)
    kl0 = _kl(k0, k_old, sigma)
    if not np.isfinite(kl0):
        raise FloatingPointError("non-finite KL at beta=0")
    if kl0 > epsilon:
        k_scaled = k_old + (k0 - k_old) * np.sqrt(epsilon / kl0)
        return 0.0, k_scaled
    k_hi = _weighted_controls(controls, scores, beta_max)
    if _kl(k_hi, k_old, sigma) <= epsilon:
        return beta_max, k_hi

    lo, hi = 0.0, beta_max
    kl_lo = kl0
    k_lo = k0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        k_mid = _weighted_controls(controls, scores, mid)
        kl_mid = _kl(k_mid, k_old, sigma)
        if kl_mid < kl_lo - 1e-12:
            # KL is not monotone on this instance; bisection unsound
            return _grid_scan(controls, scores, sigma, k_old, epsilon, beta_max)
        if kl_mid <= epsilon:
            lo, kl_lo, k_lo = mid, kl_mid, k_mid
        else:
            hi = mid
        if epsilon - kl_lo <= KL_TOL:
            break
    return lo, k_lo


def pi2_update(policy: LinearGaussianPolicy, rollouts: list[Rollout], cfg: PI2Config) -> LinearGaussianPolicy:
    """One trust-region update of the open-loop controls; K and Sigma stay.

    The weighted average runs over the sampled open-loop components
    u - K x = k + noise. Stored controls are total torques, so the feedback
    share of each sample is subtracted first; with K = 0 the two coincide.
    Averaging totals instead would fold K x-bar into k at every iteration and
    walk any tracking policy toward zero state.
    """
    if len(rollouts) < 2:
        raise ValueError("need at least 2 rollouts")
    controls = np.stack([r.controls for r in rollouts])        # (n, T, du)
    states = np.stack([r.states[:-1] for r in rollouts])       # (n, T, dx)
    open_loop = controls - np.einsum("tij,ntj->nti", policy.feedback, states)
    suffix = np.stack([cost_to_go(r.rewards) for r in rollouts])  # (n, T)
    k_new = np.empty_like(policy.k)
    for t in range(policy.horizon):
        _, k_new[t] = solve_beta(
            open_loop[:, t], suffix[:, t], policy.sigma[t], policy.k[t],
            cfg.epsilon, cfg.beta_max,
        )
    if not np.all(np.isfinite(k_new)):
        raise FloatingPointError("non-finite controls after update")
    return replace(policy, k=k_new)


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    mean_reward: float
    success_rate: float


def evaluate_policy(policy, env, reward_fn, n_episodes: int, seed) -> tuple[float, float]:
    """Mean per-step reward and success rate over n stochastic episodes."""
    base = np.atleast_1d(np.asarray(seed, dtype=np.uint64)).tolist()
    rewards, wins = [], 0
    for i in range(n_episodes):
        rng = np.random.default_rng(np.random.SeedSequence([*base, i]))
        rollout, final_state = _run_episode(policy, env, reward_fn, rng)
        rewards.append(float(np.mean(rollout.rewards)))
        wins += bool(env.success(final_state))
    return float(np.mean(rewards)), wins / n_episodes


def train(env, reward_fn, init: LinearGaussianPolicy, cfg: PI2Config):
    """Iterate sample-and-update from a demonstration-bootstrapped policy.

    init comes from bootstrap_from_demo (pose-only demos) or
    bootstrap_from_controls (demos with recorded torques). Returns
    (policy, curve). curve[i] evaluates the policy before update i, so row 0
    is the bootstrap and the final row the fully trained policy
    (n_iterations + 1 rows).
    """
    policy = init
    curve = []
    for it in range(cfg.n_iterations):
        stats = evaluate_policy(
            policy, env, reward_fn, cfg.eval_episodes, (cfg.seed, it, EVAL_STREAM_TAG)
        )
        curve.append(IterationStats(iteration=it, mean_reward=stats[0], success_rate=stats[1]))
        rollouts = sample_rollouts(policy, env, reward_fn, cfg.n_samples, (cfg.seed, it))
        policy = pi2_update(policy, rollouts, cfg)
    stats = evaluate_policy(
        policy, env, reward_fn, cfg.eval_episodes, (cfg.seed, cfg.n_iterations, EVAL_STREAM_TAG)
    )
    curve.append(
        IterationStats(iteration=cfg.n_iterations, mean_reward=stats[0], success_rate=stats[1])
    )
    return policy, curve
