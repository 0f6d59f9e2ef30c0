"""Synthetic latch-door environment and dataset generators.

The environment is a two-joint system: a handle (q1) and a door (q2), both
damped and torque-driven. The door is mechanically blocked until the handle
has been turned past the latch threshold; the latch then stays open for good.
The task succeeds when the door angle reaches the open threshold. This keeps
the causal step structure of opening a real door (rest, turn handle, pull)
while staying a few lines of arithmetic.

Observations come from a FeatureProjector: a fixed random affine map of a
small basis expansion of the state, squashed by tanh, plus clipped Gaussian
observation noise. The projector can also mix in a per-sequence nuisance
vector (drawn once per recording), standing in for everything that varies
between recordings but not within one: lighting, camera pose, background.
Feature selection has to learn to ignore those dimensions; models that use
every feature cannot.

Demonstrations are open-loop three-phase scripts (rest, turn, pull) with
torque noise. Script torques sit near the clamp, so noise slows the system
more often than it speeds it up; the noisy success rate is tuned to roughly
one demo in ten, while the noiseless script always succeeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .featureio import FeatureSequence, StepAnnotation

DEFAULT_DEMO_NOISE = 0.5
DEFAULT_NUISANCE_SCALE = 1.8
DEFAULT_SESSION_SIZE = 3
MOTION_EPS = 0.05


@dataclass(frozen=True)
class DoorEnvConfig:
    horizon: int = 60
    dt: float = 0.05
    handle_mass: float = 1.0
    handle_damping: float = 1.5
    door_mass: float = 2.0
    door_damping: float = 2.5
    latch_threshold: float = 0.6
    open_threshold: float = 1.0
    torque_limit: float = 2.5
    handle_stop: float = 1.2
    door_stop: float = 1.6

    def __post_init__(self):
        for name in (
            "dt", "handle_mass", "handle_damping", "door_mass", "door_damping",
            "latch_threshold", "open_threshold", "torque_limit", "handle_stop",
            "door_stop",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class EnvState:
    q1: float
    q2: float
    v1: float
    v2: float
    latched: bool

    def vector(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.v1, self.v2])


def initial_state() -> EnvState:
    return EnvState(q1=0.0, q2=0.0, v1=0.0, v2=0.0, latched=True)


def step_dynamics(state: EnvState, control, cfg: DoorEnvConfig) -> EnvState:
    """One semi-implicit Euler step. Total: torques are clamped, joints have
    hard stops, and the door integrates only from an unlatched state."""
    tau1, tau2 = np.clip(np.asarray(control, dtype=np.float64), -cfg.torque_limit, cfg.torque_limit)

    v1 = state.v1 + cfg.dt * (tau1 - cfg.handle_damping * state.v1) / cfg.handle_mass
    q1 = state.q1 + cfg.dt * v1
    if q1 < 0.0:
        q1, v1 = 0.0, 0.0
    elif q1 > cfg.handle_stop:
        q1, v1 = cfg.handle_stop, 0.0

    if state.latched:
        q2, v2 = 0.0, 0.0
    else:
        v2 = state.v2 + cfg.dt * (tau2 - cfg.door_damping * state.v2) / cfg.door_mass
        q2 = state.q2 + cfg.dt * v2
        if q2 < 0.0:
            q2, v2 = 0.0, 0.0
        elif q2 > cfg.door_stop:
            q2, v2 = cfg.door_stop, 0.0

    latched = state.latched and q1 < cfg.latch_threshold
    return EnvState(q1=float(q1), q2=float(q2), v1=float(v1), v2=float(v2), latched=latched)


def success(state: EnvState, cfg: DoorEnvConfig) -> bool:
    return state.q2 >= cfg.open_threshold


def ground_truth_reward(state: EnvState, cfg: DoorEnvConfig) -> float:
    """Door-angle progress in [0, 1], the instrumented-sensor stand-in."""
    return float(np.clip(state.q2 / cfg.open_threshold, 0.0, 1.0))


# ---------------------------------------------------------------- features


def _basis(state: EnvState) -> np.ndarray:
    return np.array(
        [
            state.q1,
            state.q2,
            np.sin(state.q1),
            np.cos(state.q1),
            np.sin(state.q2),
            np.cos(state.q2),
            1.0 if state.latched else 0.0,
        ]
    )


class FeatureProjector:
    """Fixed random affine map of the state basis, tanh, observation noise.

    nuisance_dim extra input channels model everything that varies between
    recording sessions but not within one: lighting, camera pose, background.
    Their per-dimension gains are half exactly zero, half exponential, so a
    subset of features is genuinely session-invariant (what feature selection
    is supposed to find) while the rest shift with every fresh nuisance draw.
    """

    def __init__(
        self,
        seed: int,
        d_out: int = 512,
        noise_scale: float = 0.02,
        nuisance_dim: int = 16,
        nuisance_scale: float = DEFAULT_NUISANCE_SCALE,
        clean_frac: float = 0.5,
    ):
        if d_out < 1 or noise_scale < 0 or nuisance_dim < 0 or nuisance_scale < 0:
            raise ValueError("bad projector parameters")
        if not 0.0 <= clean_frac <= 1.0:
            raise ValueError("clean_frac must be in [0, 1]")
        self.seed = seed
        self.d_out = d_out
        self.noise_scale = noise_scale
        self.nuisance_dim = nuisance_dim
        self.nuisance_scale = nuisance_scale
        self.clean_frac = clean_frac
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        n_basis = _basis(initial_state()).size
        self._w = rng.normal(scale=0.5, size=(d_out, n_basis))
        self._b = rng.normal(scale=0.3, size=d_out)
        gains = rng.exponential(1.0, d_out)
        gains[rng.random(d_out) < clean_frac] = 0.0
        self._u = gains[:, None] * rng.normal(
            scale=nuisance_scale / max(1, nuisance_dim) ** 0.5,
            size=(d_out, nuisance_dim),
        )

    def draw_nuisance(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.nuisance_dim)


def render_features(
    state: EnvState,
    projector: FeatureProjector,
    rng: np.random.Generator | None = None,
    nuisance: np.ndarray | None = None,
) -> np.ndarray:
    """One length-d_out frame. rng=None renders without observation noise."""
    pre = projector._w @ _basis(state) + projector._b
    if nuisance is not None:
        if nuisance.shape != (projector.nuisance_dim,):
            raise ValueError("nuisance vector has wrong shape")
        pre = pre + projector._u @ nuisance
    frame = np.tanh(pre)
    if rng is not None and projector.noise_scale > 0:
        frame = frame + projector.noise_scale * rng.standard_normal(projector.d_out)
    return np.clip(frame, -1.0, 1.0)


# ---------------------------------------------------------------- demos


@dataclass(frozen=True)
class Trajectory:
    """States x_0..x_T (rows [q1, q2, v1, v2]), latch flags, controls u_0..u_{T-1}."""

    states: np.ndarray
    latched: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        t = self.controls.shape[0]
        if self.states.shape != (t + 1, 4) or self.latched.shape != (t + 1,):
            raise ValueError("inconsistent trajectory shapes")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.controls))):
            raise ValueError("non-finite trajectory")

    def state_at(self, t: int) -> EnvState:
        q1, q2, v1, v2 = self.states[t]
        return EnvState(q1=q1, q2=q2, v1=v1, v2=v2, latched=bool(self.latched[t]))


# Three-phase open-loop script: rest, turn the handle, pull the door. The
# torques sit close to the clamp on purpose (see module docstring).
SCRIPT_REST_END = 8
SCRIPT_TURN_END = 24
SCRIPT_HANDLE_TORQUE = 2.4
SCRIPT_HOLD_TORQUE = 0.3
SCRIPT_DOOR_TORQUE = 2.35


def scripted_control(t: int) -> np.ndarray:
    if t < SCRIPT_REST_END:
        return np.array([0.0, 0.0])
    if t < SCRIPT_TURN_END:
        return np.array([SCRIPT_HANDLE_TORQUE, 0.0])
    return np.array([SCRIPT_HOLD_TORQUE, SCRIPT_DOOR_TORQUE])


def rollout_script(
    cfg: DoorEnvConfig, noise_scale: float, rng: np.random.Generator | None
) -> Trajectory:
    states = np.zeros((cfg.horizon + 1, 4))
    latched = np.zeros(cfg.horizon + 1, dtype=bool)
    controls = np.zeros((cfg.horizon, 2))
    state = initial_state()
    latched[0] = state.latched
    for t in range(cfg.horizon):
        u = scripted_control(t)
        if noise_scale > 0 and rng is not None:
            u = u + noise_scale * rng.standard_normal(2)
        controls[t] = u
        state = step_dynamics(state, u, cfg)
        states[t + 1] = state.vector()
        latched[t + 1] = state.latched
    return Trajectory(states=states, latched=latched, controls=controls)


class DemoAnnotationError(ValueError):
    """The noisy run never produced usable step crossings."""


def annotate_trajectory(traj: Trajectory, cfg: DoorEnvConfig, min_size: int = 2) -> StepAnnotation:
    """Boundaries from crossings: handle starts moving, latch releases.

    Frame t of a rendered sequence shows state x_{t+1}, so the crossing at
    state index k lands on frame k-1.
    """
    q1 = traj.states[1:, 0]
    moved = np.flatnonzero(q1 >= MOTION_EPS)
    unlatched = np.flatnonzero(~traj.latched[1:])
    if moved.size == 0 or unlatched.size == 0:
        raise DemoAnnotationError("run is missing a handle or latch crossing")
    b1, b2 = int(moved[0]), int(unlatched[0])
    t = traj.controls.shape[0]
    if not (b1 >= min_size and b2 - b1 >= min_size and t - b2 >= min_size):
        raise DemoAnnotationError(f"degenerate steps at boundaries ({b1}, {b2})")
    return StepAnnotation(n_steps=3, boundaries=(b1, b2))


def scripted_demo(
    cfg: DoorEnvConfig,
    projector: FeatureProjector,
    rng: np.random.Generator | None,
    noise_scale: float = DEFAULT_DEMO_NOISE,
    nuisance: np.ndarray | None = None,
) -> tuple[Trajectory, FeatureSequence, StepAnnotation]:
    """One demonstration: trajectory, rendered frames, step annotation.

    rng drives the control noise, the nuisance draw (when none is passed in),
    and the observation noise; rng=None gives the ideal script rendered
    without noise or nuisance. Frame t renders state x_{t+1}.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    traj = rollout_script(cfg, noise_scale, rng)
    ann = annotate_trajectory(traj, cfg)
    if nuisance is None and rng is not None:
        nuisance = projector.draw_nuisance(rng)
    frames = np.stack(
        [
            render_features(traj.state_at(t + 1), projector, rng, nuisance)
            for t in range(cfg.horizon)
        ]
    )
    seq = FeatureSequence(frames=frames, source="synthetic", frame_rate_hz=1.0 / cfg.dt)
    return traj, seq, ann


def gen_demo_dataset(
    n_sequences: int,
    cfg: DoorEnvConfig,
    projector: FeatureProjector,
    rng: np.random.Generator,
    noise_scale: float = DEFAULT_DEMO_NOISE,
    session_size: int = DEFAULT_SESSION_SIZE,
    max_retries: int = 50,
) -> list[tuple[Trajectory, FeatureSequence, StepAnnotation]]:
    """n noisy demos recorded in sessions: each run of session_size
    consecutive demos shares one nuisance draw (one camera setup). Runs whose
    crossings are unusable are redrawn."""
    if session_size < 1:
        raise ValueError("session_size must be >= 1")
    out = []
    nuisance = None
    for i in range(n_sequences):
        if i % session_size == 0:
            nuisance = projector.draw_nuisance(rng)
        for attempt in range(max_retries):
            try:
                out.append(scripted_demo(cfg, projector, rng, noise_scale, nuisance))
                break
            except DemoAnnotationError:
                continue
        else:
            raise DemoAnnotationError(f"no usable demo in {max_retries} attempts")
    return out


# ---------------------------------------------------------------- piecewise


def draw_boundaries(t: int, n_steps: int, min_size: int, rng: np.random.Generator) -> tuple:
    """Uniform feasible boundary tuple, same mechanism as the random baseline."""
    if n_steps < 1 or min_size < 1 or t < n_steps * min_size:
        raise ValueError(f"cannot cut {t} frames into {n_steps} segments of >= {min_size}")
    if n_steps == 1:
        return ()
    while True:
        draw = np.sort(rng.choice(np.arange(1, t), size=n_steps - 1, replace=False))
        edges = np.concatenate(([0], draw, [t]))
        if np.all(np.diff(edges) >= min_size):
            return tuple(int(c) for c in draw)


def gen_piecewise_dataset(
    n_sequences: int,
    t: int,
    d: int,
    n_steps: int,
    snr: float,
    rng: np.random.Generator,
    min_size: int = 2,
    informative_frac: float = 0.25,
) -> list[tuple[FeatureSequence, StepAnnotation]]:
    """Labeled piecewise-stationary sequences: unit Gaussian noise, per-step
    means of scale snr on a random subset of features, boundaries uniform
    over the feasible set. snr=0 is the null case (no step signal at all)."""
    if snr < 0:
        raise ValueError("snr must be >= 0")
    if not 0 < informative_frac <= 1:
        raise ValueError("informative_frac must be in (0, 1]")
    n_informative = max(1, int(round(informative_frac * d)))
    out = []
    for _ in range(n_sequences):
        boundaries = draw_boundaries(t, n_steps, min_size, rng)
        ann = StepAnnotation(n_steps=n_steps, boundaries=boundaries)
        support = rng.choice(d, size=n_informative, replace=False)
        means = np.zeros((n_steps, d))
        means[:, support] = snr * rng.standard_normal((n_steps, n_informative))
        frames = rng.standard_normal((t, d))
        for g, (a, b) in enumerate(ann.segments(t)):
            frames[a:b] += means[g]
        out.append((FeatureSequence(frames=frames, source="synthetic"), ann))
    return out


# ---------------------------------------------------------------- env facade


class DoorEnv:
    """The policy-facing bundle: dynamics, horizon, observations.

    Policy rollouts render observations without the nuisance channel (the
    nuisance models variation across recordings; a training run is one
    recording, pinned at the channel's mean).
    """

    def __init__(self, cfg: DoorEnvConfig, projector: FeatureProjector):
        self.cfg = cfg
        self.projector = projector

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def state_dim(self) -> int:
        return 4

    @property
    def control_dim(self) -> int:
        return 2

    def initial_state(self) -> EnvState:
        return initial_state()

    def step(self, state: EnvState, control) -> EnvState:
        return step_dynamics(state, control, self.cfg)

    def state_vector(self, state: EnvState) -> np.ndarray:
        return state.vector()

    def observe(self, state: EnvState, rng: np.random.Generator) -> np.ndarray:
        return render_features(state, self.projector, rng, None)

    def success(self, state: EnvState) -> bool:
        return success(state, self.cfg)
