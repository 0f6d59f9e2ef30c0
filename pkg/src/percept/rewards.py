"""Per-step reward functions learned from labeled (or discovered) step frames.

Two reward families over z-scored features:

  * feature selection + diagonal Gaussian per step: rank features by
    z_i = alpha * |mu+_i - mu-_i| - (sigma+_i + sigma-_i), keep the top m,
    fit mean/std of the step's frames on those, and score a frame by
    exp(-q/2) with q the mean squared standardized deviation. Scores live
    in (0, 1]: 1 at the step's mean, falling off with distance.

  * a softmax step classifier (multinomial logistic regression) trained by
    full-batch gradient descent from zero init; a frame's per-step values
    are the class probabilities.

Per-step values are combined into a single dense task reward by weighting
step i (1-based) with 2^(i-1) and ignoring the initial step, which any policy
satisfies at rest. The raw weighted sum and its range-normalized variant
(divided by the total weight, so in [0, 1]) are both available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .featureio import DEFAULT_STD_FLOOR, FeatureSequence, NormStats

DEFAULT_ALPHA = 5.0
DEFAULT_M = 32

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------- selection


@dataclass(frozen=True)
class FeatureSelection:
    """Top-m feature indices for one step, sorted by score descending."""

    step_id: int
    indices: tuple[int, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.scores) or not self.indices:
            raise ValueError("indices and scores must be non-empty and parallel")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("indices must be distinct")
        for a, b in zip(self.scores, self.scores[1:]):
            if b > a:
                raise ValueError("scores must be non-increasing")


def select_features(
    pos: np.ndarray,
    neg: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    m: int = DEFAULT_M,
    step_id: int = 0,
) -> FeatureSelection:
    """Rank features by alpha * |mu+ - mu-| - (sigma+ + sigma-), keep the top m.

    pos and neg are (N, D) arrays of z-scored frames: the step's own frames
    and every other frame. Ties break toward the lower feature index.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.ndim != 2 or neg.ndim != 2 or pos.shape[1] != neg.shape[1]:
        raise ValueError("pos and neg must be (N, D) with matching D")
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("pos and neg must both contain frames")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    d = pos.shape[1]
    if not 1 <= m <= d:
        raise ValueError(f"m must be in [1, {d}], got {m}")
    z = alpha * np.abs(pos.mean(axis=0) - neg.mean(axis=0)) - (
        pos.std(axis=0) + neg.std(axis=0)
    )
    order = np.lexsort((np.arange(d), -z))[:m]
    return FeatureSelection(
        step_id=step_id,
        indices=tuple(int(i) for i in order),
        scores=tuple(float(z[i]) for i in order),
    )


# ---------------------------------------------------------------- gaussian


@dataclass(frozen=True)
class GaussianStepModel:
    """Diagonal Gaussian over a step's selected features (stds clamped below)."""

    step_id: int
    selection: FeatureSelection
    mu_pos: np.ndarray
    sigma_pos: np.ndarray
    alpha: float = DEFAULT_ALPHA
    std_floor: float = DEFAULT_STD_FLOOR

    def __post_init__(self):
        mu = np.asarray(self.mu_pos, dtype=np.float64)
        sigma = np.asarray(self.sigma_pos, dtype=np.float64)
        if mu.shape != (len(self.selection.indices),) or sigma.shape != mu.shape:
            raise ValueError("mu_pos/sigma_pos must match the selection size")
        if not np.all(sigma >= self.std_floor):
            raise ValueError("sigma_pos entries must be >= std_floor")
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu_pos", mu)
        object.__setattr__(self, "sigma_pos", sigma)

    def score_frames(self, frames: np.ndarray) -> np.ndarray:
        """exp(-q/2) per frame, q = mean squared standardized deviation."""
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        z = (frames[:, list(self.selection.indices)] - self.mu_pos) / self.sigma_pos
        q = np.mean(z * z, axis=1)
        # exp underflows to 0.0 for q/2 > ~745; clamp to keep scores positive.
        return np.maximum(np.exp(-q / 2.0), np.finfo(np.float64).tiny)


def fit_step_gaussian(
    pos: np.ndarray,
    selection: FeatureSelection,
    std_floor: float = DEFAULT_STD_FLOOR,
    alpha: float = DEFAULT_ALPHA,
) -> GaussianStepModel:
    """Fit mean and population std of the step's frames on the selected features."""
    pos = np.asarray(pos, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] == 0:
        raise ValueError("pos must be a non-empty (N, D) array")
    idx = list(selection.indices)
    if max(idx) >= pos.shape[1]:
        raise ValueError("selection indices out of range for pos")
    sub = pos[:, idx]
    return GaussianStepModel(
        step_id=selection.step_id,
        selection=selection,
        mu_pos=sub.mean(axis=0),
        sigma_pos=np.maximum(sub.std(axis=0), std_floor),
        alpha=alpha,
        std_floor=std_floor,
    )


def step_score_gaussian(model: GaussianStepModel, frame: np.ndarray) -> float:
    return float(model.score_frames(frame)[0])


# ---------------------------------------------------------------- softmax


@dataclass(frozen=True)
class SoftmaxHyper:
    # lr sits ~2.5x below the divergence knee of full-batch descent on the
    # synthetic demo corpus (0.05 already oscillates there), so the default
    # keeps the loss curve monotone on every dataset we train in-repo
    l2: float = 1e-4
    lr: float = 0.02
    epochs: int = 500
    seed: int = 0  # kept for interface stability; zero init needs no RNG

    def __post_init__(self):
        if self.l2 < 0 or not self.lr > 0 or self.epochs < 1:
            raise ValueError(f"bad hyperparameters: {self}")


@dataclass(frozen=True)
class SoftmaxStepClassifier:
    weights: np.ndarray  # (n_steps, D)
    biases: np.ndarray  # (n_steps,)
    n_steps: int
    hyper: SoftmaxHyper = field(default_factory=SoftmaxHyper)
    loss_curve: tuple[float, ...] = ()
    temperature: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.n_steps or b.shape != (self.n_steps,):
            raise ValueError("weights must be (n_steps, D) and biases (n_steps,)")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    def logit_frames(self, frames: np.ndarray) -> np.ndarray:
        """(T, n_steps) raw affine scores, untouched by temperature."""
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        return frames @ self.weights.T + self.biases

    def prob_frames(self, frames: np.ndarray) -> np.ndarray:
        logits = self.logit_frames(frames) / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)


def softmax_loss_and_grad(
    weights: np.ndarray,
    biases: np.ndarray,
    frames: np.ndarray,
    labels: np.ndarray,
    l2: float,
):
    """Mean cross-entropy plus l2 * ||W||^2, with gradients. labels are 1-based."""
    n = frames.shape[0]
    logits = frames @ weights.T + biases
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    cols = labels - 1
    ce = -np.mean(np.log(np.maximum(probs[rows, cols], np.finfo(np.float64).tiny)))
    loss = ce + l2 * float(np.sum(weights * weights))
    delta = probs.copy()
    delta[rows, cols] -= 1.0
    delta /= n
    grad_w = delta.T @ frames + 2.0 * l2 * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def train_softmax(
    frames: np.ndarray,
    labels: np.ndarray,
    n_steps: int | None = None,
    hyper: SoftmaxHyper | None = None,
) -> SoftmaxStepClassifier:
    """Train the step classifier by deterministic full-batch gradient descent.

    frames: (N, D) z-scored features; labels: (N,) 1-based step ids. Raises if
    any step in 1..n_steps has no training frames or the loss goes non-finite.
    """
    hyper = hyper or SoftmaxHyper()
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if frames.ndim != 2 or labels.shape != (frames.shape[0],):
        raise ValueError("frames must be (N, D) with one label per frame")
    if n_steps is None:
        n_steps = int(labels.max()) if labels.size else 0
    if n_steps < 2:
        raise ValueError(f"need at least 2 steps, got {n_steps}")
    counts = np.bincount(labels, minlength=n_steps + 1)[1 : n_steps + 1]
    if np.any(counts == 0) or labels.min() < 1 or labels.max() > n_steps:
        raise ValueError(f"every step in 1..{n_steps} needs frames, got counts {counts.tolist()}")

    w = np.zeros((n_steps, frames.shape[1]))
    b = np.zeros(n_steps)
    curve = []
    for _ in range(hyper.epochs):
        loss, grad_w, grad_b = softmax_loss_and_grad(w, b, frames, labels, hyper.l2)
        if not np.isfinite(loss):
            raise FloatingPointError(f"softmax training loss became {loss}")
        curve.append(float(loss))
        w = w - hyper.lr * grad_w
        b = b - hyper.lr * grad_b
    final_loss, _, _ = softmax_loss_and_grad(w, b, frames, labels, hyper.l2)
    if not np.isfinite(final_loss):
        raise FloatingPointError(f"softmax training loss became {final_loss}")
    curve.append(float(final_loss))
    return SoftmaxStepClassifier(
        weights=w, biases=b, n_steps=n_steps, hyper=hyper, loss_curve=tuple(curve)
    )


def step_probs(clf: SoftmaxStepClassifier, frame: np.ndarray) -> np.ndarray:
    return clf.prob_frames(frame)[0]


def calibrate_confidence(
    clf: SoftmaxStepClassifier,
    frames: np.ndarray,
    target: float = 0.9,
) -> SoftmaxStepClassifier:
    """Rescale the classifier temperature so the median frame confidence is target.

    Full-batch descent on cleanly separable features drives the logit scale
    into the hundreds, and the resulting 0/1 step probabilities make the
    combined reward a flat plateau inside each step. Dividing the logits by a
    single temperature keeps every argmax (accuracy is untouched) while
    restoring graded transitions, so the reward recovers a within-step slope.
    The temperature solves median(top-2 logit gap) / tau = logit(target);
    frames must be z-scored with the same stats used for scoring.
    """
    if not 0.5 < target < 1.0:
        raise ValueError(f"target confidence must be in (0.5, 1), got {target}")
    logits = clf.logit_frames(frames)
    if logits.shape[0] == 0:
        raise ValueError("need at least one frame to calibrate")
    top2 = np.sort(logits, axis=1)[:, -2:]
    gap = float(np.median(top2[:, 1] - top2[:, 0]))
    if gap <= 0:
        raise ValueError("median top-2 logit gap is not positive; cannot calibrate")
    tau = gap / float(np.log(target / (1.0 - target)))
    return replace(clf, temperature=tau)


# ---------------------------------------------------------------- combination


def step_weights(n_steps: int) -> np.ndarray:
    """Weight 2^(i-1) for step i in 2..n; the initial step carries no weight."""
    w = np.zeros(n_steps)
    for i in range(2, n_steps + 1):
        w[i - 1] = 2.0 ** (i - 1)
    return w


def combine(step_values, normalize_range: bool = True) -> float:
    """Weighted sum of per-step values (initial step ignored).

    With normalize_range the sum is divided by the total weight, mapping it to
    [0, 1]; otherwise raw values range up to 2^n - 2.
    """
    v = np.asarray(step_values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise ValueError(f"need values for >= 2 steps, got shape {v.shape}")
    if np.any(v < -1e-9) or np.any(v > 1.0 + 1e-9):
        raise ValueError("step values must lie in [0, 1]")
    v = np.clip(v, 0.0, 1.0)
    w = step_weights(v.shape[0])
    raw = float(v @ w)
    return raw / float(w.sum()) if normalize_range else raw


@dataclass(frozen=True)
class CombinedReward:
    """Per-step scorers plus the range convention for their weighted sum."""

    per_step: tuple
    normalize_range: bool = True

    def __post_init__(self):
        if len(self.per_step) < 2:
            raise ValueError("combined reward needs >= 2 steps")

    @property
    def n_steps(self) -> int:
        return len(self.per_step)


# ---------------------------------------------------------------- scoring


@dataclass(frozen=True)
class RewardTrace:
    """Per-frame step values (T, n_steps) and the combined reward (T,)."""

    per_step: np.ndarray
    combined: np.ndarray


def _step_value_matrix(model, frames: np.ndarray) -> np.ndarray:
    """(T, n_steps) per-step values for z-scored frames."""
    if isinstance(model, SoftmaxStepClassifier):
        return model.prob_frames(frames)
    if isinstance(model, (list, tuple)):
        models = sorted(model, key=lambda g: g.step_id)
        return np.column_stack([g.score_frames(frames) for g in models])
    raise TypeError(f"cannot score with model of type {type(model).__name__}")


def score_sequence(
    model,
    seq: FeatureSequence,
    stats: NormStats,
    normalize_range: bool = True,
) -> RewardTrace:
    """Score one raw sequence: z-score it, then per-step values and combined reward.

    model is a SoftmaxStepClassifier or a list of GaussianStepModel (one per
    step, any order). The combined column ignores the initial step.
    """
    if seq.d != stats.d:
        raise ValueError(f"sequence has D={seq.d}, stats have D={stats.d}")
    z = (seq.frames.astype(np.float64) - stats.mean) / stats.std
    per_step = _step_value_matrix(model, z)
    if per_step.shape[1] < 2:
        raise ValueError("need >= 2 steps to combine")
    w = step_weights(per_step.shape[1])
    raw = np.clip(per_step, 0.0, 1.0) @ w
    combined = raw / w.sum() if normalize_range else raw
    return RewardTrace(per_step=per_step, combined=combined)


def frame_scorer(model, stats: NormStats, normalize_range: bool = True):
    """Bind a model and stats into a raw-frame -> combined-reward callable.

    The returned function scores one unnormalized frame at a time with the
    same math as score_sequence; scoring is stateless, so it can run inside
    an environment loop as a dense reward.
    """

    def score(frame: np.ndarray) -> float:
        z = (np.asarray(frame, dtype=np.float64)[None, :] - stats.mean) / stats.std
        per_step = _step_value_matrix(model, z)
        if per_step.shape[1] < 2:
            raise ValueError("need >= 2 steps to combine")
        w = step_weights(per_step.shape[1])
        raw = float(np.clip(per_step[0], 0.0, 1.0) @ w)
        return raw / float(w.sum()) if normalize_range else raw

    return score


# ---------------------------------------------------------------- persistence


def _norm_to_json(stats: NormStats) -> dict:
    return {
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
        "std_floor": stats.std_floor,
    }


def _norm_from_json(raw: dict) -> NormStats:
    return NormStats(
        mean=np.asarray(raw["mean"], dtype=np.float64),
        std=np.asarray(raw["std"], dtype=np.float64),
        std_floor=float(raw.get("std_floor", DEFAULT_STD_FLOOR)),
    )


def save_model(model, stats: NormStats, path: str | Path) -> None:
    """Write a reward model plus its normalization stats as versioned JSON."""
    if isinstance(model, SoftmaxStepClassifier):
        payload = {
            "version": MODEL_FORMAT_VERSION,
            "kind": "softmax",
            "n_steps": model.n_steps,
            "norm": _norm_to_json(stats),
            "weights": model.weights.tolist(),
            "biases": model.biases.tolist(),
            "temperature": model.temperature,
            "hyper": {
                "l2": model.hyper.l2,
                "lr": model.hyper.lr,
                "epochs": model.hyper.epochs,
                "seed": model.hyper.seed,
            },
        }
    elif isinstance(model, (list, tuple)) and all(
        isinstance(g, GaussianStepModel) for g in model
    ):
        models = sorted(model, key=lambda g: g.step_id)
        payload = {
            "version": MODEL_FORMAT_VERSION,
            "kind": "gaussian_steps",
            "n_steps": len(models),
            "norm": _norm_to_json(stats),
            "steps": [
                {
                    "step_id": g.step_id,
                    "alpha": g.alpha,
                    "std_floor": g.std_floor,
                    "indices": list(g.selection.indices),
                    "scores": list(g.selection.scores),
                    "mu_pos": g.mu_pos.tolist(),
                    "sigma_pos": g.sigma_pos.tolist(),
                }
                for g in models
            ],
        }
    else:
        raise TypeError(f"cannot save model of type {type(model).__name__}")
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_model(path: str | Path):
    """Read a model JSON; returns (model, stats). Rejects unknown kinds/versions."""
    raw = json.loads(Path(path).read_text())
    version = raw.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    stats = _norm_from_json(raw["norm"])
    kind = raw.get("kind")
    if kind == "softmax":
        hyper = SoftmaxHyper(**raw["hyper"])
        model = SoftmaxStepClassifier(
            weights=np.asarray(raw["weights"], dtype=np.float64),
            biases=np.asarray(raw["biases"], dtype=np.float64),
            n_steps=int(raw["n_steps"]),
            hyper=hyper,
            temperature=float(raw.get("temperature", 1.0)),
        )
        return model, stats
    if kind == "gaussian_steps":
        models = [
            GaussianStepModel(
                step_id=int(s["step_id"]),
                selection=FeatureSelection(
                    step_id=int(s["step_id"]),
                    indices=tuple(int(i) for i in s["indices"]),
                    scores=tuple(float(x) for x in s["scores"]),
                ),
                mu_pos=np.asarray(s["mu_pos"], dtype=np.float64),
                sigma_pos=np.asarray(s["sigma_pos"], dtype=np.float64),
                alpha=float(s["alpha"]),
                std_floor=float(s["std_floor"]),
            )
            for s in raw["steps"]
        ]
        return models, stats
    raise ValueError(f"{path}: unknown model kind {kind!r}")


# ---------------------------------------------------------------- training glue


def fit_gaussian_steps(
    frames: np.ndarray,
    labels: np.ndarray,
    n_steps: int,
    alpha: float = DEFAULT_ALPHA,
    m: int = DEFAULT_M,
    std_floor: float = DEFAULT_STD_FLOOR,
) -> list[GaussianStepModel]:
    """Select features and fit one Gaussian per step from pooled labeled frames.

    The negative set for step g is every frame not labeled g.
    """
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    models = []
    for g in range(1, n_steps + 1):
        mask = labels == g
        if not mask.any() or mask.all():
            raise ValueError(f"step {g} needs both positive and negative frames")
        sel = select_features(frames[mask], frames[~mask], alpha=alpha, m=m, step_id=g)
        models.append(
            fit_step_gaussian(frames[mask], sel, std_floor=std_floor, alpha=alpha)
        )
    return models
