"""Overlap-based evaluation of segmentations and reward traces.

Everything reduces to the Jaccard index between sets of frame indices: a
predicted set (from a solver's segments, or a reward trace thresholded at
0.5) against the annotated ground truth for each step. Two stochastic
baselines put the numbers in context:

  ordered random  n-1 distinct cut points drawn uniformly from the feasible
                  set, sorted ascending, so the baseline respects ordering
                  and min_size just like the solvers do.
  bernoulli       each frame flagged active independently with p = 0.5.

Segmentation is scored on the training split (the discovery step never sees
held-out data); reward traces are scored on the test split. Stochastic
baselines report the standard error of the per-seed averages; deterministic
methods report 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .featureio import DatasetManifest, FeatureSequence, NormStats, StepAnnotation
from .rewards import score_sequence
from .segmenter import InfeasibleSegmentation, Segmentation, SegSolverConfig, segment

DEFAULT_THRESHOLD = 0.5
DEFAULT_N_SEEDS = 100


@dataclass(frozen=True)
class StepOverlapReport:
    """Per-step Jaccard overlaps for one method on one dataset split."""

    method: str
    dataset: str
    n_steps: int
    per_step_jaccard: tuple[float, ...]
    average: float
    stderr: float = 0.0

    def __post_init__(self):
        if len(self.per_step_jaccard) != self.n_steps:
            raise ValueError("per_step_jaccard length must equal n_steps")
        for j in self.per_step_jaccard:
            if not 0.0 <= j <= 1.0:
                raise ValueError(f"jaccard {j} outside [0, 1]")
        if abs(self.average - float(np.mean(self.per_step_jaccard))) > 1e-9:
            raise ValueError("average must be the mean of per_step_jaccard")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset,
            "n_steps": self.n_steps,
            "per_step_jaccard": list(self.per_step_jaccard),
            "average": self.average,
            "stderr": self.stderr,
        }


def _report(method: str, dataset: str, per_step: np.ndarray, stderr: float = 0.0) -> StepOverlapReport:
    per_step = np.asarray(per_step, dtype=np.float64)
    return StepOverlapReport(
        method=method,
        dataset=dataset,
        n_steps=per_step.size,
        per_step_jaccard=tuple(float(j) for j in per_step),
        average=float(np.mean(per_step)),
        stderr=float(stderr),
    )


def jaccard(pred: set, truth: set) -> float:
    """Intersection over union; 1.0 when both sets are empty."""
    union = len(pred | truth)
    if union == 0:
        return 1.0
    return len(pred & truth) / union


def ordered_random_segmentation(
    t: int, n: int, min_size: int, rng: np.random.Generator
) -> Segmentation:
    """Uniform draw from the feasible boundary tuples, by rejection.

    Cut points are n-1 distinct values from [1, t), resampled until every
    segment reaches min_size. Cost fields are left unpopulated (the baseline
    is about boundary placement, not objective value).
    """
    if n < 1 or min_size < 1 or t < n * min_size:
        raise InfeasibleSegmentation(
            f"cannot cut {t} frames into {n} segments of >= {min_size}"
        )
    if n == 1:
        cuts = ()
    else:
        while True:
            draw = np.sort(rng.choice(np.arange(1, t), size=n - 1, replace=False))
            edges = np.concatenate(([0], draw, [t]))
            if np.all(np.diff(edges) >= min_size):
                cuts = tuple(int(c) for c in draw)
                break
    return Segmentation(
        boundaries=cuts,
        per_segment_cost=(),
        objective=float("nan"),
        n_segments=n,
        min_size=min_size,
        solver="ordered_random",
    )


def binarize_trace(per_step: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> list[set]:
    """Frame sets per step: frame t is active for step g iff value >= threshold."""
    per_step = np.asarray(per_step, dtype=np.float64)
    if per_step.ndim != 2:
        raise ValueError("expected a (T, n_steps) array of step values")
    return [set(np.flatnonzero(per_step[:, g] >= threshold).tolist()) for g in range(per_step.shape[1])]


def bernoulli_frame_set(t: int, p: float, rng: np.random.Generator) -> set:
    """Each frame included independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return set(np.flatnonzero(rng.random(t) < p).tolist())


def step_frame_sets(boundaries, t: int, n_steps: int) -> list[set]:
    """Ground-truth style frame sets from a boundary tuple."""
    edges = (0, *boundaries, t)
    if len(edges) != n_steps + 1:
        raise ValueError("boundary count does not match n_steps")
    return [set(range(edges[i], edges[i + 1])) for i in range(n_steps)]


def _require_annotations(
    pairs: list[tuple[FeatureSequence, StepAnnotation | None]], split: str
) -> list[tuple[FeatureSequence, StepAnnotation]]:
    if not pairs:
        raise ValueError(f"no sequences in split {split!r}")
    out = []
    for seq, ann in pairs:
        if ann is None:
            raise ValueError(f"sequence {seq.name!r} in split {split!r} has no annotation")
        out.append((seq, ann))
    steps = {ann.n_steps for _, ann in out}
    if len(steps) > 1:
        raise ValueError(f"annotations disagree on step count: {sorted(steps)}")
    return out


def eval_segmentation(
    manifest: DatasetManifest,
    cfg: SegSolverConfig,
    n_seeds: int = DEFAULT_N_SEEDS,
    seed: int = 0,
) -> tuple[StepOverlapReport, StepOverlapReport]:
    """Score a solver against ordered-random draws on the training split.

    Returns (method report, baseline report). Per-step Jaccard is averaged
    over training sequences; the baseline additionally averages over n_seeds
    independent draws per sequence and reports the stderr of the per-seed
    averages.
    """
    pairs = _require_annotations(manifest.load_split("train"), "train")
    n_steps = pairs[0][1].n_steps
    if cfg.n_segments != n_steps:
        raise ValueError(
            f"solver config wants {cfg.n_segments} segments, annotations have {n_steps}"
        )

    truth_sets = [step_frame_sets(ann.boundaries, seq.t, n_steps) for seq, ann in pairs]

    method = np.zeros(n_steps)
    for (seq, _), truth in zip(pairs, truth_sets):
        pred = step_frame_sets(segment(seq, cfg).boundaries, seq.t, n_steps)
        method += [jaccard(p, g) for p, g in zip(pred, truth)]
    method /= len(pairs)

    per_seed = np.zeros((n_seeds, n_steps))
    for s in range(n_seeds):
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        for (seq, _), truth in zip(pairs, truth_sets):
            draw = ordered_random_segmentation(seq.t, n_steps, cfg.min_size, rng)
            pred = step_frame_sets(draw.boundaries, seq.t, n_steps)
            per_seed[s] += [jaccard(p, g) for p, g in zip(pred, truth)]
    per_seed /= len(pairs)
    stderr = float(np.std(per_seed.mean(axis=1), ddof=1) / np.sqrt(n_seeds)) if n_seeds > 1 else 0.0

    return (
        _report(cfg.solver, "train", method),
        _report("ordered_random", "train", per_seed.mean(axis=0), stderr),
    )


def eval_rewards(
    manifest: DatasetManifest,
    models: dict,
    stats: NormStats,
    threshold: float = DEFAULT_THRESHOLD,
    n_seeds: int = DEFAULT_N_SEEDS,
    seed: int = 0,
    split: str = "test",
) -> list[StepOverlapReport]:
    """Score reward models against a Bernoulli(0.5) baseline on held-out data.

    models maps a method tag to anything score_sequence accepts. Returns one
    report per method (in dict order) followed by the baseline report, so two
    models yield the familiar three-row table.
    """
    pairs = _require_annotations(manifest.load_split(split), split)
    n_steps = pairs[0][1].n_steps

    truth_sets = [step_frame_sets(ann.boundaries, seq.t, n_steps) for seq, ann in pairs]

    reports = []
    for tag, model in models.items():
        per_step = np.zeros(n_steps)
        for (seq, _), truth in zip(pairs, truth_sets):
            trace = score_sequence(model, seq, stats)
            if trace.per_step.shape[1] != n_steps:
                raise ValueError(
                    f"model {tag!r} scores {trace.per_step.shape[1]} steps, "
                    f"annotations have {n_steps}"
                )
            pred = binarize_trace(trace.per_step, threshold)
            per_step += [jaccard(p, g) for p, g in zip(pred, truth)]
        reports.append(_report(tag, split, per_step / len(pairs)))

    per_seed = np.zeros((n_seeds, n_steps))
    for s in range(n_seeds):
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        for (seq, _), truth in zip(pairs, truth_sets):
            preds = [bernoulli_frame_set(seq.t, 0.5, rng) for _ in range(n_steps)]
            per_seed[s] += [jaccard(p, g) for p, g in zip(preds, truth)]
    per_seed /= len(pairs)
    stderr = float(np.std(per_seed.mean(axis=1), ddof=1) / np.sqrt(n_seeds)) if n_seeds > 1 else 0.0
    reports.append(_report("bernoulli", split, per_seed.mean(axis=0), stderr))
    return reports


def format_reports(reports: list[StepOverlapReport]) -> str:
    """Aligned plain-text table, one row per method, percentages per step."""
    if not reports:
        return "(no reports)\n"
    n_steps = reports[0].n_steps
    headers = ["method", "dataset", *[f"step {g}" for g in range(1, n_steps + 1)], "average", "stderr"]
    rows = [headers]
    for r in reports:
        rows.append(
            [
                r.method,
                r.dataset,
                *[f"{100 * j:.1f}" for j in r.per_step_jaccard],
                f"{100 * r.average:.1f}",
                f"{100 * r.stderr:.1f}",
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"
