"""Acceptance gate: one test per headline claim, each printing a PASS/FAIL line.

Everything here runs on pinned seeds. The heavyweight shared work (the demo
corpus and the two policy-training runs) lives in module-scoped fixtures so
each claim stays readable without repeating minutes of compute.
"""

from __future__ import annotations

import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from percept.evalkit import eval_rewards, eval_segmentation
from percept.featureio import (
    DatasetManifest,
    FeatureSequence,
    ManifestEntry,
    StepAnnotation,
    fit_norm,
    normalize_pool,
    save_annotation,
    save_fseq,
)
from percept.pi2 import (
    EVAL_STREAM_TAG,
    PI2Config,
    Rollout,
    bootstrap_from_controls,
    evaluate_policy,
    pi2_update,
    sample_rollouts,
    softmax_weights,
)
from percept.rewards import (
    fit_gaussian_steps,
    frame_scorer,
    score_sequence,
    softmax_loss_and_grad,
    train_softmax,
)
from percept.segmenter import SegSolverConfig, binary, brute_force, exact_dp, recursive
from percept.synthenv import (
    DoorEnv,
    DoorEnvConfig,
    FeatureProjector,
    gen_demo_dataset,
    gen_piecewise_dataset,
    ground_truth_reward,
    rollout_script,
)

DEMO_SEED = 1
PROJECTOR_SEED = 101
PIECEWISE_SEED = 7
POLICY_SEED = 9
EPSILON = 0.3


def check(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


def seq_of(values) -> FeatureSequence:
    return FeatureSequence(frames=np.asarray(values, dtype=np.float32), source="synthetic")


def blocks(levels, widths) -> FeatureSequence:
    vals = []
    for lv, w in zip(levels, widths):
        vals.extend([float(lv)] * w)
    return seq_of([[v] for v in vals])


def write_manifest(root: Path, triples) -> DatasetManifest:
    entries = []
    for i, (seq, ann, split) in enumerate(triples):
        save_fseq(seq, root / f"seq{i:03d}.fseq")
        save_annotation(ann, root / f"seq{i:03d}.json")
        entries.append(
            ManifestEntry(fseq=f"seq{i:03d}.fseq", labels=f"seq{i:03d}.json", split=split)
        )
    return DatasetManifest(entries=tuple(entries), root=root)


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def demo_corpus(tmp_path_factory):
    """20 noisy door demos (12 train / 8 test), the reward-learning corpus."""
    root = tmp_path_factory.mktemp("demos")
    cfg = DoorEnvConfig()
    projector = FeatureProjector(PROJECTOR_SEED)
    demos = gen_demo_dataset(20, cfg, projector, np.random.default_rng(DEMO_SEED))
    manifest = write_manifest(
        root,
        [(seq, ann, "train" if i < 12 else "test") for i, (_, seq, ann) in enumerate(demos)],
    )
    train_pairs = manifest.load_split("train")
    stats = fit_norm([seq for seq, _ in train_pairs])
    z = normalize_pool([seq for seq, _ in train_pairs], stats)
    labels = np.concatenate([ann.frame_labels(seq.t) for seq, ann in train_pairs])
    return {
        "manifest": manifest,
        "stats": stats,
        "z": z,
        "labels": labels,
        "d": z.shape[1],
        "test_pairs": manifest.load_split("test"),
    }


@pytest.fixture(scope="module")
def policy_runs():
    """Policy training with the learned reward and with the instrumented
    ground truth, each update's trust-region step recorded.

    The learned reward comes from the full pipeline on 12 noisy demos:
    normalize, discover 3 steps per demo, pool the discovered labels, train
    the step classifier with default hyperparameters, bind it over
    observations.
    """
    cfg = DoorEnvConfig()
    projector = FeatureProjector(PROJECTOR_SEED)
    demos = gen_demo_dataset(12, cfg, projector, np.random.default_rng(DEMO_SEED))
    seqs = [seq for _, seq, _ in demos]
    stats = fit_norm(seqs)
    seg_cfg = SegSolverConfig(n_segments=3, solver="exact_dp")
    discovered = [exact_dp(seq, seg_cfg) for seq in seqs]
    z = normalize_pool(seqs, stats)
    labels = np.concatenate(
        [
            StepAnnotation(3, seg.boundaries).frame_labels(seq.t)
            for seg, seq in zip(discovered, seqs)
        ]
    )
    clf = train_softmax(z, labels, n_steps=3)
    scorer = frame_scorer(clf, stats)

    env = DoorEnv(cfg, projector)
    ideal_controls = rollout_script(cfg, 0.0, None).controls
    sigma0 = 0.25 * np.eye(env.control_dim)
    pcfg = PI2Config(
        n_iterations=15, n_samples=10, epsilon=EPSILON, seed=POLICY_SEED, eval_episodes=50
    )

    def run(reward_fn):
        policy = bootstrap_from_controls(ideal_controls, env.state_dim, sigma0)
        curve, max_kl = [], 0.0
        for it in range(pcfg.n_iterations):
            _, rate = evaluate_policy(
                policy, env, reward_fn, pcfg.eval_episodes, (pcfg.seed, it, EVAL_STREAM_TAG)
            )
            curve.append(rate)
            rollouts = sample_rollouts(
                policy, env, reward_fn, pcfg.n_samples, (pcfg.seed, it)
            )
            new = pi2_update(policy, rollouts, pcfg)
            for t in range(policy.horizon):
                dk = new.k[t] - policy.k[t]
                max_kl = max(max_kl, 0.5 * dk @ np.linalg.solve(policy.sigma[t], dk))
            policy = new
        _, rate = evaluate_policy(
            policy,
            env,
            reward_fn,
            pcfg.eval_episodes,
            (pcfg.seed, pcfg.n_iterations, EVAL_STREAM_TAG),
        )
        curve.append(rate)
        return np.asarray(curve), max_kl

    start = time.perf_counter()
    truth_curve, truth_kl = run(lambda state, obs: ground_truth_reward(state, cfg))
    learned_curve, learned_kl = run(lambda state, obs: scorer(obs))
    elapsed = time.perf_counter() - start
    return {
        "truth_curve": truth_curve,
        "learned_curve": learned_curve,
        "max_kls": {"truth": truth_kl, "learned": learned_kl},
        "classifier": clf,
        "elapsed": elapsed,
    }


# ---------------------------------------------------------------- claims


def test_criterion_1_segmentation_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(100)
    for _ in range(100):
        n = int(rng.integers(2, 5))
        min_size = int(rng.integers(1, 3))
        t = int(rng.integers(n * min_size, 21))
        d = int(rng.integers(1, 6))
        seq = FeatureSequence(
            frames=rng.normal(size=(t, d)).astype(np.float32), source="synthetic"
        )
        cfg = SegSolverConfig(n_segments=n, min_size=min_size, solver="exact_dp")
        opt = exact_dp(seq, cfg)
        ref = brute_force(seq, cfg)
        assert opt.boundaries == ref.boundaries
        assert opt.objective == ref.objective
    for _ in range(100):
        n = int(rng.integers(2, 4))
        min_size = int(rng.integers(1, 3))
        t = int(rng.integers(n * min_size, 31))
        d = int(rng.integers(1, 6))
        seq = FeatureSequence(
            frames=rng.normal(size=(t, d)).astype(np.float32), source="synthetic"
        )
        cfg = SegSolverConfig(n_segments=n, min_size=min_size, solver="recursive")
        rec = recursive(seq, cfg)
        opt = exact_dp(seq, cfg)
        assert abs(rec.objective - opt.objective) <= 1e-9
    elapsed = time.perf_counter() - start
    check(
        1,
        "segmentation oracle equivalence",
        elapsed < 60.0,
        f"100 exact-vs-brute cases identical, 100 recursive cases within 1e-9, "
        f"{elapsed:.1f}s < 60s",
    )


def test_criterion_2_binary_solver_bound():
    rng = np.random.default_rng(200)
    worst = -np.inf
    for _ in range(200):
        n = int(rng.integers(2, 6))
        min_size = int(rng.integers(1, 4))
        t = int(rng.integers(n * min_size, 41))
        d = int(rng.integers(1, 9))
        seq = FeatureSequence(
            frames=rng.normal(size=(t, d)).astype(np.float32), source="synthetic"
        )
        cfg = SegSolverConfig(n_segments=n, min_size=min_size, solver="binary")
        gap = exact_dp(seq, cfg).objective - binary(seq, cfg).objective
        worst = max(worst, gap)
        assert gap <= 1e-12
    # constant blocks with one dominant level gap per greedy cut: both
    # solvers must land on the block boundaries and reach cost 0
    for _ in range(25):
        a = int(rng.integers(1, 3))
        g = int(rng.integers(8, 13))
        widths = [int(rng.integers(2, 6)) for _ in range(3)]
        s3 = blocks([0, a, a + g], widths)
        cfg3 = SegSolverConfig(n_segments=3, min_size=2, solver="binary")
        assert binary(s3, cfg3).objective == 0.0
        assert exact_dp(s3, cfg3).objective == 0.0
        b = int(rng.integers(1, 3))
        gm = int(rng.integers(10, 15))
        # the greedy right half starts one frame past its cut, so blocks
        # must carry one spare frame beyond min_size to stay recoverable
        widths = [int(rng.integers(3, 7)) for _ in range(4)]
        s4 = blocks([0, b, b + gm, b + gm + b], widths)
        cfg4 = SegSolverConfig(n_segments=4, min_size=2, solver="binary")
        assert binary(s4, cfg4).objective == 0.0
        assert exact_dp(s4, cfg4).objective == 0.0
    check(
        2,
        "binary solver bound",
        True,
        f"binary >= exact - 1e-12 on 200 instances (worst slack {worst:.1e}); "
        f"50 constant-block instances reach objective 0",
    )


def test_criterion_3_segmentation_beats_ordered_random(tmp_path):
    start = time.perf_counter()
    rng = np.random.default_rng(PIECEWISE_SEED)
    data = gen_piecewise_dataset(50, 80, 64, 3, 2.0, rng, min_size=8)
    manifest = write_manifest(tmp_path, [(s, a, "train") for s, a in data])
    method, base = eval_segmentation(
        manifest,
        SegSolverConfig(n_segments=3, min_size=8, solver="exact_dp"),
        n_seeds=100,
        seed=0,
    )
    elapsed = time.perf_counter() - start
    gap = 100 * (method.average - base.average)
    check(
        3,
        "segmentation vs ordered-random",
        gap >= 15.0 and elapsed < 120.0,
        f"mean Jaccard {100 * method.average:.1f} vs {100 * base.average:.1f} "
        f"(gap {gap:.1f} pts >= 15), {elapsed:.1f}s < 120s",
    )


def test_criterion_4_reward_models_beat_bernoulli(demo_corpus):
    start = time.perf_counter()
    gauss = fit_gaussian_steps(
        demo_corpus["z"], demo_corpus["labels"], 3, alpha=5.0, m=32
    )
    clf = train_softmax(demo_corpus["z"], demo_corpus["labels"], n_steps=3)
    reports = eval_rewards(
        demo_corpus["manifest"],
        {"gaussian": gauss, "softmax": clf},
        demo_corpus["stats"],
        threshold=0.5,
        n_seeds=100,
        seed=0,
    )
    elapsed = time.perf_counter() - start
    bern = reports[-1].average
    ratios = {r.method: r.average / bern for r in reports[:-1]}
    check(
        4,
        "reward accuracy vs Bernoulli",
        all(v >= 1.5 for v in ratios.values()) and elapsed < 120.0,
        f"gaussian {ratios['gaussian']:.2f}x, softmax {ratios['softmax']:.2f}x "
        f"the Bernoulli mean (need >= 1.5x), {elapsed:.1f}s < 120s",
    )


def test_criterion_5_feature_count_collapse(demo_corpus):
    z, labels = demo_corpus["z"], demo_corpus["labels"]
    stats, test_pairs = demo_corpus["stats"], demo_corpus["test_pairs"]

    def detection_accuracy(models) -> float:
        accs = []
        for seq, ann in test_pairs:
            trace = score_sequence(models, seq, stats)
            truth = ann.frame_labels(seq.t)
            for g in range(3):
                pred = trace.per_step[:, g] >= 0.5
                accs.append(float(np.mean(pred == (truth == g + 1))))
        return float(np.mean(accs))

    acc_selected = detection_accuracy(fit_gaussian_steps(z, labels, 3, alpha=5.0, m=32))
    acc_all = detection_accuracy(
        fit_gaussian_steps(z, labels, 3, alpha=5.0, m=demo_corpus["d"])
    )
    gap = 100 * (acc_selected - acc_all)
    check(
        5,
        "feature-count collapse",
        gap >= 20.0,
        f"held-out step accuracy {100 * acc_selected:.1f} (32 features) vs "
        f"{100 * acc_all:.1f} (all {demo_corpus['d']}), gap {gap:.1f} pts >= 20",
    )


def test_criterion_6_policy_update_correctness(policy_runs):
    rng = np.random.default_rng(600)
    for _ in range(1000):
        scores = rng.normal(scale=2.0, size=int(rng.integers(2, 11)))
        w = softmax_weights(scores, float(rng.uniform(0.01, 20.0)))
        assert abs(w.sum() - 1.0) <= 1e-12

    # equal rewards: every weighting is uniform, the update is the plain
    # sample mean, bit for bit
    controls = rng.normal(size=(6, 4, 2))
    rewards = np.tile(rng.normal(size=4), (6, 1))
    rollouts = [
        Rollout(states=np.zeros((5, 2)), controls=controls[i], rewards=rewards[i])
        for i in range(6)
    ]
    policy = bootstrap_from_controls(np.zeros((4, 2)), 2, 1e6 * np.eye(2))
    new = pi2_update(policy, rollouts, PI2Config(epsilon=0.1))
    assert np.array_equal(new.k, controls.mean(axis=0))

    # the best-scoring sample's weight grows with beta; the analytic growth
    # rate w_b (s_b - sum_i w_i s_i) must be nonnegative and match central
    # finite differences
    for _ in range(1000):
        scores = rng.normal(scale=2.0, size=int(rng.integers(2, 11)))
        beta = float(rng.uniform(0.01, 10.0))
        best = int(np.argmax(scores))
        w = softmax_weights(scores, beta)
        analytic = w[best] * (scores[best] - w @ scores)
        h = 1e-6
        numeric = (
            softmax_weights(scores, beta + h)[best] - softmax_weights(scores, beta - h)[best]
        ) / (2 * h)
        assert analytic >= -1e-15
        assert numeric == pytest.approx(analytic, rel=1e-5, abs=1e-9)

    kls = policy_runs["max_kls"]
    ok = all(v <= EPSILON + 1e-6 for v in kls.values())
    check(
        6,
        "policy update correctness",
        ok,
        f"1000 weight normalizations within 1e-12; equal-reward update equals "
        f"sample mean exactly; 1000 sharpening-rate checks; max per-timestep KL "
        f"{max(kls.values()):.6f} <= {EPSILON} + 1e-6 over every update of both runs",
    )


def test_criterion_7_end_to_end_learning(policy_runs):
    def crossing(curve: np.ndarray) -> int | None:
        hits = np.flatnonzero(curve >= 0.9)
        return int(hits[0]) if hits.size else None

    truth_cross = crossing(policy_runs["truth_curve"])
    learned_cross = crossing(policy_runs["learned_curve"])
    elapsed = policy_runs["elapsed"]
    ok = (
        truth_cross is not None
        and learned_cross is not None
        and truth_cross <= 15
        and learned_cross <= 15
        and abs(learned_cross - truth_cross) <= 5
        and elapsed < 300.0
    )
    check(
        7,
        "end-to-end learning",
        ok,
        f"ground-truth reward reaches 90% at iteration {truth_cross}, learned "
        f"reward at {learned_cross} (gap {abs((learned_cross or 99) - (truth_cross or 99))} "
        f"<= 5, both <= 15), finals {policy_runs['truth_curve'][-1]:.2f}/"
        f"{policy_runs['learned_curve'][-1]:.2f}, {elapsed:.1f}s < 300s",
    )


def test_criterion_8_softmax_training_checks(demo_corpus, policy_runs):
    rng = np.random.default_rng(800)
    frames = rng.normal(size=(9, 5))
    labels = np.array([1, 2, 3, 1, 2, 3, 1, 2, 3])
    w = rng.normal(scale=0.5, size=(3, 5))
    b = rng.normal(scale=0.5, size=3)
    _, grad_w, grad_b = softmax_loss_and_grad(w, b, frames, labels, l2=1e-3)
    h = 1e-6
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        numeric = (
            softmax_loss_and_grad(wp, b, frames, labels, 1e-3)[0]
            - softmax_loss_and_grad(wm, b, frames, labels, 1e-3)[0]
        ) / (2 * h)
        assert numeric == pytest.approx(grad_w[idx], rel=1e-5, abs=1e-8)
    for i in range(3):
        bp, bm = b.copy(), b.copy()
        bp[i] += h
        bm[i] -= h
        numeric = (
            softmax_loss_and_grad(w, bp, frames, labels, 1e-3)[0]
            - softmax_loss_and_grad(w, bm, frames, labels, 1e-3)[0]
        ) / (2 * h)
        assert numeric == pytest.approx(grad_b[i], rel=1e-5, abs=1e-8)

    curves = {
        "annotated-label classifier": train_softmax(
            demo_corpus["z"], demo_corpus["labels"], n_steps=3
        ).loss_curve,
        "discovered-label classifier": policy_runs["classifier"].loss_curve,
    }
    rises = {name: float(np.diff(curve).max()) for name, curve in curves.items()}
    check(
        8,
        "softmax training",
        all(r <= 1e-12 for r in rises.values()),
        "analytic gradient matches central differences within 1e-5 relative; "
        "largest epoch-to-epoch loss change "
        + ", ".join(f"{r:+.1e} ({n})" for n, r in rises.items())
        + " (need <= 0)",
    )


def test_criterion_9_repro_script_byte_identical(tmp_path):
    script = Path(__file__).resolve().parent.parent / "docs" / "repro.sh"
    start = time.perf_counter()
    first = subprocess.run(
        ["bash", str(script), "out"], cwd=tmp_path, capture_output=True, text=True
    )
    assert first.returncode == 0, first.stderr
    shutil.copytree(tmp_path / "out", tmp_path / "kept")
    second = subprocess.run(
        ["bash", str(script), "out"], cwd=tmp_path, capture_output=True, text=True
    )
    assert second.returncode == 0, second.stderr
    elapsed = time.perf_counter() - start

    kept = sorted(p for p in (tmp_path / "kept").rglob("*") if p.is_file())
    fresh = sorted(p for p in (tmp_path / "out").rglob("*") if p.is_file())
    assert [p.relative_to(tmp_path / "kept") for p in kept] == [
        p.relative_to(tmp_path / "out") for p in fresh
    ]
    differing = [
        str(a.relative_to(tmp_path / "kept"))
        for a, b in zip(kept, fresh)
        if a.read_bytes() != b.read_bytes()
    ]
    check(
        9,
        "byte-identical reproduction",
        not differing,
        f"two full pipeline runs produced {len(kept)} identical files "
        f"({elapsed:.0f}s total)"
        if not differing
        else f"files differ between reruns: {differing}",
    )
