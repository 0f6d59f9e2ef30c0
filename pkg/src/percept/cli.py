"""Command-line front end for the full pipeline.

One executable, eight subcommands: generate synthetic data (`synth
gen-demos`, `synth gen-piecewise`), discover steps (`segment`), fit reward
models (`train`), score sequences (`score`), evaluate against baselines
(`eval-seg`, `eval-reward`, `baseline`), and run policy training
(`pi2-train`).

Conventions shared by every subcommand: `--seed` makes all numeric output
reproducible (identical command + seed => byte-identical files); a resolved
configuration snapshot is written next to each run's outputs; JSON and CSV
outputs embed the tool version and the resolved configuration (CSV as `#`
comment lines, which numpy and pandas readers skip). `--config file.json`
supplies defaults for any flag; flags given on the command line win.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing files,
infeasible parameters).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evalkit import (
    bernoulli_frame_set,
    eval_rewards,
    eval_segmentation,
    format_reports,
    jaccard,
    ordered_random_segmentation,
    step_frame_sets,
)
from .featureio import (
    DatasetManifest,
    FseqError,
    ManifestEntry,
    StepAnnotation,
    fit_norm,
    load_fseq,
    load_manifest,
    normalize_pool,
    save_annotation,
    save_fseq,
    save_manifest,
)
from .pi2 import PI2Config, bootstrap_from_controls, train as pi2_train_loop
from .rewards import (
    SoftmaxHyper,
    calibrate_confidence,
    fit_gaussian_steps,
    frame_scorer,
    load_model,
    save_model,
    score_sequence,
    train_softmax,
)
from .segmenter import InfeasibleSegmentation, SegSolverConfig, segment
from .synthenv import (
    DemoAnnotationError,
    DoorEnv,
    DoorEnvConfig,
    FeatureProjector,
    gen_demo_dataset,
    gen_piecewise_dataset,
    ground_truth_reward,
    rollout_script,
)

SOLVER_ALIASES = {
    "exact": "exact_dp",
    "exact_dp": "exact_dp",
    "recursive": "recursive",
    "binary": "binary",
    "brute": "brute_force",
    "brute_force": "brute_force",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract here is exit 1 with
    # the usage text, so route through an exception main() can translate
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------- output


def _config_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "parser_key", "command", "synth_command", "config"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, list):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        out[key] = value
    return out


def _snapshot_path(args: argparse.Namespace) -> Path:
    if getattr(args, "out_dir", None) is not None:
        return Path(args.out_dir) / "config.json"
    out = Path(args.out)
    return out.with_name(out.stem + ".config.json")


def _write_snapshot(args: argparse.Namespace) -> None:
    payload = {
        "version": __version__,
        "command": args.parser_key,
        "config": _config_dict(args),
    }
    path = _snapshot_path(args)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_json(args: argparse.Namespace, results, path: Path) -> None:
    payload = {
        "version": __version__,
        "command": args.parser_key,
        "config": _config_dict(args),
        "results": results,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(args: argparse.Namespace, header: list[str], rows, path: Path) -> None:
    lines = [
        f"# percept {__version__}",
        f"# command: {args.parser_key}",
        f"# config: {json.dumps(_config_dict(args), sort_keys=True)}",
        ",".join(header),
    ]
    for row in rows:
        lines.append(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- synth


def _cmd_gen_demos(args) -> int:
    if not 0 <= args.n_test < args.n:
        raise ValueError(f"n_test must be in [0, n), got {args.n_test} of {args.n}")
    cfg = DoorEnvConfig()
    projector = FeatureProjector(args.proj_seed, d_out=args.d)
    rng = np.random.default_rng(args.seed)
    demos = gen_demo_dataset(
        args.n, cfg, projector, rng, noise_scale=args.noise, session_size=args.session_size
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (_, seq, ann) in enumerate(demos):
        save_fseq(seq, out_dir / f"seq{i:03d}.fseq")
        save_annotation(ann, out_dir / f"seq{i:03d}.json")
        split = "train" if i < args.n - args.n_test else "test"
        entries.append(
            ManifestEntry(fseq=f"seq{i:03d}.fseq", labels=f"seq{i:03d}.json", split=split)
        )
    save_manifest(DatasetManifest(entries=tuple(entries), root=out_dir), out_dir / "manifest.json")
    _write_snapshot(args)
    print(f"wrote {args.n} demos to {out_dir} ({args.n - args.n_test} train, {args.n_test} test)")
    return 0


def _cmd_gen_piecewise(args) -> int:
    rng = np.random.default_rng(args.seed)
    data = gen_piecewise_dataset(
        args.n,
        args.t,
        args.d,
        args.steps,
        args.snr,
        rng,
        min_size=args.min_size,
        informative_frac=args.informative_frac,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (seq, ann) in enumerate(data):
        save_fseq(seq, out_dir / f"seq{i:03d}.fseq")
        save_annotation(ann, out_dir / f"seq{i:03d}.json")
        entries.append(
            ManifestEntry(fseq=f"seq{i:03d}.fseq", labels=f"seq{i:03d}.json", split="train")
        )
    save_manifest(DatasetManifest(entries=tuple(entries), root=out_dir), out_dir / "manifest.json")
    _write_snapshot(args)
    print(f"wrote {args.n} sequences to {out_dir}")
    return 0


# ---------------------------------------------------------------- segment


def _cmd_segment(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = SegSolverConfig(
        n_segments=args.steps, min_size=args.min_size, solver=SOLVER_ALIASES[args.solver]
    )
    results = []
    for entry in manifest.split(args.split):
        seq, _ = manifest.load_entry(entry)
        seg = segment(seq, cfg)
        results.append(
            {
                "name": Path(entry.fseq).stem,
                "boundaries": list(seg.boundaries),
                "objective": seg.objective,
                "per_segment_cost": list(seg.per_segment_cost),
            }
        )
    _write_json(args, results, Path(args.out))
    _write_snapshot(args)
    print(f"segmented {len(results)} sequences -> {args.out}")
    return 0


# ---------------------------------------------------------------- train


def _split_annotations(args, manifest: DatasetManifest) -> dict[str, StepAnnotation]:
    """name -> annotation used for labeling; discovered splits when given."""
    if args.splits is None:
        out = {}
        for entry in manifest.split(args.split):
            if entry.labels is None:
                raise ValueError(f"manifest entry {entry.fseq} has no labels and no --splits given")
            _, ann = manifest.load_entry(entry)
            out[Path(entry.fseq).stem] = ann
        return out
    raw = json.loads(Path(args.splits).read_text())
    rows = raw["results"] if isinstance(raw, dict) else raw
    return {
        r["name"]: StepAnnotation(
            n_steps=len(r["boundaries"]) + 1, boundaries=tuple(r["boundaries"])
        )
        for r in rows
    }


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    annotations = _split_annotations(args, manifest)
    seqs, anns = [], []
    for entry in manifest.split(args.split):
        name = Path(entry.fseq).stem
        if name not in annotations:
            raise ValueError(f"no step boundaries for sequence {name!r} in {args.splits}")
        seq, _ = manifest.load_entry(entry)
        seqs.append(seq)
        anns.append(annotations[name])
    if not seqs:
        raise ValueError(f"manifest {args.manifest} has no {args.split!r} sequences")
    n_steps = {a.n_steps for a in anns}
    if len(n_steps) != 1:
        raise ValueError(f"sequences disagree on step count: {sorted(n_steps)}")
    n = n_steps.pop()
    stats = fit_norm(seqs)
    z = normalize_pool(seqs, stats)
    labels = np.concatenate([a.frame_labels(s.t) for a, s in zip(anns, seqs)])
    if args.method == "select":
        model = fit_gaussian_steps(z, labels, n, alpha=args.alpha, m=args.top_m)
    else:
        hyper = SoftmaxHyper(l2=args.l2, lr=args.lr, epochs=args.epochs)
        model = train_softmax(z, labels, n_steps=n, hyper=hyper)
        if args.calibrate is not None:
            model = calibrate_confidence(model, z, target=args.calibrate)
    save_model(model, stats, args.out)
    _write_snapshot(args)
    print(f"trained {args.method} model on {len(seqs)} sequences ({n} steps) -> {args.out}")
    return 0


# ---------------------------------------------------------------- score


def _cmd_score(args) -> int:
    model, stats = load_model(args.model)
    seq = load_fseq(args.fseq)
    trace = score_sequence(model, seq, stats, normalize_range=not args.raw)
    n = trace.per_step.shape[1]
    header = ["frame"] + [f"step_{g}" for g in range(1, n + 1)] + ["combined"]
    rows = [
        [t, *trace.per_step[t], trace.combined[t]]
        for t in range(trace.per_step.shape[0])
    ]
    _write_csv(args, header, rows, Path(args.out))
    _write_snapshot(args)
    print(f"scored {seq.t} frames -> {args.out}")
    return 0


# ---------------------------------------------------------------- eval


def _cmd_eval_seg(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = SegSolverConfig(
        n_segments=args.steps, min_size=args.min_size, solver=SOLVER_ALIASES[args.solver]
    )
    method, base = eval_segmentation(manifest, cfg, n_seeds=args.seeds, seed=args.seed)
    print(format_reports([method, base]))
    _write_json(args, [method.to_dict(), base.to_dict()], Path(args.out))
    _write_snapshot(args)
    return 0


def _cmd_eval_reward(args) -> int:
    manifest = load_manifest(args.manifest)
    models = {}
    for path in args.model:
        tag = Path(path).stem
        if tag in models:
            tag = f"{tag}_{len(models)}"
        models[tag] = load_model(path)[0]
    stats = load_model(args.model[0])[1]
    reports = eval_rewards(
        manifest,
        models,
        stats,
        threshold=args.threshold,
        n_seeds=args.seeds,
        seed=args.seed,
        split=args.split,
    )
    print(format_reports(reports))
    _write_json(args, [r.to_dict() for r in reports], Path(args.out))
    _write_snapshot(args)
    return 0


def _cmd_baseline(args) -> int:
    manifest = load_manifest(args.manifest)
    pairs = manifest.load_split(args.split)
    if not pairs:
        raise ValueError(f"manifest {args.manifest} has no {args.split!r} sequences")
    if any(ann is None for _, ann in pairs):
        raise ValueError("baseline evaluation needs annotated sequences")
    n_steps = pairs[0][1].n_steps
    truth_sets = [step_frame_sets(ann.boundaries, seq.t, n_steps) for seq, ann in pairs]
    per_seed = np.zeros((args.seeds, n_steps))
    for s in range(args.seeds):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, s]))
        for (seq, _), truth in zip(pairs, truth_sets):
            if args.kind == "ordered-random":
                draw = ordered_random_segmentation(seq.t, n_steps, args.min_size, rng)
                preds = step_frame_sets(draw.boundaries, seq.t, n_steps)
            else:
                preds = [bernoulli_frame_set(seq.t, args.p, rng) for _ in range(n_steps)]
            per_seed[s] += [jaccard(p, g) for p, g in zip(preds, truth)]
    per_seed /= len(pairs)
    per_step = per_seed.mean(axis=0)
    result = {
        "method": args.kind,
        "dataset": args.split,
        "n_steps": n_steps,
        "per_step_jaccard": per_step.tolist(),
        "average": float(per_step.mean()),
        "stderr": float(np.std(per_seed.mean(axis=1), ddof=1) / np.sqrt(args.seeds))
        if args.seeds > 1
        else 0.0,
    }
    _write_json(args, [result], Path(args.out))
    _write_snapshot(args)
    print(f"{args.kind} baseline average jaccard: {result['average']:.3f}")
    return 0


# ---------------------------------------------------------------- pi2


def _cmd_pi2_train(args) -> int:
    env_cfg = DoorEnvConfig()
    projector = FeatureProjector(args.proj_seed, d_out=args.d)
    env = DoorEnv(env_cfg, projector)
    if args.reward == "env_truth":
        reward_fn = lambda state, obs: ground_truth_reward(state, env_cfg)
    else:
        model, stats = load_model(args.reward)
        scorer = frame_scorer(model, stats)
        reward_fn = lambda state, obs: scorer(obs)
    controls = rollout_script(env_cfg, 0.0, None).controls
    sigma0 = args.sigma * np.eye(env.control_dim)
    init = bootstrap_from_controls(controls, env.state_dim, sigma0)
    cfg = PI2Config(
        n_iterations=args.iters,
        n_samples=args.samples,
        epsilon=args.epsilon,
        seed=args.seed,
        eval_episodes=args.eval_episodes,
    )
    _, curve = pi2_train_loop(env, reward_fn, init, cfg)
    rows = [[s.iteration, s.mean_reward, s.success_rate] for s in curve]
    _write_csv(args, ["iteration", "mean_reward", "success_rate"], rows, Path(args.out))
    _write_snapshot(args)
    print(
        f"pi2: {args.iters} iterations, final success rate "
        f"{curve[-1].success_rate:.2f} -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------- parser


def build_parsers() -> tuple[_Parser, dict[str, _Parser]]:
    """Root parser plus a key -> subparser map for config-default injection."""
    root = _Parser(prog="percept", description=__doc__.splitlines()[0])
    root.add_argument("--version", action="version", version=f"percept {__version__}")
    root.add_argument("--config", type=Path, help="JSON file of default flag values")
    subs = root.add_subparsers(dest="command", metavar="COMMAND")
    registry: dict[str, _Parser] = {}

    def register(key, parser, func):
        parser.set_defaults(func=func, parser_key=key)
        registry[key] = parser

    synth = subs.add_parser("synth", help="generate synthetic datasets")
    synth_subs = synth.add_subparsers(dest="synth_command", metavar="KIND")
    registry["synth"] = synth

    p = synth_subs.add_parser("gen-demos", help="noisy scripted door demonstrations")
    p.add_argument("--n", type=int, required=True, help="number of demos")
    p.add_argument("--n-test", type=int, default=0, help="how many of the last demos go to test")
    p.add_argument("--noise", type=float, default=0.5, help="control noise scale")
    p.add_argument("--d", type=int, default=512, help="feature dimension")
    p.add_argument("--session-size", type=int, default=3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--proj-seed", type=int, default=101, help="feature projector seed")
    p.add_argument("--out-dir", type=Path, required=True)
    register("synth gen-demos", p, _cmd_gen_demos)

    p = synth_subs.add_parser("gen-piecewise", help="piecewise-stationary labeled sequences")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--informative-frac", type=float, default=0.25)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    register("synth gen-piecewise", p, _cmd_gen_piecewise)

    p = subs.add_parser("segment", help="discover step boundaries")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--solver", choices=sorted(SOLVER_ALIASES), default="exact")
    p.add_argument("--split", default="train")
    p.add_argument("--out", type=Path, required=True)
    register("segment", p, _cmd_segment)

    p = subs.add_parser("train", help="fit a reward model from labeled frames")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--splits", type=Path, help="segment output to label frames with")
    p.add_argument("--method", choices=["select", "linear"], required=True)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--top-m", type=int, default=32)
    hyper = SoftmaxHyper()
    p.add_argument("--l2", type=float, default=hyper.l2)
    p.add_argument("--lr", type=float, default=hyper.lr)
    p.add_argument("--epochs", type=int, default=hyper.epochs)
    p.add_argument(
        "--calibrate",
        type=float,
        default=None,
        metavar="TARGET",
        help="temperature-calibrate the classifier to this median confidence",
    )
    p.add_argument("--split", default="train")
    p.add_argument("--out", type=Path, required=True)
    register("train", p, _cmd_train)

    p = subs.add_parser("score", help="score one sequence with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--fseq", type=Path, required=True)
    p.add_argument("--raw", action="store_true", help="skip range normalization")
    p.add_argument("--out", type=Path, required=True)
    register("score", p, _cmd_score)

    p = subs.add_parser("eval-seg", help="segmentation vs ordered-random baseline")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--solver", choices=sorted(SOLVER_ALIASES), default="exact")
    p.add_argument("--seeds", type=int, default=100, help="baseline draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    register("eval-seg", p, _cmd_eval_seg)

    p = subs.add_parser("eval-reward", help="reward models vs Bernoulli baseline")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path, action="append", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, required=True)
    register("eval-reward", p, _cmd_eval_reward)

    p = subs.add_parser("baseline", help="standalone baseline report")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--kind", choices=["ordered-random", "bernoulli"], required=True)
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--p", type=float, default=0.5, help="bernoulli frame probability")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--out", type=Path, required=True)
    register("baseline", p, _cmd_baseline)

    p = subs.add_parser("pi2-train", help="policy training on the synthetic door")
    p.add_argument("--env", choices=["door_synth"], default="door_synth")
    p.add_argument(
        "--reward", required=True, help="model.json for a learned reward, or env_truth"
    )
    p.add_argument("--iters", type=int, default=11)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.25, help="exploration variance")
    p.add_argument("--eval-episodes", type=int, default=50)
    p.add_argument("--d", type=int, default=512, help="feature dimension")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--proj-seed", type=int, default=101)
    p.add_argument("--out", type=Path, required=True)
    register("pi2-train", p, _cmd_pi2_train)

    return root, registry


def _parser_key(argv: list[str]) -> str | None:
    words = [a for a in argv if not a.startswith("-")]
    if not words:
        return None
    if words[0] == "synth":
        return f"synth {words[1]}" if len(words) > 1 else "synth"
    return words[0]


def _apply_config(path: Path, parser: _Parser) -> None:
    """Config values become parser defaults, so explicit flags still win."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    known = {a.dest for a in parser._actions}
    defaults = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ValueError(f"{path}: unknown config key {key!r}")
        defaults[dest] = value
    for action in parser._actions:
        # a flag satisfied by the config no longer has to appear on the line
        if action.dest in defaults:
            action.required = False
    parser.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    root, registry = build_parsers()
    try:
        conf = argparse.ArgumentParser(add_help=False)
        conf.add_argument("--config", type=Path)
        pre, remaining = conf.parse_known_args(argv)
        if pre.config is not None:
            key = _parser_key(remaining)
            if key is None or key not in registry:
                raise UsageError(f"--config needs a known subcommand, got {key!r}")
            _apply_config(pre.config, registry[key])
        args = root.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except (OSError, ValueError) as e:  # unreadable or malformed --config
        print(f"error: {e}", file=sys.stderr)
        return 2
    if not hasattr(args, "func"):
        (registry.get(args.command, root) if args.command else root).print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (
        OSError,
        ValueError,
        KeyError,
        FseqError,
        InfeasibleSegmentation,
        DemoAnnotationError,
        json.JSONDecodeError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
