"""Command-line entry point: ``vrbqn train|eval|analyze|render-episode``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime, numeric
or file-format error. ``VRBQN_OUTPUT_DIR`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    activation_diff,
    classify_neurons,
    collect_states,
    neuron_trace,
    prune_to_active,
    read_classification,
    write_diff_overlay,
)
from .config import env_config, load_config, train_config
from .envs import TrajectoryLogger, make_env, write_pnm
from .exceptions import ConfigurationError, FormatError, NumericError, StateError, VRBQNError
from .qlearn import greedy_action, load_checkpoint, save_checkpoint
from .rbf import activate, activate_state, load_layer, sample_layer, save_layer
from .trainer import EvalReport, SeedResult, evaluate, train, write_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
OUTPUT_ENV_VAR = "VRBQN_OUTPUT_DIR"


def _output_dir(arg) -> Path:
    out = Path(arg or os.environ.get(OUTPUT_ENV_VAR) or "vrbqn-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _layer_for(cfg, env, seed=None):
    spec = cfg["layer"]
    if spec["path"]:
        layer = load_layer(spec["path"])
        if layer.frame_shape != tuple(env.frame_shape):
            raise ConfigurationError(
                f"layer geometry {layer.frame_shape} does not match environment frames {env.frame_shape}"
            )
        return layer
    h, w, c = env.frame_shape
    return sample_layer(
        spec["seed"] if seed is None else seed,
        spec["n_neurons"],
        w,
        h,
        c,
        tuple(spec["sigma_xy_range"]),
        spec["sigma_z"],
    )


def _write_manifest(out: Path, manifest: dict) -> Path:
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = _output_dir(args.out)
    tc = train_config(cfg)
    env = make_env(cfg["scenario"], env_config(cfg))
    layer = _layer_for(cfg, env)
    layer_path = out / "layer.bin"
    save_layer(layer, layer_path)
    manifest = {
        "artifact_version": __version__,
        "config": cfg,
        "layer": layer_path.name,
        "seeds": list(tc.seeds),
        "runs": [],
        "status": "running",
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    for seed in tc.seeds:
        run = {"seed": seed, "checkpoint": None, "log": None, "status": "running"}
        manifest["runs"].append(run)
        try:
            head, log = train(make_env(cfg["scenario"], env_config(cfg)), layer, tc, seed=seed)
        except NumericError as exc:
            run["status"] = "failed"
            manifest["status"] = "partial"
            manifest["error"] = f"seed {seed}: {exc}"
            _write_manifest(out, manifest)
            raise
        ckpt = out / f"checkpoint_seed{seed}.bin"
        log_path = out / f"log_seed{seed}.csv"
        save_checkpoint(head, ckpt)
        write_log(log, log_path)
        run.update(checkpoint=ckpt.name, log=log_path.name, status="complete", episodes=len(log))
    manifest["status"] = "complete"
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    path = _write_manifest(out, manifest)
    print(path)
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _eval_one(job):
    scenario, env_cfg, layer, head, episodes, seed, policy = job
    report = evaluate(make_env(scenario, env_cfg), layer, head, episodes, [seed], policy)
    return report.returns, report.per_seed[0]


def _merge_reports(parts) -> EvalReport:
    returns = np.concatenate([r for r, _ in parts])
    per_seed = [s for _, s in parts]
    alive = float(np.mean([s.mean_alive_steps for s in per_seed]))
    return EvalReport(per_seed, float(returns.mean()), float(returns.std()), alive, int(returns.size), returns)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    env_cfg = env_config(cfg)
    env = make_env(cfg["scenario"], env_cfg)
    layer = load_layer(args.layer)
    head = load_checkpoint(args.checkpoint)
    if layer.frame_shape != tuple(env.frame_shape):
        raise ConfigurationError(
            f"layer geometry {layer.frame_shape} does not match environment frames {env.frame_shape}"
        )
    if args.only_active:
        classification = read_classification(args.only_active)
        if classification.n_neurons != layer.n_neurons:
            raise ConfigurationError("classification file does not match the layer")
        layer, head = prune_to_active(layer, head, classification)
    episodes = args.episodes or cfg["train"]["eval_episodes"]
    seeds = args.seeds if args.seeds is not None else cfg["train"]["seeds"]
    jobs = [(cfg["scenario"], env_cfg, layer, head, episodes, s, args.policy) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(_eval_one, jobs))  # map keeps seed order
    else:
        parts = [_eval_one(j) for j in jobs]
    report = _merge_reports(parts)
    out = _output_dir(args.out)
    path = out / (args.report or "eval.csv")
    report.write_csv(path)
    print(f"mean {report.mean_return:.3f} std {report.std_return:.3f} over {report.episodes} episodes")
    print(path)
    return EXIT_OK


# -- analyze -----------------------------------------------------------------


def _classify(args, cfg, env, out):
    states, _ = collect_states(env, args.n_states, seed=cfg["env"]["seed"], max_skip=args.max_skip)
    if args.layer:
        layers = [("file", load_layer(args.layer))]
    else:
        base = cfg["layer"]["seed"]
        count = args.layer_seeds or 1
        layers = [(base + k, _layer_for(cfg, env, seed=base + k)) for k in range(count)]
    rows = []
    for tag, layer in layers:
        c = classify_neurons(layer, states, args.threshold)
        name = "classification.csv" if tag == "file" else f"classification_seed{tag}.csv"
        c.write_csv(out / name)
        rows.append((tag, c.active.size, layer.n_neurons, c.active_fraction))
    fractions = np.array([r[3] for r in rows])
    with open(out / "classification_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer_seed", "active", "neurons", "active_fraction"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], repr(float(row[3]))])
        writer.writerow(["mean", "", "", repr(float(fractions.mean()))])
        writer.writerow(["std", "", "", repr(float(fractions.std()))])
    print(f"active fraction {fractions.mean():.4f} +- {fractions.std():.4f} over {len(rows)} layer(s)")


def _diff(args, cfg, env, layer, out):
    states, _ = collect_states(env, args.n_states, seed=cfg["env"]["seed"], max_skip=args.max_skip)
    i, j = args.pair
    if not (0 <= i < len(states) and 0 <= j < len(states)):
        raise ConfigurationError(f"--pair indices must lie in [0, {len(states)})")
    c = classify_neurons(layer, states, args.threshold)
    d = activation_diff(layer, states[i], states[j], c)
    d.write_histogram_csv(out / "diff_histogram.csv", args.bins)
    write_diff_overlay(layer, states[i], states[j], d, out / "diff_overlay.pgm", args.threshold)
    print(f"{int((d.delta > args.threshold).sum())} neurons changed by more than {args.threshold}")


def _trace(args, cfg, env, layer, out):
    t = neuron_trace(layer, env, args.n_samples, args.neuron, args.threshold, seed=cfg["env"]["seed"], max_skip=args.max_skip)
    t.write_csv(out / f"trace_neuron{args.neuron}.csv")
    print(f"{int(t.flagged.sum())} of {len(t)} samples below {args.threshold}")


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, args.set)
    env = make_env(cfg["scenario"], env_config(cfg))
    out = _output_dir(args.out)
    if args.mode == "classify":
        _classify(args, cfg, env, out)
        return EXIT_OK
    layer = load_layer(args.layer) if args.layer else _layer_for(cfg, env)
    if layer.frame_shape != tuple(env.frame_shape):
        raise ConfigurationError("layer geometry does not match environment frames")
    if args.mode == "diff":
        _diff(args, cfg, env, layer, out)
    else:
        _trace(args, cfg, env, layer, out)
    return EXIT_OK


# -- render-episode ----------------------------------------------------------


def cmd_render(args) -> int:
    cfg = load_config(args.config, args.set)
    env = make_env(cfg["scenario"], env_config(cfg))
    layer = load_layer(args.layer)
    head = load_checkpoint(args.checkpoint)
    if head.n_features != layer.n_neurons * env.config.stack or layer.frame_shape != tuple(env.frame_shape):
        raise ConfigurationError("checkpoint, layer and environment geometry do not match")
    out = _output_dir(args.out)
    n = layer.n_neurons
    feats = activate_state(layer, env.reset(args.episode_seed))
    write_pnm(env.newest_frame, out / "frame_0000.pnm")
    k, done = 0, False
    with TrajectoryLogger(out / "trajectory.csv") as logger:
        while not done:
            action = greedy_action(head, feats)
            _, reward, done = env.step(action)
            k += 1
            logger.log(0, env, action, reward, done)
            write_pnm(env.newest_frame, out / f"frame_{k:04d}.pnm")
            feats = np.concatenate([feats[n:], activate(layer, env.newest_frame)])
    print(f"{k} steps written to {out}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrbqn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vrbqn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML or JSON run configuration")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV_VAR} or ./vrbqn-out)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config field")

    p = sub.add_parser("train", help="sample a layer, train and write checkpoints, logs and a manifest")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (results keep seed order)")
    p.add_argument("--only-active", metavar="CLASSIFICATION_CSV", help="evaluate the active-neuron network only")
    p.add_argument("--policy", choices=["greedy", "random"], default="greedy")
    p.add_argument("--report", help="report file name inside the output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="neuron activity analyses")
    p.add_argument("mode", choices=["classify", "diff", "trace"])
    common(p)
    p.add_argument("--layer", help="layer file (default: sample from the config)")
    p.add_argument("--layer-seeds", type=int, help="classify this many consecutive layer seeds")
    p.add_argument("--n-states", type=int, default=1000)
    p.add_argument("--max-skip", type=int, default=12)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--pair", type=int, nargs=2, default=(0, 1), metavar=("I", "J"))
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--neuron", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=5000)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("render-episode", help="dump the frames of one greedy episode")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--episode-seed", type=int, default=0)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (StateError, VRBQNError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
