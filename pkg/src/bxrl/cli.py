"""Command-line interface: one subcommand per pipeline stage.

Every command prints a single JSON status line on success and exits 0.
Failures print the error to stderr, remove any files the command created,
and exit with the error class's distinct nonzero code.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import BxrlError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bxrl",
        description="Discover, segment, and attribute behaviors in offline RL trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic planted-mode dataset")
    p.add_argument("--env", required=True, choices=["gridlava", "pointmass"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-size", type=int, default=8)
    p.add_argument("--episode-len", type=int, default=60)
    p.add_argument("--image-obs", action="store_true")

    p = sub.add_parser("train-vqvae", help="train the trajectory tokenizer")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-ckpt", required=True)

    p = sub.add_parser("tokenize", help="emit per-timestep tokens for a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="cluster tokens into behaviors")
    p.add_argument("--tokens", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--lambda", dest="similarity_weight", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw-distance", action="store_true",
                   help="use raw squared distance instead of the Gaussian kernel")
    p.add_argument("--bandwidth", choices=["nn_median", "pair_median"],
                   default="nn_median")

    p = sub.add_parser("train-bc", help="train the policy and per-cluster models")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("attribute", help="attribute policy actions to clusters")
    p.add_argument("--policy", required=True)
    p.add_argument("--bc-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--actions", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="compute the metrics report")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--bc-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--actions", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep-lambda", help="segmentation quality across blend weights")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid", required=True, help='comma list, e.g. "0,0.25,0.5,0.75,1"')
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep-codebook", help="train tokenizers across codebook sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--sizes", required=True, help='comma list, e.g. "4,8,16,32"')
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="0", help='comma list of training seeds')

    p = sub.add_parser("report", help="collate run artifacts into a report directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", required=True)
    return parser


def _declared_outputs(args) -> list[Path]:
    cmd = args.command
    if cmd in ("gen-data", "tokenize", "segment", "attribute"):
        return [Path(args.out)]
    if cmd == "train-vqvae":
        return [Path(args.out_ckpt)]
    if cmd == "train-bc":
        return [Path(args.out_dir)]
    if cmd in ("evaluate", "sweep-lambda", "sweep-codebook", "report"):
        return [Path(args.out)]
    return []


def _snapshot(paths: list[Path]) -> set[str]:
    seen = set()
    for p in paths:
        if p.exists():
            seen.add(str(p))
            if p.is_dir():
                seen.update(str(child) for child in p.rglob("*"))
    return seen


def _cleanup(paths: list[Path], pre_existing: set[str]) -> None:
    for p in paths:
        if not p.exists():
            continue
        if p.is_dir():
            for child in sorted(p.rglob("*"), reverse=True):
                if str(child) in pre_existing:
                    continue
                try:
                    if child.is_dir():
                        child.rmdir()
                    else:
                        child.unlink()
                except OSError:
                    pass
            if str(p) not in pre_existing:
                try:
                    p.rmdir()
                except OSError:
                    pass
        elif str(p) not in pre_existing:
            try:
                p.unlink()
            except OSError:
                pass


def _dispatch(args) -> dict:
    cmd = args.command
    if cmd == "gen-data":
        return pipeline.run_gen_data(
            args.env, args.seed, args.episodes, args.out,
            grid_size=args.grid_size, episode_len=args.episode_len,
            image_obs=args.image_obs,
        )
    if cmd == "train-vqvae":
        return pipeline.run_train_vqvae(args.data, args.config, args.out_ckpt)
    if cmd == "tokenize":
        return pipeline.run_tokenize(args.ckpt, args.data, args.out)
    if cmd == "segment":
        return pipeline.run_segment(
            args.tokens, args.ckpt, args.similarity_weight, args.out,
            num_clusters=args.k, smoothing_window=args.window, seed=args.seed,
            gaussian_similarity=not args.raw_distance, bandwidth=args.bandwidth,
        )
    if cmd == "train-bc":
        return pipeline.run_train_bc(args.data, args.labels, args.out_dir, args.config)
    if cmd == "attribute":
        return pipeline.run_attribute(
            args.policy, args.bc_dir, args.data, args.out,
            episodes=args.episodes, actions=args.actions, seed=args.seed,
        )
    if cmd == "evaluate":
        return pipeline.run_evaluate(
            args.data, args.ckpt, args.tokens, args.segments, args.bc_dir,
            args.out, episodes=args.episodes, actions=args.actions, seed=args.seed,
        )
    if cmd == "sweep-lambda":
        return pipeline.run_sweep_lambda(
            args.data, args.ckpt, args.grid, args.out,
            smoothing_window=args.window, seed=args.seed,
        )
    if cmd == "sweep-codebook":
        return pipeline.run_sweep_codebook(
            args.data, args.sizes, args.out, config=args.config, seeds=args.seeds
        )
    if cmd == "report":
        return pipeline.run_report(args.run_dir, args.out)
    raise AssertionError(f"unhandled command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    outputs = _declared_outputs(args)
    pre_existing = _snapshot(outputs)
    try:
        status = _dispatch(args)
    except BxrlError as exc:
        _cleanup(outputs, pre_existing)
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return type(exc).exit_code
    except Exception as exc:  # unexpected; still clean up partial outputs
        _cleanup(outputs, pre_existing)
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 70
    print(json.dumps(status, sort_keys=True))
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
