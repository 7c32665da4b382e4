"""Command-line entry point.

Subcommands: gen-data, train, rollout, eval, ablate, idm-train. A YAML config
file supplies section defaults; flags override the file. All randomness flows
from the single --seed value through deterministic derivation, so rerunning
any command with the same config and seed reproduces its artifacts byte for
byte. The resolved config hash is stamped into every output.

MULTIWORLD_CACHE names a directory for reusable intermediate artifacts
(cached evaluation reports); it defaults to a per-user temp directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .ablation import run_ablation, write_table
from .dataset import (
    Episode,
    GoalReachPlan,
    RandomPlan,
    generate_episode,
    read_episode,
    write_episode,
)
from .engine import generate_views_parallel, rollout_autoregressive, train
from .engine.checkpoint import load_world_model
from .idm import load_idm, save_idm, train_idm
from .metrics import MetricReport
from .ablation import evaluate_model
from .runconfig import RunConfig, load_config
from .seeding import derive

INDEX_NAME = "index.jsonl"


def cache_root() -> Path:
    env = os.environ.get("MULTIWORLD_CACHE")
    if env:
        return Path(env)
    return Path(tempfile.gettempdir()) / "mvworld-cache"


def _plan(name: str):
    if name == "goal":
        return GoalReachPlan()
    if name == "random":
        return RandomPlan()
    raise ValueError(f"unknown plan {name!r}")


def write_dataset(cfg: RunConfig, out_dir: Path) -> list[dict]:
    """Generate the configured success/failure episode mix with sequential seeds."""
    ds = cfg.dataset
    n_success, n_failure = ds["n_success"], ds["n_failure"]
    if n_success + n_failure <= 0:
        raise ValueError("empty dataset request: n_success + n_failure must be > 0")
    world = cfg.world_config()
    plan = _plan(ds["plan"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    specs = [("success", 0.0, i) for i in range(n_success)]
    specs += [("failure", ds["perturb_prob"], n_success + j) for j in range(n_failure)]
    for kind, perturb, idx in specs:
        seed = cfg.seed + idx  # sequential per-episode seeds
        ep = generate_episode(world, plan, perturb, ds["episode_length"], seed)
        name = f"ep_{idx:05d}.mwep"
        write_episode(ep, out_dir / name)
        rows.append({"path": name, "seed": seed, "success": ep.success_flag, "kind": kind})
    index = [json.dumps({"config_hash": cfg.config_hash(), "count": len(rows), "seed": cfg.seed})]
    index += [json.dumps(r) for r in rows]
    (out_dir / INDEX_NAME).write_text("\n".join(index) + "\n")
    return rows


def load_dataset(data_dir: Path) -> list[Episode]:
    index = data_dir / INDEX_NAME
    if not index.exists():
        raise FileNotFoundError(f"no {INDEX_NAME} in {data_dir}")
    lines = index.read_text().strip().splitlines()
    episodes = []
    for line in lines[1:]:
        row = json.loads(line)
        episodes.append(read_episode(data_dir / row["path"]))
    return episodes


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.seed)
    rows = write_dataset(cfg, Path(args.out))
    print(f"wrote {len(rows)} episodes to {args.out} (config {cfg.config_hash()})")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    episodes = load_dataset(Path(args.data))
    model_cfg = cfg.model_config(preset=args.ablate)
    train_cfg = cfg.train_config(iterations=args.iterations)
    out = Path(args.out)
    result = train(
        episodes,
        model_cfg,
        train_cfg,
        out,
        resume_from=args.resume,
        log_path=out.with_suffix(".loss.jsonl"),
        config_hash=cfg.config_hash(),
        progress=True,
    )
    if result.diverged:
        print(f"training diverged; last good checkpoint at {result.checkpoint_path}")
        return 2
    print(f"trained {train_cfg.iterations} iterations -> {result.checkpoint_path} "
          f"(final loss {result.final_loss:.5f}, config {cfg.config_hash()})")
    return 0


def cmd_idm_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    episodes = load_dataset(Path(args.data))
    model, stats = train_idm(episodes, cfg.idm_config())
    save_idm(Path(args.out), model, {"stats": stats, "config_hash": cfg.config_hash()})
    print(f"idm trained: agreement {stats['direction_agreement']:.3f}, "
          f"intensity mse {stats['intensity_mse']:.5f} -> {args.out}")
    return 0


def _source_episode(args, cfg: RunConfig, length: int) -> Episode:
    if args.actions_from:
        ep = read_episode(args.actions_from)
        if ep.num_frames < length:
            raise ValueError(
                f"action source has {ep.num_frames} frames, rollout needs {length}"
            )
        return ep
    world = cfg.world_config()
    seed = args.episode_seed if args.episode_seed is not None else derive(cfg.seed, "rollout-src")
    return generate_episode(world, _plan(args.plan), cfg.dataset["perturb_prob"], length, seed)


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, args.seed)
    model, ckpt = load_world_model(args.checkpoint)
    f = model.cfg.context_frames
    chunks = args.chunks if args.chunks is not None else cfg.sample["chunks"]
    steps = args.steps if args.steps is not None else cfg.sample["steps"]
    length = chunks * (f - 1) + 1
    source = _source_episode(args, cfg, length)
    world = source.world_config
    expected = {cam.image_shape(world.cell_pixels) for cam in world.cameras}
    if expected != {(model.cfg.image_height, model.cfg.image_width)}:
        raise ValueError(
            f"checkpoint expects views of {(model.cfg.image_height, model.cfg.image_width)}, "
            f"world renders {expected}"
        )
    actions = source.actions.frame_slice(0, length)
    obs = np.stack([source.frames[c][0] for c in range(source.num_views)])
    seeds = [derive(cfg.seed, "rollout-noise", c) for c in range(source.num_views)]
    if chunks == 1:
        videos = generate_views_parallel(model, actions, obs, steps, seeds, workers=args.workers)
    else:
        videos = rollout_autoregressive(
            model, actions, obs, steps, seeds, chunks=chunks, workers=args.workers
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    generated = Episode(
        world_config=world,
        frames=tuple(videos[c] for c in range(videos.shape[0])),
        actions=actions,
        states=None,  # generated video carries no ground truth
        seed=cfg.seed,
        success_flag=False,
    )
    path = write_episode(generated, out_dir / "generated.mwep")
    manifest = {
        "config_hash": cfg.config_hash(),
        "checkpoint": str(args.checkpoint),
        "chunks": chunks,
        "steps": steps,
        "frames_per_view": int(videos.shape[1]),
    }
    (out_dir / "rollout_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    print(f"rollout wrote {videos.shape[1]} frames x {videos.shape[0]} views -> {path}")
    return 0


def _eval_cache_key(cfg: RunConfig, checkpoint: Path, data_dir: Path) -> str:
    h = hashlib.sha256()
    h.update(cfg.config_hash().encode())
    h.update(checkpoint.read_bytes())
    h.update((data_dir / INDEX_NAME).read_bytes())
    return h.hexdigest()[:16]


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed)
    checkpoint = Path(args.checkpoint)
    data_dir = Path(args.data)
    cache_file = cache_root() / "eval" / f"{_eval_cache_key(cfg, checkpoint, data_dir)}.json"
    if cache_file.exists() and not args.no_cache:
        report = MetricReport.from_json_line(cache_file.read_text())
    else:
        model, _ = load_world_model(checkpoint)
        episodes = load_dataset(data_dir)[: cfg.eval["episodes"]]
        idm = load_idm(args.idm)[0] if args.idm else None
        report = evaluate_model(
            model, episodes, idm, cfg.eval["steps"], cfg.seed,
            config_hash=cfg.config_hash(), workers=args.workers,
        )
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        cache_file.write_text(report.to_json_line())
    report_path = Path(args.report) if args.report else Path(args.out or "report.jsonl")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json_line() + "\n")
    th = cfg.eval["thresholds"]
    ok = (
        report.action_discrete >= th["action_discrete_min"]
        and report.action_continuous >= th["action_continuous_min"]
        and report.psnr >= th["psnr_min"]
        and report.xview_disagreement <= th["xview_max"]
    )
    print(report.to_json_line())
    print(f"thresholds {'pass' if ok else 'FAIL'} (config {cfg.config_hash()})")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.seed)
    checkpoints = {}
    for spec in args.checkpoint:
        if "=" not in spec:
            raise ValueError(f"--checkpoint expects name=path, got {spec!r}")
        name, path = spec.split("=", 1)
        checkpoints[name] = Path(path)
    episodes = load_dataset(Path(args.data))[: cfg.eval["episodes"]]
    idm = load_idm(args.idm)[0] if args.idm else None
    rows = run_ablation(
        checkpoints, episodes, idm, cfg.eval["steps"], cfg.seed, workers=args.workers
    )
    out = Path(args.out or "ablation.csv")
    write_table(rows, out)
    for row in rows:
        print(row)
    print(f"ablation table -> {out} (config {cfg.config_hash()})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvworld",
        description="Multi-agent multi-view gridworld world model: data, training, "
        "sampling, rollout, evaluation and ablations.",
    )
    parser.add_argument("--config", type=str, default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=0, help="root seed (flags win over file)")
    parser.add_argument("--workers", type=int, default=1, help="max parallel view samplers")
    parser.add_argument("--out", type=str, default=None, help="output path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate episode files plus an index")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the world model")
    p.add_argument("--data", required=True)
    p.add_argument("--resume", type=str, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument(
        "--ablate",
        type=str,
        default=None,
        choices=[
            "standard", "macm", "both", "base20", "base10k",
            "gse-none", "gse-perview", "gse-ae", "gse-joint", "noaie",
        ],
        help="configuration preset override",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("idm-train", help="train the inverse dynamics scorer")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_idm_train)

    p = sub.add_parser("rollout", help="generate videos from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--chunks", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--plan", type=str, default="goal", choices=["goal", "random"])
    p.add_argument("--episode-seed", type=int, default=None)
    p.add_argument("--actions-from", type=str, default=None)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="score a checkpoint on a held-out episode set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--idm", type=str, default=None)
    p.add_argument("--report", type=str, default=None)
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare several checkpoints on one fixed set")
    p.add_argument("--checkpoint", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--data", required=True)
    p.add_argument("--idm", type=str, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out is None and args.command in ("gen-data",):
        print("--out is required for gen-data", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
