"""Ablation harness: evaluate trained configuration variants on one fixed
held-out episode set and emit a comparison table.

Every configuration sees identical episodes, identical conditioning actions
and identical per-view noise seeds, so row differences reflect the
configuration alone. The CSV column order is fixed; the FVD column exists
only as a placeholder (perceptual-network metrics are out of scope) so rows
line up with the reference table structure.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset.episodes import Episode
from .engine.checkpoint import load_world_model
from .engine.sampling import generate_views_parallel
from .idm import IdmModel
from .metrics import (
    MetricReport,
    action_following_score,
    cross_view_disagreement,
    oracle_action_following,
    psnr,
    ssim,
)
from .model import WorldModel
from .seeding import derive

CSV_COLUMNS = (
    "config",
    "fvd_placeholder",
    "psnr",
    "ssim",
    "action_discrete",
    "action_continuous",
    "xview",
    "failure_rate",
)


def generate_for_episode(
    model: WorldModel, ep: Episode, steps: int, seed: int, ep_index: int, workers: int = 1
) -> np.ndarray:
    """Generate the first context chunk of every view, conditioned like training."""
    f = model.cfg.context_frames
    actions = ep.actions.frame_slice(0, f)
    obs = np.stack([ep.frames[c][0] for c in range(ep.num_views)])
    seeds = [derive(seed, "eval-noise", ep_index, c) for c in range(ep.num_views)]
    return generate_views_parallel(model, actions, obs, steps, seeds, workers=workers)


def evaluate_model(
    model: WorldModel,
    episodes: list[Episode],
    idm: IdmModel | None,
    steps: int,
    seed: int,
    config_hash: str = "",
    workers: int = 1,
) -> MetricReport:
    """Mean metrics over the held-out set.

    PSNR/SSIM compare generated frames 1..F-1 against ground truth (frame 0
    is the pinned conditioning frame in both, so it is skipped). Action
    scores use the learned IDM when given, otherwise the analytic oracle.
    """
    f = model.cfg.context_frames
    psnrs, ssims, discs, conts, xviews, fails = [], [], [], [], [], []
    for i, ep in enumerate(episodes):
        gen = generate_for_episode(model, ep, steps, seed, i, workers=workers)
        gt = np.stack([ep.frames[c][:f] for c in range(ep.num_views)])
        psnrs.append(np.mean([psnr(gen[c, 1:], gt[c, 1:]) for c in range(gen.shape[0])]))
        ssims.append(np.mean([ssim(gen[c, 1:], gt[c, 1:]) for c in range(gen.shape[0])]))
        if idm is not None:
            d, c_score = action_following_score(gen, ep.actions.frame_slice(0, f), idm)
        else:
            d, c_score, _ = oracle_action_following(
                ep.world_config, gen, ep.actions.frame_slice(0, f)
            )
        discs.append(d)
        conts.append(c_score)
        xv, fr = cross_view_disagreement(ep.world_config, gen)
        xviews.append(xv)
        fails.append(fr)
    return MetricReport(
        action_discrete=float(np.mean(discs)),
        action_continuous=float(np.mean(conts)),
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        xview_disagreement=float(np.mean(xviews)),
        detection_failure_rate=float(np.mean(fails)),
        config_hash=config_hash,
        episode_count=len(episodes),
    )


def report_row(name: str, report: MetricReport) -> dict:
    return {
        "config": name,
        "fvd_placeholder": "",
        "psnr": f"{report.psnr:.4f}",
        "ssim": f"{report.ssim:.4f}",
        "action_discrete": f"{report.action_discrete:.4f}",
        "action_continuous": f"{report.action_continuous:.4f}",
        "xview": f"{report.xview_disagreement:.4f}",
        "failure_rate": f"{report.detection_failure_rate:.4f}",
    }


def run_ablation(
    checkpoints: dict[str, Path],
    episodes: list[Episode],
    idm: IdmModel | None,
    steps: int,
    seed: int,
    table_path=None,
    workers: int = 1,
) -> list[dict]:
    """Evaluate each named checkpoint on the fixed set; optionally write CSV."""
    rows = []
    for name, path in checkpoints.items():
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint for config {name!r} missing: {path}")
        model, ckpt = load_world_model(path)
        report = evaluate_model(
            model, episodes, idm, steps, seed,
            config_hash=ckpt.meta.get("config_hash", ""), workers=workers,
        )
        rows.append(report_row(name, report))
    if table_path is not None:
        write_table(rows, table_path)
    return rows


def write_table(rows: list[dict], table_path) -> Path:
    table_path = Path(table_path)
    table_path.parent.mkdir(parents=True, exist_ok=True)
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return table_path
