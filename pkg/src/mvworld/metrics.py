"""Metric suite: pixel fidelity (PSNR/SSIM), action-following (learned IDM
and analytic oracle), and cross-view geometric disagreement.

The cross-view metric decodes every generated view back to world cells and
measures how far apart the views place the same agent; on exact renders it is
exactly zero. Frames/agents that cannot be measured (detected in fewer than
two views) are excluded from the mean and reported separately as a failure
rate so exclusions can never silently improve the score.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from .dataset.actions import ActionTensor
from .idm import DIRECTION_INDEX, IdmModel, predict_transitions
from .worldsim import WorldConfig, action_from_displacement, view_decode

PSNR_CAP_DB = 99.0
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio over 8-bit sequences, capped at 99 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(255.0**2 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_single_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> float:
    size = kernel.shape[0]
    win_x = np.lib.stride_tricks.sliding_window_view(x, (size, size))
    win_y = np.lib.stride_tricks.sliding_window_view(y, (size, size))
    mu_x = np.tensordot(win_x, kernel, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(win_y, kernel, axes=([2, 3], [0, 1]))
    xx = np.tensordot(win_x * win_x, kernel, axes=([2, 3], [0, 1]))
    yy = np.tensordot(win_y * win_y, kernel, axes=([2, 3], [0, 1]))
    xy = np.tensordot(win_x * win_y, kernel, axes=([2, 3], [0, 1]))
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity: 11x11 Gaussian window (sigma 1.5), valid
    windows only, averaged over channels and frames."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    kernel = _gaussian_kernel()
    scores = [
        _ssim_single_channel(
            a[f, :, :, c].astype(np.float64), b[f, :, :, c].astype(np.float64), kernel
        )
        for f in range(a.shape[0])
        for c in range(a.shape[3])
    ]
    return float(np.mean(scores))


def continuous_action_score(mse: float) -> float:
    """100 * (1 - MSE), with the MSE clamped into [0, 1]."""
    return 100.0 * (1.0 - min(max(mse, 0.0), 1.0))


def action_following_score(
    videos: np.ndarray, gt_actions: ActionTensor, idm: IdmModel
) -> tuple[float, float]:
    """Score generated videos with the learned inverse dynamics model.

    videos: (V, I, H, W, 3) uint8, all synchronized views of one episode.
    Returns (discrete, continuous): 100 * direction accuracy against the
    conditioning actions, and the normalized intensity score.
    """
    num_frames = videos.shape[1]
    if gt_actions.num_frames < num_frames - 1:
        raise ValueError(
            f"need actions for {num_frames - 1} transitions, have {gt_actions.num_frames}"
        )
    pred_dirs, pred_intens = predict_transitions(idm, videos)
    correct = 0
    total = 0
    sq_err = 0.0
    for t in range(num_frames - 1):
        world = gt_actions.world_actions(t)
        for k, action in enumerate(world):
            total += 1
            correct += int(pred_dirs[t, k] == DIRECTION_INDEX[action.direction])
            sq_err += float(pred_intens[t, k] - action.intensity) ** 2
    return 100.0 * correct / total, continuous_action_score(sq_err / total)


def decode_agent_positions(
    config: WorldConfig, videos: np.ndarray
) -> list[list[dict[int, tuple[int, int]]]]:
    """Per frame, per view: decoded {agent: world cell} maps."""
    out = []
    for i in range(videos.shape[1]):
        per_view = []
        for c, cam in enumerate(config.cameras):
            dets = view_decode(config, videos[c, i], cam)
            per_view.append(
                {d.entity: d.cell for d in dets if d.entity < config.num_agents}
            )
        out.append(per_view)
    return out


def oracle_action_following(
    config: WorldConfig, videos: np.ndarray, gt_actions: ActionTensor
) -> tuple[float, float, float]:
    """Score action-following by decoding agent world positions analytically.

    An agent's position per frame comes from the first view that detects it.
    Transitions with an undetected endpoint, or a decoded displacement that no
    single action explains, count as wrong (direction incorrect, intensity
    error 1); the fraction of undetected cases is returned as failure_rate.
    """
    num_frames = videos.shape[1]
    positions = decode_agent_positions(config, videos)

    def locate(frame: int, agent: int):
        for view_map in positions[frame]:
            if agent in view_map:
                return view_map[agent]
        return None

    correct = 0
    sq_err = 0.0
    failures = 0
    total = 0
    for t in range(num_frames - 1):
        world = gt_actions.world_actions(t)
        for k, action in enumerate(world):
            total += 1
            p0 = locate(t, k)
            p1 = locate(t + 1, k)
            if p0 is None or p1 is None:
                failures += 1
                sq_err += 1.0
                continue
            try:
                inferred = action_from_displacement((p1[0] - p0[0], p1[1] - p0[1]))
            except ValueError:
                sq_err += 1.0
                continue
            correct += int(inferred.direction == action.direction)
            sq_err += min(float(inferred.intensity - action.intensity) ** 2, 1.0)
    discrete = 100.0 * correct / total
    return discrete, continuous_action_score(sq_err / total), failures / total


def mean_pairwise_distance(cells: list[tuple[int, int]]) -> float:
    """Mean Euclidean distance over all unordered pairs of world cells."""
    dists = [
        math.dist(a, b) for a, b in combinations(cells, 2)
    ]
    return float(np.mean(dists))


def cross_view_disagreement(
    config: WorldConfig, videos: np.ndarray
) -> tuple[float, float]:
    """Multi-view geometric consistency of generated videos, in cell units.

    For every (frame, agent) decoded in at least two views, accumulate the
    mean pairwise distance of the decoded world cells. Pairs measurable in
    fewer than two views are excluded and counted in failure_rate.
    """
    positions = decode_agent_positions(config, videos)
    scores = []
    failures = 0
    total = 0
    for per_view in positions:
        for k in range(config.num_agents):
            total += 1
            cells = [view_map[k] for view_map in per_view if k in view_map]
            if len(cells) >= 2:
                scores.append(mean_pairwise_distance(cells))
            else:
                failures += 1
    score = float(np.mean(scores)) if scores else 0.0
    return score, failures / max(total, 1)


@dataclass
class MetricReport:
    """Aggregate scores for one model configuration on one episode set."""

    action_discrete: float
    action_continuous: float
    psnr: float
    ssim: float
    xview_disagreement: float
    detection_failure_rate: float
    config_hash: str = ""
    episode_count: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("action_discrete", "action_continuous", "psnr", "ssim",
                     "xview_disagreement", "detection_failure_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("action_discrete", "action_continuous"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise ValueError(f"{name} must lie in [0, 100]")

    def to_json_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "MetricReport":
        return cls(**json.loads(line))
