"""Exact multi-agent gridworld with per-camera rendering and analytic oracles.

The world is a square grid of cells. K agents and a fixed set of landmarks
occupy distinct cells. Each frame, every agent submits a direction plus an
intensity in [0, 1]; the agent moves round(2 * intensity) cells (round half
up), clamped at the grid boundary. Conflicts (two agents targeting one cell,
or a landmark cell) are resolved deterministically: the lower agent index
wins the move, everyone else stays put.

Cameras are axis-aligned cell crops followed by a right-angle rotation
(counterclockwise, in multiples of 90 degrees). Rendering paints each entity
as a filled square of `cell_pixels` pixels in its palette color on a black
background, which keeps the view-to-world decoding analytic: `view_decode`
recovers entity world-cells exactly from clean renders.

Everything here is a pure function of its inputs; all randomness is confined
to `init_world`'s seeded placement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

Cell = tuple[int, int]

# Default entity colors: bright, pairwise channel-distance >= 32, and far
# from the black background so decoding confidence saturates on clean renders.
DEFAULT_PALETTE: tuple[tuple[int, int, int], ...] = (
    (255, 64, 64),
    (64, 160, 255),
    (64, 255, 96),
    (255, 224, 64),
    (224, 64, 255),
    (64, 255, 255),
    (255, 128, 0),
    (160, 64, 64),
    (128, 255, 160),
    (192, 160, 255),
    (255, 160, 160),
    (96, 96, 255),
)

# Fraction of block pixels that must match the palette color for a detection.
DETECTION_CONFIDENCE_THRESHOLD = 0.5
# Per-channel tolerance when matching rendered pixels against palette colors.
DETECTION_COLOR_TOLERANCE = 24


class Direction(Enum):
    STAY = "stay"
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"

    @property
    def vector(self) -> Cell:
        return _DIR_VECTORS[self]


_DIR_VECTORS: dict[Direction, Cell] = {
    Direction.STAY: (0, 0),
    Direction.UP: (0, -1),
    Direction.DOWN: (0, 1),
    Direction.LEFT: (-1, 0),
    Direction.RIGHT: (1, 0),
}

# Fixed direction order used by one-hot encodings and enumeration.
DIRECTION_ORDER: tuple[Direction, ...] = (
    Direction.STAY,
    Direction.UP,
    Direction.DOWN,
    Direction.LEFT,
    Direction.RIGHT,
)


def displacement_cells(intensity: float) -> int:
    """Quantized move distance: round(2 * intensity), round half up."""
    return int(math.floor(2.0 * intensity + 0.5))


@dataclass(frozen=True)
class AgentAction:
    """One agent's action for one frame transition."""

    direction: Direction
    intensity: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")

    @property
    def magnitude(self) -> int:
        if self.direction is Direction.STAY:
            return 0
        return displacement_cells(self.intensity)


STAY_ACTION = AgentAction(Direction.STAY, 0.0)


@dataclass(frozen=True)
class CameraSpec:
    """Axis-aligned cell crop plus a counterclockwise right-angle rotation."""

    crop_origin: Cell
    crop_size: Cell  # (width, height) in cells
    rotation: int = 0

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise ValueError(f"rotation must be one of 0/90/180/270, got {self.rotation}")
        if self.crop_size[0] < 1 or self.crop_size[1] < 1:
            raise ValueError("crop_size must be at least 1x1")

    def fits(self, grid_size: int) -> bool:
        x0, y0 = self.crop_origin
        w, h = self.crop_size
        return 0 <= x0 and 0 <= y0 and x0 + w <= grid_size and y0 + h <= grid_size

    def image_shape(self, cell_pixels: int) -> tuple[int, int]:
        """Pixel (height, width) of the rendered view, rotation included."""
        w, h = self.crop_size
        if self.rotation in (90, 270):
            return (w * cell_pixels, h * cell_pixels)
        return (h * cell_pixels, w * cell_pixels)

    def contains_cell(self, cell: Cell) -> bool:
        x0, y0 = self.crop_origin
        w, h = self.crop_size
        return x0 <= cell[0] < x0 + w and y0 <= cell[1] < y0 + h


def full_grid_camera(grid_size: int, rotation: int = 0) -> CameraSpec:
    return CameraSpec(crop_origin=(0, 0), crop_size=(grid_size, grid_size), rotation=rotation)


def default_palette(num_entities: int) -> tuple[tuple[int, int, int], ...]:
    if num_entities > len(DEFAULT_PALETTE):
        raise ValueError(f"default palette supports up to {len(DEFAULT_PALETTE)} entities")
    return DEFAULT_PALETTE[:num_entities]


@dataclass(frozen=True)
class WorldConfig:
    """Static world description: grid geometry, entity counts, cameras, colors."""

    grid_size: int = 12
    num_agents: int = 2
    num_landmarks: int = 3
    cameras: tuple[CameraSpec, ...] = field(default_factory=tuple)
    cell_pixels: int = 4
    palette: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        if not 1 <= self.num_agents <= 6:
            raise ValueError(f"num_agents must lie in 1..6, got {self.num_agents}")
        if self.num_landmarks < 0:
            raise ValueError("num_landmarks must be >= 0")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.cell_pixels < 1:
            raise ValueError("cell_pixels must be >= 1")
        if not self.cameras:
            object.__setattr__(self, "cameras", (full_grid_camera(self.grid_size),))
        else:
            object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.palette:
            object.__setattr__(self, "palette", default_palette(self.num_entities))
        else:
            object.__setattr__(self, "palette", tuple(tuple(c) for c in self.palette))
        self._validate()

    def _validate(self):
        if len(self.palette) != self.num_entities:
            raise ValueError(
                f"palette must have {self.num_entities} colors, got {len(self.palette)}"
            )
        for color in self.palette:
            if len(color) != 3 or not all(0 <= v <= 255 for v in color):
                raise ValueError(f"invalid RGB triple {color}")
        for i in range(len(self.palette)):
            for j in range(i + 1, len(self.palette)):
                dist = max(abs(a - b) for a, b in zip(self.palette[i], self.palette[j]))
                if dist < 32:
                    raise ValueError(
                        f"palette colors {i} and {j} too close (channel distance {dist} < 32)"
                    )
        for cam in self.cameras:
            if not cam.fits(self.grid_size):
                raise ValueError(f"camera {cam} does not fit inside grid of size {self.grid_size}")

    @property
    def num_entities(self) -> int:
        return self.num_agents + self.num_landmarks

    @property
    def num_views(self) -> int:
        return len(self.cameras)


@dataclass(frozen=True)
class WorldState:
    """Entity positions at one tick. Positions are (x, y) cells, y grows downward."""

    agent_positions: tuple[Cell, ...]
    landmark_positions: tuple[Cell, ...]
    tick: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agent_positions", tuple(tuple(p) for p in self.agent_positions))
        object.__setattr__(
            self, "landmark_positions", tuple(tuple(p) for p in self.landmark_positions)
        )
        occupied = list(self.agent_positions) + list(self.landmark_positions)
        if len(set(occupied)) != len(occupied):
            raise ValueError("entities must occupy distinct cells")

    def entity_positions(self) -> tuple[Cell, ...]:
        """Agents first, then landmarks; index order matches the palette."""
        return self.agent_positions + self.landmark_positions


class PlacementError(ValueError):
    """Grid too small to place all entities without overlap."""


def init_world(config: WorldConfig, seed: int) -> WorldState:
    """Place agents and landmarks on distinct cells, deterministically from seed."""
    n_cells = config.grid_size * config.grid_size
    if config.num_entities > n_cells:
        raise PlacementError(
            f"cannot place {config.num_entities} entities on {n_cells} cells"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    flat = rng.choice(n_cells, size=config.num_entities, replace=False)
    cells = [(int(f % config.grid_size), int(f // config.grid_size)) for f in flat]
    return WorldState(
        agent_positions=tuple(cells[: config.num_agents]),
        landmark_positions=tuple(cells[config.num_agents :]),
        tick=0,
    )


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, v))


def _proposed_target(config: WorldConfig, pos: Cell, action: AgentAction) -> Cell:
    dx, dy = action.direction.vector
    mag = action.magnitude
    hi = config.grid_size - 1
    return (_clamp(pos[0] + dx * mag, 0, hi), _clamp(pos[1] + dy * mag, 0, hi))


def step(config: WorldConfig, state: WorldState, joint: Sequence[AgentAction]) -> WorldState:
    """Advance the world by one tick under the joint action of all agents.

    Agents are resolved in increasing index order. Agent i may claim its
    (clamped) target cell unless the cell holds a landmark, was already
    claimed by a lower-index agent, or is the current cell of a higher-index
    agent; a blocked agent stays where it is. The rule is deterministic and
    independent of any internal iteration order.
    """
    if len(joint) != config.num_agents:
        raise ValueError(f"expected {config.num_agents} actions, got {len(joint)}")
    landmarks = set(state.landmark_positions)
    new_positions: list[Cell] = []
    for i, action in enumerate(joint):
        pos = state.agent_positions[i]
        target = _proposed_target(config, pos, action)
        blocked = (
            target in landmarks
            or any(target == p for p in new_positions)
            or any(target == state.agent_positions[j] for j in range(i + 1, config.num_agents))
        )
        new_positions.append(pos if blocked else target)
    return WorldState(
        agent_positions=tuple(new_positions),
        landmark_positions=state.landmark_positions,
        tick=state.tick + 1,
    )


def render_grid(config: WorldConfig, state: WorldState) -> np.ndarray:
    """Full-grid RGB render: black background, one solid block per entity."""
    cp = config.cell_pixels
    size = config.grid_size * cp
    img = np.zeros((size, size, 3), dtype=np.uint8)
    for idx, (x, y) in enumerate(state.entity_positions()):
        img[y * cp : (y + 1) * cp, x * cp : (x + 1) * cp] = config.palette[idx]
    return img


def render(config: WorldConfig, state: WorldState, cam: CameraSpec) -> np.ndarray:
    """Render one camera view: crop the grid image, then rotate counterclockwise."""
    if not cam.fits(config.grid_size):
        raise ValueError("camera does not fit inside the grid")
    cp = config.cell_pixels
    x0, y0 = cam.crop_origin
    w, h = cam.crop_size
    full = render_grid(config, state)
    crop = full[y0 * cp : (y0 + h) * cp, x0 * cp : (x0 + w) * cp]
    k = cam.rotation // 90
    return np.ascontiguousarray(np.rot90(crop, k))


@dataclass(frozen=True)
class InferredAction:
    """Oracle inverse-dynamics output for one agent.

    `ambiguous` is set when some other action (via clamping or a conflict)
    would have produced the same observed displacement, so the minimal action
    returned here is consistent but not uniquely determined.
    """

    action: AgentAction
    ambiguous: bool


def action_from_displacement(delta: Cell) -> AgentAction:
    """Minimal action producing the given one-step displacement."""
    dx, dy = delta
    if (dx, dy) == (0, 0):
        return STAY_ACTION
    if dx != 0 and dy != 0:
        raise ValueError(f"displacement {delta} is not axis-aligned")
    mag = abs(dx) + abs(dy)
    if mag > 2:
        raise ValueError(f"displacement {delta} exceeds the 2-cell maximum")
    if dx > 0:
        d = Direction.RIGHT
    elif dx < 0:
        d = Direction.LEFT
    elif dy > 0:
        d = Direction.DOWN
    else:
        d = Direction.UP
    return AgentAction(d, mag / 2.0)


def _candidate_actions() -> list[AgentAction]:
    out = [STAY_ACTION]
    for d in DIRECTION_ORDER[1:]:
        out.append(AgentAction(d, 0.5))
        out.append(AgentAction(d, 1.0))
    return out


def oracle_idm(
    config: WorldConfig, state_t: WorldState, state_t1: WorldState
) -> list[InferredAction]:
    """Recover the minimal joint action mapping state_t to state_t1.

    For each agent, returns the unique unclamped action reproducing its
    displacement. The ambiguity flag marks agents whose observed displacement
    is also reachable by a different action through boundary clamping or a
    conflict, replaying the same deterministic resolution rule as `step`.
    """
    if state_t1.tick != state_t.tick + 1:
        raise ValueError("states must be consecutive ticks")
    if state_t.landmark_positions != state_t1.landmark_positions:
        raise ValueError("landmarks moved between states")
    landmarks = set(state_t.landmark_positions)
    results: list[InferredAction] = []
    for i in range(config.num_agents):
        pos = state_t.agent_positions[i]
        observed = state_t1.agent_positions[i]
        delta = (observed[0] - pos[0], observed[1] - pos[1])
        minimal = action_from_displacement(delta)
        occupied = (
            landmarks
            | {state_t1.agent_positions[j] for j in range(i)}
            | {state_t.agent_positions[j] for j in range(i + 1, config.num_agents)}
        )
        matching = 0
        for cand in _candidate_actions():
            target = _proposed_target(config, pos, cand)
            resolved = pos if target in occupied else target
            if resolved == observed:
                matching += 1
        if matching == 0:
            raise ValueError(f"transition for agent {i} is not reachable by any single action")
        results.append(InferredAction(action=minimal, ambiguous=matching > 1))
    return results


@dataclass(frozen=True)
class Detection:
    """One decoded entity: world cell plus matching confidence in [0, 1]."""

    entity: int
    cell: Cell
    confidence: float


def view_decode(config: WorldConfig, img: np.ndarray, cam: CameraSpec) -> list[Detection]:
    """Locate entities in a rendered view and map them back to world cells.

    Per entity, each crop cell's confidence is the fraction of its pixel
    block lying within the per-channel color tolerance of the entity's
    palette color; the best cell wins and entities below the 0.5 confidence
    threshold are reported absent. Clean renders decode exactly.
    """
    cp = config.cell_pixels
    w, h = cam.crop_size
    if img.shape != (*cam.image_shape(cp), 3):
        raise ValueError(f"image shape {img.shape} does not match camera {cam}")
    k = cam.rotation // 90
    upright = np.rot90(img, -k)  # undo the render rotation
    # (h, w, cp*cp, 3): pixel blocks grouped per crop cell
    blocks = (
        upright.reshape(h, cp, w, cp, 3).transpose(0, 2, 1, 3, 4).reshape(h, w, cp * cp, 3)
    )
    blocks_i = blocks.astype(np.int16)
    x0, y0 = cam.crop_origin
    detections: list[Detection] = []
    for entity in range(config.num_entities):
        color = np.array(config.palette[entity], dtype=np.int16)
        within = (np.abs(blocks_i - color) <= DETECTION_COLOR_TOLERANCE).all(axis=-1)
        conf = within.mean(axis=-1)  # (h, w)
        flat_best = int(np.argmax(conf))
        cy, cx = divmod(flat_best, w)
        best = float(conf[cy, cx])
        if best >= DETECTION_CONFIDENCE_THRESHOLD:
            detections.append(
                Detection(entity=entity, cell=(x0 + cx, y0 + cy), confidence=best)
            )
    return detections
