"""Analytic propagation oracle and synthetic scene generation.

The oracle evaluates path loss at arbitrary continuous points, independent of
any voxel grid: an empirical log-distance term plus a penetration penalty
proportional to the total length of the transmitter-to-receiver segment that
lies inside buildings. Buildings are axis-aligned boxes, so the obstructed
length has a closed form (slab clipping per box, then interval union), which
makes every generated map exactly reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, SceneError, ScenePlacementError, ValidationError
from .grids import EnvironmentTensor, GridSpec, RadioMapTensor, normalize_rm

_CHUNK_VOXELS = 65536


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min and max corners, meters."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        if len(lo) != 3 or len(hi) != 3:
            raise SceneError("box corners must be 3-vectors")
        if any(h <= l for l, h in zip(lo, hi)):
            raise SceneError(f"box has non-positive extent: {lo} .. {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(
            np.all(p >= np.asarray(self.min_corner)) and np.all(p <= np.asarray(self.max_corner))
        )


@dataclass(frozen=True)
class Scene:
    """A rectangular region with non-overlapping building boxes."""

    region: Box
    boxes: tuple[Box, ...]
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for b in self.boxes:
            if not (
                all(bl >= rl for bl, rl in zip(b.min_corner, self.region.min_corner))
                and all(bh <= rh for bh, rh in zip(b.max_corner, self.region.max_corner))
            ):
                raise SceneError(f"box {b} extends outside the region")

    def box_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Min and max corners stacked as (B, 3) float64 arrays."""
        if not self.boxes:
            return np.zeros((0, 3)), np.zeros((0, 3))
        lo = np.asarray([b.min_corner for b in self.boxes], dtype=np.float64)
        hi = np.asarray([b.max_corner for b in self.boxes], dtype=np.float64)
        return lo, hi


def scene_to_json(scene: Scene) -> str:
    payload = {
        "region": {"min": list(scene.region.min_corner), "max": list(scene.region.max_corner)},
        "boxes": [{"min": list(b.min_corner), "max": list(b.max_corner)} for b in scene.boxes],
        "seed": scene.seed,
    }
    return json.dumps(payload, sort_keys=True, indent=2)


def scene_from_json(text: str) -> Scene:
    try:
        payload = json.loads(text)
        region = Box(tuple(payload["region"]["min"]), tuple(payload["region"]["max"]))
        boxes = tuple(Box(tuple(b["min"]), tuple(b["max"])) for b in payload["boxes"])
        seed = payload.get("seed")
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"malformed scene JSON: {exc}") from exc
    return Scene(region, boxes, seed)


@dataclass(frozen=True)
class EmpiricalPathLossParams:
    """Log-distance path loss: l_fc + 10 * gamma_pl * log10(d) + kappa, dB.

    ``d_min`` guards the distance singularity; ``carrier_frequency_hz`` is
    bookkeeping metadata (the default l_fc of 43.3 dB is the free-space
    constant at 3.5 GHz).
    """

    l_fc: float = 43.3
    gamma_pl: float = 2.0
    kappa: float = 0.0
    d_min: float = 1.0
    carrier_frequency_hz: float = 3.5e9

    def __post_init__(self):
        if self.d_min <= 0:
            raise ConfigError(f"d_min must be positive, got {self.d_min}")


@dataclass(frozen=True)
class OraclePropagationParams:
    """Full oracle parameter set, including the clipping window in dB."""

    empirical: EmpiricalPathLossParams = field(default_factory=EmpiricalPathLossParams)
    beta: float = 1.5
    tx_power_dbm: float = 23.0
    loss_floor: float = 40.0
    loss_cap: float = 160.0

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if not self.loss_cap > self.loss_floor:
            raise ConfigError(
                f"loss window must satisfy cap > floor, got [{self.loss_floor}, {self.loss_cap}]"
            )


def empirical_path_loss(params: EmpiricalPathLossParams, distance) -> np.ndarray | float:
    """Distance-only path loss in dB; scalar in, scalar out."""
    d = np.asarray(distance, dtype=np.float64)
    if np.any(d < 0):
        raise ValidationError("distance must be non-negative")
    val = params.l_fc + 10.0 * params.gamma_pl * np.log10(np.maximum(d, params.d_min)) + params.kappa
    if np.isscalar(distance) or np.ndim(distance) == 0:
        return float(val)
    return val


def _obstruction_lengths(
    box_lo: np.ndarray, box_hi: np.ndarray, starts: np.ndarray, ends: np.ndarray
) -> np.ndarray:
    """Obstructed length per segment, vectorized over segments and boxes.

    starts/ends are (V, 3); returns (V,). Uses slab clipping per box and an
    exact interval union in the segment parameter, all in float64.
    """
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    vec = ends - starts
    seg_len = np.linalg.norm(vec, axis=1)
    if box_lo.shape[0] == 0:
        return np.zeros(starts.shape[0], dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(vec != 0.0, 1.0 / vec, np.inf)
        t0 = (box_lo[None, :, :] - starts[:, None, :]) * inv[:, None, :]
        t1 = (box_hi[None, :, :] - starts[:, None, :]) * inv[:, None, :]
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # Axes with zero direction never cross the slab: the interval is the whole
    # line when the start lies inside that slab, empty otherwise.
    zero = (vec == 0.0)[:, None, :]
    in_slab = (starts[:, None, :] >= box_lo[None, :, :]) & (starts[:, None, :] <= box_hi[None, :, :])
    lo = np.where(zero, np.where(in_slab, -np.inf, np.inf), lo)
    hi = np.where(zero, np.where(in_slab, np.inf, -np.inf), hi)

    enter = np.clip(lo.max(axis=2), 0.0, 1.0)
    exit_ = np.clip(hi.min(axis=2), 0.0, 1.0)
    exit_ = np.maximum(exit_, enter)

    # Union of per-box [enter, exit] intervals along each segment.
    order = np.argsort(enter, axis=1, kind="stable")
    enter_s = np.take_along_axis(enter, order, axis=1)
    exit_s = np.take_along_axis(exit_, order, axis=1)
    running = np.maximum.accumulate(exit_s, axis=1)
    prev_end = np.concatenate(
        [np.zeros((starts.shape[0], 1)), running[:, :-1]], axis=1
    )
    contrib = np.clip(exit_s - np.maximum(enter_s, prev_end), 0.0, None)
    return contrib.sum(axis=1) * seg_len


def segment_obstruction_length(scene: Scene, a, b) -> float:
    """Total length of segment a..b inside the scene's boxes, meters."""
    a = np.asarray(a, dtype=np.float64).reshape(1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(1, 3)
    lo, hi = scene.box_arrays()
    return float(_obstruction_lengths(lo, hi, a, b)[0])


def _path_loss_points(
    scene: Scene, params: OraclePropagationParams, tx_location, points: np.ndarray
) -> np.ndarray:
    """Clipped path loss at each point, float64, shared by all entry paths."""
    q = np.asarray(tx_location, dtype=np.float64).reshape(3)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = scene.box_arrays()
    out = np.empty(pts.shape[0], dtype=np.float64)
    for s in range(0, pts.shape[0], _CHUNK_VOXELS):
        chunk = pts[s : s + _CHUNK_VOXELS]
        starts = np.broadcast_to(q, chunk.shape)
        dist = np.linalg.norm(chunk - q, axis=1)
        loss = (
            params.empirical.l_fc
            + 10.0 * params.empirical.gamma_pl
            * np.log10(np.maximum(dist, params.empirical.d_min))
            + params.empirical.kappa
            + params.beta * _obstruction_lengths(lo, hi, starts, chunk)
        )
        out[s : s + _CHUNK_VOXELS] = np.clip(loss, params.loss_floor, params.loss_cap)
    return out


def path_loss_at(scene: Scene, params: OraclePropagationParams, tx_location, point):
    """Oracle path loss in dB at a continuous point, or an (N, 3) batch."""
    pt = np.asarray(point, dtype=np.float64)
    if pt.shape == (3,):
        return float(_path_loss_points(scene, params, tx_location, pt.reshape(1, 3))[0])
    if pt.ndim == 2 and pt.shape[1] == 3:
        return _path_loss_points(scene, params, tx_location, pt)
    raise SceneError(f"point must be a 3-vector or an (N, 3) array, got shape {pt.shape}")


def generate_radio_map(
    scene: Scene,
    params: OraclePropagationParams,
    tx_location,
    grid: GridSpec,
    normalized: bool = True,
) -> RadioMapTensor:
    """Evaluate the oracle at every voxel centroid of ``grid``.

    The per-voxel value depends only on the centroid position, so maps of the
    same scene at different resolutions agree bit-for-bit wherever centroids
    coincide. With ``normalized`` the loss window of ``params`` maps the
    values onto [0, 1]; otherwise raw dB values are returned (float32 either
    way).
    """
    pts = grid.centroids().reshape(-1, 3)
    loss = _path_loss_points(scene, params, tx_location, pts)
    raw = RadioMapTensor(grid, loss.reshape(grid.dims).astype(np.float32), normalized=False)
    if not normalized:
        return raw
    return normalize_rm(raw, params.loss_floor, params.loss_cap)


def rasterize_occupancy(scene: Scene, grid: GridSpec) -> EnvironmentTensor:
    """Binary occupancy on ``grid``: 1 where the voxel centroid lies in a box."""
    pts = grid.centroids().reshape(-1, 3)
    lo, hi = scene.box_arrays()
    occ = np.zeros(pts.shape[0], dtype=bool)
    for b in range(lo.shape[0]):
        occ |= ((pts >= lo[b]) & (pts <= hi[b])).all(axis=1)
    return EnvironmentTensor(grid, occ.reshape(grid.dims).astype(np.uint8))


@dataclass(frozen=True)
class SceneGenConfig:
    """Random box-city generator settings."""

    region_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    region_side: tuple[float, float, float] = (32.0, 32.0, 32.0)
    box_count_range: tuple[int, int] = (4, 8)
    footprint_range: tuple[float, float] = (4.0, 10.0)
    height_range: tuple[float, float] = (10.0, 25.0)
    max_attempts: int = 200

    def __post_init__(self):
        if self.box_count_range[0] < 0 or self.box_count_range[1] < self.box_count_range[0]:
            raise ConfigError(f"bad box_count_range {self.box_count_range}")
        if self.footprint_range[0] <= 0 or self.footprint_range[1] < self.footprint_range[0]:
            raise ConfigError(f"bad footprint_range {self.footprint_range}")
        if self.height_range[0] <= 0 or self.height_range[1] < self.height_range[0]:
            raise ConfigError(f"bad height_range {self.height_range}")
        if self.footprint_range[1] > min(self.region_side[0], self.region_side[1]):
            raise ConfigError("footprints cannot exceed the region side")
        if self.height_range[1] > self.region_side[2]:
            raise ConfigError("building heights cannot exceed the region height")


def _footprints_overlap(a_lo, a_hi, b_lo, b_hi) -> bool:
    """True when the XY rectangles share interior area (touching is fine)."""
    return (
        a_lo[0] < b_hi[0]
        and b_lo[0] < a_hi[0]
        and a_lo[1] < b_hi[1]
        and b_lo[1] < a_hi[1]
    )


def generate_scene(config: SceneGenConfig, seed: int) -> Scene:
    """Sample a scene of grounded boxes with non-overlapping footprints.

    Deterministic for a given (config, seed). Raises ScenePlacementError when
    a box cannot be placed within ``config.max_attempts`` rejections.
    """
    rng = np.random.default_rng(seed)
    ox, oy, oz = config.region_origin
    sx, sy, sz = config.region_side
    region = Box((ox, oy, oz), (ox + sx, oy + sy, oz + sz))
    n_boxes = int(rng.integers(config.box_count_range[0], config.box_count_range[1] + 1))
    placed: list[tuple[tuple[float, float], tuple[float, float]]] = []
    boxes = []
    for b in range(n_boxes):
        for _ in range(config.max_attempts):
            w = float(rng.uniform(*config.footprint_range))
            d = float(rng.uniform(*config.footprint_range))
            x0 = ox + float(rng.uniform(0.0, sx - w))
            y0 = oy + float(rng.uniform(0.0, sy - d))
            h = float(rng.uniform(*config.height_range))
            lo2, hi2 = (x0, y0), (x0 + w, y0 + d)
            if any(_footprints_overlap(lo2, hi2, plo, phi) for plo, phi in placed):
                continue
            placed.append((lo2, hi2))
            boxes.append(Box((x0, y0, oz), (x0 + w, y0 + d, oz + h)))
            break
        else:
            raise ScenePlacementError(
                f"could not place box {b + 1}/{n_boxes} after {config.max_attempts} attempts"
            )
    return Scene(region, tuple(boxes), seed)
