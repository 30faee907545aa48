"""Voxel grid geometry and the typed tensors that live on it.

Grids are axis-aligned boxes partitioned into cubic voxels of side
``resolution``. Indexing is row-major with the first axis outermost, so a
flattened grid iterates k fastest. The centroid of voxel (i, j, k) sits at
``origin + (index + 0.5) * resolution`` per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, ResolutionError, ValidationError

_REL_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a voxel grid.

    ``side_lengths`` must equal ``dims * resolution`` per axis (within float
    tolerance); use :meth:`create` to derive it.
    """

    origin: tuple[float, float, float]
    side_lengths: tuple[float, float, float]
    resolution: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.side_lengths) != 3 or len(self.dims) != 3:
            raise GridError("origin, side_lengths and dims must be 3-vectors")
        if not (self.resolution > 0):
            raise GridError(f"resolution must be positive, got {self.resolution}")
        if any(d < 1 for d in self.dims):
            raise GridError(f"dims must be >= 1 per axis, got {self.dims}")
        for side, n in zip(self.side_lengths, self.dims):
            expect = n * self.resolution
            if abs(side - expect) > _REL_TOL * max(abs(side), expect):
                raise GridError(
                    f"side_lengths {self.side_lengths} inconsistent with "
                    f"dims {self.dims} at resolution {self.resolution}"
                )
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "side_lengths", tuple(float(v) for v in self.side_lengths))
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))

    @classmethod
    def create(cls, origin, resolution: float, dims) -> "GridSpec":
        """Build a spec from origin, resolution and voxel counts."""
        dims = tuple(int(d) for d in dims)
        side = tuple(d * float(resolution) for d in dims)
        return cls(tuple(float(v) for v in origin), side, float(resolution), dims)

    @property
    def n_voxels(self) -> int:
        i, j, k = self.dims
        return i * j * k

    def centroid(self, index) -> np.ndarray:
        """Centroid of one voxel, as a float64 3-vector in meters."""
        idx = np.asarray(index, dtype=np.float64)
        if idx.shape != (3,):
            raise GridError(f"voxel index must be a 3-vector, got shape {idx.shape}")
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            raise GridError(f"voxel index {index} outside dims {self.dims}")
        return np.asarray(self.origin) + (idx + 0.5) * self.resolution

    def centroids(self) -> np.ndarray:
        """All voxel centroids as an (I, J, K, 3) float64 array."""
        axes = [
            self.origin[a] + (np.arange(self.dims[a], dtype=np.float64) + 0.5) * self.resolution
            for a in range(3)
        ]
        gi, gj, gk = np.meshgrid(*axes, indexing="ij")
        return np.stack([gi, gj, gk], axis=-1)

    def contains_point(self, point) -> bool:
        """True when point falls in the half-open box [origin, origin + side)."""
        p = np.asarray(point, dtype=np.float64)
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.side_lengths)
        return bool(np.all(p >= lo) and np.all(p < hi))

    def voxel_of(self, point) -> tuple[int, int, int]:
        """Index of the voxel containing a point (half-open voxel boxes)."""
        p = np.asarray(point, dtype=np.float64)
        if p.shape != (3,):
            raise GridError(f"point must be a 3-vector, got shape {p.shape}")
        if not self.contains_point(p):
            raise GridError(f"point {p.tolist()} outside grid region")
        idx = np.floor((p - np.asarray(self.origin)) / self.resolution).astype(np.int64)
        # Guard against float round-down at the upper edge of the last voxel.
        idx = np.minimum(idx, np.asarray(self.dims) - 1)
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    def coarsen(self, coarse_resolution: float) -> "GridSpec":
        """Spec of the same region at a coarser, evenly dividing resolution."""
        factor = _nesting_factor(self.resolution, coarse_resolution)
        if any(d % factor != 0 for d in self.dims):
            raise ResolutionError(
                f"dims {self.dims} not divisible by coarsening factor {factor}"
            )
        return GridSpec(
            self.origin,
            self.side_lengths,
            float(coarse_resolution),
            tuple(d // factor for d in self.dims),
        )


def _nesting_factor(fine_resolution: float, coarse_resolution: float) -> int:
    """Integer ratio coarse/fine, or raise ResolutionError."""
    if coarse_resolution <= fine_resolution:
        raise ResolutionError(
            f"coarse resolution {coarse_resolution} must exceed fine {fine_resolution}"
        )
    ratio = coarse_resolution / fine_resolution
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > _REL_TOL * factor:
        raise ResolutionError(
            f"resolution ratio {ratio} is not an integer (fine {fine_resolution}, "
            f"coarse {coarse_resolution})"
        )
    return factor


def _check_data(grid: GridSpec, data: np.ndarray, name: str) -> np.ndarray:
    if data.shape != grid.dims:
        raise ValidationError(
            f"{name} data shape {data.shape} does not match grid dims {grid.dims}"
        )
    out = np.array(data, order="C", copy=True)
    out.setflags(write=False)
    return out


def _check_binary(data: np.ndarray, name: str) -> None:
    if not np.isin(data, (0, 1)).all():
        raise ValidationError(f"{name} entries must be 0 or 1")


@dataclass
class EnvironmentTensor:
    """Binary occupancy grid, 1 where a building occupies the voxel centroid."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = _check_data(self.grid, np.asarray(self.data, dtype=np.uint8), "environment")
        _check_binary(self.data, "environment")


@dataclass
class TransmitterTensor:
    """One-hot transmitter grid plus the continuous transmitter position."""

    grid: GridSpec
    data: np.ndarray
    location: tuple[float, float, float]

    def __post_init__(self):
        self.data = _check_data(self.grid, np.asarray(self.data, dtype=np.uint8), "transmitter")
        _check_binary(self.data, "transmitter")
        if int(self.data.sum()) != 1:
            raise ValidationError("transmitter grid must be one-hot (exactly one voxel set)")
        self.location = tuple(float(v) for v in self.location)
        hot = tuple(int(v) for v in np.argwhere(self.data == 1)[0])
        if self.grid.voxel_of(self.location) != hot:
            raise ValidationError(
                f"transmitter location {self.location} not inside the hot voxel {hot}"
            )

    @property
    def voxel(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in np.argwhere(self.data == 1)[0])

    @classmethod
    def from_location(cls, grid: GridSpec, location) -> "TransmitterTensor":
        """One-hot tensor for a continuous position inside the grid."""
        idx = grid.voxel_of(location)
        data = np.zeros(grid.dims, dtype=np.uint8)
        data[idx] = 1
        return cls(grid, data, tuple(float(v) for v in np.asarray(location, dtype=np.float64)))


@dataclass
class LosTensor:
    """Binary line-of-sight grid relative to one transmitter."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = _check_data(self.grid, np.asarray(self.data, dtype=np.uint8), "los")
        _check_binary(self.data, "los")


@dataclass
class RadioMapTensor:
    """Path-loss voxel grid, either raw dB or normalized to [0, 1]."""

    grid: GridSpec
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        self.data = _check_data(self.grid, arr, "radio map")
        if not np.isfinite(self.data).all():
            raise ValidationError("radio map entries must be finite")
        if self.normalized and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValidationError(
                f"normalized radio map must lie in [0, 1], got "
                f"[{self.data.min()}, {self.data.max()}]"
            )


def downscale_occupancy(env: EnvironmentTensor, coarse_resolution: float) -> EnvironmentTensor:
    """Reduce occupancy to a coarser grid with the max rule.

    A coarse voxel is occupied when any of its fine voxels is, which keeps
    thin obstacles visible at the low resolution.
    """
    coarse = env.grid.coarsen(coarse_resolution)
    r = _nesting_factor(env.grid.resolution, coarse_resolution)
    ci, cj, ck = coarse.dims
    blocks = env.data.reshape(ci, r, cj, r, ck, r)
    data = blocks.max(axis=(1, 3, 5))
    return EnvironmentTensor(coarse, data)


def downscale_transmitter(tx: TransmitterTensor, coarse_resolution: float) -> TransmitterTensor:
    """One-hot transmitter grid on the coarser nested grid, same location."""
    coarse = tx.grid.coarsen(coarse_resolution)
    return TransmitterTensor.from_location(coarse, tx.location)


def normalize_rm(rm: RadioMapTensor, lo: float, hi: float) -> RadioMapTensor:
    """Clip raw dB values to [lo, hi] and map affinely onto [0, 1]."""
    if rm.normalized:
        raise ValidationError("radio map is already normalized")
    if not hi > lo:
        raise ValidationError(f"normalization window must satisfy hi > lo, got [{lo}, {hi}]")
    lo32 = np.float32(lo)
    hi32 = np.float32(hi)
    clipped = np.clip(rm.data, lo32, hi32)
    data = (clipped - lo32) / (hi32 - lo32)
    return RadioMapTensor(rm.grid, data, normalized=True)


def denormalize_rm(rm: RadioMapTensor, lo: float, hi: float) -> RadioMapTensor:
    """Inverse of :func:`normalize_rm` on the non-clipped range."""
    if not rm.normalized:
        raise ValidationError("radio map is not normalized")
    if not hi > lo:
        raise ValidationError(f"normalization window must satisfy hi > lo, got [{lo}, {hi}]")
    data = rm.data * (np.float32(hi) - np.float32(lo)) + np.float32(lo)
    return RadioMapTensor(rm.grid, data, normalized=False)


def bresenham_los(env: EnvironmentTensor, tx: TransmitterTensor) -> LosTensor:
    """Line-of-sight grid via an exact voxel walk from the transmitter voxel.

    For every voxel, the segment from the transmitter voxel centroid to that
    voxel's centroid is walked with a 3D DDA. The walk steps through every
    voxel whose interior the segment crosses; when the segment passes exactly
    through an edge or corner, all tied axes advance together so grazed
    voxels with zero chord length are not visited. The transmitter voxel and
    the target voxel itself are excluded from the obstruction test. Entry
    (i, j, k) is 1 when no visited voxel in between is occupied.
    """
    if env.grid != tx.grid:
        raise GridError("environment and transmitter grids differ")
    grid = env.grid
    occ = env.data.astype(bool)
    dims = np.asarray(grid.dims, dtype=np.int64)
    src_idx = np.asarray(tx.voxel, dtype=np.int64)
    src = grid.centroid(src_idx)

    targets = np.indices(grid.dims).reshape(3, -1).T.astype(np.int64)  # (V, 3)
    tgt_pts = np.asarray(grid.origin) + (targets + 0.5) * grid.resolution
    vec = tgt_pts - src  # (V, 3) float64

    n = targets.shape[0]
    cur = np.broadcast_to(src_idx, (n, 3)).copy()
    step = np.sign(vec).astype(np.int64)
    with np.errstate(divide="ignore"):
        inv = np.where(vec != 0.0, 1.0 / vec, np.inf)
    # Parametric distance to the first boundary crossing per axis, then the
    # per-axis increment for each subsequent crossing.
    next_bound = np.asarray(grid.origin) + (cur + (step > 0)) * grid.resolution
    tmax = np.where(step != 0, (next_bound - src) * inv, np.inf)
    tdelta = np.where(step != 0, grid.resolution * np.abs(inv), np.inf)

    blocked = np.zeros(n, dtype=bool)
    active = ~(cur == targets).all(axis=1)
    max_steps = int(np.abs(targets - src_idx).sum(axis=1).max()) + 3
    for _ in range(max_steps):
        if not active.any():
            break
        t_lo = tmax.min(axis=1, keepdims=True)
        tie = active[:, None] & (tmax == t_lo)
        cur = np.where(tie, cur + step, cur)
        tmax = np.where(tie, tmax + tdelta, tmax)
        arrived = (cur == targets).all(axis=1)
        probe = active & ~arrived
        if probe.any():
            p = cur[probe]
            inside = ((p >= 0) & (p < dims)).all(axis=1)
            hit = np.zeros(p.shape[0], dtype=bool)
            pi = p[inside]
            hit[inside] = occ[pi[:, 0], pi[:, 1], pi[:, 2]]
            blocked[probe] |= hit
        active &= ~arrived & ~blocked
    if active.any():
        raise GridError("line-of-sight walk failed to terminate")

    los = (~blocked).reshape(grid.dims).astype(np.uint8)
    return LosTensor(grid, los)


def colocated_centroids(fine: GridSpec, coarse: GridSpec) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """Pairs (coarse index, fine index) whose centroids coincide exactly.

    Nested grids share centroids only when the resolution ratio is odd; the
    list is empty for even ratios.
    """
    if fine.origin != coarse.origin or fine.side_lengths != coarse.side_lengths:
        raise GridError("grids must cover the same region")
    r = _nesting_factor(fine.resolution, coarse.resolution)
    if r % 2 == 0:
        return []
    off = (r - 1) // 2
    pairs = []
    ci, cj, ck = coarse.dims
    for i in range(ci):
        for j in range(cj):
            for k in range(ck):
                pairs.append(((i, j, k), (r * i + off, r * j + off, r * k + off)))
    return pairs
