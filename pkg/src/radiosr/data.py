"""Hybrid dataset: many coarse-label samples, few fine-label samples.

A dataset is a directory of scene JSONs and tensor containers plus one
``manifest.json`` tying them together. Maps are stored as raw dB float32 so
they remain comparable to fresh oracle evaluations; normalization to [0, 1]
happens at load time using the window recorded in the manifest. Every
record path in the manifest is relative to the dataset directory, which
makes two builds with the same config and seed byte-identical.

Split policy: environments are assigned to train/val/test by seeded shuffle
with per-fraction floors (remainder to train). The fine-label subset is
drawn uniformly from non-test environments (spilling into test environments
only when the requested count exceeds them); its own train/val split is
2:1 by floor with at least one training environment. Test environments
always carry fine maps as evaluation labels.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import ConfigError, DatasetError
from .grids import (
    EnvironmentTensor,
    GridSpec,
    RadioMapTensor,
    TransmitterTensor,
    normalize_rm,
)
from .oracle import (
    OraclePropagationParams,
    EmpiricalPathLossParams,
    Scene,
    SceneGenConfig,
    generate_radio_map,
    generate_scene,
    rasterize_occupancy,
    scene_from_json,
    scene_to_json,
)

MANIFEST_VERSION = 1
_TX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class BuildConfig:
    """Everything needed to build a dataset reproducibly."""

    n_envs: int = 64
    tx_per_env: int = 4
    hr_env_count: int = 8
    resolution: float = 1.0
    lr_resolution: float = 4.0
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    propagation: OraclePropagationParams = field(default_factory=OraclePropagationParams)
    tx_height_range: tuple[float, float] = (7.5, 20.0)
    tx_margin: float = 1.0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.n_envs < 1 or self.tx_per_env < 1:
            raise ConfigError("n_envs and tx_per_env must be >= 1")
        if not 1 <= self.hr_env_count <= self.n_envs:
            raise ConfigError(
                f"hr_env_count must be in [1, n_envs], got {self.hr_env_count} of {self.n_envs}"
            )
        if any(f < 0 for f in self.split_fractions) or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {self.split_fractions}")
        if self.tx_height_range[0] > self.tx_height_range[1]:
            raise ConfigError(f"bad tx_height_range {self.tx_height_range}")
        # These raise ResolutionError/GridError early if the geometry is off.
        self.fine_grid()
        self.coarse_grid()

    def fine_grid(self) -> GridSpec:
        side = self.scene.region_side
        dims = []
        for s in side:
            d = s / self.resolution
            if abs(d - round(d)) > 1e-9:
                raise ConfigError(
                    f"region side {s} is not a multiple of resolution {self.resolution}"
                )
            dims.append(int(round(d)))
        return GridSpec.create(self.scene.region_origin, self.resolution, dims)

    def coarse_grid(self) -> GridSpec:
        return self.fine_grid().coarsen(self.lr_resolution)


@dataclass(frozen=True)
class SampleRecord:
    """One (environment, transmitter) pair and its on-disk artifacts."""

    env_id: str
    tx_id: str
    scene_path: str
    env_path: str
    tx_path: str
    lr_map_path: str
    hr_map_path: str | None
    tx_location: tuple[float, float, float]

    @property
    def key(self) -> str:
        return f"{self.env_id}/{self.tx_id}"


@dataclass
class Manifest:
    config: BuildConfig
    split: dict[str, str]
    hr_env_ids: list[str]
    hr_split: dict[str, str]
    records: list[SampleRecord]
    format_version: int = MANIFEST_VERSION

    def env_ids(self) -> list[str]:
        return sorted(self.split.keys())

    def hr_envs(self) -> set[str]:
        """Environments carrying fine maps: the selected subset plus test."""
        return set(self.hr_env_ids) | {e for e, s in self.split.items() if s == "test"}

    def records_for(self, split: str | None = None, hr_only: bool = False) -> list[SampleRecord]:
        """Records filtered by environment split, optionally fine-label ones.

        ``split`` of None means all records. With ``hr_only`` for train/val,
        the fine-label train/val assignment (``hr_split``) is used rather
        than the environment-level split.
        """
        out = []
        for r in self.records:
            if hr_only:
                if r.hr_map_path is None:
                    continue
                if split in ("train", "val"):
                    if self.hr_split.get(r.env_id) != split:
                        continue
                elif split is not None:
                    if self.split[r.env_id] != split:
                        continue
            elif split is not None and self.split[r.env_id] != split:
                continue
            out.append(r)
        return out

    def to_json(self) -> str:
        payload = {
            "format_version": self.format_version,
            "config": _config_to_dict(self.config),
            "split": self.split,
            "hr_env_ids": self.hr_env_ids,
            "hr_split": self.hr_split,
            "records": [
                {**dataclasses.asdict(r), "tx_location": list(r.tx_location)}
                for r in self.records
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            payload = json.loads(text)
            if payload["format_version"] != MANIFEST_VERSION:
                raise DatasetError(
                    f"unsupported manifest version {payload['format_version']}"
                )
            config = _config_from_dict(payload["config"])
            records = [
                SampleRecord(**{**r, "tx_location": tuple(r["tx_location"])})
                for r in payload["records"]
            ]
            return cls(
                config=config,
                split=dict(payload["split"]),
                hr_env_ids=list(payload["hr_env_ids"]),
                hr_split=dict(payload["hr_split"]),
                records=records,
            )
        except DatasetError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed manifest: {exc}") from exc

    def save(self, base_dir: str | os.PathLike) -> Path:
        path = Path(base_dir) / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(self.to_json())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, base_dir: str | os.PathLike) -> "Manifest":
        path = Path(base_dir) / "manifest.json"
        if not path.exists():
            raise DatasetError(f"no manifest at {path}")
        return cls.from_json(path.read_text())


def _config_to_dict(cfg: BuildConfig) -> dict:
    return dataclasses.asdict(cfg)


def _config_from_dict(d: dict) -> BuildConfig:
    d = dict(d)
    scene = SceneGenConfig(
        **{
            **d["scene"],
            "region_origin": tuple(d["scene"]["region_origin"]),
            "region_side": tuple(d["scene"]["region_side"]),
            "box_count_range": tuple(d["scene"]["box_count_range"]),
            "footprint_range": tuple(d["scene"]["footprint_range"]),
            "height_range": tuple(d["scene"]["height_range"]),
        }
    )
    prop_d = dict(d["propagation"])
    prop = OraclePropagationParams(
        **{**prop_d, "empirical": EmpiricalPathLossParams(**prop_d["empirical"])}
    )
    return BuildConfig(
        **{
            **d,
            "scene": scene,
            "propagation": prop,
            "tx_height_range": tuple(d["tx_height_range"]),
            "split_fractions": tuple(d["split_fractions"]),
        }
    )


def assign_splits(
    env_ids: list[str], fractions: tuple[float, float, float], seed: int
) -> dict[str, str]:
    """Environment-level split by seeded shuffle, floors, remainder to train."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be non-negative and sum to 1, got {fractions}")
    ids = sorted(env_ids)
    n = len(ids)
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train += n - (n_train + n_val + n_test)
    out = {}
    for i, env in enumerate(order):
        if i < n_train:
            out[env] = "train"
        elif i < n_train + n_val:
            out[env] = "val"
        else:
            out[env] = "test"
    return out


def _derive_hr_assignment(
    env_ids: list[str], split: dict[str, str], hr_env_count: int, seed: int
) -> tuple[list[str], dict[str, str]]:
    """Select the fine-label environments and their 2:1 train/val split."""
    non_test = sorted(e for e in env_ids if split[e] != "test")
    test = sorted(e for e in env_ids if split[e] == "test")
    rng = np.random.default_rng(seed)
    if hr_env_count <= len(non_test):
        chosen = sorted(rng.choice(non_test, size=hr_env_count, replace=False).tolist())
    else:
        extra = rng.choice(test, size=hr_env_count - len(non_test), replace=False).tolist()
        chosen = sorted(non_test + extra)
    trainable = [e for e in chosen if split[e] != "test"]
    order = [trainable[i] for i in rng.permutation(len(trainable))]
    n_train = max(1, int(np.floor(2 * len(order) / 3))) if order else 0
    hr_split = {e: ("train" if i < n_train else "val") for i, e in enumerate(order)}
    return chosen, hr_split


def _sample_tx_location(scene: Scene, cfg: BuildConfig, rng: np.random.Generator):
    ox, oy, _ = cfg.scene.region_origin
    sx, sy, _ = cfg.scene.region_side
    m = cfg.tx_margin
    for _ in range(_TX_PLACEMENT_ATTEMPTS):
        x = rng.uniform(ox + m, ox + sx - m)
        y = rng.uniform(oy + m, oy + sy - m)
        z = rng.uniform(*cfg.tx_height_range)
        if not any(b.contains((x, y, z)) for b in scene.boxes):
            return (float(x), float(y), float(z))
    raise DatasetError(
        f"could not place a transmitter outside buildings after "
        f"{_TX_PLACEMENT_ATTEMPTS} attempts"
    )


def _stream_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def build_hybrid_dataset(config: BuildConfig, out_dir: str | os.PathLike) -> Manifest:
    """Generate scenes, tensors and maps; write everything under ``out_dir``."""
    base = Path(out_dir)
    for sub in ("scenes", "env", "tx", "lr", "hr"):
        (base / sub).mkdir(parents=True, exist_ok=True)

    fine = config.fine_grid()
    coarse = config.coarse_grid()
    env_ids = [f"env{i:03d}" for i in range(config.n_envs)]
    split = assign_splits(env_ids, config.split_fractions, _stream_seed(config.seed, 3))
    hr_env_ids, hr_split = _derive_hr_assignment(
        env_ids, split, config.hr_env_count, _stream_seed(config.seed, 4)
    )
    hr_envs = set(hr_env_ids) | {e for e in env_ids if split[e] == "test"}

    records: list[SampleRecord] = []
    for i, env_id in enumerate(env_ids):
        scene = generate_scene(config.scene, _stream_seed(config.seed, 1, i))
        scene_path = f"scenes/{env_id}.json"
        (base / scene_path).write_text(scene_to_json(scene))
        env = rasterize_occupancy(scene, fine)
        env_path = f"env/{env_id}.df3d"
        write_container(base / env_path, fine, env.data)

        for j in range(config.tx_per_env):
            tx_rng = np.random.default_rng(_stream_seed(config.seed, 2, i, j))
            loc = _sample_tx_location(scene, config, tx_rng)
            tx = TransmitterTensor.from_location(fine, loc)
            tx_id = f"tx{j}"
            tx_path = f"tx/{env_id}_{tx_id}.df3d"
            write_container(base / tx_path, fine, tx.data)

            lr_map = generate_radio_map(scene, config.propagation, loc, coarse, normalized=False)
            lr_path = f"lr/{env_id}_{tx_id}.df3d"
            write_container(base / lr_path, coarse, lr_map.data)

            hr_path = None
            if env_id in hr_envs:
                hr_map = generate_radio_map(
                    scene, config.propagation, loc, fine, normalized=False
                )
                hr_path = f"hr/{env_id}_{tx_id}.df3d"
                write_container(base / hr_path, fine, hr_map.data)

            records.append(
                SampleRecord(
                    env_id=env_id,
                    tx_id=tx_id,
                    scene_path=scene_path,
                    env_path=env_path,
                    tx_path=tx_path,
                    lr_map_path=lr_path,
                    hr_map_path=hr_path,
                    tx_location=loc,
                )
            )

    manifest = Manifest(
        config=config,
        split=split,
        hr_env_ids=hr_env_ids,
        hr_split=hr_split,
        records=records,
    )
    manifest.save(base)
    return manifest


def split_dataset(
    manifest: Manifest, fractions: tuple[float, float, float], seed: int
) -> Manifest:
    """Re-assign environment splits on an existing manifest.

    The fine-label train/val split is re-derived for the new assignment.
    Raises DatasetError if a newly designated test environment lacks fine
    maps (they are required as evaluation labels).
    """
    env_ids = manifest.env_ids()
    split = assign_splits(env_ids, fractions, seed)
    hr_envs = set(manifest.hr_env_ids)
    missing = [
        e for e in env_ids if split[e] == "test" and e not in hr_envs
        and any(r.env_id == e and r.hr_map_path is None for r in manifest.records)
    ]
    if missing:
        raise DatasetError(
            f"cannot re-split: test environments without fine maps: {missing}"
        )
    rng_seed = _stream_seed(seed, 4)
    trainable = [e for e in sorted(hr_envs) if split[e] != "test"]
    rng = np.random.default_rng(rng_seed)
    order = [trainable[i] for i in rng.permutation(len(trainable))]
    n_train = max(1, int(np.floor(2 * len(order) / 3))) if order else 0
    hr_split = {e: ("train" if i < n_train else "val") for i, e in enumerate(order)}
    return Manifest(
        config=manifest.config,
        split=split,
        hr_env_ids=list(manifest.hr_env_ids),
        hr_split=hr_split,
        records=list(manifest.records),
    )


@dataclass
class Sample:
    """Typed tensors for one record, maps normalized to [0, 1] on load."""

    record: SampleRecord
    scene: Scene
    env: EnvironmentTensor
    tx: TransmitterTensor
    lr_map: RadioMapTensor
    hr_map: RadioMapTensor | None


def load_sample(
    base_dir: str | os.PathLike, manifest: Manifest, record: SampleRecord, normalized: bool = True
) -> Sample:
    """Read one record's files back into validated tensor types."""
    base = Path(base_dir)
    cfg = manifest.config
    fine = cfg.fine_grid()
    coarse = cfg.coarse_grid()
    scene = scene_from_json((base / record.scene_path).read_text())

    g, env_data = read_container(base / record.env_path)
    if g != fine:
        raise DatasetError(f"environment grid mismatch in {record.env_path}")
    env = EnvironmentTensor(fine, env_data)

    g, tx_data = read_container(base / record.tx_path)
    if g != fine:
        raise DatasetError(f"transmitter grid mismatch in {record.tx_path}")
    tx = TransmitterTensor(fine, tx_data, record.tx_location)

    g, lr_data = read_container(base / record.lr_map_path)
    if g != coarse:
        raise DatasetError(f"coarse map grid mismatch in {record.lr_map_path}")
    lr_map = RadioMapTensor(coarse, lr_data, normalized=False)

    hr_map = None
    if record.hr_map_path is not None:
        g, hr_data = read_container(base / record.hr_map_path)
        if g != fine:
            raise DatasetError(f"fine map grid mismatch in {record.hr_map_path}")
        hr_map = RadioMapTensor(fine, hr_data, normalized=False)

    if normalized:
        lo, hi = cfg.propagation.loss_floor, cfg.propagation.loss_cap
        lr_map = normalize_rm(lr_map, lo, hi)
        if hr_map is not None:
            hr_map = normalize_rm(hr_map, lo, hi)
    return Sample(record=record, scene=scene, env=env, tx=tx, lr_map=lr_map, hr_map=hr_map)


def batch_indices(n: int, batch_size: int, seed: int, shuffle: bool = True) -> list[list[int]]:
    """Deterministic batch index lists covering range(n) once."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    idx = np.arange(n)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(n)
    return [idx[s : s + batch_size].tolist() for s in range(0, n, batch_size)]


@dataclass
class Batch:
    """Stacked arrays for a mini-batch; ``hr`` is None for coarse-only batches."""

    records: list[SampleRecord]
    env: np.ndarray
    tx: np.ndarray
    lr: np.ndarray
    hr: np.ndarray | None
    tx_locations: np.ndarray

    def __len__(self) -> int:
        return len(self.records)


def _stack_batch(samples: list[Sample], kind: str) -> Batch:
    env = np.stack([s.env.data for s in samples])
    tx = np.stack([s.tx.data for s in samples]).astype(np.float32)
    lr = np.stack([s.lr_map.data for s in samples])
    hr = None
    if kind == "hr":
        hr = np.stack([s.hr_map.data for s in samples])
    locs = np.array([s.record.tx_location for s in samples], dtype=np.float64)
    return Batch(
        records=[s.record for s in samples], env=env, tx=tx, lr=lr, hr=hr, tx_locations=locs
    )


def load_batch(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    split: str | None,
    kind: str = "lr",
    batch_size: int = 32,
    seed: int = 0,
    shuffle: bool = True,
    normalized: bool = True,
) -> list[Batch]:
    """One epoch of validated, deterministically ordered mini-batches.

    ``kind`` selects the label resolution: "lr" batches cover every record in
    the split; "hr" batches only those with fine maps, using the fine-label
    train/val assignment when ``split`` is train or val.
    """
    if kind not in ("lr", "hr"):
        raise ConfigError(f"kind must be 'lr' or 'hr', got {kind!r}")
    records = manifest.records_for(split, hr_only=(kind == "hr"))
    samples = [load_sample(base_dir, manifest, r, normalized=normalized) for r in records]
    return [
        _stack_batch([samples[i] for i in idx], kind)
        for idx in batch_indices(len(samples), batch_size, seed, shuffle)
    ]
