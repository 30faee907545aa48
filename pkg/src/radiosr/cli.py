"""Command-line interface.

Every subcommand takes an optional JSON config file (``--config``) holding
sections "build", "lr_net", "sr_net" and "schedule", each of which may be
partial; dedicated flags override individual values. Progress and results
go to stdout as JSON lines, metric tables additionally as aligned text.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    BuildConfig,
    Manifest,
    build_hybrid_dataset,
    load_sample,
)
from .errors import RadioSRError
from .grids import TransmitterTensor
from .losses import LossWeights
from .models import LRNetConfig, SRNetConfig
from .oracle import (
    EmpiricalPathLossParams,
    OraclePropagationParams,
    SceneGenConfig,
    generate_radio_map,
    generate_scene,
    rasterize_occupancy,
    scene_to_json,
)
from .container import write_container
from .experiments import (
    complexity_report,
    evaluate_suite,
    format_complexity_table,
    render_slices,
    sweep_delta,
    sweep_m,
)
from .training import (
    PhaseSchedule,
    train_phase1,
    train_phase2,
    train_phase3,
)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, default=str))


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _tupled(d: dict, *keys: str) -> dict:
    out = dict(d)
    for k in keys:
        if k in out and isinstance(out[k], list):
            out[k] = tuple(out[k])
    return out


def _scene_config(d: dict) -> SceneGenConfig:
    return SceneGenConfig(
        **_tupled(d, "region_origin", "region_side", "box_count_range",
                  "footprint_range", "height_range")
    )


def _propagation_config(d: dict) -> OraclePropagationParams:
    d = dict(d)
    empirical = EmpiricalPathLossParams(**d.pop("empirical", {}))
    return OraclePropagationParams(empirical=empirical, **d)


def _build_config(section: dict) -> BuildConfig:
    d = _tupled(section, "tx_height_range", "split_fractions")
    if "scene" in d:
        d["scene"] = _scene_config(d["scene"])
    if "propagation" in d:
        d["propagation"] = _propagation_config(d["propagation"])
    return BuildConfig(**d)


def _schedule_config(section: dict) -> PhaseSchedule:
    d = _tupled(section, "epochs", "learning_rates", "batch_sizes")
    if "loss_weights" in d:
        d["loss_weights"] = LossWeights(**d["loss_weights"])
    return PhaseSchedule(**d)


def _model_configs(cfg: dict) -> tuple[LRNetConfig, SRNetConfig]:
    return LRNetConfig(**cfg.get("lr_net", {})), SRNetConfig(**cfg.get("sr_net", {}))


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    build = _build_config(cfg.get("build", {}))
    if args.seed is not None:
        build = dataclasses.replace(build, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(build.scene, build.seed)
    (out / "scene.json").write_text(scene_to_json(scene))
    fine, coarse = build.fine_grid(), build.coarse_grid()
    env = rasterize_occupancy(scene, fine)
    write_container(out / "env.df3d", fine, env.data)
    rng = np.random.default_rng(build.seed)
    if args.tx is not None:
        loc = tuple(_parse_floats(args.tx))
    else:
        ox, oy, _ = build.scene.region_origin
        sx, sy, _ = build.scene.region_side
        m = build.tx_margin
        loc = (
            float(rng.uniform(ox + m, ox + sx - m)),
            float(rng.uniform(oy + m, oy + sy - m)),
            float(rng.uniform(*build.tx_height_range)),
        )
    tx = TransmitterTensor.from_location(fine, loc)
    write_container(out / "tx.df3d", fine, tx.data)
    lr_map = generate_radio_map(scene, build.propagation, loc, coarse, normalized=False)
    write_container(out / "lr_map.df3d", coarse, lr_map.data)
    hr_map = generate_radio_map(scene, build.propagation, loc, fine, normalized=False)
    write_container(out / "hr_map.df3d", fine, hr_map.data)
    _emit(
        {
            "action": "generate",
            "out": str(out),
            "boxes": len(scene.boxes),
            "tx_location": list(loc),
            "fine_dims": list(fine.dims),
            "coarse_dims": list(coarse.dims),
        }
    )
    return 0


def cmd_build_dataset(args) -> int:
    cfg = _load_config(args.config)
    build = _build_config(cfg.get("build", {}))
    overrides = {}
    for name in ("seed", "n_envs", "tx_per_env", "hr_env_count"):
        v = getattr(args, name)
        if v is not None:
            overrides[name] = v
    if overrides:
        build = dataclasses.replace(build, **overrides)
    manifest = build_hybrid_dataset(build, args.out)
    _emit(
        {
            "action": "build-dataset",
            "out": str(args.out),
            "records": len(manifest.records),
            "hr_env_ids": manifest.hr_env_ids,
            "split_counts": {
                s: sum(1 for v in manifest.split.values() if v == s)
                for s in ("train", "val", "test")
            },
            "seed": build.seed,
        }
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    lr_cfg, sr_cfg = _model_configs(cfg)
    schedule = _schedule_config(cfg.get("schedule", {}))
    manifest = Manifest.load(args.data)
    out = Path(args.out)
    if args.phase == 1:
        state = train_phase1(
            args.data, manifest, lr_cfg, schedule, out, seed=args.seed, builder=args.builder
        )
    elif args.phase == 2:
        state = train_phase2(args.data, manifest, sr_cfg, schedule, out, seed=args.seed)
    else:
        p1 = args.phase1_ckpt or out / "phase1.ckpt"
        p2 = args.phase2_ckpt or out / "phase2.ckpt"
        state = train_phase3(args.data, manifest, p1, p2, schedule, out, seed=args.seed)
    _emit(
        {
            "action": "train",
            "phase": state.phase,
            "epochs": state.epochs_run,
            "best_monitor": state.best_monitor,
            "final_train_loss": state.train_losses[-1],
            "checkpoint": state.checkpoint_path,
            "curve": state.curve_path,
        }
    )
    return 0


def cmd_evaluate(args) -> int:
    manifest = Manifest.load(args.data)
    checkpoints = {}
    for role in ("lr_net", "sr_net", "radiounet3d", "radiounet3d_sr"):
        v = getattr(args, role)
        if v is not None:
            checkpoints[role] = v
    result = evaluate_suite(
        args.data, manifest, checkpoints, out_dir=args.out,
        ssim_window=args.ssim_window, split=args.split,
    )
    print(result["table"])
    _emit({"action": "evaluate", "split": args.split, "methods": result["methods"]})
    return 0


def cmd_sweep_m(args) -> int:
    cfg = _load_config(args.config)
    _, sr_cfg = _model_configs(cfg)
    schedule = _schedule_config(cfg.get("schedule", {}))
    manifest = Manifest.load(args.data)
    result = sweep_m(
        args.data, manifest, _parse_ints(args.m_values), args.phase1_ckpt,
        sr_cfg, schedule, args.out, seed=args.seed,
    )
    _emit(
        {
            "action": "sweep-m",
            "nmse_by_m": {str(k): v for k, v in result["nmse_by_m"].items()},
            "full_sr": result["full_sr"],
            "plot": result["plot"],
        }
    )
    return 0


def cmd_sweep_delta(args) -> int:
    cfg = _load_config(args.config)
    lr_cfg, sr_cfg = _model_configs(cfg)
    schedule = _schedule_config(cfg.get("schedule", {}))
    build = _build_config(cfg.get("build", {}))
    if args.seed is not None:
        build = dataclasses.replace(build, seed=args.seed)
    result = sweep_delta(
        build, _parse_floats(args.deltas), lr_cfg, sr_cfg, schedule, args.out,
        seed=build.seed,
    )
    _emit(
        {
            "action": "sweep-delta",
            "nmse_by_delta": {str(k): v for k, v in result["nmse_by_delta"].items()},
            "plot": result["plot"],
        }
    )
    return 0


def cmd_complexity(args) -> int:
    cfg = _load_config(args.config)
    lr_cfg, sr_cfg = _model_configs(cfg)
    dims = tuple(_parse_ints(args.fine_dims))
    report = complexity_report(lr_cfg, sr_cfg, fine_dims=dims, ratio=args.ratio)
    print(format_complexity_table(report))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(report, indent=2, sort_keys=True))
    _emit({"action": "complexity", "report": report})
    return 0


def cmd_render_slices(args) -> int:
    manifest = Manifest.load(args.data)
    matches = [r for r in manifest.records if r.key == args.record]
    if not matches:
        raise RadioSRError(f"no record {args.record!r} in the manifest")
    record = matches[0]
    if record.hr_map_path is None:
        raise RadioSRError(f"record {args.record!r} has no fine map to render")
    sample = load_sample(args.data, manifest, record)
    pred = None
    if args.lr_net and args.sr_net:
        from .experiments import predict_method
        from .training import model_from_checkpoint

        lr_model, _ = model_from_checkpoint(args.lr_net)
        sr_model, _ = model_from_checkpoint(args.sr_net)
        pred = predict_method("Proposed", [sample], manifest, lr_model, sr_model)[0]
    altitudes = _parse_ints(args.altitudes)
    if pred is not None:
        paths = render_slices(pred, sample.hr_map, altitudes, args.out)
    else:
        paths = render_slices(sample.hr_map, None, altitudes, args.out)
    _emit({"action": "render-slices", "files": [str(p) for p in paths]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiosr",
        description="Two-stage 3D radio map estimation: dataset, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate one scene with its maps")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tx", help="transmitter location x,y,z (random if omitted)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-dataset", help="build the hybrid dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-envs", type=int, dest="n_envs")
    p.add_argument("--tx-per-env", type=int, dest="tx_per_env")
    p.add_argument("--hr-env-count", type=int, dest="hr_env_count")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--phase", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint/curve directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--builder", choices=("lr_net", "radiounet3d"), default="lr_net")
    p.add_argument("--phase1-ckpt", dest="phase1_ckpt")
    p.add_argument("--phase2-ckpt", dest="phase2_ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metric table on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for evaluation.json/.txt")
    p.add_argument("--split", default="test")
    p.add_argument("--ssim-window", type=int, default=3, dest="ssim_window")
    p.add_argument("--lr-net", dest="lr_net")
    p.add_argument("--sr-net", dest="sr_net")
    p.add_argument("--radiounet3d", dest="radiounet3d")
    p.add_argument("--radiounet3d-sr", dest="radiounet3d_sr")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-m", help="NMSE vs number of fine-label environments")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phase1-ckpt", required=True, dest="phase1_ckpt")
    p.add_argument("--m-values", required=True, dest="m_values", help="e.g. 1,2,4,8")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep_m)

    p = sub.add_parser("sweep-delta", help="NMSE vs coarse resolution")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--deltas", required=True, help="e.g. 2,4,8")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep_delta)

    p = sub.add_parser("complexity", help="parameter/MAC/memory report")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--fine-dims", default="32,32,32", dest="fine_dims")
    p.add_argument("--ratio", type=int, default=4)
    p.add_argument("--json-out", dest="json_out")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("render-slices", help="altitude slice images for one record")
    p.add_argument("--data", required=True)
    p.add_argument("--record", required=True, help="record key, e.g. env000/tx0")
    p.add_argument("--altitudes", required=True, help="e.g. 8,16,24")
    p.add_argument("--out", required=True, help="output file prefix")
    p.add_argument("--lr-net", dest="lr_net")
    p.add_argument("--sr-net", dest="sr_net")
    p.set_defaults(func=cmd_render_slices)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RadioSRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
