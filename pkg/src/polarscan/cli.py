"""Command-line entry point: ``polarscan <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import analysis, io
from .block import BackboneParams
from .bev import BevSpec
from .config import PRECISIONS, ConfigError, load_run_config, load_scene_config, to_dict
from .core import concat
from .scene import generate_scene
from .stream import SensorModel, run_stream
from .voxelize import FeatureLift, split_sectors, voxelize_sector


def _run_config(args):
    cfg = load_run_config(args.config)
    if getattr(args, "precision", None):
        cfg = dataclasses.replace(cfg, precision=args.precision)
    if getattr(args, "sectors", None) and isinstance(args.sectors, int):
        cfg = dataclasses.replace(cfg, n_sectors=args.sectors)
    return cfg


def _model(cfg, params_dir=None):
    if params_dir:
        bp = io.load_backbone(params_dir)
        if bp.dim != cfg.dim:
            raise ConfigError(f"parameter bundle has dim {bp.dim}, config says {cfg.dim}")
    else:
        bp = BackboneParams.create(cfg.dim, cfg.strides, cfg.kernels, cfg.state_dim, seed=cfg.seed)
    return bp, FeatureLift.create(4, cfg.dim, seed=cfg.seed + 7)


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_voxelize(args):
    cfg = _run_config(args)
    pts = io.read_point_array(args.input, args.format)
    gspec = cfg.grid_spec()
    parts, per_sector, dropped = [], [], 0
    for s in split_sectors(pts, cfg.n_sectors, cfg.rotation_ms):
        t, st = voxelize_sector(s, gspec, return_stats=True)
        parts.append(t)
        dropped += st.dropped
        per_sector.append({"sector": s.sector_id, "points": st.n_points, "voxels": st.n_voxels})
    t = concat(parts)
    stats = {"n_points": len(pts), "n_voxels": len(t), "dropped": dropped, "sectors": per_sector}
    io.write_voxels(args.out, t, stats)
    print(f"{len(t)} voxels from {len(pts)} points ({dropped} dropped) -> {args.out}")


def cmd_run_stream(args):
    cfg = _run_config(args)
    scans = [io.read_point_array(p, args.format) for p in args.input]
    bp, lift = _model(cfg, args.params)
    gspec, bspec = cfg.grid_spec(), cfg.bev_spec()
    res = run_stream(
        scans, cfg.n_sectors, bp, gspec, bspec, lift,
        sensor=SensorModel(cfg.rotation_ms, cfg.n_sectors), mode=args.mode,
        dtype=cfg.dtype, realtime=args.realtime,
    )
    out = Path(args.out)
    sectors = []
    for (rot, sec), m, n in zip(res.keys, res.maps, res.voxel_counts):
        name = io.bev_name(rot, sec)
        io.write_bev(out, name, m)
        sectors.append({"rotation": rot, "sector": sec, "file": f"{name}.phtn", "voxels": n,
                        "occupied_cells": int((m.counts > 0).sum())})
    _write_json(out / "report.json", {
        "config": to_dict(cfg),
        "mode": args.mode,
        "sectors": sectors,
        "timing": res.timing.to_dict() if res.timing else None,
    })
    if args.save_params:
        io.save_backbone(bp, args.save_params)
    tp = f"{res.timing.throughput:.2f}/s" if res.timing else "n/a"
    print(f"{len(res.maps)} BEV maps -> {out} (modelled throughput {tp})")


def cmd_analyze_distortion(args):
    pts = io.read_point_array(args.input, args.format)
    units = None
    if args.units == "index":
        g = load_run_config(args.config).grid_spec()
        units = (g.dr, g.dtheta, g.dz)
    rep = analysis.plane_distortion(pts, args.samples, seed=args.seed, units=units)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    analysis.write_distortion_csv(rep, args.out)
    for row in rep.rows():
        print(f"{row['plane']:>8}  std={row['std']:.6g}  {row['percent']:.2f}%")


def erf_grids(cfg):
    """Polar grid from the run config and a Cartesian grid with dx = dy = dr."""
    g = cfg.grid_spec()
    n_xy = int(round(2 * g.r_max / g.dr))
    c = BevSpec.square(g.r_max, n_xy, g.z_offset, g.z_max, g.n_z)
    return g, c


def cmd_analyze_erf(args):
    scfg = load_scene_config(args.scene_config)
    g, c = erf_grids(load_run_config(args.config))
    scene = generate_scene(scfg)
    study = analysis.erf_study(scene.points, scene.boxes, g, c, depths=range(0, args.depth + 1))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    analysis.write_erf_csv(study, args.out)
    for depth in range(args.depth + 1):
        vals = "  ".join(f"{k}={v[depth].ratio:.4f}" for k, v in study.items())
        print(f"depth {depth}: {vals}")


def cmd_bench(args):
    cfg = _run_config(args)
    counts = [int(v) for v in args.sectors.split(",") if v.strip()]
    if not counts or min(counts) < 1:
        raise ConfigError("--sectors needs positive integers, e.g. 1,2,4")
    if args.input:
        scan = io.read_point_array(args.input, args.format)
    else:
        scan = generate_scene(load_scene_config(args.scene_config)).points
    bp, lift = _model(cfg)
    rows = []
    for n in counts:
        res = run_stream([scan] * (args.rotations + 1), n, bp, cfg.grid_spec(), cfg.bev_spec(), lift,
                         sensor=SensorModel(cfg.rotation_ms, n), dtype=cfg.dtype)
        rows.append(res.timing.to_dict())
        t = res.timing
        print(f"n={n:<3} period={t.sector_period_ms:8.2f} ms  compute={t.compute_ms:9.2f} ms  "
              f"latency={t.latency_ms:9.2f} ms  throughput={t.throughput:7.3f}/s")
    _write_json(args.out, {"rotation_ms": cfg.rotation_ms, "results": rows})


def cmd_gen_scene(args):
    scfg = load_scene_config(args.config)
    scene = generate_scene(scfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_point_cloud(out, scene.points, args.format)
    _write_json(out.with_name(out.name + ".boxes.json"), {
        "config": to_dict(scfg),
        "columns": ["x_min", "y_min", "z_min", "x_max", "y_max", "z_max"],
        "boxes": scene.boxes.tolist(),
    })
    print(f"{len(scene.points)} points, {len(scene.boxes)} boxes -> {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polarscan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="run config JSON"):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--format", choices=["csv", "binary"], help="point file format (default: by extension)")

    sp = sub.add_parser("voxelize", help="voxelize a scan into a sparse tensor dump")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_voxelize)

    sp = sub.add_parser("run-stream", help="full streaming pipeline to BEV maps")
    common(sp)
    sp.add_argument("--input", required=True, action="append", help="scan file; repeat for more rotations")
    sp.add_argument("--sectors", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["stream", "batch"], default="stream")
    sp.add_argument("--precision", choices=sorted(PRECISIONS))
    sp.add_argument("--realtime", action="store_true", help="pace sectors at the sensor rate")
    sp.add_argument("--params", help="load backbone parameters from a bundle directory")
    sp.add_argument("--save-params", help="write the backbone parameter bundle here")
    sp.set_defaults(func=cmd_run_stream)

    sp = sub.add_parser("analyze-distortion", help="per-plane polar distortion")
    common(sp, "run config JSON (grid used for index units)")
    sp.add_argument("--input", required=True)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--units", choices=["index", "raw"], default="index")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze_distortion)

    sp = sub.add_parser("analyze-erf", help="foreground ERF ratio per depth and geometry")
    sp.add_argument("--scene-config")
    sp.add_argument("--config", help="run config JSON (polar grid)")
    sp.add_argument("--depth", type=int, default=6)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze_erf)

    sp = sub.add_parser("bench", help="throughput and latency per sector count")
    common(sp)
    sp.add_argument("--sectors", default="1,2,4,6,8")
    sp.add_argument("--input")
    sp.add_argument("--scene-config")
    sp.add_argument("--rotations", type=int, default=1, help="timed rotations after one warm-up")
    sp.add_argument("--precision", choices=sorted(PRECISIONS))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("gen-scene", help="write a synthetic scene and its boxes")
    sp.add_argument("--config", help="scene config JSON")
    sp.add_argument("--format", choices=["csv", "binary"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_scene)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError, IndexError) as exc:
        print(f"polarscan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
