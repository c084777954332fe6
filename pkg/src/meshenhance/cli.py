"""Command-line front end: scenario generation, the three enhancement
stages, evaluation, and the full pipeline."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import metrics, scenario as scn
from .camera import Camera
from .config import ConfigError, PipelineConfig
from .enhance import (LossWeights, RefineWeights, enhance_appearance,
                      enhance_fidelity, estimate_camera, refine_geometry)
from .image import load_png, save_png
from .mesh import load_ply, save_ply
from .optim import OptimConfig
from .raster import render

OUT_ENV = "MESHENHANCE_OUT"


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "."
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _add_config_flags(parser):
    for f in fields(PipelineConfig):
        typ = int if f.type in (int, "int") else float
        parser.add_argument(f"--{f.name.replace('_', '-')}", type=typ, default=None)


def _build_config(args) -> PipelineConfig:
    base = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for f in fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if overrides:
        kwargs = {f.name: getattr(base, f.name) for f in fields(PipelineConfig)}
        kwargs.update(overrides)
        base = PipelineConfig(**kwargs)
    return base


def _weights(cfg: PipelineConfig) -> LossWeights:
    return LossWeights(cfg.w1, cfg.w2, cfg.w3, cfg.w4, cfg.w5, cfg.w6)


def eval_cameras(n_views: int = 24, resolution: int = 256, distance: float = 4.0,
                 fov: float = 30.0):
    """Evaluation poses: azimuths evenly spaced, elevations cycling 0/15/30."""
    elevations = [0.0, 15.0, 30.0]
    return [Camera(fov_deg=fov, distance=distance,
                   elevation_deg=elevations[k % 3],
                   azimuth_deg=360.0 * k / n_views,
                   resolution=(resolution, resolution))
            for k in range(n_views)]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate_scenario(args) -> int:
    cfg = _build_config(args)
    bundle = scn.make_scenario(args.name, seed=cfg.seed, resolution=cfg.resolution,
                               perturb_px=args.perturb_px,
                               offset_amount=args.offset_amount,
                               color_pattern_name=args.colors)
    scn.save_scenario(bundle, _out_dir(args))
    print(f"scenario '{args.name}' written to {_out_dir(args)}")
    return 0


def cmd_refine_geometry(args) -> int:
    cfg = _build_config(args)
    bundle = scn.load_scenario(args.scenario)
    out = _out_dir(args)
    refined = refine_geometry(
        bundle.initial_mesh, bundle.normal_views,
        OptimConfig(iterations=cfg.iterations_geometry, step_size=cfg.step_geometry,
                    seed=cfg.seed),
        RefineWeights(), expansion_delta=cfg.expansion_delta, sigma=cfg.sigma,
        loss_csv=out / "loss_geometry.csv")
    save_ply(refined, out / "m0.ply")
    print(f"refined mesh written to {out / 'm0.ply'}")
    return 0


def cmd_enhance_appearance(args) -> int:
    cfg = _build_config(args)
    bundle = scn.load_scenario(args.scenario)
    out = _out_dir(args)
    mesh = load_ply(args.mesh) if args.mesh else bundle.initial_mesh
    mc, fld, imgs = enhance_appearance(
        mesh, bundle.views, _weights(cfg),
        OptimConfig(iterations=cfg.iterations_appearance, step_size=cfg.step_appearance,
                    seed=cfg.seed),
        grid_size=cfg.grid_size, cos_threshold=cfg.cos_threshold,
        loss_csv=out / "loss_appearance.csv")
    save_ply(mc, out / "mc.ply")
    for k, (f, img) in enumerate(zip(fld, imgs)):
        (out / f"field_out_{k}.json").write_text(f.to_json())
        save_png(img, out / f"deformed_{k}.png")
    print(f"colored mesh written to {out / 'mc.ply'}")
    return 0


def cmd_enhance_fidelity(args) -> int:
    cfg = _build_config(args)
    bundle = scn.load_scenario(args.scenario)
    out = _out_dir(args)
    mesh = load_ply(args.mesh) if args.mesh else bundle.initial_mesh
    if mesh.colors is None:
        raise ConfigError("fidelity enhancement needs a colored mesh")
    input_img = bundle.input_image.image
    if args.estimate_camera:
        camera = estimate_camera(mesh, input_img, distance=cfg.resolution and 4.0,
                                 refine_iterations=cfg.iterations_camera)
    else:
        camera = bundle.input_image.camera
    mout, md = enhance_fidelity(
        mesh, input_img, camera, _weights(cfg),
        OptimConfig(iterations=cfg.iterations_fidelity, step_size=cfg.step_fidelity,
                    seed=cfg.seed),
        deformer_name=args.deformer, cos_threshold=cfg.cos_threshold,
        loss_csv=out / "loss_fidelity.csv")
    save_ply(md, out / "md.ply")
    save_ply(mout, out / "mout.ply")
    print(f"final mesh written to {out / 'mout.ply'}")
    return 0


def cmd_evaluate(args) -> int:
    mesh = load_ply(args.mesh)
    gt = load_ply(args.gt)
    out = _out_dir(args)
    cams = eval_cameras(args.n_views, args.eval_resolution)
    report = metrics.evaluate(mesh, gt, cams, n_samples=args.n_samples, seed=args.seed or 0)
    (out / "report.json").write_text(report.to_json())
    print(report.to_json())
    return 0


def cmd_pipeline(args) -> int:
    cfg = _build_config(args)
    bundle = scn.load_scenario(args.scenario)
    out = _out_dir(args)
    cfg.save(out / "config.txt")
    weights = _weights(cfg)

    m0 = refine_geometry(
        bundle.initial_mesh, bundle.normal_views,
        OptimConfig(iterations=cfg.iterations_geometry, step_size=cfg.step_geometry,
                    seed=cfg.seed),
        RefineWeights(), expansion_delta=cfg.expansion_delta, sigma=cfg.sigma,
        loss_csv=out / "loss_geometry.csv")
    save_ply(m0, out / "m0.ply")

    mc, fld, _ = enhance_appearance(
        m0, bundle.views, weights,
        OptimConfig(iterations=cfg.iterations_appearance, step_size=cfg.step_appearance,
                    seed=cfg.seed),
        grid_size=cfg.grid_size, cos_threshold=cfg.cos_threshold,
        loss_csv=out / "loss_appearance.csv")
    save_ply(mc, out / "mc.ply")
    for k, f in enumerate(fld):
        (out / f"field_out_{k}.json").write_text(f.to_json())

    if args.skip_fidelity:
        save_ply(mc, out / "md.ply")
        save_ply(mc, out / "mout.ply")
        final = mc
    else:
        input_img = bundle.input_image.image
        camera = estimate_camera(mc, input_img,
                                 distance=bundle.input_image.camera.distance,
                                 fov=bundle.input_image.camera.fov_deg,
                                 refine_iterations=cfg.iterations_camera)
        mout, md = enhance_fidelity(
            mc, input_img, camera, weights,
            OptimConfig(iterations=cfg.iterations_fidelity, step_size=cfg.step_fidelity,
                        seed=cfg.seed),
            cos_threshold=cfg.cos_threshold, loss_csv=out / "loss_fidelity.csv")
        save_ply(md, out / "md.ply")
        save_ply(mout, out / "mout.ply")
        final = mout

    cams = eval_cameras(resolution=min(cfg.resolution, 256))
    report = metrics.evaluate(final, bundle.gt_mesh, cams, seed=cfg.seed)
    (out / "report.json").write_text(report.to_json())
    save_png(render(final, bundle.input_image.camera, mode="hard").image,
             out / "final_render.png")
    print(f"pipeline finished; outputs in {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshenhance",
        description="Mesh appearance and fidelity enhancement pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_ENV} or cwd)")
        p.add_argument("--config", default=None, help="config file (key = value)")
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario bundle directory")
        _add_config_flags(p)

    p = sub.add_parser("generate-scenario", help="write a synthetic scenario bundle")
    p.add_argument("--name", required=True, choices=["sphere", "torus", "blob", "cube"])
    p.add_argument("--perturb-px", type=float, default=4.0)
    p.add_argument("--offset-amount", type=float, default=0.05)
    p.add_argument("--colors", default="gradient", choices=["checker", "gradient", "spots"])
    common(p, scenario=False)
    p.set_defaults(func=cmd_generate_scenario)

    p = sub.add_parser("refine-geometry", help="normal-map vertex refinement")
    common(p)
    p.set_defaults(func=cmd_refine_geometry)

    p = sub.add_parser("enhance-appearance", help="2D-field multiview repair + unprojection")
    p.add_argument("--mesh", default=None, help="override the scenario's initial mesh")
    common(p)
    p.set_defaults(func=cmd_enhance_appearance)

    p = sub.add_parser("enhance-fidelity", help="3D deformation toward the input image")
    p.add_argument("--mesh", default=None, help="override the scenario's initial mesh")
    p.add_argument("--deformer", default="jacobian", choices=["jacobian", "vertex", "grid3d"])
    p.add_argument("--estimate-camera", action="store_true",
                   help="search for the input pose instead of trusting the bundle")
    common(p)
    p.set_defaults(func=cmd_enhance_fidelity)

    p = sub.add_parser("evaluate", help="compare a mesh against ground truth")
    p.add_argument("--mesh", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--n-views", type=int, default=24)
    p.add_argument("--eval-resolution", type=int, default=256)
    p.add_argument("--n-samples", type=int, default=metrics.DEFAULT_N_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="full run: refine -> appearance -> fidelity")
    p.add_argument("--skip-fidelity", action="store_true",
                   help="stop after appearance enhancement")
    common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
