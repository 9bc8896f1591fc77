"""Command-line front end.

Thin argument parsing over the core package: render scenes, run edit
training, render blended results, evaluate edits, or start the HTTP
service. Failures exit nonzero with a machine-readable JSON error on
stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import blending, geometry, guidance, imageio, metrics, renderer, scenes, trainer
from .guidance import MockScorer


def _load_pose(scene: scenes.SceneDescriptor, pose_arg):
    if pose_arg is None:
        return scene.pose()
    p = Path(pose_arg)
    if p.exists():
        return scenes.pose_from_dict(json.loads(p.read_text()))
    return scenes.pose_from_dict(json.loads(pose_arg))


def _load_poses(scene: scenes.SceneDescriptor, args) -> list:
    if getattr(args, "poses", None):
        docs = json.loads(Path(args.poses).read_text())
        return [scenes.pose_from_dict(d) for d in docs]
    return [_load_pose(scene, getattr(args, "pose", None))]


def _orbit_poses(scene: scenes.SceneDescriptor, count: int, spacing_deg: float) -> list:
    """Consecutive frames on an orbit around the scene center, starting at
    the default pose's azimuth."""
    base = scene.pose()
    target = 0.5 * (scene.bounds_min + scene.bounds_max)
    radius = float(np.linalg.norm(base.position - target))
    el = math.radians(base.elevation_deg)
    az0 = math.radians(base.azimuth_deg)
    poses = []
    for i in range(count):
        az = az0 + math.radians(spacing_deg) * i
        forward = np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        poses.append(geometry.look_at(target - radius * forward, target, base.afov))
    return poses


def _save_render(output, out_path: Path, save_aux: bool):
    imageio.save_png(output.rgb_array(), out_path)
    if save_aux:
        stem = out_path.with_suffix("")
        imageio.save_scalar_map(
            output.disparity.detach().numpy(), Path(str(stem) + ".disparity")
        )
        imageio.save_scalar_map(
            output.final_transmittance.detach().numpy(),
            Path(str(stem) + ".transmittance"),
        )


def _mock_scorer_for(args, caption: str, render_resolution: int) -> MockScorer:
    if getattr(args, "mock_target", None):
        target = imageio.load_png(args.mock_target)
    else:
        target = guidance.default_mock_target(caption, render_resolution)
    scorer = MockScorer(input_resolution=max(render_resolution, 32))
    scorer.register(caption, target)
    return scorer


def _scorer_for(args, caption: str, render_resolution: int):
    if args.scorer == "mock":
        return _mock_scorer_for(args, caption, render_resolution)
    if args.scorer == "external":
        if not getattr(args, "scorer_url", None):
            raise ValueError("--scorer external requires --scorer-url")
        return guidance.HttpScorerAdapter(args.scorer_url)
    raise ValueError(f"unknown scorer {args.scorer!r}")


def cmd_render(args) -> int:
    scene = scenes.load_scene(args.scene)
    pose = _load_pose(scene, args.pose)
    res = args.res or scene.resolution
    with torch.no_grad():
        output = renderer.render_view(
            scene.load_field(), pose, res, scene.render_settings(),
            background=(0.0, 0.0, 0.0),
        )
    _save_render(output, Path(args.out), args.save_aux)
    print(json.dumps({"out": str(args.out), "resolution": res}))
    return 0


def cmd_edit_train(args) -> int:
    scene = scenes.load_scene(args.scene)
    edit = scenes.load_edit(args.edit)
    scenes.validate_edit(scene, edit)
    cfg = trainer.TrainConfig(
        steps=args.steps,
        seed=args.seed,
        afov_deg=math.degrees(scene.afov),
        render_resolution=args.render_res,
        n_samples=args.train_samples,
        mode=edit.mode,
        freeze_density=edit.texture_only,
        pose=geometry.PoseSamplingConfig(scene_type=scene.scene_type),
    )
    scorer = _scorer_for(args, edit.caption, args.render_res)
    out_dir = Path(args.out_dir)
    result = trainer.train(
        scene.load_field(), edit.box, edit.caption, cfg, scorer, out_dir,
        scene_id=scene.scene_id, resume_from=args.resume_from,
    )
    print(json.dumps({
        "checkpoint": str(result.checkpoint_path),
        "edit": str(out_dir / "edit.json"),
        "history": str(out_dir / "history.csv"),
        "final_loss": result.history[-1]["total"] if result.history else None,
    }))
    return 0


def _blended_output(scene, edit, pose, res):
    field_o = scene.load_field()
    field_g = edit.load_field()
    with torch.no_grad():
        return blending.render_blended(
            field_o, field_g, edit.box, edit.mode, pose, res,
            scene.render_settings(), center=edit.center(),
        )


def cmd_blend_render(args) -> int:
    scene = scenes.load_scene(args.scene)
    edit = scenes.load_edit(args.edit)
    scenes.validate_edit(scene, edit)
    poses = _load_poses(scene, args)
    res = args.res or scene.resolution
    out = Path(args.out)
    written = []
    if len(poses) == 1 and out.suffix == ".png":
        _save_render(_blended_output(scene, edit, poses[0], res), out, args.save_aux)
        written.append(str(out))
    else:
        out.mkdir(parents=True, exist_ok=True)
        for i, pose in enumerate(poses):
            path = out / f"frame_{i:03d}.png"
            _save_render(_blended_output(scene, edit, pose, res), path, args.save_aux)
            written.append(str(path))
    print(json.dumps({"frames": written}))
    return 0


def cmd_evaluate(args) -> int:
    scene = scenes.load_scene(args.scene)
    edit = scenes.load_edit(args.edit)
    scenes.validate_edit(scene, edit)
    res = args.res or scene.resolution
    if args.poses:
        poses = _load_poses(scene, args)
    else:
        poses = _orbit_poses(scene, args.frames, args.frame_spacing_deg)

    field_o = scene.load_field()
    field_g = edit.load_field()
    originals, editeds, masks = [], [], []
    settings = scene.render_settings()
    for pose in poses:
        with torch.no_grad():
            orig = renderer.render_view(field_o, pose, res, settings)
            edited = blending.render_blended(
                field_o, field_g, edit.box, edit.mode, pose, res, settings,
                center=edit.center(),
            )
        originals.append(orig.rgb_array())
        editeds.append(edited.rgb_array())
        origins, dirs = renderer.pixel_rays(pose, res, res)
        hit, _, _ = geometry.intersect_rays_aabb(
            origins, dirs, edit.box, settings.near, settings.far
        )
        masks.append(hit.reshape(res, res))

    caption_pool = [edit.caption]
    if args.captions:
        caption_pool = json.loads(Path(args.captions).read_text())
        if edit.caption not in caption_pool:
            caption_pool.append(edit.caption)
    scorer = _mock_scorer_for(args, edit.caption, res)

    report = {
        "direction_similarity": metrics.direction_similarity(
            scorer, originals[0], editeds[0], args.orig_caption, edit.caption
        ),
        "direction_consistency": metrics.direction_consistency(scorer, originals, editeds),
        "r_precision": metrics.r_precision(
            scorer, [editeds[0]], [edit.caption], caption_pool
        ),
        "masked_bg_mad": float(
            np.mean([
                metrics.masked_background_mad(o, e, m)
                for o, e, m in zip(originals, editeds, masks)
            ])
        ),
        "frames": len(poses),
    }
    out = Path(args.out)
    out.write_text(json.dumps(report, indent=2))
    print(json.dumps(report))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        scenes_dir=args.scenes_dir, jobs_dir=args.jobs_dir,
        frontend_dir=args.frontend_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roifield", description="Radiance-field ROI editing engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=123)
        p.add_argument("--res", type=int, default=None)
        p.add_argument("--save-aux", action="store_true",
                       help="also write disparity/transmittance maps")

    p = sub.add_parser("render", help="render the original scene")
    p.add_argument("scene")
    p.add_argument("--pose", default=None, help="pose JSON string or file")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("edit-train", help="optimize an edit")
    p.add_argument("scene")
    p.add_argument("edit")
    p.add_argument("--scorer", choices=["mock", "external"], default="mock")
    p.add_argument("--scorer-url", default=None)
    p.add_argument("--mock-target", default=None, help="PNG target for the mock scorer")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--render-res", type=int, default=32)
    p.add_argument("--train-samples", type=int, default=32)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume-from", default=None)
    p.add_argument("--seed", type=int, default=123)
    p.set_defaults(func=cmd_edit_train)

    p = sub.add_parser("blend-render", help="render the edited scene")
    p.add_argument("scene")
    p.add_argument("edit")
    p.add_argument("--pose", default=None)
    p.add_argument("--poses", default=None, help="JSON file with a list of poses")
    p.add_argument("--out", required=True, help="PNG path or frame directory")
    common(p)
    p.set_defaults(func=cmd_blend_render)

    p = sub.add_parser("evaluate", help="compute edit metrics")
    p.add_argument("scene")
    p.add_argument("edit")
    p.add_argument("--pose", default=None)
    p.add_argument("--poses", default=None)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--frame-spacing-deg", type=float, default=10.0)
    p.add_argument("--orig-caption", default="the original scene")
    p.add_argument("--captions", default=None, help="JSON file with the caption pool")
    p.add_argument("--mock-target", default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--scenes-dir", default=None)
    p.add_argument("--jobs-dir", default=None)
    p.add_argument("--frontend-dir", default=None,
                   help="built UI directory (defaults to frontend/dist if present)")
    p.add_argument("--seed", type=int, default=123)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
