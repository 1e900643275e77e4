"""``rangediff`` command line: synth, preprocess, detect, project, train, sample, eval, export.

Every subcommand reads the YAML config (``--config``), writes into ``--out``
and echoes the effective config and seed there as ``run.yaml``.

Directory conventions::

    synth       OUT/lidar/NNNNNN.bin  OUT/radar/NNNNNN.bin  OUT/maps/NNNNNN.pmap  OUT/extrinsic.yaml
    preprocess  OUT/lidar/*.bin  OUT/radar/*.bin          (both in the radar frame)
    detect      OUT/radar/*.bin                           (CFAR on IN/maps/*.pmap)
    project     OUT/lidar/*.rimg (1 channel)  OUT/radar/*.rimg (C channels)
    train       OUT/model.ckpt  OUT/loss.txt
    sample      OUT/pred/*.rimg
    eval        OUT/metrics.txt  OUT/metrics.jsonl  OUT/cdf/*.txt
    export      OUT/*.ply
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import cfar, io
from .core import ConfigError, ImageGeometry, PointCloud, RigidTransform, SeededRng, spherical
from .diffusion import heun_sample, make_schedule
from .losses import LossWeights
from .metrics import cdf_export, evaluate
from .model import TrainConfig, load_checkpoint, save_checkpoint, smoothed, train
from .preprocess import GroundParams, PreprocessParams, preprocess_pair
from .projection import (backproject, denormalize, from_values, normalize, project, read_range_image,
                         slice_multichannel, write_range_image)
from .synth import LIDAR_TO_RADAR, SynthParams, make_scene

log = logging.getLogger("rangediff")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _frames(directory: Path, suffix: str, limit: int | None):
    files = sorted(directory.glob(f"*{suffix}"))
    return files[:limit] if limit is not None else files


def _write_run(out: Path, cfg: io.PipelineConfig, args, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    info = {"command": args.command, "seed": cfg.seed, "config": cfg.to_dict()}
    if extra:
        info.update(extra)
    (out / "run.yaml").write_text(yaml.safe_dump(info, sort_keys=False))


def _synth_params(cfg: io.PipelineConfig) -> SynthParams:
    s = cfg.synth
    return SynthParams(
        fov=cfg.fov.build(), lidar_shape=tuple(cfg.projection.lidar_shape),
        radar_shape=tuple(cfg.projection.radar_shape), channels=cfg.projection.channels,
        radar_rays=s.radar_rays, penetration_prob=s.penetration_prob,
        range_jitter=s.range_jitter, ghost_rate=s.ghost_rate,
    )


def _geoms(cfg):
    fov = cfg.fov.build()
    (lh, lw), (rh, rw) = cfg.projection.lidar_shape, cfg.projection.radar_shape
    return ImageGeometry(lw, lh, fov), ImageGeometry(rw, rh, fov)


def _read_cloud(path: Path, frame_id: str) -> PointCloud:
    if path.suffix == ".bin":
        return io.read_lidar_bin(path, frame_id)
    if path.suffix == ".ply":
        return io.read_ply(path).with_frame(frame_id)
    if path.suffix == ".rimg":
        return backproject(read_range_image(path), frame_id)
    raise ValueError(f"unsupported cloud file {path}")


def _read_extrinsic(path: Path) -> RigidTransform:
    if not path.exists():
        return RigidTransform.identity("lidar", "radar")
    d = yaml.safe_load(path.read_text())
    return RigidTransform(np.array(d["rotation"]), np.array(d["translation"]), d["source_frame"], d["target_frame"])


# --- subcommands ---------------------------------------------------------------


def cmd_synth(cfg, args):
    out = Path(args.out)
    n = args.frames if args.frames is not None else cfg.synth.scenes
    p = _synth_params(cfg)
    for sub in ("lidar", "radar", "maps"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    root = SeededRng(cfg.seed)
    for i in range(n):
        scene = make_scene(root.child(i).generator, p)
        io.write_lidar_bin(scene.lidar, out / "lidar" / f"{i:06d}.bin")
        io.write_lidar_bin(scene.radar, out / "radar" / f"{i:06d}.bin")
        pmap = _radar_power_map(scene.radar, p, root.child(10_000 + i))
        cfar.write_power_map(out / "maps" / f"{i:06d}.pmap", pmap)
    t = LIDAR_TO_RADAR
    (out / "extrinsic.yaml").write_text(yaml.safe_dump({
        "rotation": t.rotation.tolist(), "translation": t.translation.tolist(),
        "source_frame": t.source_frame, "target_frame": t.target_frame}))
    _write_run(out, cfg, args)
    return f"synth: {n} scenes -> {out}"


def _radar_power_map(radar: PointCloud, p: SynthParams, rng) -> cfar.PowerMap:
    fov = p.fov
    bins = dict(r0=0.0, dr=0.1, theta0=fov.theta_min, dtheta=fov.theta_span / 60,
                phi0=fov.phi_min, dphi=fov.phi_span / 8)
    shape = (int(np.ceil(fov.r_max / 0.1)), 60, 8)
    r, th, ph = spherical(radar.points)
    keep = (r < fov.r_max) & (th >= fov.theta_min) & (th < fov.theta_max) & (ph >= fov.phi_min) & (ph < fov.phi_max)
    targets = [(a, b, c, 15.0) for a, b, c in zip(r[keep], th[keep], ph[keep])]
    return cfar.synth_power_map(targets, rng, shape, **bins)


def cmd_detect(cfg, args):
    src, out = Path(args.input), Path(args.out)
    (out / "radar").mkdir(parents=True, exist_ok=True)
    c = cfg.cfar
    alpha = cfar.PRESETS[args.preset] if args.preset else c.alpha
    total = 0
    files = _frames(src / "maps", ".pmap", args.frames)
    for f in files:
        dets = cfar.os_cfar(cfar.read_power_map(f), c.guard, c.train, c.k_rank, alpha, c.window)
        cloud = cfar.detections_to_cloud(dets, "radar")
        io.write_lidar_bin(cloud, out / "radar" / f"{f.stem}.bin")
        total += len(dets)
    _write_run(out, cfg, args, {"alpha": alpha})
    return f"detect: {len(files)} maps, {total} detections -> {out}"


def cmd_preprocess(cfg, args):
    src, out = Path(args.input), Path(args.out)
    pc = cfg.preprocess
    params = PreprocessParams(
        cfg.fov.build(),
        GroundParams(pc.ransac_iterations, pc.dist_tol, pc.angle_tol_deg, pc.min_inlier_frac, cfg.seed),
        pc.dbscan_eps, pc.dbscan_min_pts,
    )
    ext = _read_extrinsic(src / "extrinsic.yaml")
    radar_dir = Path(args.radar_dir) if args.radar_dir else src / "radar"
    for sub in ("lidar", "radar"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    files = _frames(src / "lidar", ".bin", args.frames)
    kept = 0
    for f in files:
        lidar = io.read_lidar_bin(f, ext.source_frame or "lidar")
        radar = io.read_lidar_bin(radar_dir / f.name, ext.target_frame or "radar")
        lidar, radar = preprocess_pair(lidar, radar, params, ext)
        io.write_lidar_bin(lidar, out / "lidar" / f.name)
        io.write_lidar_bin(radar, out / "radar" / f.name)
        kept += len(lidar)
    _write_run(out, cfg, args)
    return f"preprocess: {len(files)} frames, {kept} LiDAR points kept -> {out}"


def cmd_project(cfg, args):
    src, out = Path(args.input), Path(args.out)
    lg, rg = _geoms(cfg)
    C = args.channels or cfg.projection.channels
    for sub in ("lidar", "radar"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    files = _frames(src / "lidar", ".bin", args.frames)
    for f in files:
        lidar = io.read_lidar_bin(f, "radar")
        radar = io.read_lidar_bin(src / "radar" / f.name, "radar")
        write_range_image(out / "lidar" / f"{f.stem}.rimg", project(lidar, lg))
        write_range_image(out / "radar" / f"{f.stem}.rimg",
                          slice_multichannel(radar, rg, C, cfg.projection.log_spaced))
    _write_run(out, cfg, args, {"channels": C})
    return f"project: {len(files)} frames -> {out}"


def _load_pairs(src: Path, limit):
    files = _frames(src / "lidar", ".rimg", limit)
    if not files:
        raise ValueError(f"no range images under {src / 'lidar'}")
    xs, vs, cs = [], [], []
    for f in files:
        t = normalize(read_range_image(f))
        c = normalize(read_range_image(src / "radar" / f.name))
        xs.append(t.values[0])
        vs.append(t.valid[0])
        cs.append(c.values)
    return files, {"x0": np.array(xs), "valid": np.array(vs), "cond": np.array(cs)}


def cmd_train(cfg, args):
    src, out = Path(args.input), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, data = _load_pairs(src, args.frames)
    t = cfg.train
    tcfg = TrainConfig(lr=t.lr, steps=args.steps if args.steps is not None else t.steps,
                       batch_size=t.batch_size, p_mean=t.p_mean, p_std=t.p_std,
                       weights=LossWeights(t.lambda_m, t.lambda_p, t.lambda_c),
                       seed=cfg.seed, grad_clip=t.grad_clip)
    model, curve = train(data, tcfg)
    save_checkpoint(model, out / "model.ckpt")
    np.savetxt(out / "loss.txt", curve, fmt="%.9g", header="combined_loss per step")
    _write_run(out, cfg, args, {"n_params": model.n_params, "sigma_data": model.cfg.sigma_data})
    sm = smoothed(curve)
    return f"train: {len(data['x0'])} pairs, {tcfg.steps} steps, smoothed loss {sm[0]:.4f} -> {sm[-1]:.4f}"


def cmd_sample(cfg, args):
    src, out = Path(args.input), Path(args.out)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    model = load_checkpoint(args.model)
    files, data = _load_pairs(src, args.frames)
    d = cfg.diffusion
    sched = make_schedule(d.sigma_min, d.sigma_max, d.rho, args.steps or d.steps)
    cond = data["cond"]
    if args.zero_condition:
        cond = np.zeros_like(cond)
    lg, _ = _geoms(cfg)
    x = heun_sample(model, sched, data["x0"].shape, cond, SeededRng(cfg.seed))
    for f, xi in zip(files, x):
        img = denormalize(from_values(xi, lg, cfg.metrics.invalid_below))
        write_range_image(out / "pred" / f.name, img)
    _write_run(out, cfg, args, {"steps": sched.n_steps})
    return f"sample: {len(files)} frames, {sched.n_steps} Heun steps -> {out / 'pred'}"


def _cloud_files(d: Path):
    files = {}
    for suf in (".rimg", ".bin", ".ply"):
        for f in sorted(d.glob(f"*{suf}")):
            files.setdefault(f.stem, f)
    return files


def cmd_eval(cfg, args):
    pred_dir, truth_dir, out = Path(args.pred), Path(args.truth), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds, truths = _cloud_files(pred_dir), _cloud_files(truth_dir)
    stems = sorted(set(preds) & set(truths))
    if args.frames is not None:
        stems = stems[: args.frames]
    if not stems:
        raise ValueError("no matching frames between prediction and truth")
    tau = cfg.metrics.tau
    rows = []
    if args.cdf:
        (out / "cdf").mkdir(exist_ok=True)
    for s in stems:
        p, t = _read_cloud(preds[s], "radar"), _read_cloud(truths[s], "radar")
        if len(p) == 0 or len(t) == 0:
            rows.append({"frame": s, "cd": None, "mhd": None, "fscore": 0.0, "precision": 0.0, "recall": 0.0,
                         "tau": tau, "n_pred": len(p), "n_true": len(t)})
            continue
        rep = evaluate(p, t, tau)
        rows.append({"frame": s, **rep.as_dict()})
        if args.cdf:
            cdf_export(rep, out / "cdf" / f"{s}.txt")
    ok = [r for r in rows if r["cd"] is not None]
    agg = {k: float(np.mean([r[k] for r in ok])) if ok else None for k in ("cd", "mhd", "fscore", "precision", "recall")}
    with open(out / "metrics.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
        fh.write(json.dumps({"frame": "MEAN", **agg, "n_frames": len(rows)}, sort_keys=True) + "\n")
    lines = [f"{'frame':>10} {'CD(m)':>9} {'MHD(m)':>9} {'F(%)':>7} {'P(%)':>7} {'R(%)':>7}"]
    fmt = lambda v, w, pr: f"{'nan':>{w}}" if v is None else f"{v:>{w}.{pr}f}"  # noqa: E731
    for r in rows + [{"frame": "MEAN", **agg}]:
        lines.append(f"{r['frame']:>10} {fmt(r['cd'], 9, 4)} {fmt(r['mhd'], 9, 4)} {fmt(r['fscore'], 7, 2)} "
                     f"{fmt(r['precision'], 7, 2)} {fmt(r['recall'], 7, 2)}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    _write_run(out, cfg, args)
    cd = "nan" if agg["cd"] is None else f"{agg['cd']:.4f}"
    return f"eval: {len(rows)} frames, mean CD {cd} m -> {out}"


def cmd_export(cfg, args):
    src, out = Path(args.input), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _cloud_files(src)
    stems = sorted(files)[: args.frames] if args.frames is not None else sorted(files)
    for s in stems:
        io.write_ply(_read_cloud(files[s], "radar"), out / f"{s}.ply")
    _write_run(out, cfg, args)
    return f"export: {len(stems)} clouds -> {out}"


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "detect": cmd_detect, "project": cmd_project,
    "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "export": cmd_export,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rangediff", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, inp=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML pipeline config (defaults if omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--frames", type=int, help="process only the first N frames")
        p.add_argument("--channels", type=int, help="override projection.channels")
        if inp:
            p.add_argument("--in", dest="input", required=True, help="input directory")
        return p

    add("synth", "generate box-world scenes", inp=False)
    add("preprocess", "align, crop, remove floor/ceiling, radar-guided filter").add_argument(
        "--radar-dir", help="radar clouds directory (default IN/radar)")
    add("detect", "OS-CFAR on power maps").add_argument("--preset", choices=sorted(cfar.PRESETS))
    add("project", "clouds to range images")
    p = add("train", "train the toy denoiser")
    p.add_argument("--steps", type=int)
    p = add("sample", "Heun sampling conditioned on radar range images")
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--zero-condition", action="store_true")
    p = add("eval", "CD / MHD / F-score against ground truth", inp=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--cdf", action="store_true", help="write per-frame CDF tables")
    add("export", "write PLY files")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = io.load_config(args.config) if args.config else io.config_from_dict({})
        if args.seed is not None:
            cfg.seed = args.seed
        if args.channels is not None:
            cfg.projection.channels = args.channels
        cfg.validate()
    except (UsageError, ConfigError) as e:
        print(f"rangediff: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        print(COMMANDS[args.command](cfg, args))
    except (ConfigError,) as e:
        print(f"rangediff: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as e:
        print(f"rangediff: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
