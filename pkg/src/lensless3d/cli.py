"""Command-line entry point wiring the pipeline end to end.

Subcommands: simulate, reconstruct, sweepcam, fuse, evaluate,
optimize-masks, masks, benchmark, pipeline.

Run configs are plain text files with ``key = value`` lines; the key set
is fixed (unknown keys are rejected) and documented in the repo README.
Exit codes: 0 success, 2 config/usage error, 3 numerical failure.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import fusion, masks as mask_families
from .forward import MeasurementSet, PlaneStack, add_noise, simulate
from .geometry import CameraGeometry, GeometryError, sample_depths
from .maskopt import OptimConfig, RelaxedMaskVariable, optimize_masks
from .psf import MaskPattern, MaskSet, PsfStack, synthesize_stack
from .recon import (ReconConfig, SingularSystemError, condition_report,
                    reconstruct_separable, reconstruct_sweepcam)
from .scene_io import (StackFormatError, generate_procedural_scene,
                       read_manifest, read_stack, write_manifest, write_stack)

EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class ConfigError(ValueError):
    pass


_CONFIG_KEYS = {
    # geometry
    "mask_distance_mm": float,
    "sensor_pitch_um": float,
    "mask_pitch_um": float,
    "sensor_rows": int,
    "sensor_cols": int,
    "mask_rows": int,
    "mask_cols": int,
    # depth sampling
    "z_min_mm": float,
    "z_max_mm": float,
    "num_planes": int,
    # masks
    "num_masks": int,
    "mask_kind": str,
    # solver
    "tau0": float,
    "tau_rule": str,
    "workers": int,
    # noise / reproducibility
    "snr_db": float,
    "seed": int,
}

_REQUIRED_KEYS = ("mask_distance_mm", "sensor_pitch_um", "mask_pitch_um",
                  "sensor_rows", "sensor_cols", "mask_rows", "mask_cols",
                  "z_min_mm", "z_max_mm", "num_planes", "num_masks")

_DEFAULTS = {"mask_kind": "random", "tau0": 1e-6, "tau_rule": "constant",
             "snr_db": np.inf, "seed": 0, "workers": 1}


def load_config(path):
    """Parse a key = value run config; unknown or missing keys are errors."""
    try:
        raw = read_manifest(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg = dict(_DEFAULTS)
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        conv = _CONFIG_KEYS[key]
        try:
            cfg[key] = conv(value) if value != "inf" else np.inf
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {value!r}") from exc
    for key in _REQUIRED_KEYS:
        if key not in cfg:
            raise ConfigError(f"{path}: missing required key {key!r}")
    return cfg


def geometry_from_config(cfg):
    return CameraGeometry(
        mask_distance_mm=cfg["mask_distance_mm"],
        sensor_pitch_um=cfg["sensor_pitch_um"],
        mask_pitch_um=cfg["mask_pitch_um"],
        sensor_dims=(cfg["sensor_rows"], cfg["sensor_cols"]),
        mask_dims=(cfg["mask_rows"], cfg["mask_cols"]),
    )


def depths_from_config(cfg, geom):
    return sample_depths(geom, cfg["z_min_mm"], cfg["z_max_mm"],
                         cfg["num_planes"])


def recon_config(cfg):
    return ReconConfig(tau0=cfg["tau0"], tau_rule=cfg["tau_rule"],
                       workers=cfg["workers"])


def _maskset_from_array(arr, binary=True):
    return MaskSet(tuple(MaskPattern(v, is_binary=binary) for v in arr))


def _save_png(path, array, bit_depth=8):
    from PIL import Image
    arr = np.asarray(array, dtype=float)
    if arr.ndim == 3:  # C x rows x cols -> rows x cols x C
        arr = np.moveaxis(arr, 0, -1)
    if bit_depth == 16:
        Image.fromarray(np.clip(arr, 0, 65535).astype(np.uint16)).save(path)
    else:
        lo, hi = arr.min(), arr.max()
        scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
        mode = "RGB" if arr.ndim == 3 else "L"
        Image.fromarray((scaled * 255).astype(np.uint8), mode=mode).save(path)


def _config_manifest(cfg, extra=None):
    entries = {k: cfg[k] for k in sorted(cfg)}
    if extra:
        entries.update(extra)
    return entries


def _simulate_run(cfg, scene_path, out, mask_file=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    geom = geometry_from_config(cfg)
    depths = depths_from_config(cfg, geom)
    if mask_file:
        masks = _maskset_from_array(read_stack(mask_file))
    else:
        masks = mask_families.make_masks(
            cfg["mask_kind"], cfg["num_masks"],
            (cfg["mask_rows"], cfg["mask_cols"]), seed=cfg["seed"])
    if scene_path is None:
        scene, index_map = generate_procedural_scene(
            cfg["seed"], depths, geom.sensor_dims)
    else:
        planes = read_stack(scene_path)
        scene = PlaneStack(planes=planes, depths=depths)
        support = scene.planes.sum(axis=1)  # D x rows x cols grayscale
        index_map = np.argmax(support, axis=0)
        index_map[support.max(axis=0) == 0] = -1
    psfs = synthesize_stack(masks, geom, depths)
    meas = add_noise(simulate(scene, psfs), cfg["snr_db"],
                     rng_seed=[cfg["seed"], 1])
    write_stack(out / "measurements.l3d", meas.frames)
    write_stack(out / "psfs.l3d", psfs.psfs)
    write_stack(out / "masks.l3d", masks.as_array())
    write_stack(out / "truth_planes.l3d", scene.planes)
    write_stack(out / "truth_index_map.l3d", index_map.astype(np.float64))
    write_manifest(out / "manifest.txt", _config_manifest(cfg, {
        "alphas": ",".join(f"{a:.9f}" for a in depths.alphas),
        "depths_mm": ",".join(f"{z:.6f}" for z in depths.depths_z_mm),
    }))
    return geom, depths, masks, psfs, meas, scene, index_map


def cmd_simulate(args):
    cfg = load_config(args.config)
    _simulate_run(cfg, None if args.procedural else args.scene, args.out,
                  mask_file=args.masks)
    return 0


def _load_psf_stack(cfg, psf_file):
    geom = geometry_from_config(cfg)
    depths = depths_from_config(cfg, geom)
    return PsfStack(psfs=read_stack(psf_file), geometry=geom, depths=depths)


def cmd_reconstruct(args):
    cfg = load_config(args.config)
    if args.tau0 is not None:
        cfg["tau0"] = args.tau0
    if args.tau_rule is not None:
        cfg["tau_rule"] = args.tau_rule
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    psfs = _load_psf_stack(cfg, args.psf)
    meas = MeasurementSet(frames=read_stack(args.measurements))
    rcfg = recon_config(cfg)
    planes = reconstruct_separable(meas, psfs, rcfg)
    write_stack(out / "planes.l3d", planes.planes)
    conds = condition_report(psfs, rcfg)
    write_manifest(out / "manifest.txt", _config_manifest(cfg, {
        "condition_min": repr(float(conds.min())),
        "condition_median": repr(float(np.median(conds))),
        "condition_max": repr(float(conds.max())),
    }))
    return 0


def cmd_sweepcam(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    psfs = _load_psf_stack(cfg, args.psf)
    meas = MeasurementSet(frames=read_stack(args.measurements))
    planes = np.stack([
        reconstruct_sweepcam(meas, psfs, z, cfg["tau0"])
        for z in range(psfs.num_planes)])
    write_stack(out / "planes.l3d", planes)
    write_manifest(out / "manifest.txt", _config_manifest(cfg))
    return 0


def cmd_fuse(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    planes = PlaneStack(planes=read_stack(args.planes), is_reconstruction=True)
    denoiser = (fusion.gaussian_plane_denoiser(args.denoise_sigma)
                if args.denoise_sigma else None)
    result = fusion.local_contrast_fuse(planes, window=args.window,
                                        denoiser=denoiser)
    write_stack(out / "all_in_focus.l3d", result.all_in_focus)
    write_stack(out / "plane_index_map.l3d",
                result.plane_index_map.astype(np.float64))
    write_stack(out / "confidence.l3d", result.confidence)
    _save_png(out / "all_in_focus.png", result.all_in_focus)
    _save_png(out / "depth_mm.png", result.depth_map_mm, bit_depth=16)
    write_manifest(out / "manifest.txt",
                   {"window": args.window, "depth_png_units": "mm"})
    return 0


def _write_report(path, report):
    write_manifest(path, {
        "ssim": repr(report.ssim),
        "depth_accuracy": repr(report.depth_accuracy),
        "depth_odds_ratio": repr(report.depth_odds_ratio),
        "per_plane_mse": ",".join(repr(v) for v in report.per_plane_mse),
    })


def cmd_evaluate(args):
    pred = PlaneStack(
        planes=np.clip(read_stack(Path(args.pred) / "planes.l3d"), 0.0, None),
        is_reconstruction=True)
    truth_dir = Path(args.truth)
    truth = PlaneStack(planes=read_stack(truth_dir / "truth_planes.l3d"))
    index_map = read_stack(truth_dir / "truth_index_map.l3d").astype(int)
    report, _ = fusion.evaluate(pred, truth, index_map, window=args.window)
    _write_report(Path(args.out), report)
    return 0


def cmd_masks(args):
    if args.kind == "learned-file":
        arr = read_stack(args.learned_file)
        maskset = _maskset_from_array(arr)
    else:
        maskset = mask_families.make_masks(
            args.kind, args.count, (args.rows, args.cols), seed=args.seed)
    write_stack(args.out, maskset.as_array())
    return 0


def cmd_optimize_masks(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geom = geometry_from_config(cfg)
    depths = depths_from_config(cfg, geom)
    rng = np.random.default_rng(args.seed)
    scenes = [generate_procedural_scene([args.seed, 101, i], depths,
                                        geom.sensor_dims)[0]
              for i in range(args.num_scenes)]
    ocfg = OptimConfig(epochs=args.epochs, scenes=scenes,
                       learning_rate=args.learning_rate,
                       snr_db=cfg["snr_db"], tau0=cfg["tau0"],
                       tau_rule=cfg["tau_rule"])
    init = RelaxedMaskVariable(
        w=rng.normal(scale=0.1, size=(cfg["num_masks"],) + geom.mask_dims))
    learned, curve = optimize_masks(init, geom, depths, ocfg,
                                    rng_seed=args.seed)
    write_stack(out / "learned_masks.l3d", learned.as_array())
    with open(out / "loss_curve.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(curve):
            writer.writerow([i, repr(v)])
    for k, pat in enumerate(learned.patterns):
        _save_png(out / f"mask_{k:02d}.png", pat.values)
    write_manifest(out / "manifest.txt", _config_manifest(cfg, {
        "epochs": args.epochs, "num_scenes": args.num_scenes}))
    return 0


def cmd_pipeline(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geom, depths, masksets, psfs, meas, scene, index_map = _simulate_run(
        cfg, args.scene, out / "sim")
    if args.sweepcam:
        planes_arr = np.stack([
            reconstruct_sweepcam(meas, psfs, z, cfg["tau0"])
            for z in range(depths.count)])
        planes = PlaneStack(planes=planes_arr, depths=depths,
                            is_reconstruction=True)
    else:
        planes = reconstruct_separable(meas, psfs, recon_config(cfg))
    write_stack(out / "recon_planes.l3d", planes.planes)
    # intensities are nonnegative; clipping noise excursions in dark
    # regions markedly improves the fused image
    clipped = PlaneStack(planes=np.clip(planes.planes, 0.0, None),
                         depths=depths, is_reconstruction=True)
    report, result = fusion.evaluate(clipped, scene, index_map,
                                     window=args.window)
    write_stack(out / "all_in_focus.l3d", result.all_in_focus)
    _save_png(out / "all_in_focus.png", result.all_in_focus)
    _save_png(out / "depth_mm.png", result.depth_map_mm, bit_depth=16)
    _write_report(out / "report.txt", report)
    write_manifest(out / "manifest.txt", _config_manifest(cfg, {
        "sweepcam": bool(args.sweepcam)}))
    return 0


def _time_separable(meas, psfs, rcfg, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        reconstruct_separable(meas, psfs, rcfg)
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_benchmark(args):
    from .recon import reconstruct_dense_oracle
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    K = D = args.kd
    rows_list = [16, 32, 64, 128]
    rng = np.random.default_rng(0)
    records = []
    for n in rows_list:
        geom = CameraGeometry(10.0, 40.0, 40.0, (n, n),
                              (min(15, n - 1) | 1,) * 2)
        depths = sample_depths(geom, 20, 200, D)
        masks = mask_families.random_masks(K, geom.mask_dims, seed=1)
        psfs = synthesize_stack(masks, geom, depths)
        scene = PlaneStack(planes=rng.uniform(0, 1, (D, 1, n, n)),
                           depths=depths)
        meas = simulate(scene, psfs)
        t = _time_separable(meas, psfs, ReconConfig(tau0=1e-6))
        records.append({"benchmark": "separable_vs_M", "M": n * n,
                        "K": K, "D": D, "seconds": t})
        if n * n * D <= 4096 // 2:
            t0 = time.perf_counter()
            reconstruct_dense_oracle(meas, psfs, 1e-6)
            records.append({"benchmark": "dense_oracle", "M": n * n,
                            "K": K, "D": D,
                            "seconds": time.perf_counter() - t0})
    with open(out / "benchmark.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["benchmark", "M", "K", "D",
                                               "seconds"])
        writer.writeheader()
        writer.writerows(records)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lensless3d",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate measurements for a scene")
    s.add_argument("--config", required=True)
    s.add_argument("--scene", help="tensor-stack file of D x C x rows x cols planes")
    s.add_argument("--procedural", action="store_true",
                   help="generate a procedural scene instead of reading one")
    s.add_argument("--masks", help="optional mask set file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="separable multi-plane solve")
    s.add_argument("--config", required=True)
    s.add_argument("--measurements", required=True)
    s.add_argument("--psf", required=True)
    s.add_argument("--tau0", type=float)
    s.add_argument("--tau-rule", choices=("constant", "frobenius_scaled"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("sweepcam", help="single-plane focusing baseline")
    s.add_argument("--config", required=True)
    s.add_argument("--measurements", required=True)
    s.add_argument("--psf", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweepcam)

    s = sub.add_parser("fuse", help="all-in-focus fusion and depth map")
    s.add_argument("--planes", required=True)
    s.add_argument("--window", type=int, default=9)
    s.add_argument("--denoise-sigma", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate", help="score a reconstruction against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--window", type=int, default=9)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("masks", help="generate a mask set file")
    s.add_argument("--kind", required=True,
                   choices=("random", "mls", "shifted_mls", "learned-file"))
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--rows", type=int, default=63)
    s.add_argument("--cols", type=int, default=63)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--learned-file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_masks)

    s = sub.add_parser("optimize-masks", help="learn mask patterns")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--num-scenes", type=int, default=20)
    s.add_argument("--learning-rate", type=float, default=0.01)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_optimize_masks)

    s = sub.add_parser("benchmark", help="solver timing table")
    s.add_argument("--kd", type=int, default=8, help="K = D for the sweep")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("pipeline", help="simulate -> reconstruct -> fuse -> evaluate")
    s.add_argument("--config", required=True)
    s.add_argument("--scene")
    s.add_argument("--sweepcam", action="store_true")
    s.add_argument("--window", type=int, default=9)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so numerical failures come first
    except (SingularSystemError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR
    except (ConfigError, StackFormatError, GeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
