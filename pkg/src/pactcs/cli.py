"""Command-line experiment runner.

Every subcommand resolves its parameters in three layers: built-in defaults,
then a ``key = value`` config file (``--config``), then explicit flags. The
resolved values are written to ``<out>/manifest.txt``, which is itself a
valid config file, so any run can be reproduced bit-for-bit with

    pactcs <command> --config <out>/manifest.txt --out <new-dir>
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .dip import DipConfig, dip_reconstruct
from .exceptions import DivergenceError
from .geometry import make_grid, make_sensor_array
from .metrics import minmax, psnr, snr, ssim
from .operators import add_noise, apply_mask, forward, forward_geometry, make_mask
from .phantoms import vessel_phantom
from .recon import estimate_normal_operator_norm, recon_tv, ubp
from .studies import (
    StudyPreset,
    preset_by_name,
    quality_metrics,
    run_ablation_study,
    run_iteration_study,
    scale_to_units,
)
from .tensorio import (
    FormatError,
    export_pgm,
    load_image,
    load_mask,
    load_sinogram,
    save_image,
    save_mask,
    save_sinogram,
    write_tensor,
)

# ---------------------------------------------------------------------------
# config files and manifests
# ---------------------------------------------------------------------------

def read_config(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def write_manifest(out_dir: Path, command: str, params: dict) -> None:
    lines = [f"command = {command}"]
    for key in sorted(params):
        lines.append(f"{key} = {params[key]}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _resolve(args, spec: dict[str, tuple], command: str) -> dict:
    """Layer defaults <- config file <- explicit flags; return typed values."""
    merged = {key: default for key, (default, _) in spec.items()}
    if args.config:
        file_values = read_config(args.config)
        recorded = file_values.pop("command", command)
        if recorded != command:
            raise ValueError(
                f"config file was written for {recorded!r}, not {command!r}"
            )
        for key, value in file_values.items():
            if key not in spec:
                raise ValueError(f"unknown config key {key!r} for {command}")
            merged[key] = spec[key][1](value)
    for key in spec:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    missing = [k for k, v in merged.items() if v is None]
    if missing:
        raise ValueError(f"missing required parameters: {', '.join(missing)}")
    return merged


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).replace(",", " ").split())


def _geometry_from_files(p: dict, sino, mask):
    grid = make_grid(int(p["grid"]), int(p["grid"]), p["extent_mm"] * 1e-3)
    sensors = make_sensor_array(mask.total_channels, p["radius_mm"] * 1e-3)
    return forward_geometry(
        grid,
        sensors,
        sound_speed=sino.sound_speed,
        dt=sino.dt,
        t0=sino.t0,
        n_samples=sino.n_samples,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    spec = {
        "grid": (64, int), "extent_mm": (30.0, float),
        "seed": (0, int), "branches": (4, int),
    }
    p = _resolve(args, spec, "phantom")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = make_grid(int(p["grid"]), int(p["grid"]), p["extent_mm"] * 1e-3)
    img = vessel_phantom(grid, seed=int(p["seed"]), n_branches=int(p["branches"]))
    save_image(out / "phantom.padt", img)
    export_pgm(img, out / "phantom.pgm")
    write_manifest(out, "phantom", p)
    print(f"wrote {out / 'phantom.padt'}")
    return 0


def cmd_simulate(args) -> int:
    spec = {
        "phantom": (None, str), "sensors": (128, int), "radius_mm": (14.5, float),
        "sound_speed": (1500.0, float), "time_oversample": (1.0, float),
        "dt_ns": (0.0, float),
    }
    p = _resolve(args, spec, "simulate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img = load_image(p["phantom"])
    geom = forward_geometry(
        img.grid,
        make_sensor_array(int(p["sensors"]), p["radius_mm"] * 1e-3),
        sound_speed=p["sound_speed"],
        dt=(p["dt_ns"] * 1e-9) if p["dt_ns"] else img.grid.dx
        / (2.0 * p["sound_speed"] * p["time_oversample"]),
    )
    sino = forward(img, geom)
    save_sinogram(out / "sino.padt", sino)
    write_manifest(out, "simulate", p)
    print(f"wrote {out / 'sino.padt'} ({sino.n_channels} channels x {sino.n_samples} samples)")
    return 0


def cmd_noise(args) -> int:
    spec = {"sino": (None, str), "snr_db": (40.0, float), "seed": (0, int)}
    p = _resolve(args, spec, "noise")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sino = load_sinogram(p["sino"])
    noisy = add_noise(sino, p["snr_db"], seed=int(p["seed"]))
    save_sinogram(out / "sino_noisy.padt", noisy)
    write_manifest(out, "noise", p)
    print(f"wrote {out / 'sino_noisy.padt'}")
    return 0


def cmd_mask(args) -> int:
    spec = {
        "channels": (128, int), "keep": (0.5, float),
        "scheme": ("uniform", str), "seed": (0, int), "sino": ("", str),
    }
    p = _resolve(args, spec, "mask")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mask = make_mask(int(p["channels"]), p["keep"], p["scheme"], seed=int(p["seed"]))
    save_mask(out / "mask.padt", mask)
    if p["sino"]:
        sino = load_sinogram(p["sino"])
        save_sinogram(out / "sino_masked.padt", apply_mask(sino, mask))
    write_manifest(out, "mask", p)
    print(f"wrote {out / 'mask.padt'} ({mask.n_kept} of {mask.total_channels} kept)")
    return 0


_RECON_GEOM_SPEC = {
    "sino": (None, str), "mask": (None, str),
    "grid": (64, int), "extent_mm": (30.0, float), "radius_mm": (14.5, float),
    "data_scale": (0.0, float),
}


def _load_recon_inputs(p):
    sino = load_sinogram(p["sino"])
    mask = load_mask(p["mask"])
    geom = _geometry_from_files(p, sino, mask)
    if p["data_scale"]:
        sino = scale_to_units(sino, p["data_scale"])
    return sino, mask, geom


def cmd_recon_ubp(args) -> int:
    p = _resolve(args, _RECON_GEOM_SPEC, "recon-ubp")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sino, mask, geom = _load_recon_inputs(p)
    img = ubp(sino, geom, mask)
    save_image(out / "recon_ubp.padt", img)
    export_pgm(img, out / "recon_ubp.pgm")
    write_manifest(out, "recon-ubp", p)
    print(f"wrote {out / 'recon_ubp.padt'}")
    return 0


def cmd_recon_tv(args) -> int:
    spec = dict(_RECON_GEOM_SPEC)
    spec.update({"tv_weight": (0.1, float), "iters": (300, int), "inner_iters": (20, int)})
    p = _resolve(args, spec, "recon-tv")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sino, mask, geom = _load_recon_inputs(p)
    lip = estimate_normal_operator_norm(geom, mask)
    result = recon_tv(
        sino, mask, geom, lam=p["tv_weight"], step=0.9 / lip,
        iters=int(p["iters"]), inner_iters=int(p["inner_iters"]),
    )
    save_image(out / "recon_tv.padt", result.image)
    export_pgm(result.image, out / "recon_tv.pgm")
    rows = [f"{i},{v!r}" for i, v in enumerate(result.objective, start=1)]
    (out / "history.csv").write_text("iter,dc_objective\n" + "\n".join(rows) + "\n")
    write_manifest(out, "recon-tv", p)
    print(f"wrote {out / 'recon_tv.padt'}")
    return 0


def cmd_recon_dip(args) -> int:
    spec = dict(_RECON_GEOM_SPEC)
    spec.update({
        "iters": (700, int), "lambda1": (0.006, float), "lambda2": (0.05, float),
        "lr": (1e-3, float), "seed": (0, int), "channels": (32, int),
        "snapshot_every": (100, int), "truth": ("", str),
        "normalize_prior": (1, int),
    })
    p = _resolve(args, spec, "recon-dip")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sino, mask, geom = _load_recon_inputs(p)
    f_d = ubp(sino, geom, mask)
    save_image(out / "fd.padt", f_d)
    export_pgm(f_d, out / "fd.pgm")
    cfg = DipConfig(
        lambda_tv=p["lambda1"], lambda_shape=p["lambda2"], iters=int(p["iters"]),
        lr=p["lr"], seed=int(p["seed"]), snapshot_every=int(p["snapshot_every"]),
        channels=int(p["channels"]), normalize_prior=bool(p["normalize_prior"]),
    )
    result = dip_reconstruct(sino, mask, geom, f_d, cfg)
    save_image(out / "recon_dip.padt", result.image)
    export_pgm(result.image, out / "recon_dip.pgm")
    if result.snapshots:
        write_tensor(
            out / "snapshots.padt",
            {f"iter{it:05d}": img.values for it, img in result.snapshots},
        )

    truth = load_image(p["truth"]) if p["truth"] else None
    scored = (
        {it: quality_metrics(img, truth) for it, img in result.snapshots}
        if truth is not None
        else {}
    )
    header = "iter,dc_loss,tv,sp_loss,total"
    if truth is not None:
        header += ",ssim,psnr,snr"
    lines = [header]
    for row in result.history:
        it = int(row[0])
        text = f"{it}," + ",".join(repr(float(v)) for v in row[1:])
        if truth is not None:
            m = scored.get(it)
            text += ("," + ",".join(repr(m[k]) for k in ("ssim", "psnr", "snr"))) if m else ",,,"
        lines.append(text)
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    write_manifest(out, "recon-dip", p)
    print(f"wrote {out / 'recon_dip.padt'}")
    return 0


def cmd_metrics(args) -> int:
    spec = {"image": (None, str), "ref": (None, str), "raw": (0, int)}
    p = _resolve(args, spec, "metrics")
    x = load_image(p["image"])
    ref = load_image(p["ref"])
    if p["raw"]:
        values = {"ssim": ssim(x, ref), "psnr": psnr(x, ref), "snr": snr(x, ref)}
    else:
        values = quality_metrics(x, ref)
    line = " ".join(f"{k}={v!r}" for k, v in values.items())
    print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(
            "ssim,psnr,snr\n" + ",".join(repr(values[k]) for k in ("ssim", "psnr", "snr")) + "\n"
        )
        write_manifest(out, "metrics", p)
    return 0


_PRESET_FLAG_TO_FIELD = {
    "grid": "grid_n", "sensors": "sensors", "radius_mm": "radius_m",
    "extent_mm": "extent_m", "sound_speed": "sound_speed",
    "time_oversample": "time_oversample", "keep": "keep", "scheme": "scheme",
    "snr_db": "snr_db", "data_scale": "data_scale", "branches": "branches",
    "seeds": "seeds", "iters": "dip_iters", "lambda1": "lambda_tv",
    "lambda2": "lambda_shape", "lr": "lr", "channels": "channels",
    "tv_weight": "tv_weight", "tv_iters": "tv_iters",
}


def _study_preset(args, command: str) -> tuple[StudyPreset, dict]:
    base = preset_by_name(args.preset or "desk")
    spec = {
        "preset": (base.name, str),
        "grid": (base.grid_n, int),
        "extent_mm": (base.extent_m * 1e3, float),
        "sensors": (base.sensors, int),
        "radius_mm": (base.radius_m * 1e3, float),
        "sound_speed": (base.sound_speed, float),
        "time_oversample": (base.time_oversample, float),
        "keep": (base.keep, float),
        "scheme": (base.scheme, str),
        "snr_db": (base.snr_db, float),
        "data_scale": (base.data_scale, float),
        "branches": (base.branches, int),
        "seeds": (",".join(map(str, base.seeds)), str),
        "iters": (base.dip_iters, int),
        "lambda1": (base.lambda_tv, float),
        "lambda2": (base.lambda_shape, float),
        "lr": (base.lr, float),
        "channels": (base.channels, int),
        "tv_weight": (base.tv_weight, float),
        "tv_iters": (base.tv_iters, int),
    }
    p = _resolve(args, spec, command)
    preset = StudyPreset(
        name=str(p["preset"]),
        grid_n=int(p["grid"]),
        extent_m=p["extent_mm"] * 1e-3,
        sensors=int(p["sensors"]),
        radius_m=p["radius_mm"] * 1e-3,
        sound_speed=p["sound_speed"],
        time_oversample=p["time_oversample"],
        keep=p["keep"],
        scheme=p["scheme"],
        snr_db=p["snr_db"],
        data_scale=p["data_scale"],
        branches=int(p["branches"]),
        seeds=_parse_seeds(p["seeds"]),
        dip_iters=int(p["iters"]),
        lambda_tv=p["lambda1"],
        lambda_shape=p["lambda2"],
        lr=p["lr"],
        channels=int(p["channels"]),
        tv_weight=p["tv_weight"],
        tv_iters=int(p["tv_iters"]),
    )
    return preset, p


def cmd_study_ablation(args) -> int:
    preset, p = _study_preset(args, "study-ablation")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    medians = run_ablation_study(preset, out)
    write_manifest(out, "study-ablation", p)
    for method, m in medians.items():
        print(f"{method}: ssim={m['ssim']:.4f} psnr={m['psnr']:.4f} snr={m['snr']:.4f}")
    return 0


def cmd_study_iterations(args) -> int:
    preset, p = _study_preset(args, "study-iterations")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = run_iteration_study(preset, out, seed=preset.seeds[0])
    write_manifest(out, "study-iterations", p)
    for it, m in sorted(table.items()):
        print(f"iter {it}: ssim={m['ssim']:.4f} psnr={m['psnr']:.4f} snr={m['snr']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pactcs",
        description="Channel-subsampled photoacoustic tomography reconstruction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, flags):
        cmd = sub.add_parser(name)
        cmd.set_defaults(fn=fn)
        cmd.add_argument("--config", help="key = value file; flags override it")
        cmd.add_argument("--out", help="output directory", default=None)
        for flag, kind in flags.items():
            option = "--" + flag.replace("_", "-")
            if kind is bool:
                cmd.add_argument(option, dest=flag, action="store_const", const=1, default=None)
            else:
                cmd.add_argument(option, dest=flag, type=kind, default=None)
        return cmd

    add("phantom", cmd_phantom, {"grid": int, "extent_mm": float, "seed": int, "branches": int})
    add("simulate", cmd_simulate, {
        "phantom": str, "sensors": int, "radius_mm": float, "sound_speed": float,
        "time_oversample": float, "dt_ns": float,
    })
    add("noise", cmd_noise, {"sino": str, "snr_db": float, "seed": int})
    add("mask", cmd_mask, {"channels": int, "keep": float, "scheme": str, "seed": int, "sino": str})
    recon_geom = {"sino": str, "mask": str, "grid": int, "extent_mm": float,
                  "radius_mm": float, "data_scale": float}
    add("recon-ubp", cmd_recon_ubp, recon_geom)
    add("recon-tv", cmd_recon_tv, {**recon_geom, "tv_weight": float, "iters": int, "inner_iters": int})
    add("recon-dip", cmd_recon_dip, {
        **recon_geom, "iters": int, "lambda1": float, "lambda2": float, "lr": float,
        "seed": int, "channels": int, "snapshot_every": int, "truth": str,
        "normalize_prior": int,
    })
    add("metrics", cmd_metrics, {"image": str, "ref": str, "raw": bool})
    study_flags = {
        "preset": str, "grid": int, "extent_mm": float, "sensors": int,
        "radius_mm": float, "sound_speed": float, "time_oversample": float,
        "keep": float, "scheme": str, "snr_db": float, "data_scale": float,
        "branches": int, "seeds": str, "iters": int, "lambda1": float,
        "lambda2": float, "lr": float, "channels": int, "tv_weight": float,
        "tv_iters": int,
    }
    add("study-ablation", cmd_study_ablation, study_flags)
    add("study-iterations", cmd_study_iterations, study_flags)
    return parser


def _limit_threads() -> None:
    cap = os.environ.get("PACT_THREADS")
    if not cap:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(int(cap))
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def main(argv=None) -> int:
    _limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    needs_out = args.command not in ("metrics",)
    if needs_out and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.fn(args)
    except (ValueError, FormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
