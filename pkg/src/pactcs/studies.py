"""Scripted experiments shared by the CLI and the acceptance suite.

A study builds the full pipeline deterministically from a preset and a list
of seeds: phantom -> simulate -> add noise -> subsample channels -> scale the
measurement into standard units -> reconstruct (back-projection, TV, and the
untrained decoder in its ablation variants) -> metrics -> files.

Two conventions are fixed here, not in the algorithm modules:

* measurement units: recorded sinograms are rescaled so that the largest
  absolute sample equals ``preset.data_scale``. The raw operator includes the
  physical Green's-function constants, which make raw sample values tiny and
  arbitrary; solving in standard units puts the fixed regularization weights
  in a sensible regime and mirrors how real acquisitions live in DAQ units.
* metric normalization: reconstructions are clipped to their positive part
  (initial pressure is non-negative) and both images are min-max normalized
  to [0, 1] before SSIM/PSNR/SNR, so reported numbers do not depend on the
  reconstruction's arbitrary linear scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dip import DipConfig, dip_reconstruct
from .geometry import ChannelMask, Image, Sinogram, make_grid, make_sensor_array
from .metrics import minmax, psnr, snr, ssim
from .operators import (
    ForwardGeometry,
    add_noise,
    apply_mask,
    forward,
    forward_geometry,
    make_mask,
)
from .phantoms import vessel_phantom
from .recon import estimate_normal_operator_norm, recon_tv, ubp
from .tensorio import export_pgm, save_image, save_mask, save_sinogram

ABLATION_METHODS = ("d", "d_tv", "d_tv_sp", "tv")
ITERATION_SNAPSHOTS = (100, 500, 1000, 2000, 4000, 8000)


@dataclass(frozen=True)
class StudyPreset:
    """Every knob of a scripted experiment; fully recorded in the manifest."""

    name: str = "desk"
    grid_n: int = 64
    extent_m: float = 0.030
    sensors: int = 128
    radius_m: float = 0.0145
    sound_speed: float = 1500.0
    time_oversample: float = 1.0  # samples per dx/2 of acoustic travel
    keep: float = 0.5
    scheme: str = "random"
    snr_db: float = 40.0
    data_scale: float = 10.0
    branches: int = 4
    seeds: tuple[int, ...] = (0, 1, 2)
    dip_iters: int = 700
    lambda_tv: float = 0.006
    lambda_shape: float = 0.05
    lr: float = 1e-3
    channels: int = 32
    tv_weight: float = 0.1
    tv_iters: int = 300
    tv_inner_iters: int = 20


def desk_preset() -> StudyPreset:
    """CPU-minutes experiment: 64x64 grid, 64-of-128 channels, 40 dB noise.

    The acquisition records one sample per pixel of acoustic travel (half the
    default rate), which makes half-channel sampling genuinely compressive at
    this grid size instead of merely redundant.
    """
    return StudyPreset(name="desk", time_oversample=0.5)


def paper_preset() -> StudyPreset:
    """Full-size geometry of the reference setup (128x128, wider decoder)."""
    return StudyPreset(
        name="paper",
        grid_n=128,
        time_oversample=1.0,
        channels=64,
        seeds=(0,),
    )


def preset_by_name(name: str) -> StudyPreset:
    presets = {"desk": desk_preset, "paper": paper_preset}
    if name not in presets:
        raise ValueError(f"unknown preset {name!r} (choose from {sorted(presets)})")
    return presets[name]()


@dataclass
class Problem:
    """One simulated acquisition in solver units, plus its ground truth."""

    truth: Image
    geom: ForwardGeometry
    mask: ChannelMask
    data: Sinogram  # channel-reduced, noisy, scaled to data_scale
    seed: int


def geometry_for(preset: StudyPreset) -> ForwardGeometry:
    grid = make_grid(preset.grid_n, preset.grid_n, preset.extent_m)
    sensors = make_sensor_array(preset.sensors, preset.radius_m)
    dt = grid.dx / (2.0 * preset.sound_speed * preset.time_oversample)
    return forward_geometry(grid, sensors, sound_speed=preset.sound_speed, dt=dt)


def scale_to_units(s: Sinogram, data_scale: float) -> Sinogram:
    peak = float(np.abs(s.data).max())
    if peak == 0.0:
        return s
    return s.with_data(s.data * (data_scale / peak))


def build_problem(preset: StudyPreset, seed: int, geom: ForwardGeometry | None = None) -> Problem:
    """Deterministic problem instance; sub-seeds are derived from ``seed``."""
    if geom is None:
        geom = geometry_for(preset)
    truth = vessel_phantom(geom.grid, seed=10 * seed + 1, n_branches=preset.branches)
    clean = forward(truth, geom)
    noisy = add_noise(clean, preset.snr_db, seed=10 * seed + 2)
    mask = make_mask(preset.sensors, preset.keep, preset.scheme, seed=10 * seed + 3)
    data = scale_to_units(apply_mask(noisy, mask), preset.data_scale)
    return Problem(truth=truth, geom=geom, mask=mask, data=data, seed=seed)


def positive_part(img: Image) -> Image:
    return Image(img.grid, np.clip(img.values, 0.0, None))


def quality_metrics(x: Image, truth: Image) -> dict[str, float]:
    """SSIM/PSNR/SNR of the positive part, both images min-max normalized."""
    a = minmax(positive_part(x))
    b = minmax(truth)
    return {"ssim": ssim(a, b), "psnr": psnr(a, b), "snr": snr(a, b)}


def dip_config(preset: StudyPreset, seed: int, lambda_tv: float, lambda_shape: float,
               iters: int | None = None, snapshot_every: int = 0) -> DipConfig:
    return DipConfig(
        lambda_tv=lambda_tv,
        lambda_shape=lambda_shape,
        iters=preset.dip_iters if iters is None else iters,
        lr=preset.lr,
        seed=10 * seed + 4,
        snapshot_every=snapshot_every,
        channels=preset.channels,
    )


def reconstruct_ablation(problem: Problem, preset: StudyPreset) -> dict[str, Image]:
    """The four rows of the ablation table for one problem instance."""
    f_d = ubp(problem.data, problem.geom, problem.mask)
    out: dict[str, Image] = {}
    variants = {
        "d": (0.0, 0.0),
        "d_tv": (preset.lambda_tv, 0.0),
        "d_tv_sp": (preset.lambda_tv, preset.lambda_shape),
    }
    for name, (l1, l2) in variants.items():
        cfg = dip_config(preset, problem.seed, l1, l2)
        out[name] = dip_reconstruct(problem.data, problem.mask, problem.geom, f_d, cfg).image
    lip = estimate_normal_operator_norm(problem.geom, problem.mask)
    out["tv"] = recon_tv(
        problem.data,
        problem.mask,
        problem.geom,
        lam=preset.tv_weight,
        step=0.9 / lip,
        iters=preset.tv_iters,
        inner_iters=preset.tv_inner_iters,
    ).image
    return out


# ---------------------------------------------------------------------------
# studies with on-disk artifacts
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(x if isinstance(x, str) else _fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def _save_problem(out: Path, problem: Problem, tag: str) -> None:
    save_image(out / f"{tag}_truth.padt", problem.truth)
    export_pgm(problem.truth, out / f"{tag}_truth.pgm")
    save_sinogram(out / f"{tag}_data.padt", problem.data)
    save_mask(out / f"{tag}_mask.padt", problem.mask)


def run_ablation_study(preset: StudyPreset, out_dir: str | Path) -> dict[str, dict[str, float]]:
    """Reconstruct every ablation variant for every seed; returns the medians.

    Writes per-seed images (PADT + PGM), a metrics CSV with one row per
    (method, seed) plus median rows, and the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geom = geometry_for(preset)
    per_method: dict[str, dict[str, list[float]]] = {
        m: {"ssim": [], "psnr": [], "snr": []} for m in ABLATION_METHODS
    }
    rows: list[list] = []
    for seed in preset.seeds:
        problem = build_problem(preset, seed, geom)
        tag = f"seed{seed}"
        _save_problem(out, problem, tag)
        recons = reconstruct_ablation(problem, preset)
        for method in ABLATION_METHODS:
            img = recons[method]
            save_image(out / f"{tag}_recon_{method}.padt", img)
            export_pgm(img, out / f"{tag}_recon_{method}.pgm")
            scores = quality_metrics(img, problem.truth)
            per_method[method]["ssim"].append(scores["ssim"])
            per_method[method]["psnr"].append(scores["psnr"])
            per_method[method]["snr"].append(scores["snr"])
            rows.append([method, str(seed), scores["ssim"], scores["psnr"], scores["snr"]])

    medians: dict[str, dict[str, float]] = {}
    for method in ABLATION_METHODS:
        medians[method] = {
            k: float(np.median(v)) for k, v in per_method[method].items()
        }
        rows.append(
            [method, "median", medians[method]["ssim"], medians[method]["psnr"],
             medians[method]["snr"]]
        )
    _write_csv(out / "metrics.csv", ["method", "seed", "ssim", "psnr", "snr"], rows)
    return medians


def run_iteration_study(
    preset: StudyPreset,
    out_dir: str | Path,
    seed: int | None = None,
    snapshots: tuple[int, ...] = ITERATION_SNAPSHOTS,
) -> dict[int, dict[str, float]]:
    """Unregularized decoder fit with snapshot metrics at chosen iterations."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed is None:
        seed = preset.seeds[0]
    snapshots = tuple(sorted(snapshots))
    every = math.gcd(*snapshots) if len(snapshots) > 1 else snapshots[0]
    problem = build_problem(preset, seed)
    _save_problem(out, problem, f"seed{seed}")
    f_d = ubp(problem.data, problem.geom, problem.mask)
    cfg = dip_config(
        preset, seed, lambda_tv=0.0, lambda_shape=0.0,
        iters=max(snapshots), snapshot_every=every,
    )
    result = dip_reconstruct(problem.data, problem.mask, problem.geom, f_d, cfg)
    wanted = dict(result.snapshots)
    table: dict[int, dict[str, float]] = {}
    rows: list[list] = []
    for it in snapshots:
        img = wanted[it]
        save_image(out / f"seed{seed}_iter{it:05d}.padt", img)
        export_pgm(img, out / f"seed{seed}_iter{it:05d}.pgm")
        table[it] = quality_metrics(img, problem.truth)
        rows.append([str(it), table[it]["ssim"], table[it]["psnr"], table[it]["snr"]])
    _write_csv(out / "metrics.csv", ["iter", "ssim", "psnr", "snr"], rows)
    return table
