"""Config-driven pipeline: degrade, restore, evaluate, and schedule dumps.

Each subcommand takes ``--config FILE`` (TOML). Unknown keys anywhere in the
config are hard errors. Exit codes: 0 success, 2 config error, 3 runtime
failure. Every run writes a manifest (config hash, resolved seeds, version)
into the output directory so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .backends import (
    IdentityEnhancer,
    OracleDenoiser,
    ShrinkageDenoiser,
    SubprocessDenoiser,
    SubprocessEnhancer,
    UnsharpEnhancer,
    ZeroDenoiser,
)
from .bicubic import bicubic_kernel
from .metrics import psnr, ssim, warping_error
from .operators import (
    DegradationOperator,
    Kernel,
    delta_kernel,
    make_gaussian_kernel,
    make_motion_kernel,
    read_kernel,
    write_kernel,
)
from .sampler import RestorationProblem, SamplerConfig, build_condition, restore
from .schedule import build_schedules, linear_schedule, reschedule
from .video import clamp_model_range, read_flow, read_video, write_video

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

TASKS = ("sr", "deblur-gaussian", "deblur-motion", "jpeg", "composite")

# Per-task defaults: diffusion schedule plus sampling knobs. The sr presets
# depend on the scale factor (8x and 16x differ in K and w_tau).
TASK_PRESETS = {
    "sr": {"timesteps": 2000, "beta_start": 1e-6, "beta_end": 0.01,
           "steps": 25, "rho": 0.85, "w_tau": 0.85, "tau": 5, "zeta": 0.0,
           "scale": 8, "kernel": "bicubic"},
    "sr16": {"timesteps": 2000, "beta_start": 1e-6, "beta_end": 0.01,
             "steps": 100, "rho": 0.85, "w_tau": 0.7, "tau": 5, "zeta": 0.0,
             "scale": 16, "kernel": "bicubic"},
    "deblur-gaussian": {"timesteps": 1000, "beta_start": 1e-4, "beta_end": 0.02,
                        "steps": 100, "rho": 0.25, "w_tau": 0.75, "tau": 5, "zeta": 1000.0,
                        "scale": 4, "kernel": "gaussian"},
    "deblur-motion": {"timesteps": 1000, "beta_start": 1e-4, "beta_end": 0.02,
                      "steps": 65, "rho": 0.35, "w_tau": 0.1, "tau": 5, "zeta": 1000.0,
                      "scale": 4, "kernel": "motion"},
    "jpeg": {"timesteps": 1000, "beta_start": 1e-4, "beta_end": 0.02,
             "steps": 40, "rho": 0.5, "w_tau": 0.5, "tau": 5, "zeta": 1000.0,
             "scale": 4, "kernel": "gaussian"},
    "composite": {"timesteps": 1000, "beta_start": 1e-4, "beta_end": 0.02,
                  "steps": 40, "rho": 0.5, "w_tau": 0.5, "tau": 5, "zeta": 1000.0,
                  "scale": 4, "kernel": "gaussian"},
}

_SCHEMA = {
    "io": {"input", "output_dir", "measurement", "restored", "reference", "flow", "mask"},
    "task": {"kind", "scale", "sigma_e", "sigma_e_units", "jpeg_quality", "noise_seed"},
    "task.kernel": {"type", "size", "sigma_x", "sigma_y", "theta", "seed", "intensity",
                    "per_frame", "path"},
    "sampler": {"steps", "rho", "zeta", "w_tau", "tau", "guidance", "eta", "seed", "mode"},
    "schedule": {"timesteps", "beta_start", "beta_end"},
    "denoiser": {"kind", "strength", "truth", "command"},
    "enhancer": {"kind", "amount", "radius", "command"},
    "debug": {"trace", "assert_consistency"},
}


class ConfigError(Exception):
    """The run configuration is invalid."""


def _load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as handle:
            cfg = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _validate_keys(cfg)
    return cfg


def _validate_keys(cfg: dict) -> None:
    for section, content in cfg.items():
        if section not in {"io", "task", "sampler", "schedule", "denoiser", "enhancer", "debug"}:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in content.items():
            if section == "task" and key == "kernel":
                if not isinstance(value, dict):
                    raise ConfigError("[task.kernel] must be a table")
                for kkey in value:
                    if kkey not in _SCHEMA["task.kernel"]:
                        raise ConfigError(f"unknown key [task.kernel].{kkey}")
                continue
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}].{key}")


def _task_preset(kind: str, scale: int | None) -> dict:
    if kind not in TASKS:
        raise ConfigError(f"unknown task kind {kind!r}; expected one of {TASKS}")
    if kind == "sr" and scale == 16:
        return TASK_PRESETS["sr16"]
    return TASK_PRESETS[kind]


def _sigma_to_model(sigma: float, units: str) -> float:
    if sigma < 0:
        raise ConfigError(f"sigma_e must be >= 0, got {sigma}")
    if units == "model":
        return sigma
    if units == "unit":
        return 2.0 * sigma
    if units == "8bit":
        return 2.0 * sigma / 255.0
    raise ConfigError(f"sigma_e_units must be model, unit, or 8bit; got {units!r}")


def _build_kernels(task: dict, preset: dict, num_frames: int, scale: int) -> list[Kernel]:
    spec = task.get("kernel", {})
    ktype = spec.get("type", preset["kernel"])
    size = int(spec.get("size", 25))
    if ktype == "bicubic":
        return [bicubic_kernel(scale)]
    if ktype == "delta":
        return [delta_kernel(size if "size" in spec else 1)]
    if ktype == "gaussian":
        return [
            make_gaussian_kernel(
                size,
                float(spec.get("sigma_x", 2.0)),
                float(spec.get("sigma_y", 2.0)),
                float(spec.get("theta", 0.0)),
            )
        ]
    if ktype == "motion":
        seed = int(spec.get("seed", 0))
        intensity = float(spec.get("intensity", 0.5))
        if spec.get("per_frame", False):
            return [make_motion_kernel(size, seed + n, intensity) for n in range(num_frames)]
        return [make_motion_kernel(size, seed, intensity)]
    if ktype == "file":
        if "path" not in spec:
            raise ConfigError("[task.kernel] type 'file' requires a path")
        return [read_kernel(spec["path"])]
    raise ConfigError(f"unknown kernel type {ktype!r}")


def _resolve_task(cfg: dict, num_frames: int) -> dict:
    task = cfg.get("task", {})
    kind = task.get("kind", "sr")
    scale = int(task.get("scale", 0)) or None
    preset = _task_preset(kind, scale)
    scale = scale or preset["scale"]
    sigma_model = _sigma_to_model(
        float(task.get("sigma_e", 0.0)), task.get("sigma_e_units", "model")
    )
    quality = task.get("jpeg_quality")
    if kind in ("jpeg", "composite") and quality is None:
        quality = 60
    if quality is not None and not 1 <= int(quality) <= 100:
        raise ConfigError(f"jpeg_quality must be in [1, 100], got {quality}")
    kernels = _build_kernels(task, preset, num_frames, scale)
    return {
        "kind": kind,
        "scale": scale,
        "sigma_model": sigma_model,
        "jpeg_quality": int(quality) if quality is not None else None,
        "noise_seed": int(task.get("noise_seed", 0)),
        "kernels": kernels,
        "preset": preset,
    }


def _schedule_from(cfg: dict, preset: dict):
    section = cfg.get("schedule", {})
    return linear_schedule(
        int(section.get("timesteps", preset["timesteps"])),
        float(section.get("beta_start", preset["beta_start"])),
        float(section.get("beta_end", preset["beta_end"])),
    )


def _sampler_config(cfg: dict, preset: dict, task: dict) -> SamplerConfig:
    section = cfg.get("sampler", {})
    mode = section.get("mode", "auto")
    if mode == "auto":
        if task["jpeg_quality"] is not None:
            mode = "composite"
        elif task["sigma_model"] > 0:
            mode = "scaled"
        else:
            mode = "projection"
    steps = int(section.get("steps", preset["steps"]))
    if "tau" in section:
        tau = int(section["tau"])
    else:
        tau = min(preset["tau"], steps - 1)  # preset tau adapts to short plans
    if not 0 <= tau <= steps - 1:
        raise ConfigError(f"tau must be in [0, steps-1] = [0, {steps - 1}], got {tau}")
    try:
        return SamplerConfig(
            steps=steps,
            rho=float(section.get("rho", preset["rho"])),
            zeta=float(section.get("zeta", preset["zeta"])),
            sigma_e=task["sigma_model"],
            w_tau=float(section.get("w_tau", preset["w_tau"])),
            tau=tau,
            guidance=float(section.get("guidance", 1.0)),
            eta=float(section.get("eta", 0.0)),
            seed=int(section.get("seed", 0)),
            mode=mode,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_denoiser(cfg: dict, schedule):
    section = cfg.get("denoiser", {"kind": "shrinkage"})
    kind = section.get("kind", "shrinkage")
    if kind == "oracle":
        if "truth" not in section:
            raise ConfigError("[denoiser] kind 'oracle' requires a truth path")
        truth = _read_any_video(Path(section["truth"]))
        return OracleDenoiser(truth, schedule)
    if kind == "zero":
        return ZeroDenoiser()
    if kind == "shrinkage":
        return ShrinkageDenoiser(float(section.get("strength", 1.0)), schedule)
    if kind == "subprocess":
        if "command" not in section:
            raise ConfigError("[denoiser] kind 'subprocess' requires a command")
        return SubprocessDenoiser(section["command"])
    raise ConfigError(f"unknown denoiser kind {kind!r}")


def _build_enhancer(cfg: dict):
    section = cfg.get("enhancer", {"kind": "identity"})
    kind = section.get("kind", "identity")
    if kind == "identity":
        return IdentityEnhancer()
    if kind == "unsharp":
        return UnsharpEnhancer(float(section.get("amount", 1.0)), float(section.get("radius", 2.0)))
    if kind == "subprocess":
        if "command" not in section:
            raise ConfigError("[enhancer] kind 'subprocess' requires a command")
        return SubprocessEnhancer(section["command"])
    raise ConfigError(f"unknown enhancer kind {kind!r}")


def _read_any_video(path: Path):
    if path.is_dir():
        return read_video(path, "png-sequence")
    return read_video(path, "vten")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("io", {}).get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, name: str, config_path: Path, resolved: dict) -> None:
    manifest = {
        "command": name,
        "config_sha256": _config_digest(config_path),
        "package_version": __version__,
        "resolved": resolved,
    }
    (out_dir / f"manifest_{name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def cmd_degrade(config_path: Path) -> int:
    cfg = _load_config(config_path)
    io_cfg = cfg.get("io", {})
    if "input" not in io_cfg:
        raise ConfigError("[io].input is required for degrade")
    clean = _read_any_video(Path(io_cfg["input"]))
    task = _resolve_task(cfg, clean.num_frames)
    out_dir = _out_dir(cfg)
    operator = DegradationOperator(
        (clean.height, clean.width),
        kernels=task["kernels"],
        scale=task["scale"],
        sigma_e=task["sigma_model"],
        jpeg_quality=task["jpeg_quality"],
    )
    measurement = operator.apply(clean, noise_seed=task["noise_seed"])
    measurement_path = Path(io_cfg.get("measurement", out_dir / "measurement.vten"))
    write_video(measurement, measurement_path, "vten")
    write_video(clamp_model_range(measurement), out_dir / "measurement_png", "png-sequence")
    kernels_dir = out_dir / "kernels"
    kernels_dir.mkdir(exist_ok=True)
    kernel_paths = []
    for i, kernel in enumerate(task["kernels"]):
        kpath = kernels_dir / f"kernel_{i:05d}.txt"
        write_kernel(kernel, kpath)
        kernel_paths.append(str(kpath))
    sidecar = {
        "kind": task["kind"],
        "scale": task["scale"],
        "sigma_model": task["sigma_model"],
        "jpeg_quality": task["jpeg_quality"],
        "noise_seed": task["noise_seed"],
        "num_frames": clean.num_frames,
        "frame_shape": [clean.height, clean.width],
        "channels": clean.channels,
        "kernel_paths": kernel_paths,
        "measurement": str(measurement_path),
    }
    (out_dir / "degradation.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    _write_manifest(out_dir, "degrade", config_path, {
        "noise_seed": task["noise_seed"],
        "sigma_model": task["sigma_model"],
        "scale": task["scale"],
        "kind": task["kind"],
    })
    return EXIT_OK


def _operator_from_sidecar(sidecar: dict) -> DegradationOperator:
    kernels = [read_kernel(p) for p in sidecar["kernel_paths"]]
    return DegradationOperator(
        tuple(sidecar["frame_shape"]),
        kernels=kernels,
        scale=sidecar["scale"],
        sigma_e=sidecar["sigma_model"],
        jpeg_quality=sidecar["jpeg_quality"],
    )


def _check_sidecar_consistency(cfg: dict, sidecar: dict) -> None:
    task = cfg.get("task", {})
    if "kind" in task and task["kind"] != sidecar["kind"]:
        raise ConfigError(
            f"config task kind {task['kind']!r} does not match sidecar {sidecar['kind']!r}"
        )
    if "scale" in task and int(task["scale"]) != sidecar["scale"]:
        raise ConfigError(
            f"config scale {task['scale']} does not match sidecar {sidecar['scale']}"
        )
    if "jpeg_quality" in task and int(task["jpeg_quality"]) != (sidecar["jpeg_quality"] or 0):
        raise ConfigError("config jpeg_quality does not match sidecar")


def cmd_restore(config_path: Path) -> int:
    cfg = _load_config(config_path)
    out_dir = _out_dir(cfg)
    sidecar_path = out_dir / "degradation.json"
    if not sidecar_path.is_file():
        raise ConfigError(f"missing degradation sidecar: expected {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    _check_sidecar_consistency(cfg, sidecar)
    operator = _operator_from_sidecar(sidecar)
    io_cfg = cfg.get("io", {})
    measurement_path = Path(io_cfg.get("measurement", sidecar["measurement"]))
    measurement = read_video(measurement_path, "vten")
    preset = _task_preset(sidecar["kind"], sidecar["scale"])
    schedule = _schedule_from(cfg, preset)
    task = {"sigma_model": sidecar["sigma_model"], "jpeg_quality": sidecar["jpeg_quality"]}
    sampler_cfg = _sampler_config(cfg, preset, task)
    condition = build_condition(measurement, operator)
    mask = None
    if "mask" in io_cfg:
        mask = read_video(Path(io_cfg["mask"]), "vten")
    problem = RestorationProblem(operator, measurement, condition, mask=mask)
    denoiser = _build_denoiser(cfg, schedule)
    enhancer = _build_enhancer(cfg)
    debug = cfg.get("debug", {})
    trace_path = out_dir / "trace.csv" if debug.get("trace", True) else None
    restored = restore(
        problem,
        denoiser,
        enhancer,
        sampler_cfg,
        schedule,
        trace_path=trace_path,
        debug_consistency=bool(debug.get("assert_consistency", False)),
    )
    restored_path = Path(io_cfg.get("restored", out_dir / "restored.vten"))
    write_video(restored, restored_path, "vten")
    write_video(restored, out_dir / "restored_png", "png-sequence")
    _write_manifest(out_dir, "restore", config_path, {
        "sampler_seed": sampler_cfg.seed,
        "steps": sampler_cfg.steps,
        "mode": sampler_cfg.mode,
        "timesteps": schedule.num_steps,
    })
    return EXIT_OK


def cmd_evaluate(config_path: Path) -> int:
    cfg = _load_config(config_path)
    io_cfg = cfg.get("io", {})
    out_dir = _out_dir(cfg)
    restored_path = Path(io_cfg.get("restored", out_dir / "restored.vten"))
    if "reference" not in io_cfg:
        raise ConfigError("[io].reference is required for evaluate")
    restored = _read_any_video(restored_path)
    reference = _read_any_video(Path(io_cfg["reference"]))
    psnr_vals = psnr(restored, reference)
    ssim_vals = ssim(restored, reference)
    e_warp = None
    if "flow" in io_cfg:
        flow = read_flow(Path(io_cfg["flow"]))
        e_warp = warping_error(restored, flow)
    metrics_path = out_dir / "metrics.csv"
    with metrics_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["frame", "psnr_db", "ssim"])
        for n in range(restored.num_frames):
            p = "inf" if np.isinf(psnr_vals[n]) else repr(float(psnr_vals[n]))
            writer.writerow([n, p, repr(float(ssim_vals[n]))])
        finite = psnr_vals[np.isfinite(psnr_vals)]
        mean_psnr = "inf" if finite.size < psnr_vals.size else repr(float(np.mean(psnr_vals)))
        writer.writerow(["mean_psnr", mean_psnr])
        writer.writerow(["mean_ssim", repr(float(np.mean(ssim_vals)))])
        if e_warp is not None:
            writer.writerow(["e_warp", repr(float(e_warp))])
    _write_manifest(out_dir, "evaluate", config_path, {"metrics": str(metrics_path)})
    return EXIT_OK


def cmd_schedule(config_path: Path) -> int:
    cfg = _load_config(config_path)
    out_dir = _out_dir(cfg)
    task_cfg = cfg.get("task", {})
    kind = task_cfg.get("kind", "sr")
    scale = int(task_cfg.get("scale", 0)) or None
    preset = _task_preset(kind, scale)
    sigma_model = _sigma_to_model(
        float(task_cfg.get("sigma_e", 0.0)), task_cfg.get("sigma_e_units", "model")
    )
    schedule = _schedule_from(cfg, preset)
    section = cfg.get("sampler", {})
    steps = int(section.get("steps", preset["steps"]))
    rho = float(section.get("rho", preset["rho"]))
    zeta = float(section.get("zeta", preset["zeta"]))
    w_tau = float(section.get("w_tau", preset["w_tau"]))
    tau = int(section.get("tau", min(preset["tau"], steps - 1)))
    if not 0 <= tau <= steps - 1:
        raise ConfigError(f"tau must be in [0, steps-1] = [0, {steps - 1}], got {tau}")
    plan = reschedule(schedule.num_steps, steps)
    schedules = build_schedules(plan, schedule, zeta, sigma_model, rho, w_tau, tau)
    schedule_path = out_dir / "schedule.csv"
    with schedule_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "beta", "alpha_bar", "gamma", "rho", "w", "sigma_total"])
        for i, t in enumerate(plan.steps):
            writer.writerow([
                int(t),
                repr(schedule.beta(int(t))),
                repr(schedule.alpha_bar(int(t))),
                repr(float(schedules.gamma[i])),
                repr(float(schedules.rho[i])),
                repr(float(schedules.w[i])),
                repr(float(schedules.sigma_total[i])),
            ])
    _write_manifest(out_dir, "schedule", config_path, {
        "timesteps": schedule.num_steps,
        "steps": steps,
        "tau": tau,
    })
    return EXIT_OK


_COMMANDS = {
    "degrade": cmd_degrade,
    "restore": cmd_restore,
    "evaluate": cmd_evaluate,
    "schedule": cmd_schedule,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="diffrestore",
        description="Degrade, restore, and evaluate frame sequences with a conditional diffusion engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, type=Path)
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
