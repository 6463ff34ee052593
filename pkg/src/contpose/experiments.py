"""Experiment registry: parameters, arms and one-trial runners for the CLI.

Each experiment has a default parameter dataclass, a list of arms (methods or
ablation variants) and a trial function ``(params, seed, arm) -> TrialOutput``.
Parameters are overridden from nested dicts (parsed TOML) with unknown keys
rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Callable, Optional

import numpy as np

from contpose import denoise as dn
from contpose import geometry as g
from contpose import motionloss as ml
from contpose import planar as pl
from contpose import tracksim as ts
from contpose.diffnet import EncodingConfig, NonFiniteLoss
from contpose.geometry import RigidTransform3


class ConfigError(ValueError):
    """Invalid experiment configuration (unknown key, bad type or value)."""


# ------------------------------------------------------------ overrides


def override(obj, data: dict, path: str = "params"):
    """Copy of dataclass ``obj`` with fields replaced from ``data``, recursing into
    nested dataclasses. Unknown keys and type mismatches raise ``ConfigError``."""
    if not isinstance(data, dict):
        raise ConfigError(f"[{path}] must be a table")
    names = {f.name for f in fields(obj)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{path}]: {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        cur = getattr(obj, k)
        where = f"{path}.{k}"
        if is_dataclass(cur):
            kw[k] = override(cur, v, where)
        elif isinstance(cur, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{where} must be a boolean")
            kw[k] = v
        elif isinstance(cur, (int, float)) or cur is None:
            if v is None:  # only reachable from JSON (TOML has no null)
                kw[k] = None
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where} must be a number")
            kw[k] = float(v) if isinstance(cur, float) else v
        elif isinstance(cur, tuple):
            if not isinstance(v, (list, tuple)):
                raise ConfigError(f"{where} must be an array")
            kw[k] = tuple(v)
        elif isinstance(cur, str):
            if not isinstance(v, str):
                raise ConfigError(f"{where} must be a string")
            kw[k] = v
        else:
            raise ConfigError(f"{where} cannot be set from a config file")
    try:
        return replace(obj, **kw)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{path}]: {e}") from e


def to_plain(obj):
    """Dataclass tree as plain JSON-able values."""
    if is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# --------------------------------------------------------------- trials


@dataclass
class TrialOutput:
    row: dict  # metric name -> number
    times: Optional[np.ndarray] = None
    estimate: list = field(default_factory=list)  # RigidTransform3
    ground_truth: list = field(default_factory=list)
    imu_stream: object = None
    images: dict = field(default_factory=dict)  # name -> (H, W, 3) image in [0, 1]
    diverged: Optional[str] = None  # message when the trial diverged


def _se2_to_se3(w) -> RigidTransform3:
    return RigidTransform3(g.axis_angle_to_quat([0.0, 0.0, 1.0], w.angle), (*w.t, 0.0))


def planar_trial(params: pl.PlanarConfig, seed: int, arm: str) -> TrialOutput:
    cfg = replace(params, method=arm, seed=seed)
    nan = dict(CE=math.nan, PSNR=math.nan, PSNR_patch=math.nan, success=0)
    image = pl.procedural_image("blobs", seed)
    try:
        est, fit, rep = pl.run_alignment(image, cfg)
    except pl.Diverged as e:
        return TrialOutput(nan, diverged=str(e))
    row = rep.row()
    gt = pl.ground_truth_warps(cfg)
    G = pl.gauge_alignment(est, gt, cfg.geometry)
    return TrialOutput(
        {k: row[k] for k in ("CE", "PSNR", "PSNR_patch", "success")},
        np.arange(len(est), dtype=float),
        [_se2_to_se3(G @ w) for w in est],
        [_se2_to_se3(w) for w in gt],
        images={"fit": fit.render(*image.shape[:2], warp=G.inverse()), "source": image},
    )


def _denoise(cfg: dn.DenoiseConfig) -> TrialOutput:
    try:
        est, rep = dn.run_denoise(cfg)
    except NonFiniteLoss as e:
        return TrialOutput({k: math.nan for k in ("RE", "TE", "RE_init", "TE_init", "PSNR", "SSIM")}, diverged=str(e))
    gt, _, times, _ = dn.make_problem(cfg)
    row = rep.row()
    del row["seed"], row["method"]
    return TrialOutput(row, np.asarray(times), est, gt)


def denoise_trial(params: dn.DenoiseConfig, seed: int, arm: str) -> TrialOutput:
    return _denoise(replace(params, method=arm, seed=seed))


ENCODER_ARMS = {
    "sin5": dict(encoding=EncodingConfig(bands=5)),
    "sin2": dict(encoding=EncodingConfig(bands=2)),
    "linear": dict(encoding=EncodingConfig(kind="linear")),
    "coupled": dict(encoding=EncodingConfig(bands=5), architecture="coupled"),
}


def encoder_trial(params: dn.DenoiseConfig, seed: int, arm: str) -> TrialOutput:
    net = replace(params.posenet, **ENCODER_ARMS[arm])
    return _denoise(replace(params, method="posenet", seed=seed, posenet=net))


_SIZE = re.compile(r"^(\d+)x(\d+)$")


def netsize_trial(params: dn.DenoiseConfig, seed: int, arm: str) -> TrialOutput:
    layers, width = (int(x) for x in _SIZE.match(arm).groups())
    net = replace(params.posenet, layers=layers, width=width)
    return _denoise(replace(params, method="posenet", seed=seed, posenet=net))


def _track_output(res: ts.TrialResult, extra: dict) -> TrialOutput:
    rep = res.report
    row = dict(ATE=rep.ate, lost=int(rep.lost), frames=len(res.estimate), **extra)
    return TrialOutput(row, res.times[: len(res.estimate)], res.estimate, res.ground_truth, res.imu_stream)


def imu_trial(params: ts.ImuScenario, seed: int, arm: str) -> TrialOutput:
    return _track_output(ts.imu_trial(params, seed, arm), {})


def intrinsic_trial(params: ts.IntrinsicScenario, seed: int, arm: str) -> TrialOutput:
    res = ts.reference_trial(params, seed, arm)
    rep = res.report
    naive = ml.dof_statistic(ml.relative_motions(res.estimate), params.track.dof) if len(res.estimate) > 1 else math.nan
    dof_i = rep.dof_intrinsic if rep.dof_intrinsic is not None else math.nan
    drop = 1.0 - dof_i / naive if math.isfinite(dof_i) else math.nan
    return _track_output(res, dict(DOF_naive=naive, DOF_intrinsic=dof_i, DOF_drop=drop))


# ------------------------------------------------------------- registry


@dataclass(frozen=True)
class Experiment:
    name: str
    defaults: Callable[[], object]
    arms: tuple  # default arms, in table order
    trial: Callable[[object, int, str], TrialOutput]
    metrics: tuple  # per-trial CSV columns after seed and arm
    summary: tuple  # (label, source column, scale) for the summary table
    arm_ok: Callable[[str], bool]

    def check_arms(self, arms) -> None:
        bad = [a for a in arms if not isinstance(a, str) or not self.arm_ok(a)]
        if bad or not arms:
            raise ConfigError(f"invalid arm(s) for {self.name}: {bad or 'none given'}")
        if len(set(arms)) != len(arms):
            raise ConfigError("arms must be distinct")


_DN = ("RE", "TE", "RE_init", "TE_init", "PSNR", "SSIM")
_DN_SUMMARY = (("RE", "RE", 1.0), ("TE", "TE", 1.0), ("PSNR", "PSNR", 1.0), ("SSIM", "SSIM", 1.0))
_TRACK = ("ATE", "lost", "frames")

REGISTRY = {
    e.name: e
    for e in [
        Experiment(
            "planar",
            pl.PlanarConfig,
            ("posenet", "discrete"),
            planar_trial,
            ("CE", "PSNR", "PSNR_patch", "success"),
            (("CE", "CE", 1.0), ("PSNR", "PSNR", 1.0), ("SR", "success", 100.0)),
            lambda a: a in pl.METHODS,
        ),
        Experiment("denoise", dn.DenoiseConfig, dn.METHODS, denoise_trial, _DN, _DN_SUMMARY, lambda a: a in dn.METHODS),
        Experiment(
            "ablate_encoder",
            dn.DenoiseConfig,
            ("sin5", "sin2", "linear"),
            encoder_trial,
            _DN,
            _DN_SUMMARY,
            lambda a: a in ENCODER_ARMS,
        ),
        Experiment(
            "ablate_netsize",
            dn.DenoiseConfig,
            ("8x256", "4x128"),
            netsize_trial,
            _DN,
            _DN_SUMMARY,
            lambda a: bool(_SIZE.match(a)) and all(int(x) > 0 for x in a.split("x")),
        ),
        Experiment(
            "imu_track",
            ts.ImuScenario,
            ("none", "tight"),
            imu_trial,
            _TRACK,
            (("ATE", "ATE", 1.0), ("lost", "lost", 1.0)),
            lambda a: a in ts.IMU_ARMS,
        ),
        Experiment(
            "intrinsic_dof",
            ts.IntrinsicScenario,
            ts.REFERENCE_ARMS,
            intrinsic_trial,
            _TRACK + ("DOF_naive", "DOF_intrinsic", "DOF_drop"),
            (("ATE", "ATE", 1.0), ("lost", "lost", 1.0), ("DOF_naive", "DOF_naive", 1.0), ("DOF_intrinsic", "DOF_intrinsic", 1.0)),
            lambda a: a in ts.REFERENCE_ARMS,
        ),
    ]
}


def get(name: str) -> Experiment:
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(REGISTRY)}")
    return REGISTRY[name]


def run_trial(name: str, params, seed: int, arm: str) -> TrialOutput:
    """Module-level entry point so process pools can pickle it."""
    import torch

    torch.set_num_threads(1)
    return get(name).trial(params, seed, arm)
