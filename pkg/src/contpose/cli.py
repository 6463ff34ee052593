"""``contpose run <config.toml>`` and ``contpose report <dir>``.

A run writes, under the output directory::

    trials/<arm>_seed<k>.csv      one row per trial
    metrics.csv                   all trial rows, fixed order and formatting
    trajectories/*.tum            estimate and ground truth per trial
    imu/seed<k>.csv               IMU stream (imu_track only)
    images/*.png                  fitted and source images (planar only)
    plots/*.svg                   trajectory plots and a summary bar chart
    manifest.json                 resolved config, seeds and artifact sha256
    summary.md, summary.csv       mean/std per arm (written by ``report``)

Exit codes: 0 success, 2 invalid config, 3 a trial diverged (partial
artifacts are still written), 1 report errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from contpose import __version__
from contpose import experiments as ex
from contpose import imu as imu_mod
from contpose import planar as pl
from contpose import traj as trj

log = logging.getLogger("contpose")

EXIT_OK, EXIT_REPORT, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
TOP_KEYS = {"experiment", "seed", "seeds", "arms", "params"}


class MissingManifest(FileNotFoundError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


class CorruptArtifact(RuntimeError):
    pass


# --------------------------------------------------------------- config


class RunConfig:
    def __init__(self, experiment: ex.Experiment, params, seeds: list, arms: tuple):
        self.experiment = experiment
        self.params = params
        self.seeds = seeds
        self.arms = arms

    def to_plain(self) -> dict:
        return {
            "experiment": self.experiment.name,
            "seeds": list(self.seeds),
            "arms": list(self.arms),
            "params": ex.to_plain(self.params),
        }


def _int(v, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ex.ConfigError(f"{what} must be an integer")
    return v


def load_config(path, n_seeds=None, env=None) -> RunConfig:
    """Parse and validate a TOML run config. ``CONTPOSE_SEED`` in ``env``
    overrides the base seed; ``n_seeds`` overrides the seed count."""
    env = os.environ if env is None else env
    try:
        data = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ex.ConfigError(f"cannot read {path}: {e}") from e
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ex.ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "experiment" not in data:
        raise ex.ConfigError("missing 'experiment'")
    exp = ex.get(data["experiment"])
    base = _int(data.get("seed", 0), "seed")
    if env.get("CONTPOSE_SEED"):
        try:
            base = int(env["CONTPOSE_SEED"])
        except ValueError as e:
            raise ex.ConfigError("CONTPOSE_SEED must be an integer") from e
    count = _int(data.get("seeds", 1), "seeds") if n_seeds is None else n_seeds
    if count < 1:
        raise ex.ConfigError("seeds must be >= 1")
    arms = data.get("arms", list(exp.arms))
    if not isinstance(arms, list):
        raise ex.ConfigError("arms must be an array of strings")
    exp.check_arms(arms)
    params = ex.override(exp.defaults(), data.get("params", {}))
    return RunConfig(exp, params, [base + k for k in range(count)], tuple(arms))


# ------------------------------------------------------------ formatting


def fmt(v) -> str:
    """Deterministic text for a metric value."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _trial_stem(arm: str, seed: int) -> str:
    return f"{arm}_seed{seed}"


# -------------------------------------------------------------- plotting


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "contpose"
    return plt


def plot_trajectory(path, out: ex.TrialOutput, title: str) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 4))
    gt = np.stack([T.t for T in out.ground_truth])
    est = np.stack([T.t for T in out.estimate])
    ax.plot(gt[:, 0], gt[:, 1], "k-", lw=1, label="ground truth")
    ax.plot(est[:, 0], est[:, 1], "C1.--", lw=1, ms=3, label="estimate")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_summary(path, rows: list, label: str) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 3))
    arms = [r["arm"] for r in rows]
    mean = [r[f"{label}_mean"] for r in rows]
    std = [r[f"{label}_std"] for r in rows]
    ax.bar(arms, mean, yerr=std, color="C0", capsize=3)
    ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ------------------------------------------------------------------- run


def run(config: RunConfig, out_dir, jobs: int = 1) -> int:
    out = Path(out_dir)
    for sub in ("trials", "trajectories", "plots"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    exp = config.experiment
    tasks = [(arm, s) for arm in config.arms for s in config.seeds]
    args = [(exp.name, config.params, s, arm) for arm, s in tasks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(ex.run_trial, *zip(*args)))
    else:
        results = [ex.run_trial(*a) for a in args]

    header = ["seed", "arm", *exp.metrics, "status"]
    artifacts, trials, diverged, rows = {}, [], [], []
    imu_written = set()
    for (arm, s), res in zip(tasks, results):
        stem = _trial_stem(arm, s)
        row = [s, arm, *(fmt(res.row.get(m, math.nan)) for m in exp.metrics), "diverged" if res.diverged else "ok"]
        rows.append(row)
        p = out / "trials" / f"{stem}.csv"
        p.write_text(_csv_text(header, [row]))
        trials.append(str(p.relative_to(out)))
        if res.diverged:
            diverged.append({"arm": arm, "seed": s, "message": res.diverged})
            log.error("%s seed %d diverged: %s", arm, s, res.diverged)
            continue
        if res.estimate:
            trj.write_tum(out / "trajectories" / f"{stem}_est.tum", res.times, res.estimate)
            trj.write_tum(out / "trajectories" / f"{stem}_gt.tum", res.times, res.ground_truth)
            plot_trajectory(out / "plots" / f"{stem}.svg", res, f"{exp.name} {arm} seed {s}")
            for name in (f"{stem}_est.tum", f"{stem}_gt.tum"):
                artifacts[f"trajectories/{name}"] = None
            artifacts[f"plots/{stem}.svg"] = None
        for name, img in res.images.items():
            (out / "images").mkdir(exist_ok=True)
            pl.save_png(out / "images" / f"{stem}_{name}.png", img)
            artifacts[f"images/{stem}_{name}.png"] = None
        if res.imu_stream is not None and s not in imu_written:
            (out / "imu").mkdir(exist_ok=True)
            imu_mod.write_imu_csv(out / "imu" / f"seed{s}.csv", res.imu_stream)
            artifacts[f"imu/seed{s}.csv"] = None
            imu_written.add(s)
    (out / "metrics.csv").write_text(_csv_text(header, rows))
    artifacts["metrics.csv"] = None
    for t in trials:
        artifacts[t] = None

    manifest = {
        "package_version": __version__,
        "config": config.to_plain(),
        "status": "diverged" if diverged else "ok",
        "diverged": diverged,
        "trials": trials,
        "artifacts": {k: sha256(out / k) for k in sorted(artifacts)},
    }
    _write_manifest(out, manifest)
    report(out)
    if diverged:
        return EXIT_DIVERGED
    return EXIT_OK


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- report


def read_manifest(run_dir) -> dict:
    p = Path(run_dir) / "manifest.json"
    if not p.is_file():
        raise MissingManifest(f"no manifest.json in {run_dir}")
    return json.loads(p.read_text())


def verify_artifacts(run_dir, manifest: dict) -> None:
    for rel, digest in manifest["artifacts"].items():
        p = Path(run_dir) / rel
        if not p.is_file():
            raise MissingArtifact(f"artifact listed in the manifest is missing: {rel}")
        if sha256(p) != digest:
            raise CorruptArtifact(f"artifact does not match its manifest hash: {rel}")


def aggregate(rows: list, summary_spec, arms) -> list:
    """Mean and sample std (0 for a single trial) per arm, in ``arms`` order."""
    out = []
    for arm in arms:
        sel = [r for r in rows if r["arm"] == arm and r.get("status", "ok") == "ok"]
        rec = {"arm": arm, "n": len(sel)}
        for label, src, scale in summary_spec:
            x = np.array([float(r[src]) for r in sel], dtype=float) * scale
            rec[f"{label}_mean"] = float(x.mean()) if len(x) else math.nan
            rec[f"{label}_std"] = float(x.std(ddof=1)) if len(x) > 1 else 0.0 if len(x) else math.nan
        out.append(rec)
    return out


def _markdown(name: str, agg: list, summary_spec) -> str:
    labels = [s[0] for s in summary_spec]
    lines = [f"# {name}", "", "| arm | n | " + " | ".join(labels) + " |", "|" + "---|" * (len(labels) + 2)]
    for r in agg:
        cells = [f"{r[f'{l}_mean']:.4g} ± {r[f'{l}_std']:.2g}" for l in labels]
        lines.append(f"| {r['arm']} | {r['n']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report(run_dir) -> list:
    """Aggregate the per-trial CSVs of a run into ``summary.md``/``summary.csv``.

    Idempotent: the summary files and the manifest's ``summary`` hashes are
    rewritten with identical content on every call.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    verify_artifacts(run_dir, manifest)
    cfg = manifest["config"]
    exp = ex.get(cfg["experiment"])
    rows = []
    for rel in manifest["trials"]:
        with open(run_dir / rel, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    agg = aggregate(rows, exp.summary, cfg["arms"])
    header = ["arm", "n"] + [f"{l}_{k}" for l, _, _ in exp.summary for k in ("mean", "std")]
    (run_dir / "summary.csv").write_text(_csv_text(header, [[fmt(r[h]) if h != "arm" else r[h] for h in header] for r in agg]))
    (run_dir / "summary.md").write_text(_markdown(exp.name, agg, exp.summary))
    plot_summary(run_dir / "plots" / "summary.svg", agg, exp.summary[0][0])
    manifest["summary"] = {k: sha256(run_dir / k) for k in ("summary.csv", "summary.md", "plots/summary.svg")}
    _write_manifest(run_dir, manifest)
    return agg


# ------------------------------------------------------------------ main


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="contpose", description="continuous-time neural pose experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seeds", type=int, default=None, help="number of seeds (overrides the config)")
    r.add_argument("--out", default=None, help="output directory (default runs/<config stem>)")
    r.add_argument("--jobs", type=int, default=1, help="parallel trials")
    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("dir")
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if a.cmd == "run":
        try:
            cfg = load_config(a.config, a.seeds)
        except ex.ConfigError as e:
            log.error("invalid config: %s", e)
            return EXIT_CONFIG
        if a.jobs < 1:
            log.error("--jobs must be >= 1")
            return EXIT_CONFIG
        out = a.out or str(Path("runs") / Path(a.config).stem)
        code = run(cfg, out, a.jobs)
        print((Path(out) / "summary.md").read_text(), end="")
        return code
    try:
        report(a.dir)
    except (MissingManifest, MissingArtifact, CorruptArtifact) as e:
        log.error("%s", e)
        return EXIT_REPORT
    print((Path(a.dir) / "summary.md").read_text(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
