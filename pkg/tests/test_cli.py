import json
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contpose import cli
from contpose import denoise as dn
from contpose import experiments as ex
from contpose import planar as pl
from contpose import tracksim as ts
from contpose.geometry import RigidTransform3


@dataclass(frozen=True)
class FakeParams:
    scale: float = 1.0
    fail_seed: int = -1


def fake_trial(p: FakeParams, seed: int, arm: str) -> ex.TrialOutput:
    if seed == p.fail_seed:
        return ex.TrialOutput({"x": math.nan, "y": math.nan}, diverged="loss became nan")
    times = np.arange(3.0)
    poses = [RigidTransform3(translation=(k * p.scale, 0.0, 0.0)) for k in range(3)]
    return ex.TrialOutput({"x": p.scale * (seed + 1), "y": 1.0 if arm == "a" else 2.0}, times, poses, poses)


FAKE = ex.Experiment("fake", FakeParams, ("a", "b"), fake_trial, ("x", "y"), (("X", "x", 1.0),), lambda a: a in ("a", "b"))


@pytest.fixture
def fake(monkeypatch):
    monkeypatch.setitem(ex.REGISTRY, "fake", FAKE)
    monkeypatch.delenv("CONTPOSE_SEED", raising=False)
    return FAKE


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ----------------------------------------------------------------- config


def test_override_rejects_unknown_and_mistyped_keys():
    base = pl.PlanarConfig()
    with pytest.raises(ex.ConfigError, match="unknown"):
        ex.override(base, {"iterationz": 3})
    with pytest.raises(ex.ConfigError, match="unknown"):
        ex.override(base, {"posenet": {"widht": 3}})
    with pytest.raises(ex.ConfigError, match="number"):
        ex.override(base, {"iterations": "many"})
    with pytest.raises(ex.ConfigError):
        ex.override(base, {"method": "nope"})  # rejected by the dataclass itself
    c = ex.override(base, {"iterations": 7, "rot_deg": 3, "posenet": {"width": 16}})
    assert c.iterations == 7 and c.rot_deg == 3.0 and isinstance(c.rot_deg, float)
    assert c.posenet.width == 16 and c.posenet.space == "SE2"


def test_nested_track_defaults_survive_partial_override():
    c = ex.override(ts.ImuScenario(), {"track": {"iters_per_frame": 5}})
    assert c.track.reference == "imu" and c.track.iters_per_frame == 5


@settings(max_examples=30)
@given(st.integers(1, 5000), st.floats(0.0, 40.0), st.integers(2, 12), st.sampled_from(["blobs", "x"]))
def test_plain_round_trip(iters, rot, patches, _):
    c = pl.PlanarConfig(iterations=iters, rot_deg=rot, n_patches=patches)
    assert ex.override(pl.PlanarConfig(), ex.to_plain(c)) == c


def test_denoise_config_round_trip():
    c = dn.DenoiseConfig(iterations=3, noise=dn.trj.NoiseModel(translation_max=0.1))
    assert ex.override(dn.DenoiseConfig(), ex.to_plain(c)) == c


def test_load_config_seeds_and_env(tmp_path, fake):
    p = write(tmp_path, 'experiment = "fake"\nseed = 4\nseeds = 3\n[params]\nscale = 2\n')
    c = cli.load_config(p, env={})
    assert c.seeds == [4, 5, 6] and c.params.scale == 2.0 and c.arms == ("a", "b")
    assert cli.load_config(p, env={"CONTPOSE_SEED": "10"}).seeds == [10, 11, 12]
    assert cli.load_config(p, n_seeds=1, env={}).seeds == [4]
    with pytest.raises(ex.ConfigError):
        cli.load_config(p, env={"CONTPOSE_SEED": "ten"})


@pytest.mark.parametrize(
    "text",
    [
        'experiment = "fake"\nbogus = 1\n',
        'experiment = "fake"\n[params]\nbogus = 1\n',
        'experiment = "nope"\n',
        'seeds = 2\n',
        'experiment = "fake"\narms = ["c"]\n',
        'experiment = "fake"\nseeds = 0\n',
        'experiment = "fake"\nseeds = 1.5\n',
        'experiment = "fake"\n[params\n',
    ],
)
def test_invalid_configs_exit_2(tmp_path, fake, text):
    p = write(tmp_path, text)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_all_bundled_configs_parse():
    from pathlib import Path

    cfgs = sorted((Path(__file__).parents[1] / "configs").glob("*.toml"))
    assert {c.stem for c in cfgs} >= set(ex.REGISTRY)
    for c in cfgs:
        cli.load_config(c, env={})


def test_every_arm_name_is_accepted():
    for e in ex.REGISTRY.values():
        e.check_arms(list(e.arms))
    with pytest.raises(ex.ConfigError):
        ex.get("ablate_netsize").check_arms(["8x0"])
    with pytest.raises(ex.ConfigError):
        ex.get("planar").check_arms(["posenet", "posenet"])


# -------------------------------------------------------------------- run


def test_run_writes_manifest_with_hashes(tmp_path, fake):
    p = write(tmp_path, 'experiment = "fake"\nseeds = 2\n')
    out = tmp_path / "o"
    assert cli.main(["run", str(p), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "ok" and m["config"]["seeds"] == [0, 1]
    for rel, digest in m["artifacts"].items():
        assert cli.sha256(out / rel) == digest
    assert "trajectories/a_seed1_est.tum" in m["artifacts"] and "plots/b_seed0.svg" in m["artifacts"]
    assert set(m["trials"]) <= set(m["artifacts"])
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "seed,arm,x,y,status" and lines[1] == "0,a,1.0,1.0,ok" and len(lines) == 5
    t, poses = cli.trj.read_tum(out / "trajectories" / "a_seed0_est.tum")
    np.testing.assert_allclose([T.t[0] for T in poses], [0, 1, 2])


def test_diverged_trial_exits_3_with_partial_artifacts(tmp_path, fake):
    p = write(tmp_path, 'experiment = "fake"\nseeds = 3\n[params]\nfail_seed = 1\n')
    out = tmp_path / "o"
    assert cli.main(["run", str(p), "--out", str(out)]) == cli.EXIT_DIVERGED
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "diverged" and {d["seed"] for d in m["diverged"]} == {1}
    assert (out / "trajectories" / "a_seed2_est.tum").is_file()
    assert not (out / "trajectories" / "a_seed1_est.tum").exists()
    rows = cli.csv.DictReader(open(out / "summary.csv"))
    assert [r["n"] for r in rows] == ["2", "2"]


def test_parallel_jobs_match_sequential(tmp_path, fake):
    p = write(tmp_path, 'experiment = "fake"\nseeds = 3\n')
    assert cli.main(["run", str(p), "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["run", str(p), "--out", str(tmp_path / "j"), "--jobs", "2"]) == 0
    assert (tmp_path / "s" / "metrics.csv").read_bytes() == (tmp_path / "j" / "metrics.csv").read_bytes()


def test_real_experiment_metrics_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("CONTPOSE_SEED", raising=False)
    p = write(tmp_path, 'experiment = "planar"\nseeds = 1\n[params]\niterations = 15\nbatch = 128\n')
    for d in ("r1", "r2"):
        assert cli.main(["run", str(p), "--out", str(tmp_path / d)]) == 0
    a, b = ((tmp_path / d / "metrics.csv").read_bytes() for d in ("r1", "r2"))
    assert a == b
    assert a.decode().splitlines()[0] == "seed,arm,CE,PSNR,PSNR_patch,success,status"


# ----------------------------------------------------------------- report


def test_report_requires_manifest(tmp_path):
    with pytest.raises(cli.MissingManifest):
        cli.report(tmp_path)
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_REPORT


def test_report_fails_loudly_on_missing_or_changed_files(tmp_path, fake):
    out = tmp_path / "o"
    cli.main(["run", str(write(tmp_path, 'experiment = "fake"\n')), "--out", str(out)])
    (out / "trajectories" / "a_seed0_gt.tum").write_text("changed\n")
    with pytest.raises(cli.CorruptArtifact):
        cli.report(out)
    (out / "trajectories" / "a_seed0_gt.tum").unlink()
    with pytest.raises(cli.MissingArtifact):
        cli.report(out)
    assert cli.main(["report", str(out)]) == cli.EXIT_REPORT


def test_report_is_idempotent(tmp_path, fake):
    out = tmp_path / "o"
    cli.main(["run", str(write(tmp_path, 'experiment = "fake"\nseeds = 2\n')), "--out", str(out)])
    before = {f: (out / f).read_bytes() for f in ("summary.csv", "summary.md", "manifest.json")}
    assert cli.main(["report", str(out)]) == 0
    cli.report(out)
    assert before == {f: (out / f).read_bytes() for f in before}


def test_single_seed_summary_equals_its_row(tmp_path, fake):
    out = tmp_path / "o"
    cli.main(["run", str(write(tmp_path, 'experiment = "fake"\nseed = 6\n[params]\nscale = 0.3\n')), "--out", str(out)])
    rows = list(cli.csv.DictReader(open(out / "summary.csv")))
    assert float(rows[0]["X_mean"]) == 0.3 * 7 and float(rows[0]["X_std"]) == 0.0


def test_identical_rows_have_zero_std():
    rows = [{"arm": "a", "x": "0.125"}, {"arm": "a", "x": "0.125"}]
    (r,) = cli.aggregate(rows, (("X", "x", 1.0),), ["a"])
    assert r["X_mean"] == 0.125 and r["X_std"] == 0.0 and r["n"] == 2


def test_aggregate_matches_hand_computed_fixture():
    # CE 1, 2, 4: mean 7/3, sample variance ((4/3)^2 + (1/3)^2 + (5/3)^2) / 2 = 7/3
    rows = [{"arm": "p", "CE": v, "success": s} for v, s in (("1", "1"), ("2", "1"), ("4", "0"))]
    rows.append({"arm": "q", "CE": "9", "success": "0", "status": "diverged"})
    agg = cli.aggregate(rows, (("CE", "CE", 1.0), ("SR", "success", 100.0)), ["p", "q"])
    assert agg[0]["CE_mean"] == pytest.approx(7 / 3, abs=1e-15)
    assert agg[0]["CE_std"] == pytest.approx(math.sqrt(7 / 3), abs=1e-15)
    assert agg[0]["SR_mean"] == pytest.approx(200 / 3)
    assert agg[1]["n"] == 0 and math.isnan(agg[1]["CE_mean"])


def test_fmt_is_exact_and_stable():
    assert cli.fmt(0.1) == "0.1" and cli.fmt(np.float32(0.5)) == "0.5"
    assert cli.fmt(True) == "1" and cli.fmt(np.int64(3)) == "3" and cli.fmt(math.nan) == "nan"
    x = 1 / 3
    assert float(cli.fmt(x)) == x
