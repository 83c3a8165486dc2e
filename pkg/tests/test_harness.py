import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from somiv.cli import main
from somiv.config import StudyConfig, config_from_mapping, load_config, read_params, write_params
from somiv.errors import ConfigError
from somiv.estim import estimate
from somiv.harness import (CHANNELS, RunRecord, StudyResult, emit_reports, experiment_seed,
                           make_experiments, render_svg, run_study)
from somiv.sim import read_dataset_csv
from somiv.vessel import TRUE_VALUES

SMALL = StudyConfig(grid=(400, 800), reps=2, winds=(1.0,), estimators=("iv2", "ls"),
                    n_experiments=2, validation_length=300)


@pytest.fixture(scope="module")
def small_study():
    return run_study(SMALL)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- study --------------------------------------------------------------------

def test_smoke_one_row_per_channel():
    cfg = StudyConfig(grid=(200,), reps=1, winds=(1.0,), estimators=("iv3",), n_experiments=2,
                      validation_length=200)
    res = run_study(cfg)
    assert [r.channel for r in res.records] == list(CHANNELS)


def test_counts_match_config(small_study):
    n = len(SMALL.grid) * SMALL.reps * len(SMALL.winds) * len(SMALL.estimators) * len(CHANNELS)
    assert len(small_study) == n
    for s in small_study.summary().values():
        assert s.n_runs == SMALL.reps


def test_study_deterministic(small_study):
    assert run_study(SMALL) == small_study


def test_parallel_matches_serial(small_study):
    assert run_study(SMALL.with_overrides(jobs=2)) == small_study


def test_seeds_distinct():
    seeds = {experiment_seed(0, r, i) for r in range(20) for i in range(4)}
    assert len(seeds) == 80
    assert experiment_seed(1, 0, 0) != experiment_seed(0, 0, 0)


def test_experiments_sign_diverse():
    data = make_experiments(SMALL, 0, 1.0)
    assert np.sign(data[0].u[:, 1].mean()) == -np.sign(data[1].u[:, 1].mean())
    assert data[0].psi0 != data[1].psi0


def test_summary_excludes_divergences():
    recs = [RunRecord("iv3", 1.0, 100, "surge", k, f, 0.1, True)
            for k, f in enumerate([50.0, -np.inf, 70.0])]
    s = StudyResult(recs).summary()[("iv3", 1.0, 100, "surge")]
    assert s.mean == 60.0 and s.diverged == 1 and s.n_runs == 3


# -- reports ------------------------------------------------------------------

def test_report_files(small_study, tmp_path):
    paths = emit_reports(small_study, tmp_path)
    names = sorted(os.path.basename(p) for p in paths)
    assert "study_runs.csv" in names and "study_summary.csv" in names
    assert names.count("fit_wind1_sway.svg") == 1
    raw = _rows(tmp_path / "study_runs.csv")
    assert list(raw[0]) == ["estimator", "wind_case", "N", "channel", "run", "fit", "param_err"]
    assert len(raw) == len(small_study)


def test_aggregate_equals_raw_average(small_study, tmp_path):
    emit_reports(small_study, tmp_path)
    raw = _rows(tmp_path / "study_runs.csv")
    for row in _rows(tmp_path / "study_summary.csv"):
        fits = [float(r["fit"]) for r in raw
                if (r["estimator"], r["wind_case"], r["N"], r["channel"])
                == (row["estimator"], row["wind_case"], row["N"], row["channel"])]
        fits = [f for f in fits if np.isfinite(f)]
        assert float(row["mean_fit"]) == pytest.approx(np.mean(fits), rel=1e-12, abs=1e-12)


def test_chart_clips_but_table_keeps(tmp_path):
    recs = []
    for est, fit in (("iv2", 80.0), ("ls", -30.0)):
        for N in (100, 200):
            recs += [RunRecord(est, 1.0, N, ch, 0, fit, 0.1, True) for ch in CHANNELS]
    res = StudyResult(recs)
    svg = render_svg(res.summary(), 1.0, "surge", ["iv2", "ls"])
    assert svg.count('<polyline') == 1 and "#1f77b4" in svg.split('<polyline')[1]
    assert svg.count("#2ca02c") == 1  # legend entry only
    emit_reports(res, tmp_path)
    raw = _rows(tmp_path / "study_runs.csv")
    assert any(float(r["fit"]) == -30.0 for r in raw)


def test_channel_filter_errors(small_study, tmp_path):
    with pytest.raises(ValueError):
        emit_reports(small_study, tmp_path, channels=())
    with pytest.raises(ValueError):
        emit_reports(small_study, tmp_path, channels=("heave",))
    with pytest.raises(ValueError):
        emit_reports(StudyResult([]), tmp_path)


# -- config -------------------------------------------------------------------

def test_config_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[study]\nreps = 3\ngrid = [100, 200]\n[noise]\nwind_mean = [2.0, 2.0]\n'
                    '[params.nominal]\n"X_u" = -0.25\n[estimate]\nmax_iter = 5\n')
    cfg = load_config(str(path))
    assert cfg.reps == 3 and cfg.grid == (100, 200)
    assert cfg.noise.wind_mean == (2.0, 2.0)
    assert cfg.nominal.X_u == -0.25 and cfg.nominal.X_vr == 0.8
    assert cfg.options.max_iter == 5


@pytest.mark.parametrize("doc", [{"bogus": {}}, {"study": {"reps": 0}}, {"study": {"grid": [1]}},
                                 {"study": {"colour": 1}}, {"noise": {"var_e_psi": -1.0}},
                                 {"params": {"true": {"Q_x": 1.0}}}])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        config_from_mapping(doc)


def test_missing_config():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/c.toml")


def test_params_round_trip(tmp_path):
    path = tmp_path / "p.toml"
    theta = np.array(TRUE_VALUES) * 1.1
    write_params(str(path), theta)
    np.testing.assert_array_equal(read_params(str(path)).as_array(), theta)


# -- CLI ----------------------------------------------------------------------

def test_cli_study_smoke(tmp_path, capsys):
    out = tmp_path / "study"
    code = main(["study", "--reps", "2", "--grid", "1000", "--wind", "1", "--out", str(out),
                 "--quiet"])
    assert code == 0
    assert (out / "study_runs.csv").is_file() and (out / "fit_wind1_yaw_rate.svg").is_file()


def test_cli_missing_config(capsys):
    assert main(["study", "--config", "/nonexistent.toml"]) == 1
    assert "not found" in capsys.readouterr().err


def test_cli_unknown_flag(capsys):
    assert main(["simulate", "--bogus"]) == 1
    assert main([]) == 1


def test_cli_runtime_failure(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    # Well-formed but identically zero: sign patterns cannot be inferred.
    rows = "".join(f"{k},1,1,1,0,0,0,0,0,0,0\n" for k in range(6))
    bad.write_text("k,u1,u2,u3,y1,y2,y3,y_psi,yaux1,yaux2,yaux3\n" + rows)
    assert main(["estimate", str(bad), "--estimators", "iv1"]) == 2


def test_cli_simulate_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--seed", "7", "--samples", "200", "--out",
                     str(tmp_path / d)]) == 0
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_pipeline_matches_memory(tmp_path, capsys):
    assert main(["simulate", "--seed", "3", "--samples", "300", "--experiments", "2",
                 "--out", str(tmp_path)]) == 0
    cfg = SMALL.with_overrides(seed=3, n_experiments=2, grid=(600,))
    memory = estimate(make_experiments(cfg, 0, 1.0), "iv3", cfg.nominal, cfg.options)
    loaded = [read_dataset_csv(tmp_path / f"experiment_{i}.csv") for i in (1, 2)]
    disk = estimate(loaded, "iv3", cfg.nominal, cfg.options)
    np.testing.assert_array_equal(disk.beta, memory.beta)


def test_cli_estimate_validate_check(tmp_path, capsys):
    main(["simulate", "--seed", "1", "--samples", "400", "--experiments", "2", "--out",
          str(tmp_path)])
    files = [str(tmp_path / f"experiment_{i}.csv") for i in (1, 2)]
    params = tmp_path / "est.toml"
    assert main(["estimate", *files, "--estimators", "iv3", "--compare", "--out",
                 str(params)]) == 0
    assert "rel. error" in capsys.readouterr().out
    assert main(["validate", "--params", str(params)]) == 0
    assert "yaw_rate" in capsys.readouterr().out
    assert main(["validate", "--params", "true"]) == 0
    assert "100.0000" in capsys.readouterr().out
    assert main(["check", *files]) == 0


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "somiv.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "study" in out.stdout
