import math
import os

import numpy as np
import pytest
import yaml

from fdsic import cli, harness
from fdsic.harness import ExperimentConfig


def tiny_config(tmp_path, **kw):
    cfg = ExperimentConfig(
        betas=[0.9, 0.999],
        n_seeds=3,
        n_tuning_seeds=1,
        static_len=400,
        dynamic_len=400,
        mbnn_epochs=2,
        grids={
            "linear-lms": [1e-3, 1e-2],
            "wlmp-lms": [1e-5, 1e-4],
            "wlmp-rls": [0.99, 0.999],
            "mbnn-ftrl": [0.03, 0.1],
        },
        out_dir=str(tmp_path / "out"),
    )
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="module")
def tiny_sweep(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("sweep"))
    summary, results = harness.run_sweep(cfg)
    return cfg, summary, results


# ---------------------------------------------------------------- config


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.betas == [0.9, 0.99, 0.999, 0.9999, 0.99999]
    assert (cfg.n_seeds, cfg.n_tuning_seeds, cfg.static_len, cfg.dynamic_len, cfg.noise_db) == (50, 10, 10000, 10000, -40)
    assert len(cfg.grids["linear-lms"]) == 43
    assert cfg.grids["linear-lms"][7] / cfg.grids["linear-lms"][0] == pytest.approx(10)
    assert cfg.grids["wlmp-rls"] == [0.9, 0.99, 0.995, 0.999, 0.9995, 0.9999, 1.0]
    assert cfg.tuning_seeds == list(range(10)) and cfg.eval_seeds == list(range(10, 50))


def test_default_sweep_size():
    cfg = ExperimentConfig()
    assert len(cfg.betas) * len(cfg.eval_seeds) * len(cfg.methods) == 800


def test_split_with_one_evaluation_seed():
    cfg = ExperimentConfig(n_seeds=11, n_tuning_seeds=10)
    assert cfg.eval_seeds == [10]


@pytest.mark.parametrize(
    "kw",
    [dict(n_seeds=5, n_tuning_seeds=5), dict(methods=["svm"]), dict(betas=[1.0]), dict(static_len=0)],
)
def test_invalid_config(kw):
    cfg = ExperimentConfig(**kw)
    with pytest.raises(ValueError):
        cfg.validate()


def test_yaml_round_trip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"n_seeds": 7, "hw": {"rice_k_factor": 5.0}, "ofdm": {"constellation": "16QAM"},
                                    "grids": {"wlmp-rls": [0.9, 0.99]}}))
    cfg = ExperimentConfig.load(path)
    assert cfg.n_seeds == 7 and cfg.hw.rice_k_factor == 5.0
    assert cfg.ofdm.constellation.value == "16QAM"
    assert cfg.grids["wlmp-rls"] == [0.9, 0.99] and len(cfg.grids["wlmp-lms"]) == 43
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_empty_yaml_gives_defaults(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("")
    assert ExperimentConfig.load(path) == ExperimentConfig()


def test_unknown_yaml_key_rejected():
    with pytest.raises(ValueError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})


def test_hash_ignores_plumbing():
    a, b = ExperimentConfig(), ExperimentConfig(out_dir="elsewhere", jobs=4)
    assert a.hash() == b.hash()
    assert a.hash() != ExperimentConfig(noise_db=-30).hash()


# ---------------------------------------------------------------- sweep


def test_no_tuning_seed_in_results(tiny_sweep):
    cfg, summary, results = tiny_sweep
    assert {r.seed for r in results} == set(cfg.eval_seeds)
    assert not {r.seed for r in results} & set(cfg.tuning_seeds)
    assert len(results) == len(cfg.betas) * len(cfg.eval_seeds) * 4
    assert all(r.drop_db == r.static_cancellation_db - r.dynamic_cancellation_db for r in results)


def test_summary_shape(tiny_sweep):
    cfg, summary, _ = tiny_sweep
    assert len(summary.rows) == 4 * len(cfg.betas)
    row = summary.get("linear-lms", 0.9)
    assert row.n_runs == 2 and row.flops == 68 and row.oversampling == 1
    assert summary.get("wlmp-rls", 0.999).flops == (34668 + 16092) * 100


def test_emit_and_report(tiny_sweep, tmp_path):
    _, summary, results = tiny_sweep
    out = harness.emit_results(summary, results, tmp_path)
    names = {p.name for p in out.iterdir()}
    assert {"runs.csv", "summary.csv", "complexity.csv", "flops_vs_cancellation.csv"} <= names
    runs = (out / "runs.csv").read_text().splitlines()
    assert runs[0] == ",".join(harness.RUNS_HEADER)
    assert len(runs) == 1 + len(results)
    summary_text = (out / "summary.csv").read_text()
    assert len(summary_text.splitlines()) == 1 + 8
    flops = (out / "flops_vs_cancellation.csv").read_text().splitlines()
    assert flops[1].startswith("linear-lms,0.9,") and flops[1].endswith(",68")
    assert "mbnn-ftrl,22," in (out / "complexity.csv").read_text()
    before = {n: (out / n).read_bytes() for n in ("summary.csv", "flops_vs_cancellation.csv")}
    (out / "summary.csv").unlink()
    harness.report(out)
    assert all((out / n).read_bytes() == b for n, b in before.items())


def test_six_significant_digits(tiny_sweep, tmp_path):
    _, summary, results = tiny_sweep
    harness.emit_results(summary, results, tmp_path)
    row = (tmp_path / "runs.csv").read_text().splitlines()[1].split(",")
    for cell in row[4:7]:
        digits = cell.lstrip("-").replace(".", "").split("e")[0].lstrip("0")
        assert len(digits) <= 6


def test_parallel_matches_serial(tiny_sweep, tmp_path):
    cfg, summary, results = tiny_sweep
    par = tiny_config(tmp_path, jobs=2)
    chosen = {m: {b: summary.get(m, b).hyperparam for b in cfg.betas} for m in cfg.methods}
    _, res2 = harness.run_sweep(par, chosen)
    harness.emit_results(*harness.run_sweep(cfg, chosen), tmp_path / "a")
    harness.emit_results(harness.summarize(res2, cfg.methods, cfg.betas), res2, tmp_path / "b")
    for name in ("runs.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_divergence_recorded_not_dropped(tmp_path):
    cfg = tiny_config(tmp_path, methods=["linear-lms"], betas=[0.9])
    summary, results = harness.run_sweep(cfg, {"linear-lms": {0.9: 1e3}})
    assert all(r.dynamic_cancellation_db == -math.inf for r in results)
    row = summary.get("linear-lms", 0.9)
    assert row.n_diverged == row.n_runs == 2
    assert row.mean_dynamic_db == -math.inf
    assert summary.diverged_runs == [("linear-lms", 0.9, 1), ("linear-lms", 0.9, 2)]
    harness.emit_results(summary, results, tmp_path)
    assert ",-inf," in (tmp_path / "runs.csv").read_text()


def test_unwritable_output_dir_reports_path(tiny_sweep, tmp_path):
    _, summary, results = tiny_sweep
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match=str(blocker)):
        harness.emit_results(summary, results, blocker / "sub")


def test_tuned_values_persist(tmp_path):
    cfg = tiny_config(tmp_path)
    chosen = {m: {b: cfg.grids[m][0] for b in cfg.betas} for m in cfg.methods}
    harness.save_tuned(cfg, chosen)
    assert harness.load_tuned(cfg) == chosen
    other = tiny_config(tmp_path, noise_db=-30.0)
    assert harness.load_tuned(other) is None


def test_flops_at_cancellation_interpolates():
    rows = [
        harness.SummaryRow("m", b, os_, 1, 0, 40, db, 0, 0, 0, 0, 100.0 * os_)
        for b, os_, db in [(0.9, 1, 10.0), (0.99, 10, 20.0), (0.999, 100, 30.0)]
    ]
    s = harness.SweepSummary(rows, [])
    assert harness.flops_at_cancellation(s, "m", 5.0) == 100.0
    assert harness.flops_at_cancellation(s, "m", 15.0) == pytest.approx(10 ** 2.5)
    assert harness.flops_at_cancellation(s, "m", 30.0) == pytest.approx(1e4)
    assert math.isnan(harness.flops_at_cancellation(s, "m", 31.0))


# ---------------------------------------------------------------- CLI


def test_cli_count_all(capsys):
    assert cli.main(["count", "--methods", "all"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "method,n_params,n_add,n_mult,n_div,n_sqrt"
    assert [line.split(",")[0] for line in out[1:5]] == list(harness.METHODS)
    assert out[1] == "linear-lms,6,47,21,0,0"


def test_cli_rejects_unknown_subcommand_and_flag(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        cli.main(["count", "--nope"])
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_cli_bad_method_is_diagnosed(capsys):
    assert cli.main(["count", "--methods", "svm"]) != 0
    assert "svm" in capsys.readouterr().err


def test_cli_tune_run_report(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    conf = tmp_path / "tiny.yaml"
    d = cfg.to_dict()
    d.pop("out_dir")
    conf.write_text(yaml.safe_dump(d))
    out = tmp_path / "res"
    assert cli.main(["tune", "--config", str(conf), "--out", str(out)]) == 0
    assert (out / "tuned.json").exists()
    assert cli.main(["run", "--config", str(conf), "--out", str(out)]) == 0
    summary = (out / "summary.csv").read_bytes()
    assert cli.main(["report", "--out", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == summary


def test_cli_generate_honours_env(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUT_ENV, str(tmp_path / "env"))
    conf = tmp_path / "g.yaml"
    conf.write_text(yaml.safe_dump({"static_len": 100, "dynamic_len": 50}))
    assert cli.main(["generate", "--config", str(conf), "--seeds", "2", "--betas", "0.9"]) == 0
    files = sorted(os.listdir(tmp_path / "env" / "datasets"))
    assert files == ["seed000_beta0.9.csv", "seed000_beta0.9.truth.csv", "seed001_beta0.9.csv", "seed001_beta0.9.truth.csv"]
