import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pvids import cli
from pvids.cli import (
    PARTIAL, VALIDATION, ConfigError, DataCache, ExperimentConfig, best_threshold, build_parser, main,
    read_config, resolve_config, run_matrix,
)
from pvids.telemetry import dataset_digest


def args(*argv):
    return build_parser().parse_args(list(argv))


@pytest.fixture(scope="module")
def day_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["gen", "--days", "1", "--seed", "7", "--setting", "s1,s4", "--out", str(out)]) == 0
    return out


def test_config_precedence(tmp_path):
    cfgf = tmp_path / "exp.cfg"
    cfgf.write_text("# experiment\nseed = 5\ndays = 2\nalgos = lr, rf\n")
    cfg = resolve_config(args("gen", "--config", str(cfgf)), env={})
    assert (cfg.seed, cfg.days, cfg.algos) == (5, 2, ("lr", "rf"))
    cfg = resolve_config(args("gen", "--config", str(cfgf)), env={"PVS_SEED": "9"})
    assert cfg.seed == 9 and cfg.days == 2
    cfg = resolve_config(args("gen", "--config", str(cfgf), "--seed", "11"), env={"PVS_SEED": "9"})
    assert cfg.seed == 11


def test_config_errors_name_the_line(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("seed = 1\nbogus = 3\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:2: unknown key"):
        read_config(f)
    f.write_text("seed = 1\n\ndays = -4\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:3: days"):
        read_config(f)
    f.write_text("no equals sign\n")
    with pytest.raises(ConfigError, match=r":1: expected key = value"):
        read_config(f)


@pytest.mark.parametrize("flag, value", [
    ("--seed", "-1"), ("--seed", str(2**64)), ("--setting", "s9"), ("--scheme", "4"), ("--algos", "svm"),
    ("--days", "0"), ("--profiles", "/nonexistent/dir"),
])
def test_invalid_flags_exit_validation(tmp_path, flag, value, capsys):
    assert main(["gen", "--out", str(tmp_path), flag, value]) == VALIDATION
    assert "error:" in capsys.readouterr().err


def test_selection_parsers():
    cfg = resolve_config(args("matrix", "--setting", "all", "--scheme", "1,3", "--algos", "LR,knn"), env={})
    assert cfg.settings == ("S1", "S2", "S3", "S4")
    assert cfg.schemes == (1, 3) and cfg.algos == ("lr", "knn")


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["frobnicate"])


def test_gen_layout_and_determinism(day_run, tmp_path):
    for s in ("s1", "s4"):
        for v in ("clean", "missing"):
            d = day_run / "data" / s / v
            assert {p.name for p in d.iterdir()} >= {"features.csv", "snapshots.csv", "meta.jsonl"}
    assert main(["gen", "--days", "1", "--seed", "7", "--setting", "s4", "--out", str(tmp_path)]) == 0
    for v in ("clean", "missing"):
        assert dataset_digest(tmp_path / "data" / "s4" / v) == dataset_digest(day_run / "data" / "s4" / v)
    meta = json.loads((day_run / "data" / "s4" / "clean" / "meta.jsonl").read_text().splitlines()[0])
    assert meta["seed"] == 7 and meta["frames"] == 720 and meta["days"] == 1


def test_missing_dataset_is_validation_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--setting", "s2", "--algos", "lr"]) == VALIDATION
    assert "run `gen` first" in capsys.readouterr().err


def test_train_then_eval(day_run, capsys):
    assert main(["train", "--out", str(day_run), "--setting", "s1", "--scheme", "1", "--algos", "lr,knn"]) == 0
    assert (day_run / "models" / "s1_clean_lr.json").exists()
    capsys.readouterr()
    assert main(["eval", "--out", str(day_run), "--setting", "s1", "--scheme", "1", "--algos", "lr,knn"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and all("accuracy=" in ln for ln in lines)


def test_scheme_isolation(day_run):
    cfg = ExperimentConfig(out=day_run, settings=("S1",), schemes=(1,), algos=("lr",))
    cache = DataCache(cfg)
    run_matrix(cfg, cache)
    assert cache.opened == [day_run / "data" / "s1" / "clean"]
    cfg = ExperimentConfig(out=day_run, settings=("S1",), schemes=(3,), algos=("lr",))
    cache = DataCache(cfg)
    run_matrix(cfg, cache)
    assert cache.opened == [day_run / "data" / "s1" / "missing"]


def test_matrix_complete_and_reproducible(day_run, tmp_path, capsys):
    argv = ["matrix", "--out", str(day_run), "--setting", "s1,s4", "--algos", "lr,knn,rf"]
    assert main(argv) == 0
    text = capsys.readouterr().out
    assert "Setting 4 / Scheme 3" in text
    rows = list(csv.DictReader(open(day_run / "report" / "results.csv")))
    keys = [(r["setting"], r["scheme"], r["algorithm"]) for r in rows]
    assert len(keys) == len(set(keys)) == 2 * 3 * 3
    assert all(r["status"] == "ok" for r in rows)
    first = (day_run / "report" / "results.csv").read_bytes()
    assert main(argv) == 0
    assert (day_run / "report" / "results.csv").read_bytes() == first


def test_matrix_partial_failure_isolated(day_run, monkeypatch):
    real = cli._train_one

    def flaky(cfg, cache, setting, variant, algo):
        if algo == "knn":
            raise RuntimeError("boom")
        return real(cfg, cache, setting, variant, algo)

    monkeypatch.setattr(cli, "_train_one", flaky)
    rc = main(["matrix", "--out", str(day_run), "--setting", "s1", "--scheme", "1", "--algos", "lr,knn"])
    assert rc == PARTIAL
    rows = {r["algorithm"]: r["status"] for r in csv.DictReader(open(day_run / "report" / "results.csv"))}
    assert rows == {"lr": "ok", "knn": "failed"}


def test_baseline_outputs(day_run):
    assert main(["baseline", "--out", str(day_run), "--setting", "s4"]) == 0
    d = day_run / "baseline" / "s4"
    rows = list(csv.DictReader(open(d / "apparent_loss.csv")))
    assert len(rows) == 720
    summary = json.loads((d / "threshold.json").read_text())
    assert summary["direction"] in ("above", "below")
    assert 0.5 <= summary["test_accuracy"] <= 1.0


def test_best_threshold_sweep():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    thr, direction, acc = best_threshold(x, np.array([0, 0, 0, 1, 1, 1]))
    assert (thr, direction, acc) == (3.5, "above", 1.0)
    thr, direction, acc = best_threshold(x, np.array([1, 1, 0, 0, 0, 0]))
    assert (thr, direction, acc) == (2.5, "below", 1.0)
    # single class: flag nothing and be right everywhere
    _, _, acc = best_threshold(x, np.zeros(6, int))
    assert acc == 1.0


def test_baseline_error_free_attack_free(net, day_profiles):
    from pvids import telemetry
    from pvids.attack import ScenarioSetting, scenario_pvs
    from pvids.grid import default_pv_placements

    pvs = scenario_pvs(ScenarioSetting.get("S3"), default_pv_placements())
    sim = telemetry.simulate(net, pvs, day_profiles)
    meas = sim.measurements
    assert np.allclose(telemetry.apparent_loss(meas), sim.normal.flow.loss_p, atol=1e-6)
    _, _, acc = best_threshold(telemetry.apparent_loss(meas), np.zeros(len(meas), int))
    assert acc == 1.0


def test_validate_net(capsys):
    assert main(["validate-net"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("ok: loss 224.9") and "bus 65" in out


def test_validate_net_bad_file(tmp_path, capsys):
    (tmp_path / "b.csv").write_text("id,kind,base_kv\n1,substation,12.66\n2,load,12.66\n")
    (tmp_path / "r.csv").write_text("id,from,to,r_ohm,x_ohm,status\n1,1,3,0.1,0.1,closed\n")
    rc = main(["validate-net", "--bus-file", str(tmp_path / "b.csv"), "--branch-file", str(tmp_path / "r.csv")])
    assert rc == VALIDATION
    assert "dangling" in capsys.readouterr().err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "pvids", "--help"], capture_output=True, text=True,
                       env={**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)})
    assert r.returncode == 0
    for sub in ("gen", "train", "eval", "matrix", "baseline", "validate-net"):
        assert sub in r.stdout
