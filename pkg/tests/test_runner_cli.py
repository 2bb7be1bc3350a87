import json

import numpy as np
import pytest

from apw.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main
from apw.errors import ConfigError
from apw.runner import ExperimentConfig, read_epochs_csv, run, verify
from apw.training import EPOCH_COLUMNS

LR = {
    "dataset": {"generator": "gaussian_2class", "n": 600, "std": 1.5, "center_range": [-10, 10], "split": [0.7, 0.3]},
    "model": {"kind": "logistic"},
    "optimizer": {"kind": "lbfgs", "max_iter": 60},
    "scheduler": {"e_mode": "fixed", "e": 0.3, "q_mode": "train-fraction", "q_factor": 0.1},
    "variant": "APW-E",
    "eval_threshold": 0.3,
    "seeds": [0, 1, 2, 3, 4],
}


def _cfg(tmp_path, name="run", **over):
    raw = json.loads(json.dumps(LR))
    raw.update(over)
    raw["output_dir"] = str(tmp_path / name)
    return ExperimentConfig.from_dict(raw)


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"colour": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seeds": []})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"variant": "APW-Q"})
    cfg = ExperimentConfig.from_dict({}).with_overrides(["scheduler.tau=0.3", 'variant="S-APW-A"'])
    assert cfg.raw["scheduler"]["tau"] == 0.3 and cfg.variant.name == "S-APW-A"
    with pytest.raises(ConfigError):
        cfg.with_overrides(["scheduler.nope=1"])


def test_five_seed_run_and_verify(tmp_path):
    cfg = _cfg(tmp_path)
    summary = run(cfg)
    assert summary["failed_seeds"] == []
    out = cfg.output_dir()
    for s in range(5):
        cols = read_epochs_csv(out / f"seed_{s}" / "epochs.csv")
        assert tuple(cols) == EPOCH_COLUMNS
        info = json.loads((out / f"seed_{s}" / "run.json").read_text())
        assert info["q"] == 42 and info["e"] == 0.3
    assert set(summary["aggregate"]) >= {"eprop_test", "tacc_test"}
    reports = verify(out)
    assert len(reports) == 5 and all(r.passed for r in reports.values())
    assert main(["verify", str(out)]) == EXIT_OK


def test_verify_detects_tampered_trace(tmp_path):
    cfg = _cfg(tmp_path, seeds=[0])
    run(cfg)
    p = cfg.output_dir() / "seed_0" / "trace.npz"
    with np.load(p) as f:
        arr = dict(f)
    arr["z"] = arr["z"].copy()
    arr["z"][3] *= 1.01
    np.savez(p, **arr)
    assert main(["verify", str(cfg.output_dir())]) == EXIT_VERIFY


def test_reruns_are_byte_identical(tmp_path):
    a = _cfg(tmp_path, "a", seeds=[3], variant="S-APW-EI", optimizer={"kind": "sgd", "epochs": 30, "step": 0.05})
    b = _cfg(tmp_path, "b", seeds=[3], variant="S-APW-EI", optimizer={"kind": "sgd", "epochs": 30, "step": 0.05})
    run(a)
    run(b, jobs=2)
    for name in ("epochs.csv", "train.csv", "test.csv", "checkpoints.bin", "weights.bin"):
        assert (a.output_dir() / "seed_3" / name).read_bytes() == (b.output_dir() / "seed_3" / name).read_bytes()


def test_report_is_deterministic(tmp_path):
    cfg = _cfg(tmp_path, seeds=[0, 1])
    run(cfg)
    assert main(["report", str(cfg.output_dir()), "--out", str(tmp_path / "r1")]) == EXIT_OK
    assert main(["report", str(cfg.output_dir()), "--out", str(tmp_path / "r2")]) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert "run_hyperplane.svg" in files and "table.txt" in files
    for f in files:
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_cli_train_gen_data_and_exit_codes(tmp_path, capsys):
    conf = tmp_path / "c.json"
    raw = dict(LR, seeds=[0], output_dir=str(tmp_path / "cli"))
    conf.write_text(json.dumps(raw))
    assert main(["train", "--config", str(conf), "--variant", "vanilla"]) == EXIT_OK
    assert "seed 0" in capsys.readouterr().out
    assert main(["train", "--config", str(conf), "--set", "bogus=1"]) == EXIT_CONFIG
    assert main(["train", "--config", str(conf), "--variant", "APW-Z"]) == EXIT_CONFIG
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--out", str(out), "--seed", "2", "--n", "100"]) == EXIT_OK
    assert out.read_text().startswith("f0,f1,y\n")
    assert main(["verify", str(conf)]) == EXIT_OK


def test_cli_pd_on_run_checkpoints(tmp_path, capsys):
    cfg = _cfg(tmp_path, seeds=[0], variant="vanilla")
    run(cfg)
    d = cfg.output_dir() / "seed_0"
    assert main(["pd", "--checkpoints", str(d / "checkpoints.bin"), "--losses", str(d / "losses.csv")]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert 2 <= res["t_star"] <= 60 and res["e_estimate"] > 0


def test_pd_estimated_threshold_is_recorded(tmp_path):
    cfg = _cfg(tmp_path, seeds=[1], scheduler={"e_mode": "pd-estimated", "q_mode": "train-fraction", "q_factor": 0.1})
    info = run(cfg)["runs"][0]
    assert info["t_star"] >= 2 and info["e"] > 0


def test_pd_can_exclude_biases(tmp_path):
    sched = {"e_mode": "pd-estimated", "q_mode": "train-fraction", "q_factor": 0.1}
    a = run(_cfg(tmp_path, "with", seeds=[1], scheduler=sched))["runs"][0]
    b = run(_cfg(tmp_path, "without", seeds=[1], scheduler=sched, pd_include_bias=False))["runs"][0]
    assert a["t_star"] >= 2 and b["t_star"] >= 2 and b["e"] > 0
    with pytest.raises(ConfigError):
        _cfg(tmp_path, pd_include_bias="no")


def test_best_checkpoint_selection(tmp_path):
    cfg = _cfg(tmp_path, seeds=[0], best_checkpoint=True, checkpoint_stride=5)
    info = run(cfg)["runs"][0]
    assert info["best_epoch"] % 5 == 0 and 5 <= info["best_epoch"] <= info["epochs"]
    assert (cfg.output_dir() / "seed_0" / "best_model.bin").exists()
    plain = run(_cfg(tmp_path, "plain", seeds=[0]))["runs"][0]
    assert "best_epoch" not in plain
