import json

import numpy as np
import pytest

from karula.cli import (
    ConfigError,
    DirLock,
    RunConfig,
    config_hash,
    load_config,
    main,
    read_matrix_csv,
    resolve_config,
    run_pipeline,
)


def tiny_config(tmp_path, **overrides):
    cfg = {
        "experiment": "tiny",
        "seed": 11,
        "repetitions": 2,
        "out_dir": str(tmp_path / "runs"),
        "n_clients": 6,
        "d": 4,
        "n_range": [8, 14],
        "noise_std": 0.8,
        "rounds": 30,
        "participation": 2,
        "n_reference": 6,
        "t": 1.0,
        "cv_rounds": 10,
        "diag_every": 0,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# config loading


def test_minimal_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "just-a-name"}))
    cfg = load_config(path)
    assert cfg.experiment == "just-a-name"
    assert cfg.s == 10  # n_clients 30 // 3


def test_unknown_key_is_hard_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "x", "foo": 1}))
    with pytest.raises(ConfigError, match="foo"):
        load_config(path)


def test_participation_bounds():
    with pytest.raises(ConfigError, match="2 <= s <= n-1"):
        resolve_config({"participation": 0})
    with pytest.raises(ConfigError, match="2 <= s <= n-1"):
        resolve_config({"participation": 30, "n_clients": 30})
    assert resolve_config({"participation": 29, "n_clients": 30}).s == 29


def test_config_parse_error_reports_line(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{\n  broken\n}")
    with pytest.raises(ConfigError, match="line"):
        load_config(path)


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        resolve_config({"seed": -1})
    with pytest.raises(ConfigError):
        resolve_config({"strategies": ["sgd"]})
    with pytest.raises(ConfigError):
        resolve_config({"nu_scaling": "other"})
    with pytest.raises(ConfigError):
        resolve_config({"data_dir": "/definitely/not/there"})


def test_config_hash_stable_and_sensitive():
    a = resolve_config({"seed": 1})
    b = resolve_config({"seed": 1})
    c = resolve_config({"seed": 2})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


# ---------------------------------------------------------------------------
# subcommands


def test_gen_data_writes_clients(tmp_path):
    cfg_path = tiny_config(tmp_path)
    out = tmp_path / "data"
    assert main(["--config", str(cfg_path), "--out", str(out), "gen-data"]) == 0
    files = sorted(out.glob("client_*_train.csv"))
    assert len(files) == 6
    mat = read_matrix_csv(files[0])
    assert mat.shape[1] == 5  # d features + label
    assert files[0].read_text().startswith("# config_hash=")
    truth = json.loads((out / "ground_truth.json").read_text())
    assert len(truth["theta_star"]) == 6


def test_dissim_subcommand(tmp_path):
    cfg_path = tiny_config(tmp_path)
    data = tmp_path / "data"
    main(["--config", str(cfg_path), "--out", str(data), "gen-data"])
    out = tmp_path / "dissim-out"
    assert main(["--config", str(cfg_path), "--out", str(out), "dissim",
                 "--data", str(data)]) == 0
    d = read_matrix_csv(out / "dissim.csv")
    assert d.shape == (6, 6)
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0)
    emb = json.loads((out / "embeddings.json").read_text())
    assert len(emb["embeddings"]) == 6
    assert np.asarray(emb["reference"]).shape == (6, 5)


def test_train_subcommand(tmp_path):
    cfg_path = tiny_config(tmp_path)
    data = tmp_path / "data"
    main(["--config", str(cfg_path), "--out", str(data), "gen-data"])
    out = tmp_path / "train-out"
    assert main(["--config", str(cfg_path), "--out", str(out), "train",
                 "--strategy", "karula", "--t", "1.0", "--data", str(data)]) == 0
    trace = (out / "trace_karula.csv").read_text().splitlines()
    assert trace[1] == "round,objective,grad_mapping_sq,delta_hat,proj_sweeps"
    assert len(trace) == 32  # hash + header + 30 rounds
    models = json.loads((out / "models_karula.json").read_text())
    assert np.asarray(models["models"]).shape == (6, 4)


def test_project_test_subcommand(tmp_path):
    from karula.geometry import FeasibleSet, dykstra_project

    d = (np.ones((3, 3)) - np.eye(3)).tolist()
    payload = {"stack": [[0.0], [0.0], [3.0]], "t": 1.0, "dissimilarity": d,
               "eta": 0.1, "tol": 1e-10, "max_sweeps": 2000}
    inp = tmp_path / "proj.json"
    inp.write_text(json.dumps(payload))
    outp = tmp_path / "res.json"
    assert main(["--out", str(outp), "project-test", "--input", str(inp)]) == 0
    res = json.loads(outp.read_text())
    direct = dykstra_project(np.array(payload["stack"]),
                             FeasibleSet(1.0, np.array(d)), 0.1, 1e-10, 2000)
    assert np.allclose(res["point"], direct.point)
    assert res["sweeps"] == direct.sweeps
    assert res["delta_hat"] == direct.delta_hat


def test_missing_config_exit_code(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json"), "gen-data"]) == 1


# ---------------------------------------------------------------------------
# pipeline


def test_pipeline_end_to_end(tmp_path):
    cfg = load_config(tiny_config(tmp_path))
    assert run_pipeline(cfg) == 0
    exp = tmp_path / "runs" / "tiny"
    summary = json.loads((exp / "summary.json").read_text())
    assert {r["strategy"] for r in summary["rows"]} == {"local", "fedavg", "ifca", "karula"}
    assert summary["seeds"] == 2
    assert "spearman_wins" in summary
    for seed in (11, 12):
        sdir = exp / str(seed)
        assert (sdir / "dissim.csv").exists()
        assert (sdir / "trace_karula.csv").exists()
        assert (sdir / "models_karula.json").exists()
        assert (sdir / "metrics.json").exists()
        assert (sdir / "heatmap_ground_truth.csv").exists()
    assert (exp / "run.log").exists()
    assert not (exp / ".lock").exists()


def test_pipeline_rerun_byte_identical(tmp_path):
    cfg = load_config(tiny_config(tmp_path))
    assert run_pipeline(cfg) == 0
    first = (tmp_path / "runs" / "tiny" / "summary.json").read_bytes()
    assert run_pipeline(cfg) == 0
    second = (tmp_path / "runs" / "tiny" / "summary.json").read_bytes()
    assert first == second


def test_pipeline_local_only_skips_dissim(tmp_path):
    cfg_path = tiny_config(tmp_path, strategies=["local"], repetitions=2)
    cfg = load_config(cfg_path)
    assert run_pipeline(cfg) == 0
    exp = tmp_path / "runs" / "tiny"
    assert not (exp / "11" / "dissim.csv").exists()
    assert (exp / "11" / "models_local.json").exists()


def test_pipeline_rejects_foreign_outputs(tmp_path):
    cfg = load_config(tiny_config(tmp_path))
    assert run_pipeline(cfg) == 0
    other = load_config(tiny_config(tmp_path, seed=99))
    with pytest.raises(RuntimeError, match="fresh output"):
        run_pipeline(other)


def test_dir_lock_blocks_second_owner(tmp_path):
    with DirLock(tmp_path):
        with pytest.raises(RuntimeError, match="in use"):
            with DirLock(tmp_path):
                pass
    # released afterwards
    with DirLock(tmp_path):
        pass


def test_pipeline_check_flag_failure_is_exit_3(tmp_path):
    # local alone cannot satisfy the comparative checks, but check should pass
    # vacuously; force a failure via a doctored summary instead
    from karula.cli import pipeline_checks

    summary = {
        "seeds": 10,
        "spearman_wins": 3,
        "rows": [
            {"strategy": "local", "estimation_error": 10.0, "r2": 0.5},
            {"strategy": "fedavg", "estimation_error": 6.0, "r2": 0.7},
            {"strategy": "ifca", "estimation_error": 6.0, "r2": 0.7},
            {"strategy": "karula", "estimation_error": 7.0, "r2": 0.9},
        ],
    }
    failures = pipeline_checks(load_config(tiny_config(tmp_path)), summary)
    assert any("strictly lowest" in f for f in failures)
    assert any("2x" in f for f in failures)
    assert any("seeds" in f for f in failures)
