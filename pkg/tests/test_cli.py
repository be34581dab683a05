import json
import os

import numpy as np

from dgflow.cli import main
from dgflow import fileio


def run(args):
    return main(args)


def make_graph(tmp_path, name="g.json", cls="complete", n=4, seed=0):
    path = str(tmp_path / name)
    assert run(["graph", "--class", cls, "--n", str(n),
                "--seed", str(seed), "--out", path]) == 0
    return path


def test_graph_deterministic(tmp_path):
    a = make_graph(tmp_path, "a/g.json")
    b = make_graph(tmp_path, "b/g.json")
    assert open(a, "rb").read() == open(b, "rb").read()


def test_graph_bad_class(tmp_path, capsys):
    assert run(["graph", "--class", "nope", "--n", "4",
                "--out", str(tmp_path / "g.json")]) == 2


def test_graph_file_valid(tmp_path):
    path = make_graph(tmp_path)
    g, chain = fileio.load_graph(path)
    from dgflow.graphs import validate_chain
    assert validate_chain(chain).all_ok()


def test_missing_chain_exit_1(tmp_path):
    assert run(["simulate", "--chain", str(tmp_path / "none.json"),
                "--beta", "0.1", "--out-dir", str(tmp_path / "o")]) == 1


def test_bad_beta_exit_2(tmp_path):
    path = make_graph(tmp_path)
    assert run(["simulate", "--chain", path, "--beta", "-1",
                "--out-dir", str(tmp_path / "o")]) == 2


def test_simulate_heat_cross_check(tmp_path):
    path = make_graph(tmp_path)
    out = str(tmp_path / "sim")
    assert run(["simulate", "--chain", path, "--v", "0,0,0,0",
                "--beta", "1.0", "--p0", "0.7,0.1,0.1,0.1",
                "--t-max", "0.005", "--grid-points", "11",
                "--substeps", "100", "--samples", "100",
                "--seed", "0", "--out-dir", out]) == 0
    _, chain = fileio.load_graph(path)
    traj = fileio.load_trajectory(os.path.join(out, "trajectory.json"),
                                  chain.pi)
    from dgflow.dynamics import heat_flow
    from dgflow.geometry import make_density
    p0 = np.array([0.7, 0.1, 0.1, 0.1])
    exact = heat_flow(chain, make_density(p0 / chain.pi, chain.pi), traj.grid)
    err = max(np.max(np.abs(a.rho - b.rho))
              for a, b in zip(traj.densities, exact.densities))
    assert err <= 1e-6


def pipeline(tmp_path, steps="300"):
    gpath = make_graph(tmp_path)
    sim = str(tmp_path / "sim")
    assert run(["simulate", "--chain", gpath, "--beta", "0.1",
                "--grid-points", "41", "--samples", "2000",
                "--seed", "1", "--out-dir", sim]) == 0
    tr = str(tmp_path / "tr")
    assert run(["train", "--dataset", os.path.join(sim, "dataset.json"),
                "--chain", gpath, "--steps", steps,
                "--out-dir", tr]) == 0
    return gpath, sim, tr


def test_train_corrupted_dataset_exit_3(tmp_path):
    gpath, sim, _ = pipeline(tmp_path, steps="10")
    ds_path = os.path.join(sim, "dataset.json")
    doc = json.load(open(ds_path))
    doc["payload"]["counts"][0][0] += 1
    json.dump(doc, open(ds_path, "w"))
    assert run(["train", "--dataset", ds_path, "--chain", gpath,
                "--steps", "10", "--out-dir", str(tmp_path / "x")]) == 3


def test_train_wrong_chain_exit_3(tmp_path):
    gpath, sim, _ = pipeline(tmp_path, steps="10")
    other = make_graph(tmp_path, "other.json", seed=9)
    assert run(["train", "--dataset", os.path.join(sim, "dataset.json"),
                "--chain", other, "--steps", "10",
                "--out-dir", str(tmp_path / "x")]) == 3


def test_eval_pred_equals_truth(tmp_path, capsys):
    gpath, sim, tr = pipeline(tmp_path)
    ev = str(tmp_path / "ev")
    truth = os.path.join(sim, "trajectory.json")
    assert run(["eval", "--chain", gpath, "--truth", truth,
                "--pred", truth, "--out-dir", ev]) == 0
    doc = json.load(open(os.path.join(ev, "eval.json")))
    assert doc["time_avg_hellinger"] == 0.0
    assert os.path.exists(os.path.join(ev, "hellinger_per_step.png"))
    assert os.path.exists(os.path.join(ev, "hellinger_per_step.csv"))


def test_eval_grid_mismatch_exit_4(tmp_path):
    gpath, sim, tr = pipeline(tmp_path)
    sim2 = str(tmp_path / "sim2")
    assert run(["simulate", "--chain", gpath, "--beta", "0.1",
                "--grid-points", "11", "--samples", "100",
                "--seed", "1", "--out-dir", sim2]) == 0
    assert run(["eval", "--chain", gpath,
                "--truth", os.path.join(sim, "trajectory.json"),
                "--pred", os.path.join(sim2, "trajectory.json"),
                "--out-dir", str(tmp_path / "ev")]) == 4


def test_checkpoint_roundtrip_and_eval(tmp_path):
    gpath, sim, tr = pipeline(tmp_path)
    params, cfg, dhash = fileio.load_checkpoint(
        os.path.join(tr, "checkpoint.json"))
    assert params.variant == "tabular"
    assert dhash
    ev = str(tmp_path / "ev")
    assert run(["eval", "--chain", gpath,
                "--truth", os.path.join(sim, "trajectory.json"),
                "--checkpoint", os.path.join(tr, "checkpoint.json"),
                "--out-dir", ev]) == 0


def test_manifests_verify(tmp_path):
    gpath, sim, tr = pipeline(tmp_path, steps="50")
    for d in (os.path.dirname(gpath), sim, tr):
        assert fileio.verify_manifest(d)


def bench_config(tmp_path):
    cfg = {
        "classes": ["complete", "grid"],
        "sizes": [4],
        "betas": [0.1],
        "samples": 500,
        "seeds_per_cell": 2,
        "grid_points": 21,
        "substeps": 2,
        "train": {"steps": 200},
    }
    path = str(tmp_path / "cfg.json")
    json.dump(cfg, open(path, "w"))
    return path


def test_bench_dry_run(tmp_path, capsys):
    cfg = bench_config(tmp_path)
    assert run(["bench", "--config", cfg, "--dry-run",
                "--out-dir", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert "4 runs" in out
    assert not os.path.exists(str(tmp_path / "b"))


def test_bench_resume_equivalence(tmp_path):
    cfg = bench_config(tmp_path)
    full = str(tmp_path / "full")
    assert run(["bench", "--config", cfg, "--out-dir", full]) == 0

    resumed = str(tmp_path / "resumed")
    # pre-complete one cell by copying its marker, then resume the rest
    os.makedirs(os.path.join(resumed, "cells"))
    marker = "complete_beta0.1_seed0.json"
    with open(os.path.join(full, "cells", marker)) as f:
        data = f.read()
    with open(os.path.join(resumed, "cells", marker), "w") as f:
        f.write(data)
    assert run(["bench", "--config", cfg, "--out-dir", resumed]) == 0

    a = json.load(open(os.path.join(full, "report.json")))
    b = json.load(open(os.path.join(resumed, "report.json")))
    assert a["payload"]["runs"] == b["payload"]["runs"]
    assert os.path.exists(os.path.join(full, "report.csv"))
    assert os.path.exists(os.path.join(full, "hellinger_by_class.png"))


def test_bench_parallel_matches_serial(tmp_path):
    cfg = bench_config(tmp_path)
    serial = str(tmp_path / "serial")
    par = str(tmp_path / "par")
    assert run(["bench", "--config", cfg, "--out-dir", serial]) == 0
    assert run(["bench", "--config", cfg, "--out-dir", par,
                "--jobs", "2"]) == 0
    a = json.load(open(os.path.join(serial, "report.json")))
    b = json.load(open(os.path.join(par, "report.json")))
    assert a["payload"]["runs"] == b["payload"]["runs"]
