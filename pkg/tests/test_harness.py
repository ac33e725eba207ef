import json
from pathlib import Path

import numpy as np
import pytest

from hsmadmm.config import (ConfigInvalid, RunConfig, config_to_text,
                            load_config, parse_config_text)
from hsmadmm.harness import emit_plots, main
from hsmadmm.simulator import TRACE_HEADER, read_trace_csv
from hsmadmm.svgplot import EmptyTrace


BASE_CFG = """
# composite run
algorithm = hsm_admm
topology = ring
n = 4
p = 2
problem = logistic
samples_per_agent = 8
regularizer = l1
l1_weight = 0.01
alpha = 0.1
K = 40
seed = 3
track_lyapunov = false
"""


def write_cfg(tmp_path, text=BASE_CFG, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def strip_wall(path):
    lines = Path(path).read_text().splitlines()
    return [",".join(line.split(",")[:-1]) for line in lines]


def test_parse_defaults_and_types():
    cfg = parse_config_text("K = 5\nnoniid = true\nc_rho = 2.5\n")
    assert cfg.K == 5 and cfg.noniid is True and cfg.c_rho == 2.5
    assert cfg.algorithm == "hsm_admm"


def test_parse_rejects_unknown_key():
    with pytest.raises(ConfigInvalid):
        parse_config_text("not_a_key = 1\n")


def test_parse_rejects_duplicates_and_bad_values():
    with pytest.raises(ConfigInvalid):
        parse_config_text("K = 5\nK = 6\n")
    with pytest.raises(ConfigInvalid):
        parse_config_text("K = five\n")
    with pytest.raises(ConfigInvalid):
        parse_config_text("noniid = maybe\n")
    with pytest.raises(ConfigInvalid):
        parse_config_text("K = 5 K = 6\n")


def test_validation_catches_inconsistencies():
    with pytest.raises(ConfigInvalid):
        RunConfig(l1_weight=0.5, regularizer="none").validate()
    with pytest.raises(ConfigInvalid):
        RunConfig(n=1).validate()
    with pytest.raises(ConfigInvalid):
        RunConfig(c_eta=0.0).validate()
    with pytest.raises(ConfigInvalid):
        RunConfig(algorithm="magic").validate()
    with pytest.raises(ConfigInvalid):
        RunConfig(dataset_csv="x.csv").validate()


def test_config_text_round_trip():
    cfg = RunConfig(K=7, noniid=True, l1_weight=0.25, regularizer="l1")
    again = parse_config_text(config_to_text(cfg))
    assert again == cfg


def test_run_command_outputs(tmp_path):
    cfg_path = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    trace_path = out / "trace.csv"
    assert trace_path.exists()
    header = trace_path.read_text().splitlines()[0]
    assert header == ",".join(TRACE_HEADER)
    summary = json.loads((out / "summary.json").read_text())
    cols = read_trace_csv(trace_path)
    final = summary["replicas"][0]["final"]
    for name, val in final.items():
        got = cols[name][-1]
        if np.isnan(got):
            assert val is None or np.isnan(val)
        else:
            assert got == val
    assert (out / "config.cfg").exists()


def test_run_rerun_is_byte_identical_sans_wall(tmp_path):
    cfg_path = write_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
    assert strip_wall(out1 / "trace.csv") == strip_wall(out2 / "trace.csv")
    assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()


def test_missing_config_exits_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_invalid_config_exits_2(tmp_path):
    path = write_cfg(tmp_path, "bogus_key = 1\n")
    assert main(["run", "--config", str(path)]) == 2


def test_divergence_exits_3(tmp_path):
    text = BASE_CFG + "c_eta = 1e-9\ndivergence_guard = 1e6\nK = 300\n"
    path = write_cfg(tmp_path, text.replace("K = 40\n", ""))
    out = tmp_path / "div"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "diverged"
    assert (out / "trace.csv").exists()


def test_sweep_layout(tmp_path):
    cfg_path = write_cfg(tmp_path, BASE_CFG.replace("K = 40", "K = 15"))
    out = tmp_path / "sweep"
    rc = main(["sweep", "--config", str(cfg_path), "--topologies", "ring,star",
               "--algos", "hsm_admm,prox_gt", "--seeds", "2",
               "--out", str(out)])
    assert rc == 0
    summary = json.loads((out / "sweep_summary.json").read_text())
    cells = {"ring__hsm_admm", "ring__prox_gt", "star__hsm_admm", "star__prox_gt"}
    assert set(summary["cells"]) == cells
    for cell in cells:
        assert (out / cell / "replica_000" / "trace.csv").exists()
        assert (out / cell / "replica_001" / "trace.csv").exists()
        assert (out / cell / "summary.json").exists()


def test_plot_command_and_determinism(tmp_path):
    cfg_path = write_cfg(tmp_path)
    out = tmp_path / "run_out"
    main(["run", "--config", str(cfg_path), "--out", str(out)])
    plots = tmp_path / "plots"
    rc = main(["plot", "--traces", str(out / "trace.csv"), "--labels", "hsm_admm",
               "--out", str(plots)])
    assert rc == 0
    svg = (plots / "stationarity_vs_k.svg").read_text()
    assert "iteration k" in svg and "stationarity measure" in svg
    assert "hsm_admm" in svg
    again = tmp_path / "plots2"
    main(["plot", "--traces", str(out / "trace.csv"), "--labels", "hsm_admm",
          "--out", str(again)])
    for name in ("stationarity_vs_k.svg", "residuals_vs_k.svg",
                 "stationarity_vs_scalars.svg"):
        assert (plots / name).read_bytes() == (again / name).read_bytes()


def test_emit_plots_legend_and_meta(tmp_path):
    ks = np.arange(1.0, 51.0)
    t1 = {"k": ks, "stat_total": 1.0 / ks, "res_combined": 1.0 / ks,
          "scalars_tx": 10.0 * ks}
    t2 = {"k": ks, "stat_total": 2.0 / ks, "res_combined": 2.0 / ks,
          "scalars_tx": 20.0 * ks}
    meta = emit_plots({"one": t1, "two": t2}, tmp_path)
    svg = (tmp_path / "stationarity_vs_k.svg").read_text()
    assert "one" in svg and "two" in svg
    rng = meta["stationarity_vs_scalars.svg"]
    assert rng["two"][1] == pytest.approx(2 * rng["one"][1])
    with pytest.raises(EmptyTrace):
        emit_plots({}, tmp_path)


def test_from_edge_list_config(tmp_path):
    edges = tmp_path / "edges.txt"
    edges.write_text("0 1\n1 2\n2 3\n0 3\n")
    text = BASE_CFG.replace("topology = ring", "topology = from_edge_list")
    text += f"edge_list = {edges}\n"
    path = write_cfg(tmp_path, text)
    out = tmp_path / "el"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0


def test_verify_command_passes(capsys):
    assert main(["verify"]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("[")]
    assert len(lines) >= 8
    assert all(ln.startswith("[PASS]") for ln in lines)
