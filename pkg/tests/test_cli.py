import json

import numpy as np
import pytest

from qbattery.cli import main
from qbattery.results import read_csv


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text("# homogeneous battery\nn_b = 3\nn_c = 3\nv_b = 1.0\nv_c = 1.0\n")
    return path


def test_dynamics_writes_csv_and_manifest(tmp_path, config):
    code, out = run(tmp_path, "dyn", "dynamics", "--config", str(config), "--t-max", "2", "--n-samples", "21")
    assert code == 0
    cols = read_csv(out / "dynamics.csv")
    assert list(cols) == ["t", "E_B", "P_B", "eta_B", "S_vN", "S_vN_norm", "E_total"]
    assert cols["t"].size == 21 and abs(cols["E_B"][0]) < 1e-12
    man = json.loads((out / "manifest.json").read_text())
    assert man["verb"] == "dynamics" and man["outputs"] == ["dynamics.csv"]
    assert man["system"]["n_b"] == 3 and len(man["input_sha256"]) == 64
    assert man["summary"]["engine"] == "collective"


def test_reruns_are_byte_identical(tmp_path, config):
    argv = ("sweep", "--config", str(config), "--axis", "charger_size", "--points", "1,2,4", "--n-samples", "51")
    _, a = run(tmp_path, "a", *argv)
    _, b = run(tmp_path, "b", *argv, "--jobs", "1")
    for name in ("sweep.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_auto_and_full_engines_agree(tmp_path, config):
    argv = ("dynamics", "--config", str(config), "--set", "j_c=0.4", "--t-max", "3", "--n-samples", "31")
    _, a = run(tmp_path, "auto", *argv)
    _, f = run(tmp_path, "full", *argv, "--engine", "full")
    ca, cf = read_csv(a / "dynamics.csv"), read_csv(f / "dynamics.csv")
    for k in ("E_B", "eta_B", "S_vN"):
        np.testing.assert_allclose(ca[k], cf[k], atol=1e-8)


def test_unknown_key_exits_with_config_code(tmp_path, config, capsys):
    code, out = run(tmp_path, "bad", "dynamics", "--config", str(config), "--set", "n_q=4")
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and "n_q" in err["message"]
    assert json.loads((out / "error.json").read_text())["exit_code"] == 2
    assert not (out / "manifest.json").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ("dynamics", "--set", "n_b=2"),
        ("dynamics", "--set", "n_b=2", "--set", "n_c=2", "--n-samples", "2"),
        ("sweep", "--set", "n_b=2", "--set", "n_c=2"),
        ("sweep", "--set", "n_b=2", "--set", "n_c=2", "--axis", "total_size", "--points", "a,b"),
        ("noise", "--set", "n_b=2", "--set", "n_c=2"),
        ("dynamics", "--set", "n_b=2", "--set", "n_c=2", "--seed", "-1"),
    ],
)
def test_config_errors(tmp_path, argv):
    code, _ = run(tmp_path, "err", *argv)
    assert code == 2


def test_missing_config_file_exits_2(tmp_path):
    code, _ = run(tmp_path, "missing", "dynamics", "--config", str(tmp_path / "nope.cfg"))
    assert code == 2


def test_maxima_and_parallel(tmp_path):
    code, out = run(tmp_path, "max", "maxima", "--set", "n_b=1", "--set", "n_c=1", "--set", "j_b=0",
                    "--set", "j_c=0", "--set", "v_c=0.2", "--n-samples", "41")
    assert code == 0
    header, row = (out / "maxima.csv").read_text().splitlines()
    assert header.startswith("point,E_max,P_max,t_E,t_P")
    e_max = float(row.split(",")[1])
    code, out = run(tmp_path, "par", "parallel", "--set", "n_b=1", "--set", "n_c=1", "--set", "v_c=0.2")
    assert code == 0
    summary = json.loads((out / "manifest.json").read_text())["summary"]["maxima"]
    assert e_max == pytest.approx(summary["E_max"], rel=1e-8)


def test_scaling_writes_fits(tmp_path, config):
    code, out = run(tmp_path, "sc", "scaling", "--config", str(config), "--log-range", "50:400:4")
    assert code == 0
    fits = json.loads((out / "fit.json").read_text())
    assert set(fits) == {"E_max", "P_max", "inv_t_E", "inv_t_P"}
    assert 1.3 < fits["P_max"]["alpha"] < 1.7


def test_sweep_grid(tmp_path, config):
    code, out = run(tmp_path, "grid", "sweep", "--config", str(config), "--axis", "jc_dv_grid",
                    "--points", "0:-8,0:8,1:-8", "--n-samples", "101")
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["0.0:-8.0", "0.0:8.0", "1.0:-8.0"]


def test_noise_verb(tmp_path):
    code, out = run(tmp_path, "noise", "noise", "--set", "n_b=1", "--set", "n_c=1", "--set", "delta_j=0,0.2",
                    "--set", "realizations=3", "--points", "2,3,4", "--seed", "11")
    assert code == 0
    assert len((out / "noise.csv").read_text().splitlines()) == 1 + 2 * 3 * 3
    fit = json.loads((out / "noise_fit.json").read_text())
    assert set(fit) == {"0.0", "0.2"}
    stats = read_csv(out / "noise_stats.csv")
    assert stats["n"].size == 6


def test_hp_verb(tmp_path):
    code, out = run(tmp_path, "hp", "hp", "--set", "n_b=100", "--set", "n_c=100", "--set", "v_c=0.999")
    assert code == 0
    summary = json.loads((out / "manifest.json").read_text())["summary"]
    assert summary["regime"] == "oscillatory"
    assert summary["scaling"]["branch"] == "positive_offset"
    assert read_csv(out / "hp.csv")["S_vN"][0] == 0.0


def test_validate_verb(tmp_path, capsys):
    code, out = run(tmp_path, "val", "validate")
    assert code == 0
    assert all(l.startswith("PASS") for l in capsys.readouterr().out.strip().splitlines())
    assert (out / "validate.csv").exists()


def test_dynamics_with_noise_uses_full_engine(tmp_path):
    code, out = run(tmp_path, "nd", "dynamics", "--set", "n_b=2", "--set", "n_c=2", "--set", "delta_j=0.3",
                    "--t-max", "1", "--n-samples", "11")
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["summary"]["engine"] == "full"
