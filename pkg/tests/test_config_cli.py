import numpy as np
import pytest

from blochlab.cli import main
from blochlab.config import load_config, parse_config
from blochlab.errors import ConfigParseError, ConfigValidationError

BASE = """\
[lattice]
basis = [[1.0]]

[physics]
hbar = 0.02
T = 0.5
dt = 1e-3

[discretization]
m = 48
n_k = 8
n_q = 10
n_p = 14
n_time_obs = 16
n_time_gc = 200
gc_per_axis = 8
gc_quasi = 40

[scenario]
K = [((-0.5,), (0.5,), (0.5,), (1.5,))]
omega = [((-0.1,), (0.1,))]
delta = 0.05

[initial]
kind = toeplitz
center_q = (0.0,)
center_p = (1.0,)
sigma_q = 0.1
sigma_p = 0.15
"""


def test_parse_sections_and_literals():
    sections = parse_config(BASE)
    assert sections["physics"]["hbar"] == 0.02
    assert sections["scenario"]["K"][0][2] == (0.5,)
    assert sections["initial"]["kind"] == "toeplitz"


def test_parse_error_reports_line():
    with pytest.raises(ConfigParseError) as err:
        parse_config("[lattice]\nbasis [[1.0]]\n")
    assert err.value.line == 2


def test_parse_rejects_unknown_section():
    with pytest.raises(ConfigParseError):
        parse_config("[nonsense]\nx = 1\n")


def test_parse_rejects_orphan_key():
    with pytest.raises(ConfigParseError):
        parse_config("x = 1\n")


def test_missing_required_field_names_it():
    text = BASE.replace("hbar = 0.02\n", "")
    with pytest.raises(ConfigValidationError) as err:
        load_config(text)
    assert "physics.hbar" in str(err.value)


def test_validator_packet_resolution():
    text = BASE.replace("m = 48", "m = 8")
    with pytest.raises(ConfigValidationError) as err:
        load_config(text)
    assert "discretization.m" in str(err.value)


def test_validator_bad_horizon():
    text = BASE.replace("T = 0.5", "T = 0.0")
    with pytest.raises(ConfigValidationError) as err:
        load_config(text)
    assert "physics.T" in str(err.value)


def test_validator_antialiasing():
    text = BASE + "\n[potential]\nterms = [((40,), 0.1, 0.0)]\n"
    with pytest.raises(ConfigValidationError) as err:
        load_config(text)
    assert "anti-aliasing" in str(err.value)


def test_load_config_roundtrip_objects():
    cfg = load_config(BASE)
    scn = cfg.scenario()
    assert scn.hbar == 0.02
    assert scn.k_set.n_boxes == 1
    assert scn.omega.boxes.shape == (1, 2, 1)
    assert cfg.potential().is_zero


def write_cfg(tmp_path, text=BASE, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    # parse error -> 2
    bad = write_cfg(tmp_path, "[lattice]\nbasis [[1.0]]\n", "bad.cfg")
    assert main(["constants", "--config", bad, "--out", str(tmp_path)]) == 2
    # validation error -> 3 naming the field
    missing = write_cfg(tmp_path, BASE.replace("hbar = 0.02\n", ""), "missing.cfg")
    assert main(["constants", "--config", missing, "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "physics.hbar" in err
    # T = 0 -> 3
    zt = write_cfg(tmp_path, BASE.replace("T = 0.5", "T = 0"), "zt.cfg")
    assert main(["constants", "--config", zt, "--out", str(tmp_path)]) == 3


def test_cli_constants_and_metric(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["constants", "--config", cfg, "--out", str(tmp_path)]) == 0
    text = (tmp_path / "out_constants.csv").read_text().splitlines()
    assert text[0].startswith("# blochlab")
    assert text[1] == "constant,value"
    names = [line.split(",")[0] for line in text[2:]]
    assert {"C_GC", "C_toeplitz", "C_pure", "hbar_threshold"} <= set(names)
    assert main(["metric", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = dict(line.split(",") for line in
                (tmp_path / "out_metric.csv").read_text().splitlines()[2:])
    assert float(rows["coupling_energy_sq"]) <= float(rows["bound_sq"]) * (1 + 1e-6)


def test_cli_verify_and_evolve(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = dict(line.split(",") for line in
                (tmp_path / "out_verify.csv").read_text().splitlines()[2:])
    assert float(rows["margin"]) >= -float(rows["error_budget"])
    assert main(["evolve", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "out_evolve.csv").read_text().splitlines()
    assert lines[1] == "t,observed"
    assert len(lines) == 2 + 16 + 1


def test_cli_stability_and_husimi(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["stability", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "out_stability.csv").read_text().splitlines()
    data = np.array([[float(v) for v in line.split(",")] for line in lines[2:]])
    assert np.all(data[:, 1] <= data[:, 2] * (1 + 1e-3))
    assert main(["husimi", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "out_husimi.csv").read_text().splitlines()
    assert lines[1] == "q0,p0,value"
    vals = np.array([float(line.split(",")[2]) for line in lines[2:]])
    assert np.all(vals >= -1e-12)


def test_cli_bloch_check(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["bloch-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "out_bloch_check.csv").read_text().splitlines()
    assert all(line.rsplit(",", 1)[1] == "True" for line in lines[2:])


def test_cli_determinism_bitwise(tmp_path):
    cfg = write_cfg(tmp_path)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
        assert main(["constants", "--config", cfg, "--out", str(out)]) == 0
    for name in ("out_verify.csv", "out_observation.csv", "out_constants.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_cli_env_overrides(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "env_out"
    monkeypatch.setenv("BLOCHLAB_CONFIG", cfg)
    monkeypatch.setenv("BLOCHLAB_OUT", str(out))
    assert main(["constants"]) == 0
    assert (out / "out_constants.csv").exists()


def test_cli_pure_verify(tmp_path):
    text = BASE.replace("kind = toeplitz", "kind = pure")
    cfg = write_cfg(tmp_path, text, "pure.cfg")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = dict(line.split(",") for line in
                (tmp_path / "out_verify.csv").read_text().splitlines()[2:])
    assert rows["kind"] == "pure"
    assert float(rows["std_dev"]) > 0
