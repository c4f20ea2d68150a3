import csv
import io
from pathlib import Path

import numpy as np
import pytest

from gsfcalc.cli import ConfigError, main, parse_config

ROOT = Path(__file__).resolve().parents[1]
CFG = ROOT / "examples_cfg"


def run(tmp_path, command, text=None, cfg=None, *extra):
    if cfg is None:
        cfg = tmp_path / "run.cfg"
        cfg.write_text(text)
    out = tmp_path / "out"
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.mark.parametrize("name,command,files", [
    ("embed_dirac", "embed", {"kernel.csv", "probes.csv", "weak_limit.csv", "report.txt"}),
    ("embed_heaviside", "embed", {"kernel.csv", "probes.csv", "weak_limit.csv", "report.txt"}),
    ("free", "variational", {"trajectory.csv", "el_residual.csv", "charge.csv", "report.txt"}),
    ("harmonic", "variational", {"trajectory.csv", "el_residual.csv", "charge.csv", "report.txt"}),
    ("harmonic_long", "variational", {"trajectory.csv", "conjugate.csv", "report.txt"}),
    ("geodesic_flat", "geodesic", {"trajectory.csv", "lengths.csv", "standard_length.csv"}),
])
def test_example_configs(tmp_path, name, command, files):
    code, out = run(tmp_path, command, cfg=CFG / f"{name}.cfg")
    assert code == 0
    assert files <= {p.name for p in out.iterdir()}
    assert "FAIL" not in (out / "report.txt").read_text()


def test_eps_column_and_levels(tmp_path):
    code, out = run(tmp_path, "embed", None, CFG / "embed_dirac.cfg", "--eps-levels", "12")
    assert code == 0
    rows = read_csv(out / "probes.csv")
    assert list(rows[0]) == ["k", "eps", "x", "value"]
    eps = sorted({float(r["eps"]) for r in rows}, reverse=True)
    np.testing.assert_array_equal(eps, 2.0 ** -np.arange(1, 13))


def test_heaviside_probe_values(tmp_path):
    code, out = run(tmp_path, "embed", None, CFG / "embed_heaviside.cfg")
    rows = [r for r in read_csv(out / "probes.csv") if int(r["k"]) == 19]
    got = {float(r["x"]): float(r["value"]) for r in rows}
    assert got[-0.5] == 0.0 and got[0.5] == 1.0
    assert got[0.0] == pytest.approx(0.5, abs=1e-12)


def test_flat_geodesic_length(tmp_path):
    code, out = run(tmp_path, "geodesic", None, CFG / "geodesic_flat.cfg")
    assert float(read_csv(out / "standard_length.csv")[0]["standard_length"]) == \
        pytest.approx(5.0, abs=1e-10)


def test_harmonic_trajectory_is_sine(tmp_path):
    code, out = run(tmp_path, "variational", None, CFG / "harmonic.cfg")
    rows = read_csv(out / "trajectory.csv")
    t = np.array([float(r["t"]) for r in rows])
    u = np.array([float(r["u0"]) for r in rows])
    assert np.max(np.abs(u - np.sin(t))) <= 1e-6


@pytest.mark.parametrize("text,msg", [
    ("kind = embed\nmollifier.jj = 2\n", "unknown key"),
    ("kind = embed\nmollifier.j = 99\n", "mollifier.j"),
    ("kind = embed\nembedding.a = -1\n", "embedding.a"),
    ("kind = embed\nlagrangian.name = free\n", "does not apply"),
    ("kind = embed\nseed = 1\nseed = 2\n", "duplicate"),
    ("kind = variational\n", "command"),
    ("just words\n", "key = value"),
])
def test_bad_configs(tmp_path, capsys, text, msg):
    code, _ = run(tmp_path, "embed", text)
    assert code == 2
    assert msg in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    code, _ = run(tmp_path, "embed", None, tmp_path / "nope.cfg")
    assert code == 2


def test_parse_defaults():
    cfg = parse_config("kind = geodesic\nboundary.p = 0, 0\nboundary.q = 1, 1\n")
    assert cfg["metric.name"] == "flat" and cfg["solver.rk4_steps"] == 1000
    assert cfg["boundary.q"] == [1.0, 1.0]
    with pytest.raises(ConfigError):
        parse_config("boundary.p = 0\n")


def test_failed_check_exit_code(tmp_path):
    code, out = run(tmp_path, "embed", "kind = embed\nembedding.a = 1\ncheck.weak_final = 1e-30\n")
    assert code == 1
    assert "FAIL" in (out / "report.txt").read_text()


def test_construction_error_exit_code(tmp_path):
    # a steep negative conformal exponent with a wide kernel drives the mollified metric negative
    text = ("kind = geodesic\nmetric.name = conformal-c11\nmetric.c = -20\nembedding.a = 0.1\n"
            "boundary.p = -1, 0\nboundary.q = 1, 0\n")
    code, _ = run(tmp_path, "geodesic", text)
    assert code == 3


def test_solver_error_exit_code(tmp_path):
    text = ("kind = variational\nlagrangian.name = harmonic\ninterval.b = 3.141592653589793\n"
            "boundary.p = 0\nboundary.q = 1\n")
    code, _ = run(tmp_path, "variational", text)
    assert code == 4


def test_runs_are_byte_identical(tmp_path):
    outs = []
    for i in range(2):
        d = tmp_path / str(i)
        d.mkdir()
        code, out = run(d, "variational", None, CFG / "harmonic.cfg")
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in out.glob("*.csv")})
    assert outs[0] == outs[1] and outs[0]
