import csv
import io
import math
import subprocess
import sys

import numpy as np
import pytest

from slnexpand import bench, tilt
from slnexpand.cli import main
from slnexpand.config import parse_config
from slnexpand.errors import ParseError, ValidationError
from slnexpand.mvn import RngStream
from slnexpand.sln import SlnSpec
from slnexpand.tilt import TiltedModel


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


# -- config -----------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = parse_config("mu = 0, 0\nsigma_diag = 1, 2\n")
    assert cfg.theta == 1.0 and cfg.R == 10**5 and cfg.H is None
    assert cfg.k_for("normal") == 16 and cfg.spec.n == 2


def test_config_full_sigma_and_broadcast():
    cfg = parse_config("n = 3\nmu = 0.5\nsigma = 1 0.1 0; 0.1 1 0; 0 0 2\n")
    np.testing.assert_allclose(cfg.spec.mu, [0.5] * 3)
    assert cfg.spec.sigma[2, 2] == 2.0


def test_config_rho_out_of_range():
    with pytest.raises(ValidationError):
        parse_config("mu = 0, 0\nsigma_diag = 1, 1\nrho = 1.5\n")
    with pytest.raises(ValidationError):
        parse_config("mu = 0, 0, 0\nsigma_diag = 1\nrho = -0.6\n")


@pytest.mark.parametrize("text,line", [
    ("mu = 0\nsigma_diag = 1\nbogus = 3\n", 3),
    ("# comment\nmu = 0\nmu = 1\n", 3),
    ("mu = 0\nsigma_diag\n", 2),
    ("mu = 0\nsigma_diag = 1\nK = four\n", 3),
    ("mu = 0\nsigma_diag =\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_config_k_bound():
    with pytest.raises(ValidationError):
        parse_config("mu = 0\nsigma_diag = 1\nK = 41\n")


def test_config_clayton():
    cfg = parse_config("mu = 0\nn = 3\nsigma_diag = 1\ncopula = clayton\ncopula_theta = 10\n")
    assert cfg.spec.copula.theta == 10
    with pytest.raises(ValidationError):
        parse_config("mu = 0\nsigma_diag = 1\ncopula = frank\n")


# -- subcommands ------------------------------------------------------------

def test_bench_byte_identical(capsys):
    a = run(capsys, "bench", "--test", "1", "--seed", "7")
    b = run(capsys, "bench", "--test", "1", "--seed", "7")
    assert a[0] == 0 and a[1] == b[1]
    header, rows = parse_csv(a[1])
    assert header == ["test", "estimator", "l2_error", "runtime_ms", "seed"]
    assert [r[1] for r in rows] == ["fw", "cond", "normal", "gamma"]
    assert all(r[3] == "" and r[4] == "7" for r in rows)


def test_bench_matches_library(capsys):
    code, out, _ = run(capsys, "bench", "--test", "1", "--seed", "7", "--estimators", "fw,cond")
    rows = bench.rows_from_csv(out)
    lib = bench.run_test(bench.get_case(1), ["fw", "cond"], seed=7)
    assert rows == lib


def test_density_with_oracle_matches_bench(capsys):
    code, out, _ = run(capsys, "density", "--test", "1", "--estimator", "fw", "--with-oracle",
                       "--seed", "7")
    assert code == 0
    header, rows = parse_csv(out)
    assert header == ["x", "f_hat", "f_oracle", "diff"]
    data = np.array(rows, dtype=float)
    from scipy import integrate
    l2 = math.sqrt(integrate.simpson(data[:, 3] ** 2, x=data[:, 0]))
    row = bench.run_test(bench.get_case(1), ["fw"], seed=7)[0]
    assert abs(l2 - row.l2_error) <= 1e-12


def test_density_inline_spec(capsys, tmp_path):
    out_file = tmp_path / "d.csv"
    code, out, _ = run(capsys, "density", "--mu", "0", "--s2", "0.25", "--n", "2",
                       "--estimator", "cond", "--R", "2000", "--seed", "1", "-o", str(out_file))
    assert code == 0 and out == ""
    header, rows = parse_csv(out_file.read_text())
    assert header == ["x", "f_hat"] and len(rows) == 2001


def test_coeffs(capsys):
    code, out, _ = run(capsys, "coeffs", "--test", "1", "--estimator", "gamma", "--seed", "1")
    header, rows = parse_csv(out)
    assert code == 0 and header == ["k", "a_k"] and len(rows) == 17
    assert float(rows[0][1]) == pytest.approx(1.0)
    code, _, err = run(capsys, "coeffs", "--test", "1", "--estimator", "fw", "--seed", "1")
    assert code == 1 and "error" in err


def test_laplace_matches_mc(capsys):
    code, out, _ = run(capsys, "laplace", "--n", "1", "--mu", "0", "--s2", "0.25",
                       "--theta", "1", "--i", "0")
    header, rows = parse_csv(out)
    assert code == 0 and header == ["i", "L_hat", "L_tilde", "I"]
    l_hat = float(rows[0][1])
    spec = SlnSpec.from_diag_rho([0.0], [0.25])
    mc, se = tilt.laplace_transform_mc(spec, 1.0, 0, 10**6, RngStream(31, 0))
    assert abs(l_hat - mc) <= 3 * se
    assert l_hat == tilt.laplace_hat(TiltedModel(spec, 1.0), 0, 64)


def test_sample(capsys):
    code, out, err = run(capsys, "sample", "--test", "2", "--count", "50")
    assert code == 0 and err.startswith("seed: ")
    seed = int(err.split()[1])
    vals = np.array(out.split(), dtype=float)
    from slnexpand import sln
    np.testing.assert_array_equal(vals, sln.sample_sln(bench.get_case(2).spec, 50,
                                                       RngStream(seed, 0)))


def test_config_file_flag(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mu = 0, 0\nsigma_diag = 0.5, 1\nrho = -0.2\n")
    code, out, _ = run(capsys, "sample", "--config", str(cfg), "--count", "5", "--seed", "3")
    assert code == 0 and len(out.split()) == 5


# -- exit codes -------------------------------------------------------------

def test_exit_validation(capsys):
    code, _, err = run(capsys, "laplace", "--mu", "0,0", "--s2", "1,1", "--rho", "1.5")
    assert code == 1 and "error" in err
    assert run(capsys, "nope")[0] == 1
    assert run(capsys, "bench", "--test", "9", "--seed", "1")[0] == 1


def test_exit_parse_error(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mu = 0\nsigma_diag = 1\nwat = 2\n")
    code, _, err = run(capsys, "sample", "--config", str(cfg), "--seed", "1")
    assert code == 1 and "line 3" in err


def test_exit_numerical(capsys, monkeypatch):
    from slnexpand.errors import NoConvergence

    def fail(*args, **kwargs):
        raise NoConvergence("Newton did not converge")

    monkeypatch.setattr(tilt, "laplace_estimate", fail)
    code, _, err = run(capsys, "laplace", "--mu", "0", "--s2", "1")
    assert code == 2 and "numerical failure" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "slnexpand", "laplace", "--mu", "0", "--s2", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    header, rows = parse_csv(proc.stdout)
    assert float(rows[0][2]) == pytest.approx(0.38574, abs=5e-6)
