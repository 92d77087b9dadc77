import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slpoly import io
from slpoly.cli import main
from slpoly.core import BoundaryProblem, Grid, SpectralData
from slpoly.errors import ValidationError

M = "512"


@pytest.fixture
def neumann_file(tmp_path):
    path = tmp_path / "neumann.json"
    path.write_text(json.dumps({"sigma": {"kind": "expression", "name": "zero"}, "r1": [[1, 0]], "r2": [[0, 0]]}))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestForward:
    def test_zero_model(self, tmp_path, neumann_file, capsys):
        out = tmp_path / "data.json"
        csv = tmp_path / "delta.csv"
        code, _, _ = run(capsys, "forward", neumann_file, "--n-max", 10, "--out", out,
                         "--grid-m", 2048, "--delta-csv", csv, "--delta-points", 50)
        assert code == 0
        data = io.read_spectral_data(out)
        assert np.max(np.abs(data.lam - np.arange(10) ** 2)) < 1e-8
        assert data.alpha[0] == pytest.approx(1 / np.pi, abs=1e-7)
        assert np.max(np.abs(data.alpha[1:] - 2 / np.pi)) < 1e-7
        lam, delta = io.read_delta_csv(csv)
        rho = np.sqrt(lam)
        assert lam.size == 50
        assert np.allclose(delta, -rho * np.sin(rho * np.pi), rtol=1e-6, atol=1e-6)

    def test_malformed_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, _, err = run(capsys, "forward", bad, "--out", tmp_path / "x.json")
        assert code == 2 and "malformed" in err

    def test_nmax_zero(self, neumann_file, tmp_path, capsys):
        code, _, _ = run(capsys, "forward", neumann_file, "--n-max", 0, "--out", tmp_path / "x.json")
        assert code == 2

    def test_solver_failure(self, tmp_path, capsys):
        path = tmp_path / "double.json"
        path.write_text(json.dumps({"sigma": {"kind": "expression", "name": "zero"},
                                    "r1": [-1, 1], "r2": [0, -np.pi]}))
        code, _, err = run(capsys, "forward", path, "--n-max", 5, "--out", tmp_path / "x.json", "--grid-m", M)
        assert code == 3 and "multiplicity" in err

    def test_csv_columns_documented(self, capsys):
        with pytest.raises(SystemExit):
            main(["forward", "--help"])
        assert "lambda_re, lambda_im, delta_re, delta_im" in capsys.readouterr().out


class TestInverse:
    def test_own_data(self, tmp_path, neumann_file, capsys):
        data = tmp_path / "data.json"
        rec = tmp_path / "rec.json"
        assert run(capsys, "forward", neumann_file, "--n-max", 20, "--out", data, "--grid-m", M)[0] == 0
        code, _, _ = run(capsys, "inverse", neumann_file, data, "--K", 20, "--out", rec,
                         "--grid-m", M, "--diagnostics", tmp_path / "diag.json")
        assert code == 0
        p = io.read_problem(rec)
        assert np.max(np.abs(p.sigma.values)) <= 1e-9
        assert np.allclose(p.polys.r1, [1]) and np.max(np.abs(p.polys.r2)) <= 1e-9
        assert json.loads((tmp_path / "diag.json").read_text())["K"] == 20

    def test_perturbed_passes_closure(self, tmp_path, neumann_file, capsys):
        data = tmp_path / "data.json"
        run(capsys, "forward", neumann_file, "--n-max", 20, "--out", data, "--grid-m", M)
        d = io.read_spectral_data(data)
        rho = d.rho.copy()
        rho[0] += 5e-3
        io.write_spectral_data(data, SpectralData.from_rho(rho, d.alpha))
        rec = tmp_path / "rec.json"
        assert run(capsys, "inverse", neumann_file, data, "--K", 20, "--out", rec, "--grid-m", M)[0] == 0
        back = tmp_path / "back.json"
        assert run(capsys, "forward", rec, "--n-max", 20, "--out", back)[0] == 0
        b = io.read_spectral_data(back)
        assert np.max(np.abs(b.rho - rho) + np.abs(b.alpha - d.alpha)) <= 1e-5

    def test_oversized_perturbation(self, tmp_path, neumann_file, capsys):
        data = tmp_path / "data.json"
        run(capsys, "forward", neumann_file, "--n-max", 10, "--out", data, "--grid-m", M)
        d = io.read_spectral_data(data)
        rho = d.rho.copy()
        rho[0] += 3.0
        io.write_spectral_data(data, SpectralData.from_rho(rho, d.alpha))
        code, _, _ = run(capsys, "inverse", neumann_file, data, "--K", 10, "--out", tmp_path / "r.json", "--grid-m", M)
        assert code == 4

    def test_extraction_failure(self, tmp_path, neumann_file, capsys):
        data = tmp_path / "data.json"
        run(capsys, "forward", neumann_file, "--n-max", 10, "--out", data, "--grid-m", M)
        d = io.read_spectral_data(data)
        rho = d.rho.copy()
        rho[1] += 1e-3
        io.write_spectral_data(data, SpectralData.from_rho(rho, d.alpha))
        code, _, _ = run(capsys, "inverse", neumann_file, data, "--K", 10, "--out", tmp_path / "r.json",
                         "--grid-m", M, "--tol", 1e-30)
        assert code == 5

    def test_too_few_entries(self, tmp_path, neumann_file, capsys):
        data = tmp_path / "data.json"
        run(capsys, "forward", neumann_file, "--n-max", 5, "--out", data, "--grid-m", M)
        code, _, _ = run(capsys, "inverse", neumann_file, data, "--K", 10, "--out", tmp_path / "r.json", "--grid-m", M)
        assert code == 2


class TestExperiments:
    def test_roundtrip_zero(self, neumann_file, tmp_path, capsys):
        code, out, _ = run(capsys, "roundtrip", neumann_file, "--K", 10, "--grid-m", M, "--out", tmp_path / "r.json")
        assert code == 0 and "FAIL" not in out and out.count("PASS") == 2
        rep = json.loads((tmp_path / "r.json").read_text())
        assert max(rep["sigma_error_L2"], rep["r1_error_sup"], rep["r2_error_sup"]) <= 1e-9

    def test_roundtrip_fail_exit(self, neumann_file, capsys):
        code, out, _ = run(capsys, "roundtrip", neumann_file, "--K", 10, "--grid-m", M,
                           "--perturb-rho", "1:5e-3", "--tol", 1e-30)
        assert code == 1 and "FAIL spectral closure" in out

    def test_sweep(self, neumann_file, tmp_path, capsys):
        code, out, _ = run(capsys, "sweep", neumann_file, "--K", 10, "--grid-m", M,
                           "--perturb-rho", "2:1", "--out", tmp_path / "s.json")
        lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
        assert len(lines) == 3 and code == 1
        # on the Neumann model r1 = 1 cannot move and r2 moves only at second order
        assert lines[0].startswith("PASS sigma_error_L2")
        assert lines[1].startswith("FAIL r1_error_sup")
        rep = json.loads((tmp_path / "s.json").read_text())
        assert rep["slopes"]["r1_error_sup"] is None
        assert abs(rep["slopes"]["r2_error_sup"] - 2) < 0.05

    def test_sweep_random_direction(self, tmp_path, capsys):
        path = tmp_path / "lin.json"
        path.write_text(json.dumps({"sigma": {"kind": "expression", "name": "zero"},
                                    "r1": [2, 1], "r2": [1, 3]}))
        code, out, _ = run(capsys, "sweep", path, "--K", 10, "--grid-m", M,
                           "--random-indices", 5, "--seed", 11)
        assert code == 0 and out.count("PASS") == 3

    def test_sweep_bad_deltas(self, neumann_file, capsys):
        code, _, _ = run(capsys, "sweep", neumann_file, "--perturb-rho", "1:1", "--deltas", "1e-3", "2e-3")
        assert code == 2

    def test_bad_shift_syntax(self, neumann_file):
        with pytest.raises(SystemExit):
            main(["roundtrip", str(neumann_file), "--perturb-rho", "x"])


class TestFiles:
    @pytest.mark.parametrize("sigma, expected", [
        ({"kind": "expression", "name": "zero"}, lambda x: 0 * x),
        ({"kind": "expression", "name": "constant", "params": {"value": [0.5, -1]}}, lambda x: 0.5 - 1j + 0 * x),
        ({"kind": "expression", "name": "cosine", "params": {"amplitude": 0.2, "frequency": 2}},
         lambda x: 0.2 * np.cos(2 * x)),
        ({"kind": "expression", "name": "piecewise-linear", "params": {"knots": [0, 1, 0]}},
         lambda x: 1 - np.abs(2 * x / np.pi - 1)),
    ])
    def test_sigma_expressions(self, sigma, expected):
        g = Grid(64)
        s = io.sigma_from_dict(sigma, g)
        assert np.allclose(s.values, expected(g.points), atol=1e-14)

    def test_unknown_expression(self):
        with pytest.raises(ValidationError):
            io.sigma_from_dict({"kind": "expression", "name": "gaussian"}, Grid(64))

    def test_sample_count_checked(self):
        with pytest.raises(ValidationError):
            io.problem_from_dict({"sigma": {"kind": "samples", "values": [0, 0]}, "r1": [1], "r2": [0]})

    def test_non_monic_file(self):
        with pytest.raises(ValidationError):
            io.problem_from_dict({"sigma": {"kind": "expression", "name": "zero"}, "r1": [0, 2], "r2": [1, 0]})

    def test_problem_roundtrip(self, tmp_path, rng):
        g = Grid(32)
        p = BoundaryProblem.build(rng.normal(size=33) + 1j * rng.normal(size=33), [0.3 - 1j, 1], [2, 0.1j], grid=g)
        io.write_problem(tmp_path / "p.json", p)
        q = io.read_problem(tmp_path / "p.json")
        assert np.array_equal(p.sigma.values, q.sigma.values) and p.polys == q.polys

    def test_entries_must_be_contiguous(self):
        doc = {"entries": [{"n": 1, "rho": [0, 0]}, {"n": 3, "rho": [1, 0]}]}
        with pytest.raises(ValidationError):
            io.spectral_data_from_dict(doc)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e3, 1e3),
                              st.floats(-1e3, 1e3)), min_size=1, max_size=8),
           st.integers(0, 3))
    def test_spectral_file_roundtrip(self, tmp_path_factory, rows, M1):
        a = np.array(rows)
        data = SpectralData.from_rho(a[:, 0] + 1j * a[:, 1], a[:, 2] + 1j * a[:, 3], M1=M1, source="test")
        path = tmp_path_factory.mktemp("sd") / "d.json"
        io.write_spectral_data(path, data)
        back = io.read_spectral_data(path)
        assert np.array_equal(back.rho, data.rho) and np.array_equal(back.alpha, data.alpha)
        assert back.M1 == M1 and back.source == "test"

    def test_csv_roundtrip(self, tmp_path):
        lam = np.array([0.1 + 2j, -3.0, 1e-17])
        d = np.array([1 / 3, 2j / 7, np.pi])
        io.write_delta_csv(tmp_path / "d.csv", lam, d)
        l2, d2 = io.read_delta_csv(tmp_path / "d.csv")
        assert np.array_equal(l2, lam) and np.array_equal(d2, d)
