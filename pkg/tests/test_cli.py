import json
import pathlib

import numpy as np

from srkilling.cli import main

ROOT = pathlib.Path(__file__).resolve().parents[1]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


CURVE_Y = """
[curve]
t_range = 0 1
gamma = 0, t, 0
"""

GEN_Y1 = """
[generator]
X = 1 0
A = 0
c = 0
at = 0, 0, 0
"""

GEN_J = """
[generator]
X = 0 0
A = -1
c = 0
at = 0, 0, 0
"""


class TestBasicCommands:
    def test_check_heisenberg(self, capsys):
        code, out = run(capsys, "check", "heisenberg:1")
        assert code == 0
        rep = json.loads(out)
        assert rep["special"] is True
        assert rep["pass"] is True
        assert all(r["pass"] for r in rep["checks"])

    def test_check_not_special_exits_3(self, capsys, tmp_path):
        f = tmp_path / "warped.toml"
        f.write_text(
            "[manifold]\nmode = chart\nn = 1\ncoords = x, y, z\n"
            "[frame]\nX1 = 1, 0, -y/2\nX2 = 0, 1 + x^2, x*(1 + x^2)/2\n"
        )
        code, out = run(capsys, "check", str(f))
        assert code == 3
        rep = json.loads(out)
        assert rep["special"] is False

    def test_dim_su2(self, capsys):
        code, out = run(capsys, "dim", "su2", "--at", "0,0,0")
        assert code == 0
        rep = json.loads(out)
        assert rep["dims"] == [4, 4, 4]
        assert rep["dim_i"] == 4
        assert rep["certified"] is True

    def test_missing_file_exits_2(self, capsys):
        code, out = run(capsys, "check", "--structure", "nosuch.toml")
        assert code == 2
        rep = json.loads(out)
        assert rep["error"]["kind"] == "input_error"

    def test_malformed_file_exits_2(self, capsys, tmp_path):
        f = tmp_path / "bad.toml"
        f.write_text("[manifold]\nmode = chart\n")
        code, out = run(capsys, "check", str(f))
        assert code == 2

    def test_curvature(self, capsys):
        code, out = run(capsys, "curvature", "su2", "--at", "0,0,0", "--order", "1")
        assert code == 0
        rep = json.loads(out)
        R = np.array(rep["R"])
        assert R[0, 1, 0, 1] == -1.0
        assert R[0, 1, 1, 0] == 1.0
        assert rep["nabla_R_max_abs"][1] == 0.0

    def test_connection(self, capsys):
        code, out = run(capsys, "connection", "su2")
        assert code == 0
        rep = json.loads(out)
        assert rep["gamma_xi"][0][1] == -1.0
        assert rep["gamma_xi"][1][0] == 1.0

    def test_named_point_syntax(self, capsys):
        code, out = run(capsys, "dim", "heisenberg:1", "--at", "x=0,y=0,z=0")
        assert code == 0
        assert json.loads(out)["dim_i"] == 4

    def test_verify_lie_mode_constant_field(self, capsys):
        code, out = run(capsys, "verify", "su2", "--field", "0, 0, -1")
        assert code == 0
        assert json.loads(out)["pass"] is True

    def test_verify_geometry(self, capsys):
        code, out = run(capsys, "verify-geometry", "heisenberg:1")
        assert code == 0
        rep = json.loads(out)
        names = {r["check"] for r in rep["checks"]}
        assert "bianchi_first" in names and "curvature_reeb" in names
        assert rep["pass"] is True


class TestTransportCommands:
    def test_prolong(self, capsys, tmp_path):
        (tmp_path / "curve.toml").write_text(CURVE_Y)
        (tmp_path / "gen.toml").write_text(GEN_Y1)
        code, out = run(
            capsys,
            "prolong",
            "heisenberg:1",
            "--curve",
            str(tmp_path / "curve.toml"),
            "--gen",
            str(tmp_path / "gen.toml"),
        )
        assert code == 0
        rep = json.loads(out)
        assert rep["X"] == [1.0, 0.0]
        assert abs(rep["c"] + 1.0) < 1e-8

    def test_prolong_require_horizontal_fails_on_vertical(self, capsys, tmp_path):
        (tmp_path / "curve.toml").write_text(
            "[curve]\nt_range = 0 1\ngamma = 0, 0, t\n"
        )
        (tmp_path / "gen.toml").write_text(GEN_Y1)
        code, out = run(
            capsys,
            "prolong",
            "heisenberg:1",
            "--curve",
            str(tmp_path / "curve.toml"),
            "--gen",
            str(tmp_path / "gen.toml"),
            "--require-horizontal",
        )
        assert code == 3

    def test_path_check(self, capsys, tmp_path):
        (tmp_path / "c1.toml").write_text("[curve]\nt_range = 0 1\ngamma = t, t, 0\n")
        (tmp_path / "c2.toml").write_text(
            "[curve]\nt_range = 0 1\ngamma = t^2, t, 0\n"
        )
        (tmp_path / "gen.toml").write_text(GEN_Y1)
        code, out = run(
            capsys,
            "path-check",
            "heisenberg:1",
            "--curve",
            str(tmp_path / "c1.toml"),
            "--curve",
            str(tmp_path / "c2.toml"),
            "--gen",
            str(tmp_path / "gen.toml"),
        )
        assert code == 0
        rep = json.loads(out)
        assert rep["deviation"] < 1e-6

    def test_reconstruct_writes_field(self, capsys, tmp_path):
        (tmp_path / "gen.toml").write_text(GEN_J)
        out_path = tmp_path / "field.json"
        code, out = run(
            capsys,
            "reconstruct",
            "heisenberg:1",
            "--gen",
            str(tmp_path / "gen.toml"),
            "--grid",
            "x:-1:1:3,y:-1:1:3,z:-1:1:3",
            "--step",
            "0.01",
            "--out",
            str(out_path),
        )
        assert code == 0
        payload = json.loads(out_path.read_text())
        assert len(payload["points"]) == 27
        assert payload["pass"] is True
        summary = json.loads(out)
        assert summary["pass"] is True


class TestVerifyAndScan:
    def test_verify_killing_field(self, capsys):
        code, out = run(
            capsys, "verify", "heisenberg:1", "--field", "-y, x, 0"
        )
        assert code == 0
        rep = json.loads(out)
        names = [r["check"] for r in rep["checks"]]
        assert "riemannian_extension" in names
        assert len(names) == 9
        assert rep["pass"] is True

    def test_verify_non_killing_exits_3(self, capsys):
        code, out = run(capsys, "verify", "heisenberg:1", "--field", "1, 0, 0")
        assert code == 3
        rep = json.loads(out)
        contact = next(r for r in rep["checks"] if r["check"] == "contact")
        assert contact["max_residual"] >= 0.1

    def test_scan(self, capsys):
        code, out = run(
            capsys, "scan", "heisenberg:1", "--grid", "x:-1:1:3,y:-1:1:3,z:-1:1:3"
        )
        assert code == 0
        rep = json.loads(out)
        assert set(rep["dims"]) == {4}
        assert all(rep["regular"])

    def test_scan_lie(self, capsys):
        code, out = run(capsys, "scan", "su2")
        assert code == 0
        rep = json.loads(out)
        assert rep["dims"] == [4]


class TestReporting:
    def test_determinism(self, capsys):
        _, out1 = run(capsys, "verify-geometry", "su2")
        _, out2 = run(capsys, "verify-geometry", "su2")
        assert out1 == out2

    def test_seed_changes_samples_not_results(self, capsys):
        code1, out1 = run(capsys, "check", "heisenberg:1", "--seed", "0")
        code2, out2 = run(capsys, "check", "heisenberg:1", "--seed", "1")
        assert code1 == code2 == 0
        assert json.loads(out1)["pass"] and json.loads(out2)["pass"]

    def test_pretty_rendering(self, capsys):
        code, out = run(capsys, "check", "su2", "--pretty")
        assert code == 0
        assert "PASS" in out and "checks:" in out

    def test_out_file(self, capsys, tmp_path):
        path = tmp_path / "report.json"
        code, _ = run(capsys, "check", "su2", "--out", str(path))
        assert code == 0
        rep = json.loads(path.read_text())
        assert rep["pass"] is True

    def test_fingerprint_matches_fixture_file(self, capsys):
        _, out_builtin = run(capsys, "check", "su2")
        _, out_file = run(capsys, "check", str(ROOT / "structures" / "su2.toml"))
        fp1 = json.loads(out_builtin)["structure"]["fingerprint"]
        fp2 = json.loads(out_file)["structure"]["fingerprint"]
        assert fp1 == fp2

    def test_float_format_roundtrip(self, capsys):
        _, out = run(capsys, "curvature", "su2", "--at", "0,0,0")
        rep = json.loads(out)
        assert rep["R"][0][1][0][1] == -1.0


class TestLieModeSL2:
    def test_sl2_type_structure(self, capsys, tmp_path):
        # hyperbolic analogue: [e1,e2]=e3, [e2,e3]=-e1, [e3,e1]=-e2
        f = tmp_path / "sl2.toml"
        f.write_text(
            "[manifold]\nmode = lie\nn = 1\n[brackets]\n"
            "c 1 2 3 = 1\nc 2 3 1 = -1\nc 1 3 2 = 1\n"
        )
        code, out = run(capsys, "check", str(f))
        assert code == 0
        assert json.loads(out)["special"] is True
        code, out = run(capsys, "curvature", str(f), "--at", "0,0,0")
        R = np.array(json.loads(out)["R"])
        # opposite sectional sign to the su2-type structure
        assert R[0, 1, 0, 1] == 1.0
        code, out = run(capsys, "dim", str(f))
        assert json.loads(out)["dim_i"] == 4
