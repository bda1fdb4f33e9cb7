import json
import os

import numpy as np
import pytest

import data_io
from cli import main


def parse_lines(text):
    """stdout lines of key=value pairs, as dicts."""
    return [dict(part.split("=", 1) for part in line.split()) for line in text.splitlines() if line]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, parse_lines(capsys.readouterr().out)


@pytest.fixture
def motor_spec(data_dir):
    return os.path.join(data_dir, "im_motor.json")


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


def write_records(path, rows, header="v_re,v_im,i_re,i_im"):
    path.write_text(header + "\n" + "\n".join(",".join(str(x) for x in row) for row in rows) + "\n")
    return path


class TestSolve:
    def test_two_bus(self, capsys, data_dir):
        code, lines = run(capsys, "solve", os.path.join(data_dir, "two_bus.json"))
        assert code == 0
        assert lines[-1]["converged"] == "true"
        assert [line["iteration"] for line in lines if "iteration" in line][0] == "1"
        load = next(line for line in lines if line.get("bus") == "load")
        assert float(load["v_re"]) == pytest.approx((1 + 0.96 ** 0.5) / 2, abs=1e-8)

    def test_infeasible_case_exits_numerical(self, capsys, data_dir):
        code, lines = run(capsys, "solve", os.path.join(data_dir, "two_bus_infeasible.json"))
        assert code == 2
        assert lines[-1]["converged"] == "false"

    def test_missing_case_exits_input(self, capsys, tmp_path):
        assert main(["solve", str(tmp_path / "absent.json")]) == 1
        captured = capsys.readouterr()
        assert captured.out == ""
        assert captured.err.startswith("error:")

    def test_malformed_case(self, capsys, tmp_path):
        path = tmp_path / "case.json"
        path.write_text('{"format_version": 1, "buses": [}')
        code, _ = run(capsys, "solve", path)
        assert code == 1

    def test_branches_not_a_list_exits_input(self, capsys, tmp_path):
        case = {
            "format_version": 1,
            "buses": [{"id": "source", "type": "slack"}, {"id": "load", "type": "pq"}],
            "branches": 5,
            "devices": {"source": {"v_re": 1.0}, "load": {"p": 0.1}},
        }
        code, _ = run(capsys, "solve", write_json(tmp_path / "case.json", case))
        assert code == 1

    def test_linear_algebra_failure_exits_numerical(self, capsys, monkeypatch, data_dir):
        def fail(path):
            raise np.linalg.LinAlgError("Singular matrix")

        monkeypatch.setattr(data_io, "load_case", fail)
        assert main(["solve", os.path.join(data_dir, "two_bus.json")]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_writes_results(self, capsys, data_dir, tmp_path):
        out = tmp_path / "solution.csv"
        code, _ = run(capsys, "solve", os.path.join(data_dir, "two_bus.json"), "--out", out)
        assert code == 0
        assert out.exists() and (tmp_path / "solution_history.csv").exists()

    def test_iteration_cap(self, capsys, data_dir):
        code, lines = run(capsys, "solve", os.path.join(data_dir, "two_bus.json"), "--max-iter", 1)
        assert code == 2
        assert lines[-1] == {"converged": "false", "iterations": "1"}


class TestSynth:
    def sweep(self, tmp_path, **changes):
        data = {"v_re": [360.0, 380.0], "v_im": [0.0], "tags": [10.0, 20.0]}
        data.update(changes)
        return write_json(tmp_path / "sweep.json", data)

    def test_writes_every_point(self, capsys, tmp_path, motor_spec):
        out = tmp_path / "records.csv"
        code, lines = run(capsys, "synth", motor_spec, self.sweep(tmp_path), "--out", out)
        assert code == 0
        assert lines[-1]["records"] == "4" and lines[-1]["skipped"] == "0"
        assert len(out.read_text().strip().splitlines()) == 5

    def test_seeded_noise_is_reproducible(self, capsys, tmp_path, motor_spec):
        outputs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            code, _ = run(capsys, "synth", motor_spec, self.sweep(tmp_path), "--noise", 0.01,
                          "--seed", 7, "--out", out)
            assert code == 0
            outputs.append(out.read_text())
        assert outputs[0] == outputs[1]

    def test_torque_beyond_breakdown(self, capsys, tmp_path, motor_spec):
        out = tmp_path / "records.csv"
        code, lines = run(capsys, "synth", motor_spec, self.sweep(tmp_path, tags=[1.0e5]), "--out", out)
        assert code == 2
        assert lines[-1]["records"] == "0"
        assert not out.exists()

    def test_unknown_model(self, capsys, tmp_path):
        spec = write_json(tmp_path / "model.json", {"model": "turbine"})
        code, _ = run(capsys, "synth", spec, self.sweep(tmp_path), "--out", tmp_path / "r.csv")
        assert code == 1


class TestFitAndValidate:
    @pytest.fixture
    def records(self, capsys, tmp_path, motor_spec):
        sweep = write_json(tmp_path / "sweep.json",
                           {"v_re": {"start": 330.0, "stop": 380.0, "num": 12}, "tags": [10.0]})
        out = tmp_path / "records.csv"
        assert main(["synth", motor_spec, str(sweep), "--out", str(out)]) == 0
        capsys.readouterr()
        return out

    def test_too_few_records(self, capsys, tmp_path):
        path = write_records(tmp_path / "few.csv", [(1.0, 0.0, 0.1, 0.0), (0.9, 0.0, 0.09, 0.0)])
        code, _ = run(capsys, "fit", path, "--order", 3, "--out", tmp_path / "t.json")
        assert code == 1

    def test_fit_reports_terms(self, capsys, tmp_path, records):
        out = tmp_path / "template.json"
        code, lines = run(capsys, "fit", records, "--order", 2, "--units", "si", "--out", out)
        assert code == 0
        summary = lines[0]
        assert summary["n_records"] == "12" and summary["order"] == "2"
        assert summary["unidentifiable"] == "V_I;V_R*V_I;V_I^2"
        assert [line["term"] for line in lines[1:7]] == ["1", "V_R", "V_I", "V_R*V_I", "V_R^2", "V_I^2"]
        assert json.loads(out.read_text())["units"] == "si"

    def test_collinear_excitation_exits_numerical(self, capsys, tmp_path):
        rows = [(v, v, 0.1 * v, 0.0) for v in (0.9, 0.95, 1.0, 1.05)]
        path = write_records(tmp_path / "line.csv", rows)
        code, _ = run(capsys, "fit", path, "--order", 1, "--out", tmp_path / "t.json")
        assert code == 2

    def test_validate_reproduces_fit_rmse(self, capsys, tmp_path, records):
        template = tmp_path / "template.json"
        _, fit_lines = run(capsys, "fit", records, "--order", 2, "--units", "si", "--out", template)
        report = tmp_path / "report.csv"
        code, lines = run(capsys, "validate", template, records, "--units", "si", "--out", report)
        assert code == 0
        assert float(lines[0]["rmse_r"]) == pytest.approx(float(fit_lines[0]["rmse_r"]), rel=1e-12, abs=1e-15)
        assert float(lines[0]["rmse_i"]) == pytest.approx(float(fit_lines[0]["rmse_i"]), rel=1e-12, abs=1e-15)
        assert lines[0]["extrapolation_fraction"] == "0.0"
        assert report.exists()

    def test_holdout(self, capsys, tmp_path, records):
        code, lines = run(capsys, "fit", records, "--order", 2, "--units", "si", "--holdout", 0.25,
                          "--seed", 1, "--out", tmp_path / "t.json")
        assert code == 0
        assert lines[0]["n_records"] == "9"
        assert lines[-1]["holdout_records"] == "3"

    def test_validate_empty_file(self, capsys, tmp_path, records):
        template = tmp_path / "template.json"
        run(capsys, "fit", records, "--order", 2, "--units", "si", "--out", template)
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        code, lines = run(capsys, "validate", template, empty)
        assert code == 0
        assert lines[0]["n_records"] == "0"

    def test_validate_units_mismatch(self, capsys, tmp_path, records):
        template = tmp_path / "template.json"
        run(capsys, "fit", records, "--order", 2, "--units", "si", "--out", template)
        code, _ = run(capsys, "validate", template, records, "--units", "per-unit")
        assert code == 1


class TestExportStamps:
    def test_writes_one_pair_per_iteration(self, capsys, data_dir, tmp_path):
        out_dir = tmp_path / "stamps"
        code, lines = run(capsys, "export-stamps", os.path.join(data_dir, "two_bus.json"),
                          "--iterations", 2, "--out-dir", out_dir)
        assert code == 0
        assert lines[-1]["exported"] == "2"
        for k in (1, 2):
            assert (out_dir / f"matrix_{k}.csv").exists()
            assert (out_dir / f"rhs_{k}.csv").exists()
