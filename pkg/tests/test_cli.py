"""CSV ingestion, CLI exit codes, JSON schema, and output discipline."""

import csv
import json

import numpy as np
import pytest

import modete as m
from modete.cli import (
    EXIT_ESTIMATION,
    EXIT_IO,
    EXIT_USAGE,
    CsvFormatError,
    ResultRecord,
    load_csv,
    main,
)


def write_sample_csv(path, sample, y="y", d="d", x=("x0",)):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([y, d, *x])
        for yi, di, xi in zip(sample.y, sample.d, sample.x):
            w.writerow([repr(float(yi)), int(di), *[repr(float(v)) for v in xi]])


@pytest.fixture
def sample_csv(tmp_path, lognormal_plain):
    sample = m.generate(lognormal_plain, 250, seed=7)
    path = tmp_path / "data.csv"
    write_sample_csv(path, sample)
    return str(path), sample


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "ok.csv"
        path.write_text("y,d,x0\n1.0,0,0.5\n2.0,1,0.25\n0.5,true,0.75\n")
        s = load_csv(str(path), {"y": "y", "d": "d", "x": ["x0"]})
        assert s.n == 3
        assert list(s.d) == [0, 1, 1]

    def test_treatment_out_of_range_names_row(self, tmp_path):
        path = tmp_path / "bad_d.csv"
        path.write_text("y,d,x0\n1.0,0,0.5\n2.0,2,0.25\n")
        with pytest.raises(CsvFormatError, match="row 3"):
            load_csv(str(path), {"y": "y", "d": "d", "x": ["x0"]})

    def test_nan_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad_y.csv"
        path.write_text("y,d,x0\nNaN,0,0.5\n2.0,1,0.25\n")
        with pytest.raises(CsvFormatError, match="row 2.*'y'"):
            load_csv(str(path), {"y": "y", "d": "d", "x": ["x0"]})

    def test_missing_column(self, tmp_path):
        path = tmp_path / "cols.csv"
        path.write_text("y,d\n1.0,0\n")
        with pytest.raises(CsvFormatError, match="'x0'"):
            load_csv(str(path), {"y": "y", "d": "d", "x": ["x0"]})

    def test_round_trip_is_exact(self, sample_csv):
        path, sample = sample_csv
        loaded = load_csv(path, {"y": "y", "d": "d", "x": ["x0"]})
        assert np.array_equal(loaded.y, sample.y)
        assert np.array_equal(loaded.d, sample.d)
        assert np.array_equal(loaded.x, sample.x)


class TestCmdEstimate:
    def test_kernel_json_output(self, sample_csv, capsys):
        path, _ = sample_csv
        code = main(["estimate", "--input", path, "--y", "y", "--d", "d", "--x", "x0"])
        out = capsys.readouterr()
        assert code == 0
        doc = json.loads(out.out)
        assert doc["schema_version"] == "1"
        assert doc["method"] == "kernel"
        assert "folds" not in doc

    def test_estimates_match_library_bitwise(self, sample_csv, capsys):
        path, sample = sample_csv
        for method in ("kernel", "dml"):
            code = main(["estimate", "--input", path, "--y", "y", "--d", "d", "--x", "x0",
                         "--method", method, "--seed", "11"])
            assert code == 0
            doc = json.loads(capsys.readouterr().out)
            if method == "kernel":
                ref = m.estimate_kernel_mte(sample)
            else:
                ref = m.estimate_dml_mte(sample, m.DMLConfig(seed=11))
            assert doc["estimates"]["theta1"] == ref.theta1
            assert doc["estimates"]["theta0"] == ref.theta0
            assert doc["estimates"]["delta"] == ref.delta

    def test_two_covariates(self, tmp_path, capsys, lognormal_selection):
        sample = m.generate(lognormal_selection, 150, seed=3)
        x2 = np.column_stack([sample.x, sample.x[:, 0] ** 2])
        wide = m.Sample(sample.y, sample.d, x2)
        path = tmp_path / "wide.csv"
        write_sample_csv(path, wide, x=("age", "tenure"))
        with pytest.warns(m.RateConditionWarning):
            code = main(["estimate", "--input", str(path), "--y", "y", "--d", "d",
                         "--x", "age,tenure"])
        doc = json.loads(capsys.readouterr().out)
        assert code == 0
        assert doc["method"] == "kernel"

    def test_dml_records_folds(self, sample_csv, capsys):
        path, _ = sample_csv
        code = main(["estimate", "--input", path, "--y", "y", "--d", "d", "--x", "x0",
                     "--method", "dml", "--folds", "4"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["folds"] == 4

    def test_usage_errors(self, sample_csv):
        path, _ = sample_csv
        base = ["estimate", "--input", path, "--y", "y", "--d", "d", "--x", "x0"]
        assert main(base + ["--method", "dml", "--folds", "1"]) == EXIT_USAGE
        assert main(base + ["--bandwidth", "-1"]) == EXIT_USAGE
        assert main(base + ["--bandwidth", "zero"]) == EXIT_USAGE
        assert main(["estimate"]) == EXIT_USAGE

    def test_io_errors(self, tmp_path):
        missing = str(tmp_path / "nope.csv")
        assert main(["estimate", "--input", missing, "--y", "y", "--d", "d", "--x", "x0"]) == EXIT_IO
        bad = tmp_path / "bad.csv"
        bad.write_text("y,d,x0\n1.0,7,0.2\n")
        assert main(["estimate", "--input", str(bad), "--y", "y", "--d", "d", "--x", "x0"]) == EXIT_IO

    def test_estimation_error_is_structured(self, tmp_path, capsys):
        one_arm = tmp_path / "onearm.csv"
        one_arm.write_text("y,d,x0\n1.0,1,0.2\n2.0,1,0.4\n1.5,1,0.6\n")
        code = main(["estimate", "--input", str(one_arm), "--y", "y", "--d", "d", "--x", "x0"])
        captured = capsys.readouterr()
        assert code == EXIT_ESTIMATION
        err = json.loads(captured.err.strip().splitlines()[-1])
        assert err["error"]["type"] == "NoOverlapError"
        assert captured.out == ""

    def test_table_output(self, sample_csv, capsys):
        path, _ = sample_csv
        code = main(["estimate", "--input", path, "--y", "y", "--d", "d", "--x", "x0",
                     "--output", "table"])
        out = capsys.readouterr().out
        assert code == 0
        assert "theta1" in out and "ci_delta" in out
        with pytest.raises(json.JSONDecodeError):
            json.loads(out)

    def test_emit_curves(self, sample_csv, tmp_path, capsys):
        path, _ = sample_csv
        curves = tmp_path / "curves.csv"
        code = main(["estimate", "--input", path, "--y", "y", "--d", "d", "--x", "x0",
                     "--emit-curves", str(curves)])
        capsys.readouterr()
        assert code == 0
        with open(curves, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["arm", "y", "value"]
        arms = {r[0] for r in rows[1:]}
        assert arms == {"0", "1"}
        assert len(rows) == 1 + 2 * 512


class TestCmdSimulate:
    def test_small_run(self, capsys):
        code = main(["simulate", "--dgp", "lognormal-plain", "--n", "500", "--reps", "10",
                     "--method", "kernel", "--seed", "1"])
        out = capsys.readouterr().out
        assert code == 0
        doc = json.loads(out)
        assert doc["reps"] == 10
        assert doc["schema_version"] == "1"
        assert set(doc["targets"]) == {"theta1", "theta0", "delta"}

    def test_unknown_dgp_lists_names(self, capsys):
        code = main(["simulate", "--dgp", "mystery", "--n", "100", "--reps", "2"])
        err = capsys.readouterr().err
        assert code == EXIT_USAGE
        assert "lognormal-plain" in err

    @pytest.mark.parametrize("method", ["kernel", "dml"])
    def test_byte_identical_stdout(self, capsys, method):
        argv = ["simulate", "--dgp", "lognormal-plain", "--n", "150", "--reps", "3",
                "--method", method, "--seed", "9"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        second = capsys.readouterr().out
        assert first == second


class TestResultRecord:
    def test_round_trip(self, sample_csv):
        _, sample = sample_csv
        res = m.estimate_kernel_mte(sample)
        rec = ResultRecord.from_result(res, timing_ms=12.5)
        assert ResultRecord.from_json(rec.to_json()) == rec

    def test_unknown_fields_ignored(self, sample_csv):
        _, sample = sample_csv
        res = m.estimate_kernel_mte(sample)
        rec = ResultRecord.from_result(res, timing_ms=1.0)
        doc = rec.to_dict()
        doc["future_field"] = {"anything": 1}
        assert ResultRecord.from_json(json.dumps(doc)) == rec
