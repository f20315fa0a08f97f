import json
import subprocess
import sys

import numpy as np
import pytest

from compost.cli import EXIT_CONVERGENCE, EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_PARSE, EXIT_USAGE, main
from compost.estimator import fit_two_stage, sscomp
from compost.io import read_table, write_table
from compost.selection import LambdaGrid

FAST_GRID = LambdaGrid.from_bounds(-4, 1, 0.25)
FAST = ["--grid-min", "-4", "--grid-max", "1", "--grid-step", "0.25"]


def write(path, text):
    path.write_text(text)
    return str(path)


def read_values(path):
    return read_table(path).values


# ------------------------------------------------------------------ #
# estimate
# ------------------------------------------------------------------ #


def test_estimate_uniform(tmp_path):
    inp = write(tmp_path / "k.csv", "1\n1\n1\n1\n")
    out = tmp_path / "p.csv"
    assert main(["estimate", "--input", inp, "--output", str(out)]) == EXIT_OK
    np.testing.assert_allclose(read_values(out)[:, 0], 0.25, atol=1e-15)


def test_estimate_zeros_are_positive(tmp_path):
    inp = write(tmp_path / "k.csv", "7\n0\n0\n2\n0\n1\n")
    out = tmp_path / "p.csv"
    summ = tmp_path / "s.json"
    assert main(["estimate", "--input", inp, "--output", str(out), "--summary", str(summ)]) == EXIT_OK
    p = read_values(out)[:, 0]
    assert np.all(p > 0) and abs(p.sum() - 1) < 1e-12
    s = json.loads(summ.read_text())
    assert s["schema_version"] == 1
    assert s["zero_cells"] == 3
    assert s["selection"] == "cv"
    assert len(s["cv_trace"]) == 81
    assert s["log10_lambda"] == pytest.approx(np.log10(s["lambda"]))


def test_estimate_heavy_fixed_lambda(tmp_path):
    inp = write(tmp_path / "k.csv", "9\n0\n3\n1\n")
    w = write(tmp_path / "w.csv", "1\n2\n3\n4\n")
    out = tmp_path / "p.csv"
    assert main(["estimate", "--input", inp, "--weights", w, "--lambda", "1e8", "--output", str(out)]) == EXIT_OK
    np.testing.assert_allclose(read_values(out)[:, 0], np.arange(1, 5) / 10, rtol=0, atol=1e-6)


def test_estimate_round_trip(tmp_path):
    k = np.array([12.0, 0, 3, 5, 0, 0, 1, 30, 2, 0])
    inp = write(tmp_path / "k.csv", "\n".join(str(int(v)) for v in k) + "\n")
    out = tmp_path / "p.csv"
    assert main(["estimate", "--input", inp, "--output", str(out), *FAST]) == EXIT_OK
    expected, _ = sscomp(k, grid=FAST_GRID)
    np.testing.assert_allclose(read_values(out)[:, 0], expected, rtol=0, atol=1e-12)


def test_estimate_labels_header_and_column(tmp_path):
    inp = write(tmp_path / "k.tsv", "# sample counts\notu\ta\tb\nx1\t3\t0\nx2\t1\t4\nx3\t0\t4\n")
    out = tmp_path / "p.csv"
    assert main(["estimate", "--input", inp, "--column", "b", "--output", str(out), *FAST]) == EXIT_OK
    table = read_table(out)
    assert table.row_labels == ("x1", "x2", "x3")
    assert table.column_names == ("b",)
    assert table.label_header == "otu"
    assert main(["estimate", "--input", inp, "--column", "1", "--output", str(tmp_path / "q.csv"), *FAST]) == 0
    assert (tmp_path / "q.csv").read_text() == out.read_text()


def test_estimate_outputs_are_byte_identical(tmp_path):
    inp = write(tmp_path / "k.csv", "5\n0\n2\n8\n")
    outs = []
    for name in ("a", "b"):
        out, summ = tmp_path / f"{name}.csv", tmp_path / f"{name}.json"
        assert main(["estimate", "--input", inp, "--output", str(out), "--summary", str(summ), *FAST]) == 0
        outs.append((out.read_bytes(), summ.read_bytes()))
    assert outs[0] == outs[1]


# ------------------------------------------------------------------ #
# estimate-matrix
# ------------------------------------------------------------------ #


def test_matrix_duplicate_columns(tmp_path):
    inp = write(tmp_path / "K.csv", "s1,s2,s3\n4,4,1\n0,0,5\n2,2,0\n9,9,3\n")
    out = tmp_path / "P.csv"
    summ = tmp_path / "s.json"
    assert main(["estimate-matrix", "--input", inp, "--output", str(out), "--summary", str(summ), *FAST]) == 0
    table = read_table(out)
    assert table.values.shape == (4, 3)
    assert table.column_names == ("s1", "s2", "s3")
    np.testing.assert_array_equal(table.values[:, 0], table.values[:, 1])
    np.testing.assert_allclose(table.values.sum(axis=0), 1, atol=1e-12)
    s = json.loads(summ.read_text())
    assert [c["column"] for c in s["columns"]] == ["s1", "s2", "s3"]
    assert all(c["prior_kl"] >= 0 for c in s["columns"])


def test_matrix_single_column(tmp_path):
    k = np.array([6.0, 1, 0, 3, 0])
    inp = write(tmp_path / "K.csv", "\n".join(str(int(v)) for v in k) + "\n")
    out = tmp_path / "P.csv"
    assert main(["estimate-matrix", "--input", inp, "--output", str(out), *FAST]) == 0
    expected = fit_two_stage(k[:, None], grid=FAST_GRID).probs
    np.testing.assert_allclose(read_values(out), expected, rtol=0, atol=1e-12)


def test_matrix_zero_column_named(tmp_path, capsys):
    inp = write(tmp_path / "K.csv", "a,b\n1,0\n2,0\n")
    assert main(["estimate-matrix", "--input", inp, "--output", str(tmp_path / "P.csv")]) == EXIT_INVALID
    assert "'b'" in capsys.readouterr().err


# ------------------------------------------------------------------ #
# simulate
# ------------------------------------------------------------------ #


def test_simulate_smoke_and_rerun(tmp_path):
    runs = []
    for name in ("a", "b"):
        js, cs = tmp_path / f"{name}.json", tmp_path / f"{name}.csv"
        argv = ["simulate", "--m", "5", "--s", "2", "--N", "100", "--seed", "1", "--output", str(js), "--csv", str(cs)]
        assert main(argv) == EXIT_OK
        runs.append((js.read_bytes(), cs.read_bytes()))
    assert runs[0] == runs[1]
    rep = json.loads(runs[0][0])
    assert rep["schema_version"] == 1
    assert len(rep["records"]) == 4
    assert len(runs[0][1].decode().strip().splitlines()) == 1 + 2 * 2 * 2


# ------------------------------------------------------------------ #
# errors and exit codes
# ------------------------------------------------------------------ #


@pytest.mark.parametrize(
    ("content", "code", "needle"),
    [
        ("3\nx\n2\n", EXIT_PARSE, ":2:"),
        ("1,2\n3\n", EXIT_PARSE, ":2:"),
        ("1\n2\ninf\n", EXIT_PARSE, ":3:"),
        ("# nothing here\n", EXIT_PARSE, "no data"),
        ("2\n-1\n4\n", EXIT_INVALID, "negative"),
        ("0\n0\n0\n", EXIT_INVALID, "zero"),
        ("1,2\n3,4\n", EXIT_USAGE, "--column"),
    ],
)
def test_estimate_input_errors(tmp_path, capsys, content, code, needle):
    inp = write(tmp_path / "k.csv", content)
    out = tmp_path / "p.csv"
    assert main(["estimate", "--input", inp, "--output", str(out)]) == code
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_bad_weights_and_lambda(tmp_path):
    inp = write(tmp_path / "k.csv", "1\n2\n3\n")
    w = write(tmp_path / "w.csv", "1\n0\n2\n")
    out = str(tmp_path / "p.csv")
    assert main(["estimate", "--input", inp, "--weights", w, "--output", out]) == EXIT_INVALID
    w = write(tmp_path / "w2.csv", "1\n2\n")
    assert main(["estimate", "--input", inp, "--weights", w, "--output", out]) == EXIT_INVALID
    assert main(["estimate", "--input", inp, "--lambda", "0", "--output", out]) == EXIT_INVALID
    assert main(["estimate", "--input", inp, "--lambda", "-2", "--output", out]) == EXIT_INVALID


def test_usage_errors(tmp_path):
    inp = write(tmp_path / "k.csv", "1\n2\n3\n")
    out = str(tmp_path / "p.csv")
    with pytest.raises(SystemExit) as info:
        main(["estimate", "--input", inp, "--output", out, "--lambda", "big"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["estimate", "--input", inp])
    assert info.value.code == EXIT_USAGE
    assert main(["estimate", "--input", inp, "--output", out, "--grid-step", "0"]) == EXIT_USAGE
    assert main(["simulate", "--m", "1", "--output", out]) == EXIT_USAGE


def test_convergence_failure(tmp_path):
    inp = write(tmp_path / "k.csv", "50\n1\n0\n0\n")
    out = tmp_path / "p.csv"
    argv = ["estimate", "--input", inp, "--output", str(out), "--lambda", "1e-6", "--max-iterations", "1"]
    assert main(argv) == EXIT_CONVERGENCE
    assert not out.exists()


def test_io_errors(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "missing.csv"), "--output", str(tmp_path / "p.csv")]) == EXIT_IO
    inp = write(tmp_path / "k.csv", "1\n2\n")
    assert main(["estimate", "--input", inp, "--output", str(tmp_path / "no" / "p.csv")]) == EXIT_IO


def test_binary_input_is_parse_error(tmp_path):
    path = tmp_path / "k.bin"
    path.write_bytes(b"\xff\xfe\x00\x81")
    assert main(["estimate", "--input", str(path), "--output", str(tmp_path / "p.csv")]) == EXIT_PARSE


def test_module_entry_point(tmp_path):
    inp = write(tmp_path / "k.csv", "2\n2\n")
    out = tmp_path / "p.csv"
    res = subprocess.run(
        [sys.executable, "-m", "compost", "estimate", "--input", inp, "--output", str(out)], capture_output=True
    )
    assert res.returncode == 0
    np.testing.assert_allclose(read_values(out)[:, 0], 0.5, atol=1e-15)


def test_write_table_full_precision(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.dirichlet(np.ones(7), size=3).T
    path = tmp_path / "t.csv"
    write_table(path, vals, tuple(f"r{i}" for i in range(7)), ("a", "b", "c"), "otu")
    back = read_table(path)
    np.testing.assert_array_equal(back.values, vals)
    assert back.label_header == "otu"
