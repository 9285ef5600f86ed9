import json
import time

import numpy as np
import pytest

from tailrobust.cli import main, read_matrix


@pytest.fixture
def data_file(tmp_path, rng):
    path = tmp_path / "x.csv"
    np.savetxt(path, rng.standard_t(3, (50, 5)), delimiter=",")
    return path


def test_two_point_sample(tmp_path, capsys):
    # pairwise U-statistic with one pair: (0 - 2)^2 / 2
    p = tmp_path / "two.csv"
    p.write_text("0\n2\n")
    assert main(["estimate", str(p), "-m", "sample"]) == 0
    assert capsys.readouterr().out == "2\n"


def test_estimate_writes_symmetric_matrix_and_sidecar(data_file, tmp_path):
    out = tmp_path / "cov.csv"
    assert main(["estimate", str(data_file), "-m", "adaptive_huber", "-o", str(out)]) == 0
    M = np.loadtxt(out, delimiter=",")
    assert M.shape == (5, 5)
    np.testing.assert_array_equal(M, M.T)
    meta = json.loads((tmp_path / "cov.csv.json").read_text())
    assert meta["method"] == "adaptive_huber" and meta["n"] == 50 and meta["d"] == 5
    assert meta["elapsed"] >= 0 and "counts" in meta["diagnostics"]


def test_round_trip_is_bit_exact(data_file, tmp_path):
    out = tmp_path / "cov.csv"
    main(["estimate", str(data_file), "-m", "adaptive_truncated", "-o", str(out)])
    first = read_matrix(str(out))
    again = tmp_path / "again.csv"
    again.write_text(out.read_text())
    np.testing.assert_array_equal(read_matrix(str(again)), first)
    assert out.read_text() == "".join(",".join(format(v, ".17g") for v in row) + "\n" for row in first)


def test_spectral_infinite_level_equals_sample(data_file, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["estimate", str(data_file), "-m", "spectral_truncated", "--tau", "inf", "-o", str(a)]) == 0
    assert main(["estimate", str(data_file), "-m", "sample", "-o", str(b)]) == 0
    assert a.read_text() == b.read_text()


def test_header_flag(tmp_path, capsys):
    p = tmp_path / "h.csv"
    p.write_text("a,b\n1,2\n3,5\n")
    assert main(["estimate", str(p), "-m", "sample", "--header"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "2,3"
    assert main(["estimate", str(p), "-m", "sample"]) == 2


def test_malformed_csv_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3,4\n5\n")
    assert main(["estimate", str(p), "-m", "sample"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    p = tmp_path / "flat.csv"
    np.savetxt(p, np.random.default_rng(0).standard_normal((60, 7)), delimiter=",")
    assert main(["tune", str(p), "-m", "spectral_truncated", "--select", "adaptive", "--t", "8"]) == 3
    assert "no root" in capsys.readouterr().err


def test_invalid_method_lists_valid(capsys):
    assert main(["benchmark", "--methods", "nope", "--seed", "1"]) == 2
    err = capsys.readouterr().err
    assert "nope" in err and "adaptive_huber" in err


def test_argparse_choice_errors_exit_2(data_file):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", str(data_file), "-m", "nope"])
    assert exc.value.code == 2


def test_seed_is_printed_when_drawn(data_file, capsys):
    assert main(["tune", str(data_file), "-m", "elementwise_huber"]) == 0
    assert capsys.readouterr().err.startswith("seed: ")


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nreps = 1\nn = 20\nd = 4\nmodels = normal\nmethods = adaptive_huber\n")
    out = tmp_path / "rep"
    assert main(["benchmark", "--config", str(cfg), "--d", "3", "--seed", "5", "-o", str(out)]) == 0
    doc = json.loads((tmp_path / "rep.json").read_text())
    assert list(doc["scenarios"]) == ["normal/diagonal/n=20/d=3"]
    assert doc["meta"]["reps"] == 1
    cfg.write_text("colour = blue\n")
    assert main(["benchmark", "--config", str(cfg)]) == 2


def test_tune_outputs_matrix(data_file, capsys):
    assert main(["tune", str(data_file), "-m", "adaptive_truncated", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert np.array(doc["matrix"]).shape == (5, 5)


def test_threads_flag(data_file):
    assert main(["estimate", str(data_file), "-m", "sample", "--threads", "1"]) == 0
    assert main(["estimate", str(data_file), "-m", "sample", "--threads", "100000"]) == 2


def test_fdp_command(tmp_path, capsys):
    from tailrobust.simulation import factor_model_sample

    X, _, _ = factor_model_sample(60, 30, 2, np.random.default_rng(2))
    p = tmp_path / "f.csv"
    np.savetxt(p, X, delimiter=",")
    assert main(["fdp", str(p), "--r", "2", "--pilot", "adaptive_truncated", "--z-grid", "1,2"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "z,R,fdp_hat"


def test_sweep_command(tmp_path, capsys):
    assert main(["sweep", "--n", "30", "--d-list", "4,6", "--reps", "1", "--seed", "0", "-o", str(tmp_path / "s")]) == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 2 + 6


@pytest.mark.slow
def test_quick_benchmark_budget(capsys):
    t0 = time.perf_counter()
    assert main(["benchmark", "--quick", "--seed", "0"]) == 0
    assert time.perf_counter() - t0 < 60
    assert "Sigma_2^T" in capsys.readouterr().out


def test_reproduce_table_emits_every_cell(tmp_path, monkeypatch, capsys):
    from tailrobust import simulation

    cheap = {m: simulation.METHODS["sample"] for m in simulation.METHODS}
    monkeypatch.setattr(simulation, "METHODS", cheap)
    out = tmp_path / "t1"
    assert main(["benchmark", "--reproduce-table", "1", "--reps", "1", "--seed", "0", "-o", str(out)]) == 0
    rows = (tmp_path / "t1.csv").read_text().splitlines()[2:]
    # 3 (n, d) scenarios x 4 models x 4 methods x 3 norms
    assert len(rows) == 144
    assert capsys.readouterr().out.count("n=50  d=100") == 1
