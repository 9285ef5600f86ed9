import json

import numpy as np
import pytest

from tailrobust.exceptions import ConfigurationError
from tailrobust.simulation import (
    BenchmarkReport,
    CovStructure,
    GenModel,
    MODELS,
    generate,
    rme,
    run_dimension_sweep,
    run_table,
)


@pytest.mark.parametrize("kind", MODELS)
def test_generators_are_standardised(kind):
    Y = GenModel(kind).draw(np.random.default_rng(1), 1_000_000)
    se_mean = 1 / np.sqrt(Y.size)
    # standard error of the sample variance uses the fourth moment
    se_var = np.sqrt(np.mean((Y - Y.mean()) ** 4) - Y.var() ** 2) / np.sqrt(Y.size)
    assert abs(Y.mean()) <= 4 * se_mean
    assert abs(Y.var() - 1) <= 4 * se_var


def test_literal_scaling_constants():
    rng = np.random.default_rng(0)
    Y = GenModel("lognormal", literal_scaling=True).draw(rng, 200_000)
    assert Y.mean() == pytest.approx(np.e / (np.e**3 - np.e**2), rel=0.02)
    Z = GenModel("pareto3", literal_scaling=True).draw(rng, 200_000)
    assert Z.mean() == pytest.approx(2.0, rel=0.02)


def test_equal_corr_square_root_closed_form():
    R = CovStructure("equal_corr", 2).sqrt()
    a, b = (np.sqrt(1.5) + np.sqrt(0.5)) / 2, (np.sqrt(1.5) - np.sqrt(0.5)) / 2
    np.testing.assert_allclose(R, [[a, b], [b, a]], rtol=1e-14)


@pytest.mark.parametrize("kind", ["diagonal", "equal_corr", "power_decay"])
def test_structures(kind):
    S = CovStructure(kind, 5, 2.0)
    np.testing.assert_allclose(S.sqrt() @ S.sqrt(), S.matrix(), atol=1e-12)
    assert np.all(np.diag(S.matrix()) == 2.0)


def test_generate_normal_lln():
    X = generate(GenModel("normal", seed=3), CovStructure("diagonal", 3), 100_000)
    assert np.max(np.abs(np.cov(X, rowvar=False) - np.eye(3))) <= 0.05


def test_generate_deterministic_per_seed():
    m, s = GenModel("student_t3", seed=9), CovStructure("power_decay", 4)
    np.testing.assert_array_equal(generate(m, s, 10), generate(m, s, 10))


def test_rme_examples():
    T = np.zeros((2, 2))
    E = [np.eye(2), 3 * np.eye(2)]
    B = [2 * np.eye(2), 2 * np.eye(2)]
    assert rme(E, B, T, "max") == 1.0
    assert rme(B, B, T, "spectral") == 1.0
    assert rme([T, T], B, T) == 0.0
    with pytest.raises(ZeroDivisionError):
        rme(E, [T, T], T)
    with pytest.raises(ValueError):
        rme([], [], T)


def _small(**kw):
    base = dict(scenarios=[(20, 5)], models=("student_t3",), methods=("adaptive_huber", "spectral_cv"), reps=2, seed=4)
    base.update(kw)
    return run_table(**base)


def test_run_table_cells_and_determinism():
    a, b = _small(), _small()
    assert len(a.cells) == 2 * 3
    assert [c.rme for c in a.cells] == [c.rme for c in b.cells]
    assert all(c.status == "ok" and c.reps == 2 for c in a.cells)


def test_cell_independent_of_other_scenarios():
    alone = _small(models=("normal",))
    mixed = _small(models=("student_t3", "normal"))
    assert [c.rme for c in alone.cells] == [c.rme for c in mixed.get(model="normal")]


def test_resume_is_noop(tmp_path):
    ck = tmp_path / "rep.json"
    first = _small(checkpoint=ck)
    second = _small(checkpoint=ck)
    assert len(second.cells) == len(first.cells)
    assert [c.rme for c in second.cells] == [c.rme for c in first.cells]


def test_report_round_trip(tmp_path):
    rep = _small()
    rep.to_json(tmp_path / "r.json")
    back = BenchmarkReport.from_json(tmp_path / "r.json")
    assert [c.key for c in back.cells] == [c.key for c in rep.cells]
    assert json.loads(rep.to_json())["seed"] == 4
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# seed=4" and len(lines) == 2 + len(rep.cells)
    assert "Sigma_3^H" in rep.summary()
    errs = rep.errors("student_t3", "diagonal", 20, 5, "adaptive_huber", "max")
    assert errs.shape == (2,)


def test_unknown_method():
    with pytest.raises(ConfigurationError):
        _small(methods=("bogus",))


def test_sweep_rows():
    rep = run_dimension_sweep(n=30, d_list=[4, 8], reps=2)
    assert len(rep.cells) == 2 * 3
    assert {c.norm for c in rep.cells} == {"max"}


def test_process_parallel_matches_serial():
    serial = _small(models=("normal",), methods=("adaptive_truncated",))
    parallel = _small(models=("normal",), methods=("adaptive_truncated",), n_jobs=2)
    assert [c.rme for c in parallel.cells] == [c.rme for c in serial.cells]
