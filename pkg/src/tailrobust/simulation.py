"""Monte Carlo harness: data generators, the RME metric and benchmark runners.

Seeding
-------
Every scenario gets its own :class:`numpy.random.SeedSequence` whose spawn
key is built from the scenario coordinates ``(model, structure, n, d)``.
Replication ``i`` uses child ``i`` of that sequence. A cell therefore has the
same data whether it runs alone, inside a full table, or after a resume.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .exceptions import ConfigurationError, TailRobustError
from .linalg import eig_sym, norm, sample_covariance, symmetrize
from .m_estimators import elementwise_huber
from .truncation import spectrum_truncated
from .tuning import adaptive_elementwise_truncated, adaptive_huber_covariance, cross_validate_tau

logger = logging.getLogger(__name__)

__all__ = [
    "BenchmarkReport",
    "Cell",
    "CovStructure",
    "GenModel",
    "METHODS",
    "factor_model_sample",
    "generate",
    "rme",
    "run_dimension_sweep",
    "run_table",
]

MODELS = ("normal", "student_t3", "pareto3", "lognormal", "gamma31")
STRUCTURES = ("diagonal", "equal_corr", "power_decay")
NORMS = ("2", "max", "F")
_NORM_KIND = {"2": "spectral", "max": "max", "F": "frobenius"}

_E = np.e


@dataclass(frozen=True)
class GenModel:
    """Entry distribution of the noise matrix ``Y``.

    With the default analytic standardisation every entry has mean 0 and
    variance 1. ``literal_scaling`` switches the Pareto and log-normal
    models to the constants ``4 Z / 3`` and ``exp(0.5 + Z) / (e^3 - e^2)``,
    which do not give unit variance.
    """

    kind: str = "normal"
    seed: int | None = None
    literal_scaling: bool = False

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ConfigurationError(f"unknown model {self.kind!r}; choose from {MODELS}")

    def draw(self, rng: np.random.Generator, size) -> NDArray[np.float64]:
        k = self.kind
        if k == "normal":
            return rng.standard_normal(size)
        if k == "student_t3":
            return rng.standard_t(3, size) / np.sqrt(3.0)
        if k == "pareto3":
            Z = rng.pareto(3.0, size) + 1.0  # classical Pareto, scale 1
            return 4.0 * Z / 3.0 if self.literal_scaling else (Z - 1.5) / np.sqrt(0.75)
        if k == "lognormal":
            W = np.exp(0.5 + rng.standard_normal(size))
            if self.literal_scaling:
                return W / (_E**3 - _E**2)
            return (W - _E) / np.sqrt((_E - 1.0) * _E**2)
        return (rng.gamma(3.0, 1.0, size) - 3.0) / np.sqrt(3.0)


@dataclass(frozen=True)
class CovStructure:
    """Population covariance: ``scale`` times one of three unit-diagonal patterns."""

    kind: str = "diagonal"
    d: int = 10
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in STRUCTURES:
            raise ConfigurationError(f"unknown structure {self.kind!r}; choose from {STRUCTURES}")
        if self.d < 1:
            raise ConfigurationError("d must be at least 1")
        if not self.scale > 0:
            raise ConfigurationError("scale must be positive")

    def matrix(self) -> NDArray[np.float64]:
        d = self.d
        if self.kind == "diagonal":
            S = np.eye(d)
        elif self.kind == "equal_corr":
            S = np.full((d, d), 0.5) + 0.5 * np.eye(d)
        else:
            idx = np.arange(d)
            S = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        return self.scale * S

    def sqrt(self) -> NDArray[np.float64]:
        return _sqrt_cached(self.kind, self.d, self.scale)


@lru_cache(maxsize=32)
def _sqrt_cached(kind, d, scale):
    S = CovStructure(kind, d, scale)
    if kind == "diagonal":
        return np.sqrt(scale) * np.eye(d)
    lam, V = eig_sym(S.matrix())
    return symmetrize((V * np.sqrt(np.maximum(lam, 0.0))) @ V.T)


def generate(
    model: GenModel, structure: CovStructure, n: int, rng: np.random.Generator | None = None
) -> NDArray[np.float64]:
    """``X = Y Sigma^(1/2)`` with i.i.d. standardised entries in ``Y``.

    ``rng`` overrides ``model.seed`` when given.
    """
    if n < 2:
        raise ConfigurationError("n must be at least 2")
    rng = np.random.default_rng(model.seed) if rng is None else rng
    Y = model.draw(rng, (n, structure.d))
    if structure.kind == "diagonal":
        return Y * np.sqrt(structure.scale)
    return Y @ structure.sqrt()


def factor_model_sample(
    n: int,
    d: int,
    r: int,
    rng: np.random.Generator,
    *,
    mu: NDArray[np.float64] | None = None,
    df: float = 5.0,
):
    """Heavy-tailed approximate factor model ``X = mu + B f + eps``.

    Loadings are standard normal, factors and idiosyncratic errors are
    Student t with ``df`` degrees of freedom rescaled to unit variance, so
    ``Sigma_eps = I``. Returns ``(X, B, F)``.
    """
    if not df > 2:
        raise ConfigurationError("df must exceed 2 for finite variance")
    c = np.sqrt((df - 2.0) / df)
    B = rng.standard_normal((d, r))
    F = c * rng.standard_t(df, (n, r))
    eps = c * rng.standard_t(df, (n, d))
    X = F @ B.T + eps
    if mu is not None:
        X = X + mu
    return X, B, F


def rme(estimates: Sequence, baselines: Sequence, truth, kind: str = "spectral") -> float:
    """Relative mean error ``sum ||est - truth|| / sum ||base - truth||``."""
    if len(estimates) == 0 or len(estimates) != len(baselines):
        raise ValueError("need equal-length non-empty lists")
    num = sum(norm(np.asarray(E) - truth, kind) for E in estimates)
    den = sum(norm(np.asarray(B) - truth, kind) for B in baselines)
    if not den > 0:
        raise ZeroDivisionError("baseline error is zero; RME undefined")
    return float(num / den)


# -- estimators compared in the tables ---------------------------------------


def _huber_cv(X, rng):
    return elementwise_huber(X, cross_validate_tau(X, "elementwise_huber", seed=rng))


def _spectral_cv(X, rng):
    return spectrum_truncated(X, cross_validate_tau(X, "spectral_truncated", seed=rng))


METHODS: dict[str, Callable] = {
    "sample": lambda X, rng: sample_covariance(X),
    "huber_cv": _huber_cv,
    "adaptive_huber": lambda X, rng: adaptive_huber_covariance(X),
    "adaptive_truncated": lambda X, rng: adaptive_elementwise_truncated(X),
    "spectral_cv": _spectral_cv,
}
TABLE_METHODS = ("huber_cv", "adaptive_huber", "adaptive_truncated", "spectral_cv")
SWEEP_METHODS = ("sample", "adaptive_truncated", "spectral_cv")
LABELS = {
    "sample": "Sample",
    "huber_cv": "Sigma_1^H",
    "adaptive_huber": "Sigma_3^H",
    "adaptive_truncated": "Sigma_1^T",
    "spectral_cv": "Sigma_2^T",
}


@dataclass
class Cell:
    """One (scenario, method, norm) entry of a benchmark report.

    ``rme`` is relative to the sample covariance on the same replications;
    ``mean_error`` and friends summarise the absolute errors.
    """

    model: str
    structure: str
    n: int
    d: int
    method: str
    norm: str
    rme: float
    reps: int
    stderr: float
    mean_error: float
    sd_error: float
    min_error: float
    max_error: float
    status: str = "ok"

    @property
    def key(self):
        return (self.model, self.structure, self.n, self.d, self.method, self.norm)


@dataclass
class BenchmarkReport:
    cells: list = field(default_factory=list)
    seed: int | None = None
    meta: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def errors(self, model, structure, n, d, method, norm) -> NDArray[np.float64]:
        """Per-replication errors behind one cell, in replication order (NaN for failures)."""
        return np.asarray(self.raw[_raw_key((model, structure, n, d, method, norm))], dtype=np.float64)

    def keys(self):
        return {c.key for c in self.cells}

    def get(self, **kw) -> list:
        return [c for c in self.cells if all(getattr(c, k) == v for k, v in kw.items())]

    def to_csv(self, path) -> None:
        names = [f.name for f in fields(Cell)]
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for c in self.cells:
                w.writerow([_fmt(getattr(c, k)) for k in names])

    def to_json(self, path=None) -> str:
        nested: dict = {}
        for c in self.cells:
            scen = f"{c.model}/{c.structure}/n={c.n}/d={c.d}"
            nested.setdefault(scen, {}).setdefault(c.method, {})[c.norm] = {
                k: v for k, v in asdict(c).items() if k not in ("model", "structure", "n", "d", "method", "norm")
            }
        text = json.dumps({"seed": self.seed, "meta": self.meta, "scenarios": nested, "raw": self.raw}, indent=2, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path) -> "BenchmarkReport":
        with open(path) as fh:
            doc = json.load(fh)
        cells = []
        for scen, methods in doc.get("scenarios", {}).items():
            model, structure, n, d = scen.split("/")
            for method, norms in methods.items():
                for nm, vals in norms.items():
                    cells.append(
                        Cell(model=model, structure=structure, n=int(n[2:]), d=int(d[2:]), method=method, norm=nm, **vals)
                    )
        return cls(cells=cells, seed=doc.get("seed"), meta=doc.get("meta", {}), raw=doc.get("raw", {}))

    def summary(self) -> str:
        """Plain-text table: one row per method, column groups per model and norm."""
        lines = []
        scen = sorted({(c.structure, c.n, c.d) for c in self.cells})
        for structure, n, d in scen:
            sub = [c for c in self.cells if (c.structure, c.n, c.d) == (structure, n, d)]
            models = [m for m in MODELS if any(c.model == m for c in sub)]
            methods = [m for m in METHODS if any(c.method == m for c in sub)]
            norms = [x for x in NORMS if any(c.norm == x for c in sub)]
            lines.append(f"{structure}  n={n}  d={d}")
            lines.append(" " * 12 + "".join(f"{m:>{7 * len(norms)}}" for m in models))
            lines.append(" " * 12 + "".join(f"{x:>7}" for _ in models for x in norms))
            for meth in methods:
                row = f"{LABELS.get(meth, meth):<12}"
                for m in models:
                    for x in norms:
                        hit = [c for c in sub if (c.model, c.method, c.norm) == (m, meth, x)]
                        row += f"{hit[0].rme:7.2f}" if hit and hit[0].status == "ok" else f"{'fail':>7}"
                lines.append(row)
            lines.append("")
        return "\n".join(lines)


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def scenario_seed(seed: int, model: str, structure: str, n: int, d: int) -> np.random.SeedSequence:
    key = (MODELS.index(model), STRUCTURES.index(structure), int(n), int(d))
    return np.random.SeedSequence(seed, spawn_key=key)


def _one_rep(args):
    child, model, structure, n, methods = args
    rng = np.random.default_rng(child)
    X = generate(model, structure, n, rng)
    truth = structure.matrix()
    out = {}
    for m in methods:
        try:
            E = METHODS[m](X, rng)
            out[m] = {x: norm(E - truth, _NORM_KIND[x]) for x in NORMS}
        except (TailRobustError, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.warning("replication failed for %s: %s", m, exc)
            out[m] = None
    return out


def _run_scenario(model, structure, n, methods, reps, seed, n_jobs):
    ss = scenario_seed(seed, model.kind, structure.kind, n, structure.d)
    names = tuple(dict.fromkeys(("sample",) + tuple(methods)))
    jobs = [(child, model, structure, n, names) for child in ss.spawn(reps)]
    if n_jobs == 1:
        results = [_one_rep(j) for j in jobs]
    else:
        # spawn, not fork: forking after numba has started its OpenMP runtime aborts the child
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=n_jobs, mp_context=ctx) as pool:
            results = list(pool.map(_one_rep, jobs))
    return results


def _raw_key(key) -> str:
    return "/".join(str(k) for k in key)


def _store_raw(report, results, cells) -> None:
    for c in cells:
        report.raw[_raw_key(c.key)] = [
            None if r[c.method] is None else float(r[c.method][c.norm]) for r in results
        ]


def _cells_from(results, model, structure, n, methods):
    cells = []
    base_ok = [r["sample"] is not None for r in results]
    for m in methods:
        for x in NORMS:
            ok = [b and r[m] is not None for b, r in zip(base_ok, results)]
            kept = [r for r, o in zip(results, ok) if o]
            if not kept:
                nan = float("nan")
                cells.append(Cell(model.kind, structure.kind, n, structure.d, m, x, rme=nan, reps=0, stderr=nan,
                                  mean_error=nan, sd_error=nan, min_error=nan, max_error=nan, status="failed"))
                continue
            e = np.array([r[m][x] for r in kept])
            b = np.array([r["sample"][x] for r in kept])
            ratio = e.sum() / b.sum()
            # delta-method standard error of a ratio of means
            se = np.std(e - ratio * b, ddof=1) / np.sqrt(len(e)) / b.mean() if len(e) > 1 else float("nan")
            status = "ok" if len(kept) == len(results) else f"partial:{len(results) - len(kept)}"
            cells.append(
                Cell(model.kind, structure.kind, n, structure.d, m, x, float(ratio), len(e), float(se),
                     float(e.mean()), float(e.std(ddof=1)) if len(e) > 1 else 0.0, float(e.min()), float(e.max()),
                     status)
            )
    return cells


def run_table(
    scenarios: Iterable[tuple[int, int]] = ((50, 100),),
    models: Iterable[str] = ("normal", "student_t3", "pareto3", "lognormal"),
    structures: Iterable[str] = ("diagonal",),
    methods: Iterable[str] = TABLE_METHODS,
    reps: int = 50,
    seed: int = 0,
    *,
    report: BenchmarkReport | None = None,
    checkpoint: str | os.PathLike | None = None,
    n_jobs: int = 1,
    literal_scaling: bool = False,
    progress: Callable[[str], None] | None = None,
) -> BenchmarkReport:
    """RME of each method against the sample covariance for every scenario.

    Scenarios whose cells are already in ``report`` (or in the JSON file
    ``checkpoint``) are skipped; the checkpoint is rewritten after each
    finished scenario, so an interrupted run can be resumed.
    """
    if reps < 1:
        raise ConfigurationError("reps must be at least 1")
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigurationError(f"unknown method(s) {bad}; choose from {sorted(METHODS)}")
    if report is None:
        report = (
            BenchmarkReport.from_json(checkpoint)
            if checkpoint is not None and os.path.exists(checkpoint)
            else BenchmarkReport(seed=seed)
        )
    report.meta.setdefault("reps", reps)
    done = report.keys()
    for n, d in scenarios:
        for s in structures:
            structure = CovStructure(s, d)
            for mk in models:
                model = GenModel(mk, literal_scaling=literal_scaling)
                want = {(mk, s, n, d, m, x) for m in methods for x in NORMS}
                if want <= done:
                    continue
                t0 = time.perf_counter()
                results = _run_scenario(model, structure, n, methods, reps, seed, n_jobs)
                new = [c for c in _cells_from(results, model, structure, n, methods) if c.key not in done]
                report.cells.extend(new)
                _store_raw(report, results, new)
                done |= {c.key for c in new}
                if checkpoint is not None:
                    report.to_json(checkpoint)
                if progress:
                    progress(f"{mk}/{s}/n={n}/d={d}: {time.perf_counter() - t0:.1f}s")
    return report


def run_dimension_sweep(
    n: int = 200,
    d_list: Iterable[int] = range(50, 501, 50),
    reps: int = 50,
    seed: int = 0,
    methods: Iterable[str] = SWEEP_METHODS,
    *,
    model: str = "gamma31",
    scale: float = 3.0,
    n_jobs: int = 1,
    checkpoint: str | os.PathLike | None = None,
    progress: Callable[[str], None] | None = None,
) -> BenchmarkReport:
    """Max-norm error of each method as the dimension grows.

    The default reproduces the centred Gamma(3, 1) toy study, whose
    population covariance is ``3 I``. Only max-norm cells are kept.
    """
    return _sweep(n, list(d_list), reps, seed, tuple(methods), model, scale, n_jobs, checkpoint, progress)


def _sweep_report(checkpoint, seed):
    if checkpoint is not None and os.path.exists(checkpoint):
        return BenchmarkReport.from_json(checkpoint)
    return BenchmarkReport(seed=seed)


def _sweep(n, d_list, reps, seed, methods, model_kind, scale, n_jobs, checkpoint, progress):
    report = _sweep_report(checkpoint, seed)
    report.meta.update({"reps": reps, "scale": scale, "kind": "dimension_sweep"})
    done = report.keys()
    model = GenModel(model_kind)
    for d in d_list:
        structure = CovStructure("diagonal", d, scale)
        if {(model_kind, "diagonal", n, d, m, "max") for m in methods} <= done:
            continue
        t0 = time.perf_counter()
        results = _run_scenario(model, structure, n, methods, reps, seed, n_jobs)
        cells = [c for c in _cells_from(results, model, structure, n, methods) if c.norm == "max"]
        report.cells.extend(cells)
        _store_raw(report, results, cells)
        done |= {c.key for c in cells}
        if checkpoint is not None:
            report.to_json(checkpoint)
        if progress:
            progress(f"sweep d={d}: {time.perf_counter() - t0:.1f}s")
    return report
