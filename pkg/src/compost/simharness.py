"""Seeded simulation study comparing CV and oracle smoothing selection.

Random streams
--------------
Every draw comes from a Philox generator keyed by ``(seed, stream...)``
through :class:`numpy.random.SeedSequence` spawn keys:

* ``(0,)`` shared field ``Z_y`` and per-column perturbations ``z_{x,y}``
* ``(1,)`` sample-size split
* ``(2, x)`` multinomial counts for column ``x``

Column streams do not depend on each other, so fitting columns in any order
or on any number of threads gives identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import softmax

from .domain import DomainError, as_composition, kl_divergence
from .estimator import _auto_collapse, sscomp, worker_count
from .selection import (
    DEFAULT_ALPHA,
    LambdaGrid,
    select_from_sweep_cv,
    select_from_sweep_oracle,
    sweep_grid,
)
from .solver import FitConfig

STREAM_TRUTHS = 0
STREAM_SPLIT = 1
STREAM_SAMPLES = 2

SCHEMES = ("uniform", "prior")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for a named stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class StudyConfig:
    m: int = 100
    s: int = 50
    sigma2_between: float = 0.25
    n_total: int = 10000
    seed: int = 20240517
    grid: LambdaGrid = field(default_factory=LambdaGrid)
    alpha: float = DEFAULT_ALPHA
    split_concentration: float = 25.0
    fail_ratio: float = 2.0

    def __post_init__(self):
        if self.m < 2 or self.s < 1:
            raise ValueError("need m >= 2 and s >= 1")
        if self.n_total < self.s:
            raise ValueError("n_total must be at least s")
        if not self.sigma2_between > 0:
            raise ValueError("sigma2_between must be positive")
        if not self.split_concentration > 0:
            raise ValueError("split_concentration must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {
            "log10_max": self.grid.log10_values[0],
            "log10_min": self.grid.log10_values[-1],
            "points": len(self.grid),
        }
        return d


def generate_truths(config: StudyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P, Z)``: column compositions ``P`` (``m x s``) and the shared field ``Z``."""
    rng = stream(config.seed, STREAM_TRUTHS)
    Z = rng.standard_normal(config.m)
    Zx = Z[:, None] + math.sqrt(config.sigma2_between) * rng.standard_normal((config.m, config.s))
    P = softmax(Zx, axis=0)
    return P, Z


def split_total(N: int, s: int, seed: int, concentration: float = 25.0) -> np.ndarray:
    """Split ``N`` into ``s`` positive integers, mildly uneven.

    Each part gets one unit; the remaining ``N - s`` are shared by
    symmetric Dirichlet proportions, rounded by largest remainder.
    """
    N, s = int(N), int(s)
    if s < 1 or N < s:
        raise DomainError(f"cannot split {N} into {s} positive parts")
    if s == 1:
        return np.array([N])
    rng = stream(seed, STREAM_SPLIT)
    share = rng.dirichlet(np.full(s, float(concentration))) * (N - s)
    parts = np.floor(share).astype(np.int64)
    short = (N - s) - int(parts.sum())
    if short:
        order = np.argsort(-(share - parts), kind="stable")
        parts[order[:short]] += 1
    return parts + 1


def sample_multinomial(p, n: int, rng: np.random.Generator) -> np.ndarray:
    p = as_composition(p)
    if n < 1:
        raise DomainError("sample size must be at least 1")
    return rng.multinomial(int(n), p).astype(np.float64)


@dataclass(frozen=True)
class ColumnRecord:
    column: int
    n: int
    scheme: str
    lambda_oracle: float
    loss_oracle: float
    lambda_cv: float
    loss_cv: float

    @property
    def efficacy(self) -> float:
        return self.loss_oracle / self.loss_cv

    def cv_failed(self, ratio: float) -> bool:
        return self.loss_cv > ratio * self.loss_oracle


def five_number(x) -> dict:
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(v) for v in q)))


@dataclass(frozen=True)
class StudyReport:
    config: StudyConfig
    sizes: np.ndarray
    prior_lambda: float
    records: tuple[ColumnRecord, ...]

    def scheme(self, name: str) -> list[ColumnRecord]:
        return [r for r in self.records if r.scheme == name]

    def losses(self, name: str, selector: str) -> np.ndarray:
        attr = "loss_cv" if selector == "cv" else "loss_oracle"
        return np.array([getattr(r, attr) for r in self.scheme(name)])

    def median(self, name: str, selector: str) -> float:
        return float(np.median(self.losses(name, selector)))

    def cv_failures(self, name: str) -> int:
        return sum(r.cv_failed(self.config.fail_ratio) for r in self.scheme(name))

    def summary(self) -> dict:
        out = {}
        for name in SCHEMES:
            recs = self.scheme(name)
            out[name] = {
                "loss_oracle": five_number([r.loss_oracle for r in recs]),
                "loss_cv": five_number([r.loss_cv for r in recs]),
                "efficacy": five_number([r.efficacy for r in recs]),
                "cv_failures": self.cv_failures(name),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "cv_failure_definition": f"loss_cv > {self.config.fail_ratio!r} * loss_oracle",
            "sizes": {"min": int(self.sizes.min()), "max": int(self.sizes.max()), "values": self.sizes.tolist()},
            "prior_lambda": self.prior_lambda,
            "summary": self.summary(),
            "records": [dict(asdict(r), efficacy=r.efficacy) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Tidy table: one row per column, scheme and selector."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["column", "n", "scheme", "selector", "lambda", "log10_lambda", "kl_loss"])
        for r in self.records:
            for sel, lam, loss in (("oracle", r.lambda_oracle, r.loss_oracle), ("cv", r.lambda_cv, r.loss_cv)):
                out.writerow([r.column, r.n, r.scheme, sel, repr(lam), repr(math.log10(lam)), repr(loss)])
        return buf.getvalue()


def _fit_column(x: int, k, w, p_true, config: StudyConfig, fit_config: FitConfig, scheme: str) -> ColumnRecord:
    sweep = sweep_grid(k, w, config.grid, fit_config, zero_collapse=_auto_collapse(k, w))
    _, cv_trace = select_from_sweep_cv(sweep, config.alpha)
    _, kl_trace = select_from_sweep_oracle(sweep, p_true)
    return ColumnRecord(
        column=x,
        n=int(k.sum()),
        scheme=scheme,
        lambda_oracle=kl_trace.chosen_lambda,
        loss_oracle=kl_trace.records[kl_trace.chosen_index].score,
        lambda_cv=cv_trace.chosen_lambda,
        loss_cv=kl_divergence(p_true, sweep.probs(cv_trace.chosen_index)),
    )


def run_study(config: StudyConfig, fit_config: FitConfig | None = None, *, threads: int | None = None) -> StudyReport:
    """Run both weighting schemes and both selectors on every column."""
    fit_config = fit_config or FitConfig()
    P, _ = generate_truths(config)
    sizes = split_total(config.n_total, config.s, config.seed, config.split_concentration)
    K = np.column_stack(
        [sample_multinomial(P[:, x], sizes[x], stream(config.seed, STREAM_SAMPLES, x)) for x in range(config.s)]
    )
    prior, prior_trace = sscomp(K.sum(axis=1), None, config.alpha, config.grid, fit_config)
    weights = {"uniform": np.ones(config.m), "prior": prior}

    jobs = [(x, name) for name in SCHEMES for x in range(config.s)]

    def run(job):
        x, name = job
        try:
            return _fit_column(x, K[:, x], weights[name], P[:, x], config, fit_config, name)
        except Exception as exc:
            raise RuntimeError(f"column {x} ({name} weights) failed: {exc}") from exc

    n_workers = min(worker_count(threads), len(jobs))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]
    return StudyReport(config, sizes, prior_trace.chosen_lambda, tuple(records))
