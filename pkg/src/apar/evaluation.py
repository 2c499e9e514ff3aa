"""Error metrics and the three benchmark designs.

* :func:`run_benchmark` - methods across training fractions.
* :func:`lambda_sweep` - the personality-regularization weight.
* :func:`dsw_benchmark` - training sets in which a given share of users has
  no rated item in common with anyone else.

Every cell is a pure function of (dataset, configuration, seed); a failing
cell is recorded with its error and the sweep moves on.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .baselines import KINDS, fit_baseline, predict_many
from .ingest import (RatingsDataset, dsw_degree, make_dsw_subdataset, split_train_test)
from .model import Hyperparams
from .personality import Lexicon, WeightTable
from .pipeline import fit_apar

logger = logging.getLogger(__name__)

METHODS = ("Random", "ItemMean", "UserMean", "PlainMF", "APAR")
DEFAULT_FRACTIONS = (0.6, 0.7, 0.8, 0.9)
DEFAULT_LAMBDAS = (0.01, 0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_DEGREES = (0.2, 0.4, 0.6, 0.8)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

CSV_COLUMNS = ("method", "fraction_or_degree", "lambda", "seed", "mae", "rmse", "n_pairs",
               "runtime_ms", "error")


def _check(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass
class Cell:
    method: str
    fraction: float
    lam: float
    seed: int | str
    degree: float | None = None
    mae: float = math.nan
    rmse: float = math.nan
    n_pairs: int = 0
    runtime_ms: float | None = None
    error: str | None = None
    achieved_degree: float | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class EvalReport:
    """Per-seed cells of one experiment. ``kind`` is 'fraction', 'degree' or 'lambda'."""

    kind: str
    cells: list[Cell] = field(default_factory=list)

    def _key(self, c: Cell):
        return {"fraction": c.fraction, "degree": c.degree, "lambda": c.lam}[self.kind]

    @property
    def methods(self) -> list[str]:
        seen = {c.method for c in self.cells}
        return [m for m in METHODS if m in seen] + sorted(seen - set(METHODS))

    @property
    def settings(self) -> list:
        return sorted({self._key(c) for c in self.cells})

    def mean_cells(self) -> list[Cell]:
        """Seed (and fraction) averages of the successful cells per method and setting."""
        groups = defaultdict(list)
        for c in self.cells:
            if c.ok:
                groups[c.method, self._key(c)].append(c)
        out = []
        for m in self.methods:
            for s in self.settings:
                cs = groups.get((m, s))
                if not cs:
                    continue
                fr = {c.fraction for c in cs}
                out.append(Cell(
                    method=m,
                    fraction=fr.pop() if len(fr) == 1 else math.nan,
                    lam=cs[0].lam,
                    seed="mean",
                    degree=cs[0].degree,
                    mae=float(np.mean([c.mae for c in cs])),
                    rmse=float(np.mean([c.rmse for c in cs])),
                    n_pairs=int(sum(c.n_pairs for c in cs)),
                    achieved_degree=(float(np.mean([c.achieved_degree for c in cs]))
                                     if cs[0].achieved_degree is not None else None),
                ))
        return out

    def mean(self, method: str, setting) -> tuple[float, float]:
        for c in self.mean_cells():
            if c.method == method and math.isclose(self._key(c), setting):
                return c.mae, c.rmse
        raise KeyError((method, setting))

    def to_csv(self, path=None, timing: bool = False) -> str:
        """CSV with per-seed rows then ``seed=mean`` rows.

        ``runtime_ms`` stays blank unless ``timing`` is set, which keeps the
        file byte-reproducible by default.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in [*self.cells, *self.mean_cells()]:
            key = c.degree if self.kind == "degree" else c.fraction
            w.writerow([
                c.method, _fmt(key), _fmt(c.lam), c.seed, _fmt(c.mae), _fmt(c.rmse), c.n_pairs,
                _fmt(c.runtime_ms) if timing and c.runtime_ms is not None else "",
                c.error or "",
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def render_table(self) -> str:
        """Text grid: one row per setting and metric, one column per method."""
        means = {(c.method, self._key(c)): c for c in self.mean_cells()}
        label = {"fraction": "Training Data", "degree": "DSW degree", "lambda": "lambda"}[self.kind]
        methods = self.methods
        head = [label, "Metrics", *methods]
        rows = []
        for s in self.settings:
            name = f"{s:.0%}" if self.kind in ("fraction", "degree") else f"{s:g}"
            for metric in ("MAE", "RMSE"):
                vals = []
                for m in methods:
                    c = means.get((m, s))
                    vals.append("-" if c is None else f"{getattr(c, metric.lower()):.3f}")
                rows.append([name, metric, *vals])
        widths = [max(len(r[k]) for r in [head, *rows]) for k in range(len(head))]
        lines = ["  ".join(x.ljust(wd) for x, wd in zip(r, widths)).rstrip() for r in [head, *rows]]
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x))


def _evaluate(method: str, train: RatingsDataset, test: RatingsDataset, hp: Hyperparams,
              lexicon, weights, domain) -> tuple[np.ndarray, np.ndarray]:
    u, v, truth = test.arrays
    if method == "APAR":
        fitted = fit_apar(train, hp, lexicon, weights, domain)
        clip = train.rating_scale if hp.clip else None
        return fitted.model.predict_pairs(u, v, clip=clip), truth
    if method not in KINDS:
        raise ValueError(f"unknown method {method!r}")
    pred = fit_baseline(method, train, hp)
    return predict_many(pred, u, v, clip=hp.clip), truth


def _run_cell(cell: Cell, train, test, hp, lexicon, weights, domain) -> Cell:
    t0 = time.perf_counter()
    try:
        if len(test.records) == 0:
            raise ValueError("no test pairs")
        pred, truth = _evaluate(cell.method, train, test, hp, lexicon, weights, domain)
        cell.mae, cell.rmse, cell.n_pairs = mae(pred, truth), rmse(pred, truth), len(truth)
    except Exception as exc:  # a failed cell must not stop the sweep
        logger.warning("cell %s failed: %s", cell, exc)
        cell.error = f"{type(exc).__name__}: {exc}"
    cell.runtime_ms = 1000.0 * (time.perf_counter() - t0)
    return cell


def run_benchmark(ds: RatingsDataset, methods=METHODS, fractions=DEFAULT_FRACTIONS,
                  hp: Hyperparams | None = None, seeds=DEFAULT_SEEDS,
                  lexicon: Lexicon | None = None, weights: WeightTable | None = None,
                  domain: str | None = None) -> EvalReport:
    hp = hp or Hyperparams()
    report = EvalReport("fraction")
    for fraction in fractions:
        for seed in seeds:
            train, test = split_train_test(ds, fraction, seed)
            hps = hp.replace(seed=seed)
            for m in methods:
                report.cells.append(_run_cell(Cell(m, fraction, hp.lam, seed), train, test,
                                              hps, lexicon, weights, domain))
    return report


def lambda_sweep(ds: RatingsDataset, lambdas=DEFAULT_LAMBDAS, hp: Hyperparams | None = None,
                 seeds=DEFAULT_SEEDS, fractions=(0.9,), degree: float | None = None,
                 lexicon: Lexicon | None = None, weights: WeightTable | None = None,
                 domain: str | None = None) -> EvalReport:
    """APAR test error per personality-regularization weight.

    Means average over seeds and ``fractions``. With ``degree`` set, each
    training split is first sparsified to that no-common-feedback degree.
    """
    if len(lambdas) == 0:
        raise ValueError("lambdas must be nonempty")
    hp = hp or Hyperparams()
    report = EvalReport("lambda")
    for fraction in fractions:
        for seed in seeds:
            train, test = split_train_test(ds, fraction, seed)
            achieved = None
            if degree is not None:
                train = make_dsw_subdataset(train, degree, seed)
                achieved = dsw_degree(train)
            for lam in lambdas:
                cell = Cell("APAR", fraction, lam, seed, degree=degree, achieved_degree=achieved)
                report.cells.append(_run_cell(cell, train, test, hp.replace(seed=seed, lam=lam),
                                              lexicon, weights, domain))
    return report


def dsw_benchmark(ds: RatingsDataset, degrees=DEFAULT_DEGREES, methods=METHODS,
                  hp: Hyperparams | None = None, seeds=DEFAULT_SEEDS, fraction: float = 0.9,
                  lexicon: Lexicon | None = None, weights: WeightTable | None = None,
                  domain: str | None = None) -> EvalReport:
    """Methods on training sets sparsified to each no-common-feedback degree.

    The test split is drawn from the full dataset first; only the training
    part is sparsified, so test pairs of isolated users concern items that
    other users did rate in training.
    """
    for dg in degrees:
        if not 0.0 <= dg <= 1.0:
            raise ValueError(f"degree {dg} outside [0, 1]")
    hp = hp or Hyperparams()
    report = EvalReport("degree")
    for seed in seeds:
        train_full, test = split_train_test(ds, fraction, seed)
        hps = hp.replace(seed=seed)
        for dg in degrees:
            try:
                train = make_dsw_subdataset(train_full, dg, seed)
                achieved = dsw_degree(train)
            except ValueError as exc:
                logger.warning("degree %.2f seed %s skipped: %s", dg, seed, exc)
                for m in methods:
                    report.cells.append(Cell(m, fraction, hp.lam, seed, degree=dg,
                                             error=f"{type(exc).__name__}: {exc}"))
                continue
            logger.info("degree target %.2f seed %s achieved %.4f", dg, seed, achieved)
            for m in methods:
                cell = Cell(m, fraction, hp.lam, seed, degree=dg, achieved_degree=achieved)
                report.cells.append(_run_cell(cell, train, test, hps, lexicon, weights, domain))
    return report
