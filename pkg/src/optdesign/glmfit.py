"""Binomial GLM fit of the 2x2 main-effects model and the resulting design analysis."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .design import UNIFORM, det_criterion
from .exceptions import NoConvergence, ValidationError
from .links import DESIGN_POINTS, MODEL_MATRIX, Link, link_value, mean, mean_derivative, weights_from_beta
from .solver import SolveResult, solve

__all__ = [
    "BinomialTable",
    "GlmFit",
    "FitResult",
    "BoundaryCellWarning",
    "fit_glm",
    "analyze",
    "score",
    "log_likelihood",
    "read_table_csv",
]


class BoundaryCellWarning(UserWarning):
    """A cell has all successes or all failures; the MLE may not exist."""


@dataclass(frozen=True, eq=False)
class BinomialTable:
    """Success counts and trials at the four design points, in canonical order.

    Counts may be non-integer (e.g. fitted values fed back in); they only
    need ``0 <= successes <= trials`` and ``trials > 0``.
    """

    successes: np.ndarray
    trials: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.successes, dtype=float)
        n = np.asarray(self.trials, dtype=float)
        if y.shape != (4,) or n.shape != (4,):
            raise ValidationError("a 2x2 table needs exactly four cells")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(n))):
            raise ValidationError("cell counts must be finite")
        if np.any(n <= 0):
            raise ValidationError(f"trials must be positive, got {n.tolist()}")
        if np.any(y < 0) or np.any(y > n):
            raise ValidationError(f"need 0 <= successes <= trials, got {y.tolist()} of {n.tolist()}")
        object.__setattr__(self, "successes", y)
        object.__setattr__(self, "trials", n)

    @property
    def proportions(self) -> np.ndarray:
        return self.successes / self.trials

    @classmethod
    def from_rows(cls, rows):
        """Build from ``(x1, x2, successes, trials)`` rows in any order."""
        rows = list(rows)
        if len(rows) != 4:
            raise ValidationError(f"expected 4 rows, got {len(rows)}")
        y = np.full(4, np.nan)
        n = np.full(4, np.nan)
        for x1, x2, s, t in rows:
            if x1 not in (-1, 1) or x2 not in (-1, 1):
                raise ValidationError(f"factor levels must be -1 or +1, got ({x1}, {x2})")
            hit = np.flatnonzero((DESIGN_POINTS[:, 0] == x1) & (DESIGN_POINTS[:, 1] == x2))[0]
            if not np.isnan(y[hit]):
                raise ValidationError(f"duplicate design point ({x1}, {x2})")
            y[hit], n[hit] = s, t
        return cls(y, n)


def read_table_csv(path) -> BinomialTable:
    """Read ``x1,x2,successes,trials`` (header required, four data rows)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if row.strip() and not row.startswith("#"))
        expected = ["x1", "x2", "successes", "trials"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise ValidationError(f"{path}: header must be {','.join(expected)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append((
                    int(rec["x1"]), int(rec["x2"]), int(rec["successes"]), int(rec["trials"]),
                ))
            except (TypeError, ValueError):
                raise ValidationError(f"{path}: bad row {lineno}: {rec}") from None
    return BinomialTable.from_rows(rows)


@dataclass(frozen=True, eq=False)
class GlmFit:
    beta: np.ndarray
    link: Link
    iterations: int
    converged: bool
    score_norm: float
    trace: list = field(default_factory=list, repr=False)


@dataclass(frozen=True, eq=False)
class FitResult:
    beta_hat: np.ndarray
    w_hat: np.ndarray
    p_opt: np.ndarray
    det_opt: float
    det_uniform: float
    uniform_efficiency: float
    iterations: int
    converged: bool
    link: Link
    design: SolveResult = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "link": self.link.value,
            "beta_hat": self.beta_hat.tolist(),
            "w_hat": self.w_hat.tolist(),
            "p_opt": self.p_opt.tolist(),
            "branch": self.design.branch.value if self.design is not None else None,
            "det_opt": self.det_opt,
            "det_uniform": self.det_uniform,
            "uniform_efficiency": self.uniform_efficiency,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def log_likelihood(beta, table: BinomialTable, link) -> float:
    mu = mean(link, MODEL_MATRIX @ np.asarray(beta, dtype=float))
    y, n = table.successes, table.trials
    return float(np.sum(y * np.log(mu) + (n - y) * np.log1p(-mu)))


def score(beta, table: BinomialTable, link) -> np.ndarray:
    """Gradient of the binomial log-likelihood in ``beta``."""
    eta = MODEL_MATRIX @ np.asarray(beta, dtype=float)
    mu = mean(link, eta)
    dmu = mean_derivative(link, eta)
    y, n = table.successes, table.trials
    return MODEL_MATRIX.T @ ((y - n * mu) * dmu / (mu * (1.0 - mu)))


def fit_glm(table: BinomialTable, link="logit", max_iter=50, tol=1e-8) -> GlmFit:
    """Maximum-likelihood ``beta`` by iteratively reweighted least squares.

    Starts from ``(g(pooled proportion), 0, 0)`` and halves the step while the
    log-likelihood decreases. Converged means the score has max-norm at
    most ``tol``.
    """
    link = Link.parse(link)
    X = MODEL_MATRIX
    y, n = table.successes, table.trials
    if np.any((y == 0) | (y == n)):
        warnings.warn(
            "boundary cell (observed proportion 0 or 1); the fit may not converge",
            BoundaryCellWarning,
            stacklevel=2,
        )
    beta = np.array([link_value(link, y.sum() / n.sum()), 0.0, 0.0])
    ll = log_likelihood(beta, table, link)
    trace = []
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = mean(link, eta)
        dmu = mean_derivative(link, eta)
        wts = n * dmu * dmu / (mu * (1.0 - mu))
        z = eta + (y / n - mu) / dmu
        XtW = X.T * wts
        target = np.linalg.solve(XtW @ X, XtW @ z)
        step = target - beta
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = log_likelihood(cand, table, link)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        g = float(np.max(np.abs(score(beta, table, link))))
        trace.append(g)
        if g <= tol:
            return GlmFit(beta, link, it, True, g, trace)
    raise NoConvergence(
        f"IRLS did not converge in {max_iter} iterations (score max-norm {trace[-1]:.3e})",
        residual=trace[-1],
        trace=trace,
    )


def analyze(table: BinomialTable, link="logit") -> FitResult:
    """Fit, then compute the locally optimal design at the estimate and the
    efficiency of the uniform design relative to it."""
    fit = fit_glm(table, link)
    w_hat = weights_from_beta(fit.link, fit.beta)
    design = solve(1.0 / w_hat)
    det_opt = det_criterion(w_hat, design.p)
    det_uni = det_criterion(w_hat, UNIFORM)
    return FitResult(
        beta_hat=fit.beta,
        w_hat=w_hat,
        p_opt=design.p,
        det_opt=det_opt,
        det_uniform=det_uni,
        uniform_efficiency=float(np.cbrt(det_uni / det_opt)),
        iterations=fit.iterations,
        converged=fit.converged,
        link=fit.link,
        design=design,
    )
