"""Binary-response link functions and the GLM weights they induce.

All vectors in this package follow one fixed ordering of the four design
points of the 2x2 factorial, ``(+1,+1), (+1,-1), (-1,+1), (-1,-1)``, which
is also the row order of :data:`MODEL_MATRIX`.
"""
from __future__ import annotations

import csv
import enum
import math

import numpy as np
from scipy import special

__all__ = [
    "Link",
    "DESIGN_POINTS",
    "MODEL_MATRIX",
    "WEIGHT_CAP",
    "MU_EPS",
    "mean",
    "mean_derivative",
    "weight",
    "link_value",
    "linear_predictor",
    "weights_from_beta",
    "weight_curve",
    "write_curve_csv",
]

MU_EPS = 1e-15
# Largest open interval of doubles inside (0, 1); keeps mean() strictly monotone.
_MU_LO = np.finfo(float).tiny
_MU_HI = 1.0 - np.finfo(float).epsneg

DESIGN_POINTS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
MODEL_MATRIX = np.column_stack([np.ones(4), DESIGN_POINTS])


class Link(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    LOGLOG = "loglog"
    CLOGLOG = "cloglog"

    @classmethod
    def parse(cls, value) -> "Link":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown link {value!r}; expected one of: {choices}") from None


# Supremum of the weight over eta. The log-log value is the rounded
# maximum; the true supremum is 0.64761...
WEIGHT_CAP = {
    Link.LOGIT: 0.25,
    Link.PROBIT: 2.0 / math.pi,
    Link.LOGLOG: 0.648,
    Link.CLOGLOG: 0.648,
}


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def _parts(link, eta):
    """Return (mu, 1 - mu, dmu/deta), each computed without cancellation."""
    link = Link.parse(link)
    eta = np.asarray(eta, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        if link is Link.LOGIT:
            mu = special.expit(eta)
            one_minus = special.expit(-eta)
            dmu = mu * one_minus
        elif link is Link.PROBIT:
            mu = special.ndtr(eta)
            one_minus = special.ndtr(-eta)
            dmu = np.exp(-0.5 * eta * eta) / math.sqrt(2.0 * math.pi)
        elif link is Link.CLOGLOG:
            e = np.exp(eta)
            mu = -np.expm1(-e)
            one_minus = np.exp(-e)
            dmu = np.exp(eta - e)
        else:  # loglog
            e = np.exp(-eta)
            mu = np.exp(-e)
            one_minus = -np.expm1(-e)
            dmu = np.exp(-eta - e)
    return link, mu, one_minus, dmu


def mean(link, eta):
    """Inverse link, kept strictly inside (0, 1)."""
    _, mu, _, _ = _parts(link, eta)
    return _scalar_or_array(np.clip(mu, _MU_LO, _MU_HI), eta)


def mean_derivative(link, eta):
    """d(mu)/d(eta)."""
    _, _, _, dmu = _parts(link, eta)
    return _scalar_or_array(dmu, eta)


def weight(link, eta):
    """GLM weight ``(dmu/deta)^2 / (mu (1 - mu))`` for a Bernoulli response.

    For the logit link this is exactly ``mu (1 - mu)``. For the other links
    both factors of the denominator are clipped at ``MU_EPS`` so the weight
    decays to zero instead of producing 0/0 in the tails.
    """
    link, mu, one_minus, dmu = _parts(link, eta)
    if link is Link.LOGIT:
        w = mu * one_minus
    else:
        lo, hi = MU_EPS, 1.0 - MU_EPS
        w = dmu * dmu / (np.clip(mu, lo, hi) * np.clip(one_minus, lo, hi))
    return _scalar_or_array(w, eta)


def link_value(link, mu):
    """The link itself, eta = g(mu)."""
    link = Link.parse(link)
    scalar = np.ndim(mu) == 0
    mu = np.clip(np.asarray(mu, dtype=float), _MU_LO, _MU_HI)
    if link is Link.LOGIT:
        eta = special.logit(mu)
    elif link is Link.PROBIT:
        eta = special.ndtri(mu)
    elif link is Link.CLOGLOG:
        eta = np.log(-np.log1p(-mu))
    else:
        eta = -np.log(-np.log(mu))
    return float(eta) if scalar else eta


def linear_predictor(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (3,):
        raise ValueError(f"beta must have 3 components (b0, b1, b2), got shape {beta.shape}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return MODEL_MATRIX @ beta


def weights_from_beta(link, beta) -> np.ndarray:
    """Weights at the four design points for the main-effects predictor."""
    return np.asarray(weight(link, linear_predictor(beta)), dtype=float)


def weight_curve(link, eta_grid):
    """Rows ``(eta, mu, w)`` over a grid of linear-predictor values."""
    grid = np.asarray(eta_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("eta grid is empty")
    if not np.all(np.isfinite(grid)):
        raise ValueError("eta grid must be finite")
    mu = np.atleast_1d(mean(link, grid))
    w = np.atleast_1d(weight(link, grid))
    return [(float(e), float(m), float(x)) for e, m, x in zip(grid, mu, w)]


def write_curve_csv(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["eta", "mu", "w"])
    for row in rows:
        writer.writerow([f"{x:.15g}" for x in row])
