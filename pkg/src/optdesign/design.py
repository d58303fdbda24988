"""Weights, variances, design measures and the D-criterion for the 2x2 case.

For the main-effects model the determinant of the information matrix
factorises as ``det(w, p) = 16 * w1*w2*w3*w4 * L(p)`` with

    L(p) = v4*p1*p2*p3 + v3*p1*p2*p4 + v2*p1*p3*p4 + v1*p2*p3*p4,   v = 1/w,

so every optimisation in the package works with ``L`` and the variances.
Each variance multiplies the product of the three proportions *other*
than its own, which makes ``L`` invariant under any simultaneous
relabelling of ``v`` and ``p``.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DegenerateWeightError, ValidationError
from .links import MODEL_MATRIX

__all__ = [
    "SIMPLEX_TOL",
    "UNIFORM",
    "as_weights",
    "as_variances",
    "as_design",
    "variance_from_weight",
    "triple_products",
    "objective_L",
    "gradient_L",
    "hessian_L",
    "det_criterion",
    "d_efficiency_root",
    "information_matrix",
    "relative_loss",
]

SIMPLEX_TOL = 1e-12
UNIFORM = np.full(4, 0.25)


def _four(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.shape != (4,):
        raise ValidationError(f"{name} must have exactly 4 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite, got {arr.tolist()}")
    return arr


def as_weights(w) -> np.ndarray:
    """Validate a weight vector; every entry must be strictly positive."""
    arr = _four(w, "weight vector")
    for i, wi in enumerate(arr):
        if wi <= 0.0:
            raise DegenerateWeightError(i, float(wi))
    return arr


def as_variances(v) -> np.ndarray:
    arr = _four(v, "variance vector")
    bad = np.flatnonzero(arr <= 0.0)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"variance at component {i + 1} of 4 must be > 0, got {arr[i]!r}")
    return arr


def as_design(p, tol=SIMPLEX_TOL) -> np.ndarray:
    """Validate a design measure: nonnegative proportions summing to one."""
    arr = _four(p, "design")
    if np.any(arr < 0.0):
        raise ValidationError(f"design proportions must be >= 0, got {arr.tolist()}")
    if abs(arr.sum() - 1.0) > tol:
        raise ValidationError(f"design proportions must sum to 1 (got {arr.sum()!r})")
    return arr


def variance_from_weight(w) -> np.ndarray:
    return 1.0 / as_weights(w)


def triple_products(p) -> np.ndarray:
    """``t[i]`` is the product of the three proportions other than ``p[i]``."""
    p1, p2, p3, p4 = np.asarray(p, dtype=float)
    return np.array([p2 * p3 * p4, p1 * p3 * p4, p1 * p2 * p4, p1 * p2 * p3])


def objective_L(v, p) -> float:
    v1, v2, v3, v4 = np.asarray(v, dtype=float)
    p1, p2, p3, p4 = np.asarray(p, dtype=float)
    return float(v4 * p1 * p2 * p3 + v3 * p1 * p2 * p4 + v2 * p1 * p3 * p4 + v1 * p2 * p3 * p4)


def gradient_L(v, p) -> np.ndarray:
    v1, v2, v3, v4 = np.asarray(v, dtype=float)
    p1, p2, p3, p4 = np.asarray(p, dtype=float)
    return np.array([
        v4 * p2 * p3 + v3 * p2 * p4 + v2 * p3 * p4,
        v4 * p1 * p3 + v3 * p1 * p4 + v1 * p3 * p4,
        v4 * p1 * p2 + v2 * p1 * p4 + v1 * p2 * p4,
        v3 * p1 * p2 + v2 * p1 * p3 + v1 * p2 * p3,
    ])


def hessian_L(v, p) -> np.ndarray:
    # d2L/dp_k dp_l = sum over the two indices i outside {k, l} of v_i * p_m,
    # m being the other index outside {i, k, l}. The diagonal is zero.
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    h = np.zeros((4, 4))
    for k in range(4):
        for l in range(k + 1, 4):
            i, m = (j for j in range(4) if j != k and j != l)
            h[k, l] = h[l, k] = v[i] * p[m] + v[m] * p[i]
    return h


def det_criterion(w, p) -> float:
    """``det(X' W X)`` with ``W = diag(w * p)``, via the factorised form."""
    w = as_weights(w)
    return float(16.0 * np.prod(w) * objective_L(1.0 / w, p))


def d_efficiency_root(w, p) -> float:
    """Cube root of :func:`det_criterion`; concave in ``p`` with the same argmax."""
    return float(np.cbrt(det_criterion(w, p)))


def information_matrix(w, p) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    X = MODEL_MATRIX
    return X.T @ (X * (w * p)[:, None])


def relative_loss(w_t, p_t, p_c) -> float:
    """Relative loss of D-efficiency from running ``p_c`` when ``p_t`` is optimal.

    ``p_t`` must be the optimal design for the true weights ``w_t``; the
    function does not re-solve. The result is invariant to rescaling
    ``w_t`` because only the determinant ratio enters.
    """
    w_t = as_weights(w_t)
    v_t = 1.0 / w_t
    top = objective_L(v_t, p_t)
    if top <= 0.0:
        raise ValidationError("degenerate optimum: det(w_t, p_t) is zero")
    return float(1.0 - np.cbrt(objective_L(v_t, p_c) / top))
