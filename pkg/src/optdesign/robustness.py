"""Worst-case loss of D-efficiency when the assumed weights are wrong.

The chosen design ``p_c`` is optimal for assumed variances ``v_c``; the true
variances ``v_t`` are only known to lie in ``[a, b]``. Writing
``theta = b / a`` and sorting ``p_c`` in decreasing order, the loss

    R(t, c) = 1 - (L_t(p_c) / L_t(p_t)) ** (1/3)

is worst at one of three true-variance patterns, (b,a,a,a), (b,b,a,a) or
(b,b,b,a) in sorted coordinates, where the true optimum ``p_t`` has a
closed form. The formulas below evaluate those three candidates.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass

import numpy as np

from .design import UNIFORM, as_design, as_variances, as_weights, objective_L, triple_products
from .exceptions import InconsistentInput, ValidationError
from .solver import is_saturated, solve

__all__ = [
    "Pattern",
    "Case",
    "RangeSpec",
    "QProducts",
    "RmaxReport",
    "q_products",
    "Q_ratio",
    "closed_Q",
    "r_max",
    "r_max_unbounded",
    "uniform_loss",
    "r_max_uniform",
    "theta_star",
    "sextic",
    "standardized_distance",
    "pattern_vector",
    "r_max_for_uniform_design",
]

# theta_* is the crossover root of this polynomial (coefficients low to high).
SEXTIC_COEFFS = (3456.0, -5184.0, 3561.0, 596.0, -1506.0, 100.0, 1.0)


class Pattern(str, enum.Enum):
    BAAA = "baaa"
    BBAA = "bbaa"
    BBBA = "bbba"

    @property
    def n_high(self) -> int:
        return self.value.count("b")


class Case(str, enum.Enum):
    SATURATED = "saturated_case_i"
    INTERIOR = "interior_case_ii"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class RangeSpec:
    """Bounds ``a <= v <= b`` on the variances (``b = inf`` when unbounded)."""

    a: float
    b: float = math.inf
    allow_unbounded: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0.0):
            raise ValidationError(f"lower variance bound must be finite and > 0, got {self.a!r}")
        if math.isinf(self.b):
            if not self.allow_unbounded:
                raise ValidationError("infinite upper bound requires allow_unbounded=True")
        elif self.b < self.a:
            raise ValidationError(f"upper bound {self.b!r} is below lower bound {self.a!r}")

    @classmethod
    def from_weights(cls, w_low, w_high):
        """Weight range ``[w_low, w_high]`` maps to ``[1/w_high, 1/w_low]``."""
        if w_low <= 0.0:
            return cls(1.0 / w_high, math.inf, allow_unbounded=True)
        return cls(1.0 / w_high, 1.0 / w_low)

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.b)

    @property
    def theta(self) -> float:
        return self.b / self.a


@dataclass(frozen=True, eq=False)
class QProducts:
    """Triple products of the decreasingly sorted design.

    ``q[k]`` is the product of the three sorted proportions other than the
    ``k``-th; with ``p_sorted`` decreasing, ``q`` is increasing.
    ``order[k]`` is the original index of the ``k``-th largest proportion.
    """

    q: np.ndarray
    order: np.ndarray


@dataclass(frozen=True, eq=False)
class RmaxReport:
    value: float
    attaining_vt: np.ndarray
    pattern: Pattern
    case: Case
    theta: float

    def to_dict(self) -> dict:
        return {
            "r_max": self.value,
            "case": self.case.value,
            "pattern": self.pattern.value,
            "attaining_vt": [x if math.isfinite(x) else "inf" for x in self.attaining_vt.tolist()],
            "theta": self.theta if math.isfinite(self.theta) else "inf",
            "theta_star": theta_star(),
        }


def _sort_desc(p):
    # Stable ordering so ties keep their original relative order.
    return np.argsort(-np.asarray(p, dtype=float), kind="stable")


def q_products(p_c) -> QProducts:
    p = as_design(p_c, tol=1e-9)
    order = _sort_desc(p)
    return QProducts(q=triple_products(p[order]), order=order)


def Q_ratio(v_t, p_c, p_t) -> float:
    """``L_t(p_c) / L_t(p_t)``; the loss is ``1 - Q_ratio ** (1/3)``."""
    v_t = as_variances(v_t)
    den = objective_L(v_t, p_t)
    if den <= 0.0:
        raise ValidationError("degenerate: L(v_t, p_t) is zero")
    return objective_L(v_t, p_c) / den


def closed_Q(theta, pattern, q) -> float:
    """``Q_c`` at a candidate worst-case pattern, in closed form.

    ``q`` holds the increasing triple products (a :class:`QProducts` or a
    length-4 array). The true optimum at each pattern comes from the
    three-equal or matched-pairs closed forms, which fixes the denominators:

    * (theta,1,1,1): ``theta / 27`` for ``theta >= 3``, else ``4 / (9 - theta)^2``
    * (theta,theta,1,1): ``(2t-1-rho)(t-2+rho)(t+1+rho) / (108 (t-1)^2)``
    * (theta,theta,theta,1): ``4 theta^3 / (9 theta - 1)^2``

    with ``rho = sqrt(theta^2 - theta + 1)``. The matched-pairs factor is
    rationalised to ``12 (2t-1+rho)(rho-t+2) / (t (t+1+rho))`` so that it is
    finite at ``theta = 1``.
    """
    t = float(theta)
    if t < 1.0:
        raise ValidationError(f"theta must be >= 1, got {theta!r}")
    q = q.q if isinstance(q, QProducts) else np.asarray(q, dtype=float)
    q1, q2, q3, q4 = q
    pattern = Pattern(pattern)
    if pattern is Pattern.BAAA:
        s = t * q1 + q2 + q3 + q4
        return 27.0 / t * s if t >= 3.0 else (9.0 - t) ** 2 / 4.0 * s
    if pattern is Pattern.BBAA:
        rho = math.sqrt(t * t - t + 1.0)
        factor = 12.0 * (2.0 * t - 1.0 + rho) * (rho - t + 2.0) / (t * (t + 1.0 + rho))
        return factor * (t * q1 + t * q2 + q3 + q4)
    return (9.0 * t - 1.0) ** 2 / (4.0 * t**3) * (t * q1 + t * q2 + t * q3 + q4)


def pattern_vector(pattern, order, a, b) -> np.ndarray:
    """True-variance vector in original coordinates for a sorted-space pattern.

    The ``n_high`` largest proportions of ``p_c`` receive the upper bound.
    """
    pattern = Pattern(pattern)
    vt = np.full(4, float(a))
    vt[np.asarray(order)[: pattern.n_high]] = b
    return vt


def _saturated_case_value(theta):
    return 1.0 - (1.0 / (3.0 * theta)) * ((9.0 * theta - 1.0) / 2.0) ** (2.0 / 3.0)


def r_max(p_c, v_c, rng: RangeSpec, tol=1e-10) -> RmaxReport:
    """Maximum of ``R(t, c)`` over all true variances in the range.

    ``p_c`` must be the optimal design for ``v_c`` and every ``v_c`` must
    lie in ``[a, b]``.
    """
    v_c = as_variances(v_c)
    p_c = as_design(p_c, tol=1e-9)
    if rng.unbounded:
        return r_max_unbounded(p_c, v_c, a=rng.a, report=True)
    a, b = rng.a, rng.b
    slack = 1e-12 * b
    if np.any(v_c < a - slack) or np.any(v_c > b + slack):
        raise InconsistentInput(f"assumed variances {v_c.tolist()} are outside [{a!r}, {b!r}]")
    theta = rng.theta
    qp = q_products(p_c)
    if is_saturated(v_c, tol)[0]:
        if theta < 3.0 * (1.0 - 1e-12):
            raise InconsistentInput(
                f"saturated assumed variances need b/a >= 3, but theta = {theta!r}"
            )
        value = _saturated_case_value(theta)
        vt = pattern_vector(Pattern.BBBA, qp.order, a, b)
        return RmaxReport(value, vt, Pattern.BBBA, Case.SATURATED, theta)
    # All three candidates are evaluated; the smallest Q is the worst loss.
    qs = {pat: closed_Q(theta, pat, qp) for pat in Pattern}
    worst = min(Pattern, key=lambda pat: qs[pat])
    value = float(1.0 - np.cbrt(qs[worst]))
    vt = pattern_vector(worst, qp.order, a, b)
    return RmaxReport(value, vt, worst, Case.INTERIOR, theta)


def r_max_unbounded(p_c, v_c, a=None, report=False):
    """Worst-case loss when the variances are bounded below only.

    Saturated assumed variances give 1; otherwise the loss is
    ``1 - 3 (p2 p3 p4)^(1/3)`` with ``p`` sorted decreasingly.
    """
    v_c = as_variances(v_c)
    p_c = as_design(p_c, tol=1e-9)
    qp = q_products(p_c)
    lo = float(v_c.min()) if a is None else float(a)
    if is_saturated(v_c)[0]:
        value, pat = 1.0, Pattern.BBBA
    else:
        value, pat = float(1.0 - 3.0 * np.cbrt(qp.q[0])), Pattern.BAAA
    if not report:
        return value
    vt = pattern_vector(pat, qp.order, lo, math.inf)
    return RmaxReport(value, vt, pat, Case.UNBOUNDED, math.inf)


def uniform_loss(w) -> float:
    """Loss of the uniform design under weights ``w``.

    Uniform allocation has ``L = sum(v) / 64``, so
    ``R_u = 1 - (1/4) (sum(v) / L(p_t)) ** (1/3)``.
    """
    v = 1.0 / as_weights(w)
    res = solve(v)
    return float(1.0 - 0.25 * np.cbrt(v.sum() / res.L_max))


def sextic(theta):
    return float(np.polynomial.polynomial.polyval(theta, SEXTIC_COEFFS))


_theta_star_lock = threading.Lock()
_theta_star_value = None


def _bisect(f, lo, hi, xtol=1e-12, max_iter=200):
    flo = f(lo)
    if flo * f(hi) > 0.0:
        raise ValueError("root is not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (flo > 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= xtol:
            break
    return 0.5 * (lo + hi)


def theta_star() -> float:
    """Range ratio where the binding pattern for the uniform design switches.

    The sextic has exactly one root in (1, 3), found by bisection and
    cached after the first call.
    """
    global _theta_star_value
    if _theta_star_value is None:
        with _theta_star_lock:
            if _theta_star_value is None:
                _theta_star_value = _bisect(sextic, 1.0, 3.0, xtol=1e-13)
    return _theta_star_value


def _uniform_wide(theta):
    return 1.0 - 0.75 * (1.0 + 3.0 / theta) ** (1.0 / 3.0)


def _uniform_mid(theta):
    return 1.0 - 0.125 * (2.0 * (theta + 3.0) * (9.0 - theta) ** 2) ** (1.0 / 3.0)


def _uniform_narrow(theta):
    # (t+1)(t-1)^2 / [(2t-1-rho)(t-2+rho)(t+1+rho)] rationalised, finite at t = 1.
    rho = math.sqrt(theta * theta - theta + 1.0)
    ratio = (theta + 1.0) * (2.0 * theta - 1.0 + rho) * (rho - theta + 2.0) / (
        9.0 * theta * (theta + 1.0 + rho)
    )
    return 1.0 - 1.5 * ratio ** (1.0 / 3.0)


def r_max_uniform(theta) -> float:
    """Maximum loss of the uniform design when ``max(w) / min(w) <= theta``."""
    t = float(theta)
    if not t >= 1.0:
        raise ValidationError(f"theta must be >= 1, got {theta!r}")
    if math.isinf(t):
        return 0.25
    if t >= 3.0:
        return _uniform_wide(t)
    if t >= theta_star():
        return _uniform_mid(t)
    if t > 1.0:
        return max(0.0, _uniform_narrow(t))
    return 0.0


def standardized_distance(v) -> float:
    """``(2 max(v) - sum(v)) / max(v)``; >= 0 exactly when saturated, -2 at equality."""
    v = as_variances(v)
    vmax = float(v.max())
    return (2.0 * vmax - float(v.sum())) / vmax


def r_max_for_uniform_design(rng: RangeSpec) -> RmaxReport:
    """:func:`r_max` for the uniform design (all assumed variances equal)."""
    return r_max(UNIFORM, np.full(4, rng.a), rng)
