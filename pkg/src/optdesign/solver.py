"""Locally D-optimal allocations for the 2x2 main-effects model.

Four routes lead to the maximiser of ``L(p)`` on the probability simplex:

* saturated: when ``2 * max(v) >= sum(v)`` the optimum puts 1/3 on each
  point except the one with the largest variance;
* three equal variances, and two matched pairs of equal variances, have
  closed forms;
* everything else goes through :func:`solve_general`, a multiplicative
  ascent followed by a Newton polish of the stationarity conditions.

:func:`solve` dispatches between them. :func:`grid_oracle` is a brute-force
lattice search used only for verification.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .design import (
    as_design,
    as_variances,
    gradient_L,
    hessian_L,
    objective_L,
)
from .exceptions import NoConvergence, PatternMismatch, ValidationError

__all__ = [
    "Branch",
    "SolverConfig",
    "SolveResult",
    "PATTERN_RTOL",
    "is_saturated",
    "kkt_residual",
    "solve_saturated",
    "solve_corollary1",
    "solve_corollary2",
    "solve_general",
    "solve",
    "solve_many",
    "grid_oracle",
    "allocate",
    "project_to_simplex",
]

# Relative tolerance for "these variances are equal" in the closed-form routes.
PATTERN_RTOL = 1e-12
KKT_TARGET = 1e-8
# Ratio 2*max(v)/sum(v) above which the ascent starts next to the saturated point.
NEAR_BOUNDARY = 1.0 - 1e-6
NEAR_BOUNDARY_EPS = 1e-3
POLISH_AT = 1e-4
POLISH_EVERY = 25


class Branch(str, enum.Enum):
    SATURATED = "saturated"
    COROLLARY1 = "corollary1"
    COROLLARY2 = "corollary2"
    GENERAL = "general"


@dataclass(frozen=True)
class SolverConfig:
    convergence_tol: float = 1e-12
    max_iter: int = 10000
    saturation_tol: float = 1e-10
    grid_resolution: int = 200

    def __post_init__(self):
        for name in ("convergence_tol", "max_iter", "saturation_tol", "grid_resolution"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"SolverConfig.{name} must be positive")


@dataclass(frozen=True, eq=False)
class SolveResult:
    p: np.ndarray
    L_max: float
    branch: Branch
    v: np.ndarray
    iterations: int = 0
    kkt_residual: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def det(self) -> float:
        """``det(X'WX)`` at the optimum, i.e. ``16 * prod(w) * L_max``."""
        return 16.0 * self.L_max / float(np.prod(self.v))

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "L": self.L_max,
            "det": self.det,
            "branch": self.branch.value,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "v": self.v.tolist(),
        }


def is_saturated(v, tol=1e-10):
    """Saturation test ``2 max(v) >= (1 - tol) sum(v)``.

    Returns ``(flag, index)`` where ``index`` is the 0-based position of the
    largest variance (lowest index on ties).
    """
    v = as_variances(v)
    idx = int(np.argmax(v))
    return bool(2.0 * v[idx] >= (1.0 - tol) * v.sum()), idx


def kkt_residual(v, p) -> float:
    """Scaled violation of the first-order conditions on the simplex.

    On the support all partial derivatives of ``L`` must coincide; off the
    support they must not exceed that common value.
    """
    g = gradient_L(v, p)
    scale = float(np.max(g))
    if scale <= 0.0:
        return math.inf
    on = np.asarray(p) > 0.0
    g_on = g[on]
    spread = float(g_on.max() - g_on.min())
    excess = float(max(0.0, g[~on].max() - g_on.max())) if (~on).any() else 0.0
    return max(spread, excess) / scale


def _result(v, p, branch, iterations=0, history=None):
    p = np.asarray(p, dtype=float)
    return SolveResult(
        p=p,
        L_max=objective_L(v, p),
        branch=branch,
        v=np.array(v, dtype=float),
        iterations=iterations,
        kkt_residual=kkt_residual(v, p),
        history=history or [],
    )


def solve_saturated(v, tol=1e-10) -> SolveResult:
    v = as_variances(v)
    saturated, idx = is_saturated(v, tol)
    if not saturated:
        raise ValidationError(f"variances {v.tolist()} do not satisfy the saturation condition")
    p = np.full(4, 1.0 / 3.0)
    p[idx] = 0.0
    return _result(v, p, Branch.SATURATED)


def _close(a, b, rtol=PATTERN_RTOL):
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def _three_equal(v):
    """Index of the odd component when the other three coincide, else None."""
    for i in range(4):
        rest = [v[j] for j in range(4) if j != i]
        if _close(min(rest), max(rest)):
            return i
    return None


def solve_corollary1(v) -> SolveResult:
    """Closed form when three variances share a common value ``vbar``.

    With ``u`` the odd variance and ``u <= 3 vbar`` the optimum puts
    ``(3 vbar - u) / (9 vbar - u)`` on the odd point and
    ``2 vbar / (9 vbar - u)`` on each of the others. ``u = 3 vbar`` is the
    saturated boundary.
    """
    v = as_variances(v)
    i = _three_equal(v)
    if i is None:
        raise PatternMismatch(f"no three equal variances in {v.tolist()}")
    vbar = float(np.mean(np.delete(v, i)))
    u = float(v[i])
    if u > 3.0 * vbar and not _close(u, 3.0 * vbar):
        raise PatternMismatch(
            f"odd variance {u!r} exceeds 3x the common value {vbar!r}; the design is saturated"
        )
    denom = 9.0 * vbar - u
    p = np.full(4, 2.0 * vbar / denom)
    p[i] = max(0.0, (3.0 * vbar - u) / denom)
    return _result(v, p, Branch.COROLLARY1)


_PAIRINGS = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))


def solve_corollary2(v) -> SolveResult:
    """Closed form for two matched pairs ``(u, u, vbar, vbar)``, ``u > vbar``.

    With ``d = sqrt(u^2 - u vbar + vbar^2)`` the optimal proportions are
    ``(2u - vbar - d) / (6 (u - vbar))`` on the high-variance pair and
    ``(u - 2 vbar + d) / (6 (u - vbar))`` on the other. Both are evaluated
    in the rationalised forms ``u / (2 (2u - vbar + d))`` and
    ``vbar / (2 (d - u + 2 vbar))``, which are free of the 0/0 as
    ``u -> vbar``.
    """
    v = as_variances(v)
    for hi, lo in _PAIRINGS:
        if not (_close(v[hi[0]], v[hi[1]]) and _close(v[lo[0]], v[lo[1]])):
            continue
        a = 0.5 * (v[hi[0]] + v[hi[1]])
        b = 0.5 * (v[lo[0]] + v[lo[1]])
        if _close(a, b):
            raise PatternMismatch("all four variances are equal; the uniform design is optimal")
        if a < b:
            hi, lo, a, b = lo, hi, b, a
        d = math.sqrt(a * a - a * b + b * b)
        p = np.empty(4)
        p[list(hi)] = a / (2.0 * (2.0 * a - b + d))
        p[list(lo)] = b / (2.0 * (d - a + 2.0 * b))
        return _result(v, p, Branch.COROLLARY2)
    raise PatternMismatch(f"variances {v.tolist()} do not form two matched pairs")


def project_to_simplex(y) -> np.ndarray:
    """Euclidean projection onto ``{p : p >= 0, sum(p) = 1}``."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1.0), 0.0)


def _projected_gradient_step(v, p, L, g):
    step = 1.0 / float(np.max(np.abs(g)))
    while step > 1e-16:
        q = project_to_simplex(p + step * (g - g.mean()))
        Lq = objective_L(v, q)
        if Lq > L:
            return q, Lq
        step *= 0.5
    return p, L


def _newton_polish(v, p, max_steps=60):
    """Damped Newton on ``grad L(p) = lam * 1``, ``sum(p) = 1``, keeping ``p > 0``."""
    ones = np.ones(4)
    lam = 3.0 * objective_L(v, p)

    def residual(p, lam):
        return np.concatenate([gradient_L(v, p) - lam, [p.sum() - 1.0]])

    F = residual(p, lam)
    norm = float(np.max(np.abs(F)))
    steps = 0
    for _ in range(max_steps):
        J = np.zeros((5, 5))
        J[:4, :4] = hessian_L(v, p)
        J[:4, 4] = -ones
        J[4, :4] = ones
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-12:
            p_try = p + t * delta[:4]
            if np.all(p_try > 0.0):
                F_try = residual(p_try, lam + t * delta[4])
                n_try = float(np.max(np.abs(F_try)))
                if n_try < norm:
                    break
            t *= 0.5
        else:
            break
        p, lam, F, norm = p_try, lam + t * delta[4], F_try, n_try
        steps += 1
        if norm <= 1e-16 * lam:
            break
    return p, steps


def solve_general(v, cfg: SolverConfig | None = None, start=None) -> SolveResult:
    """Numerical maximiser of ``L`` for non-saturated variances.

    Runs the multiplicative update ``p_i <- p_i g_i / sum_j p_j g_j`` (``g``
    the gradient of ``L``), which stays on the simplex and increases a
    D-type criterion monotonically. A projected-gradient step with
    backtracking takes over if an update ever fails to increase ``L``.
    Once the iterate is close, a damped Newton solve of the stationarity
    system drives the KKT residual to rounding level.

    Raises :class:`NoConvergence` if the residual is still above ``1e-8``
    after ``cfg.max_iter`` iterations.
    """
    cfg = cfg or SolverConfig()
    v = as_variances(v)
    saturated, imax = is_saturated(v, cfg.saturation_tol)
    if saturated:
        raise ValidationError(
            f"variances {v.tolist()} are saturated; use solve_saturated (optimum on the boundary)"
        )
    if start is not None:
        p = as_design(start, tol=1e-9).copy()
        if np.any(p <= 0.0):
            raise ValidationError("starting design must be strictly positive")
        p /= p.sum()
    elif 2.0 * v[imax] / v.sum() > NEAR_BOUNDARY:
        p = np.full(4, (1.0 - NEAR_BOUNDARY_EPS) / 3.0)
        p[imax] = NEAR_BOUNDARY_EPS
    else:
        p = np.full(4, 0.25)

    L = objective_L(v, p)
    history = []
    iterations = 0
    residual = kkt_residual(v, p)
    since_polish = 0
    while iterations < cfg.max_iter:
        g = gradient_L(v, p)
        p_new = p * g / float(p @ g)
        L_new = objective_L(v, p_new)
        if L_new < L:
            p_new, L_new = _projected_gradient_step(v, p, L, g)
        iterations += 1
        since_polish += 1
        change = (L_new - L) / L_new
        p, L = p_new, L_new
        residual = kkt_residual(v, p)
        history.append(residual)
        # The ascent is linear and crawls near the saturated boundary, so
        # hand over to Newton early and retry periodically.
        if residual <= POLISH_AT or change <= cfg.convergence_tol or since_polish >= POLISH_EVERY:
            since_polish = 0
            p_pol, n_newton = _newton_polish(v, p)
            iterations += n_newton
            res_pol = kkt_residual(v, p_pol)
            if objective_L(v, p_pol) >= L * (1.0 - 1e-14) and res_pol < residual:
                p = p_pol / p_pol.sum()
                L = objective_L(v, p)
                residual = kkt_residual(v, p)
            history.append(residual)
            if residual <= KKT_TARGET:
                break
    if residual > KKT_TARGET:
        raise NoConvergence(
            f"no convergence after {iterations} iterations (KKT residual {residual:.3e})",
            residual=residual,
            trace=history,
        )
    return _result(v, p, Branch.GENERAL, iterations, history)


def solve(v, cfg: SolverConfig | None = None) -> SolveResult:
    """Optimal design for variance vector ``v``, choosing the cheapest exact route."""
    cfg = cfg or SolverConfig()
    v = as_variances(v)
    if is_saturated(v, cfg.saturation_tol)[0]:
        return solve_saturated(v, cfg.saturation_tol)
    if _three_equal(v) is not None:
        return solve_corollary1(v)
    try:
        return solve_corollary2(v)
    except PatternMismatch:
        pass
    return solve_general(v, cfg)


def grid_oracle(v, resolution=200) -> np.ndarray:
    """Exhaustive argmax of ``L`` over ``{(i, j, k, N-i-j-k) / N}``."""
    v = as_variances(v)
    N = int(resolution)
    if N < 4:
        raise ValidationError("grid resolution must be at least 4")
    v1, v2, v3, v4 = v
    best, best_p = -1.0, None
    for i in range(N + 1):
        m = N - i
        rows, cols = np.tril_indices(m + 1)
        j = (rows - cols).astype(float)
        k = cols.astype(float)
        l = m - j - k
        p1 = i / N
        p2, p3, p4 = j / N, k / N, l / N
        vals = v4 * p1 * p2 * p3 + v3 * p1 * p2 * p4 + v2 * p1 * p3 * p4 + v1 * p2 * p3 * p4
        a = int(np.argmax(vals))
        if vals[a] > best:
            best = float(vals[a])
            best_p = np.array([p1, p2[a], p3[a], p4[a]])
    return best_p


def allocate(p, n) -> list:
    """Round ``n * p`` to integers summing to ``n`` by largest remainder.

    Remainders that agree to 1e-9 count as tied; ties go to the lowest index.
    """
    p = as_design(p, tol=1e-9)
    n = int(n)
    if n < 1:
        raise ValidationError("number of units must be >= 1")
    exact = n * p
    base = np.floor(exact + 1e-9).astype(int)
    base = np.minimum(base, np.ceil(exact).astype(int))
    rem = np.round(exact - base, 9)
    short = n - int(base.sum())
    order = sorted(range(4), key=lambda i: (-rem[i], i))
    for i in order[:short]:
        base[i] += 1
    for i in reversed(order[short:] if short < 0 else []):
        if short == 0:
            break
        if base[i] > 0:
            base[i] -= 1
            short += 1
    return [int(x) for x in base]


def _grad_rows(V, P):
    v1, v2, v3, v4 = V.T
    p1, p2, p3, p4 = P.T
    return np.column_stack([
        v4 * p2 * p3 + v3 * p2 * p4 + v2 * p3 * p4,
        v4 * p1 * p3 + v3 * p1 * p4 + v1 * p3 * p4,
        v4 * p1 * p2 + v2 * p1 * p4 + v1 * p2 * p4,
        v3 * p1 * p2 + v2 * p1 * p3 + v1 * p2 * p3,
    ])


def _hess_rows(V, P):
    H = np.zeros((V.shape[0], 4, 4))
    for k in range(4):
        for l in range(k + 1, 4):
            i, m = (j for j in range(4) if j != k and j != l)
            H[:, k, l] = H[:, l, k] = V[:, i] * P[:, m] + V[:, m] * P[:, i]
    return H


def _spread_rows(G):
    return (G.max(axis=1) - G.min(axis=1)) / G.max(axis=1)


def solve_many(V, cfg: SolverConfig | None = None) -> np.ndarray:
    """Optimal designs for each row of an ``(n, 4)`` array of variances.

    Vectorised version of :func:`solve` for bulk work: saturated rows get the
    three-point design, the rest run the multiplicative ascent and Newton
    polish in lockstep. Rows that do not reach the KKT target are handed
    to :func:`solve_general` one at a time.
    """
    cfg = cfg or SolverConfig()
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] != 4:
        raise ValidationError(f"expected an (n, 4) array of variances, got shape {V.shape}")
    if not np.all(np.isfinite(V)) or np.any(V <= 0.0):
        raise ValidationError("variances must be finite and > 0")
    n = V.shape[0]
    P = np.empty((n, 4))
    imax = np.argmax(V, axis=1)
    vmax = V[np.arange(n), imax]
    total = V.sum(axis=1)
    sat = 2.0 * vmax >= (1.0 - cfg.saturation_tol) * total
    P[sat] = 1.0 / 3.0
    P[np.flatnonzero(sat), imax[sat]] = 0.0

    rows = np.flatnonzero(~sat)
    if rows.size == 0:
        return P
    Vr = V[rows]
    Pr = np.full((rows.size, 4), 0.25)
    near = 2.0 * vmax[rows] / total[rows] > NEAR_BOUNDARY
    if near.any():
        Pr[near] = (1.0 - NEAR_BOUNDARY_EPS) / 3.0
        Pr[np.flatnonzero(near), imax[rows][near]] = NEAR_BOUNDARY_EPS

    for _ in range(POLISH_EVERY):
        G = _grad_rows(Vr, Pr)
        Pr = Pr * G / np.einsum("ij,ij->i", Pr, G)[:, None]

    lam = np.einsum("ij,ij->i", Pr, _grad_rows(Vr, Pr))
    ones = np.ones(4)

    def residual(P_, lam_):
        F = np.empty((P_.shape[0], 5))
        F[:, :4] = _grad_rows(Vr, P_) - lam_[:, None]
        F[:, 4] = P_.sum(axis=1) - 1.0
        return F

    F = residual(Pr, lam)
    norm = np.abs(F).max(axis=1)
    active = norm > 1e-15 * lam
    for _ in range(60):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        J = np.zeros((a.size, 5, 5))
        J[:, :4, :4] = _hess_rows(Vr[a], Pr[a])
        J[:, :4, 4] = -ones
        J[:, 4, :4] = ones
        delta = np.linalg.solve(J, -F[a][:, :, None])[:, :, 0]
        t = np.ones(a.size)
        pending = np.ones(a.size, dtype=bool)
        for _ in range(40):
            k = np.flatnonzero(pending)
            if k.size == 0:
                break
            rows_k = a[k]
            P_try = Pr[rows_k] + t[k, None] * delta[k, :4]
            l_try = lam[rows_k] + t[k] * delta[k, 4]
            ok = np.all(P_try > 0.0, axis=1)
            F_try = np.empty((k.size, 5))
            F_try[:, :4] = _grad_rows(Vr[rows_k], np.where(ok[:, None], P_try, Pr[rows_k])) - l_try[:, None]
            F_try[:, 4] = P_try.sum(axis=1) - 1.0
            n_try = np.abs(F_try).max(axis=1)
            good = ok & (n_try < norm[rows_k])
            acc = rows_k[good]
            Pr[acc], lam[acc], F[acc], norm[acc] = P_try[good], l_try[good], F_try[good], n_try[good]
            pending[k[good]] = False
            t[k[~good]] *= 0.5
        # rows whose line search failed cannot improve further
        active[a[pending]] = False
        active &= norm > 1e-15 * lam

    Pr = Pr / Pr.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(_spread_rows(_grad_rows(Vr, Pr)) > KKT_TARGET)
    for j in bad:
        Pr[j] = solve_general(Vr[j], cfg).p
    P[rows] = Pr
    return P
