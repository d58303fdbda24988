import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_variances
from optdesign import robustness as rb
from optdesign.design import UNIFORM, objective_L, relative_loss
from optdesign.exceptions import InconsistentInput, ValidationError
from optdesign.links import Link, weights_from_beta
from optdesign.robustness import (
    Case,
    Pattern,
    Q_ratio,
    RangeSpec,
    closed_Q,
    q_products,
    r_max,
    r_max_unbounded,
    r_max_uniform,
    sextic,
    standardized_distance,
    theta_star,
    uniform_loss,
)
from optdesign.solver import solve, solve_corollary2

THETA_STAR = 1.3244815557100459168  # 20-digit root of the sextic (mpmath)
UNIFORM_Q = q_products(UNIFORM)
thetas = st.floats(1.0, 1e4)


def loss_at(v_t, p_c):
    p_t = solve(v_t).p
    return relative_loss(1.0 / np.asarray(v_t), p_t, p_c)


def random_case(rng, theta):
    """Non-saturated assumed variances inside [1, theta] and their design."""
    while True:
        v = rng.uniform(1.0, theta, 4)
        if 2 * v.max() < v.sum():
            return v, solve(v).p


class TestQProducts:
    def test_examples(self):
        assert np.allclose(q_products(UNIFORM).q, 1 / 64)
        assert np.allclose(q_products([1 / 3, 1 / 3, 1 / 3, 0]).q, [0, 0, 0, 1 / 27])
        assert np.allclose(q_products([0.1, 0.4, 0.2, 0.3]).q, [0.006, 0.008, 0.012, 0.024])
        assert q_products([0.1, 0.4, 0.2, 0.3]).order.tolist() == [1, 3, 2, 0]


class TestQRatio:
    def test_same_design(self):
        p = solve([1, 2, 3, 4]).p
        assert Q_ratio([1, 2, 3, 4], p, p) == 1.0

    def test_against_relative_loss(self):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        p_t = solve(v).p
        R = relative_loss(1 / v, p_t, UNIFORM)
        assert 1 - Q_ratio(v, UNIFORM, p_t) ** (1 / 3) == pytest.approx(R, rel=1e-12)

    @given(lam=st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariant(self, lam):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        p_t = solve(v).p
        assert Q_ratio(lam * v, UNIFORM, p_t) == pytest.approx(Q_ratio(v, UNIFORM, p_t), rel=1e-12)


class TestClosedQ:
    @pytest.mark.parametrize("pattern", list(Pattern))
    def test_identity_at_one(self, pattern):
        assert closed_Q(1.0, pattern, UNIFORM_Q) == pytest.approx(1.0, rel=1e-14)

    def test_baaa_continuity_at_three(self):
        s = 3 * (1 / 64) + 3 * (1 / 64)
        assert 27 / 3 * s == pytest.approx((9 - 3) ** 2 / 4 * s, rel=1e-15)
        below = closed_Q(3 - 1e-12, Pattern.BAAA, UNIFORM_Q)
        assert closed_Q(3.0, Pattern.BAAA, UNIFORM_Q) == pytest.approx(below, abs=1e-11)

    @pytest.mark.parametrize("pattern, vt", [
        (Pattern.BAAA, lambda t: [t, 1, 1, 1]),
        (Pattern.BBAA, lambda t: [t, t, 1, 1]),
        (Pattern.BBBA, lambda t: [t, t, t, 1]),
    ])
    @pytest.mark.parametrize("theta", [1.2, 2.0, 2.999, 3.0, 5.0, 40.0])
    def test_matches_direct_ratio(self, pattern, vt, theta):
        # Sorted decreasing p_c so the high-variance entries meet the largest p.
        for p_c in (UNIFORM, np.array([0.4, 0.3, 0.2, 0.1]), np.array([0.3, 0.3, 0.25, 0.15])):
            v_t = np.array(vt(theta), dtype=float)
            direct = Q_ratio(v_t, p_c, solve(v_t).p)
            assert closed_Q(theta, pattern, q_products(p_c)) == pytest.approx(direct, rel=1e-9)

    def test_bbaa_against_corollary2(self):
        v_t = np.array([2.0, 2.0, 1.0, 1.0])
        direct = Q_ratio(v_t, UNIFORM, solve_corollary2(v_t).p)
        assert closed_Q(2.0, Pattern.BBAA, UNIFORM_Q) == pytest.approx(direct, rel=1e-9)

    def test_crossover(self):
        for t in np.linspace(1.001, THETA_STAR - 1e-4, 50):
            assert closed_Q(t, "baaa", UNIFORM_Q) > closed_Q(t, "bbaa", UNIFORM_Q)
        for t in np.linspace(THETA_STAR + 1e-4, 50, 200):
            assert closed_Q(t, "baaa", UNIFORM_Q) < closed_Q(t, "bbaa", UNIFORM_Q)
        assert closed_Q(THETA_STAR, "baaa", UNIFORM_Q) == pytest.approx(
            closed_Q(THETA_STAR, "bbaa", UNIFORM_Q), rel=1e-12)

    def test_bbba_dominates_bbaa(self):
        for t in np.linspace(1.001, 200, 400):
            assert closed_Q(t, "bbba", UNIFORM_Q) > closed_Q(t, "bbaa", UNIFORM_Q)

    def test_q_sum_bound(self, rng):
        for _ in range(300):
            p = np.sort(rng.dirichlet(np.ones(4)))[::-1]
            q = q_products(p).q
            t = rng.uniform(1, 20)
            assert t * q[0] + q[1] + q[2] + q[3] <= (t + 3) / 27 + 1e-15

    def test_rejects_small_theta(self):
        with pytest.raises(ValidationError):
            closed_Q(0.5, Pattern.BAAA, UNIFORM_Q)


class TestRmax:
    def test_saturated_case(self):
        v = np.array([3.0, 1.0, 1.0, 1.0])
        rep = r_max(solve(v).p, v, RangeSpec(1.0, 3.0))
        assert rep.case is Case.SATURATED
        assert rep.value == pytest.approx(1 - 13 ** (2 / 3) / 9, rel=1e-14)
        assert rep.value == pytest.approx(0.3857, abs=1e-4)

    def test_saturated_needs_wide_range(self):
        v = np.array([3.0, 1.0, 1.0, 1.0])
        p = solve(v).p
        with pytest.raises(InconsistentInput):
            r_max(p, v, RangeSpec(1.0, 2.9))  # v outside range
        with pytest.raises(InconsistentInput):
            r_max(p, np.array([2.0, 0.5, 0.5, 1.0]), RangeSpec(0.5, 1.4))

    def test_outside_range(self):
        with pytest.raises(InconsistentInput):
            r_max(UNIFORM, np.full(4, 5.0), RangeSpec(1.0, 3.0))

    @pytest.mark.parametrize("theta", [1.0, 1.1, THETA_STAR, 2.0, 3.0, 7.5, 1e3])
    def test_uniform_design(self, theta):
        rep = r_max(UNIFORM, np.ones(4), RangeSpec(1.0, theta))
        assert rep.value == pytest.approx(r_max_uniform(theta), abs=1e-12)

    def test_theta_one(self, rng):
        for a in rng.uniform(0.1, 10, 5):
            assert r_max(UNIFORM, np.full(4, a), RangeSpec(a, a)).value == pytest.approx(0.0, abs=1e-15)

    def test_reported_pattern_attains_value(self, rng):
        for _ in range(100):
            theta = math.exp(rng.uniform(0.05, 3))
            v, p = random_case(rng, theta)
            rep = r_max(p, v, RangeSpec(1.0, theta))
            assert rep.case is Case.INTERIOR
            assert loss_at(rep.attaining_vt, p) == pytest.approx(rep.value, abs=1e-9)

    def test_corners_never_exceed(self, rng):
        # Any true variance vector at the corners of the box is covered.
        corners = np.array(np.meshgrid(*[[0, 1]] * 4)).reshape(4, -1).T
        for _ in range(30):
            theta = math.exp(rng.uniform(0.05, 3))
            v, p = random_case(rng, theta)
            value = r_max(p, v, RangeSpec(1.0, theta)).value
            for c in corners:
                assert loss_at(1 + (theta - 1) * c, p) <= value + 1e-12

    def test_random_interior_never_exceeds(self, rng):
        for _ in range(30):
            theta = math.exp(rng.uniform(0.05, 3))
            v, p = random_case(rng, theta)
            value = r_max(p, v, RangeSpec(1.0, theta)).value
            for v_t in rng.uniform(1.0, theta, (30, 4)):
                assert loss_at(v_t, p) <= value + 1e-12

    def test_uniform_is_most_robust(self, rng):
        theta = 5.0
        best = r_max(UNIFORM, np.ones(4), RangeSpec(1.0, theta)).value
        for _ in range(100):
            v, p = random_case(rng, theta)
            if np.allclose(p, 0.25):
                continue
            assert best < r_max(p, v, RangeSpec(1.0, theta)).value

    def test_scale_invariant(self, rng):
        v, p = random_case(rng, 4.0)
        base = r_max(p, v, RangeSpec(1.0, 4.0)).value
        assert r_max(p, 7 * v, RangeSpec(7.0, 28.0)).value == pytest.approx(base, rel=1e-12)

    def test_report_dict(self):
        d = r_max(UNIFORM, np.ones(4), RangeSpec(1.0, 3.0)).to_dict()
        assert set(d) >= {"r_max", "case", "attaining_vt", "theta", "theta_star"}
        assert d["case"] == "interior_case_ii"


class TestUnbounded:
    def test_saturated(self):
        v = np.array([10.0, 1, 2, 3])
        assert r_max_unbounded(solve(v).p, v) == 1.0

    def test_uniform(self):
        assert r_max_unbounded(UNIFORM, np.ones(4)) == pytest.approx(0.25, rel=1e-14)

    def test_direct(self):
        v = np.array([1.0, 1.5, 2.0, 2.5])
        p = np.array([0.4, 0.3, 0.2, 0.1])
        assert r_max_unbounded(p, v) == pytest.approx(1 - 3 * 0.006 ** (1 / 3), rel=1e-13)
        assert r_max_unbounded(p, v) == pytest.approx(0.4548, abs=1e-4)

    def test_limit_of_bounded(self, rng):
        v, p = random_case(rng, 3.0)
        far = r_max(p, v, RangeSpec(1.0, 1e9)).value
        assert far == pytest.approx(r_max_unbounded(p, v), abs=1e-6)

    def test_rangespec(self):
        rep = r_max(UNIFORM, np.ones(4), RangeSpec(1.0, math.inf, allow_unbounded=True))
        assert rep.case is Case.UNBOUNDED and rep.value == pytest.approx(0.25)
        with pytest.raises(ValidationError):
            RangeSpec(1.0, math.inf)
        with pytest.raises(ValidationError):
            RangeSpec(2.0, 1.0)
        assert RangeSpec.from_weights(0.05, 0.25).theta == pytest.approx(5.0)


class TestUniformLoss:
    def test_equal_weights(self):
        for c in (0.01, 0.25, 3.0):
            assert uniform_loss([c] * 4) == pytest.approx(0.0, abs=1e-15)

    def test_plum(self):
        assert uniform_loss([0.244, 0.128, 0.221, 0.221]) == pytest.approx(0.009, abs=1e-3)

    def test_illustration(self):
        w = weights_from_beta(Link.LOGIT, (2, 2, 0.05))
        assert uniform_loss(w) == pytest.approx(0.049521146869124818, rel=1e-10)
        assert uniform_loss(w) == pytest.approx(0.05, abs=5e-3)

    def test_equals_relative_loss(self, rng):
        # The printed quarter-times-cube-root form and the det-ratio form agree.
        for _ in range(50):
            w = rng.uniform(0.05, 0.25, 4)
            v = 1 / w
            p_t = solve(v).p
            assert uniform_loss(w) == pytest.approx(relative_loss(w, p_t, UNIFORM), abs=1e-14)
            assert objective_L(v, UNIFORM) == pytest.approx(v.sum() / 64, rel=1e-14)


class TestTheorem4:
    def test_theta_star(self):
        t = theta_star()
        assert t == pytest.approx(THETA_STAR, abs=1e-12)
        assert 1.32 <= t <= 1.33
        assert abs(1e-3 * sextic(t)) < 1e-6
        assert sextic(1.32) > 0 > sextic(1.33)

    def test_theta_star_is_crossing(self):
        t = theta_star()
        assert rb._uniform_mid(t) == pytest.approx(rb._uniform_narrow(t), abs=1e-12)

    def test_threadsafe_cache(self, monkeypatch):
        monkeypatch.setattr(rb, "_theta_star_value", None)
        calls = []
        real = rb._bisect

        def counting(*a, **k):
            calls.append(1)
            return real(*a, **k)

        monkeypatch.setattr(rb, "_bisect", counting)
        out = []
        threads = [threading.Thread(target=lambda: out.append(theta_star())) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert len(calls) == 1 and len(set(out)) == 1

    def test_examples(self):
        assert r_max_uniform(1.0) == 0.0
        assert r_max_uniform(3.0) == pytest.approx(1 - 0.75 * 2 ** (1 / 3), rel=1e-14)
        assert r_max_uniform(3.0) == pytest.approx(0.0551, abs=1e-4)
        assert r_max_uniform(1e6) < 0.25
        assert r_max_uniform(math.inf) == 0.25

    def test_branch_joins(self):
        t = theta_star()
        assert abs(rb._uniform_wide(3.0) - rb._uniform_mid(3.0)) < 1e-9
        assert abs(rb._uniform_mid(t) - rb._uniform_narrow(t)) < 1e-9
        assert rb._uniform_narrow(1.0) == pytest.approx(0.0, abs=1e-15)

    def test_monotone_and_bounded(self):
        grid = np.arange(1.0, 100.0 + 1e-9, 1e-3)
        vals = np.array([r_max_uniform(t) for t in grid])
        assert np.all(np.diff(vals) >= -1e-15)
        assert np.all(vals < 0.25)

    @given(theta=thetas)
    @settings(max_examples=200, deadline=None)
    def test_matches_general_r_max(self, theta):
        rep = r_max(UNIFORM, np.ones(4), RangeSpec(1.0, theta))
        assert rep.value == pytest.approx(r_max_uniform(theta), abs=1e-12)

    def test_rejects_small_theta(self):
        with pytest.raises(ValidationError):
            r_max_uniform(0.9)


class TestDistance:
    @pytest.mark.parametrize("v, d", [((1, 1, 1, 1), -2.0), ((6, 1, 2, 3), 0.0), ((10, 1, 2, 3), 0.4)])
    def test_examples(self, v, d):
        assert standardized_distance(v) == pytest.approx(d, abs=1e-15)

    def test_sign_matches_saturation(self, rng):
        for _ in range(200):
            v = random_variances(rng)
            assert (standardized_distance(v) >= 0) == (2 * v.max() >= v.sum())
            assert standardized_distance(v) > -2
