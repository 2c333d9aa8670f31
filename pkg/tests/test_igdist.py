"""Inverse-Gaussian density, truncated moments and expansion order.

The reference oracle is adaptive Gauss-Kronrod quadrature with the
infinite tail mapped through u = x + s/(1-s); integrands are scaled by
their boundary value so deep-tail integrals are resolved relatively.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from cheylv.bachelier import gaussian_density_p
from cheylv.errors import DomainError
from cheylv.igdist import (
    IGParams,
    a_exact_linear,
    expansion_error,
    expansion_error_alt,
    expansion_order_table,
    ig_pdf,
    ig_trunc_m1,
    ig_trunc_m2,
)

GRID_A = (0.25, 1.0, 4.0)
GRID_B = (0.05, 0.1, 0.2)
GRID_X_OVER_A = (0.5, 1.0, 1.5, 3.0)


def log_ig_pdf(u, a, b):
    return (math.log(a / abs(b)) - math.log(math.sqrt(2 * math.pi))
            - 1.5 * math.log(u) - (u - a) ** 2 / (2 * b * b * u))


def gk_tail_moment(x, a, b, power):
    """Oracle: integral of u^power * pdf over (x, inf), scaled so the
    adaptive rule works in O(1) magnitudes."""
    lf0 = log_ig_pdf(x, a, b) + power * math.log(x)

    def integrand(s):
        if s >= 1.0:
            return 0.0
        u = x + s / (1.0 - s)
        lf = log_ig_pdf(u, a, b) + power * math.log(u) - lf0
        return math.exp(lf) / (1.0 - s) ** 2 if lf > -745.0 else 0.0

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-15, epsrel=1e-12, limit=400)
    return math.exp(lf0) * val if lf0 > -745.0 else 0.0


def implied_linear_density(x, a, b):
    """Terminal density of x_T under the linear smile w = a + b x."""
    w = a + b * x
    p = math.exp(-x * x / (2.0 * w)) / math.sqrt(2.0 * math.pi * w)
    ratio = (1.0 - 0.5 * x * b / w) ** 2 - 0.25 * b * b / w
    return p * ratio


class TestParams:
    def test_validation(self):
        with pytest.raises(DomainError):
            IGParams(a=0.0, b=0.1)
        with pytest.raises(DomainError):
            IGParams(a=1.0, b=0.0)

    def test_shape(self):
        assert IGParams(2.0, 0.5).shape == pytest.approx(16.0)


class TestDensity:
    def test_unit_mass(self):
        p = IGParams(1.0, 0.1)
        mass, _ = quad(lambda u: ig_pdf(u, p), 0, np.inf,
                       epsabs=1e-13, epsrel=1e-13)
        assert mass == pytest.approx(1.0, abs=1e-10)

    def test_mean_is_a(self):
        p = IGParams(0.7, 0.15)
        mean, _ = quad(lambda u: u * ig_pdf(u, p), 0, np.inf,
                       epsabs=1e-13, epsrel=1e-13)
        assert mean == pytest.approx(0.7, abs=1e-10)

    def test_second_moment(self):
        a, b = 1.3, 0.2
        p = IGParams(a, b)
        m2, _ = quad(lambda u: u * u * ig_pdf(u, p), 0, np.inf,
                     epsabs=1e-14, epsrel=1e-13)
        assert m2 == pytest.approx(a * a + a * b * b, abs=1e-9)

    def test_even_in_b(self):
        assert ig_pdf(0.9, IGParams(1.0, 0.1)) == ig_pdf(0.9, IGParams(1.0, -0.1))

    def test_rejects_nonpositive_u(self):
        with pytest.raises(DomainError):
            ig_pdf(0.0, IGParams(1.0, 0.1))


class TestTruncatedMoments:
    def test_limits(self):
        p = IGParams(1.0, 0.1)
        assert ig_trunc_m1(1e-12, p) == pytest.approx(1.0, rel=1e-12)
        assert ig_trunc_m2(1e-12, p) == pytest.approx(1.0 + 0.01, rel=1e-12)
        assert ig_trunc_m1(50.0, p) == pytest.approx(0.0, abs=1e-250)
        assert ig_trunc_m2(50.0, p) == pytest.approx(0.0, abs=1e-250)

    def test_frozen_sample_point(self):
        # frozen from gk_tail_moment(1.05, 1, 0.1, power)
        p = IGParams(1.0, 0.1)
        m1 = ig_trunc_m1(1.05, p)
        m2 = ig_trunc_m2(1.05, p)
        assert m1 == pytest.approx(gk_tail_moment(1.05, 1.0, 0.1, 1), rel=1e-10)
        assert m2 == pytest.approx(gk_tail_moment(1.05, 1.0, 0.1, 2), rel=1e-10)
        assert m1 == pytest.approx(0.33045180398800567, rel=1e-12)
        assert m2 == pytest.approx(0.371020623435343, rel=1e-12)

    def test_closed_forms_match_oracle_on_full_grid(self):
        worst = 0.0
        for a in GRID_A:
            for b in GRID_B:
                p = IGParams(a, b)
                for r in GRID_X_OVER_A:
                    x = r * a
                    for power, closed in ((1, ig_trunc_m1), (2, ig_trunc_m2)):
                        oracle = gk_tail_moment(x, a, b, power)
                        err = abs(closed(x, p) - oracle) / max(abs(oracle), 1e-280)
                        worst = max(worst, err)
        assert worst < 1e-8

    def test_negative_b_same_moments(self):
        pp, pm = IGParams(1.0, 0.1), IGParams(1.0, -0.1)
        assert ig_trunc_m1(0.9, pp) == ig_trunc_m1(0.9, pm)
        assert ig_trunc_m2(0.9, pp) == ig_trunc_m2(0.9, pm)


class TestExactGap:
    def test_flat_limit_vanishes(self):
        # b -> 0: the gap must go to zero like O(b)
        for b in (1e-3, 1e-4):
            val = a_exact_linear(0.3, IGParams(1.0, b))
            assert abs(val) < 0.6 * b

    def test_matches_direct_quadrature(self):
        for a, b, k in [(1.0, 0.1, 0.5), (1.0, 0.2, 0.5),
                        (0.25, 0.05, 0.1), (4.0, 0.2, -1.0)]:
            i1, _ = quad(lambda x: x * (x - k) * implied_linear_density(x, a, b),
                         k, np.inf, epsabs=1e-15, epsrel=1e-13, limit=400)
            i2, _ = quad(lambda x: (0.5 * b * b + a + b * x)
                         * implied_linear_density(x, a, b),
                         k, np.inf, epsabs=1e-15, epsrel=1e-13, limit=400)
            assert a_exact_linear(k, IGParams(a, b)) == pytest.approx(
                i1 - i2, rel=1e-8
            )

    def test_frozen_value(self):
        # frozen from the direct two-integral quadrature oracle
        assert a_exact_linear(0.5, IGParams(1.0, 0.1)) == pytest.approx(
            1.832037335575e-02, rel=1e-10
        )

    def test_negative_b_reflection(self):
        a, b, k = 1.0, -0.1, -0.4
        lo = -a / b  # density support is x < lo for b < 0
        i1, _ = quad(lambda x: x * (x - k) * implied_linear_density(x, a, b),
                     k, lo - 1e-12, epsabs=1e-15, epsrel=1e-12, limit=400)
        i2, _ = quad(lambda x: (0.5 * b * b + a + b * x)
                     * implied_linear_density(x, a, b),
                     k, lo - 1e-12, epsabs=1e-15, epsrel=1e-12, limit=400)
        assert a_exact_linear(k, IGParams(a, b)) == pytest.approx(i1 - i2, rel=1e-8)

    def test_epsilon_adjustment_identity(self):
        # E[x^2] - E[w(x)] = b^2 / 2 under the implied density
        a, b = 1.0, 0.1
        lo = -a / b + 1e-10
        ex2, _ = quad(lambda x: x * x * implied_linear_density(x, a, b),
                      lo, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
        ew, _ = quad(lambda x: (a + b * x) * implied_linear_density(x, a, b),
                     lo, np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)
        assert ex2 - ew == pytest.approx(0.5 * b * b, abs=1e-8)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            a_exact_linear(-11.0, IGParams(1.0, 0.1))


class TestExpansionOrder:
    def test_b_zero_limit(self):
        # O(b^4) analytically; at b = 1e-3 the value sits at the noise
        # floor of the O(1)-term cancellation inside the exact gap
        assert expansion_error(0.5, IGParams(1.0, 1e-3)) < 1e-11

    def test_adjusted_expansion_is_fourth_order(self):
        rows = expansion_order_table(a=1.0, k=0.5, b_values=(0.2, 0.1, 0.05))
        errs = [r[1] for r in rows]
        for big, small in zip(errs, errs[1:]):
            assert 8.0 <= big / small <= 32.0

    def test_alt_variant_is_not_fourth_order(self):
        # err/b^4 must stay bounded for the adjusted expansion but
        # diverge ~1/b for the alt variant (O(b^3) error, k != 1)
        rows = expansion_order_table(a=1.0, k=0.5, b_values=(0.2, 0.1, 0.05))
        norm_adj = [err / b**4 for b, err, _ in rows]
        norm_alt = [err / b**4 for b, _, err in rows]
        for prev, nxt in zip(norm_adj, norm_adj[1:]):
            assert nxt / prev < 1.35
        for prev, nxt in zip(norm_alt, norm_alt[1:]):
            assert nxt / prev > 1.8
        assert norm_alt[-1] > 5.0 * norm_adj[-1]

    def test_alt_variant_agrees_at_k_equal_one(self):
        # at k = 1 the two printed forms coincide
        p = IGParams(1.0, 0.1)
        assert expansion_error(1.0, p) == pytest.approx(
            expansion_error_alt(1.0, p), rel=1e-12
        )

    def test_frozen_error_ladder(self):
        # frozen from the closed forms validated above
        rows = expansion_order_table()
        assert rows[0][1] == pytest.approx(7.492974e-05, rel=1e-5)
        assert rows[1][1] == pytest.approx(5.462435e-06, rel=1e-5)
        assert rows[2][1] == pytest.approx(3.660701e-07, rel=1e-5)
