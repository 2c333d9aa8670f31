"""Variance-surface construction, derivatives and arbitrage diagnostics."""

import math

import numpy as np
import pytest

from cheylv.bachelier import density_ratio
from cheylv.errors import DomainError, InsufficientDataError, InvalidGridError
from cheylv.surface import (
    ArbitrageDiagnostics,
    SurfaceGrid,
    VarianceSurface,
    build_surface,
    check_arbitrage,
    eval_point,
    load_surface_csv,
    load_surface_json,
    synthetic_flat,
    synthetic_linear,
    write_surface_csv,
)


def quadratic_vol_grid(maturities=(0.5, 1.0, 2.0, 5.0), n_k=9, span=0.04):
    """Quoted grid of a curved smile vol(T, k) = v0(T) + 5 k^2 - 0.2 k."""
    strikes, vols = [], []
    for T in maturities:
        ks = np.linspace(-span, span, n_k)
        v0 = 0.009 + 0.0004 * T
        vs = v0 + 5.0 * ks**2 - 0.2 * ks
        strikes.append(tuple(ks))
        vols.append(tuple(vs))
    return SurfaceGrid(tuple(maturities), tuple(strikes), tuple(vols))


class TestGridValidation:
    def test_too_few_strikes(self):
        with pytest.raises(InsufficientDataError):
            SurfaceGrid((1.0,), ((0.0, 0.01),), ((0.01, 0.01),))

    def test_unsorted_maturities(self):
        with pytest.raises(InvalidGridError):
            SurfaceGrid((2.0, 1.0),
                        ((0.0, 0.01, 0.02),) * 2, ((0.01, 0.01, 0.01),) * 2)

    def test_nonpositive_vol(self):
        with pytest.raises(InvalidGridError):
            SurfaceGrid((1.0,), ((0.0, 0.01, 0.02),), ((0.01, -0.01, 0.01),))


class TestBuildSurface:
    def test_flat_slice(self):
        grid = SurfaceGrid((1.0,), ((-0.02, 0.0, 0.02),), ((0.01, 0.01, 0.01),))
        surf = build_surface(grid)
        for k in (-0.02, -0.007, 0.0, 0.015, 0.02):
            pt = surf.point(1.0, k)
            assert pt.w == pytest.approx(1e-4, rel=1e-14)
            assert pt.dw_dk == pytest.approx(0.0, abs=1e-16)
            assert pt.d2w_dk2 == pytest.approx(0.0, abs=1e-12)

    def test_node_reproduction_exact(self):
        grid = quadratic_vol_grid()
        surf = build_surface(grid)
        for T, ks, vs in zip(grid.maturities, grid.strikes, grid.vols):
            for k, v in zip(ks, vs):
                assert surf.w(T, k) == pytest.approx(T * v * v, rel=1e-14)

    def test_strike_derivative_self_consistency(self):
        surf = build_surface(quadratic_vol_grid())
        h1, h2 = 1e-6, 1e-4  # steps calibrated for first/second differences
        for T in (0.75, 1.0, 3.1):
            for k in (-0.0213, -0.011, 0.0042, 0.0171):  # between spline knots
                pt = surf.point(T, k)
                fd1 = (surf.w(T, k + h1) - surf.w(T, k - h1)) / (2 * h1)
                fd2 = (surf.w(T, k + h2) - 2 * surf.w(T, k)
                       + surf.w(T, k - h2)) / (h2 * h2)
                assert pt.dw_dk == pytest.approx(fd1, rel=1e-7)
                assert pt.d2w_dk2 == pytest.approx(fd2, rel=1e-6, abs=1e-9)

    def test_maturity_derivative_self_consistency(self):
        surf = build_surface(quadratic_vol_grid())
        h = 1e-6
        for T in (0.8, 1.4, 3.7):  # interior of the maturity intervals
            for k in (-0.015, 0.0, 0.02):
                pt = surf.point(T, k)
                fd = (surf.w(T + h, k) - surf.w(T - h, k)) / (2 * h)
                assert pt.dw_dT == pytest.approx(fd, rel=1e-7)

    def test_mixed_strike_rows(self):
        # per-maturity strike ranges that do not coincide
        grid = SurfaceGrid(
            (1.0, 2.0),
            ((-0.02, 0.0, 0.02), (-0.03, -0.01, 0.01, 0.03)),
            ((0.010, 0.009, 0.011), (0.012, 0.010, 0.010, 0.013)),
        )
        surf = build_surface(grid)
        assert surf.w(1.0, 0.0) == pytest.approx(1.0 * 0.009**2, rel=1e-14)
        assert surf.w(2.0, -0.01) == pytest.approx(2.0 * 0.010**2, rel=1e-14)

    def test_flat_extrapolation_in_strike(self):
        surf = build_surface(quadratic_vol_grid())
        pt = surf.point(1.0, 0.09)  # beyond the quoted range
        edge = surf.point(1.0, 0.04)
        assert pt.w == pytest.approx(edge.w, rel=1e-14)
        assert pt.dw_dk == 0.0 and pt.d2w_dk2 == 0.0

    def test_linear_extrapolation_in_maturity(self):
        surf = build_surface(quadratic_vol_grid())
        w5 = surf.w(5.0, 0.0)
        pt5 = surf.point(5.0, 0.0)
        pt7 = surf.point(7.0, 0.0)
        assert pt7.w == pytest.approx(w5 + 2.0 * pt5.dw_dT, rel=1e-12)
        assert pt7.dw_dT == pytest.approx(pt5.dw_dT, rel=1e-12)

    def test_unknown_scheme(self):
        with pytest.raises(DomainError):
            build_surface(quadratic_vol_grid(), interpolation="rbf")

    def test_nonpositive_T_rejected(self):
        surf = build_surface(quadratic_vol_grid())
        with pytest.raises(DomainError):
            surf.point(0.0, 0.0)


class TestSyntheticFlat:
    def test_zero_mu(self):
        surf = synthetic_flat(0.01, 0.0)
        for T in (0.5, 1.0, 10.0):
            pt = surf.point(T, 0.013)
            assert pt.w == pytest.approx(1e-4 * T, rel=1e-15)
            assert pt.dw_dT == pytest.approx(1e-4, rel=1e-15)
            assert pt.dw_dk == 0.0 and pt.d2w_dk2 == 0.0

    def test_closed_form_value(self):
        surf = synthetic_flat(0.01, 0.5)
        # 1e-4 * (1 - exp(-10)) = 9.99954600070238e-5
        assert surf.w(10.0, 0.0) == pytest.approx(9.99954600070238e-5, rel=1e-14)

    def test_variance_identity(self):
        for mu in (0.0, 0.03, 0.5, 2.0):
            surf = synthetic_flat(0.0137, mu)
            for T in (0.25, 1.0, 5.0, 30.0):
                pt = surf.point(T, -0.02)
                assert pt.dw_dT + 2.0 * mu * pt.w == pytest.approx(
                    0.0137**2, rel=1e-14
                )

    def test_parameter_validation(self):
        with pytest.raises(DomainError):
            synthetic_flat(0.0, 0.1)
        with pytest.raises(DomainError):
            synthetic_flat(0.01, -0.1)


class TestSyntheticLinear:
    def test_point_at_reference_maturity(self):
        surf = synthetic_linear(4e-4, 2e-3, T=1.0)
        pt = eval_point(surf, 1.0, 0.01)
        assert pt.w == pytest.approx(4e-4 + 2e-5, rel=1e-15)
        assert pt.dw_dk == pytest.approx(2e-3, rel=1e-15)
        assert pt.d2w_dk2 == 0.0
        assert pt.dw_dT == pytest.approx(4.2e-4, rel=1e-15)

    def test_proportional_scaling(self):
        surf = synthetic_linear(1e-3, 5e-3, T=10.0)
        pt = surf.point(2.5, 0.02)
        assert pt.w == pytest.approx((1e-3 + 1e-4) * 0.25, rel=1e-15)
        assert pt.dw_dk == pytest.approx(5e-3 * 0.25, rel=1e-15)

    def test_domain_error_where_nonpositive(self):
        surf = synthetic_linear(4e-4, 2e-3, T=1.0)
        with pytest.raises(DomainError):
            surf.point(1.0, -0.5)


class TestCheckArbitrage:
    def test_flat_passes(self):
        surf = synthetic_flat(0.01, 0.3)
        diag = check_arbitrage(surf, 5.0, 0.01, mu=0.3)
        assert diag.all_ok
        assert diag.density_ratio == pytest.approx(1.0)

    def test_butterfly_violation(self):
        # crafted slice with d2w/dk2 = -4 w / k^2 at the probed strike
        def fn(T, k):
            w = np.full_like(k, 1e-4)
            return w, np.zeros_like(k), -4.0 * w / (k * k), np.full_like(k, 1e-4)

        surf = VarianceSurface(fn, provenance="analytic-synthetic")
        diag = check_arbitrage(surf, 1.0, 0.01)
        assert not diag.butterfly_ok
        assert diag.density_ratio <= 0.0
        assert diag.positive_w_ok

    def test_calendar_violation(self):
        def fn(T, k):
            w = np.full_like(k, 1e-4)
            return w, np.zeros_like(k), np.zeros_like(k), np.full_like(k, -5e-4)

        surf = VarianceSurface(fn, provenance="analytic-synthetic")
        diag = check_arbitrage(surf, 1.0, 0.0, mu=0.0)
        assert not diag.calendar_ok
        assert diag.butterfly_ok
        assert not diag.all_ok

    def test_reports_density_ratio_consistent(self):
        surf = build_surface(quadratic_vol_grid())
        diag = check_arbitrage(surf, 1.0, 0.01, mu=0.05)
        assert diag.density_ratio == pytest.approx(
            density_ratio(surf.point(1.0, 0.01)), rel=1e-15
        )


class TestSurfaceIO:
    def test_csv_round_trip(self, tmp_path):
        grid = quadratic_vol_grid(maturities=(1.0, 2.0), n_k=5)
        path = tmp_path / "surf.csv"
        write_surface_csv(grid, path)
        loaded = load_surface_csv(path)
        assert loaded.maturities == grid.maturities
        np.testing.assert_allclose(loaded.strikes, grid.strikes, rtol=1e-16)
        np.testing.assert_allclose(loaded.vols, grid.vols, rtol=1e-16)

    def test_json_loader(self, tmp_path):
        path = tmp_path / "surf.json"
        path.write_text(
            '{"T": [1.0, 1.0, 1.0], "k": [-0.01, 0.0, 0.01],'
            ' "sigma_imp": [0.011, 0.01, 0.012]}'
        )
        grid = load_surface_json(path)
        assert grid.maturities == (1.0,)
        assert grid.strikes[0] == (-0.01, 0.0, 0.01)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("T,strike,vol\n1.0,0.0,0.01\n")
        with pytest.raises(InvalidGridError):
            load_surface_csv(path)

    def test_bad_row(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("T,k,sigma_imp\n1.0,xyz,0.01\n")
        with pytest.raises(InvalidGridError):
            load_surface_csv(path)

    def test_json_mismatched_arrays(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"T": [1.0], "k": [0.0, 0.01], "sigma_imp": [0.01]}')
        with pytest.raises(InvalidGridError):
            load_surface_json(path)
