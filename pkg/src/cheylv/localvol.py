"""Explicit local-volatility formulas for the Cheyette model.

The central map takes a total implied-variance surface w(T, k) and a
mean reversion mu to the local variance

                dw/dT + mu (2w - k dw/dk) + w dw/dk
    sigma^2  =  -----------------------------------  +  (dw/dk)^3
                (1 - k dw/dk / (2w))^2
                    + (d2w/dk2 - (dw/dk)^2 / (2w)) / 2

(the "third-order" form; dropping the cubic term gives the first-order
form).  On a strike-flat surface the formula collapses to the exact
identity sigma^2 = dw/dT + 2 mu w.  The implicit-formula residual
quantifies, via Monte Carlo estimates of the two expectation terms it
replaces, how well the approximation satisfies the exact Dupire-type
equation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bachelier import SmilePoint, density_ratio, gaussian_density_p
from .errors import DegenerateDenominatorError, DomainError
from .surface import VarianceSurface

#: Dimensionless floor on the butterfly density ratio; points below it
#: are rejected rather than floored (a near-zero butterfly signals bad
#: inputs, not a usable vol).
EPS_DENOMINATOR = 1e-4

#: Fraction of the implied vol used for the negative-variance floor:
#: sigma^2 is floored at (FLOOR_VOL_FRACTION * sqrt(w/T))^2.
FLOOR_VOL_FRACTION = 0.05


def _zero_curve(T: float) -> float:
    return 0.0


@dataclass(frozen=True)
class CheyetteParams1F:
    """One-factor Cheyette parameters.

    ``forward_curve`` is the initial instantaneous forward curve
    f0(T); everything internal works in the normalized setting
    f0 = 0 and shifts only at the reporting boundary.
    """

    mu: float
    forward_curve: Callable[[float], float] = _zero_curve

    def __post_init__(self):
        if not (self.mu >= 0.0) or not np.isfinite(self.mu):
            raise DomainError(f"mean reversion must be >= 0, got {self.mu}")


def _variance_terms(k, w, dw, d2w, dwT, mu_val):
    lin = 1.0 - 0.5 * k * dw / w
    den = lin * lin + 0.5 * (d2w - 0.5 * dw * dw / w)
    num = dwT + mu_val * (2.0 * w - k * dw) + w * dw
    return num, den


def _local_var_point(pt: SmilePoint, mu_val: float, third_order: bool) -> float:
    num, den = _variance_terms(pt.k, pt.w, pt.dw_dk, pt.d2w_dk2, pt.dw_dT, mu_val)
    if den <= EPS_DENOMINATOR:
        raise DegenerateDenominatorError(
            f"density ratio {den:.3e} <= {EPS_DENOMINATOR} at k={pt.k}"
        )
    var = num / den
    if third_order:
        var += pt.dw_dk ** 3
    return var


def _apply_floor(var: float, pt: SmilePoint, T: float) -> float:
    floor = (FLOOR_VOL_FRACTION ** 2) * pt.w / T
    if var <= 0.0:
        warnings.warn(
            f"local variance {var:.3e} floored at (T={T}, k={pt.k})",
            RuntimeWarning, stacklevel=3,
        )
        return floor
    return var


def local_var_main(surface: VarianceSurface, mu: float, T: float, k: float) -> float:
    """Third-order local variance sigma^2(T, k) from the smile."""
    pt = surface.point(T, k)
    return _apply_floor(_local_var_point(pt, mu, third_order=True), pt, T)


def local_var_first_order(surface: VarianceSurface, mu: float, T: float, k: float) -> float:
    """First-order local variance: the main formula without (dw/dk)^3."""
    pt = surface.point(T, k)
    return _apply_floor(_local_var_point(pt, mu, third_order=False), pt, T)


def local_var_multifactor(surface: VarianceSurface, mu_eff: Callable[[float], float],
                          T: float, k: float) -> float:
    """Multi-factor form: mu replaced by the effective reversion mu_eff(T)."""
    pt = surface.point(T, k)
    return _apply_floor(_local_var_point(pt, float(mu_eff(T)), third_order=True), pt, T)


def a_first_order(surface: VarianceSurface, T: float, k: float) -> float:
    """First-order estimate of the expectation gap: p w dw/dk / 2."""
    pt = surface.point(T, k)
    return 0.5 * gaussian_density_p(pt.k, pt.w) * pt.w * pt.dw_dk


def a_third_order(surface: VarianceSurface, T: float, k: float) -> float:
    """Adjusted estimate p (w dw/dk + (dw/dk)^3) / 2."""
    pt = surface.point(T, k)
    p = gaussian_density_p(pt.k, pt.w)
    return p * (0.5 * pt.w * pt.dw_dk + 0.5 * pt.dw_dk ** 3)


@dataclass(frozen=True)
class ImplicitResidual:
    """Local variance minus the Monte Carlo right-hand side, with its
    propagated standard error."""

    residual: float
    se: float
    lv_value: float
    rhs: float


def implicit_residual(lv, mc_terms, surface: VarianceSurface, mu: float,
                      T: float, k: float) -> ImplicitResidual:
    """Consistency residual of the exact implicit local-vol equation.

    ``mc_terms`` must expose ``e_xpay`` (the estimate of
    E[x_T (x_T - k)+]), ``e_ytheta`` (E[y_T theta(x_T - k)]) and
    ``se_a`` (the standard error of their difference); the remaining
    price derivatives come from the surface via the Bachelier calculus
    identities (with the 1/2 in the maturity derivative).
    """
    pt = surface.point(T, k)
    p = gaussian_density_p(pt.k, pt.w)
    ratio = density_ratio(pt)
    dkk_c = p * ratio
    if ratio <= EPS_DENOMINATOR:
        raise DegenerateDenominatorError(
            f"d2C/dk2 degenerate (ratio {ratio:.3e}) at (T={T}, k={k})"
        )
    dt_c = 0.5 * p * pt.dw_dT
    c_minus = p * (pt.w - 0.5 * pt.k * pt.dw_dk)
    a_hat = mc_terms.e_xpay - mc_terms.e_ytheta
    rhs = 2.0 * (dt_c + mu * c_minus + a_hat) / dkk_c
    lv_value = float(lv.var(T, k))
    return ImplicitResidual(
        residual=lv_value - rhs,
        se=2.0 * mc_terms.se_a / dkk_c,
        lv_value=lv_value,
        rhs=rhs,
    )


@dataclass
class LocalVolSurface:
    """Dense (t, x) local-variance grid with bilinear interpolation.

    Values outside the grid are held flat.  ``floor_count`` and
    ``rejected_count`` record how many nodes hit the negative-variance
    floor or the degenerate-denominator rejection during construction.
    """

    t_grid: np.ndarray
    x_grid: np.ndarray
    var_grid: np.ndarray          # shape (len(t_grid), len(x_grid))
    order: str = "third"
    mu_label: str = ""
    floor_count: int = 0
    rejected_count: int = 0
    rejected_nodes: list = field(default_factory=list)

    def __post_init__(self):
        xg = np.asarray(self.x_grid, dtype=float)
        steps = np.diff(xg)
        self._uniform_x = bool(len(xg) > 1 and np.allclose(steps, steps[0]))
        self._x0 = float(xg[0])
        self._inv_dx = 1.0 / float(steps[0]) if len(xg) > 1 else 1.0

    def var(self, t, x):
        """Local variance at (t, x); x may be an array."""
        tg, xg = self.t_grid, self.x_grid
        t = min(max(float(t), tg[0]), tg[-1])
        it = min(int(np.searchsorted(tg, t, side="right")) - 1, len(tg) - 2)
        wt = (t - tg[it]) / (tg[it + 1] - tg[it])
        # time interpolation first: the node row is tiny next to the
        # path vector, and x then needs a single linear pass
        row = (1.0 - wt) * self.var_grid[it] + wt * self.var_grid[it + 1]
        x = np.asarray(x, dtype=float)
        if not self._uniform_x:
            out = np.interp(x, xg, row)  # flat beyond the edges
            return float(out) if x.ndim == 0 else out
        pos = (x - self._x0) * self._inv_dx
        pos = np.clip(pos, 0.0, len(xg) - 1.0 - 1e-9)
        ix = pos.astype(np.int64)
        fx = pos - ix
        out = row[ix] * (1.0 - fx) + row[ix + 1] * fx
        return float(out) if x.ndim == 0 else out

    def sigma(self, t, x):
        return np.sqrt(self.var(t, x))


def build_local_vol(surface: VarianceSurface, mu, T_max: float,
                    order: str = "third", t_nodes: int = 121,
                    x_nodes: int = 201, span_sd: float = 6.0,
                    t_eps: float = 1e-4) -> LocalVolSurface:
    """Evaluate the explicit formula on a dense (t, x) grid.

    ``mu`` is a constant or a callable T -> mu_eff(T).  The space grid
    spans +- span_sd standard deviations of the terminal distribution;
    rejected nodes (degenerate butterfly) are filled from the nearest
    accepted node in the same time row and counted.
    """
    if order not in ("first", "third"):
        raise DomainError(f"order must be 'first' or 'third', got {order!r}")
    if not (T_max > 0.0):
        raise DomainError("T_max must be > 0")
    mu_fn = mu if callable(mu) else (lambda _t, _m=float(mu): _m)
    sd = np.sqrt(surface.w(T_max, 0.0))
    t_grid = np.linspace(t_eps, T_max, t_nodes)
    lo, hi = surface.k_bounds
    x_grid = np.linspace(max(-span_sd * sd, lo), min(span_sd * sd, hi), x_nodes)
    var_grid = np.empty((t_nodes, x_nodes))
    floor_count = 0
    rejected = []
    third = order == "third"
    for i, t in enumerate(t_grid):
        w, dw, d2w, dwT = surface.eval_arrays(t, x_grid)
        mu_val = float(mu_fn(t))
        num, den = _variance_terms(x_grid, w, dw, d2w, dwT, mu_val)
        ok = den > EPS_DENOMINATOR
        if not np.any(ok):
            raise DegenerateDenominatorError(f"whole time row t={t} rejected")
        with np.errstate(divide="ignore", invalid="ignore"):
            row = np.where(ok, num / np.where(ok, den, 1.0), np.nan)
        if third:
            row = row + dw ** 3
        if not np.all(ok):
            bad = np.where(~ok)[0]
            rejected.extend((float(t), float(x_grid[j])) for j in bad)
            row[bad] = np.interp(x_grid[bad], x_grid[ok], row[ok])
        floor = (FLOOR_VOL_FRACTION ** 2) * w / t
        neg = row <= 0.0
        if np.any(neg):
            floor_count += int(np.sum(neg))
            row = np.where(neg, floor, row)
        var_grid[i] = row
    if floor_count:
        warnings.warn(
            f"local-vol grid floored {floor_count} nodes", RuntimeWarning,
        )
    return LocalVolSurface(
        t_grid=t_grid, x_grid=x_grid, var_grid=var_grid, order=order,
        mu_label=("mu_eff(T)" if callable(mu) else f"mu={float(mu):g}"),
        floor_count=floor_count, rejected_count=len(rejected),
        rejected_nodes=rejected,
    )


def constant_local_vol(sigma0: float, T_max: float, x_span: float = 1.0) -> LocalVolSurface:
    """Trivial sigma(t, x) = sigma0 surface (deterministic-vol runs)."""
    if sigma0 <= 0.0:
        raise DomainError("sigma0 must be > 0")
    t_grid = np.array([1e-8, T_max])
    x_grid = np.array([-x_span, 0.0, x_span])
    var_grid = np.full((2, 3), sigma0 * sigma0)
    return LocalVolSurface(t_grid=t_grid, x_grid=x_grid, var_grid=var_grid,
                           order="third", mu_label="constant")


def write_local_vol_csv(lv: LocalVolSurface, path) -> None:
    """Emit the grid as `t,x,sigma_loc` rows."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "sigma_loc"])
        for i, t in enumerate(lv.t_grid):
            for j, x in enumerate(lv.x_grid):
                writer.writerow([
                    f"{t:.17g}", f"{x:.17g}",
                    f"{float(np.sqrt(lv.var_grid[i, j])):.17g}",
                ])
