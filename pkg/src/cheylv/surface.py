"""Total implied-variance surfaces w(T, k) with analytic derivatives.

A surface maps (maturity T, shifted strike k) to the total Bachelier
variance w = T * sigma_imp(T, k)^2 together with dw/dk, d2w/dk2 and
dw/dT.  Grid surfaces interpolate quoted vols with a natural cubic
spline in strike (C2, required by the second strike derivative) and a
shape-preserving monotone cubic in maturity anchored at w(0, k) = 0;
synthetic surfaces carry exact closed-form derivatives and back most of
the analytic tests in this package.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .bachelier import SmilePoint, density_ratio
from .errors import DomainError, InsufficientDataError, InvalidGridError


@dataclass(frozen=True)
class SurfaceGrid:
    """Quoted Bachelier implied vols on a per-maturity strike grid.

    ``strikes[i]`` and ``vols[i]`` belong to ``maturities[i]``; strike
    rows are strictly increasing and need not coincide across
    maturities.  Vols are normal vols in rate / sqrt(yr).
    """

    maturities: tuple
    strikes: tuple
    vols: tuple

    def __post_init__(self):
        mats = np.asarray(self.maturities, dtype=float)
        if mats.ndim != 1 or len(mats) == 0:
            raise InvalidGridError("need at least one maturity")
        if np.any(mats <= 0.0) or np.any(np.diff(mats) <= 0.0):
            raise InvalidGridError("maturities must be positive and strictly increasing")
        if not (len(self.strikes) == len(self.vols) == len(mats)):
            raise InvalidGridError("strikes/vols rows must match maturities")
        for i, (ks, vs) in enumerate(zip(self.strikes, self.vols)):
            ks = np.asarray(ks, dtype=float)
            vs = np.asarray(vs, dtype=float)
            if len(ks) < 3:
                raise InsufficientDataError(
                    f"maturity {mats[i]} has {len(ks)} strikes; need at least 3"
                )
            if len(ks) != len(vs):
                raise InvalidGridError("strike and vol rows must have equal length")
            if np.any(np.diff(ks) <= 0.0):
                raise InvalidGridError("strike rows must be strictly increasing")
            if np.any(vs <= 0.0) or not np.all(np.isfinite(vs)):
                raise InvalidGridError("vols must be positive and finite")


class VarianceSurface:
    """Callable w(T, k) surface returning SmilePoints.

    ``fn(T, k_array)`` must return the tuple of arrays
    ``(w, dw_dk, d2w_dk2, dw_dT)`` broadcast to ``k_array``.
    """

    def __init__(self, fn, provenance, t_max=None, k_bounds=None, k_seams=()):
        self._fn = fn
        self.provenance = provenance
        self.t_max = t_max
        #: usable strike interval (lo, hi); evaluation may fail outside
        self.k_bounds = k_bounds if k_bounds is not None else (-np.inf, np.inf)
        #: strike points where the evaluator is only C1 (e.g. wing
        #: seams); quadrature routines split panels there
        self.k_seams = tuple(k_seams)

    def eval_arrays(self, T, k):
        if not (T > 0.0) or not np.isfinite(T):
            raise DomainError(f"maturity must be > 0, got {T}")
        k = np.asarray(k, dtype=float)
        w, dw, d2w, dwT = self._fn(float(T), np.atleast_1d(k))
        if np.any(w <= 0.0):
            raise DomainError(f"surface evaluated to non-positive variance at T={T}")
        return w, dw, d2w, dwT

    def point(self, T, k) -> SmilePoint:
        w, dw, d2w, dwT = self.eval_arrays(T, [float(k)])
        return SmilePoint(k=float(k), w=float(w[0]), dw_dk=float(dw[0]),
                          d2w_dk2=float(d2w[0]), dw_dT=float(dwT[0]))

    def w(self, T, k):
        out = self.eval_arrays(T, k)[0]
        return float(out[0]) if np.ndim(k) == 0 else out


def eval_point(surface: VarianceSurface, T, k) -> SmilePoint:
    """Evaluate a surface at one (T, k)."""
    return surface.point(T, k)


class _GridInterpolant:
    """Strike-spline / maturity-PCHIP interpolation of a quoted grid.

    Per-maturity natural cubic splines rectangularize the quotes onto
    the union strike grid (flat beyond each row's range); a monotone
    cubic through (0, 0) and the rectangularized nodes provides the
    maturity direction and its analytic derivative.  Queries build the
    strike spline of the maturity-interpolated values, so the reported
    strike derivatives are exactly those of the evaluated interpolant.
    """

    def __init__(self, grid: SurfaceGrid):
        mats = np.asarray(grid.maturities, dtype=float)
        slices = []
        for T, ks, vs in zip(mats, grid.strikes, grid.vols):
            ks = np.asarray(ks, dtype=float)
            ws = T * np.asarray(vs, dtype=float) ** 2
            slices.append((ks, CubicSpline(ks, ws, bc_type="natural")))
        k_union = np.unique(np.concatenate([ks for ks, _ in slices]))
        rect = np.empty((len(mats) + 1, len(k_union)))
        rect[0] = 0.0  # w(0, k) = 0 anchor
        for i, (ks, spl) in enumerate(slices):
            rect[i + 1] = spl(np.clip(k_union, ks[0], ks[-1]))
        if np.any(rect[1:] <= 0.0):
            raise InvalidGridError("interpolated total variance must stay positive")
        self.t_nodes = np.concatenate([[0.0], mats])
        self.k_union = k_union
        self._pchip = PchipInterpolator(self.t_nodes, rect, axis=0, extrapolate=False)
        self._dpchip = self._pchip.derivative()
        self.t_last = mats[-1]

    def _nodes_at(self, T):
        if T <= self.t_last:
            return self._pchip(T), self._dpchip(T)
        # linear continuation in w beyond the last quoted maturity
        slope = self._dpchip(self.t_last)
        return self._pchip(self.t_last) + slope * (T - self.t_last), slope

    def __call__(self, T, k):
        w_nodes, dwT_nodes = self._nodes_at(T)
        w_spl = CubicSpline(self.k_union, w_nodes, bc_type="natural")
        dwT_spl = CubicSpline(self.k_union, dwT_nodes, bc_type="natural")
        kc = np.clip(k, self.k_union[0], self.k_union[-1])
        inside = (k >= self.k_union[0]) & (k <= self.k_union[-1])
        w = w_spl(kc)
        # flat in w beyond the strike range: strike derivatives vanish
        dw = np.where(inside, w_spl(kc, 1), 0.0)
        d2w = np.where(inside, w_spl(kc, 2), 0.0)
        dwT = dwT_spl(kc)
        return w, dw, d2w, dwT


def build_surface(grid: SurfaceGrid, interpolation: str = "spline-k/pchip-T") -> VarianceSurface:
    """Interpolate a quoted grid into a C2-in-strike variance surface.

    The only supported scheme is the default natural-cubic strike
    spline with monotone-cubic maturity interpolation.
    """
    if interpolation != "spline-k/pchip-T":
        raise DomainError(f"unknown interpolation scheme {interpolation!r}")
    interp = _GridInterpolant(grid)
    return VarianceSurface(interp, provenance="grid-interpolated",
                           t_max=float(interp.t_last))


def synthetic_flat(sigma0: float, mu: float) -> VarianceSurface:
    """Strike-flat surface of a constant-vol model with mean reversion.

    w(T) = sigma0^2 (1 - exp(-2 mu T)) / (2 mu)  (mu > 0; sigma0^2 T at
    mu = 0) with dw/dT = sigma0^2 exp(-2 mu T), so that the identity
    dw/dT + 2 mu w = sigma0^2 holds pointwise.
    """
    if sigma0 <= 0.0:
        raise DomainError("sigma0 must be > 0")
    if mu < 0.0:
        raise DomainError("mu must be >= 0")
    s2 = sigma0 * sigma0

    def fn(T, k):
        if mu == 0.0:
            w = s2 * T
            dwT = s2
        else:
            w = -s2 * math.expm1(-2.0 * mu * T) / (2.0 * mu)
            dwT = s2 * math.exp(-2.0 * mu * T)
        z = np.zeros_like(k)
        return np.full_like(k, w), z, z, np.full_like(k, dwT)

    return VarianceSurface(fn, provenance="analytic-synthetic")


def synthetic_linear(a: float, b: float, T: float) -> VarianceSurface:
    """Strike-linear surface w(T, k) = a + b k at the reference maturity.

    Other maturities scale proportionally, w(t, k) = (a + b k) t / T,
    i.e. a maturity-flat implied vol; evaluation where a + b k <= 0 is
    a domain error.
    """
    if a <= 0.0:
        raise DomainError("a must be > 0")
    if not (T > 0.0):
        raise DomainError("reference maturity must be > 0")

    def fn(t, k):
        base = a + b * k
        if np.any(base <= 0.0):
            raise DomainError("linear smile evaluated where a + b k <= 0")
        scale = t / T
        return base * scale, np.full_like(k, b * scale), np.zeros_like(k), base / T

    # usable bounds keep the variance above 2% of its ATM level
    if b > 0.0:
        bounds = (-0.98 * a / b, np.inf)
    elif b < 0.0:
        bounds = (-np.inf, -0.98 * a / b)
    else:
        bounds = (-np.inf, np.inf)
    return VarianceSurface(fn, provenance="analytic-synthetic", k_bounds=bounds)


@dataclass(frozen=True)
class ArbitrageDiagnostics:
    """Pointwise no-arbitrage report for a surface."""

    T: float
    k: float
    w: float
    density_ratio: float
    numerator: float
    butterfly_ok: bool
    positive_w_ok: bool
    calendar_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.butterfly_ok and self.positive_w_ok and self.calendar_ok


def check_arbitrage(surface: VarianceSurface, T, k, mu: float = 0.0) -> ArbitrageDiagnostics:
    """Diagnose butterfly, positivity and calendar-type conditions.

    ``numerator`` is dw/dT + mu (2w - k dw/dk) + w dw/dk, the quantity
    whose positivity (together with a positive butterfly ratio) makes
    the explicit local-variance formula positive.  Diagnostics only;
    never raises on a violation.
    """
    pt = surface.point(T, k)
    ratio = density_ratio(pt)
    numer = pt.dw_dT + mu * (2.0 * pt.w - pt.k * pt.dw_dk) + pt.w * pt.dw_dk
    return ArbitrageDiagnostics(
        T=float(T), k=float(k), w=pt.w, density_ratio=float(ratio),
        numerator=float(numer), butterfly_ok=bool(ratio > 0.0),
        positive_w_ok=bool(pt.w > 0.0), calendar_ok=bool(numer > 0.0),
    )


def _grid_from_rows(rows) -> SurfaceGrid:
    by_T = {}
    for T, k, sig in rows:
        by_T.setdefault(float(T), []).append((float(k), float(sig)))
    mats = sorted(by_T)
    strikes, vols = [], []
    for T in mats:
        pts = sorted(by_T[T])
        strikes.append(tuple(k for k, _ in pts))
        vols.append(tuple(v for _, v in pts))
    return SurfaceGrid(maturities=tuple(mats), strikes=tuple(strikes), vols=tuple(vols))


def load_surface_csv(path) -> SurfaceGrid:
    """Read a `T,k,sigma_imp` CSV (UTF-8, decimal point) into a grid."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"T", "k", "sigma_imp"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InvalidGridError(f"surface CSV must have header T,k,sigma_imp, got {reader.fieldnames}")
        for rec in reader:
            try:
                rows.append((float(rec["T"]), float(rec["k"]), float(rec["sigma_imp"])))
            except (TypeError, ValueError) as exc:
                raise InvalidGridError(f"bad surface row {rec!r}") from exc
    if not rows:
        raise InsufficientDataError("surface CSV contains no rows")
    return _grid_from_rows(rows)


def load_surface_json(path) -> SurfaceGrid:
    """Read the JSON alternative: arrays under keys T, k, sigma_imp."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        rows = list(zip(doc["T"], doc["k"], doc["sigma_imp"], strict=True))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidGridError(f"surface JSON must hold equal-length arrays T,k,sigma_imp") from exc
    if not rows:
        raise InsufficientDataError("surface JSON contains no rows")
    return _grid_from_rows(rows)


def write_surface_csv(grid: SurfaceGrid, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "k", "sigma_imp"])
        for T, ks, vs in zip(grid.maturities, grid.strikes, grid.vols):
            for k, v in zip(ks, vs):
                writer.writerow([f"{T:.17g}", f"{k:.17g}", f"{v:.17g}"])
