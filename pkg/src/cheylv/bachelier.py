"""Bachelier (normal-model) pricing and total-variance calculus.

All prices are undiscounted forward option values of calls on a rate
whose forward is ``forward``.  The working variable throughout the
library is the total implied variance

    w = T * vol**2        (rate^2 * yr)

because the Bachelier price of a call at shifted strike k = K - forward
depends on maturity and volatility only through w:

    BH(k, w) = -k * Phi(-k / sqrt(w)) + sqrt(w) * phi(k / sqrt(w)).

The strike-space Gaussian kernel

    p(k, w) = exp(-k^2 / (2 w)) / sqrt(2 pi w)

is the Normal(0, w) density; the variance sensitivity of the price is
d BH / d w = p / 2 (note the 1/2 -- it carries through every
maturity-derivative identity in this module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx

from .errors import BelowIntrinsicError, DomainError

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class OptionQuote:
    """An undiscounted call quote on a rate.

    Attributes
    ----------
    forward, strike : rates (decimal / yr)
    maturity : years, > 0
    price : undiscounted option value, >= (forward - strike)_+
    """

    forward: float
    strike: float
    maturity: float
    price: float

    def __post_init__(self):
        for name in ("forward", "strike", "maturity", "price"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise DomainError(f"OptionQuote.{name} must be finite, got {v!r}")
        if self.maturity <= 0.0:
            raise DomainError(f"maturity must be > 0, got {self.maturity}")
        intrinsic = max(self.forward - self.strike, 0.0)
        if self.price < intrinsic:
            raise BelowIntrinsicError(
                f"price {self.price} below intrinsic {intrinsic}"
            )

    @property
    def shifted_strike(self) -> float:
        return self.strike - self.forward


@dataclass(frozen=True)
class SmilePoint:
    """Total implied variance and its derivatives at one (T, k).

    ``k`` is the shifted strike K - f0(T); ``w`` the total variance
    T * vol(T, k)^2; the remaining fields are d w / d k, d2 w / d k2 and
    d w / d T evaluated at the same point.
    """

    k: float
    w: float
    dw_dk: float = 0.0
    d2w_dk2: float = 0.0
    dw_dT: float = 0.0

    def __post_init__(self):
        if not (self.w > 0.0) or not np.isfinite(self.w):
            raise DomainError(f"total variance must be > 0, got {self.w}")


def _otm_core(d):
    """Time value scaled by sqrt(w): phi(d) - d*Phi(-d) for d >= 0.

    Uses the scaled complementary error function so the near-complete
    cancellation between phi(d) and d*Phi(-d) at large d never happens:
    phi(d) - d*Phi(-d) = phi(d) * (1 - d*sqrt(pi/2)*erfcx(d/sqrt(2))).
    """
    d = np.asarray(d, dtype=float)
    phi = np.exp(-0.5 * d * d) / _SQRT_2PI
    return phi * (1.0 - d * _SQRT_PI_OVER_2 * erfcx(d / math.sqrt(2.0)))


def bh_price_from_variance(k, w):
    """Undiscounted Bachelier call price as a function of (k, w).

    Equals ``bh_price(0, k, T, sqrt(w/T))`` for any T > 0.  For w = 0
    returns the intrinsic value (-k)_+.  In-the-money strikes (k < 0)
    are priced as intrinsic plus the reflected out-of-the-money time
    value, which is exact by call-put symmetry and avoids cancellation.
    """
    k = np.asarray(k, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0.0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(k)):
        raise DomainError("bh_price_from_variance requires finite k and w >= 0")
    scalar = k.ndim == 0 and w.ndim == 0
    k, w = np.broadcast_arrays(np.atleast_1d(k), np.atleast_1d(w))
    out = np.where(k < 0.0, -k, 0.0).astype(float)
    pos = w > 0.0
    if np.any(pos):
        sw = np.sqrt(w[pos])
        out[pos] += sw * _otm_core(np.abs(k[pos]) / sw)
    return float(out[0]) if scalar else out


def bh_price(forward, strike, maturity, vol):
    """Bachelier call price (f - K)*Phi(d) + vol*sqrt(T)*phi(d).

    ``d = (f - K) / (vol sqrt(T))``; a zero volatility returns the
    intrinsic value (f - K)_+.
    """
    for name, v in (("forward", forward), ("strike", strike),
                    ("maturity", maturity), ("vol", vol)):
        if not np.all(np.isfinite(v)):
            raise DomainError(f"bh_price: {name} must be finite, got {v!r}")
    if maturity <= 0.0:
        raise DomainError(f"bh_price: maturity must be > 0, got {maturity}")
    if np.any(np.asarray(vol) < 0.0):
        raise DomainError(f"bh_price: vol must be >= 0, got {vol!r}")
    w = np.asarray(vol, dtype=float) ** 2 * maturity
    k = np.asarray(strike, dtype=float) - np.asarray(forward, dtype=float)
    return bh_price_from_variance(k, w)


def gaussian_density_p(k, w):
    """Normal(0, w) density at k: (2 pi w)^(-1/2) exp(-k^2 / (2 w))."""
    k = np.asarray(k, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        raise DomainError("gaussian_density_p requires w > 0")
    out = np.exp(-0.5 * k * k / w) / np.sqrt(2.0 * math.pi * w)
    return float(out) if out.ndim == 0 else out


def implied_total_variance(price, k):
    """Invert the Bachelier price to the total implied variance w.

    The price must lie strictly above intrinsic (-k)_+.  The root is
    unique because BH(k, .) is strictly increasing in w; a safeguarded
    Newton iteration (bisection fallback inside a geometrically grown
    bracket) is run to machine convergence, with the ATM-exact seed
    w0 = 2 pi price^2 as the initial lower bound.
    """
    if not np.isfinite(price) or not np.isfinite(k):
        raise DomainError("implied_total_variance requires finite inputs")
    intrinsic = max(-k, 0.0)
    if price <= intrinsic:
        raise BelowIntrinsicError(
            f"price {price} not strictly above intrinsic {intrinsic}"
        )
    # Reduce to the out-of-the-money problem: invert the time value at |k|.
    k_eff = abs(k)
    target = price - intrinsic
    w = 2.0 * math.pi * target * target  # exact at k = 0, lower bound otherwise
    if k_eff == 0.0:
        return w
    w_lo = w
    w_hi = w
    for _ in range(2000):
        w_hi *= 4.0
        if bh_price_from_variance(k_eff, w_hi) >= target:
            break
    else:
        raise DomainError("implied_total_variance: bracket growth failed")
    for _ in range(200):
        f = bh_price_from_variance(k_eff, w) - target
        if f == 0.0:
            break
        if f > 0.0:
            w_hi = min(w_hi, w)
        else:
            w_lo = max(w_lo, w)
        deriv = 0.5 * gaussian_density_p(k_eff, w)
        step_ok = False
        if deriv > 0.0 and np.isfinite(deriv):
            w_new = w - f / deriv
            if w_lo < w_new < w_hi:
                step_ok = True
        if not step_ok:
            w_new = 0.5 * (w_lo + w_hi)
        if abs(w_new - w) <= 4.0 * np.spacing(w):
            w = w_new
            break
        w = w_new
    return w


def density_ratio(point: SmilePoint):
    """Butterfly ratio d2C/dk2 divided by the Gaussian kernel p(k, w).

    Equals (1 - k w'/(2w))^2 + (w'' - w'^2/(2w)) / 2 where primes are
    strike derivatives.  Positive iff the smile admits a valid implied
    density at this point; equals 1 on a flat smile.
    """
    k, w, dw, d2w = point.k, point.w, point.dw_dk, point.d2w_dk2
    lin = 1.0 - 0.5 * k * dw / w
    return lin * lin + 0.5 * (d2w - 0.5 * dw * dw / w)


def c_minus_k_dkc(point: SmilePoint):
    """C - k * dC/dk along the smile, in closed form p * (w - k w'/2)."""
    p = gaussian_density_p(point.k, point.w)
    return p * (point.w - 0.5 * point.k * point.dw_dk)


def dT_price(point: SmilePoint):
    """Maturity derivative of the call price: (1/2) p(k, w) dw/dT.

    The 1/2 is the Bachelier variance-vega dBH/dw = p/2; it is what
    makes the flat-smile identity sigma^2 = dw/dT + 2 mu w exact.
    """
    return 0.5 * gaussian_density_p(point.k, point.w) * point.dw_dT
