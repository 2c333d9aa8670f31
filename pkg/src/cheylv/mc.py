"""Monte Carlo engine for the one- and two-factor Cheyette SDEs.

Simulation runs directly under the T-forward measure, where the bond-
numeraire change adds the drift -sigma^2(t, x) G(t, T) to the state x
and short-rate option prices are plain payoff expectations with no
discounting.  The convexity state y is a pathwise linear ODE and is
stepped exactly given the step's frozen sigma^2, which removes one
bias source; x uses explicit Euler.

Determinism: normals come from counter-based Philox streams keyed by
(seed, path-block, step) with a fixed internal block size, so results
are bit-identical for a given config no matter how many workers run
the blocks.  Antithetic pairs share a block's draws with flipped sign
and live in the two halves of the output arrays (pair i is
(i, n_pairs + i)).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.random import Generator, Philox

from .bachelier import gaussian_density_p, implied_total_variance
from .errors import BelowIntrinsicError, DomainError, SimulationBlowupError
from .localvol import CheyetteParams1F, LocalVolSurface

#: Base paths per RNG block.  Part of the stream layout: changing it
#: changes the draws, so it is a constant, not a knob.
PATH_BLOCK = 65536


@dataclass(frozen=True)
class MCConfig:
    """Engine configuration; identical configs give identical estimates."""

    n_paths: int = 200_000
    steps_per_year: int = 96
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.n_paths < 2:
            raise DomainError("n_paths must be >= 2")
        if self.steps_per_year < 12:
            raise DomainError("steps_per_year must be >= 12")
        if not (0 <= self.seed < 2**64):
            raise DomainError("seed must fit in 64 bits")
        if self.antithetic and self.n_paths % 2:
            raise DomainError("antithetic runs need an even n_paths")


@dataclass
class PathEnsemble1F:
    """Terminal (x_T, y_T) samples under the T-forward measure."""

    x: np.ndarray
    y: np.ndarray
    T: float
    measure: str = "T-forward"
    n_pairs: int = 0  # 0 when not antithetic

    def units(self, values: np.ndarray) -> np.ndarray:
        """Reduce pathwise values to independent sampling units
        (antithetic pairs are averaged)."""
        if self.n_pairs:
            return 0.5 * (values[: self.n_pairs] + values[self.n_pairs:])
        return values


@dataclass
class PathEnsemble2F:
    """Terminal samples of the two-factor state: x components and the
    symmetric y matrix entries (y11, y22, y12)."""

    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    T: float
    measure: str = "T-forward"
    n_pairs: int = 0

    @property
    def x_bar(self) -> np.ndarray:
        return self.x1 + self.x2

    @property
    def y_total(self) -> np.ndarray:
        """e^T y e, the scalar total-variance state."""
        return self.y1 + 2.0 * self.y3 + self.y2


@dataclass(frozen=True)
class CheyetteParams2F:
    """Two-factor parameters; beta is derived from the normalization
    alpha^2 + 2 rho alpha beta + beta^2 = 1 at construction."""

    mu1: float
    mu2: float
    alpha: float
    rho: float
    beta: float = field(init=False)

    def __post_init__(self):
        if self.mu1 < 0.0 or self.mu2 < 0.0:
            raise DomainError("mean reversions must be >= 0")
        if not (-1.0 <= self.rho <= 1.0):
            raise DomainError("rho must lie in [-1, 1]")
        if not (0.0 < self.alpha <= 1.0):
            raise DomainError("alpha must lie in (0, 1]")
        disc = 1.0 - self.alpha**2 * (1.0 - self.rho**2)
        beta = -self.rho * self.alpha + math.sqrt(disc)
        if beta < 0.0:
            raise DomainError("normalization gives beta < 0")
        object.__setattr__(self, "beta", beta)
        resid = self.alpha**2 + 2 * self.rho * self.alpha * beta + beta**2 - 1.0
        if abs(resid) > 1e-12:
            raise DomainError(f"normalization residual {resid:.2e}")

    @property
    def loading(self) -> np.ndarray:
        """The lower-triangular factor-loading matrix V."""
        return np.array([
            [self.alpha, 0.0],
            [self.rho * self.beta, math.sqrt(1.0 - self.rho**2) * self.beta],
        ])


def g_factor(mu: float, tau):
    """The bond-duration kernel (1 - exp(-mu tau)) / mu; tau at mu = 0."""
    if mu == 0.0:
        return tau
    return -np.expm1(-mu * tau) / mu


def _normals(seed: int, block: int, step: int, shape) -> np.ndarray:
    gen = Generator(Philox(key=[seed, 0], counter=[0, 0, block, step]))
    return gen.standard_normal(shape)


def _n_steps(T: float, config: MCConfig) -> int:
    return max(1, int(round(T * config.steps_per_year)))


def _block_ranges(n_base: int):
    return [(lo, min(lo + PATH_BLOCK, n_base)) for lo in range(0, n_base, PATH_BLOCK)]


def _run_1f(mu: float, lv: LocalVolSurface, T: float, n_steps: int,
            m: int, draws: Callable[[int], np.ndarray]):
    """Euler/exact-y stepping of m paths; draws(j) supplies step-j normals."""
    dt = T / n_steps
    e2 = math.exp(-2.0 * mu * dt)
    y_gain = dt if mu == 0.0 else -math.expm1(-2.0 * mu * dt) / (2.0 * mu)
    x = np.zeros(m)
    y = np.zeros(m)
    for j in range(n_steps):
        t = j * dt
        sig2 = lv.var(t, x)
        g = g_factor(mu, T - t)
        incr = np.sqrt(sig2 * dt)
        incr *= draws(j)
        x *= 1.0 - mu * dt
        x += y * dt
        x -= sig2 * (g * dt)
        x += incr
        y *= e2
        y += sig2 * y_gain
        if not np.all(np.isfinite(x)):
            raise SimulationBlowupError(
                f"non-finite state after step {j + 1}/{n_steps} (t={t + dt:.6g})"
            )
    return x, y


def simulate_1f(params: CheyetteParams1F, lv: LocalVolSurface, T: float,
                config: MCConfig, workers: int = 1) -> PathEnsemble1F:
    """Simulate terminal (x_T, y_T) under the T-forward measure.

    dx = (y - mu x - sigma^2(t,x) G(t,T)) dt + sigma(t,x) dW^T,
    dy = (sigma^2 - 2 mu y) dt, from x0 = y0 = 0.
    """
    if not (T > 0.0):
        raise DomainError("T must be > 0")
    n_steps = _n_steps(T, config)
    anti = config.antithetic
    n_base = config.n_paths // 2 if anti else config.n_paths
    x_out = np.empty(config.n_paths)
    y_out = np.empty(config.n_paths)

    def run_block(args):
        b, (lo, hi) = args
        m = hi - lo
        if anti:
            def draws(j, _b=b, _m=m):
                z = _normals(config.seed, _b, j, _m)
                return np.concatenate([z, -z])

            x, y = _run_1f(params.mu, lv, T, n_steps, 2 * m, draws)
            x_out[lo:hi] = x[:m]
            y_out[lo:hi] = y[:m]
            x_out[n_base + lo:n_base + hi] = x[m:]
            y_out[n_base + lo:n_base + hi] = y[m:]
        else:
            def draws(j, _b=b, _m=m):
                return _normals(config.seed, _b, j, _m)

            x, y = _run_1f(params.mu, lv, T, n_steps, m, draws)
            x_out[lo:hi] = x
            y_out[lo:hi] = y

    jobs = list(enumerate(_block_ranges(n_base)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_block, jobs))
    else:
        for job in jobs:
            run_block(job)
    return PathEnsemble1F(x=x_out, y=y_out, T=T,
                          n_pairs=n_base if anti else 0)


def price_short_rate_option(ensemble: PathEnsemble1F, k: float):
    """Undiscounted E^T[(x_T - k)+] with its standard error.

    With antithetic sampling the error is computed over pair means,
    since raw paths are not independent.
    """
    payoff = np.maximum(ensemble.x - k, 0.0)
    units = ensemble.units(payoff)
    n = len(units)
    return float(np.mean(units)), float(np.std(units, ddof=1) / math.sqrt(n))


@dataclass(frozen=True)
class SmileEstimate:
    k: float
    total_variance: float
    vol: float
    band: float          # one-s.e. band in vol units
    skipped: bool = False


def mc_implied_smile(ensemble: PathEnsemble1F, strikes) -> list:
    """Invert Monte Carlo prices into Bachelier implied vols.

    Strikes whose sampled price falls at or below intrinsic (deep ITM
    noise) are flagged and skipped.
    """
    out = []
    T = ensemble.T
    for k in strikes:
        price, se = price_short_rate_option(ensemble, k)
        try:
            w = implied_total_variance(price, k)
        except BelowIntrinsicError:
            out.append(SmileEstimate(k=float(k), total_variance=math.nan,
                                     vol=math.nan, band=math.nan, skipped=True))
            continue
        vol = math.sqrt(w / T)
        vega = math.exp(-0.5 * k * k / w) / math.sqrt(2.0 * math.pi) * math.sqrt(T)
        out.append(SmileEstimate(k=float(k), total_variance=w, vol=vol,
                                 band=se / vega))
    return out


@dataclass(frozen=True)
class AEstimate:
    """Monte Carlo estimates of the two expectation terms of the
    implicit formula and of their difference."""

    e_xpay: float
    e_ytheta: float
    a_hat: float
    se_xpay: float
    se_ytheta: float
    se_a: float


def estimate_A(ensemble: PathEnsemble1F, k: float) -> AEstimate:
    """Estimate E[x (x-k)+], E[y theta(x-k)] and their gap.

    Standard errors are leave-one-out jackknife values over independent
    units (pairs under antithetic sampling), which for sample means
    coincide with std / sqrt(n).
    """
    x, y = ensemble.x, ensemble.y
    u1 = ensemble.units(x * np.maximum(x - k, 0.0))
    u2 = ensemble.units(y * (x >= k))
    n = len(u1)
    rt = math.sqrt(n)
    return AEstimate(
        e_xpay=float(np.mean(u1)),
        e_ytheta=float(np.mean(u2)),
        a_hat=float(np.mean(u1 - u2)),
        se_xpay=float(np.std(u1, ddof=1) / rt),
        se_ytheta=float(np.std(u2, ddof=1) / rt),
        se_a=float(np.std(u1 - u2, ddof=1) / rt),
    )


def _run_2f(params: CheyetteParams2F, lv: LocalVolSurface, T: float,
            n_steps: int, m: int, draws: Callable[[int], np.ndarray]):
    mu1, mu2 = params.mu1, params.mu2
    V = params.loading
    vv = V @ V.T  # [[a^2, a rho b], [a rho b, b^2]]
    dt = T / n_steps
    sq_dt = math.sqrt(dt)
    dec1 = math.exp(-2.0 * mu1 * dt)
    dec2 = math.exp(-2.0 * mu2 * dt)
    dec3 = math.exp(-(mu1 + mu2) * dt)
    gain1 = dt if mu1 == 0.0 else -math.expm1(-2.0 * mu1 * dt) / (2.0 * mu1)
    gain2 = dt if mu2 == 0.0 else -math.expm1(-2.0 * mu2 * dt) / (2.0 * mu2)
    mu3 = mu1 + mu2
    gain3 = dt if mu3 == 0.0 else -math.expm1(-mu3 * dt) / mu3
    x1 = np.zeros(m)
    x2 = np.zeros(m)
    y1 = np.zeros(m)
    y2 = np.zeros(m)
    y3 = np.zeros(m)
    for j in range(n_steps):
        t = j * dt
        tau = T - t
        g1 = g_factor(mu1, tau)
        g2 = g_factor(mu2, tau)
        sig2 = lv.var(t, x1 + x2)
        sig = np.sqrt(sig2)
        z = draws(j)  # shape (m, 2)
        d1 = (y1 + y3 - mu1 * x1 - sig2 * (vv[0, 0] * g1 + vv[0, 1] * g2)) * dt
        d2 = (y3 + y2 - mu2 * x2 - sig2 * (vv[1, 0] * g1 + vv[1, 1] * g2)) * dt
        x1 = x1 + d1 + sig * V[0, 0] * z[:, 0] * sq_dt
        x2 = x2 + d2 + sig * (V[1, 0] * z[:, 0] + V[1, 1] * z[:, 1]) * sq_dt
        y1 = y1 * dec1 + sig2 * vv[0, 0] * gain1
        y2 = y2 * dec2 + sig2 * vv[1, 1] * gain2
        y3 = y3 * dec3 + sig2 * vv[0, 1] * gain3
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
            raise SimulationBlowupError(
                f"non-finite state after step {j + 1}/{n_steps} (t={t + dt:.6g})"
            )
    return x1, x2, y1, y2, y3


def simulate_2f(params: CheyetteParams2F, lv: LocalVolSurface, T: float,
                config: MCConfig, workers: int = 1) -> PathEnsemble2F:
    """Two-factor analogue of :func:`simulate_1f`.

    sigma is evaluated at x_bar = x1 + x2; the y matrix steps by its
    exact componentwise exponential given the frozen sigma^2.
    """
    if not (T > 0.0):
        raise DomainError("T must be > 0")
    n_steps = _n_steps(T, config)
    anti = config.antithetic
    n_base = config.n_paths // 2 if anti else config.n_paths
    outs = [np.empty(config.n_paths) for _ in range(5)]

    def run_block(args):
        b, (lo, hi) = args
        m = hi - lo
        if anti:
            def draws(j, _b=b, _m=m):
                z = _normals(config.seed, _b, j, (_m, 2))
                return np.concatenate([z, -z], axis=0)

            res = _run_2f(params, lv, T, n_steps, 2 * m, draws)
            for arr, out in zip(res, outs):
                out[lo:hi] = arr[:m]
                out[n_base + lo:n_base + hi] = arr[m:]
        else:
            def draws(j, _b=b, _m=m):
                return _normals(config.seed, _b, j, (_m, 2))

            res = _run_2f(params, lv, T, n_steps, m, draws)
            for arr, out in zip(res, outs):
                out[lo:hi] = arr

    jobs = list(enumerate(_block_ranges(n_base)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_block, jobs))
    else:
        for job in jobs:
            run_block(job)
    return PathEnsemble2F(x1=outs[0], x2=outs[1], y1=outs[2], y2=outs[3],
                          y3=outs[4], T=T, n_pairs=n_base if anti else 0)
