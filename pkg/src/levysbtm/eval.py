"""Comparison metrics: binned total variation, KDE, binned KL, the L2-KL bound and a time-step order study."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class EmptySampleError(ValueError):
    """A metric was given an empty sample set."""


class BoundViolationError(ValueError):
    """Density values exceed the declared bound ``tau``."""


class DegenerateSampleError(ValueError):
    """Zero-variance samples cannot fix a rule-based bandwidth."""


def _as_samples(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.size == 0 or len(a) == 0:
        raise EmptySampleError("sample set is empty")
    return a


@dataclass(frozen=True)
class BinnedHistogram:
    lower: np.ndarray
    upper: np.ndarray
    bins: int
    probs: np.ndarray  # shape (bins,) * d


def union_box(*sets):
    stacked = np.concatenate([_as_samples(s) for s in sets])
    return stacked.min(axis=0), stacked.max(axis=0)


def histogram(samples, lower, upper, bins: int) -> BinnedHistogram:
    """Probabilities on a regular grid over ``[lower, upper]``; the last bin is right-closed."""
    x = _as_samples(samples)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    width = np.where(upper > lower, upper - lower, 1.0)
    idx = np.floor((x - lower) / width * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (bins,) * x.shape[1])
    counts = np.bincount(flat, minlength=bins ** x.shape[1]).astype(float)
    return BinnedHistogram(lower, upper, bins, (counts / len(x)).reshape((bins,) * x.shape[1]))


def tv_distance(a, b, bins_per_dim: int = 50) -> float:
    """``sum_i |P_a(bin_i) - P_b(bin_i)|`` on the smallest box covering both sets (range [0, 2])."""
    lo, hi = union_box(a, b)
    ha = histogram(a, lo, hi, bins_per_dim)
    hb = histogram(b, lo, hi, bins_per_dim)
    return float(np.abs(ha.probs - hb.probs).sum())


def marginal_tv(a, b, bins: int = 50) -> list:
    A, B = _as_samples(a), _as_samples(b)
    return [tv_distance(A[:, j], B[:, j], bins) for j in range(A.shape[1])]


def scott_bandwidth(samples) -> np.ndarray:
    x = _as_samples(samples)
    n, d = x.shape
    std = x.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    if np.any(std == 0.0):
        raise DegenerateSampleError("zero-variance samples; give an explicit bandwidth")
    return std * n ** (-1.0 / (d + 4))


def kde(samples, bandwidth="scott", grid=None, chunk: int = 2048) -> np.ndarray:
    """Gaussian-kernel density estimate at ``grid`` points (rows)."""
    x = _as_samples(samples)
    d = x.shape[1]
    if isinstance(bandwidth, str):
        if bandwidth.lower() != "scott":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        h = scott_bandwidth(x)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,))
        if np.any(h <= 0):
            raise ValueError("bandwidth must be positive")
    g = np.asarray(grid, dtype=float)
    g = g[:, None] if g.ndim == 1 else g
    norm = np.prod(h) * (2 * math.pi) ** (d / 2) * len(x)
    out = np.empty(len(g))
    for s in range(0, len(g), chunk):
        z = (g[s : s + chunk, None, :] - x[None, :, :]) / h
        out[s : s + chunk] = np.exp(-0.5 * np.sum(z * z, axis=2)).sum(axis=1) / norm
    return out


def kl_from_probs(pa, pb, smoothing: float) -> float:
    pa = np.asarray(pa, dtype=float).ravel()
    pb = np.asarray(pb, dtype=float).ravel()
    # no renormalisation, so identical histograms give exactly zero
    pb = np.where(pb > 0, pb, smoothing)
    mask = pa > 0
    return max(0.0, float(np.sum(pa[mask] * np.log(pa[mask] / pb[mask]))))


def kl_divergence_binned(a, b, bins_per_dim: int = 50) -> float:
    """``sum P_a log(P_a / P_b)`` with empty bins of ``b`` smoothed to ``1 / (10 N bins)``."""
    lo, hi = union_box(a, b)
    ha = histogram(a, lo, hi, bins_per_dim)
    hb = histogram(b, lo, hi, bins_per_dim)
    n = len(_as_samples(b))
    return kl_from_probs(ha.probs, hb.probs, 1.0 / (10.0 * n * ha.probs.size))


def check_l2_kl_bound(p, q, tau: float, cell: float):
    """``cell sum (p - q)^2 <= (2 tau / (1 - log 2)) cell sum p log(p / q)``; returns ``(lhs, rhs, holds)``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if np.any(p <= 0) or np.any(q <= 0) or np.any(p >= tau) or np.any(q >= tau):
        raise BoundViolationError("densities must satisfy 0 < p, q < tau")
    lhs = float(cell * np.sum((p - q) ** 2))
    kl = float(cell * np.sum(p * np.log(p / q)))
    rhs = 2.0 * tau / (1.0 - math.log(2.0)) * kl
    return lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-9))


@dataclass(frozen=True)
class ConvergenceResult:
    dts: tuple
    errors: tuple
    slope: Optional[float]
    degenerate: bool


def fit_order(dts: Sequence[float], errors: Sequence[float]) -> ConvergenceResult:
    dts = tuple(float(v) for v in dts)
    errors = tuple(float(v) for v in errors)
    if len(dts) < 3:
        raise ValueError("a convergence ladder needs at least 3 time steps")
    if any(e <= 0.0 for e in errors):
        return ConvergenceResult(dts, errors, None, True)
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    return ConvergenceResult(dts, errors, slope, False)


def convergence_study(dt_ladder: Sequence[float], T: float = 1.0, n_particles: int = 1000, mean0: float = 2.0,
                      var0: float = 0.25, seed: int = 0, zero_velocity: bool = False) -> ConvergenceResult:
    """Terminal mean absolute position error of the exact-score OU flow against the analytic flow map.

    With ``zero_velocity`` the OU ensemble starts at stationarity, where the
    velocity vanishes and every error is zero.
    """
    from .config import ExperimentConfig, validate
    from .transport import ou_score, run_sbtm

    if len(dt_ladder) < 3:
        raise ValueError("a convergence ladder needs at least 3 time steps")
    if zero_velocity:
        mean0, var0 = 0.0, 1.0
    errors = []
    for dt in dt_ladder:
        cfg = validate(ExperimentConfig(example="OU", n_particles=n_particles, dt=dt, T=T, seed=seed,
                                        init_mean=(mean0,), init_std=(math.sqrt(var0),), engines="sbtm",
                                        checkpoint_every=max(1, int(round(T / dt)))))
        rec = run_sbtm(cfg, exact_score=ou_score(mean0, var0))
        x0, xT = rec.positions[0][:, 0], rec.positions[-1][:, 0]
        mu_T = mean0 * math.exp(-T)
        v_T = 1.0 + (var0 - 1.0) * math.exp(-2.0 * T)
        exact = mu_T + (x0 - mean0) * math.sqrt(v_T / var0)
        errors.append(float(np.mean(np.abs(xT - exact))))
    return fit_order(dt_ladder, errors)
