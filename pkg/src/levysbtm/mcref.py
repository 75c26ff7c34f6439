"""Euler-Maruyama Monte Carlo reference with counter-addressed random streams.

Each step draws a fixed number of raw 64-bit words per particle from a Philox
block keyed by ``(seed, purpose, step)``. Particle ``i`` always reads words
``i * slots ... (i + 1) * slots - 1`` of that block, so its draws do not depend
on the ensemble size, the worker count or the order in which particles are
processed.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

import numpy as np
from scipy.special import gammaincinv, ndtri
from scipy.stats import binom, poisson

from .model import (
    AlphaStable,
    CompoundPoissonGaussian,
    NoJumps,
    NumericDomainError,
    ProductMeasure,
    SdeModel,
    interaction_average,
)
from .transport import ParticleEnsemble, TrajectoryRecord, checkpoint_due, initial_ensemble, setup_run

_TWO_M52 = 2.0**-52


def words_to_uniform(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to uniforms in the open interval (0, 1) using the top 52 bits.

    52 rather than 53 bits: ``(2^53 - 1 + 0.5) * 2^-53`` rounds to exactly 1.0.
    """
    return ((words >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_M52


class RngStream:
    """Counter-based generator: ``(seed, purpose, counter)`` fixes every draw."""

    def __init__(self, seed: int, purpose: int = 0):
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = int(seed)
        self.purpose = int(purpose)
        self._seq = 0

    def _generator(self, counter: int) -> np.random.Philox:
        return np.random.Philox(key=[self.seed, self.purpose], counter=[0, 0, int(counter), 0])

    def block(self, counter: int, n_streams: int, slots: int) -> np.ndarray:
        """Uniforms of shape ``(n_streams, slots)``; row ``i`` is stream ``i``'s draws at ``counter``."""
        words = self._generator(counter).random_raw(n_streams * slots)
        return words_to_uniform(np.asarray(words, dtype=np.uint64)).reshape(n_streams, slots)

    def uniform(self, size=None) -> np.ndarray:
        """Sequential draws for ad hoc use; each call advances an internal counter."""
        n = int(np.prod(size)) if size is not None else 1
        self._seq += 1
        u = words_to_uniform(np.asarray(self._generator(2**62 + self._seq).random_raw(n), dtype=np.uint64))
        return u.reshape(size) if size is not None else float(u[0])

    def normal(self, size=None):
        u = self.uniform(size)
        return ndtri(u)


def _uniforms(rng, size):
    if isinstance(rng, RngStream):
        return rng.uniform(size)
    return rng.uniform(size=size)


def stable_from_uniforms(alpha: float, u_angle, u_exp) -> np.ndarray:
    """Symmetric alpha-stable variates (unit scale) from two uniform arrays via the angle/exponential transform."""
    v = math.pi * (np.asarray(u_angle) - 0.5)
    w = -np.log(u_exp)
    if alpha == 1.0:
        return np.tan(v)
    return np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha) * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)


def sample_stable(alpha: float, scale: float, rng, size=None):
    """Draws with characteristic function ``exp(-|scale k|^alpha)``; ``alpha = 2`` gives ``N(0, 2 scale^2)``."""
    if not (0.0 < alpha <= 2.0):
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    shape = size if size is not None else ()
    n = int(np.prod(shape)) if shape != () else 1
    u = _uniforms(rng, (2, n))
    x = scale * stable_from_uniforms(alpha, u[0], u[1])
    return x.reshape(shape) if size is not None else float(x[0])


# ---------------------------------------------------------------------------
# Euler-Maruyama

JUMP_SLOTS = 4
PURPOSE_STEP = 1


def _jump_increment(model: SdeModel, X: np.ndarray, t: float, dt: float, u: np.ndarray) -> np.ndarray:
    """Jump increment over one step from uniforms ``u`` of shape ``(n, JUMP_SLOTS)``."""
    spec = model.levy_measure
    n, d = X.shape
    if isinstance(spec, NoJumps) or not model.has_jumps:
        return np.zeros((n, d))
    if isinstance(spec, CompoundPoissonGaussian):
        lam = spec.rate * model.intensity(X) * dt
        count = poisson.ppf(u[:, 0], lam)
        total = count * spec.mean + np.sqrt(count) * spec.std * ndtri(u[:, 1])
        return np.asarray(model.jump_small(total[:, None], t), dtype=float)
    if isinstance(spec, AlphaStable):
        incr = spec.scale * dt ** (1.0 / spec.alpha) * stable_from_uniforms(spec.alpha, u[:, 0], u[:, 1])
        return np.asarray(model.jump_small(incr[:, None], t), dtype=float)
    if isinstance(spec, ProductMeasure):
        return _product_jumps(model, spec, X, t, dt, u)
    raise NumericDomainError(f"no Monte Carlo sampler for {type(spec).__name__}")


def _product_jumps(model, spec, X, t, dt, u):
    """State-dependent compound Poisson jumps by thinning against the ensemble maximum rate.

    Candidates ``K ~ Poisson(Lambda_max dt)`` are accepted with probability
    ``Lambda(x) / Lambda_max``; the accepted count ``A ~ Binomial(K, .)`` then has
    law ``Poisson(Lambda(x) dt)``. Sums of ``A`` marks use the closed-form sum laws
    of each factor.
    """
    rate = spec.rate * model.intensity(X)
    lam_max = float(np.max(rate)) if len(rate) else 0.0
    if lam_max <= 0.0:
        return np.zeros_like(X)
    cand = poisson.ppf(u[:, 0], lam_max * dt)
    accepted = binom.ppf(u[:, 1], cand, np.clip(rate / lam_max, 0.0, 1.0))
    sums = np.zeros((len(X), len(spec.factors)))
    for k, f in enumerate(spec.factors):
        slot = u[:, 2 + min(k, 1)]
        if f.kind == "shifted_lognormal":
            mu, sig = f.params
            # sum of A iid N(mu, sig^2) variables in the log(1 + r) coordinate
            log_sum = accepted * mu + np.sqrt(accepted) * sig * ndtri(slot)
            sums[:, k] = log_sum
        elif f.kind == "exponential":
            g = np.where(accepted > 0, gammaincinv(np.maximum(accepted, 1.0), slot), 0.0)
            sums[:, k] = f.params[0] * g
        elif f.kind == "gaussian":
            m, s = f.params
            sums[:, k] = accepted * m + np.sqrt(accepted) * s * ndtri(slot)
        elif f.kind == "point":
            sums[:, k] = 0.0
    return _apply_summed_marks(model, spec, sums, t)


def _apply_summed_marks(model, spec, sums, t):
    """Jump vector for summed marks.

    Log-normal factors are summed in ``log(1 + r)``; converting back before calling
    the jump coefficient keeps ``F`` as the single source of the state update.
    """
    marks = sums.copy()
    for k, f in enumerate(spec.factors):
        if f.kind == "shifted_lognormal":
            marks[:, k] = np.expm1(sums[:, k])
    return np.asarray(model.jump_small(marks, t), dtype=float)


def em_step(ens: ParticleEnsemble, model: SdeModel, dt: float, rng: RngStream, step: int = 0) -> ParticleEnsemble:
    """One Euler-Maruyama step with raw Poisson jumps and the empirical interaction."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    X, t = ens.positions, ens.time
    n = len(X)
    sig = np.asarray(model.diffusion(X, t), dtype=float)
    m = sig.shape[2]
    u = rng.block(step, n, m + JUMP_SLOTS)
    drift = np.asarray(model.drift(X, t), dtype=float)
    if not model.interaction.is_zero:
        drift = drift + interaction_average(model.interaction, X)
    noise = math.sqrt(dt) * np.einsum("nij,nj->ni", sig, ndtri(u[:, :m]))
    new = X + dt * drift + noise + _jump_increment(model, X, t, dt, u[:, m:])
    if not np.all(np.isfinite(new)):
        bad = np.flatnonzero(~np.all(np.isfinite(new), axis=1))
        raise NumericDomainError(f"non-finite Monte Carlo state at particles {bad[:5].tolist()}", x=X[bad], t=t)
    return replace(ens, positions=new, time=t + dt)


def em_run(config, n_particles: Optional[int] = None) -> TrajectoryRecord:
    """Monte Carlo trajectory on the same checkpoint grid as the transport run."""
    model, _, law = setup_run(config)
    n = n_particles or config.n_mc
    mc_seed = config.mc_seed if config.mc_seed >= 0 else config.seed + 1_000_003
    ens = initial_ensemble(config, law, n, stratified=False, stream=1)
    ens = replace(ens, log_density=None)
    rng = RngStream(mc_seed, PURPOSE_STEP)
    record = TrajectoryRecord("mc", config_hash=config.hash())
    record.add(0, ens)
    for k in range(config.n_steps):
        ens = replace(ens, time=k * config.dt)
        try:
            ens = em_step(ens, model, config.dt, rng, step=k)
        except (FloatingPointError, ValueError) as exc:
            exc.args = (f"step {k}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
            raise
        ens = replace(ens, time=(k + 1) * config.dt)
        if checkpoint_due(config, k + 1):
            record.add(k + 1, ens)
    record.meta["n_particles"] = n
    return record
