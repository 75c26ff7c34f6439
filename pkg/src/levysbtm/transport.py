"""Deterministic particle transport along the learned probability flow.

The velocity of particle ``x_i`` at time ``t`` is

    f(x_i) = b(x_i, t) - comp - div(Sigma)/2 - s(x_i)        (with interaction in s)
    f(x_i) = ... + (1/N) sum_j K(x_i - x_j)                  (interaction explicit)

and positions move by forward Euler. Log-densities follow the same flow through
``d log p / dt = -div f``.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import scorenet
from .levyquad import LevyQuadrature, build_quadrature, compensator
from .model import (
    NumericDomainError,
    SdeModel,
    build_example,
    eval_hat_drift,
    hat_drift_divergence,
    initial_law,
    interaction_average,
    kernel_divergence,
    velocity_compensator,
)
from .scorenet import ScoreNetwork
from .training import (
    WITH_INTERACTION,
    WITHOUT_INTERACTION,
    BatchLossSpec,
    TelemetryWriter,
    assemble_loss,
    fit_initial_score,
    normalize_variant,
    train_step,
)


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    time: float = 0.0
    log_density: Optional[np.ndarray] = None
    lineage: int = 0

    def __post_init__(self):
        pos = np.ascontiguousarray(np.atleast_2d(np.asarray(self.positions, dtype=float)))
        object.__setattr__(self, "positions", pos)
        if not np.all(np.isfinite(pos)):
            raise NumericDomainError("non-finite particle position", t=self.time)
        if self.log_density is not None:
            ld = np.asarray(self.log_density, dtype=float).reshape(len(pos))
            if not np.all(np.isfinite(ld)):
                raise NumericDomainError("non-finite log-density", t=self.time)
            object.__setattr__(self, "log_density", ld)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class AnalyticScore:
    """A closed-form score ``fn(x, t)`` with divergence ``div(x, t)``, used in place of a trained network."""

    fn: Callable
    div: Optional[Callable] = None

    def values(self, x, t):
        return np.asarray(self.fn(np.atleast_2d(x), t), dtype=float)

    def divergence(self, x, t):
        X = np.atleast_2d(x)
        if self.div is not None:
            return np.asarray(self.div(X, t), dtype=float)
        h = 1e-5
        acc = np.zeros(len(X))
        for j in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[j] = h
            acc += (self.fn(X + e, t)[:, j] - self.fn(X - e, t)[:, j]) / (2 * h)
        return acc


def ou_score(mean0, var0, theta: float = 1.0, sigma2: float = 2.0) -> AnalyticScore:
    """Exact score of the Gaussian OU marginal started from ``N(mean0, var0)``.

    The flow target is ``(sigma^2 / 2) grad log p_t``.
    """
    m0, v0 = float(mean0), float(var0)
    vinf = sigma2 / (2 * theta)

    def moments(t):
        return m0 * np.exp(-theta * t), vinf + (v0 - vinf) * np.exp(-2 * theta * t)

    def fn(x, t):
        mu, v = moments(t)
        return -(sigma2 / 2) * (x - mu) / v

    def div(x, t):
        _, v = moments(t)
        return np.full(len(x), -(sigma2 / 2) * x.shape[1] / v)

    return AnalyticScore(fn, div)


def _score_values(score, x, t):
    if isinstance(score, ScoreNetwork):
        return scorenet.forward(score, x)
    return score.values(x, t)


def _score_div(score, x, t):
    if isinstance(score, ScoreNetwork):
        return scorenet.divergence(score, x)
    return score.divergence(x, t)


def _comp(model: SdeModel, quad: Optional[LevyQuadrature], t: float):
    if quad is None or quad.empty or not model.has_jumps:
        return np.zeros(model.dim)
    return velocity_compensator(model, compensator(quad, model, t))


def velocity(ens: ParticleEnsemble, score, model: SdeModel, quad, explicit_interaction: bool = False) -> np.ndarray:
    x, t = ens.positions, ens.time
    v = eval_hat_drift(model, x, t, _comp(model, quad, t)) - _score_values(score, x, t)
    if explicit_interaction and not model.interaction.is_zero:
        v = v + interaction_average(model.interaction, x)
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("non-finite velocity", x=x, t=t)
    return v


def velocity_divergence(ens: ParticleEnsemble, score, model: SdeModel, quad, explicit_interaction: bool = False):
    x, t = ens.positions, ens.time
    div = hat_drift_divergence(model, x, t, _comp(model, quad, t)) - _score_div(score, x, t)
    if explicit_interaction and not model.interaction.is_zero:
        kern = model.interaction
        if kern.kind in ("linear", "biot_savart"):
            # constant divergence (d or 0) at every pairwise difference
            div = div + kernel_divergence(kern, x[:1])[0]
        else:
            div = div + np.array([kernel_divergence(kern, xi - x).mean() for xi in x])
    return div


def _propagate(ens, score, model, quad, dt, explicit):
    if dt == 0:
        return ens
    v = velocity(ens, score, model, quad, explicit)
    return replace(ens, positions=ens.positions + dt * v, time=ens.time + dt)


def propagate_alg1(ens: ParticleEnsemble, net, model: SdeModel, quad, dt: float) -> ParticleEnsemble:
    """Euler step of the flow with the interaction absorbed into the score."""
    return _propagate(ens, net, model, quad, dt, False)


def propagate_alg2(ens: ParticleEnsemble, net, model: SdeModel, quad, dt: float) -> ParticleEnsemble:
    """Euler step with the empirical interaction average added explicitly."""
    return _propagate(ens, net, model, quad, dt, True)


def update_log_density(ens: ParticleEnsemble, net, model: SdeModel, quad, dt: float,
                       explicit_interaction: bool = False) -> ParticleEnsemble:
    """``log p_i -= dt * div f(x_i)``; positions are left unchanged."""
    if ens.log_density is None:
        raise ValueError("ensemble carries no log-density")
    div = velocity_divergence(ens, net, model, quad, explicit_interaction)
    return replace(ens, log_density=ens.log_density - dt * div)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryRecord:
    engine: str
    steps: List[int] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    positions: List[np.ndarray] = field(default_factory=list)
    log_densities: List[Optional[np.ndarray]] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    config_hash: str = ""
    meta: dict = field(default_factory=dict)
    wall_clock: float = 0.0  # not serialised, so written artifacts stay reproducible

    def add(self, step: int, ens: ParticleEnsemble):
        self.steps.append(int(step))
        self.times.append(float(ens.time))
        self.positions.append(ens.positions.copy())
        self.log_densities.append(None if ens.log_density is None else ens.log_density.copy())

    def write(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for step, pos, ld in zip(self.steps, self.positions, self.log_densities):
            write_checkpoint_csv(out / f"step_{step:06d}.csv", pos, ld)
        manifest = {
            "engine": self.engine,
            "steps": self.steps,
            "times": [repr(t) for t in self.times],
            "losses": [repr(float(v)) for v in self.losses],
            "config_hash": self.config_hash,
        }
        manifest.update(self.meta)
        (out / "trajectory.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return out


def write_checkpoint_csv(path, positions, log_density=None):
    d = positions.shape[1]
    cols = ["id"] + [f"x{j + 1}" for j in range(d)] + (["log_density"] if log_density is not None else [])
    lines = [",".join(cols)]
    for i, row in enumerate(positions):
        vals = [str(i)] + [repr(float(v)) for v in row]
        if log_density is not None:
            vals.append(repr(float(log_density[i])))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint_csv(path):
    raw = np.genfromtxt(path, delimiter=",", names=True)
    names = [n for n in raw.dtype.names if n.startswith("x")]
    pos = np.column_stack([raw[n] for n in names]).astype(float)
    ld = np.asarray(raw["log_density"], dtype=float) if "log_density" in raw.dtype.names else None
    return pos, ld


def load_trajectory(directory) -> TrajectoryRecord:
    d = Path(directory)
    manifest = json.loads((d / "trajectory.json").read_text())
    rec = TrajectoryRecord(manifest["engine"], config_hash=manifest.get("config_hash", ""))
    for step, t in zip(manifest["steps"], manifest["times"]):
        pos, ld = read_checkpoint_csv(d / f"step_{step:06d}.csv")
        rec.steps.append(step)
        rec.times.append(float(t))
        rec.positions.append(pos)
        rec.log_densities.append(ld)
    rec.losses = [float(v) for v in manifest.get("losses", [])]
    return rec


# ---------------------------------------------------------------------------
# driver


def setup_run(config):
    """Model, quadrature and initial law for a config."""
    model = build_example(config.example, config.model_overrides)
    quad = build_quadrature(model.levy_measure, config.n_r, config.n_lambda, config.quad_rule)
    law = initial_law(config.example, model, config.init_mean, config.init_std)
    return model, quad, law


def initial_ensemble(config, law, n: int, stratified: bool, stream: int = 0) -> ParticleEnsemble:
    rng = np.random.Generator(np.random.Philox(key=[config.seed, stream]))
    x = law.sample(n, rng, stratified=stratified)
    return ParticleEnsemble(x, 0.0, law.log_density(x) if config.track_density else None, lineage=config.seed)


def checkpoint_due(config, step: int) -> bool:
    return step % config.checkpoint_every == 0 or step == config.n_steps


def run_sbtm(config, exact_score=None, progress: Optional[Callable] = None) -> TrajectoryRecord:
    """Alternate training and propagation; ``exact_score`` bypasses training."""
    model, quad, law = setup_run(config)
    variant = normalize_variant(config.variant)
    explicit = variant == WITHOUT_INTERACTION
    ens = initial_ensemble(config, law, config.n_particles, config.init_sampling == "stratified")
    record = TrajectoryRecord("sbtm", config_hash=config.hash())
    record.add(0, ens)
    started = _time.time()
    telemetry = None
    if config.telemetry and config.output_dir:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        telemetry = TelemetryWriter(Path(config.output_dir) / "telemetry.csv")
    nets_dir = None
    if config.save_networks and config.output_dir and exact_score is None:
        nets_dir = Path(config.output_dir) / "networks"
        nets_dir.mkdir(parents=True, exist_ok=True)

    score = exact_score
    state = None
    init_rel = None
    if score is None:
        net = scorenet.init_network(model.dim, tuple(config.hidden), seed=config.seed)
        score, init_rel = fit_initial_score(
            net, model, quad, ens.positions, law.density, law.grad_log, variant=variant,
            budget=config.init_budget, learning_rate=config.init_learning_rate,
        )
        state = scorenet.adam_init(score, config.learning_rate)
    try:
        for k in range(config.n_steps):
            t = k * config.dt
            ens = replace(ens, time=t)
            if exact_score is None:
                spec = BatchLossSpec(ens.positions, t, variant, quad, model)
                if k == 0:
                    loss = assemble_loss(score, spec)
                else:
                    score, state, loss = train_step(score, state, spec, config.budget, telemetry=telemetry,
                                                    step_index=k)
                record.losses.append(loss)
                if nets_dir is not None:
                    scorenet.save_network(score, nets_dir / f"net_{k:06d}.bin")
            if ens.log_density is not None:
                ens = update_log_density(ens, score, model, quad, config.dt, explicit)
            ens = (propagate_alg2 if explicit else propagate_alg1)(ens, score, model, quad, config.dt)
            ens = replace(ens, time=(k + 1) * config.dt)
            if checkpoint_due(config, k + 1):
                record.add(k + 1, ens)
            if progress is not None:
                progress(k + 1, config.n_steps)
    except (FloatingPointError, ValueError) as exc:
        exc.args = (f"step {k}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise
    finally:
        if telemetry is not None:
            telemetry.close()
    record.meta["initial_relative_loss"] = None if init_rel is None else repr(float(init_rel))
    record.wall_clock = _time.time() - started
    return record
