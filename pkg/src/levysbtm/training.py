"""Sequential score-matching loss and its minimisation.

Per sample ``x_i`` the loss is

    |s(x_i)|^2 + div(Sigma s)(x_i) + 2 s(x_i) . k_i
        + 2 Lambda(x_i) sum_m w_m s(x_i + U_m) . J_m,

averaged over the batch. ``k_i`` is the empirical interaction average (only
for the with-interaction variant) and ``U_m = lambda_l J_a`` runs over all
mark/lambda pairs. The shift offsets ``U_m`` are shared by every particle, and
pairs with ``lambda = 0`` reuse the network value at ``x_i`` itself.

Gradients are computed chunk by chunk over samples, with a fixed chunk size and
a fixed reduction order, so results do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import scorenet
from .levyquad import LevyQuadrature, jump_table
from .model import SdeModel, interaction_average
from .scorenet import AdamState, ScoreNetwork, TrainingDivergenceError

WITH_INTERACTION = "with_interaction"
WITHOUT_INTERACTION = "without_interaction"

VARIANT_ALIASES = {
    "alg1": WITH_INTERACTION,
    "with_interaction": WITH_INTERACTION,
    "withinteraction": WITH_INTERACTION,
    "alg2": WITHOUT_INTERACTION,
    "without_interaction": WITHOUT_INTERACTION,
    "withoutinteraction": WITHOUT_INTERACTION,
}

CHUNK = 128


def normalize_variant(variant: str) -> str:
    key = str(variant).lower()
    if key not in VARIANT_ALIASES:
        raise ValueError(f"unknown variant {variant!r}")
    return VARIANT_ALIASES[key]


def worker_count() -> int:
    raw = os.environ.get("LEVYSBTM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class BatchLossSpec:
    samples: np.ndarray
    time: float
    variant: str
    quad: LevyQuadrature
    model: SdeModel

    def __post_init__(self):
        object.__setattr__(self, "samples", np.ascontiguousarray(np.atleast_2d(self.samples), dtype=float))
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if not np.all(np.isfinite(self.samples)):
            raise TrainingDivergenceError("non-finite sample in batch")

    @property
    def n(self) -> int:
        return len(self.samples)

    @cached_property
    def _table(self):
        if self.quad.empty or not self.model.has_jumps:
            d = self.model.dim
            return np.zeros((0, d)), np.zeros((0, d)), np.zeros(0)
        return jump_table(self.quad, self.model, self.time)

    @cached_property
    def shift_offsets(self) -> np.ndarray:
        """Offsets with nonzero ``lambda`` (shared by all samples)."""
        off, _, _ = self._table
        return off[self._moving]

    @cached_property
    def _moving(self) -> np.ndarray:
        off, _, w = self._table
        return np.any(off != 0.0, axis=1)

    @cached_property
    def shift_weights(self) -> np.ndarray:
        """``w_m J_m`` for the moving offsets, shape ``(M, d)``."""
        _, jumps, w = self._table
        return (w[:, None] * jumps)[self._moving]

    @cached_property
    def self_weight(self) -> np.ndarray:
        """Sum of ``w_m J_m`` over offsets that coincide with the sample point."""
        _, jumps, w = self._table
        keep = ~self._moving
        return (w[keep, None] * jumps[keep]).sum(axis=0) if np.any(keep) else np.zeros(self.model.dim)

    def _points(self, nodes, jumps_fn):
        n_node = len(nodes)
        L = self.quad.n_lambda
        if n_node == 0:
            return np.zeros((self.n, 0, L, self.model.dim))
        J = np.asarray(jumps_fn(nodes, self.time), dtype=float).reshape(n_node, -1)
        off = self.quad.lambda_nodes[None, :, None] * J[:, None, :]
        return self.samples[:, None, None, :] + off[None]

    @cached_property
    def shift_points_small(self) -> np.ndarray:
        """``x_i + lambda_l F(r_a, t)`` with shape ``(N, n_small, n_lambda, d)``."""
        return self._points(self.quad.small_marks, self.model.jump_small)

    @cached_property
    def shift_points_large(self) -> np.ndarray:
        return self._points(self.quad.large_marks, self.model.jump_large)

    @cached_property
    def sigma(self) -> np.ndarray:
        return np.ascontiguousarray(self.model.diffusion_matrix(self.samples, self.time), dtype=float)

    @cached_property
    def sigma_div(self) -> np.ndarray:
        return np.asarray(self.model.diffusion_div(self.samples, self.time), dtype=float)

    @cached_property
    def intensity(self) -> np.ndarray:
        return self.model.intensity(self.samples)

    @cached_property
    def interaction(self) -> np.ndarray:
        if self.variant == WITHOUT_INTERACTION or self.model.interaction.is_zero:
            return np.zeros_like(self.samples)
        return interaction_average(self.model.interaction, self.samples)


def _chunk_bounds(n: int, chunk: int = CHUNK):
    return [(a, min(a + chunk, n)) for a in range(0, n, chunk)]


def _per_sample_terms(spec: BatchLossSpec, s, tan, s_shift, a: int, b: int):
    """Loss terms for samples ``a:b``; returns dict of arrays of length ``b - a``."""
    sq = np.einsum("nk,nk->n", s, s)
    div = np.einsum("njk,jnk->n", spec.sigma[a:b], tan) + np.einsum("nk,nk->n", spec.sigma_div[a:b], s)
    inter = 2.0 * np.einsum("nk,nk->n", s, spec.interaction[a:b])
    lam = spec.intensity[a:b]
    jump = s @ spec.self_weight
    if s_shift is not None:
        jump = jump + np.einsum("nmk,mk->n", s_shift, spec.shift_weights)
    return {"square": sq, "divergence": div, "interaction": inter, "jump": 2.0 * lam * jump}


def _check_terms(terms, offset: int):
    for name, arr in terms.items():
        bad = ~np.isfinite(arr)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0]) + offset
            raise TrainingDivergenceError(f"non-finite {name} term at sample {i}", sample_index=i)


def _rows(spec: BatchLossSpec, a: int, b: int):
    x = spec.samples[a:b]
    off = spec.shift_offsets
    if len(off) == 0:
        return x
    shifted = (x[:, None, :] + off[None, :, :]).reshape(-1, x.shape[1])
    return np.concatenate([x, shifted])


def _chunk_eval(net: ScoreNetwork, spec: BatchLossSpec, a: int, b: int, want_grad: bool):
    n = b - a
    d = spec.model.dim
    M = len(spec.shift_offsets)
    out, tan, cache = scorenet.forward_cache(net, _rows(spec, a, b), n_tan=n)
    s = out[:n]
    s_shift = out[n:].reshape(n, M, d) if M else None
    terms = _per_sample_terms(spec, s, tan, s_shift, a, b)
    _check_terms(terms, a)
    per_sample = terms["square"] + terms["divergence"] + terms["interaction"] + terms["jump"]
    if not want_grad:
        return per_sample, None
    N = spec.n
    lam = spec.intensity[a:b]
    cot = np.empty_like(out)
    cot[:n] = (2.0 * s + spec.sigma_div[a:b] + 2.0 * spec.interaction[a:b]
               + 2.0 * lam[:, None] * spec.self_weight[None, :]) / N
    if M:
        cot[n:] = ((2.0 / N) * lam[:, None, None] * spec.shift_weights[None, :, :]).reshape(-1, d)
    # tangent cotangent: d/d(ds_k/dx_j) of sum_jk Sigma_jk ds_k/dx_j
    cot_tan = np.transpose(spec.sigma[a:b], (1, 0, 2)) / N
    grads = scorenet.backward(net, cache, cot, cot_tan)
    return per_sample, grads


def _run_chunks(net, spec, want_grad: bool, workers: Optional[int] = None):
    bounds = _chunk_bounds(spec.n)
    workers = worker_count() if workers is None else workers
    job = lambda ab: _chunk_eval(net, spec, ab[0], ab[1], want_grad)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, bounds))
    else:
        results = [job(ab) for ab in bounds]
    per_sample = np.concatenate([r[0] for r in results])
    loss = math.fsum(per_sample.tolist()) / spec.n
    if not math.isfinite(loss):
        raise TrainingDivergenceError("non-finite loss")
    if not want_grad:
        return loss, None
    grads = results[0][1]
    for r in results[1:]:
        grads = scorenet.add_grads(grads, r[1])
    return loss, grads


def assemble_loss(net: ScoreNetwork, spec: BatchLossSpec) -> float:
    """Batch-averaged sequential loss."""
    loss, _ = _run_chunks(net, spec, want_grad=False)
    return loss


def loss_and_grad(net: ScoreNetwork, spec: BatchLossSpec, workers: Optional[int] = None):
    """Loss value and its exact parameter gradient."""
    return _run_chunks(net, spec, want_grad=True, workers=workers)


class TelemetryWriter:
    """Appends ``(step, iteration, loss)`` rows to a CSV file."""

    def __init__(self, path):
        self.path = path
        new = not os.path.exists(path)
        self._fh = open(path, "a", newline="")
        self._w = csv.writer(self._fh)
        if new:
            self._w.writerow(["step", "iteration", "loss"])

    def write(self, step: int, iteration: int, loss: float):
        self._w.writerow([step, iteration, repr(float(loss))])

    def close(self):
        self._fh.close()


def train_step(net: ScoreNetwork, state: AdamState, spec: BatchLossSpec, budget: int = 100,
               tol: float = 1e-8, patience: int = 10, telemetry: Optional[TelemetryWriter] = None,
               step_index: int = 0):
    """Run up to ``budget`` Adam iterations; stop early when the loss falls by less
    than ``tol`` over ``patience`` iterations. Returns ``(net, state, final_loss)``."""
    history = []
    for it in range(budget):
        loss, grads = loss_and_grad(net, spec)
        history.append(loss)
        if telemetry is not None:
            telemetry.write(step_index, it, loss)
        if len(history) > patience and history[-1 - patience] - history[-1] < tol:
            break
        net, state = scorenet.adam_step(net, state, grads)
    final = assemble_loss(net, spec)
    return net, state, final


def oracle_gap(net: ScoreNetwork, spec: BatchLossSpec, oracle_score: Callable) -> float:
    """``max_i |s(x_i) - oracle(x_i)|`` over the batch."""
    diff = scorenet.forward(net, spec.samples) - np.asarray(oracle_score(spec.samples), dtype=float)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def loss_target(spec: BatchLossSpec, density: Callable, grad_log: Callable) -> np.ndarray:
    """Score target ``Sigma grad log p / 2 + Levy score - k`` for a known density, on the batch."""
    from .levyquad import levy_score_oracle

    X = spec.samples
    target = 0.5 * np.einsum("nij,nj->ni", spec.sigma, grad_log(X))
    if not spec.quad.empty and spec.model.has_jumps:
        target = target + levy_score_oracle(spec.quad, spec.model, density, X, spec.time)
    return target - spec.interaction


def fit_initial_score(net: ScoreNetwork, model: SdeModel, quad: LevyQuadrature, samples, mu0_density: Callable,
                      mu0_grad_log: Callable, variant: str = WITH_INTERACTION, t0: float = 0.0,
                      budget: int = 2000, learning_rate: float = 1e-3, tol: float = 0.0):
    """Fit ``s`` to the known initial score by minimising ``sum|s - target|^2 / sum|target|^2``.

    Returns ``(net, relative_loss)``. Stops early once the relative loss is below ``tol``.
    """
    spec = BatchLossSpec(samples, t0, variant, quad, model)
    target = loss_target(spec, mu0_density, mu0_grad_log)
    denom = math.fsum(np.einsum("nk,nk->n", target, target).tolist())
    if not denom > 0.0:
        raise scorenet.DegenerateTargetError("initial score target is identically zero")
    X = spec.samples
    state = scorenet.adam_init(net, learning_rate)

    def relative(nw):
        out, _, cache = scorenet.forward_cache(nw, X, 0)
        r = out - target
        val = math.fsum(np.einsum("nk,nk->n", r, r).tolist()) / denom
        return val, r, cache

    rel, resid, cache = relative(net)
    for _ in range(budget):
        if rel <= tol:
            break
        grads = scorenet.backward(net, cache, 2.0 * resid / denom)
        net, state = scorenet.adam_step(net, state, grads)
        rel, resid, cache = relative(net)
        if not math.isfinite(rel):
            raise TrainingDivergenceError("initial fit diverged")
    return net, rel
