"""Deterministic quadrature over the jump measure and the inner ``lambda`` integral.

Every integral against ``nu(dr)`` is replaced by a weighted node sum, and every
``int_0^1 d lambda`` by composite trapezoid weights on ``[0, 1]``. Nodes are split
into small (``|r| < 1``) and large (``|r| >= 1``) marks by the mark norm.

Stable measures are integrated on a logarithmic grid in ``|r|`` (the trapezoid
rule in ``u = log|r|``), which resolves the ``|r|^{-1-alpha}`` singularity with
a handful of nodes per decade.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from .model import (
    AlphaStable,
    CompoundPoissonGaussian,
    ModelError,
    NoJumps,
    NumericDomainError,
    ProductMeasure,
    SdeModel,
)


class DensityDomainError(NumericDomainError):
    """A density queried by the score oracle was not strictly positive."""


def _unit_rule(n: int, rule: str):
    """Nodes and weights on [0, 1]."""
    if rule == "gauss":
        z, w = np.polynomial.legendre.leggauss(n)
        return 0.5 * (z + 1.0), 0.5 * w
    if rule != "trapezoid":
        raise ModelError(f"unknown quadrature rule {rule!r}")
    if n == 1:
        return np.array([0.5]), np.array([1.0])
    nodes = np.linspace(0.0, 1.0, n)
    w = np.full(n, 1.0 / (n - 1))
    w[0] = w[-1] = 0.5 / (n - 1)
    return nodes, w


def lambda_rule(n_lambda: int, rule: str = "trapezoid"):
    if n_lambda < 1:
        raise ModelError("n_lambda must be positive")
    return _unit_rule(n_lambda, rule)


@dataclass(frozen=True)
class LevyQuadrature:
    small_marks: np.ndarray  # (n_small, q)
    small_weights: np.ndarray
    large_marks: np.ndarray
    large_weights: np.ndarray
    lambda_nodes: np.ndarray
    lambda_weights: np.ndarray
    window: tuple
    rule: str = "trapezoid"

    @property
    def n_lambda(self) -> int:
        return len(self.lambda_nodes)

    @property
    def mark_dim(self) -> int:
        return self.small_marks.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.small_weights) + len(self.large_weights)

    @property
    def empty(self) -> bool:
        return self.n_nodes == 0


def _segment(a: float, b: float, n: int, rule: str):
    t, w = _unit_rule(n, rule)
    return a + (b - a) * t, (b - a) * w


def _split_at_unit(a: float, b: float):
    """Pieces of [a, b] on either side of |r| = 1."""
    cuts = sorted({a, b, *[c for c in (-1.0, 1.0) if a < c < b]})
    return list(zip(cuts[:-1], cuts[1:]))


def _nodes_gaussian(spec: CompoundPoissonGaussian, n_r: int, rule: str):
    marks, weights = [], []
    for a, b in spec.support():
        for lo, hi in _split_at_unit(a, b):
            r, w = _segment(lo, hi, n_r, rule)
            marks.append(r)
            weights.append(w * spec.density(r[:, None]))
    return np.concatenate(marks)[:, None], np.concatenate(weights)


def _nodes_stable(spec: AlphaStable, n_r: int, rule: str):
    marks, weights = [], []
    for a, b in spec.support():
        for lo, hi in _split_at_unit(a, b):
            sign = 1.0 if lo > 0 else -1.0
            ulo, uhi = sorted((math.log(abs(lo)), math.log(abs(hi))))
            u, w = _segment(ulo, uhi, n_r, rule)
            r = sign * np.exp(u)
            marks.append(r)
            weights.append(w * np.abs(r) * spec.density(r[:, None]))
    return np.concatenate(marks)[:, None], np.concatenate(weights)


def _nodes_product(spec: ProductMeasure, n_r: int, rule: str):
    axes, axis_w = [], []
    for f in spec.factors:
        if f.kind == "point":
            axes.append(np.zeros(1))
            axis_w.append(np.ones(1))
        else:
            r, w = _segment(f.window[0], f.window[1], n_r, rule)
            axes.append(r)
            axis_w.append(w * f.density(r))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    wgrid = np.prod(np.stack(np.meshgrid(*axis_w, indexing="ij"), axis=-1).reshape(-1, len(axes)), axis=1)
    return grid, spec.rate * wgrid


def build_quadrature(spec, n_r: int = 64, n_lambda: int = 16, rule: str = "trapezoid") -> LevyQuadrature:
    """Nodes and weights for ``spec``; ``n_r`` counts nodes per window piece and mark dimension."""
    if n_r < 2:
        raise ModelError("n_r must be at least 2")
    lam, lam_w = lambda_rule(n_lambda, rule)
    if isinstance(spec, AlphaStable):
        for a, b in spec.support():
            if a <= 0.0 <= b:
                raise ModelError("alpha-stable window must exclude r = 0")
    if isinstance(spec, NoJumps) or getattr(spec, "rate", 1.0) == 0.0:
        q = getattr(spec, "mark_dim", 1)
        empty = np.zeros((0, q))
        return LevyQuadrature(empty, np.zeros(0), empty.copy(), np.zeros(0), lam, lam_w, (), rule)
    if isinstance(spec, CompoundPoissonGaussian):
        marks, weights = _nodes_gaussian(spec, n_r, rule)
    elif isinstance(spec, AlphaStable):
        marks, weights = _nodes_stable(spec, n_r, rule)
    elif isinstance(spec, ProductMeasure):
        marks, weights = _nodes_product(spec, n_r, rule)
    else:
        raise ModelError(f"unsupported jump measure {type(spec).__name__}")
    keep = weights > 0.0
    marks, weights = marks[keep], weights[keep]
    small = np.linalg.norm(marks, axis=1) < 1.0
    return LevyQuadrature(
        small_marks=marks[small],
        small_weights=weights[small],
        large_marks=marks[~small],
        large_weights=weights[~small],
        lambda_nodes=lam,
        lambda_weights=lam_w,
        window=tuple(spec.support()),
        rule=rule,
    )


def jump_vectors(quad: LevyQuadrature, model: SdeModel, t: float):
    """Small and large jump vectors ``F(r_a, t)``, ``G(r_a, t)`` at the nodes, each ``(n_nodes, d)``."""
    d = model.dim
    fs = np.asarray(model.jump_small(quad.small_marks, t), dtype=float).reshape(-1, d)
    gl = np.asarray(model.jump_large(quad.large_marks, t), dtype=float).reshape(-1, d)
    if not (np.all(np.isfinite(fs)) and np.all(np.isfinite(gl))):
        raise NumericDomainError("non-finite jump coefficient", t=t)
    return fs, gl


def compensator(quad: LevyQuadrature, model: SdeModel, t: float) -> np.ndarray:
    """``sum_small w_a F(r_a, t)``."""
    fs, _ = jump_vectors(quad, model, t)
    if len(fs) == 0:
        return np.zeros(model.dim)
    return quad.small_weights @ fs


def jump_table(quad: LevyQuadrature, model: SdeModel, t: float):
    """All mark-lambda combinations as ``(offsets, jumps, weights)``.

    ``offsets[m] = lambda_l * J_a`` and ``weights[m] = w_a * w_l`` where ``J`` is
    F on small nodes and G on large ones.
    """
    fs, gl = jump_vectors(quad, model, t)
    jumps = np.concatenate([fs, gl])
    w = np.concatenate([quad.small_weights, quad.large_weights])
    offsets = (quad.lambda_nodes[None, :, None] * jumps[:, None, :]).reshape(-1, model.dim)
    weights = (w[:, None] * quad.lambda_weights[None, :]).reshape(-1)
    rep_jumps = np.repeat(jumps, quad.n_lambda, axis=0)
    return offsets, rep_jumps, weights


def levy_score_oracle(quad: LevyQuadrature, model: SdeModel, density: Callable, x, t: float) -> np.ndarray:
    """``-sum_a sum_l w_a w_l J_a p(x - lambda_l J_a) / p(x)``, times the intensity at ``x``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if quad.empty:
        out = np.zeros_like(X)
        return out[0] if np.ndim(x) == 1 else out
    offsets, jumps, weights = jump_table(quad, model, t)
    n, d = X.shape
    shifted = (X[:, None, :] - offsets[None, :, :]).reshape(-1, d)
    p0 = np.asarray(density(X), dtype=float).reshape(n)
    ps = np.asarray(density(shifted), dtype=float).reshape(n, -1)
    if np.any(~(p0 > 0.0)) or np.any(~(ps > 0.0)):
        raise DensityDomainError("density must be strictly positive at every queried point", x=X, t=t)
    ratio = ps / p0[:, None]
    out = -(ratio * weights[None, :]) @ jumps
    out = out * model.intensity(X)[:, None]
    return out[0] if np.ndim(x) == 1 else out


def riesz_constant(beta: float) -> float:
    """Constant of the 1-D Riesz potential ``(-Delta)^{-beta/2} f = C int f(x-u) |u|^{beta-1} du``."""
    return gamma_fn((1.0 - beta) / 2.0) / (2.0**beta * math.sqrt(math.pi) * gamma_fn(beta / 2.0))


def _truncated_riesz_kernel(u, a: float, b: float, alpha: float):
    """``K(u) = int_u^b W(s) ds`` with ``W(s) = (max(s, a)^{-alpha} - b^{-alpha}) / alpha`` for ``0 <= u <= b``."""
    u = np.asarray(u, dtype=float)
    tail = lambda lo: ((b ** (1 - alpha) - lo ** (1 - alpha)) / (1 - alpha) - (b - lo) * b ** (-alpha)) / alpha
    inner = (a - u) * (a ** (-alpha) - b ** (-alpha)) / alpha + tail(a)
    return np.where(u < a, inner, tail(np.clip(u, a, b)))


def fractional_score_check(alpha: float, density: Callable, x, window=((-5.0, -0.01), (0.01, 5.0)),
                           n_r: int = 400, n_lambda: int = 400, n_u: int = 2000, matched: bool = True,
                           density_grad: Optional[Callable] = None):
    """Compare the quadrature Levy score of a unit stable measure with the fractional score.

    lhs is :func:`levy_score_oracle` for ``c_alpha |r|^{-1-alpha}`` on ``window``.
    rhs is ``(-Delta)^{(alpha-2)/2} p'(x) / p(x)`` written as ``c_alpha int K(u) p'(x-u) du / p(x)``.
    With ``matched`` the kernel ``K`` is the one induced by the same mark window
    (bounded at the origin, zero beyond the outer edge); otherwise it is the
    untruncated Riesz kernel ``|u|^{1-alpha} / (alpha (alpha - 1))``, integrated over
    ``|u|`` up to the outer edge.
    """
    if not (1.0 < alpha < 2.0):
        raise ModelError(f"alpha must lie in (1, 2), got {alpha}")
    spec = AlphaStable(alpha, tuple(tuple(map(float, w)) for w in window))
    ident = lambda r, t: np.asarray(r, dtype=float)
    toy = SdeModel(dim=1, drift=lambda X, t: np.zeros_like(X), diffusion=lambda X, t: np.zeros((len(X), 1, 1)),
                   jump_small=ident, jump_large=ident, levy_measure=spec, raw_jumps=False, constant_diffusion=True)
    quad = build_quadrature(spec, n_r, n_lambda)
    x0 = float(np.ravel(x)[0])
    lhs = float(levy_score_oracle(quad, toy, lambda y: density(np.asarray(y)[..., 0]), np.array([x0]), 0.0)[0])

    if density_grad is None:
        h = 1e-5
        density_grad = lambda y: (density(y + h) - density(y - h)) / (2 * h)
    c = spec.c_alpha
    total = 0.0
    edge_terms = []
    for lo, hi in spec.support():
        sign = 1.0 if lo > 0 else -1.0
        a, b = sorted((abs(lo), abs(hi)))
        if matched:
            pieces = []
            for s0, s1 in ((0.0, a), (a, b)):
                un, uw = _segment(s0, s1, n_u, "gauss")
                pieces.append(np.sum(uw * _truncated_riesz_kernel(un, a, b, alpha) * density_grad(x0 - sign * un)))
            total += sum(pieces)
            edge_terms.append(sign * float(_truncated_riesz_kernel(0.0, a, b, alpha)))
        else:
            # u = w^2 removes the |u|^{1-alpha} singularity: du |u|^{1-alpha} = 2 w^{3 - 2 alpha} dw
            wn, ww = _segment(0.0, math.sqrt(b), n_u, "gauss")
            kern = 2.0 * wn ** (3.0 - 2.0 * alpha) * ww / (alpha * (alpha - 1.0))
            total += float(np.sum(kern * density_grad(x0 - sign * wn**2)))
    p0 = float(density(np.array(x0)))
    rhs = c * total / p0
    if matched and len(edge_terms) == 2:
        # asymmetric windows leave a boundary term from the integration by parts
        rhs += c * (-(edge_terms[0] + edge_terms[1]))
    return lhs, rhs
