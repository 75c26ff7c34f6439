"""Trainable score network.

A plain MLP ``s(x)`` with Swish hidden activations, written directly in numpy so
that the three quantities the sequential loss needs are exact:

* the forward value ``s(x)``,
* the input Jacobian columns ``ds/dx_j`` (forward-mode tangent sweeps, one per
  input coordinate), which give the divergence,
* parameter gradients of any scalar that is linear in outputs and tangents
  (a reverse sweep through both the primal and the tangent passes).

Quadratic loss terms are handled by the caller: run :func:`forward_cache`, build
cotangents from the outputs, then call :func:`backward`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

DEFAULT_HIDDEN = (32, 32, 32)


class TrainingDivergenceError(FloatingPointError):
    """Raised when a loss, gradient or parameter stops being finite."""

    def __init__(self, message: str, sample_index: Optional[int] = None):
        super().__init__(message)
        self.sample_index = sample_index


class DegenerateTargetError(ValueError):
    """Raised when an initial-score target is identically zero."""


# ---------------------------------------------------------------------------
# activation


def swish(z):
    return z * expit(z)


def _swish_derivs(z, n_second: int = 0):
    """Swish value and first derivative on all rows; second derivative on the first ``n_second``."""
    sig = expit(z)
    val = z * sig
    d1 = 1.0 - sig
    d1 *= z
    d1 += 1.0
    d1 *= sig
    d2 = None
    if n_second:
        zs, ss = z[:n_second], sig[:n_second]
        d2 = ss * (1.0 - ss) * (2.0 + zs * (1.0 - 2.0 * ss))
    return val, d1, d2


# ---------------------------------------------------------------------------
# network


@dataclass
class ScoreNetwork:
    """MLP parameters. ``params[l] = (W, b)`` with ``W`` of shape (fan_in, fan_out)."""

    layer_dims: tuple
    params: list
    activation: str = "swish"
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.params)

    def __call__(self, x):
        return forward(self, x)

    def divergence(self, x):
        return divergence(self, x)

    def copy(self) -> "ScoreNetwork":
        return ScoreNetwork(
            self.layer_dims,
            [(W.copy(), b.copy()) for W, b in self.params],
            self.activation,
            self.seed,
        )

    def flat(self) -> np.ndarray:
        return flatten(self.params)

    def with_flat(self, theta: np.ndarray) -> "ScoreNetwork":
        return ScoreNetwork(self.layer_dims, unflatten(theta, self.layer_dims), self.activation, self.seed)


def init_network(dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0) -> ScoreNetwork:
    """Glorot-uniform weights, zero biases, seeded."""
    dims = (dim, *hidden, dim)
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return ScoreNetwork(dims, params, "swish", seed)


def zero_network(dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> ScoreNetwork:
    dims = (dim, *hidden, dim)
    params = [(np.zeros((a, b)), np.zeros(b)) for a, b in zip(dims[:-1], dims[1:])]
    return ScoreNetwork(dims, params)


def linear_network(A, b=None) -> ScoreNetwork:
    """Single affine layer ``s(x) = A x + b`` (no hidden layers)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    return ScoreNetwork((d, d), [(A.T.copy(), b.copy())])


def flatten(params) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])


def unflatten(theta, layer_dims) -> list:
    params = []
    pos = 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        W = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out].copy()
        pos += fan_out
        params.append((W, b))
    if pos != len(theta):
        raise ValueError(f"parameter vector length {len(theta)} does not match layers {layer_dims}")
    return params


# ---------------------------------------------------------------------------
# core sweeps


@dataclass
class _Cache:
    n_tan: int
    inputs: list = field(default_factory=list)  # h_{l-1} for each layer
    tan_inputs: list = field(default_factory=list)  # tangent h_{l-1}, shape (d, n_tan, width) or None
    d1: list = field(default_factory=list)
    d2: list = field(default_factory=list)
    tan_pre: list = field(default_factory=list)  # tangent z_l


def forward_cache(net: ScoreNetwork, x, n_tan: int = 0):
    """Forward pass on rows of ``x`` with tangent sweeps on the first ``n_tan`` rows.

    Returns ``(out, tan_out, cache)`` where ``tan_out[j]`` holds ``ds/dx_j`` for the
    tangent rows (shape ``(d, n_tan, d)``), or ``None`` when ``n_tan == 0``.
    """
    x = np.asarray(x, dtype=float)
    d = net.dim
    cache = _Cache(n_tan)
    h = x
    th = None
    n_layers = len(net.params)
    for l, (W, b) in enumerate(net.params):
        cache.inputs.append(h)
        cache.tan_inputs.append(th)
        z = h @ W + b
        if n_tan:
            if th is None:
                # tangent of the input is e_j: picks row j of W
                tz = np.broadcast_to(W[:, None, :], (d, n_tan, W.shape[1]))
            else:
                tz = th @ W
        else:
            tz = None
        cache.tan_pre.append(tz)
        if l < n_layers - 1:
            val, d1, d2 = _swish_derivs(z, n_tan)
            cache.d1.append(d1)
            cache.d2.append(d2)
            h = val
            th = d1[:n_tan] * tz if n_tan else None
        else:
            cache.d1.append(None)
            cache.d2.append(None)
            h = z
            th = tz
    return h, (np.array(th) if n_tan else None), cache


def backward(net: ScoreNetwork, cache: _Cache, cot_out, cot_tan=None) -> list:
    """Parameter gradient of ``sum(cot_out * out) + sum(cot_tan * tan_out)``."""
    n_tan = cache.n_tan
    n_layers = len(net.params)
    grads = [None] * n_layers
    g = cot_out  # cotangent of h_l (primal)
    gt = cot_tan if n_tan else None  # cotangent of tangent h_l, (d, n_tan, width)
    for l in range(n_layers - 1, -1, -1):
        W, _ = net.params[l]
        if l < n_layers - 1:
            d1 = cache.d1[l]
            if gt is not None:
                gz_t = d1[:n_tan] * gt
                gz = d1 * g
                gz[:n_tan] += cache.d2[l] * np.einsum("jnw,jnw->nw", cache.tan_pre[l], gt)
            else:
                gz_t = None
                gz = d1 * g
        else:
            gz = g
            gz_t = gt
        h_in = cache.inputs[l]
        gW = h_in.T @ gz
        gb = gz.sum(axis=0)
        th_in = cache.tan_inputs[l]
        if gz_t is not None:
            if th_in is None:
                # input tangents are unit vectors: contributes sum_n gz_t[j, n, :] to row j
                gW = gW + gz_t.sum(axis=1)
            else:
                gW = gW + np.einsum("jni,jno->io", th_in, gz_t)
        grads[l] = (gW, gb)
        if l > 0:
            g = gz @ W.T
            gt = gz_t @ W.T if gz_t is not None else None
    return grads


# ---------------------------------------------------------------------------
# public operations


def forward(net: ScoreNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    h = X
    n_layers = len(net.params)
    for l, (W, b) in enumerate(net.params):
        z = h @ W + b
        h = swish(z) if l < n_layers - 1 else z
    return h[0] if single else h


def jacobian(net: ScoreNetwork, x) -> np.ndarray:
    """Input Jacobian ``J[n, k, j] = d s_k / d x_j`` per row."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    _, tan, _ = forward_cache(net, X, n_tan=len(X))
    return np.transpose(tan, (1, 2, 0))


def divergence(net: ScoreNetwork, x, sigma_fn: Optional[Callable] = None, sigma_div: Optional[Callable] = None):
    """Exact ``div s`` or, with ``sigma_fn``/``sigma_div``, ``div(Sigma s)`` per row."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.dim:
        raise ValueError(f"input dimension {X.shape[1]} does not match network dimension {net.dim}")
    if (sigma_fn is None) != (sigma_div is None):
        raise ValueError("sigma_fn and sigma_div must be given together")
    out, tan, _ = forward_cache(net, X, n_tan=len(X))
    if sigma_fn is None:
        res = np.einsum("jnj->n", tan)
    else:
        S = np.asarray(sigma_fn(X))  # (n, d, d)
        # sum_jk Sigma_jk d_j s_k + (div Sigma) . s
        res = np.einsum("njk,jnk->n", S, tan) + np.einsum("nk,nk->n", np.asarray(sigma_div(X)), out)
    return res[0] if single else res


def lipschitz_bound(net: ScoreNetwork) -> float:
    """Product of weight Frobenius norms times the Swish Lipschitz constant per hidden layer."""
    # sup |swish'| = 1.0998...
    c = 1.0998393194
    bound = 1.0
    for l, (W, _) in enumerate(net.params):
        bound *= np.linalg.norm(W)
        if l < len(net.params) - 1:
            bound *= c
    return float(bound)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(net: ScoreNetwork, learning_rate: float = 1e-4) -> AdamState:
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.params]
    return AdamState(m, v, 0, learning_rate)


def adam_step(net: ScoreNetwork, state: AdamState, grad):
    """One bias-corrected Adam update. Returns a new network and a new state."""
    for gW, gb in grad:
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise TrainingDivergenceError("non-finite gradient passed to adam_step")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    # eps is applied to the bias-corrected second moment, as in the usual formulation
    eps_t = state.eps * math.sqrt(1.0 - b2**t)
    new_params, new_m, new_v = [], [], []
    for (W, b), (gW, gb), (mW, mb), (vW, vb) in zip(net.params, grad, state.m, state.v):
        out = []
        for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            p = p - lr_t * m / (np.sqrt(v) + eps_t)
            out.append((p, m, v))
        (W2, mW2, vW2), (b2_, mb2, vb2) = out
        new_params.append((W2, b2_))
        new_m.append((mW2, mb2))
        new_v.append((vW2, vb2))
    for W, b in new_params:
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise TrainingDivergenceError("parameters became non-finite after an Adam step")
    new_net = ScoreNetwork(net.layer_dims, new_params, net.activation, net.seed)
    new_state = AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.eps)
    return new_net, new_state


def add_grads(a, b):
    return [(aW + bW, ab + bb) for (aW, ab), (bW, bb) in zip(a, b)]


def scale_grads(a, c):
    return [(c * W, c * b) for W, b in a]


# ---------------------------------------------------------------------------
# checkpoints


def save_network(net: ScoreNetwork, path) -> None:
    """Write a JSON header line followed by the parameters as little-endian float64."""
    header = {
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "seed": net.seed,
        "n_params": net.n_params,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(net.flat().astype("<f8").tobytes())


def load_network(path) -> ScoreNetwork:
    raw = Path(path).read_bytes()
    line, _, body = raw.partition(b"\n")
    header = json.loads(line)
    theta = np.frombuffer(body, dtype="<f8").astype(float)
    dims = tuple(header["layer_dims"])
    return ScoreNetwork(dims, unflatten(theta, dims), header["activation"], header["seed"])


# ---------------------------------------------------------------------------
# loss-level entry points (implemented with the batch machinery in ``training``)


def loss_gradient(net: ScoreNetwork, loss_terms):
    """Exact parameter gradient of the sequential loss described by ``loss_terms``."""
    from .training import loss_and_grad

    return loss_and_grad(net, loss_terms)[1]


def fit_initial_score(net, model, quad, samples_from_mu0, mu0_density, mu0_grad_log, **kwargs):
    """Fit the initial score; see :func:`levysbtm.training.fit_initial_score`."""
    from .training import fit_initial_score as _fit

    return _fit(net, model, quad, samples_from_mu0, mu0_density, mu0_grad_log, **kwargs)
