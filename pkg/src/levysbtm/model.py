"""Jump-diffusion McKean-Vlasov models and the example catalog.

Coefficients are vectorised over rows: states ``x`` have shape ``(n, d)``, marks
``r`` have shape ``(n, q)``. A model describes

    dX = b dt + (K * p) dt + sigma dB + jumps,

where the jumps are either written against the compensated small-jump measure
(``raw_jumps=False``) or are the raw Poisson jumps of the physical model
(``raw_jumps=True``, used by all shipped examples). In the raw form the drift
``b`` already is the drift of the physical SDE, so the small-jump compensator
cancels out of the probability-flow velocity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.stats import lognorm, norm


class ModelError(ValueError):
    """Invalid model declaration or parameter override."""


class NumericDomainError(FloatingPointError):
    """A coefficient returned a non-finite value."""

    def __init__(self, message, x=None, t=None):
        super().__init__(message)
        self.x = x
        self.t = t


class SingularKernelError(NumericDomainError):
    """Unregularised Biot-Savart kernel evaluated at the origin."""


class UnboundedKernelWarning(UserWarning):
    """The interaction kernel violates the bounded-kernel assumption."""


# ---------------------------------------------------------------------------
# interaction kernels


@dataclass(frozen=True)
class InteractionKernel:
    """``kind`` is one of ``none``, ``bounded``, ``biot_savart``, ``linear``."""

    kind: str = "none"
    func: Optional[Callable] = None
    bound: float = math.inf
    eps: float = 0.0
    divergence: Optional[Callable] = None
    unbounded_flag: bool = False

    def __post_init__(self):
        if self.kind not in ("none", "bounded", "biot_savart", "linear"):
            raise ModelError(f"unknown interaction kernel kind {self.kind!r}")
        if self.kind == "biot_savart" and self.eps < 0:
            raise ModelError("Biot-Savart regulariser must be >= 0")
        if self.kind == "bounded" and self.func is None:
            raise ModelError("bounded kernel needs a function")

    @property
    def is_zero(self) -> bool:
        return self.kind == "none"


def no_interaction() -> InteractionKernel:
    return InteractionKernel("none")


def linear_kernel() -> InteractionKernel:
    """``K(x) = x``. Unbounded, admitted with a warning."""
    warnings.warn("linear interaction kernel is unbounded", UnboundedKernelWarning, stacklevel=2)
    return InteractionKernel("linear", unbounded_flag=True)


def biot_savart_kernel(eps: float = 0.0) -> InteractionKernel:
    return InteractionKernel("biot_savart", eps=float(eps))


def bounded_kernel(func: Callable, bound: float, dim: int, probe_half_width: float = 10.0, n_probe: int = 21,
                   divergence: Optional[Callable] = None) -> InteractionKernel:
    """Bounded kernel; ``|K| <= bound`` is checked on a probe grid of ``[-w, w]^dim``."""
    axes = [np.linspace(-probe_half_width, probe_half_width, n_probe)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    vals = np.asarray(func(grid))
    if np.any(np.linalg.norm(vals, axis=-1) > bound * (1 + 1e-12)):
        raise ModelError(f"kernel exceeds its declared bound {bound} on the probe grid")
    return InteractionKernel("bounded", func=func, bound=float(bound), divergence=divergence)


def eval_kernel(kernel: InteractionKernel, x) -> np.ndarray:
    """Evaluate ``K`` at rows of ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if kernel.kind == "none":
        out = np.zeros_like(X)
    elif kernel.kind == "linear":
        out = X.copy()
    elif kernel.kind == "bounded":
        out = np.asarray(kernel.func(X), dtype=float)
    else:
        if X.shape[1] != 2:
            raise ModelError("Biot-Savart kernel requires d = 2")
        r2 = np.sum(X * X, axis=1) + kernel.eps
        if np.any(r2 == 0.0):
            raise SingularKernelError("Biot-Savart kernel with eps = 0 evaluated at the origin", x=X[r2 == 0.0])
        out = np.stack([-X[:, 1], X[:, 0]], axis=1) / (2.0 * math.pi * r2[:, None])
    return out[0] if single else out


def kernel_divergence(kernel: InteractionKernel, x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if kernel.kind == "none" or kernel.kind == "biot_savart":
        return np.zeros(len(X))
    if kernel.kind == "linear":
        return np.full(len(X), float(X.shape[1]))
    if kernel.divergence is not None:
        return np.asarray(kernel.divergence(X), dtype=float)
    return _fd_divergence(lambda y: eval_kernel(kernel, y), X)


def interaction_average(kernel: InteractionKernel, x, others=None, chunk: int = 512) -> np.ndarray:
    """Empirical convolution ``(1/M) sum_j K(x_i - y_j)``, self term included."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = X if others is None else np.atleast_2d(np.asarray(others, dtype=float))
    if kernel.kind == "none":
        return np.zeros_like(X)
    if kernel.kind == "linear":
        return X - Y.mean(axis=0)
    out = np.empty_like(X)
    for start in range(0, len(X), chunk):
        xi = X[start : start + chunk]
        diff = (xi[:, None, :] - Y[None, :, :]).reshape(-1, X.shape[1])
        out[start : start + chunk] = eval_kernel(kernel, diff).reshape(len(xi), len(Y), -1).mean(axis=1)
    return out


# ---------------------------------------------------------------------------
# Levy measures


def stable_constant(alpha: float) -> float:
    """Jump-density constant of the symmetric alpha-stable law with ``E exp(ikL_1) = exp(-|k|^alpha)``."""
    return alpha * gamma_fn((1.0 + alpha) / 2.0) / (2.0 ** (1.0 - alpha) * math.sqrt(math.pi) * gamma_fn(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class CompoundPoissonGaussian:
    """``nu(dr) = rate * N(mean, std^2)(dr)`` on a 1-D mark space."""

    rate: float
    mean: float
    std: float
    n_std: float = 3.0
    windows: Optional[tuple] = None

    kind = "compound_poisson_gaussian"
    mark_dim = 1

    def support(self) -> tuple:
        if self.windows is not None:
            return self.windows
        return ((self.mean - self.n_std * self.std, self.mean + self.n_std * self.std),)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return self.rate * norm.pdf(r[..., 0], self.mean, self.std)

    def factor_densities(self):
        return [lambda r: self.rate * norm.pdf(r, self.mean, self.std)]


@dataclass(frozen=True)
class AlphaStable:
    """Symmetric stable jump measure ``c_alpha |r|^{-1-alpha} dr`` with ``c_alpha`` from :func:`stable_constant`."""

    alpha: float
    windows: tuple = ((-5.0, -0.01), (0.01, 5.0))
    scale: float = 1.0  # sigma_L; jumps are F(r) = scale * r

    kind = "alpha_stable"
    mark_dim = 1

    def __post_init__(self):
        if not (1.0 < self.alpha <= 2.0):
            raise ModelError(f"alpha must lie in (1, 2], got {self.alpha}")
        for a, b in self.windows:
            if a <= 0.0 <= b:
                raise ModelError("alpha-stable truncation windows must exclude the origin")

    @property
    def c_alpha(self) -> float:
        return stable_constant(self.alpha)

    def support(self) -> tuple:
        return tuple(self.windows)

    def density(self, r):
        r = np.asarray(r, dtype=float)[..., 0]
        return self.c_alpha * np.abs(r) ** (-1.0 - self.alpha)

    def factor_densities(self):
        c = self.c_alpha
        return [lambda r: c * np.abs(r) ** (-1.0 - self.alpha)]


@dataclass(frozen=True)
class MarkFactor:
    """One coordinate of a product jump-size measure.

    ``kind``: ``gaussian`` (mean, std), ``shifted_lognormal`` (mu, sigma: ``r + 1`` is
    log-normal), ``exponential`` (mean), ``point`` (point mass at 0).
    """

    kind: str
    params: tuple
    window: tuple = (0.0, 0.0)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian":
            return norm.pdf(r, self.params[0], self.params[1])
        if self.kind == "shifted_lognormal":
            mu, sig = self.params
            return lognorm.pdf(r + 1.0, s=sig, scale=math.exp(mu))
        if self.kind == "exponential":
            mean = self.params[0]
            return np.where(r >= 0, np.exp(-np.clip(r, 0, None) / mean) / mean, 0.0)
        if self.kind == "point":
            return np.ones_like(r)
        raise ModelError(f"unknown mark factor {self.kind!r}")


@dataclass(frozen=True)
class ProductMeasure:
    """``nu = rate * prod_k factor_k``; point-mass factors contribute a single node at 0."""

    factors: tuple
    rate: float = 1.0

    kind = "product"

    @property
    def mark_dim(self) -> int:
        return len(self.factors)

    def support(self) -> tuple:
        return tuple(f.window for f in self.factors)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape[:-1], self.rate)
        for k, f in enumerate(self.factors):
            if f.kind != "point":
                out = out * f.density(r[..., k])
        return out


@dataclass(frozen=True)
class NoJumps:
    kind = "none"
    mark_dim = 1
    rate = 0.0

    def support(self) -> tuple:
        return ()


# ---------------------------------------------------------------------------
# SDE model


def _fd_divergence(func, X, h: float = 1e-5):
    d = X.shape[1]
    acc = np.zeros(len(X))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        acc += (func(X + e)[:, j] - func(X - e)[:, j]) / (2 * h)
    return acc


@dataclass(frozen=True)
class SdeModel:
    dim: int
    drift: Callable
    diffusion: Callable
    jump_small: Callable
    jump_large: Callable
    levy_measure: object
    interaction: InteractionKernel = field(default_factory=no_interaction)
    diffusion_matrix_fn: Optional[Callable] = None
    diffusion_div_fn: Optional[Callable] = None
    intensity_scale: Optional[Callable] = None
    drift_div: Optional[Callable] = None
    diffusion_div_div: Optional[Callable] = None
    raw_jumps: bool = True
    jumps_equal: bool = True  # F == G
    constant_diffusion: bool = False
    domain: str = "full"  # or "torus"
    half_width: float = math.inf
    name: str = "custom"
    params: Mapping = field(default_factory=dict)

    def diffusion_matrix(self, x, t):
        if self.diffusion_matrix_fn is not None:
            return self.diffusion_matrix_fn(x, t)
        s = self.diffusion(x, t)
        return np.einsum("nik,njk->nij", s, s)

    def diffusion_div(self, x, t):
        """Vector with components ``sum_j d_j Sigma_ij``."""
        X = np.atleast_2d(x)
        if self.diffusion_div_fn is not None:
            return self.diffusion_div_fn(X, t)
        if self.constant_diffusion:
            return np.zeros_like(X, dtype=float)
        h = 1e-5
        acc = np.zeros((len(X), self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            dS = (self.diffusion_matrix(X + e, t) - self.diffusion_matrix(X - e, t)) / (2 * h)
            acc += dS[:, :, j]
        return acc

    def intensity(self, x):
        X = np.atleast_2d(x)
        if self.intensity_scale is None:
            return np.ones(len(X))
        return np.asarray(self.intensity_scale(X), dtype=float)

    def drift_divergence(self, x, t):
        X = np.atleast_2d(x)
        if self.drift_div is not None:
            return self.drift_div(X, t)
        return _fd_divergence(lambda y: self.drift(y, t), X)

    def diffusion_div_divergence(self, x, t):
        X = np.atleast_2d(x)
        if self.diffusion_div_div is not None:
            return self.diffusion_div_div(X, t)
        if self.constant_diffusion:
            return np.zeros(len(X))
        return _fd_divergence(lambda y: self.diffusion_div(y, t), X)

    @property
    def has_jumps(self) -> bool:
        return self.levy_measure.kind != "none" and getattr(self.levy_measure, "rate", 1.0) != 0.0


def _check_finite(arr, what, x, t):
    if not np.all(np.isfinite(arr)):
        bad = ~np.all(np.isfinite(np.reshape(arr, (len(arr), -1))), axis=1)
        raise NumericDomainError(f"non-finite {what}", x=np.atleast_2d(x)[bad], t=t)
    return arr


def eval_hat_drift(model: SdeModel, x, t: float, comp=None) -> np.ndarray:
    """``b - Lambda(x) comp - div(Sigma)/2`` at rows of ``x``.

    ``comp`` is the small-jump compensator; ``None`` means zero. Callers that
    integrate a raw-jump model pass :func:`velocity_compensator` instead.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    b = _check_finite(np.asarray(model.drift(X, t), dtype=float), "drift", X, t)
    out = b - 0.5 * _check_finite(model.diffusion_div(X, t), "diffusion divergence", X, t)
    if comp is not None:
        comp = np.asarray(comp, dtype=float)
        if np.any(comp != 0.0):
            out = out - model.intensity(X)[:, None] * comp[None, :]
    return out[0] if np.ndim(x) == 1 else out


def velocity_compensator(model: SdeModel, comp) -> np.ndarray:
    """Compensator entering the flow velocity: zero when the jumps are raw Poisson jumps."""
    comp = np.asarray(comp, dtype=float)
    return np.zeros_like(comp) if model.raw_jumps else comp


def hat_drift_divergence(model: SdeModel, x, t: float, comp=None) -> np.ndarray:
    """Divergence of :func:`eval_hat_drift` in ``x``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = model.drift_divergence(X, t) - 0.5 * model.diffusion_div_divergence(X, t)
    if comp is not None and model.intensity_scale is not None and np.any(np.asarray(comp) != 0.0):
        comp = np.asarray(comp, dtype=float)
        out = out - _fd_divergence(lambda y: model.intensity(y)[:, None] * comp[None, :], X)
    return out


# ---------------------------------------------------------------------------
# catalog


CATALOG: dict = {}


def register_model(key: str, defaults: Mapping):
    """Register a model builder ``builder(params) -> SdeModel`` with its default parameters."""

    def deco(builder):
        CATALOG[key] = (builder, dict(defaults))
        return builder

    return deco


def model_defaults(key: str) -> dict:
    if key not in CATALOG:
        raise ModelError(f"unknown model {key!r}; known: {sorted(CATALOG)}")
    return dict(CATALOG[key][1])


def build_example(key: str, overrides: Optional[Mapping] = None) -> SdeModel:
    """Build a catalog model with parameter overrides applied to its defaults."""
    alias = {"ex1": "Ex1", "ex2": "Ex2", "ex3": "Ex3", "ex4": "Ex4", "ou": "OU"}
    key = alias.get(str(key).lower(), key)
    if key not in CATALOG:
        raise ModelError(f"unknown model {key!r}; known: {sorted(CATALOG)}")
    builder, defaults = CATALOG[key]
    params = dict(defaults)
    for name, value in dict(overrides or {}).items():
        if name not in defaults:
            raise ModelError(f"model {key} has no parameter {name!r}")
        ref = defaults[name]
        if isinstance(ref, bool) or isinstance(value, bool):
            if not isinstance(value, bool) or not isinstance(ref, bool):
                raise ModelError(f"parameter {name!r} expects {type(ref).__name__}, got {type(value).__name__}")
        elif isinstance(ref, (int, float)):
            if not isinstance(value, (int, float)):
                raise ModelError(f"parameter {name!r} expects a number, got {type(value).__name__}")
            value = type(ref)(value) if isinstance(ref, float) else value
        elif isinstance(ref, (list, tuple)):
            if not isinstance(value, (list, tuple)) or len(value) != len(ref):
                raise ModelError(f"parameter {name!r} expects a sequence of length {len(ref)}")
            value = tuple(float(v) for v in value)
        params[name] = value
    model = builder(params)
    return replace(model, name=key, params=params)


def _const_sigma(d: int, sigma):
    S = np.diag(np.broadcast_to(np.asarray(sigma, dtype=float), (d,)))
    SS = S @ S.T

    def diffusion(x, t):
        return np.broadcast_to(S, (len(np.atleast_2d(x)), d, d))

    def diffusion_matrix(x, t):
        return np.broadcast_to(SS, (len(np.atleast_2d(x)), d, d))

    return diffusion, diffusion_matrix


def _zeros_div(x, t):
    return np.zeros_like(np.atleast_2d(x), dtype=float)


def _zero_scalar(x, t):
    return np.zeros(len(np.atleast_2d(x)))


def _identity_jump(r, t):
    return np.asarray(r, dtype=float)


@register_model("OU", {"dim": 1, "theta": 1.0, "sigma": math.sqrt(2.0)})
def _build_ou(p):
    d = int(p["dim"])
    theta = p["theta"]
    diffusion, dmat = _const_sigma(d, p["sigma"])
    zero_jump = lambda r, t: np.zeros((len(r), d))
    return SdeModel(
        dim=d,
        drift=lambda x, t: -theta * np.atleast_2d(x),
        diffusion=diffusion,
        diffusion_matrix_fn=dmat,
        diffusion_div_fn=_zeros_div,
        jump_small=zero_jump,
        jump_large=zero_jump,
        levy_measure=NoJumps(),
        drift_div=lambda x, t: np.full(len(np.atleast_2d(x)), -theta * d),
        diffusion_div_div=_zero_scalar,
        constant_diffusion=True,
    )


@register_model("Ex1", {"kappa": 1.0, "eta": 1.0, "sigma": 2.0, "rate": 30.0, "jump_mean": 0.1,
                        "jump_std": 1.0 / 24.0})
def _build_ex1(p):
    kappa, eta = p["kappa"], p["eta"]
    diffusion, dmat = _const_sigma(1, p["sigma"])
    return SdeModel(
        dim=1,
        drift=lambda x, t: kappa * (eta - np.atleast_2d(x)),
        diffusion=diffusion,
        diffusion_matrix_fn=dmat,
        diffusion_div_fn=_zeros_div,
        jump_small=_identity_jump,
        jump_large=_identity_jump,
        levy_measure=CompoundPoissonGaussian(p["rate"], p["jump_mean"], p["jump_std"]),
        drift_div=lambda x, t: np.full(len(np.atleast_2d(x)), -kappa),
        diffusion_div_div=_zero_scalar,
        constant_diffusion=True,
    )


@register_model("Ex2", {"kappa": 1.0, "eta": 1.0, "sigma": 2.0, "alpha": 1.5,
                        "window": (-5.0, -0.01, 0.01, 5.0)})
def _build_ex2(p):
    kappa, eta = p["kappa"], p["eta"]
    w = p["window"]
    diffusion, dmat = _const_sigma(1, p["sigma"])
    return SdeModel(
        dim=1,
        drift=lambda x, t: kappa * (eta - np.atleast_2d(x)),
        diffusion=diffusion,
        diffusion_matrix_fn=dmat,
        diffusion_div_fn=_zeros_div,
        jump_small=_identity_jump,
        jump_large=_identity_jump,
        levy_measure=AlphaStable(p["alpha"], ((w[0], w[1]), (w[2], w[3]))),
        drift_div=lambda x, t: np.full(len(np.atleast_2d(x)), -kappa),
        diffusion_div_div=_zero_scalar,
        constant_diffusion=True,
        raw_jumps=False,
    )


@register_model("Ex3", {"sigma": 2.0, "rate": 30.0, "jump_mean": 0.1, "jump_std": 1.0 / 24.0})
def _build_ex3(p):
    diffusion, dmat = _const_sigma(2, p["sigma"])

    def drift(x, t):
        X = np.atleast_2d(x)
        return np.stack([X[:, 0] - X[:, 0] ** 3, X[:, 1]], axis=1)

    def drift_div(x, t):
        X = np.atleast_2d(x)
        return 2.0 - 3.0 * X[:, 0] ** 2

    def jump(r, t):
        r = np.asarray(r, dtype=float)
        return np.concatenate([r[:, :1], np.zeros((len(r), 1))], axis=1)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnboundedKernelWarning)
        kernel = linear_kernel()
    return SdeModel(
        dim=2,
        drift=drift,
        diffusion=diffusion,
        diffusion_matrix_fn=dmat,
        diffusion_div_fn=_zeros_div,
        jump_small=jump,
        jump_large=jump,
        levy_measure=CompoundPoissonGaussian(p["rate"], p["jump_mean"], p["jump_std"]),
        interaction=kernel,
        drift_div=drift_div,
        diffusion_div_div=_zero_scalar,
        constant_diffusion=True,
    )


EX4_DEFAULTS = {
    "gamma": 0.04, "delta": 0.015, "kappa_v": 3.1206, "kappa_m": 3.3168, "alpha_m": 0.1125,
    "sigma_v": 0.394, "sigma_m": 0.0835, "rho": -0.688,
    "lambda0": 2.096, "lambda1": 21.225, "lambda2": 0.0,
    "mu_s": -0.012, "sigma_s": 0.043, "mu_jv": 0.002,
    "window_s": (-0.17, 0.17), "window_v": (0.0, 0.0015),
    "abs_floor": 1e-8,
}


@register_model("Ex4", EX4_DEFAULTS)
def _build_ex4(p):
    g, dl = p["gamma"], p["delta"]
    kv, km, am = p["kappa_v"], p["kappa_m"], p["alpha_m"]
    sv, sm, rho = p["sigma_v"], p["sigma_m"], p["rho"]
    l0, l1, l2 = p["lambda0"], p["lambda1"], p["lambda2"]
    jbar = math.exp(p["mu_s"] + p["sigma_s"] ** 2 / 2.0) - 1.0
    floor = p["abs_floor"]
    c22 = math.sqrt(1.0 - rho**2)

    def rate(X):
        return l0 + l1 * X[:, 1] + l2 * X[:, 2]

    def drift(x, t):
        X = np.atleast_2d(x)
        s_dot = g - dl - X[:, 1] / 2.0 - rate(X) * jbar
        v_dot = kv * (X[:, 2] - X[:, 1])
        m_dot = km * (am - X[:, 2])
        return np.stack([s_dot, v_dot, m_dot], axis=1)

    def diffusion(x, t):
        X = np.atleast_2d(x)
        rv = np.sqrt(np.maximum(np.abs(X[:, 1]), floor))
        rm = np.sqrt(np.maximum(np.abs(X[:, 2]), floor))
        S = np.zeros((len(X), 3, 3))
        S[:, 0, 0] = rv
        S[:, 1, 0] = sv * rv
        S[:, 1, 1] = sv * c22 * rv
        S[:, 2, 2] = sm * rm
        return S

    def diffusion_matrix(x, t):
        X = np.atleast_2d(x)
        av = np.maximum(np.abs(X[:, 1]), floor)
        amm = np.maximum(np.abs(X[:, 2]), floor)
        S = np.zeros((len(X), 3, 3))
        S[:, 0, 0] = av
        S[:, 0, 1] = S[:, 1, 0] = sv * av
        S[:, 1, 1] = sv**2 * (1.0 + c22**2) * av
        S[:, 2, 2] = sm**2 * amm
        return S

    def diffusion_div(x, t):
        X = np.atleast_2d(x)
        dv = np.where(np.abs(X[:, 1]) > floor, np.sign(X[:, 1]), 0.0)
        dm = np.where(np.abs(X[:, 2]) > floor, np.sign(X[:, 2]), 0.0)
        return np.stack([sv * dv, sv**2 * (1.0 + c22**2) * dv, sm**2 * dm], axis=1)

    def jump(r, t):
        r = np.asarray(r, dtype=float)
        return np.stack([np.log1p(r[:, 0]), r[:, 1], np.zeros(len(r))], axis=1)

    measure = ProductMeasure(
        (
            MarkFactor("shifted_lognormal", (p["mu_s"], p["sigma_s"]), tuple(p["window_s"])),
            MarkFactor("exponential", (p["mu_jv"],), tuple(p["window_v"])),
        )
    )
    return SdeModel(
        dim=3,
        drift=drift,
        diffusion=diffusion,
        diffusion_matrix_fn=diffusion_matrix,
        diffusion_div_fn=diffusion_div,
        jump_small=jump,
        jump_large=jump,
        levy_measure=measure,
        intensity_scale=lambda X: np.maximum(rate(np.atleast_2d(X)), 0.0),
        drift_div=lambda x, t: np.full(len(np.atleast_2d(x)), -kv - km),
        diffusion_div_div=_zero_scalar,
    )


# initial laws used by the examples: (mean, std per coordinate)
INITIAL_LAWS = {
    "OU": lambda d: (np.zeros(d), np.ones(d)),
    "Ex1": lambda d: (np.zeros(1), np.ones(1)),
    "Ex2": lambda d: (np.zeros(1), np.ones(1)),
    "Ex3": lambda d: (np.zeros(2), np.ones(2)),
    "Ex4": lambda d: (np.full(3, 5.0), np.ones(3)),
}


@dataclass(frozen=True)
class GaussianLaw:
    """Diagonal Gaussian initial law."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)

    def density(self, x):
        X = np.atleast_2d(x)
        z = (X - self.mean) / self.std
        return np.exp(-0.5 * np.sum(z * z, axis=1)) / np.prod(self.std * math.sqrt(2 * math.pi))

    def log_density(self, x):
        X = np.atleast_2d(x)
        z = (X - self.mean) / self.std
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.std * math.sqrt(2 * math.pi)))

    def grad_log(self, x):
        X = np.atleast_2d(x)
        return -(X - self.mean) / self.std**2

    def sample(self, n: int, rng: np.random.Generator, stratified: bool = False) -> np.ndarray:
        """iid draws, or a Latin-hypercube design (jittered quantiles, independently permuted per coordinate)."""
        d = self.dim
        if not stratified:
            return self.mean + self.std * rng.standard_normal((n, d))
        u = (np.arange(n)[:, None] + rng.uniform(size=(n, d))) / n
        for j in range(d):
            u[:, j] = u[rng.permutation(n), j]
        return self.mean + self.std * norm.ppf(u)


def initial_law(key: str, model: SdeModel, mean: Optional[Sequence] = None, std: Optional[Sequence] = None) -> GaussianLaw:
    base_mean, base_std = INITIAL_LAWS.get(key, lambda d: (np.zeros(d), np.ones(d)))(model.dim)
    m = base_mean if mean is None else np.broadcast_to(np.asarray(mean, dtype=float), (model.dim,))
    s = base_std if std is None else np.broadcast_to(np.asarray(std, dtype=float), (model.dim,))
    return GaussianLaw(np.array(m, dtype=float), np.array(s, dtype=float))
