"""Gamma densities, single-Gamma ML fitting and EM for finite Gamma mixtures.

Each mode has a free shape ``a`` and rate ``lam`` (mean ``a/lam``, variance
``a/lam**2``). The mixture EM updates the weights in closed form; the rate
and shape updates are coupled through the inverse digamma function and are
solved jointly inside each M-step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, polygamma, xlogy

log = logging.getLogger(__name__)


class DegenerateDataError(ValueError):
    """Samples carry no spread (or too few values) to fit a Gamma density."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GammaMode:
    a: float
    lam: float

    def __post_init__(self):
        if not (self.a > 0 and self.lam > 0 and math.isfinite(self.a) and math.isfinite(self.lam)):
            raise ValueError(f"Gamma mode needs positive finite shape and rate, got a={self.a}, lam={self.lam}")

    @property
    def mean(self) -> float:
        return self.a / self.lam

    @property
    def variance(self) -> float:
        return self.a / self.lam**2

    @classmethod
    def from_moments(cls, mean: float, std: float) -> "GammaMode":
        """Moment inversion: ``a = m**2/s**2``, ``lam = m/s**2``."""
        if mean <= 0 or std <= 0:
            raise ValueError("mean and std must be positive")
        return cls(mean**2 / std**2, mean / std**2)


@dataclass(frozen=True)
class GammaMixture:
    modes: tuple[GammaMode, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        weights = tuple(float(w) for w in self.weights)
        if len(modes) < 1:
            raise ValueError("mixture needs at least one mode")
        if len(weights) != len(modes):
            raise ValueError("one weight per mode required")
        if any(not w > 0 for w in weights):
            raise ValueError("mixture weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {sum(weights)}, expected 1")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def single(cls, mode: GammaMode) -> "GammaMixture":
        return cls((mode,), (1.0,))

    @classmethod
    def from_arrays(cls, a, lam, weights) -> "GammaMixture":
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        return cls(tuple(GammaMode(float(x), float(r)) for x, r in zip(a, lam)), tuple(w.tolist()))

    @property
    def K(self) -> int:
        return len(self.modes)

    @property
    def shapes(self) -> np.ndarray:
        return np.array([m.a for m in self.modes])

    @property
    def rates(self) -> np.ndarray:
        return np.array([m.lam for m in self.modes])

    @property
    def mean(self) -> float:
        return float(sum(w * m.mean for w, m in zip(self.weights, self.modes)))

    def to_dict(self) -> dict:
        return {
            "modes": [{"a": m.a, "lambda": m.lam} for m in self.modes],
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GammaMixture":
        modes = tuple(GammaMode(float(m["a"]), float(m["lambda"])) for m in d["modes"])
        return cls(modes, tuple(float(w) for w in d["weights"]))


# -- densities ---------------------------------------------------------------

def gamma_logpdf(y, a, lam):
    """Log Gamma density, vectorised; ``-inf`` where the density is zero."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return a * np.log(lam) - gammaln(a) + xlogy(a - 1.0, y) - lam * y


def gamma_pdf(y, mode: GammaMode):
    """Gamma density at ``y``; at ``y == 0`` gives +inf (a<1), lam (a==1) or 0 (a>1)."""
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("gamma_pdf needs finite y")
    if np.any(y_arr < 0):
        raise ValueError("gamma_pdf needs y >= 0")
    with np.errstate(divide="ignore", over="ignore"):
        out = np.exp(gamma_logpdf(y_arr, mode.a, mode.lam))
    return float(out) if out.ndim == 0 else out


def mixture_logpdf(y, mix: GammaMixture):
    y = np.asarray(y, dtype=np.float64)
    comp = np.stack([gamma_logpdf(y, m.a, m.lam) for m in mix.modes], axis=-1)
    with np.errstate(divide="ignore"):
        comp = comp + np.log(np.asarray(mix.weights))
    return logsumexp(comp, axis=-1)


def mixture_pdf(y, mix: GammaMixture):
    if not mix.modes:
        raise ValueError("empty mixture")
    y_arr = np.asarray(y, dtype=np.float64)
    out = sum(w * np.asarray(gamma_pdf(y_arr, m)) for w, m in zip(mix.weights, mix.modes))
    return float(out) if np.ndim(out) == 0 else out


# -- digamma inversion ------------------------------------------------------

def inverse_psi(v: float, tol: float = 1e-14, max_iter: int = 100) -> float:
    """Solve ``digamma(x) = v`` for ``x > 0`` by Newton's method.

    Starting point: ``exp(v) + 1/2`` for ``v >= -2.22``, else ``-1/(v + euler_gamma)``.
    """
    if not math.isfinite(v):
        raise ValueError("inverse_psi needs a finite argument")
    x = math.exp(v) + 0.5 if v >= -2.22 else -1.0 / (v - float(digamma(1.0)))
    for _ in range(max_iter):
        step = (float(digamma(x)) - v) / float(polygamma(1, x))
        x_new = x - step
        if x_new <= 0:
            x_new = x / 2.0
        if abs(x_new - x) <= tol * max(1.0, x):
            return x_new
        x = x_new
    raise ConvergenceError(f"inverse_psi did not converge for v={v}")


# -- fitting -----------------------------------------------------------------

def _clean(samples, clamp: float) -> np.ndarray:
    y = np.asarray(samples, dtype=np.float64).ravel()
    if y.size == 0:
        raise DegenerateDataError("no samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("samples contain non-finite values")
    return np.maximum(y, clamp)


def fit_single_gamma_ml(samples, min_intensity_clamp: float = 1e-6) -> GammaMode:
    """Maximum-likelihood Gamma fit.

    Solves ``log a - digamma(a) = log(mean) - mean(log y)`` by Newton, then
    ``lam = a / mean``.
    """
    y = _clean(samples, min_intensity_clamp)
    if y.size < 2:
        raise DegenerateDataError("need at least two samples")
    mean = float(y.mean())
    s = math.log(mean) - float(np.log(y).mean())
    if not s > 1e-12 or np.ptp(y) <= 1e-12 * mean:
        raise DegenerateDataError("samples have zero spread")
    a = solve_gamma_shape(s)
    return GammaMode(a, a / mean)


def solve_gamma_shape(s: float, max_iter: int = 100) -> float:
    """Root of ``log a - digamma(a) = s`` for ``s > 0`` (Newton, Minka's start)."""
    a = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(max_iter):
        f = math.log(a) - float(digamma(a)) - s
        df = 1.0 / a - float(polygamma(1, a))
        a_new = a - f / df
        if a_new <= 0:
            a_new = a / 2.0
        if abs(a_new - a) <= 1e-12 * a:
            return a_new
        a = a_new
    raise ConvergenceError(f"Gamma shape iteration did not converge for s={s}")


@dataclass
class EmConfig:
    max_iters: int = 200
    loglik_rel_tol: float = 1e-7
    weight_prune_threshold: float = 1e-3
    min_intensity_clamp: float = 1e-6
    quantile_low: float = 0.01
    quantile_high: float = 0.99

    def __post_init__(self):
        if self.max_iters < 1 or not (self.loglik_rel_tol > 0 and self.weight_prune_threshold > 0
                                      and self.min_intensity_clamp > 0):
            raise ValueError("EM configuration values must be positive")


@dataclass
class EmResult:
    mixture: GammaMixture
    iterations: int
    converged: bool
    loglik_trace: list[float] = field(default_factory=list)
    prune_iterations: list[int] = field(default_factory=list)


def em_initialize(samples, K: int, q_low: float = 0.01, q_high: float = 0.99,
                  min_intensity_clamp: float = 1e-6) -> GammaMixture:
    """Equally weighted Gammas with means evenly spaced over a quantile span."""
    if K < 1:
        raise ValueError("K must be >= 1")
    y = _clean(samples, min_intensity_clamp)
    lo, hi = np.quantile(y, [q_low, q_high])
    lo = max(float(lo), min_intensity_clamp)
    hi = max(float(hi), lo)
    means = np.array([(lo + hi) / 2.0]) if K == 1 else np.linspace(lo, hi, K)
    var = float(y.var())
    if not var > 0:
        raise DegenerateDataError("samples have zero spread")
    modes = tuple(GammaMode(m * m / var, m / var) for m in means)
    return GammaMixture(modes, tuple([1.0 / K] * K))


def responsibilities(y: np.ndarray, mix: GammaMixture) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mode probabilities (N x K) and per-sample log mixture density."""
    logp = gamma_logpdf(y[:, None], mix.shapes[None, :], mix.rates[None, :]) + np.log(mix.weights)
    lse = logsumexp(logp, axis=1)
    return np.exp(logp - lse[:, None]), lse


def log_likelihood(samples, mix: GammaMixture, min_intensity_clamp: float = 1e-6) -> float:
    y = _clean(samples, min_intensity_clamp)
    return float(np.sum(mixture_logpdf(y, mix)))


def em_step(y: np.ndarray, logy: np.ndarray, mix: GammaMixture):
    """One E+M pass; returns (a, lam, weights) arrays before pruning.

    Per mode the rate/shape updates ``lam = a*S0/S1`` and
    ``a = inverse_psi(log(lam) + S2/S0)`` are coupled; with the weighted sums
    fixed they are iterated to their joint fixed point, which is the root of
    ``log a - digamma(a) = log(S1/S0) - S2/S0`` and is solved by Newton directly.
    """
    w, _ = responsibilities(y, mix)
    s0 = w.sum(axis=0)
    s1 = (w * y[:, None]).sum(axis=0)
    s2 = (w * logy[:, None]).sum(axis=0)
    weights = s0 / y.size
    a = np.empty_like(s0)
    for k in range(len(s0)):
        stat = math.log(s1[k] / s0[k]) - s2[k] / s0[k] if s0[k] > 0 else 0.0
        # zero spread under this mode's weights: collapse, pruned by the caller
        a[k] = solve_gamma_shape(stat) if stat > 1e-12 else np.inf
    lam = a * s0 / s1
    return a, lam, weights


def alternate_rate_shape(a: float, s0: float, s1: float, s2: float, n_iter: int):
    """Literal alternation of the rate and shape updates (reference path)."""
    lam = a * s0 / s1
    for _ in range(n_iter):
        lam = a * s0 / s1
        a = inverse_psi(math.log(lam) + s2 / s0)
    return a, a * s0 / s1


def run_em(samples, K_init: int, cfg: EmConfig | None = None,
           init: GammaMixture | None = None) -> EmResult:
    cfg = cfg or EmConfig()
    y = _clean(samples, cfg.min_intensity_clamp)
    if K_init < 1:
        raise ValueError("K_init must be >= 1")
    mix = init or em_initialize(y, K_init, cfg.quantile_low, cfg.quantile_high, cfg.min_intensity_clamp)
    logy = np.log(y)
    ll = float(np.sum(mixture_logpdf(y, mix)))
    trace = [ll]
    pruned_at = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            a, lam, weights = em_step(y, logy, mix)
        keep = (weights >= cfg.weight_prune_threshold) & (a > 1e-4) & (a < 1e6) & np.isfinite(lam)
        if not keep.any():
            keep[np.argmax(weights)] = True
        if not keep.all():
            pruned_at.append(it)
            log.debug("EM iteration %d pruned %d mode(s)", it, int((~keep).sum()))
        mix = GammaMixture.from_arrays(a[keep], lam[keep], weights[keep])
        ll_new = float(np.sum(mixture_logpdf(y, mix)))
        trace.append(ll_new)
        if abs(ll_new - ll) <= cfg.loglik_rel_tol * abs(ll) and not pruned_at[-1:] == [it]:
            ll = ll_new
            converged = True
            break
        ll = ll_new
    return EmResult(mix, it, converged, trace, pruned_at)


def em_fit_mixture(samples, K_init: int, cfg: EmConfig | None = None) -> GammaMixture:
    """Fit a Gamma mixture with at most ``K_init`` modes by EM."""
    return run_em(samples, K_init, cfg).mixture
