"""Smoothness-parameter estimators: least-squares fit, coding method, loopy EM.

Also hosts the Potts/MLL Gibbs sampler used to produce fields with a known
smoothness for testing the estimators.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .energy import UnaryCostTable
from .grid import CliqueSet, LabelField, build_cliques, neighbor_counts
from .lbp import LbpConfig, equal_label_belief_sum, run_lbp_log

log = logging.getLogger(__name__)

BETA_MAX = 10.0
G_TOL = 1e-4
LSF_MIN_COUNT = 5
BRACKET_START = 0.5


class EstimationUndefinedError(ValueError):
    """The labeling carries no label contrast to estimate the smoothness from."""


@dataclass
class BetaEstimate:
    beta: float
    method: str
    iterations: int = 0
    residual: float = 0.0
    raw_beta: float | None = None
    flags: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "beta": self.beta,
            "raw_beta": self.raw_beta,
            "iterations": self.iterations,
            "residual": self.residual,
            "flags": list(self.flags),
            **self.extra,
        }


def _clamped(raw: float, method: str, **kw) -> BetaEstimate:
    est = BetaEstimate(min(max(raw, 0.0), BETA_MAX), method, raw_beta=raw, **kw)
    if raw < 0:
        est.flags.append("clamped_negative")
    if raw > BETA_MAX:
        est.flags.append("clamped_beta_max")
    return est


def _check_inputs(x: LabelField, unary: UnaryCostTable):
    if x.shape != unary.shape:
        raise ValueError(f"labeling {x.shape} and cost table {unary.shape} differ in size")
    if x.num_classes != unary.num_classes:
        raise ValueError("class count mismatch between labeling and cost table")
    if np.all(x.labels == x.labels.flat[0]):
        raise EstimationUndefinedError("homogeneous labeling carries no label contrast")


# -- least-squares fit -------------------------------------------------------

def configuration_histogram(x: LabelField) -> dict[tuple, int]:
    """Counts of (center label, 8 neighbor labels in raster order) over 3x3 blocks."""
    lab = x.labels
    h, w = lab.shape
    if h < 3 or w < 3:
        return {}
    blocks = np.lib.stride_tricks.sliding_window_view(lab, (3, 3)).reshape(-1, 9)
    keys, counts = np.unique(blocks, axis=0, return_counts=True)
    hist = {}
    for k, n in zip(keys, counts):
        center = int(k[4])
        nbrs = tuple(int(v) for v in np.delete(k, 4))
        hist[(center, nbrs)] = int(n)
    return hist


def lsf_system(x: LabelField, unary: UnaryCostTable, min_count: int = LSF_MIN_COUNT):
    """Rows ``coef * beta = rhs`` of the least-squares system.

    Interior pixels are grouped by their neighbor configuration. Under the
    isotropic prior the site conditional depends on the configuration only
    through the per-label neighbor counts, so configurations sharing those
    counts are pooled. For each group and each pair of center labels both
    seen at least ``min_count`` times one row is emitted:

        beta * (n(l) - n(l')) = log(H(l) / H(l'))

    where ``H(l)`` sums ``exp(E_p(l) - min_k E_p(k))`` over group pixels
    labelled ``l``. Weighting each occurrence by its inverse evidence turns
    the per-pixel relation ``log p(l|.)/p(l'|.) + E_p(l) - E_p(l') = beta*dn``
    into a ratio of histogram counts.
    """
    lab = x.labels
    h, w = lab.shape
    c = x.num_classes
    if h < 3 or w < 3:
        return np.zeros(0), np.zeros(0)
    counts = neighbor_counts(lab - 1, c)[1:-1, 1:-1].reshape(-1, c)
    centers = (lab[1:-1, 1:-1] - 1).ravel()
    rows, cols = np.mgrid[1:h - 1, 1:w - 1]
    costs = unary.costs[(rows * w + cols).ravel()]
    rel = costs - costs.min(axis=1, keepdims=True)
    own = rel[np.arange(len(centers)), centers]
    keys, inverse = np.unique(counts, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    coef, rhs = [], []
    for g, key in enumerate(keys):
        members = inverse == g
        raw = np.bincount(centers[members], minlength=c)
        for l in range(c):
            if raw[l] < min_count:
                continue
            log_h_l = logsumexp(own[members & (centers == l)])
            for l2 in range(l + 1, c):
                if raw[l2] < min_count:
                    continue
                a = int(key[l]) - int(key[l2])
                if a == 0:
                    continue
                coef.append(float(a))
                rhs.append(log_h_l - logsumexp(own[members & (centers == l2)]))
    return np.asarray(coef), np.asarray(rhs)


def lsf_estimate(x: LabelField, unary: UnaryCostTable, min_count: int = LSF_MIN_COUNT) -> BetaEstimate:
    _check_inputs(x, unary)
    coef, rhs = lsf_system(x, unary, min_count)
    if coef.size == 0:
        raise EstimationUndefinedError("no usable configuration pairs for the least-squares fit")
    beta = float(coef @ rhs / (coef @ coef))
    resid = float(np.sqrt(np.mean((coef * beta - rhs) ** 2)))
    return _clamped(beta, "LSF", iterations=1, residual=resid, extra={"rows": int(coef.size)})


# -- coding method -----------------------------------------------------------

def codings(height: int, width: int) -> list[np.ndarray]:
    """The four 2x2-periodic pixel classes; none contains an 8-neighbor pair."""
    r, c = np.mgrid[0:height, 0:width]
    code = ((r % 2) * 2 + (c % 2)).ravel()
    return [np.flatnonzero(code == k) for k in range(4)]


def coding_log_likelihood(beta: float, x0: np.ndarray, counts: np.ndarray, costs: np.ndarray) -> float:
    """Sum over pixels of ``log p(x_p | neighbors, y_p, beta)``."""
    logits = -costs + beta * counts
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return float(np.sum(logits[np.arange(len(x0)), x0] - lse))


def cd_estimate(x: LabelField, unary: UnaryCostTable, beta_max: float = BETA_MAX) -> BetaEstimate:
    """Arithmetic mean of the four per-coding maximum-likelihood estimates."""
    _check_inputs(x, unary)
    lab0 = x.labels - 1
    counts = neighbor_counts(lab0, x.num_classes).reshape(-1, x.num_classes)
    x0 = lab0.ravel()
    per = []
    for sites in codings(*x.shape):
        if sites.size == 0:
            continue
        args = (x0[sites], counts[sites], unary.costs[sites])
        res = minimize_scalar(lambda b: -coding_log_likelihood(b, *args), bounds=(-beta_max, beta_max),
                              method="bounded", options={"xatol": 1e-6})
        per.append(float(res.x))
    raw = float(np.mean(per))
    return _clamped(raw, "CD", iterations=len(per), extra={"per_coding": per})


# -- loopy EM ----------------------------------------------------------------

@dataclass
class LoopyConfig:
    beta_max: float = BETA_MAX
    g_tol: float = G_TOL
    max_bisections: int = 60
    lbp: LbpConfig = field(default_factory=LbpConfig)


PRIOR_BIAS = 0.2
PRIOR_MAX_SWEEPS = 1000


@lru_cache(maxsize=4096)
def _prior_equal_sum(width: int, height: int, c: int, beta: float, tol: float, damping: float):
    """Equal-label belief mass of the prior-only model (data independent, so cached).

    Uniform initial messages sit on the symmetric fixed point, which is
    unstable in the ordered phase and overstates disorder there. Messages
    start slightly tilted toward label 1 so the iteration can settle on the
    ordered solution when one exists; for small beta the tilt decays away.
    """
    cliques = build_cliques(width, height)
    init = np.zeros((2 * len(cliques), c))
    init[:, 1:] = -PRIOR_BIAS
    cfg = LbpConfig(max_sweeps=PRIOR_MAX_SWEEPS, message_tol=tol, damping=damping)
    b = run_lbp_log(None, beta * np.eye(c), cliques, cfg, init)
    return equal_label_belief_sum(b), b.converged


class _BeliefGap:
    """g(beta) = sum of equal-label beliefs with evidence minus without."""

    def __init__(self, unary: UnaryCostTable, cliques: CliqueSet, cfg: LoopyConfig):
        costs = unary.costs
        self.log_phi = -(costs - costs.min(axis=1, keepdims=True))
        self.cliques = cliques
        self.cfg = cfg
        self.c = unary.num_classes
        self.evals = 0
        self.nonconverged = 0
        self._warm_y = None

    def prior_sum(self, beta: float) -> float:
        h, w = self.cliques.height, self.cliques.width
        total, ok = _prior_equal_sum(w, h, self.c, float(beta), self.cfg.lbp.message_tol,
                                     self.cfg.lbp.damping)
        if not ok:
            self.nonconverged += 1
        return total

    def evidence_sum(self, beta: float) -> float:
        b = run_lbp_log(self.log_phi, beta * np.eye(self.c), self.cliques, self.cfg.lbp, self._warm_y)
        self._warm_y = b.log_messages
        if not b.converged:
            self.nonconverged += 1
        return equal_label_belief_sum(b)

    def __call__(self, beta: float) -> float:
        self.evals += 1
        return self.evidence_sum(beta) - self.prior_sum(beta)


def loopy_beta_estimate(unary: UnaryCostTable, cliques: CliqueSet | None = None,
                        cfg: LoopyConfig | None = None) -> BetaEstimate:
    """Labeling-free ML estimate of beta by EM with loopy-BP beliefs.

    The EM fixed point is the root of ``g(beta)``: equal-label belief mass
    with the data evidence equals that of the prior alone. ``g`` is positive
    below the root and negative above, so the root is a maximum of the EM
    objective. The root is bracketed by doubling an upper end from 0.5 (at
    most ``beta_max``) and then bisected.
    """
    cfg = cfg or LoopyConfig()
    if cliques is None:
        cliques = build_cliques(unary.width, unary.height)
    m = max(len(cliques), 1)
    g = _BeliefGap(unary, cliques, cfg)
    tol = cfg.g_tol * m

    def result(beta, g_at, flags=(), **extra):
        est = BetaEstimate(beta, "LOOPY", iterations=g.evals, residual=g_at / m, raw_beta=beta,
                           flags=list(flags), extra=extra)
        if g.nonconverged:
            est.flags.append("lbp_not_converged")
        return est

    g_lo = g(0.0)
    if g_lo <= tol:
        return result(0.0, g_lo, ["no_sign_change"] if g_lo < -tol else [])
    # bracket by doubling from BRACKET_START (cheap low-beta evaluations first)
    lo, hi = 0.0, min(BRACKET_START, cfg.beta_max)
    g_hi = g(hi)
    while g_hi > 0 and hi < cfg.beta_max:
        lo, g_lo = hi, g_hi
        hi = min(2.0 * hi, cfg.beta_max)
        g_hi = g(hi)
    if g_hi > 0:
        log.warning("belief gap stays positive on [0, %g]; returning the boundary", cfg.beta_max)
        return result(cfg.beta_max, g_hi, ["no_sign_change"])
    mid, g_mid = hi, g_hi
    for _ in range(cfg.max_bisections):
        if abs(g_mid) <= tol or hi - lo < cfg.g_tol:
            break
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if g_mid > 0:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
    return result(mid, g_mid, bracket=[lo, hi], second_order_ok=bool(g_lo >= g_hi))


# -- Gibbs sampler -----------------------------------------------------------

@numba.njit(cache=True)
def _gibbs_pass(lab0, sites, u, beta, costs, c):
    """Update every site of one coding; sites are mutually non-adjacent."""
    h, w = lab0.shape
    cnt = np.empty(c)
    for t in range(sites.shape[0]):
        s = sites[t]
        r = s // w
        q = s - r * w
        cnt[:] = 0.0
        for dr in range(-1, 2):
            rr = r + dr
            if rr < 0 or rr >= h:
                continue
            for dq in range(-1, 2):
                qq = q + dq
                if (dr == 0 and dq == 0) or qq < 0 or qq >= w:
                    continue
                cnt[lab0[rr, qq]] += 1.0
        top = -np.inf
        for k in range(c):
            cnt[k] = beta * cnt[k]
            if costs.shape[0] > 0:
                cnt[k] -= costs[s, k]
            if cnt[k] > top:
                top = cnt[k]
        tot = 0.0
        for k in range(c):
            cnt[k] = math.exp(cnt[k] - top)
            tot += cnt[k]
        target = u[t] * tot
        acc = 0.0
        new = c - 1
        for k in range(c):
            acc += cnt[k]
            if target < acc:
                new = k
                break
        lab0[r, q] = new


def gibbs_sample_mll(width: int, height: int, beta: float, c: int, sweeps: int, seed: int,
                     unary: UnaryCostTable | None = None) -> LabelField:
    """Single-site Gibbs sampling of the MLL prior (or posterior, given costs).

    Starts from i.i.d. uniform labels. Each sweep visits the four codings in
    turn, drawing one uniform per site from a Philox stream seeded by ``seed``.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if unary is not None and (unary.shape != (height, width) or unary.num_classes != c):
        raise ValueError("cost table does not match the requested field")
    rng = np.random.Generator(np.random.Philox(seed))
    lab0 = rng.integers(0, c, size=(height, width)).astype(np.int64)
    sets = [s.astype(np.int64) for s in codings(height, width) if s.size]
    costs = np.ascontiguousarray(unary.costs) if unary is not None else np.zeros((0, c))
    for _ in range(sweeps):
        for sites in sets:
            _gibbs_pass(lab0, sites, rng.random(sites.size), float(beta), costs, c)
    return LabelField(lab0 + 1, c)
