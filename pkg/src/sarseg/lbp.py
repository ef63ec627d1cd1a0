"""Loopy belief propagation on the 8-connected pairwise lattice.

Messages live in the log domain and are updated synchronously (flooding)
with damping. The output is one two-node belief table per clique.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import logsumexp

from .grid import CliqueSet

log = logging.getLogger(__name__)


@dataclass
class LbpConfig:
    max_sweeps: int = 200
    message_tol: float = 1e-6
    damping: float = 0.5

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not self.message_tol > 0:
            raise ValueError("message_tol must be positive")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class PairwiseBeliefs:
    tables: np.ndarray  # (num_cliques, c, c), each normalised
    evidence_used: bool
    converged: bool
    sweeps: int
    log_messages: np.ndarray | None = None  # (2 * num_cliques, c); edge 2k is i->j, 2k+1 is j->i

    @property
    def num_classes(self) -> int:
        return self.tables.shape[1]


def potts_potential(beta: float, c: int) -> np.ndarray:
    """``psi(k, k') = exp(beta * [k == k'])``."""
    return np.exp(beta * np.eye(c))


def run_lbp(unary_potentials, pair_potential, cliques: CliqueSet, cfg: LbpConfig | None = None,
            init_log_messages: np.ndarray | None = None) -> PairwiseBeliefs:
    """Two-node beliefs from loopy BP.

    ``unary_potentials`` is an (N, c) array of positive evidence values, or
    ``None`` for the prior-only model where every pixel carries a constant.
    """
    cfg = cfg or LbpConfig()
    psi = np.asarray(pair_potential, dtype=np.float64)
    c = psi.shape[0]
    if psi.shape != (c, c) or np.any(psi <= 0) or not np.all(np.isfinite(psi)):
        raise ValueError("pair potential must be a positive finite c x c table")
    n = cliques.num_pixels
    evidence = unary_potentials is not None
    if evidence:
        phi = np.asarray(unary_potentials, dtype=np.float64)
        if phi.shape != (n, c):
            raise ValueError(f"unary potentials must have shape {(n, c)}, got {phi.shape}")
        if np.any(phi <= 0) or not np.all(np.isfinite(phi)):
            raise ValueError("unary potentials must be positive and finite")
        log_phi = np.log(phi)
    else:
        log_phi = np.zeros((n, c))
    return _run_log_lbp(log_phi, np.log(psi), cliques, cfg, evidence, init_log_messages)


def run_lbp_log(log_unary: np.ndarray | None, log_pair: np.ndarray, cliques: CliqueSet,
                cfg: LbpConfig | None = None, init_log_messages: np.ndarray | None = None) -> PairwiseBeliefs:
    """Same as :func:`run_lbp` with log potentials (avoids exp underflow of large costs)."""
    cfg = cfg or LbpConfig()
    c = log_pair.shape[0]
    evidence = log_unary is not None
    log_phi = np.asarray(log_unary, dtype=np.float64) if evidence else np.zeros((cliques.num_pixels, c))
    if not np.all(np.isfinite(log_phi)) or not np.all(np.isfinite(log_pair)):
        raise ValueError("log potentials must be finite")
    return _run_log_lbp(log_phi, np.asarray(log_pair, dtype=np.float64), cliques, cfg, evidence,
                        init_log_messages)


@numba.njit(cache=True)
def _sweeps(log_phi, log_psi, src, dst, log_msg, max_sweeps, tol, damping):
    """Synchronous damped sweeps, updating ``log_msg`` in place.

    Node sums are kept in the log domain; each outgoing message is formed in
    the probability domain after subtracting the cavity maximum.
    Returns (sweeps, converged).
    """
    n, c = log_phi.shape
    ne = src.shape[0]
    psi = np.exp(log_psi - log_psi.max())
    msg = np.exp(log_msg)
    node = np.empty((n, c))
    h = np.empty(c)
    out = np.empty(c)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        node[:, :] = log_phi
        for e in range(ne):
            for k in range(c):
                node[dst[e], k] += log_msg[e, k]
        delta = 0.0
        for e in range(ne):
            s = src[e]
            r = e ^ 1
            mx = -np.inf
            for k in range(c):
                h[k] = node[s, k] - log_msg[r, k]
                if h[k] > mx:
                    mx = h[k]
            for k in range(c):
                h[k] = np.exp(h[k] - mx)
            fwd = (e & 1) == 0
            tot = 0.0
            for kj in range(c):
                acc = 0.0
                for ki in range(c):
                    acc += h[ki] * (psi[ki, kj] if fwd else psi[kj, ki])
                out[kj] = acc
                tot += acc
            tot2 = 0.0
            for k in range(c):
                p = out[k] / tot
                if damping > 0.0:
                    p = (1.0 - damping) * p + damping * msg[e, k]
                if p < 1e-300:
                    p = 1e-300
                d = abs(p - msg[e, k])
                if d > delta:
                    delta = d
                out[k] = p
                tot2 += p
            for k in range(c):
                msg[e, k] = out[k] / tot2
        # messages only feed the next sweep through log_msg
        for e in range(ne):
            for k in range(c):
                log_msg[e, k] = np.log(msg[e, k])
        if delta < tol:
            return sweeps, True
    return sweeps, False


def _incoming_sums(log_msg: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    c = log_msg.shape[1]
    out = np.empty((n, c))
    for k in range(c):
        out[:, k] = np.bincount(dst, weights=log_msg[:, k], minlength=n)
    return out


def _run_log_lbp(log_phi, log_psi, cliques, cfg, evidence, init_log_messages):
    n, c = log_phi.shape
    m = len(cliques)
    src = np.empty(2 * m, np.int64)
    dst = np.empty(2 * m, np.int64)
    src[0::2], dst[0::2] = cliques.i, cliques.j
    src[1::2], dst[1::2] = cliques.j, cliques.i

    if init_log_messages is None:
        log_msg = np.full((2 * m, c), -np.log(c))
    else:
        log_msg = np.array(init_log_messages, dtype=np.float64)
        if log_msg.shape != (2 * m, c):
            raise ValueError("initial messages have the wrong shape")
        log_msg -= logsumexp(log_msg, axis=1, keepdims=True)

    if m == 0:
        sweeps, converged = 0, True
    else:
        sweeps, converged = _sweeps(np.ascontiguousarray(log_phi), np.ascontiguousarray(log_psi),
                                    src, dst, log_msg, cfg.max_sweeps, cfg.message_tol, cfg.damping)
    if not converged:
        log.warning("loopy BP stopped after %d sweeps without converging", sweeps)

    node = log_phi + _incoming_sums(log_msg, dst, n)
    h = node[src] - log_msg[np.arange(2 * m) ^ 1]
    hi = h[0::2]  # cavity at i, excluding the message from j
    hj = h[1::2]
    lt = hi[:, :, None] + hj[:, None, :] + log_psi[None, :, :]
    lt -= logsumexp(lt, axis=(1, 2), keepdims=True)
    return PairwiseBeliefs(np.exp(lt), evidence, bool(converged), int(sweeps), log_msg)


def equal_label_belief_sum(beliefs: PairwiseBeliefs) -> float:
    """Sum over cliques of the probability that both ends share a label."""
    return float(np.trace(beliefs.tables, axis1=1, axis2=2).sum())


def node_beliefs(beliefs: PairwiseBeliefs, cliques: CliqueSet) -> np.ndarray:
    """Single-node marginals recovered from the clique tables (N x c)."""
    n = cliques.num_pixels
    c = beliefs.num_classes
    acc = np.zeros((n, c))
    cnt = np.zeros(n)
    np.add.at(acc, cliques.i, beliefs.tables.sum(axis=2))
    np.add.at(acc, cliques.j, beliefs.tables.sum(axis=1))
    np.add.at(cnt, cliques.i, 1)
    np.add.at(cnt, cliques.j, 1)
    out = np.full((n, c), 1.0 / c)
    has = cnt > 0
    out[has] = acc[has] / cnt[has, None]
    return out
