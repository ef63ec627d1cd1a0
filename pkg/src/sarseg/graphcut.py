"""Exact binary MAP by min-cut and multi-label MAP by alpha-expansion."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .energy import PottsPrior, UnaryCostTable, shifted_energy, total_energy
from .grid import CliqueSet, LabelField
from .maxflow import FlowNetwork, max_flow_min_cut

log = logging.getLogger(__name__)

MAX_CYCLES = 20
MIN_DECREASE = 1e-12


class NotSubmodularError(ValueError):
    pass


def solve_binary(cost0, cost1, p, q, e00, e01, e10, e11, check: bool = False):
    """Minimise ``sum_i D_i(y_i) + sum_k E_k(y_p, y_q)`` over binary ``y``.

    ``y = 1`` is the sink side. Pairwise terms must be submodular
    (``e00 + e11 <= e01 + e10``). Returns (y, min energy).
    """
    cost0 = np.array(cost0, dtype=np.float64)
    cost1 = np.array(cost1, dtype=np.float64)
    n = len(cost0)
    e00, e01, e10, e11 = (np.asarray(e, dtype=np.float64) for e in (e00, e01, e10, e11))
    slack = e01 + e10 - e00 - e11
    if check and np.any(slack < -1e-9):
        bad = int(np.argmin(slack))
        raise NotSubmodularError(f"pairwise term {bad} violates e00+e11 <= e01+e10 by {-slack[bad]}")
    # E = e00 + (e10-e00) y_p + (e11-e10) y_q + slack * [y_p=0, y_q=1]
    constant = float(e00.sum())
    np.add.at(cost1, p, e10 - e00)
    np.add.at(cost1, q, e11 - e10)
    low = np.minimum(cost0, cost1)
    constant += float(low.sum())
    net = FlowNetwork(n)
    net.add_tedge(np.arange(n), cost1 - low, cost0 - low)
    keep = slack > 0
    if keep.any():
        net.add_edge(p[keep], q[keep], slack[keep], 0.0)
    cut = max_flow_min_cut(net)
    y = (~cut.source_side).astype(np.int64)
    return y, constant + cut.flow


def binary_map(unary: UnaryCostTable, prior: PottsPrior, cliques: CliqueSet) -> LabelField:
    """Global minimiser of the two-class posterior energy."""
    if unary.num_classes != 2:
        raise ValueError(f"binary_map needs exactly 2 classes, got {unary.num_classes}")
    if (unary.width, unary.height) != (cliques.width, cliques.height):
        raise ValueError("cost table and clique set have different dimensions")
    m = len(cliques)
    zeros = np.zeros(m)
    beta = np.full(m, prior.beta)
    y, _ = solve_binary(unary.costs[:, 0], unary.costs[:, 1], cliques.i, cliques.j,
                        zeros, beta, beta, zeros)
    return LabelField.from_zero_based(y, 2, unary.shape)


@dataclass
class ExpansionState:
    labels: LabelField
    energy: float
    order: tuple[int, ...]
    cycles: int = 0
    moves_accepted: int = 0
    energy_trace: list[float] = field(default_factory=list)


def expansion_move(x0: np.ndarray, alpha: int, costs: np.ndarray, beta: float,
                   cliques: CliqueSet, check: bool = False) -> np.ndarray:
    """Best labeling reachable from ``x0`` (0-based) by one alpha-expansion."""
    n = len(x0)
    rows = np.arange(n)
    cost0 = costs[rows, x0]
    cost1 = costs[:, alpha]
    # pixels already labelled alpha keep alpha either way
    cost0 = np.where(x0 == alpha, cost1, cost0)
    xp, xq = x0[cliques.i], x0[cliques.j]
    e00 = beta * (xp != xq)
    e01 = beta * (xp != alpha)
    e10 = beta * (xq != alpha)
    e11 = np.zeros(len(cliques))
    y, _ = solve_binary(cost0, cost1, cliques.i, cliques.j, e00, e01, e10, e11, check=check)
    return np.where(y == 1, alpha, x0)


def alpha_expansion(unary: UnaryCostTable, prior: PottsPrior, cliques: CliqueSet,
                    init: LabelField | None = None, max_cycles: int = MAX_CYCLES,
                    check: bool = False) -> LabelField:
    return run_alpha_expansion(unary, prior, cliques, init, max_cycles, check).labels


def run_alpha_expansion(unary: UnaryCostTable, prior: PottsPrior, cliques: CliqueSet,
                        init: LabelField | None = None, max_cycles: int = MAX_CYCLES,
                        check: bool = False) -> ExpansionState:
    """Cycle through labels in ascending order until no expansion lowers the energy."""
    c = unary.num_classes
    if init is None:
        init = unary.per_pixel_argmin()
    if init.shape != unary.shape or init.num_classes != c:
        raise ValueError("initial labeling does not match the cost table")
    x = init.zero_based().copy()
    energy = shifted_energy(init, unary, prior, cliques)
    state = ExpansionState(init, total_energy(init, unary, prior, cliques), tuple(range(1, c + 1)))
    state.energy_trace.append(state.energy)
    for cycle in range(max_cycles):
        improved = False
        for alpha in range(c):
            cand = expansion_move(x, alpha, unary.costs, prior.beta, cliques, check)
            cand_field = LabelField.from_zero_based(cand, c, unary.shape)
            e = shifted_energy(cand_field, unary, prior, cliques)
            if e < energy - MIN_DECREASE:
                x, energy = cand, e
                state.moves_accepted += 1
                improved = True
                state.energy_trace.append(energy - prior.beta * len(cliques))
        state.cycles = cycle + 1
        if not improved:
            break
    else:
        log.warning("alpha-expansion stopped at the %d-cycle cap", max_cycles)
    state.labels = LabelField.from_zero_based(x, c, unary.shape)
    state.energy = total_energy(state.labels, unary, prior, cliques)
    return state


def map_segment(unary: UnaryCostTable, prior: PottsPrior, cliques: CliqueSet) -> LabelField:
    """Exact min-cut for two classes, alpha-expansion from the per-pixel argmin otherwise.

    With ``beta == 0`` pixels decouple and the per-pixel argmin (ties to the
    lowest label) is returned directly.
    """
    if prior.beta == 0:
        return unary.per_pixel_argmin()
    if unary.num_classes == 2:
        return binary_map(unary, prior, cliques)
    return alpha_expansion(unary, prior, cliques)
