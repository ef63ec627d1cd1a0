"""Posterior energy: per-pixel data costs plus isotropic Potts pairwise costs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gamma import GammaMixture, mixture_logpdf
from .grid import CliqueSet, IntensityGrid, LabelField

CLAMP = 1e8


@dataclass(frozen=True)
class ClassModelSet:
    """One Gamma mixture per class label; ``mixtures[l-1]`` models label ``l``."""

    mixtures: tuple[GammaMixture, ...]

    def __post_init__(self):
        mixtures = tuple(self.mixtures)
        if len(mixtures) < 2:
            raise ValueError("need at least two class models")
        object.__setattr__(self, "mixtures", mixtures)

    @property
    def num_classes(self) -> int:
        return len(self.mixtures)

    def to_dict(self) -> dict:
        return {"classes": [m.to_dict() for m in self.mixtures]}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassModelSet":
        return cls(tuple(GammaMixture.from_dict(m) for m in d["classes"]))


@dataclass(frozen=True)
class UnaryCostTable:
    """Data energies ``costs[i, l-1] = -log p(y_i | class l)`` for an (h, w) image."""

    costs: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        costs = np.array(self.costs, dtype=np.float64, copy=True)
        h, w = self.shape
        if costs.ndim != 2 or costs.shape[0] != h * w or costs.shape[1] < 2:
            raise ValueError(f"cost table shape {costs.shape} does not match image {self.shape}")
        if not np.all(np.isfinite(costs)):
            raise ValueError("cost table contains non-finite entries")
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "shape", (int(h), int(w)))

    @property
    def num_classes(self) -> int:
        return self.costs.shape[1]

    @property
    def num_pixels(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def height(self) -> int:
        return self.shape[0]

    def per_pixel_argmin(self) -> LabelField:
        """Labeling that ignores the prior (ties go to the lower label)."""
        return LabelField.from_zero_based(np.argmin(self.costs, axis=1), self.num_classes, self.shape)


@dataclass(frozen=True)
class PottsPrior:
    beta: float

    def __post_init__(self):
        if not (self.beta >= 0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")


def unary_costs(grid: IntensityGrid, models: ClassModelSet) -> UnaryCostTable:
    y = grid.flat()
    cols = [-mixture_logpdf(y, mix) for mix in models.mixtures]
    costs = np.clip(np.stack(cols, axis=1), -CLAMP, CLAMP)
    return UnaryCostTable(costs, grid.shape)


def _check(x: LabelField, cliques: CliqueSet):
    if (x.width, x.height) != (cliques.width, cliques.height):
        raise ValueError("labeling and clique set have different dimensions")


def equal_label_count(x: LabelField, cliques: CliqueSet) -> int:
    _check(x, cliques)
    flat = x.labels.ravel()
    return int(np.count_nonzero(flat[cliques.i] == flat[cliques.j]))


def gibbs_log_prior(x: LabelField, prior: PottsPrior, cliques: CliqueSet) -> float:
    """Unnormalised log prior ``beta * #(equal-label cliques)``."""
    return prior.beta * equal_label_count(x, cliques)


def unary_sum(x: LabelField, unary: UnaryCostTable) -> float:
    if x.shape != unary.shape:
        raise ValueError(f"dimension mismatch: labels {x.shape} vs costs {unary.shape}")
    if x.num_classes != unary.num_classes:
        raise ValueError("class count mismatch between labeling and cost table")
    return float(np.sum(unary.costs[np.arange(unary.num_pixels), x.zero_based()]))


def total_energy(x: LabelField, unary: UnaryCostTable, prior: PottsPrior, cliques: CliqueSet) -> float:
    """Sum of data costs plus ``-beta`` per equal-label clique."""
    return unary_sum(x, unary) - gibbs_log_prior(x, prior, cliques)


def shifted_energy(x: LabelField, unary: UnaryCostTable, prior: PottsPrior, cliques: CliqueSet) -> float:
    """Energy with the nonnegative pairwise form ``beta * [x_i != x_j]``.

    Equals ``total_energy + beta * |C|``; solvers work in this form.
    """
    _check(x, cliques)
    return unary_sum(x, unary) + prior.beta * (len(cliques) - equal_label_count(x, cliques))
