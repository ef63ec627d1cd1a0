"""Supervised and unsupervised segmentation drivers, plus whole-image tiling.

Three drivers share the same building blocks (class-model fitting, data
costs, MAP segmentation, smoothness estimation):

* ``algorithm1_supervised``: ROI-fitted models, then alternate MAP
  segmentation with an LSF or CD estimate of beta until beta settles.
* ``algorithm2_supervised``: ROI-fitted models, one loopy-EM estimate of
  beta from the data costs alone, one MAP segmentation.
* ``algorithm3_unsupervised``: models seeded from an EM fit over all
  pixels, then alternate segmentation, beta estimation and class refits.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .beta import (BetaEstimate, EstimationUndefinedError, LoopyConfig, cd_estimate, loopy_beta_estimate,
                   lsf_estimate)
from .energy import ClassModelSet, PottsPrior, UnaryCostTable, total_energy, unary_costs
from .gamma import EmConfig, GammaMixture, fit_single_gamma_ml, mixture_logpdf, run_em
from .graphcut import map_segment
from .grid import CliqueSet, IntensityGrid, LabelField, build_cliques

log = logging.getLogger(__name__)

BETA_METHODS = ("LSF", "CD", "LOOPY")
SMALL_CLASS = 500
RESEED_FRACTION = 0.01


# -- configuration and reports ---------------------------------------------

@dataclass(frozen=True)
class RoiSpec:
    """One boolean (h, w) training mask per class; masks may be disconnected."""

    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        masks = tuple(np.array(m, dtype=bool, copy=True) for m in self.masks)
        if len(masks) < 2:
            raise ValueError("need one ROI mask per class (at least two)")
        shape = masks[0].shape
        if any(m.shape != shape or m.ndim != 2 for m in masks):
            raise ValueError("ROI masks must be 2-D and share one shape")
        overlap = np.sum(masks, axis=0) > 1
        if overlap.any():
            raise ValueError(f"ROI masks overlap on {int(overlap.sum())} pixel(s)")
        for m in masks:
            m.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @property
    def num_classes(self) -> int:
        return len(self.masks)

    @classmethod
    def from_label_map(cls, roi_labels, num_classes: int) -> "RoiSpec":
        """Masks from an integer map where 0 marks unused pixels and ``l`` marks class ``l``."""
        arr = np.asarray(roi_labels)
        if arr.max(initial=0) > num_classes:
            raise ValueError("ROI map contains labels above the class count")
        return cls(tuple(arr == l for l in range(1, num_classes + 1)))

    def validate(self, shape, require_nonempty: bool = True):
        if self.masks[0].shape != tuple(shape):
            raise ValueError(f"ROI masks {self.masks[0].shape} do not match image {tuple(shape)}")
        if require_nonempty:
            for l, m in enumerate(self.masks, start=1):
                if not m.any():
                    raise ValueError(f"ROI for class {l} is empty")


@dataclass
class PipelineConfig:
    num_classes: int = 2
    K: int | tuple[int, ...] = 1
    beta_method: str = "LOOPY"
    beta0: float = 1.0
    delta: float = 1e-3
    param_tol: float = 1e-3
    max_iters: int = 30
    single_gamma: bool = False
    fixed_beta: float | None = None
    em: EmConfig = field(default_factory=EmConfig)
    loopy: LoopyConfig = field(default_factory=LoopyConfig)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        ks = self.class_K()
        if len(ks) != self.num_classes or min(ks) < 1:
            raise ValueError("K must be >= 1 (one value, or one per class)")
        self.beta_method = self.beta_method.upper()
        if self.beta_method not in BETA_METHODS:
            raise ValueError(f"beta_method must be one of {BETA_METHODS}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.beta0 < 0 or (self.fixed_beta is not None and self.fixed_beta < 0):
            raise ValueError("beta must be >= 0")

    def class_K(self) -> tuple[int, ...]:
        if isinstance(self.K, (int, np.integer)):
            return (int(self.K),) * self.num_classes
        return tuple(int(k) for k in self.K)


@dataclass
class RunReport:
    algorithm: str
    beta: float
    beta_method: str
    models: ClassModelSet | None = None
    energy: float = 0.0
    converged: bool = False
    iterations: int = 0
    trace: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    estimates: list[dict] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def flag(self, name: str):
        if name not in self.flags:
            self.flags.append(name)

    def to_dict(self, include_timing: bool = False) -> dict:
        # timing is excluded by default so reports are byte-reproducible
        d = {
            "algorithm": self.algorithm,
            "beta": self.beta,
            "beta_method": self.beta_method,
            "energy": self.energy,
            "converged": self.converged,
            "iterations": self.iterations,
            "models": self.models.to_dict() if self.models else None,
            "trace": self.trace,
            "flags": self.flags,
            "counters": self.counters,
            "estimates": self.estimates,
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


# -- shared steps ------------------------------------------------------------

def fit_class_model(samples: np.ndarray, K: int, cfg: PipelineConfig) -> GammaMixture:
    """Single-Gamma ML fit when asked (or K=1), else EM with at most ``K`` modes."""
    if cfg.single_gamma or K == 1:
        return GammaMixture.single(fit_single_gamma_ml(samples, cfg.em.min_intensity_clamp))
    return run_em(samples, K, cfg.em).mixture


def fit_models_from_roi(grid: IntensityGrid, roi: RoiSpec, cfg: PipelineConfig,
                        counters: dict | None = None) -> ClassModelSet:
    """Class densities estimated from ROI pixels only."""
    roi.validate(grid.shape)
    if roi.num_classes != cfg.num_classes:
        raise ValueError(f"{roi.num_classes} ROI masks for {cfg.num_classes} classes")
    mixtures = []
    used = 0
    for mask, K in zip(roi.masks, cfg.class_K()):
        samples = grid.values[mask]
        used += samples.size
        mixtures.append(fit_class_model(samples, K, cfg))
    if counters is not None:
        counters["fit_pixels_roi"] = counters.get("fit_pixels_roi", 0) + used
    return ClassModelSet(tuple(mixtures))


def estimate_beta(method: str, x: LabelField | None, unary: UnaryCostTable, cliques: CliqueSet,
                  cfg: PipelineConfig) -> BetaEstimate:
    if method == "LSF":
        return lsf_estimate(x, unary)
    if method == "CD":
        return cd_estimate(x, unary)
    return loopy_beta_estimate(unary, cliques, cfg.loopy)


def _segment(unary: UnaryCostTable, beta: float, cliques: CliqueSet) -> tuple[LabelField, float]:
    prior = PottsPrior(beta)
    x = map_segment(unary, prior, cliques)
    return x, total_energy(x, unary, prior, cliques)


def _check_grid(grid: IntensityGrid, cfg: PipelineConfig):
    if cfg.num_classes > grid.size:
        raise ValueError("more classes than pixels")


# -- algorithm 1 -------------------------------------------------------------

def algorithm1_supervised(grid: IntensityGrid, roi: RoiSpec, cfg: PipelineConfig):
    """Alternate MAP segmentation and labeling-based beta estimation.

    Data costs are computed once from the ROI-fitted models. The loop ends
    when ``|beta_new - beta| < delta`` or after ``max_iters`` rounds; the
    returned labeling is always the MAP labeling at the returned beta.
    """
    if cfg.beta_method not in ("LSF", "CD"):
        raise ValueError("algorithm 1 estimates beta from a labeling: use LSF or CD")
    _check_grid(grid, cfg)
    t0 = time.perf_counter()
    report = RunReport("algorithm1", cfg.beta0, cfg.beta_method)
    report.models = fit_models_from_roi(grid, roi, cfg, report.counters)
    unary = unary_costs(grid, report.models)
    cliques = build_cliques(grid.width, grid.height)
    beta = cfg.beta0
    x = None
    for it in range(1, cfg.max_iters + 1):
        x, energy = _segment(unary, beta, cliques)
        try:
            est = estimate_beta(cfg.beta_method, x, unary, cliques, cfg)
            new_beta = est.beta
            report.estimates.append(est.to_dict())
        except EstimationUndefinedError as exc:
            log.warning("iteration %d: %s; keeping beta=%g", it, exc, beta)
            report.flag("estimator_undefined")
            new_beta = beta
        report.trace.append({"iteration": it, "beta": beta, "energy": energy, "beta_next": new_beta,
                             "delta_beta": abs(new_beta - beta)})
        report.iterations = it
        done = abs(new_beta - beta) < cfg.delta
        beta = new_beta
        if done:
            report.converged = True
            break
    else:
        log.warning("algorithm 1 hit the %d-iteration cap", cfg.max_iters)
        report.flag("iteration_cap")
    if report.trace[-1]["beta"] != beta:
        x, energy = _segment(unary, beta, cliques)
    report.beta = beta
    report.energy = energy
    report.timing["seconds"] = time.perf_counter() - t0
    return x, report


# -- algorithm 2 -------------------------------------------------------------

def algorithm2_supervised(grid: IntensityGrid, roi: RoiSpec, cfg: PipelineConfig):
    """One loopy-EM beta estimate from the data costs, then one MAP segmentation.

    ``cfg.fixed_beta`` skips estimation (``0`` gives the no-prior result).
    """
    _check_grid(grid, cfg)
    t0 = time.perf_counter()
    report = RunReport("algorithm2", 0.0, "LOOPY" if cfg.fixed_beta is None else "FIXED")
    report.models = fit_models_from_roi(grid, roi, cfg, report.counters)
    unary = unary_costs(grid, report.models)
    cliques = build_cliques(grid.width, grid.height)
    if cfg.fixed_beta is None:
        est = loopy_beta_estimate(unary, cliques, cfg.loopy)
        report.estimates.append(est.to_dict())
        for f in est.flags:
            report.flag(f)
        beta = est.beta
    else:
        beta = float(cfg.fixed_beta)
    x, energy = _segment(unary, beta, cliques)
    report.beta = beta
    report.energy = energy
    report.iterations = 1
    report.converged = True
    report.trace.append({"iteration": 1, "beta": beta, "energy": energy})
    report.timing["seconds"] = time.perf_counter() - t0
    return x, report


# -- algorithm 3 -------------------------------------------------------------

def _mixture_moments(mix: GammaMixture) -> np.ndarray:
    a, lam, w = mix.shapes, mix.rates, np.asarray(mix.weights)
    m1 = np.sum(w * a / lam)
    m2 = np.sum(w * a * (a + 1) / lam ** 2)
    return np.array([m1, m2])


def _param_change(old: ClassModelSet, new: ClassModelSet) -> float:
    worst = 0.0
    for a, b in zip(old.mixtures, new.mixtures):
        ma, mb = _mixture_moments(a), _mixture_moments(b)
        worst = max(worst, float(np.max(np.abs(mb - ma) / np.maximum(np.abs(ma), 1e-300))))
    return worst


def initial_unsupervised_models(grid: IntensityGrid, cfg: PipelineConfig, report: RunReport):
    """Seed class densities from one EM fit over all pixels.

    Two classes: the lowest-mean mode models class 1 and the remaining modes
    (reweighted) model class 2. More classes: a c-mode fit whose modes,
    sorted by mean, model classes 1..c. If EM keeps fewer modes than needed,
    the pixels are split at intensity quantiles and each part is fitted.
    """
    c = cfg.num_classes
    y = grid.flat()
    report.counters["init_pixels_all"] = int(y.size)
    K = max(c, max(cfg.class_K())) if c == 2 else c
    mix = run_em(y, K, cfg.em).mixture
    order = np.argsort(mix.shapes / mix.rates, kind="stable")
    if mix.K >= c:
        a, lam, w = mix.shapes[order], mix.rates[order], np.asarray(mix.weights)[order]
        if c == 2:
            groups = [[0], list(range(1, mix.K))]
        else:
            groups = [[s] for s in range(c - 1)] + [list(range(c - 1, mix.K))]
        return ClassModelSet(tuple(GammaMixture.from_arrays(a[g], lam[g], w[g]) for g in groups))
    report.flag("init_mode_deficit")
    edges = np.quantile(y, np.linspace(0, 1, c + 1)[1:-1])
    part = np.searchsorted(edges, y, side="right")
    return ClassModelSet(tuple(GammaMixture.single(fit_single_gamma_ml(y[part == l], cfg.em.min_intensity_clamp))
                               for l in range(c)))


def _refit(grid: IntensityGrid, x: LabelField, models: ClassModelSet, cfg: PipelineConfig,
           report: RunReport) -> tuple[ClassModelSet, LabelField]:
    """ML class densities from the current labeling; empty classes are re-seeded."""
    y = grid.flat()
    lab0 = x.zero_based().copy()
    c = cfg.num_classes
    sizes = np.bincount(lab0, minlength=c)
    for l in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(lab0 == donor)
        fit = mixture_logpdf(y[members], models.mixtures[donor])
        take = max(1, int(RESEED_FRACTION * members.size))
        worst = members[np.argsort(fit, kind="stable")[:take]]
        lab0[worst] = l
        sizes = np.bincount(lab0, minlength=c)
        report.flag("class_reseeded")
        log.warning("class %d became empty; re-seeded with %d pixel(s)", l + 1, take)
    mixtures = []
    for l, K in zip(range(c), cfg.class_K()):
        samples = y[lab0 == l]
        if samples.size < SMALL_CLASS:
            mixtures.append(GammaMixture.single(fit_single_gamma_ml(samples, cfg.em.min_intensity_clamp)))
        else:
            mixtures.append(fit_class_model(samples, K, cfg))
    report.counters["refit_pixels"] = report.counters.get("refit_pixels", 0) + int(y.size)
    return ClassModelSet(tuple(mixtures)), LabelField.from_zero_based(lab0, c, x.shape)


def algorithm3_unsupervised(grid: IntensityGrid, cfg: PipelineConfig):
    """Alternate segmentation, beta estimation and class refits from an all-pixel EM seed.

    Stops when beta moves less than ``delta`` and every class's first two
    moments move less than ``param_tol`` (relative), or at ``max_iters``.
    """
    _check_grid(grid, cfg)
    t0 = time.perf_counter()
    report = RunReport("algorithm3", cfg.beta0, cfg.beta_method)
    models = initial_unsupervised_models(grid, cfg, report)
    cliques = build_cliques(grid.width, grid.height)
    beta = cfg.beta0 if cfg.fixed_beta is None else float(cfg.fixed_beta)
    x = None
    for it in range(1, cfg.max_iters + 1):
        unary = unary_costs(grid, models)
        x, energy = _segment(unary, beta, cliques)
        new_beta = beta
        if cfg.fixed_beta is None:
            try:
                est = estimate_beta(cfg.beta_method, x, unary, cliques, cfg)
                new_beta = est.beta
                report.estimates.append(est.to_dict())
            except EstimationUndefinedError as exc:
                log.warning("iteration %d: %s; keeping beta=%g", it, exc, beta)
                report.flag("estimator_undefined")
        new_models, x_seed = _refit(grid, x, models, cfg, report)
        dparam = _param_change(models, new_models)
        report.trace.append({"iteration": it, "beta": beta, "energy": energy, "beta_next": new_beta,
                             "delta_beta": abs(new_beta - beta), "delta_params": dparam})
        report.iterations = it
        done = abs(new_beta - beta) < cfg.delta and dparam < cfg.param_tol
        beta, models = new_beta, new_models
        if done:
            report.converged = True
            break
    else:
        log.warning("algorithm 3 hit the %d-iteration cap", cfg.max_iters)
        report.flag("iteration_cap")
    # final labeling is the MAP labeling for the returned (beta, models)
    unary = unary_costs(grid, models)
    x, energy = _segment(unary, beta, cliques)
    if len(np.unique(x.labels)) < cfg.num_classes:
        report.flag("degenerate_labeling")
    report.beta = beta
    report.models = models
    report.energy = energy
    report.timing["seconds"] = time.perf_counter() - t0
    return x, report


# -- tiling ------------------------------------------------------------------

def tile_bounds(height: int, width: int, tile_size: int) -> list[tuple[int, int, int, int]]:
    """Row-major (r0, r1, c0, c1) windows; edge tiles are smaller."""
    return [(r, min(r + tile_size, height), c, min(c + tile_size, width))
            for r in range(0, height, tile_size) for c in range(0, width, tile_size)]


def tile_segment(grid: IntensityGrid, tile_size: int, cfg: PipelineConfig, threads: int = 1):
    """Run the unsupervised driver on each tile and paste the results together.

    Tiles are independent (no border blending, no shared parameters), so the
    mosaic does not depend on ``threads``. Returns (labels, per-tile reports).
    """
    if tile_size < 32:
        raise ValueError("tile_size must be >= 32")
    bounds = tile_bounds(grid.height, grid.width, tile_size)

    def work(b):
        r0, r1, c0, c1 = b
        return algorithm3_unsupervised(IntensityGrid(grid.values[r0:r1, c0:c1]), cfg)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]
    out = np.empty(grid.shape, dtype=np.int64)
    reports = []
    for (r0, r1, c0, c1), (x, rep) in zip(bounds, results):
        out[r0:r1, c0:c1] = x.labels
        rep.counters["tile"] = [r0, r1, c0, c1]
        reports.append(rep)
    return LabelField(out, cfg.num_classes), reports
