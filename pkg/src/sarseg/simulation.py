"""Synthetic two-class scenes corrupted with Gamma noise, and the OA-versus-sigma sweep."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import PottsPrior, unary_costs
from .gamma import GammaMixture, GammaMode
from .graphcut import map_segment
from .grid import IntensityGrid, LabelField, build_cliques, overall_accuracy, permutation_accuracy
from .pipelines import (PipelineConfig, RoiSpec, algorithm1_supervised, algorithm2_supervised,
                        algorithm3_unsupervised, fit_models_from_roi)

log = logging.getLogger(__name__)

SHAPES = ("rectangles", "linear_slick", "patch_slick")
METHODS = ("TM", "LE", "LSF", "CD", "NP", "UNS")
TM_GRID = tuple(np.round(np.arange(0, 4.0001, 0.25), 2))


# -- ground truths -----------------------------------------------------------

def nested_rectangles(height: int = 128, width: int = 128) -> LabelField:
    """Dark background with bright frames, a dark hole inside and a few separate blocks."""
    lab = np.ones((height, width), dtype=np.int64)
    h, w = height, width
    lab[h // 8: h // 2, w // 8: w // 2] = 2
    lab[h // 4: 3 * h // 8, w // 4: 3 * w // 8] = 1
    lab[5 * h // 8: 7 * h // 8, w // 8: 3 * w // 8] = 2
    lab[9 * h // 16: 15 * h // 16, 9 * w // 16: 15 * w // 16] = 2
    lab[11 * h // 16: 13 * h // 16, 11 * w // 16: 13 * w // 16] = 1
    lab[h // 8: 3 * h // 8, 5 * w // 8: 7 * w // 8] = 2
    return LabelField(lab, 2)


def linear_slick(height: int = 128, width: int = 128, thickness: float = 0.08) -> LabelField:
    """A dark diagonal band (class 1) on bright sea (class 2)."""
    r, c = np.mgrid[0:height, 0:width]
    d = np.abs(r / height - 0.8 * c / width - 0.1) / np.hypot(1, 0.8)
    return LabelField(np.where(d < thickness / 2, 1, 2), 2)


def patch_slick(height: int = 128, width: int = 128) -> LabelField:
    """An irregular dark blob (class 1): a disc with a wavy, lobed outline."""
    r, c = np.mgrid[0:height, 0:width]
    y = (r - 0.55 * height) / height
    x = (c - 0.45 * width) / width
    ang = np.arctan2(y, x)
    radius = 0.25 + 0.05 * np.sin(3 * ang) + 0.03 * np.cos(5 * ang + 1.0)
    return LabelField(np.where(np.hypot(x, y) < radius, 1, 2), 2)


def ground_truth(shape: str, height: int = 128, width: int = 128) -> LabelField:
    builders = {"rectangles": nested_rectangles, "linear_slick": linear_slick, "patch_slick": patch_slick}
    if shape not in builders:
        raise ValueError(f"unknown ground truth {shape!r}; choose one of {SHAPES}")
    return builders[shape](height, width)


# -- image simulation --------------------------------------------------------

def mode_for_sigma(mean: float, sigma: float) -> GammaMode:
    """Gamma with the given mean and standard deviation: a = m^2/s^2, rate = m/s^2."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return GammaMode(mean ** 2 / sigma ** 2, mean / sigma ** 2)


@dataclass
class SimSpec:
    truth: LabelField
    classes: tuple  # GammaMode or GammaMixture per class
    seed: int = 0

    def __post_init__(self):
        self.classes = tuple(GammaMixture.single(m) if isinstance(m, GammaMode) else m for m in self.classes)
        if len(self.classes) != self.truth.num_classes:
            raise ValueError(f"{len(self.classes)} class densities for {self.truth.num_classes} classes")


def rng_for(seed: int) -> np.random.Generator:
    # Philox: counter-based 64-bit stream; numpy's gamma sampler is Marsaglia-Tsang
    return np.random.Generator(np.random.Philox(seed))


def simulate_image(spec: SimSpec) -> IntensityGrid:
    """Draw every pixel independently from its true class density."""
    rng = rng_for(spec.seed)
    lab0 = spec.truth.zero_based()
    y = np.empty(lab0.size)
    for l, mix in enumerate(spec.classes):
        idx = np.flatnonzero(lab0 == l)
        comp = rng.choice(mix.K, size=idx.size, p=mix.weights) if mix.K > 1 else np.zeros(idx.size, int)
        y[idx] = rng.gamma(mix.shapes[comp], 1.0 / mix.rates[comp])
    return IntensityGrid(y.reshape(spec.truth.shape))


def roi_from_truth(truth: LabelField, fraction: float = 0.1, seed: int = 0, margin: int = 2) -> RoiSpec:
    """Training masks: a random ``fraction`` of each class's pixels lying at least ``margin`` from a border."""
    from scipy.ndimage import binary_erosion

    rng = rng_for(seed + 7919)
    masks = []
    for l in range(1, truth.num_classes + 1):
        inner = binary_erosion(truth.labels == l, iterations=margin) if margin else truth.labels == l
        if not inner.any():
            inner = truth.labels == l
        pick = inner & (rng.random(truth.shape) < fraction)
        if not pick.any():
            pick = inner
        masks.append(pick)
    return RoiSpec(tuple(masks))


# -- sweep -------------------------------------------------------------------

@dataclass
class SweepSpec:
    sigmas: tuple[float, ...] = (1.0, 1.8, 2.6)
    means: tuple[float, ...] = (5.0, 9.0)
    methods: tuple[str, ...] = METHODS
    repetitions: int = 5
    shape: str = "rectangles"
    height: int = 128
    width: int = 128
    seed: int = 0
    roi_fraction: float = 0.1
    threads: int = 1
    config: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        self.sigmas = tuple(float(s) for s in self.sigmas)
        self.means = tuple(float(m) for m in self.means)
        self.methods = tuple(m.upper() for m in self.methods)
        if any(not s > 0 for s in self.sigmas):
            raise ValueError("sigma values must be positive")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def rep_seed(base: int, sigma_index: int, rep: int) -> int:
    return base * 1_000_003 + sigma_index * 1009 + rep


def evaluate_point(spec: SweepSpec, sigma_index: int, rep: int) -> list[dict]:
    """All requested methods on one noisy realisation; rows of (method, sigma, rep, oa, beta)."""
    sigma = spec.sigmas[sigma_index]
    truth = ground_truth(spec.shape, spec.height, spec.width)
    seed = rep_seed(spec.seed, sigma_index, rep)
    grid = simulate_image(SimSpec(truth, tuple(mode_for_sigma(m, sigma) for m in spec.means), seed))
    roi = roi_from_truth(truth, spec.roi_fraction, seed)
    base = spec.config
    rows = []

    def cfg(**kw):
        d = dict(base.__dict__)
        d.update(kw)
        return PipelineConfig(**d)

    def add(method, oa, beta):
        rows.append({"method": method, "sigma": sigma, "rep": rep, "oa": float(oa), "beta": float(beta)})

    for method in spec.methods:
        if method == "TM":
            models = fit_models_from_roi(grid, roi, cfg())
            unary = unary_costs(grid, models)
            cliques = build_cliques(grid.width, grid.height)
            scores = [overall_accuracy(map_segment(unary, PottsPrior(float(b)), cliques), truth) for b in TM_GRID]
            best = int(np.argmax(scores))
            add("TM", scores[best], TM_GRID[best])
        elif method == "LE":
            x, rep_ = algorithm2_supervised(grid, roi, cfg())
            add("LE", overall_accuracy(x, truth), rep_.beta)
        elif method == "NP":
            x, rep_ = algorithm2_supervised(grid, roi, cfg(fixed_beta=0.0))
            add("NP", overall_accuracy(x, truth), 0.0)
        elif method in ("LSF", "CD"):
            x, rep_ = algorithm1_supervised(grid, roi, cfg(beta_method=method))
            add(method, overall_accuracy(x, truth), rep_.beta)
        elif method == "UNS":
            x, rep_ = algorithm3_unsupervised(grid, cfg())
            add("UNS", permutation_accuracy(x, truth)[0], rep_.beta)
    return rows


def run_sweep(spec: SweepSpec) -> list[dict]:
    """Rows for every (sigma, repetition, method), in a fixed order regardless of threads."""
    jobs = [(si, r) for si in range(len(spec.sigmas)) for r in range(spec.repetitions)]
    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            parts = list(pool.map(lambda j: evaluate_point(spec, *j), jobs))
    else:
        parts = [evaluate_point(spec, *j) for j in jobs]
    return [row for part in parts for row in part]


def summarize(rows: list[dict]) -> dict:
    """Mean OA (and mean beta) per method and sigma."""
    out: dict = {}
    for row in rows:
        cell = out.setdefault(row["method"], {}).setdefault(repr(row["sigma"]), {"oa": [], "beta": []})
        cell["oa"].append(row["oa"])
        cell["beta"].append(row["beta"])
    return {m: {s: {"mean_oa": float(np.mean(v["oa"])), "mean_beta": float(np.mean(v["beta"])), "n": len(v["oa"])}
                for s, v in per.items()} for m, per in out.items()}


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "sigma", "rep", "oa"])
    for row in rows:
        writer.writerow([row["method"], repr(row["sigma"]), row["rep"], repr(row["oa"])])
    return buf.getvalue()


def summary_json(rows: list[dict]) -> str:
    return json.dumps(summarize(rows), indent=2, sort_keys=True)
