"""End-to-end acceptance checks; each test records one PASS/FAIL line."""
import json
import logging
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import brute_energies
from sarseg.beta import (EstimationUndefinedError, cd_estimate, gibbs_sample_mll, loopy_beta_estimate,
                         lsf_estimate)
from sarseg.cli import main
from sarseg.energy import ClassModelSet, PottsPrior, UnaryCostTable, total_energy, unary_costs
from sarseg.gamma import GammaMixture, GammaMode, run_em
from sarseg.graphcut import alpha_expansion, binary_map
from sarseg.grid import IntensityGrid, LabelField, build_cliques
from sarseg.io import file_sha256
from sarseg.lbp import LbpConfig, potts_potential, run_lbp
from sarseg.simulation import SweepSpec, run_sweep, summarize

from test_lbp import exact_pair_marginals

ROOT = Path(__file__).resolve().parents[1]


def binary_instances(count=200, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        h, w = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        beta = (0.0, 0.5, 2.0)[k % 3]
        out.append((UnaryCostTable(rng.uniform(0, 10, (h * w, 2)), (h, w)), beta))
    return out


def test_criterion_1_exact_map(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for u, beta in binary_instances():
        cl = build_cliques(u.width, u.height)
        x = binary_map(u, PottsPrior(beta), cl)
        _, energies = brute_energies(u.costs, cl.i, cl.j, beta)
        worst = max(worst, abs(total_energy(x, u, PottsPrior(beta), cl) - energies.min()))
    dt = time.perf_counter() - t0
    ok = acceptance(1, worst <= 1e-9 and dt < 10, f"max |E_cut - E_min| = {worst:.2e} over 200 instances, {dt:.1f}s")
    assert ok


def test_criterion_2_alpha_expansion(acceptance):
    worst_bin = 0.0
    for u, beta in binary_instances():
        cl = build_cliques(u.width, u.height)
        prior = PottsPrior(beta)
        worst_bin = max(worst_bin, abs(total_energy(alpha_expansion(u, prior, cl), u, prior, cl)
                                       - total_energy(binary_map(u, prior, cl), u, prior, cl)))
    rng = np.random.default_rng(77)
    cl = build_cliques(3, 3)
    gaps, raw_gaps = [], []
    for k in range(100):
        u = UnaryCostTable(rng.uniform(0, 10, (9, 3)), (3, 3))
        beta = (0.5, 1.0, 2.0, 4.0)[k % 4]
        e = total_energy(alpha_expansion(u, PottsPrior(beta), cl), u, PottsPrior(beta), cl)
        emin = brute_energies(u.costs, cl.i, cl.j, beta)[1].min()
        # relative gaps need a fixed zero: the nonnegative shifted energy (unary + beta * #unequal)
        gaps.append((e - emin) / (emin + beta * len(cl)))
        raw_gaps.append((e - emin) / abs(emin))
    exact = sum(g <= 1e-9 for g in gaps)
    ok = worst_bin <= 1e-9 and max(gaps) <= 0.05
    acceptance(2, ok, f"c=2 max diff vs cut {worst_bin:.2e}; c=3: {exact}/100 exact, worst gap "
                      f"{max(gaps):.2%} of the shifted optimum ({max(raw_gaps):.2%} of the unshifted one)")
    assert ok


def test_criterion_3_em_recovery(acceptance):
    rng = np.random.default_rng(3)
    y = np.concatenate([rng.gamma(4.0, 5 / 4.0, 10_000), rng.gamma(6.0, 50 / 6.0, 10_000)])
    t0 = time.perf_counter()
    res = run_em(y, 2)
    dt = time.perf_counter() - t0
    order = np.argsort([m.mean for m in res.mixture.modes])
    means = [res.mixture.modes[k].mean for k in order]
    weights = np.asarray(res.mixture.weights)[order]
    ok = (res.mixture.K == 2 and abs(means[0] / 5 - 1) <= 0.05 and abs(means[1] / 50 - 1) <= 0.05
          and np.all(np.abs(weights - 0.5) <= 0.05) and np.all(np.diff(res.loglik_trace) >= -1e-8)
          and res.iterations <= 100 and dt < 5)
    acceptance(3, ok, f"means {means[0]:.3f}/{means[1]:.3f}, weights {weights.round(3).tolist()}, "
                      f"{res.iterations} iterations, {dt:.2f}s")
    assert ok


def separated_field(beta_star, seed):
    x = gibbs_sample_mll(64, 64, beta_star, 2, 500, seed)
    models = ClassModelSet(tuple(GammaMixture.single(GammaMode.from_moments(m, m / np.sqrt(6))) for m in (5.0, 25.0)))
    rng = np.random.Generator(np.random.Philox(10_000 + seed))
    grid = IntensityGrid(rng.gamma(6.0, np.where(x.labels == 1, 5.0, 25.0) / 6.0))
    return x, unary_costs(grid, models)


def test_criterion_4_beta_consistency(acceptance):
    logging.disable(logging.WARNING)
    t0 = time.perf_counter()
    details, ok = [], True
    try:
        for beta_star in (0.5, 1.0, 1.5):
            est = {"LSF": [], "CD": [], "LOOPY": []}
            for seed in range(20):
                x, u = separated_field(beta_star, seed)
                for name, f in (("LSF", lambda: lsf_estimate(x, u)), ("CD", lambda: cd_estimate(x, u)),
                                ("LOOPY", lambda: loopy_beta_estimate(u))):
                    try:
                        est[name].append(f().beta)
                    except EstimationUndefinedError:
                        est[name].append(np.nan)  # counts against the method
            for name, tol in (("LSF", 0.4), ("CD", 0.2), ("LOOPY", 0.2)):
                vals = np.array(est[name])
                med = float(np.median(vals)) if not np.isnan(vals).any() else float(np.median(np.nan_to_num(vals, nan=np.inf)))
                good = abs(med - beta_star) <= tol * beta_star
                ok &= good
                details.append(f"b*={beta_star} {name} median {med:.3f} ({int(np.isnan(vals).sum())} undefined) "
                               f"{'ok' if good else 'out of range'}")
    finally:
        logging.disable(logging.NOTSET)
    dt = time.perf_counter() - t0
    ok &= dt < 120
    acceptance(4, ok, f"{dt:.0f}s; " + "; ".join(details))
    assert ok


@pytest.fixture(scope="module")
def high_noise_sweep():
    """sigma=2.6, means 5/9, 128x128 rectangles, 10% ROI, 10 seeded repetitions."""
    logging.disable(logging.WARNING)
    try:
        rows = run_sweep(SweepSpec(sigmas=(2.6,), methods=("TM", "LE", "LSF", "CD", "NP"), repetitions=10))
    finally:
        logging.disable(logging.NOTSET)
    return rows, {m: v["2.6"]["mean_oa"] for m, v in summarize(rows).items()}


@pytest.fixture(scope="module")
def separable_sweep():
    """sigma=1.0 version of the same scene (well separated class histograms), 5 repetitions."""
    logging.disable(logging.WARNING)
    try:
        rows = run_sweep(SweepSpec(sigmas=(1.0,), methods=("LE", "UNS"), repetitions=5))
    finally:
        logging.disable(logging.NOTSET)
    return {m: v["1.0"]["mean_oa"] for m, v in summarize(rows).items()}


def test_criterion_5_gain_over_no_prior(acceptance, high_noise_sweep):
    rows, mean = high_noise_sweep
    gains = [le["oa"] - npr["oa"] for le, npr in zip([r for r in rows if r["method"] == "LE"],
                                                      [r for r in rows if r["method"] == "NP"])]
    gain = mean["LE"] - mean["NP"]
    ok = 0.08 <= gain <= 0.20
    acceptance(5, ok, f"mean OA LE {mean['LE']:.4f} - NP {mean['NP']:.4f} = {gain:.4f} "
                      f"(per-seed range {min(gains):.4f}..{max(gains):.4f}); band [0.08, 0.20]")
    assert ok


def test_criterion_6_method_ordering(acceptance, high_noise_sweep, separable_sweep):
    _, m = high_noise_sweep
    checks = {
        "LE>=LSF": m["LE"] >= m["LSF"],
        "LE>=CD": m["LE"] >= m["CD"],
        "LE>=NP": m["LE"] >= m["NP"],
        "TM>=LE-0.01": m["TM"] >= m["LE"] - 0.01,
        "|UNS-LE|<=0.03 (separable)": abs(separable_sweep["UNS"] - separable_sweep["LE"]) <= 0.03,
    }
    ok = all(checks.values())
    oas = ", ".join(f"{k} {v:.4f}" for k, v in sorted(m.items()))
    sep = ", ".join(f"{k} {v:.4f}" for k, v in sorted(separable_sweep.items()))
    failed = [k for k, v in checks.items() if not v]
    acceptance(6, ok, f"sigma=2.6: {oas}; sigma=1.0: {sep}; failed: {failed or 'none'}")
    assert ok


def test_criterion_7_lbp(acceptance):
    rng = np.random.default_rng(5)
    chain_err = 0.0
    for n in range(2, 9):
        for c in (2, 3):
            phi = rng.uniform(0.1, 1.0, (n, c))
            cl = build_cliques(n, 1)
            pot = potts_potential(float(rng.uniform(0, 2)), c)
            b = run_lbp(phi, pot, cl, LbpConfig(max_sweeps=500, message_tol=1e-13))
            chain_err = max(chain_err, float(np.abs(b.tables - exact_pair_marginals(phi, pot, cl)).max()))
    loop_err = 0.0
    cl = build_cliques(2, 2)
    for _ in range(20):
        phi = rng.uniform(0.1, 1.0, (4, 2))
        pot = potts_potential(float(rng.uniform(0, 0.5)), 2)
        loop_err = max(loop_err, float(np.abs(run_lbp(phi, pot, cl).tables - exact_pair_marginals(phi, pot, cl)).max()))
    ok = chain_err <= 1e-9 and loop_err <= 0.05
    acceptance(7, ok, f"chains max error {chain_err:.1e}; 2x2 loopy max entry error {loop_err:.3f}")
    assert ok


def test_criterion_8_determinism(acceptance, tmp_path):
    img = tmp_path / "scene.f32"
    assert main(["simulate", "--height", "80", "--width", "80", "--sigma", "1.8", "--seed", "3", "-o", str(img)]) == 0
    digests = []
    for threads in ("1", "2", "1"):
        out = tmp_path / f"lab{threads}.pgm"
        main(["segment", "-i", str(img), "--tile-size", "40", "--threads", threads, "-o", str(out)])
        digests.append((file_sha256(out), file_sha256(out.with_suffix(".report.json"))))
    manifest = tmp_path / "lab1.pgm.manifest.json"
    replay_ok = main(["replay", str(manifest), "--threads", "2"]) in (0, 1)
    replay_same = (file_sha256(tmp_path / "lab1.pgm"), file_sha256(tmp_path / "lab1.report.json")) == digests[0]
    ok = len(set(digests)) == 1 and replay_ok and replay_same
    acceptance(8, ok, f"label map and report hashes identical across threads 1/2/1 and replay: {ok}")
    assert ok


def test_criterion_9_reference_values_documented(acceptance):
    readme = (ROOT / "README.md").read_text()
    values = ("1.4", "1.44", "1.75", "1.83")
    ok = all(v in readme for v in values)
    acceptance(9, ok, "real-scene beta values recorded in README as reference points only (not reproduced)")
    assert ok
