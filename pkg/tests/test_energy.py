import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import all_labelings
from sarseg.energy import (CLAMP, ClassModelSet, PottsPrior, UnaryCostTable, equal_label_count,
                           gibbs_log_prior, shifted_energy, total_energy, unary_costs)
from sarseg.gamma import GammaMixture, GammaMode
from sarseg.grid import IntensityGrid, LabelField, build_cliques


def models(*pairs):
    return ClassModelSet(tuple(GammaMixture.single(GammaMode(a, lam)) for a, lam in pairs))


def test_unary_costs_examples():
    # Exponential(rate 1) at y=0 has density 1, so cost 0
    grid = IntensityGrid(np.array([[0.0, 2.0, 7.5]]))
    u = unary_costs(grid, models((1.0, 1.0), (3.0, 0.5)))
    assert u.costs[0, 0] == pytest.approx(0.0)
    assert u.costs[2, 1] == pytest.approx(-stats.gamma.logpdf(7.5, 3.0, scale=2.0))
    # zero density (a > 1 at y = 0) is clamped
    assert u.costs[0, 1] == CLAMP
    same = unary_costs(grid, models((2.0, 1.0), (2.0, 1.0)))
    assert np.all(same.costs[:, 0] == same.costs[:, 1])


def test_unary_table_validation():
    with pytest.raises(ValueError):
        UnaryCostTable(np.zeros((5, 2)), (2, 2))
    with pytest.raises(ValueError):
        UnaryCostTable(np.array([[np.inf, 0.0]]), (1, 1))
    with pytest.raises(ValueError):
        PottsPrior(-0.1)


def test_total_energy_examples():
    cl = build_cliques(2, 2)
    zero = UnaryCostTable(np.zeros((4, 2)), (2, 2))
    ones = LabelField(np.ones((2, 2), int), 2)
    assert total_energy(ones, zero, PottsPrior(1.0), cl) == -6.0
    checker = LabelField(np.array([[1, 2], [2, 1]]), 2)
    assert gibbs_log_prior(checker, PottsPrior(1.0), cl) == 2.0
    assert gibbs_log_prior(ones, PottsPrior(0.7), cl) == pytest.approx(0.7 * 6)
    rng = np.random.default_rng(1)
    u = UnaryCostTable(rng.uniform(0, 10, (4, 2)), (2, 2))
    assert total_energy(checker, u, PottsPrior(0.0), cl) == pytest.approx(u.costs[[0, 1, 2, 3], [0, 1, 1, 0]].sum())


@given(st.integers(0, 2**31), st.floats(0, 5))
def test_total_energy_brute_summation(seed, beta):
    rng = np.random.default_rng(seed)
    lab = rng.integers(1, 3, size=(3, 3))
    costs = rng.uniform(-5, 5, (9, 2))
    u = UnaryCostTable(costs, (3, 3))
    x = LabelField(lab, 2)
    cl = build_cliques(3, 3)
    flat = lab.ravel()
    e = sum(costs[p, flat[p] - 1] for p in range(9))
    for r1 in range(3):
        for c1 in range(3):
            for r2 in range(3):
                for c2 in range(3):
                    a, b = r1 * 3 + c1, r2 * 3 + c2
                    if a > b and max(abs(r1 - r2), abs(c1 - c2)) == 1 and flat[a] == flat[b]:
                        e -= beta
    prior = PottsPrior(beta)
    assert total_energy(x, u, prior, cl) == pytest.approx(e)
    assert shifted_energy(x, u, prior, cl) == pytest.approx(e + beta * len(cl))
    # doubling beta doubles the pairwise part
    pair = total_energy(x, u, prior, cl) - total_energy(x, u, PottsPrior(0.0), cl)
    pair2 = total_energy(x, u, PottsPrior(2 * beta), cl) - total_energy(x, u, PottsPrior(0.0), cl)
    assert pair2 == pytest.approx(2 * pair)


def test_prior_normalises_over_enumeration():
    cl = build_cliques(3, 2)
    beta = 0.8
    labs = all_labelings(6, 2)
    logp = np.array([gibbs_log_prior(LabelField.from_zero_based(l, 2, (2, 3)), PottsPrior(beta), cl) for l in labs])
    z = np.exp(logp).sum()
    assert np.exp(logp - np.log(z)).sum() == pytest.approx(1.0)


def test_energy_argmin_is_posterior_argmax():
    rng = np.random.default_rng(4)
    cl = build_cliques(3, 2)
    grid = IntensityGrid(rng.gamma(3.0, 2.0, (2, 3)))
    ms = models((3.0, 0.6), (3.0, 0.3))
    u = unary_costs(grid, ms)
    prior = PottsPrior(0.6)
    labs = all_labelings(6, 2)
    energies, posts = [], []
    y = grid.flat()
    for l in labs:
        x = LabelField.from_zero_based(l, 2, (2, 3))
        energies.append(total_energy(x, u, prior, cl))
        like = np.prod([stats.gamma.pdf(y[p], ms.mixtures[l[p]].modes[0].a,
                                        scale=1 / ms.mixtures[l[p]].modes[0].lam) for p in range(6)])
        posts.append(like * np.exp(gibbs_log_prior(x, prior, cl)))
    assert int(np.argmin(energies)) == int(np.argmax(posts))


def test_clamping_preserves_argmin():
    grid = IntensityGrid(np.array([[0.0, 1e-3, 50.0]]))
    u = unary_costs(grid, models((0.5, 1.0), (3.0, 1.0)))
    assert u.per_pixel_argmin().labels.tolist() == [[1, 1, 2]]


def test_equal_label_count_dimension_mismatch():
    x = LabelField(np.ones((2, 2), int), 2)
    with pytest.raises(ValueError):
        equal_label_count(x, build_cliques(3, 2))


def test_model_set_json():
    ms = models((2.0, 1.0), (4.0, 0.5))
    assert ClassModelSet.from_dict(ms.to_dict()) == ms
    with pytest.raises(ValueError):
        ClassModelSet((GammaMixture.single(GammaMode(1, 1)),))
