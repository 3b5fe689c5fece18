import itertools

import numpy as np
import pytest

from conftest import per_cell_oracle, random_instance
from hetnet_opt.association import (Association, InfeasibleAssociationError, association_update,
                                    effective_rates, re_association, solve_fixed_association,
                                    solve_single_bs)
from hetnet_opt.fw_solver import Allocation, SolverOptions, utility_of_rates
from hetnet_opt.rates import RateMatrix
from hetnet_opt.scenario import MACRO, PICO, ScenarioConfig, generate_scenario, scenario_from_gains


def test_association_validation():
    with pytest.raises(ValueError):
        Association(np.array([[0, 2]]))
    a = Association.from_cells([1, 0], 2)
    assert a.a.tolist() == [[0, 1], [1, 0]]
    assert a.is_single and a.serving_cell.tolist() == [1, 0]
    assert not Association.all_ones(2, 2).is_single


def test_effective_rates_masks_links():
    r = np.arange(1, 9, dtype=float).reshape(2, 2, 2)
    eff = effective_rates(RateMatrix(r), Association.from_cells([1, 0], 2))
    assert eff.r[0, 0].tolist() == [0.0, 0.0]
    assert eff.r[0, 1].tolist() == [3.0, 4.0]
    assert eff.r[1, 1].tolist() == [0.0, 0.0]


def test_effective_rates_infeasible():
    r = np.ones((2, 2, 1))
    r[0, 1] = 0
    with pytest.raises(InfeasibleAssociationError):
        effective_rates(RateMatrix(r), Association.from_cells([1, 0], 2))


def test_update_tie_breaks_low_index():
    # link rates 3, 5, 5 -> cell 1
    r = np.array([[[3.0], [5.0], [5.0]]])
    alloc = Allocation.from_dense(np.ones((1, 3, 1)), np.ones(1))
    assert association_update(alloc, RateMatrix(r)).serving_cell.tolist() == [1]


def test_update_matches_brute_force(rng):
    for _ in range(50):
        K, B, I = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 5)
        r = rng.uniform(0, 1, (K, B, I))
        pi = rng.dirichlet(np.ones(I))
        a = rng.dirichlet(np.ones(K), size=(B, I)).transpose(2, 0, 1) * pi
        alloc = Allocation.from_dense(a, pi)
        got = association_update(alloc, RateMatrix(r)).serving_cell
        for k in range(K):
            link = [sum(a[k, b, i] * r[k, b, i] for i in range(I)) for b in range(B)]
            assert got[k] == max(range(B), key=lambda b: (link[b], -b))
        # idempotent on an allocation already masked to the association
        masked = Allocation.from_dense(a * Association.from_cells(got, B).a[:, :, None], pi)
        assert np.array_equal(association_update(masked, RateMatrix(r)).serving_cell, got)


def test_single_user_matches_bound():
    rng = np.random.default_rng(5)
    _, rates = random_instance(rng, 1, 3)
    rates = RateMatrix(rates.r * 1e-6, rates.patterns)
    jr = solve_single_bs(rates, opts=SolverOptions(epsilon=1e-4))
    assert jr.association.is_single
    assert abs(jr.utility - jr.relaxed_bound) <= 1e-4
    assert jr.bound_gap >= -1e-4


@pytest.mark.parametrize("alg", ["fw", "fc"])
def test_single_bs_below_bound_and_monotone(alg):
    rng = np.random.default_rng(11)
    _, rates = random_instance(rng, 6, 3)
    rates = RateMatrix(rates.r * 1e-6, rates.patterns)
    opts = SolverOptions(epsilon=0.01)
    jr = solve_single_bs(rates, opts=opts, relaxed_alg=alg)
    assert jr.association.is_single
    assert jr.utility <= jr.relaxed_bound + opts.epsilon
    assert all(b > a for a, b in zip(jr.trace, jr.trace[1:]))
    # allocation only uses associated links
    a = jr.allocation.alpha
    assert np.all(a * (1 - jr.association.a[:, :, None]) == 0)
    assert jr.utility == pytest.approx(
        utility_of_rates(jr.allocation.user_rates(rates), np.ones(6)))
    d = jr.to_dict()
    assert len(d["serving_cell"]) == 6


def test_masked_and_universal_constraints_agree():
    rng = np.random.default_rng(21)
    eps = 1e-3
    for _ in range(10):
        K, B = rng.integers(2, 6), rng.integers(2, 4)
        _, rates = random_instance(rng, K, B)
        r = rates.r * 1e-6
        cells = np.argmax(r.max(axis=2), axis=1)
        res = solve_fixed_association(RateMatrix(r), Association.from_cells(cells, B),
                                      opts=SolverOptions(epsilon=eps))
        assert abs(res.utility - per_cell_oracle(r, cells, np.ones(K))) <= 2 * eps


def test_re_association_bias_limits():
    # user 0: macro strongest; user 1: pico strongest
    sc = scenario_from_gains([[-60.0, -80.0, -90.0], [-95.0, -70.0, -75.0]],
                             [1e-6, 1e-8, 1e-8], [MACRO, PICO, PICO])
    rx = sc.received_power_dbm()
    assert re_association(sc, 0.0).serving_cell.tolist() == np.argmax(rx, axis=1).tolist()
    big = re_association(sc, 200.0).serving_cell
    for k, b in enumerate(big):
        assert b in (1, 2)
        assert rx[k, b] == rx[k, 1:].max()
    with pytest.raises(ValueError):
        re_association(sc, np.inf)


def test_re_association_monotone_in_bias():
    sc = generate_scenario(ScenarioConfig(num_users=60), 2)
    picos = set(sc.pico_indices)
    counts = [sum(int(c) in picos for c in re_association(sc, b).serving_cell)
              for b in (0, 5, 10, 15, 20)]
    assert counts == sorted(counts)


def test_brute_force_single_bs_small():
    """On a tiny instance the alternating result is near the best association."""
    rng = np.random.default_rng(3)
    K, B = 3, 2
    _, rates = random_instance(rng, K, B)
    rates = RateMatrix(rates.r * 1e-6, rates.patterns)
    opts = SolverOptions(epsilon=1e-3)
    best = -np.inf
    for cells in itertools.product(range(B), repeat=K):
        try:
            res = solve_fixed_association(rates, Association.from_cells(cells, B), opts=opts)
        except InfeasibleAssociationError:
            continue
        best = max(best, res.utility)
    jr = solve_single_bs(rates, opts=opts)
    assert jr.utility <= best + 2e-3
    assert best <= jr.relaxed_bound + 1e-3
