import math

import pytest

from hybrid_dpp.betacalc import BetaParams, DomainError
from hybrid_dpp.borrowing import BorrowingPolicy, HistoricalControl, Method
from hybrid_dpp.engine import DesignSpec, Scenario, calibrate_tau, operating_characteristics
from hybrid_dpp.optimizer import (
    BorrowingTemplate,
    OptimizationConstraints,
    candidate_grid,
    design_sweep,
    min_sample_size,
)

VAGUE = BetaParams(0.001, 0.001)
HIST = HistoricalControl.from_rate(0.27, 637, 0)
EB = BorrowingTemplate(Method.EB, delta_max=0.1)


def test_constraint_validation():
    with pytest.raises(DomainError):
        OptimizationConstraints(target_power=1.0)
    with pytest.raises(DomainError):
        OptimizationConstraints(alpha=0.0)
    with pytest.raises(DomainError):
        OptimizationConstraints(max_mean_pmd=-1)
    with pytest.raises(DomainError):
        OptimizationConstraints(max_xi=1.5)
    with pytest.raises(DomainError):
        OptimizationConstraints(discrepancy_band=-0.1)


def test_candidate_grid_order_and_rounding():
    g = candidate_grid(range(30, 33), 2.0, (1.0, 1.5))
    assert g[0] == (60, 30, 30) and g[1] == (60, 30, 45)
    assert (62, 31, 47) in g  # 46.5 rounds half up
    totals = [t[0] + t[1] for t in g]
    assert totals == sorted(totals)
    assert all(t[0] == 2 * t[1] for t in g)
    with pytest.raises(DomainError):
        candidate_grid([0], 2.0)


def test_selects_table_design_and_verifies_post_hoc():
    cons = OptimizationConstraints(target_power=0.8, alpha=0.1)
    grid = candidate_grid(range(29, 33), 2.0, (1.0,))
    res = min_sample_size(grid, cons, HIST, VAGUE, VAGUE, EB, center=0.27)
    assert res.feasible
    s = res.selected
    assert (s.n_t, s.n_c, s.n_ch_e) == (62, 31, 31)
    assert s.power == pytest.approx(0.822, abs=0.008)
    assert len(res.candidates) == len(grid)  # nothing pruned
    # independent re-evaluation of the winning design
    h = HIST.with_borrowing(s.n_ch_e)
    d = DesignSpec(s.n_c, s.n_t, VAGUE, VAGUE, h, BorrowingPolicy(Method.EB, h.global_a, 0.1), 0.1)
    tau = calibrate_tau(d, 0.27)
    assert tau == s.tau
    assert operating_characteristics(d, Scenario(0.27, 0.47), tau).reject_prob >= 0.8
    for p_c in (0.17, 0.27, 0.37):
        assert p_c in s.oc_at
    # every smaller candidate is infeasible
    for c in res.candidates:
        if c.sort_key() < s.sort_key():
            assert not c.feasible and c.reasons


def test_vacuous_constraints_pick_first_grid_element():
    cons = OptimizationConstraints(target_power=0.0)
    grid = candidate_grid(range(10, 14), 2.0, (1.0, 2.0))
    res = min_sample_size(grid, cons, HIST, VAGUE, VAGUE, EB, center=0.27)
    assert res.feasible
    assert (res.selected.n_t, res.selected.n_c, res.selected.n_ch_e) == grid[0]


def test_zero_pmd_tolerance_is_infeasible():
    cons = OptimizationConstraints(target_power=0.0, max_mean_pmd=0.0)
    grid = candidate_grid(range(10, 13), 2.0, (1.0,))
    res = min_sample_size(grid, cons, HIST, VAGUE, VAGUE, EB, center=0.27)
    assert not res.feasible
    assert not res.selected.feasible
    assert any("PMD" in r for r in res.selected.reasons)
    assert res.selected.power == max(c.power for c in res.candidates)


def test_parallel_evaluation_is_reproducible():
    cons = OptimizationConstraints()
    grid = candidate_grid(range(14, 18), 2.0, (1.0, 1.5))
    bp = BorrowingTemplate(Method.BP, 0.1)
    a = min_sample_size(grid, cons, HIST, VAGUE, VAGUE, bp, center=0.27, threads=1)
    b = min_sample_size(grid, cons, HIST, VAGUE, VAGUE, bp, center=0.27, threads=3)
    assert [(c.n_c, c.n_ch_e, c.tau, c.power) for c in a.candidates] == [
        (c.n_c, c.n_ch_e, c.tau, c.power) for c in b.candidates
    ]
    assert a.selected.sort_key() == b.selected.sort_key()


def test_empty_grid_rejected():
    with pytest.raises(DomainError):
        min_sample_size([], OptimizationConstraints(), HIST, VAGUE, VAGUE, EB)


def test_design_sweep_directions():
    rows = design_sweep(range(24, 28), [0.27, 0.37], 2.0, 1.0, HIST, VAGUE, VAGUE, EB, center=0.27)
    assert len(rows) == 8
    for r in rows:
        if r["p_c"] == 0.27:
            assert r["type1"] <= 0.1 + 1e-12
        else:
            assert r["type1"] > 0.1  # concurrent rate above the historical rate inflates type I error
    zero = design_sweep(range(24, 26), [0.17, 0.37], 2.0, 0.0, HIST, VAGUE, VAGUE, EB, center=0.27)
    assert all(r["mean_pmd"] == 0.0 for r in zero)
    assert all(math.isfinite(r["tau"]) for r in zero)
