import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from hybrid_dpp.betacalc import BetaParams, DomainError
from hybrid_dpp.borrowing import BorrowingPolicy, HistoricalControl, Method
from hybrid_dpp.engine import (
    BLOCK_SIZE,
    EXACT,
    DesignSpec,
    MonteCarlo,
    Scenario,
    calibrate_tau,
    oc_sweep,
    offset_scenarios,
    operating_characteristics,
    outcome_table,
    simulate_counts,
    simulate_outcome,
)
from hybrid_dpp.posterior import TrialOutcome, decide, pmd, realized_weight
from oracles import mc_se, reject_prob_bruteforce

VAGUE = BetaParams(0.001, 0.001)


def make_design(n_c=45, n_t=45, n_ch_e=45, method=Method.EB, delta=0.1, y_ch=54, n_ch=180, alpha=0.1, **kw):
    h = HistoricalControl(y_ch, n_ch, n_ch_e)
    return DesignSpec(n_c, n_t, VAGUE, VAGUE, h, BorrowingPolicy(method, h.global_a, delta, **kw), alpha)


def test_design_validation():
    h = HistoricalControl(54, 180, 45)
    with pytest.raises(DomainError):
        DesignSpec(45, 45, VAGUE, VAGUE, h, BorrowingPolicy(Method.EB, 0.5))
    with pytest.raises(DomainError):
        make_design(n_c=0)
    with pytest.raises(DomainError):
        Scenario(0.2, 1.2)
    with pytest.raises(DomainError):
        MonteCarlo(n_sims=0)
    with pytest.raises(DomainError):
        MonteCarlo(seed=2**64)


def test_outcome_table_matches_pointwise_pipeline():
    d = make_design(n_c=12, n_t=10, method=Method.BP)
    t = outcome_table(d)
    assert t.post_prob.shape == (13, 11)
    with pytest.raises(ValueError):
        t.post_prob[0, 0] = 0.5
    for y_c in (0, 3, 4, 7, 12):
        o = TrialOutcome(y_c, 12, 6, 10)
        w = realized_weight(o, d.hist, VAGUE, d.policy)
        assert t.w[y_c] == pytest.approx(w, abs=1e-12)
        assert t.pmd[y_c] == pytest.approx(pmd(o, d.hist, VAGUE, w), abs=1e-15)
        for y_t in (0, 5, 10):
            dec = decide(TrialOutcome(y_c, 12, y_t, 10), d.hist, VAGUE, VAGUE, d.policy, 0.9)
            assert t.post_prob[y_c, y_t] == pytest.approx(dec.post_prob, abs=1e-13)


def test_exact_reject_matches_bruteforce_loop():
    d = make_design(n_c=9, n_t=11, method=Method.GBC, delta=0.2)
    tau = 0.85

    def post(yc, yt):
        return decide(TrialOutcome(yc, 9, yt, 11), d.hist, VAGUE, VAGUE, d.policy, tau).post_prob

    for sc in (Scenario(0.3, 0.3), Scenario(0.25, 0.55)):
        r = operating_characteristics(d, sc, tau).reject_prob
        assert r == pytest.approx(reject_prob_bruteforce(9, 11, sc.p_c, sc.p_t, post, tau), abs=1e-12)


def test_exact_pmd_moments_and_eess():
    d = make_design(n_c=20, n_t=20, method=Method.JSD, eta=2.0)
    t = outcome_table(d)
    r = operating_characteristics(d, Scenario(0.35, 0.35), 0.9, eps=0.01, table=t)
    pmf = binom.pmf(np.arange(21), 20, 0.35)
    assert r.mean_pmd == pytest.approx(pmf @ t.pmd)
    assert r.sd_pmd == pytest.approx(np.sqrt(pmf @ t.pmd**2 - (pmf @ t.pmd) ** 2))
    assert r.xi_eps == pytest.approx(pmf @ (np.abs(t.pmd) > 0.01))
    assert r.eess == pytest.approx(180 * (pmf @ t.w))
    assert (r.mode, r.n_sims, r.mc_se) == ("exact", "exact", 0.0)


@pytest.mark.parametrize("method", [Method.EB, Method.BP, Method.FIXED])
def test_exact_and_monte_carlo_agree(method):
    d = make_design(n_c=25, n_t=30, n_ch_e=60, method=method, delta=0.15)
    t = outcome_table(d)
    mc = MonteCarlo(40_000, seed=7)
    for sc in (Scenario(0.3, 0.3), Scenario(0.4, 0.55)):
        ex = operating_characteristics(d, sc, 0.9, EXACT, table=t)
        sim = operating_characteristics(d, sc, 0.9, mc, table=t)
        assert abs(ex.reject_prob - sim.reject_prob) <= 3 * mc_se(ex.reject_prob, mc.n_sims)
        assert abs(ex.mean_pmd - sim.mean_pmd) <= 3 * ex.sd_pmd / np.sqrt(mc.n_sims) + 1e-12
        assert abs(ex.xi_eps - sim.xi_eps) <= 3 * mc_se(ex.xi_eps, mc.n_sims)
        assert sim.mc_se == pytest.approx(np.sqrt(sim.reject_prob * (1 - sim.reject_prob) / mc.n_sims))


def test_results_do_not_depend_on_thread_count():
    d = make_design(n_c=30, n_t=30)
    n = 3 * BLOCK_SIZE + 123
    ref = simulate_counts(d, Scenario(0.3, 0.5), MonteCarlo(n, seed=99, threads=1))
    for threads in (2, 4, 0):
        got = simulate_counts(d, Scenario(0.3, 0.5), MonteCarlo(n, seed=99, threads=threads))
        assert np.array_equal(ref[0], got[0]) and np.array_equal(ref[1], got[1])
    t = outcome_table(d)
    taus = {calibrate_tau(d, None, MonteCarlo(n, seed=5, threads=k), t) for k in (1, 3, 0)}
    assert len(taus) == 1
    ocs = {operating_characteristics(d, Scenario(0.4, 0.6), 0.9, MonteCarlo(n, 5, k), table=t) for k in (1, 3)}
    assert len(ocs) == 1


def test_seed_controls_the_stream():
    d = make_design(n_c=30, n_t=30)
    a = simulate_counts(d, Scenario(0.3, 0.5), MonteCarlo(5000, seed=1))
    b = simulate_counts(d, Scenario(0.3, 0.5), MonteCarlo(5000, seed=1))
    c = simulate_counts(d, Scenario(0.3, 0.5), MonteCarlo(5000, seed=2))
    assert np.array_equal(a[0], b[0]) and not np.array_equal(a[0], c[0])
    # control counts are drawn first in each block, so a shorter run is their prefix
    short = simulate_counts(d, Scenario(0.3, 0.5), MonteCarlo(100, seed=1))
    assert np.array_equal(short[0], a[0][:100])


def test_simulate_outcome_in_range():
    d = make_design(n_c=10, n_t=12)
    g = np.random.Generator(np.random.Philox(3))
    for _ in range(50):
        o = simulate_outcome(g, d, Scenario(0.5, 0.5))
        assert 0 <= o.y_c <= 10 and 0 <= o.y_t <= 12


@settings(max_examples=15)
@given(
    st.integers(5, 25),
    st.integers(5, 25),
    st.sampled_from(list(Method)),
    st.sampled_from([0.05, 0.1, float("inf")]),
    st.floats(0.05, 0.2),
)
def test_exact_calibration_bound(n_c, n_t, method, delta, alpha):
    d = make_design(n_c=n_c, n_t=n_t, n_ch_e=40, method=method, delta=delta, alpha=alpha)
    t = outcome_table(d)
    tau = calibrate_tau(d, None, EXACT, t)
    null = Scenario(d.hist.p_hat, d.hist.p_hat)
    assert operating_characteristics(d, null, tau, table=t).reject_prob <= alpha + 1e-12
    # minimality: rejecting at tau itself as well would exceed alpha
    pmf = np.outer(binom.pmf(np.arange(n_c + 1), n_c, 0.3), binom.pmf(np.arange(n_t + 1), n_t, 0.3))
    assert pmf[t.post_prob >= tau].sum() > alpha


def test_monte_carlo_calibration_bound_and_agreement():
    d = make_design()
    t = outcome_table(d)
    mc = MonteCarlo(100_000, seed=11)
    tau_mc = calibrate_tau(d, None, mc, t)
    y_c, y_t = simulate_counts(d, Scenario(0.3, 0.3), mc, stream=0)
    assert np.mean(t.post_prob[y_c, y_t] > tau_mc) <= d.alpha
    assert abs(tau_mc - calibrate_tau(d, None, EXACT, t)) < 0.01


def test_zero_borrowing_gives_zero_pmd_and_eess():
    d = make_design(n_ch_e=0, method=Method.FIXED, delta=float("inf"))
    for r in oc_sweep(d, offset_scenarios([0.2, 0.3, 0.4], 0.0), 0.9):
        assert r.mean_pmd == 0.0 and r.sd_pmd == 0.0 and r.xi_eps == 0.0 and r.eess == 0.0


def test_invalid_arguments():
    d = make_design(n_c=10, n_t=10)
    with pytest.raises(DomainError):
        calibrate_tau(d, 1.0)
    with pytest.raises(DomainError):
        operating_characteristics(d, Scenario(0.3, 0.3), 1.5)
    with pytest.raises(DomainError):
        oc_sweep(d, [], 0.9)
    assert offset_scenarios([0.1, 0.2], 0.2) == [Scenario(0.1, 0.3), Scenario(0.2, 0.4)]
