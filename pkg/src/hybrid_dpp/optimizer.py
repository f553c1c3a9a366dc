"""Exhaustive search for the smallest design meeting power and influence limits.

Each candidate is recalibrated at ``p_c = p_t = p̂_ch`` and then scored over
a discrepancy band of control rates around the historical rate. Power is
not assumed monotone in the sample size, so every candidate is evaluated.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .betacalc import BetaParams, DomainError
from .borrowing import BorrowingPolicy, HistoricalControl, Method
from .engine import (
    EXACT,
    DesignSpec,
    Mode,
    OCResult,
    Scenario,
    calibrate_tau,
    operating_characteristics,
    outcome_table,
)

__all__ = [
    "OptimizationConstraints",
    "BorrowingTemplate",
    "DesignCandidate",
    "OptimizationResult",
    "candidate_grid",
    "evaluate_candidate",
    "min_sample_size",
    "design_sweep",
]


@dataclass(frozen=True)
class OptimizationConstraints:
    target_power: float = 0.8
    alpha: float = 0.1
    max_mean_pmd: float = math.inf
    max_xi: float = 1.0
    xi_eps: float = 0.01
    discrepancy_band: float = 0.1
    effect: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.target_power < 1.0:
            raise DomainError(f"target_power must lie in [0, 1), got {self.target_power}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.max_mean_pmd >= 0.0:
            raise DomainError(f"max_mean_pmd must be non-negative, got {self.max_mean_pmd}")
        if not 0.0 <= self.max_xi <= 1.0:
            raise DomainError(f"max_xi must lie in [0, 1], got {self.max_xi}")
        if not self.discrepancy_band >= 0.0:
            raise DomainError(f"discrepancy_band must be non-negative, got {self.discrepancy_band}")


@dataclass(frozen=True)
class BorrowingTemplate:
    """Borrowing settings shared by all candidates; ``global_a`` follows each candidate's ``n_ch_e``."""

    method: Method
    delta_max: float = 0.1
    eta: float = 1.0
    theta: float = 0.5

    def policy(self, hist: HistoricalControl) -> BorrowingPolicy:
        return BorrowingPolicy(Method(self.method), hist.global_a, self.delta_max, self.eta, self.theta)


@dataclass
class DesignCandidate:
    n_t: int
    n_c: int
    n_ch_e: int
    method: Method
    tau: float = math.nan
    # band control rate -> (null OC with p_t = p_c, alternative OC with p_t = p_c + effect)
    oc_at: dict[float, tuple[OCResult, OCResult]] = field(default_factory=dict)
    power: float = math.nan
    feasible: bool = False
    reasons: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.n_t + self.n_c

    def sort_key(self):
        return (self.total, self.n_ch_e, self.n_c)


@dataclass
class OptimizationResult:
    selected: DesignCandidate
    feasible: bool
    candidates: list[DesignCandidate]


def candidate_grid(n_c_values, ratio: float, multipliers=(1.0,)) -> list[tuple[int, int, int]]:
    """``(n_t, n_c, n_ch_e)`` triples sorted by total size, then ``n_ch_e``, then ``n_c``."""
    triples = set()
    for n_c in n_c_values:
        n_t = int(round(ratio * n_c))
        if n_c < 1 or n_t < 1:
            raise DomainError(f"candidate sizes must be positive, got n_c={n_c}, n_t={n_t}")
        for m in multipliers:
            triples.add((n_t, int(n_c), int(math.floor(m * n_c + 0.5))))
    return sorted(triples, key=lambda t: (t[0] + t[1], t[2], t[1]))


def _band(center: float, delta: float) -> list[float]:
    pts = [round(center - delta, 12), center, round(center + delta, 12)] if delta > 0 else [center]
    return [p for p in pts if 0.0 <= p <= 1.0]


def evaluate_candidate(
    triple: tuple[int, int, int],
    constraints: OptimizationConstraints,
    hist: HistoricalControl,
    prior_c: BetaParams,
    prior_t: BetaParams,
    borrowing: BorrowingTemplate,
    center: float | None = None,
    method: Mode = EXACT,
) -> DesignCandidate:
    n_t, n_c, n_ch_e = triple
    h = hist.with_borrowing(n_ch_e)
    design = DesignSpec(n_c, n_t, prior_c, prior_t, h, borrowing.policy(h), constraints.alpha)
    center = h.p_hat if center is None else center
    table = outcome_table(design)
    tau = calibrate_tau(design, center, method, table)
    cand = DesignCandidate(n_t, n_c, n_ch_e, Method(borrowing.method), tau)
    for p_c in _band(center, constraints.discrepancy_band):
        p_t = min(round(p_c + constraints.effect, 12), 1.0)
        null = operating_characteristics(design, Scenario(p_c, p_c), tau, method, constraints.xi_eps, table)
        alt = operating_characteristics(design, Scenario(p_c, p_t), tau, method, constraints.xi_eps, table)
        cand.oc_at[p_c] = (null, alt)
        if abs(null.mean_pmd) > constraints.max_mean_pmd:
            cand.reasons.append(f"|mean PMD| {abs(null.mean_pmd):.6f} > {constraints.max_mean_pmd} at p_c={p_c}")
        if null.xi_eps > constraints.max_xi:
            cand.reasons.append(f"xi {null.xi_eps:.6f} > {constraints.max_xi} at p_c={p_c}")
    cand.power = cand.oc_at[center][1].reject_prob
    if cand.power < constraints.target_power:
        cand.reasons.insert(0, f"power {cand.power:.6f} < {constraints.target_power}")
    cand.feasible = not cand.reasons
    return cand


def min_sample_size(
    grid: list[tuple[int, int, int]],
    constraints: OptimizationConstraints,
    hist: HistoricalControl,
    prior_c: BetaParams,
    prior_t: BetaParams,
    borrowing: BorrowingTemplate,
    center: float | None = None,
    method: Mode = EXACT,
    threads: int = 1,
) -> OptimizationResult:
    """Smallest feasible candidate; if none is feasible, the best-power one flagged infeasible."""
    if not grid:
        raise DomainError("candidate grid is empty")

    def work(triple):
        return evaluate_candidate(triple, constraints, hist, prior_c, prior_t, borrowing, center, method)

    if threads == 1:
        cands = [work(t) for t in grid]
    else:
        with ThreadPoolExecutor(max_workers=threads if threads > 0 else None) as pool:
            cands = list(pool.map(work, grid))
    cands.sort(key=DesignCandidate.sort_key)
    feasible = [c for c in cands if c.feasible]
    if feasible:
        return OptimizationResult(feasible[0], True, cands)
    best = max(cands, key=lambda c: (c.power, [-k for k in c.sort_key()]))
    return OptimizationResult(best, False, cands)


def design_sweep(
    n_c_values,
    p_c_values,
    ratio: float,
    multiplier: float,
    hist: HistoricalControl,
    prior_c: BetaParams,
    prior_t: BetaParams,
    borrowing: BorrowingTemplate,
    alpha: float = 0.1,
    effect: float = 0.2,
    center: float | None = None,
    method: Mode = EXACT,
) -> list[dict]:
    """Rows of tau, type I error, power and mean PMD per ``(n_c, p_c)`` for plotting."""
    rows = []
    for n_t, n_c, n_ch_e in candidate_grid(n_c_values, ratio, (multiplier,)):
        h = hist.with_borrowing(n_ch_e)
        design = DesignSpec(n_c, n_t, prior_c, prior_t, h, borrowing.policy(h), alpha)
        table = outcome_table(design)
        c = h.p_hat if center is None else center
        tau = calibrate_tau(design, c, method, table)
        for p_c in p_c_values:
            null = operating_characteristics(design, Scenario(p_c, p_c), tau, method, table=table)
            alt = operating_characteristics(
                design, Scenario(p_c, min(round(p_c + effect, 12), 1.0)), tau, method, table=table
            )
            rows.append(
                {
                    "n_t": n_t,
                    "n_c": n_c,
                    "n_ch_e": n_ch_e,
                    "p_c": p_c,
                    "tau": tau,
                    "type1": null.reject_prob,
                    "power": alt.reject_prob,
                    "mean_pmd": null.mean_pmd,
                }
            )
    return rows
