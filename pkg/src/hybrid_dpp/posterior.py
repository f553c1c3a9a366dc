"""Hybrid-control posterior, posterior means and the superiority decision."""

from __future__ import annotations

from dataclasses import dataclass

from .betacalc import BetaParams, DomainError, prob_superiority
from .borrowing import BorrowingPolicy, HistoricalControl, dynamic_weight, overall_weight

__all__ = [
    "TrialOutcome",
    "PosteriorPair",
    "Decision",
    "hybrid_posterior",
    "treatment_posterior",
    "posterior_mean_hybrid",
    "posterior_mean_no_borrowing",
    "pmd",
    "posterior_pair",
    "decide",
]


@dataclass(frozen=True)
class TrialOutcome:
    y_c: int
    n_c: int
    y_t: int
    n_t: int

    def __post_init__(self):
        if self.n_c < 1 or self.n_t < 1:
            raise DomainError(f"arm sizes must be positive, got n_c={self.n_c}, n_t={self.n_t}")
        if not 0 <= self.y_c <= self.n_c:
            raise DomainError(f"y_c must lie in [0, {self.n_c}], got {self.y_c}")
        if not 0 <= self.y_t <= self.n_t:
            raise DomainError(f"y_t must lie in [0, {self.n_t}], got {self.y_t}")

    @property
    def p_hat_c(self) -> float:
        return self.y_c / self.n_c


@dataclass(frozen=True)
class PosteriorPair:
    control: BetaParams
    treatment: BetaParams
    weight_used: float


@dataclass(frozen=True)
class Decision:
    significant: bool
    post_prob: float
    weight_used: float


def _check_weight(w: float) -> None:
    if not 0.0 <= w <= 1.0:
        raise DomainError(f"borrowing weight must lie in [0, 1], got {w}")


def hybrid_posterior(outcome: TrialOutcome, hist: HistoricalControl, prior_c: BetaParams, w: float) -> BetaParams:
    """Control-rate posterior with the historical likelihood raised to ``w``."""
    _check_weight(w)
    return BetaParams(
        prior_c.alpha + outcome.y_c + w * hist.y_ch,
        prior_c.beta + (outcome.n_c - outcome.y_c) + w * (hist.n_ch - hist.y_ch),
    )


def treatment_posterior(outcome: TrialOutcome, prior_t: BetaParams) -> BetaParams:
    return BetaParams(prior_t.alpha + outcome.y_t, prior_t.beta + (outcome.n_t - outcome.y_t))


def posterior_mean_hybrid(outcome: TrialOutcome, hist: HistoricalControl, prior_c: BetaParams, a: float) -> float:
    _check_weight(a)
    num = prior_c.alpha + outcome.y_c + a * hist.y_ch
    den = prior_c.alpha + prior_c.beta + outcome.n_c + a * hist.n_ch
    return num / den


def posterior_mean_no_borrowing(outcome: TrialOutcome, prior_c: BetaParams) -> float:
    return (prior_c.alpha + outcome.y_c) / (prior_c.alpha + prior_c.beta + outcome.n_c)


def pmd(outcome: TrialOutcome, hist: HistoricalControl, prior_c: BetaParams, w_effective: float) -> float:
    """Posterior mean of the control rate with borrowing minus without."""
    if w_effective == 0.0:
        return 0.0
    return posterior_mean_hybrid(outcome, hist, prior_c, w_effective) - posterior_mean_no_borrowing(outcome, prior_c)


def realized_weight(
    outcome: TrialOutcome, hist: HistoricalControl, prior_c: BetaParams, policy: BorrowingPolicy
) -> float:
    w_d = dynamic_weight(outcome.y_c, outcome.n_c, hist, prior_c, policy)
    return overall_weight(w_d, policy, outcome.p_hat_c, hist.p_hat)


def posterior_pair(
    outcome: TrialOutcome,
    hist: HistoricalControl,
    prior_c: BetaParams,
    prior_t: BetaParams,
    policy: BorrowingPolicy,
) -> PosteriorPair:
    w = realized_weight(outcome, hist, prior_c, policy)
    return PosteriorPair(hybrid_posterior(outcome, hist, prior_c, w), treatment_posterior(outcome, prior_t), w)


def decide(
    outcome: TrialOutcome,
    hist: HistoricalControl,
    prior_c: BetaParams,
    prior_t: BetaParams,
    policy: BorrowingPolicy,
    tau: float,
) -> Decision:
    """Significant when ``P(p_t > p_c | hybrid data) > tau`` (strict)."""
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    pair = posterior_pair(outcome, hist, prior_c, prior_t, policy)
    post = prob_superiority(pair.treatment, pair.control)
    return Decision(post > tau, post, pair.weight_used)
