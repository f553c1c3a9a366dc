"""Dynamic borrowing weights, the three-component overall weight, and EESS.

The overall power-prior weight is ``w = a * w_d * 1{|p̂_c - p̂_ch| < Δmax}``:
a global cap ``a = n_ch_e / n_ch``, a similarity-driven dynamic weight
``w_d`` and a hard gate on the observed rate difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import betaln
from scipy.stats import binom

from .betacalc import (
    QUAD_MAX,
    QUAD_START,
    QUAD_TOL,
    BetaParams,
    DomainError,
    NumericError,
    gauss_legendre,
    log_pdf_from_logs,
    quantile_logs,
    superiority_matrix,
)

__all__ = [
    "HistoricalControl",
    "Method",
    "BorrowingPolicy",
    "concurrent_posterior",
    "historical_posterior",
    "weight_eb",
    "weight_bp",
    "weight_gbc",
    "weight_jsd",
    "dynamic_weight",
    "dynamic_weights",
    "gate_open",
    "overall_weight",
    "overall_weights",
    "eess",
    "eess_alternative",
]

EB_GRID = 1001
EB_TOL = 1e-6
# Floor for densities inside log-ratios.
LOG_DENSITY_FLOOR = math.log(1e-300)
_LN2 = math.log(2.0)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class HistoricalControl:
    """Responders ``y_ch`` among ``n_ch`` historical controls; at most ``n_ch_e`` borrowed."""

    y_ch: int
    n_ch: int
    n_ch_e: int

    def __post_init__(self):
        if self.n_ch < 1:
            raise DomainError(f"n_ch must be positive, got {self.n_ch}")
        if not 0 <= self.y_ch <= self.n_ch:
            raise DomainError(f"y_ch must lie in [0, n_ch={self.n_ch}], got {self.y_ch}")
        if not 0 <= self.n_ch_e <= self.n_ch:
            raise DomainError(f"n_ch_e must lie in [0, n_ch={self.n_ch}], got {self.n_ch_e}")

    @classmethod
    def from_rate(cls, p_hat: float, n_ch: int, n_ch_e: int) -> "HistoricalControl":
        """Round ``p_hat * n_ch`` to the nearest responder count (0.27 * 637 -> 172)."""
        if not 0.0 <= p_hat <= 1.0:
            raise DomainError(f"historical rate must lie in [0, 1], got {p_hat}")
        return cls(_round_half_up(p_hat * n_ch), n_ch, n_ch_e)

    @property
    def p_hat(self) -> float:
        return self.y_ch / self.n_ch

    @property
    def global_a(self) -> float:
        return self.n_ch_e / self.n_ch

    def with_borrowing(self, n_ch_e: int) -> "HistoricalControl":
        return HistoricalControl(self.y_ch, self.n_ch, n_ch_e)


class Method(str, Enum):
    EB = "eb"
    BP = "bp"
    GBC = "gbc"
    JSD = "jsd"
    FIXED = "fixed"

    @property
    def label(self) -> str:
        return {
            "eb": "Empirical Bayes",
            "bp": "Bayesian P",
            "gbc": "Generalized BC",
            "jsd": "Jensen-Shannon",
            "fixed": "Fixed power prior",
        }[self.value]


@dataclass(frozen=True)
class BorrowingPolicy:
    """Dynamic method with its tuning parameters, the gate and the global cap.

    ``eta`` is used by BP, GBC and JSD; ``theta`` only by GBC. FIXED pins
    ``w_d`` to 1, which with ``delta_max = inf`` is the ordinary power prior.
    """

    method: Method
    global_a: float
    delta_max: float = math.inf
    eta: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not 0.0 <= self.global_a <= 1.0:
            raise DomainError(f"global_a must lie in [0, 1], got {self.global_a}")
        if not self.delta_max >= 0.0:
            raise DomainError(f"delta_max must be non-negative, got {self.delta_max}")
        if not self.eta > 0.0:
            raise DomainError(f"eta must be positive, got {self.eta}")
        if not 0.0 < self.theta < 1.0:
            raise DomainError(f"theta must lie in (0, 1), got {self.theta}")

    @classmethod
    def for_history(cls, hist: HistoricalControl, method: Method | str, **kwargs) -> "BorrowingPolicy":
        return cls(Method(method), hist.global_a, **kwargs)


def _check_counts(y_c: int, n_c: int) -> None:
    if n_c < 1 or not 0 <= y_c <= n_c:
        raise DomainError(f"need 0 <= y_c <= n_c with n_c >= 1, got y_c={y_c}, n_c={n_c}")


def concurrent_posterior(y_c: int, n_c: int, prior: BetaParams) -> BetaParams:
    return BetaParams(prior.alpha + y_c, prior.beta + (n_c - y_c))


def historical_posterior(hist: HistoricalControl, prior: BetaParams, global_a: float) -> BetaParams:
    """Historical-only posterior with counts discounted by the global cap."""
    return BetaParams(prior.alpha + global_a * hist.y_ch, prior.beta + global_a * (hist.n_ch - hist.y_ch))


# -- empirical Bayes ---------------------------------------------------------


def _eb_objective(w, y_c, n_c, hist, prior):
    """Log marginal likelihood of ``y_c`` (up to a constant) as a function of ``w``."""
    a0, b0 = prior.alpha, prior.beta
    ych, nch_fail = hist.y_ch, hist.n_ch - hist.y_ch
    return betaln(a0 + y_c + w * ych, b0 + (n_c - y_c) + w * nch_fail) - betaln(a0 + w * ych, b0 + w * nch_fail)


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def weight_eb(y_c: int, n_c: int, hist: HistoricalControl, prior: BetaParams) -> float:
    """Empirical-Bayes ``w_d``: the power on the historical likelihood that
    maximizes the marginal likelihood of the concurrent control count.

    Grid scan over [0, 1] in steps of 0.001, then golden-section refinement
    inside the cell around the best grid point. Ties go to the larger weight,
    and a boundary optimum is returned exactly.
    """
    _check_counts(y_c, n_c)
    grid = np.linspace(0.0, 1.0, EB_GRID)
    g = _eb_objective(grid, y_c, n_c, hist, prior)
    i = int(np.flatnonzero(g == g.max())[-1])
    best_w, best_g = float(grid[i]), float(g[i])
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, EB_GRID - 1)]

    def f(w):
        return float(_eb_objective(w, y_c, n_c, hist, prior))

    w_ref = _golden_max(f, float(lo), float(hi), EB_TOL)
    if f(w_ref) > best_g:
        best_w = w_ref
    return best_w


# -- Bayesian P ---------------------------------------------------------------


def _bp_from_xi(xi1: np.ndarray, eta: float) -> np.ndarray:
    xi1 = np.clip(xi1, 0.0, 1.0)
    return np.clip(2.0 * np.minimum(xi1, 1.0 - xi1), 0.0, 1.0) ** eta


def weight_bp(
    y_c: int, n_c: int, hist: HistoricalControl, prior: BetaParams, eta: float, global_a: float
) -> float:
    """``[2 min(P(p_c >= p_ch), P(p_c <= p_ch))]^eta`` under the two posteriors."""
    _check_counts(y_c, n_c)
    c = concurrent_posterior(y_c, n_c, prior)
    ch = historical_posterior(hist, prior, global_a)
    xi1 = superiority_matrix([c], [ch])[0, 0]
    return float(_bp_from_xi(np.asarray(xi1), eta))


# -- generalized Bhattacharyya coefficient -----------------------------------


def _log_power_overlap(c: BetaParams, ch: BetaParams, theta: float) -> float:
    """``log ∫ f_ch^theta f_c^(1-theta) dx``; closed form for two beta densities."""
    a = (1.0 - theta) * c.alpha + theta * ch.alpha
    b = (1.0 - theta) * c.beta + theta * ch.beta
    return float(betaln(a, b) - (1.0 - theta) * betaln(c.alpha, c.beta) - theta * betaln(ch.alpha, ch.beta))


def gbc_value(c: BetaParams, ch: BetaParams, theta: float, eta: float) -> float:
    first = math.exp(_log_power_overlap(c, ch, theta))
    second = math.exp(_log_power_overlap(c, ch, 1.0 - theta))
    return min(max(0.5 * (first + second), 0.0), 1.0) ** eta


def weight_gbc(
    y_c: int, n_c: int, hist: HistoricalControl, prior: BetaParams, theta: float, eta: float, global_a: float
) -> float:
    _check_counts(y_c, n_c)
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    c = concurrent_posterior(y_c, n_c, prior)
    ch = historical_posterior(hist, prior, global_a)
    return gbc_value(c, ch, theta, eta)


# -- Jensen-Shannon -----------------------------------------------------------


def _kl_to_mixture(p: BetaParams, q: BetaParams, n: int) -> float:
    """``KL(f_p || (f_p + f_q)/2)`` in bits, integrated over the quantiles of ``p``."""
    u, v, w = gauss_legendre(n)
    lx, l1mx = quantile_logs(p.alpha, p.beta, u, v)
    lp = np.maximum(log_pdf_from_logs(p.alpha, p.beta, lx, l1mx), LOG_DENSITY_FLOOR)
    lq = np.maximum(log_pdf_from_logs(q.alpha, q.beta, lx, l1mx), LOG_DENSITY_FLOOR)
    integrand = 1.0 - np.logaddexp(0.0, lq - lp) / _LN2
    return float(integrand @ w)


def kl_to_mixture(p: BetaParams, q: BetaParams, tol: float = QUAD_TOL, max_nodes: int = QUAD_MAX) -> float:
    prev = _kl_to_mixture(p, q, QUAD_START)
    n = QUAD_START
    while n < max_nodes:
        n *= 2
        cur = _kl_to_mixture(p, q, n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    raise NumericError(
        "KL quadrature did not converge",
        {"p": str(p), "q": str(q), "nodes": n, "last_difference": abs(cur - prev)},
    )


def jsd_similarity(c: BetaParams, ch: BetaParams) -> float:
    """``1 - JSD(f_c, f_ch)`` with base-2 logarithms, clamped to [0, 1]."""
    js = 0.5 * (kl_to_mixture(c, ch) + kl_to_mixture(ch, c))
    return min(max(1.0 - js, 0.0), 1.0)


def weight_jsd(
    y_c: int, n_c: int, hist: HistoricalControl, prior: BetaParams, eta: float, global_a: float
) -> float:
    _check_counts(y_c, n_c)
    c = concurrent_posterior(y_c, n_c, prior)
    ch = historical_posterior(hist, prior, global_a)
    return jsd_similarity(c, ch) ** eta


# -- composition ---------------------------------------------------------------


def dynamic_weight(y_c: int, n_c: int, hist: HistoricalControl, prior: BetaParams, policy: BorrowingPolicy) -> float:
    m = policy.method
    if m is Method.EB:
        return weight_eb(y_c, n_c, hist, prior)
    if m is Method.BP:
        return weight_bp(y_c, n_c, hist, prior, policy.eta, policy.global_a)
    if m is Method.GBC:
        return weight_gbc(y_c, n_c, hist, prior, policy.theta, policy.eta, policy.global_a)
    if m is Method.JSD:
        return weight_jsd(y_c, n_c, hist, prior, policy.eta, policy.global_a)
    _check_counts(y_c, n_c)
    return 1.0


def dynamic_weights(n_c: int, hist: HistoricalControl, prior: BetaParams, policy: BorrowingPolicy) -> np.ndarray:
    """``w_d`` for every ``y_c`` in ``0..n_c``."""
    if policy.method is Method.BP:
        # one quadrature table for all y_c
        cs = [concurrent_posterior(y, n_c, prior) for y in range(n_c + 1)]
        ch = historical_posterior(hist, prior, policy.global_a)
        xi1 = superiority_matrix(cs, [ch])[0]
        return _bp_from_xi(xi1, policy.eta)
    return np.array([dynamic_weight(y, n_c, hist, prior, policy) for y in range(n_c + 1)])


def gate_open(p_hat_c: float, p_hat_ch: float, delta_max: float) -> bool:
    return abs(p_hat_c - p_hat_ch) < delta_max


def overall_weight(w_d: float, policy: BorrowingPolicy, p_hat_c: float, p_hat_ch: float) -> float:
    """``a * w_d * 1{|p̂_c - p̂_ch| < Δmax}``."""
    if not 0.0 <= w_d <= 1.0:
        raise DomainError(f"w_d must lie in [0, 1], got {w_d}")
    if not gate_open(p_hat_c, p_hat_ch, policy.delta_max):
        return 0.0
    return policy.global_a * w_d


def overall_weights(
    n_c: int, hist: HistoricalControl, prior: BetaParams, policy: BorrowingPolicy
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-``y_c`` arrays ``(w_d, gate, w)`` over ``y_c = 0..n_c``."""
    w_d = dynamic_weights(n_c, hist, prior, policy)
    gate = np.array([gate_open(y / n_c, hist.p_hat, policy.delta_max) for y in range(n_c + 1)])
    w = np.where(gate, policy.global_a * w_d, 0.0)
    return w_d, gate, w


def eess(n_c: int, p_c: float, hist: HistoricalControl, prior: BetaParams, policy: BorrowingPolicy) -> float:
    """Expected effective sample size borrowed: ``n_ch * E[w]`` over ``Y_c ~ Bin(n_c, p_c)``.

    With ``a = n_ch_e / n_ch`` this equals ``n_ch_e * E[w_d * gate]``.
    """
    if not 0.0 <= p_c <= 1.0:
        raise DomainError(f"p_c must lie in [0, 1], got {p_c}")
    _, _, w = overall_weights(n_c, hist, prior, policy)
    pmf = binom.pmf(np.arange(n_c + 1), n_c, p_c)
    return float(hist.n_ch * (pmf @ w))


def eess_alternative(n_c: int, p_c: float, hist: HistoricalControl, prior: BetaParams, policy: BorrowingPolicy) -> float:
    """The literal ``n_ch_e * E[w]`` reading; reported for diagnosis only."""
    _, _, w = overall_weights(n_c, hist, prior, policy)
    pmf = binom.pmf(np.arange(n_c + 1), n_c, p_c)
    return float(hist.n_ch_e * (pmf @ w))
