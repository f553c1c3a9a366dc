"""Trial simulation, threshold calibration and operating characteristics.

Everything a trial contributes depends only on its outcome ``(Y_c, Y_t)``,
so each design is reduced once to an :class:`OutcomeTable` holding the
realized weight, posterior-mean difference and posterior probability for
every cell of the ``(n_c + 1) x (n_t + 1)`` outcome grid. Exact mode then
sums the table against binomial probabilities; Monte Carlo mode looks up
simulated outcomes in it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np
from scipy.stats import binom

from .betacalc import BetaParams, DomainError, superiority_matrix
from .borrowing import BorrowingPolicy, HistoricalControl, overall_weights
from .posterior import TrialOutcome

__all__ = [
    "DesignSpec",
    "Scenario",
    "OCResult",
    "MonteCarlo",
    "Exact",
    "EXACT",
    "OutcomeTable",
    "outcome_table",
    "simulate_outcome",
    "simulate_counts",
    "calibrate_tau",
    "operating_characteristics",
    "oc_sweep",
    "offset_scenarios",
]

BLOCK_SIZE = 8192
_CALIBRATION_STREAM = 0
_OC_STREAM = 1


@dataclass(frozen=True)
class DesignSpec:
    n_c: int
    n_t: int
    prior_c: BetaParams
    prior_t: BetaParams
    hist: HistoricalControl
    policy: BorrowingPolicy
    alpha: float = 0.1

    def __post_init__(self):
        if self.n_c < 1 or self.n_t < 1:
            raise DomainError(f"arm sizes must be positive, got n_c={self.n_c}, n_t={self.n_t}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not math.isclose(self.policy.global_a, self.hist.global_a, rel_tol=1e-12, abs_tol=1e-15):
            raise DomainError(
                f"policy.global_a={self.policy.global_a} disagrees with n_ch_e/n_ch={self.hist.global_a}"
            )


@dataclass(frozen=True)
class Scenario:
    p_c: float
    p_t: float

    def __post_init__(self):
        for name in ("p_c", "p_t"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")


def offset_scenarios(p_c_values: Iterable[float], offset: float) -> list[Scenario]:
    """``p_t = p_c + offset`` for each control rate (offset 0 gives null scenarios)."""
    return [Scenario(p, round(p + offset, 12)) for p in p_c_values]


@dataclass(frozen=True)
class MonteCarlo:
    n_sims: int = 100_000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n_sims < 1:
            raise DomainError(f"n_sims must be positive, got {self.n_sims}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class Exact:
    pass


EXACT = Exact()
Mode = Union[MonteCarlo, Exact]


@dataclass(frozen=True)
class OCResult:
    p_c: float
    p_t: float
    tau: float
    reject_prob: float
    mean_pmd: float
    sd_pmd: float
    xi_eps: float
    eess: float
    eps: float
    n_sims: int | str
    mc_se: float

    @property
    def mode(self) -> str:
        return "exact" if self.n_sims == "exact" else "mc"


@dataclass(frozen=True)
class OutcomeTable:
    design: DesignSpec
    w_d: np.ndarray = field(repr=False)
    gate: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    pmd: np.ndarray = field(repr=False)
    post_prob: np.ndarray = field(repr=False)


def outcome_table(design: DesignSpec) -> OutcomeTable:
    n_c, n_t = design.n_c, design.n_t
    hist, pc, pt = design.hist, design.prior_c, design.prior_t
    w_d, gate, w = overall_weights(n_c, hist, pc, design.policy)
    y_c = np.arange(n_c + 1)
    controls = [
        BetaParams(pc.alpha + y + wy * hist.y_ch, pc.beta + (n_c - y) + wy * (hist.n_ch - hist.y_ch))
        for y, wy in zip(y_c, w)
    ]
    treatments = [BetaParams(pt.alpha + y, pt.beta + (n_t - y)) for y in range(n_t + 1)]
    post_prob = superiority_matrix(treatments, controls)

    mean_with = (pc.alpha + y_c + w * hist.y_ch) / (pc.alpha + pc.beta + n_c + w * hist.n_ch)
    mean_without = (pc.alpha + y_c) / (pc.alpha + pc.beta + n_c)
    pmd = np.where(w > 0.0, mean_with - mean_without, 0.0)
    for arr in (w_d, gate, w, pmd, post_prob):
        arr.setflags(write=False)
    return OutcomeTable(design, w_d, gate, w, pmd, post_prob)


# -- simulation ----------------------------------------------------------------


def _block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    # Philox is counter-based: (seed, stream, block) addresses an independent substream.
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, stream, block]))


def simulate_outcome(stream: np.random.Generator, design: DesignSpec, scenario: Scenario) -> TrialOutcome:
    y_c = int(stream.binomial(design.n_c, scenario.p_c))
    y_t = int(stream.binomial(design.n_t, scenario.p_t))
    return TrialOutcome(y_c, design.n_c, y_t, design.n_t)


def simulate_counts(
    design: DesignSpec, scenario: Scenario, mc: MonteCarlo, stream: int = _OC_STREAM
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``mc.n_sims`` independent ``(Y_c, Y_t)`` pairs.

    Trials are cut into fixed blocks of ``BLOCK_SIZE``; block ``b`` always
    draws from the substream keyed by ``(seed, stream, b)``, so the result
    does not depend on how many threads process the blocks.
    """
    n = mc.n_sims
    n_blocks = -(-n // BLOCK_SIZE)

    def work(b: int):
        size = min(BLOCK_SIZE, n - b * BLOCK_SIZE)
        g = _block_generator(mc.seed, stream, b)
        return g.binomial(design.n_c, scenario.p_c, size), g.binomial(design.n_t, scenario.p_t, size)

    threads = mc.threads if mc.threads > 0 else None
    if threads == 1 or n_blocks == 1:
        parts = [work(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# -- calibration ---------------------------------------------------------------


def _check_null(p_null: float) -> None:
    if not 0.0 < p_null < 1.0:
        raise DomainError(f"calibration rate must lie strictly inside (0, 1), got {p_null}")


def calibrate_tau(
    design: DesignSpec,
    p_null: float | None = None,
    method: Mode = EXACT,
    table: OutcomeTable | None = None,
) -> float:
    """Threshold ``tau`` giving rejection rate at most ``alpha`` when ``p_c = p_t = p_null``.

    Monte Carlo: the ``ceil((1 - alpha) n)``-th order statistic of the
    simulated posterior probabilities. Exact: the smallest attained posterior
    probability ``v`` with ``P(post_prob > v) <= alpha``.
    """
    if p_null is None:
        p_null = design.hist.p_hat
    _check_null(p_null)
    table = table or outcome_table(design)
    alpha = design.alpha
    if isinstance(method, MonteCarlo):
        y_c, y_t = simulate_counts(design, Scenario(p_null, p_null), method, _CALIBRATION_STREAM)
        probs = np.sort(table.post_prob[y_c, y_t])
        k = math.ceil((1.0 - alpha) * method.n_sims)
        return float(probs[max(k, 1) - 1])

    pmf_c = binom.pmf(np.arange(design.n_c + 1), design.n_c, p_null)
    pmf_t = binom.pmf(np.arange(design.n_t + 1), design.n_t, p_null)
    mass = np.outer(pmf_c, pmf_t).ravel()
    values, inverse = np.unique(table.post_prob.ravel(), return_inverse=True)
    value_mass = np.bincount(inverse, weights=mass, minlength=values.size)
    # tail[k] = P(post_prob > values[k])
    tail = np.concatenate([np.cumsum(value_mass[::-1])[::-1][1:], [0.0]])
    k = int(np.flatnonzero(tail <= alpha)[0])
    return float(values[k])


# -- operating characteristics -------------------------------------------------


def operating_characteristics(
    design: DesignSpec,
    scenario: Scenario,
    tau: float,
    method: Mode = EXACT,
    eps: float = 0.01,
    table: OutcomeTable | None = None,
) -> OCResult:
    """Rejection probability, PMD summaries, ``xi(eps) = P(|d| > eps)`` and EESS."""
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau must lie in [0, 1], got {tau}")
    if not eps >= 0.0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    table = table or outcome_table(design)
    reject = table.post_prob > tau
    d = table.pmd
    n_ch = design.hist.n_ch

    if isinstance(method, MonteCarlo):
        y_c, y_t = simulate_counts(design, scenario, method)
        r = float(np.mean(reject[y_c, y_t]))
        dd = d[y_c]
        return OCResult(
            scenario.p_c,
            scenario.p_t,
            tau,
            r,
            float(np.mean(dd)),
            float(np.std(dd)),
            float(np.mean(np.abs(dd) > eps)),
            float(n_ch * np.mean(table.w[y_c])),
            eps,
            method.n_sims,
            math.sqrt(r * (1.0 - r) / method.n_sims),
        )

    pmf_c = binom.pmf(np.arange(design.n_c + 1), design.n_c, scenario.p_c)
    pmf_t = binom.pmf(np.arange(design.n_t + 1), design.n_t, scenario.p_t)
    r = float(pmf_c @ reject @ pmf_t)
    mean = float(pmf_c @ d)
    var = float(pmf_c @ (d - mean) ** 2)
    return OCResult(
        scenario.p_c,
        scenario.p_t,
        tau,
        min(max(r, 0.0), 1.0),
        mean,
        math.sqrt(max(var, 0.0)),
        float(pmf_c @ (np.abs(d) > eps)),
        float(n_ch * (pmf_c @ table.w)),
        eps,
        "exact",
        0.0,
    )


def oc_sweep(
    design: DesignSpec,
    scenarios: list[Scenario],
    tau: float,
    method: Mode = EXACT,
    eps: float = 0.01,
    table: OutcomeTable | None = None,
) -> list[OCResult]:
    if not scenarios:
        raise DomainError("scenario list is empty")
    table = table or outcome_table(design)
    return [operating_characteristics(design, s, tau, method, eps, table) for s in scenarios]
