"""Beta-distribution special functions and quantile-domain quadrature.

Everything downstream (borrowing weights, posterior probabilities, the
operating-characteristic engine) goes through this module. Densities and
quantiles are carried as ``(log x, log(1 - x))`` pairs so that posteriors
with shapes near zero, e.g. ``Beta(0.001, 45.001)`` after a zero-response
arm, keep their mass even when ``x`` itself underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import betainc, betaincinv, betaln

__all__ = [
    "BetaParams",
    "DomainError",
    "NumericError",
    "log_beta_fn",
    "beta_pdf",
    "beta_cdf",
    "beta_quantile",
    "prob_superiority",
    "superiority_matrix",
    "quantile_logs",
    "log_pdf_from_logs",
    "cdf_from_logs",
    "gauss_legendre",
    "QUAD_START",
    "QUAD_MAX",
    "QUAD_TOL",
]

QUAD_START = 128
QUAD_MAX = 1024
QUAD_TOL = 1e-9

# Below this (log) distance from an endpoint the leading term of the
# incomplete-beta series is exact to double precision.
_LOG_TAIL = math.log(1e-20)


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class NumericError(ArithmeticError):
    """Quadrature failed to converge; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0) or not (
            math.isfinite(self.alpha) and math.isfinite(self.beta)
        ):
            raise DomainError(f"beta shapes must be positive and finite, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def swap(self) -> "BetaParams":
        return BetaParams(self.beta, self.alpha)

    def __str__(self) -> str:
        return f"Beta({self.alpha:g}, {self.beta:g})"


def _check_shapes(a: float, b: float) -> None:
    if not (a > 0 and b > 0):
        raise DomainError(f"beta shapes must be positive, got ({a}, {b})")


def log_beta_fn(a: float, b: float) -> float:
    """ln B(a, b) via log-gamma."""
    _check_shapes(a, b)
    return float(betaln(a, b))


def beta_pdf(x: float, p: BetaParams) -> float:
    if not 0.0 < x < 1.0:
        raise DomainError(f"density argument must lie in (0, 1), got {x}")
    a, b = p.alpha, p.beta
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - betaln(a, b))


def beta_cdf(x: float, p: BetaParams) -> float:
    """Regularized incomplete beta I_x(alpha, beta)."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"cdf argument must lie in [0, 1], got {x}")
    a, b = p.alpha, p.beta
    _check_shapes(a, b)
    if x <= a / (a + b):
        return float(betainc(a, b, x))
    return float(1.0 - betainc(b, a, 1.0 - x))


def beta_quantile(u: float, p: BetaParams) -> float:
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {u}")
    _check_shapes(p.alpha, p.beta)
    return float(betaincinv(p.alpha, p.beta, u))


# Exponent of the sigmoidal map u = s^m / (s^m + (1-s)^m) applied under the
# Gauss-Legendre rule. Quantile-domain integrands of tiny-shape posteriors
# behave like u^0.001 at the ends; the map turns that into a high-order zero.
_SIGMOID_ORDER = 3


@lru_cache(maxsize=None)
def _gl(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (1.0 + t)
    r = 0.5 * (1.0 - t)
    m = _SIGMOID_ORDER
    den = s**m + r**m
    u = s**m / den
    v = r**m / den
    wt = 0.5 * w * m * (s * r) ** (m - 1) / den**2
    for arr in (u, v, wt):
        arr.setflags(write=False)
    return u, v, wt


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes ``u``, complements ``1 - u`` and weights for integrals over (0, 1).

    Fixed-order Gauss-Legendre composed with an endpoint-clustering map.
    """
    return _gl(int(n))


def quantile_logs(a: float, b: float, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log x, log(1 - x))`` for ``x = Q(u)`` of ``Beta(a, b)``.

    ``v`` must equal ``1 - u`` computed without cancellation. Levels whose
    quantile lies above 1/2 are inverted through the reflected distribution
    so that mass piled against x = 1 is resolved as finely as mass at 0.
    """
    lnb = betaln(a, b)
    lx = np.empty_like(u)
    l1mx = np.empty_like(u)
    lo = u <= betainc(a, b, 0.5)
    hi = ~lo
    with np.errstate(divide="ignore"):
        if lo.any():
            x = betaincinv(a, b, u[lo])
            asym = (np.log(u[lo]) + math.log(a) + lnb) / a
            lx_lo = np.where(asym < _LOG_TAIL, asym, np.log(x))
            lx[lo] = lx_lo
            l1mx[lo] = np.log1p(-np.exp(lx_lo))
        if hi.any():
            y = betaincinv(b, a, v[hi])
            asym = (np.log(v[hi]) + math.log(b) + lnb) / b
            ly = np.where(asym < _LOG_TAIL, asym, np.log(y))
            l1mx[hi] = ly
            lx[hi] = np.log1p(-np.exp(ly))
    return lx, l1mx


def log_pdf_from_logs(a: float, b: float, lx: np.ndarray, l1mx: np.ndarray) -> np.ndarray:
    return (a - 1.0) * lx + (b - 1.0) * l1mx - betaln(a, b)


def cdf_from_logs(a: float, b: float, lx: np.ndarray, l1mx: np.ndarray) -> np.ndarray:
    """CDF of ``Beta(a, b)`` at points given as ``(log x, log(1 - x))``."""
    lnb = betaln(a, b)
    out = np.empty(np.shape(lx))
    low = lx < _LOG_TAIL
    high = l1mx < _LOG_TAIL
    mid = ~(low | high)
    if low.any():
        out[low] = np.exp(a * lx[low] - math.log(a) - lnb)
    if high.any():
        out[high] = 1.0 - np.exp(b * l1mx[high] - math.log(b) - lnb)
    if mid.any():
        lxm = lx[mid]
        x = np.exp(lxm)
        left = x <= 0.5
        vals = np.empty_like(x)
        vals[left] = betainc(a, b, x[left])
        vals[~left] = 1.0 - betainc(b, a, np.exp(l1mx[mid][~left]))
        out[mid] = vals
    return np.clip(out, 0.0, 1.0)


def _composed_integrals(quant: list[BetaParams], cdfs: list[BetaParams], n: int) -> np.ndarray:
    """``out[i, j] = ∫_0^1 F_{cdfs[i]}(Q_{quant[j]}(u)) du`` by n-point Gauss-Legendre."""
    u, v, w = gauss_legendre(n)
    pts = [quantile_logs(q.alpha, q.beta, u, v) for q in quant]
    lx = np.stack([p[0] for p in pts])
    l1mx = np.stack([p[1] for p in pts])
    out = np.empty((len(cdfs), len(quant)))
    for i, c in enumerate(cdfs):
        out[i] = cdf_from_logs(c.alpha, c.beta, lx, l1mx) @ w
    return out


def _refine(
    quant: list[BetaParams], cdfs: list[BetaParams], pending: np.ndarray, tol: float, max_nodes: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Node-doubling loop for the ``pending`` cells of the (cdfs x quant) table."""
    k, m = pending.shape
    value = np.full((k, m), np.nan)
    diff = np.full((k, m), np.inf)
    todo = pending.copy()
    prev = None
    n = QUAD_START
    while todo.any() and n <= max_nodes:
        rows = np.flatnonzero(todo.any(axis=1))
        cols = np.flatnonzero(todo.any(axis=0))
        cur = np.full((k, m), np.nan)
        cur[np.ix_(rows, cols)] = _composed_integrals(
            [quant[j] for j in cols], [cdfs[i] for i in rows], n
        )
        if prev is not None:
            d = np.abs(cur - prev)
            diff = np.where(todo, d, diff)
            ok = todo & (d < tol)
            value[ok] = cur[ok]
            todo &= ~ok
        prev = cur
        n *= 2
    return value, todo, diff, n // 2


def superiority_matrix(
    treatment: list[BetaParams],
    control: list[BetaParams],
    tol: float = QUAD_TOL,
    max_nodes: int = QUAD_MAX,
) -> np.ndarray:
    """``out[i, j] = P(p_t > p_c)`` for ``p_c ~ control[i]``, ``p_t ~ treatment[j]``.

    Each cell is integrated as ``∫ F_c(Q_t(u)) du`` with node doubling from
    128 up to ``max_nodes`` until successive estimates agree within ``tol``.
    Cells that do not settle are retried in the mirrored form
    ``1 - ∫ F_t(Q_c(u)) du``.
    """
    treatment = list(treatment)
    control = list(control)
    pending = np.ones((len(control), len(treatment)), dtype=bool)
    result, pending, diff, n = _refine(treatment, control, pending, tol, max_nodes)
    if pending.any():
        mirrored, still, diff_b, n = _refine(control, treatment, pending.T, tol, max_nodes)
        ok = pending & ~still.T
        result[ok] = 1.0 - mirrored.T[ok]
        pending = still.T
        diff = np.minimum(diff, diff_b.T)
    if pending.any():
        i, j = np.argwhere(pending)[0]
        raise NumericError(
            "probability of superiority did not converge",
            {
                "treatment": str(treatment[j]),
                "control": str(control[i]),
                "nodes": n,
                "last_difference": float(diff[i, j]),
                "unconverged_cells": int(pending.sum()),
            },
        )
    return np.clip(result, 0.0, 1.0)


def prob_superiority(t: BetaParams, c: BetaParams) -> float:
    """P(p_t > p_c) for independent ``p_t ~ t`` and ``p_c ~ c``."""
    return float(superiority_matrix([t], [c])[0, 0])
