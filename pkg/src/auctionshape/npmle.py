"""Nonparametric maximum likelihood estimation of the inverse strategy.

The log likelihood of sorted max-rival bids b_(1) <= ... <= b_(T) in
terms of the valuation levels alpha_(t) = alpha(t/T) is a separable sum
sum_t a_t log(alpha_(t) - b_(t)) - c_t log(alpha_(t) - b_(t-1)),
maximized under the monotonicity constraint by a pool-adjacent-violators
sweep whose block updates solve a one-dimensional first-order condition
with a unique root. The fitted payment function is reconstructed from
the levels by a telescoping product and is piecewise linear with slopes
equal to the levels.

Coefficients: max-rival likelihood a_t = t-2, c_t = t-1 (terms t = 1, 2
are indeterminate; alpha_(1) = b_(1) and alpha_(2) = b_(2) are pinned);
pooled symmetric likelihood over all nT bids a_l = (l-n)/(n-1),
c_l = (l-1)/(n-1) with the first n levels pinned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import ConvexPwlFn, MaxRivalSample, MonotoneStepFn

__all__ = [
    "MleFit",
    "KktReport",
    "mle_init",
    "pava_block_root",
    "pava_mle",
    "pava_mle_pooled",
    "e_from_alpha",
    "loglik",
    "loglik_pooled",
    "bid_function_mle",
]


@dataclass(frozen=True)
class KktReport:
    """Certificate of the PAVA solution's first-order optimality."""

    max_block_residual: float
    min_multiplier: float
    max_comp_slack: float
    total_gradient: float


@dataclass(frozen=True)
class MleFit:
    """NPMLE fit.

    alpha_levels[t] is the valuation level attached to order statistic
    t+1; knot_probs[t] = e_(t+1)/b_(t+1) are the implied win
    probabilities; payment interpolates (knot_probs, e) and has slopes
    equal to the levels; loglik omits the indeterminate pinned terms.
    """

    alpha_levels: np.ndarray
    knot_probs: np.ndarray
    payment: ConvexPwlFn
    loglik: float
    merges: int
    kkt: KktReport

    @property
    def alpha_fn(self) -> MonotoneStepFn:
        """The fitted inverse strategy as a left-continuous step function."""
        pos = self.knot_probs > 0.0
        return MonotoneStepFn(self.knot_probs[pos], self.alpha_levels[pos])


def _perturb_ties(b: np.ndarray) -> np.ndarray:
    # FOC terms degenerate at exact ties; spread tied bids by t * 1e-12 * scale.
    if np.all(np.diff(b) > 0):
        return b
    scale = max(b[-1], 1.0)
    return b + np.arange(1, b.size + 1) * (1e-12 * scale)


def _coeffs_max_rival(T: int) -> tuple[np.ndarray, np.ndarray, int]:
    t = np.arange(1, T + 1, dtype=float)
    return t - 2.0, t - 1.0, 2


def _coeffs_pooled(L: int, n: int) -> tuple[np.ndarray, np.ndarray, int]:
    ell = np.arange(1, L + 1, dtype=float)
    return (ell - n) / (n - 1.0), (ell - 1.0) / (n - 1.0), n


def _init_levels(b: np.ndarray, a: np.ndarray, c: np.ndarray, n_pinned: int) -> np.ndarray:
    # per-term unconstrained maximizer (c - a = 1 for both coefficient families)
    levels = b.copy()
    free = np.arange(n_pinned, b.size)
    if free.size:
        levels[free] = (c[free] * b[free] - a[free] * b[free - 1]) / (c[free] - a[free])
    return levels


def mle_init(sample: MaxRivalSample) -> np.ndarray:
    """Unconstrained per-term maximizers of the max-rival likelihood.

    alpha_(1) = b_(1) and alpha_(t) = (t-1) b_(t) - (t-2) b_(t-1) for
    t >= 2; each is at least b_(t).
    """
    b = sample.values
    if b.size < 3:
        raise ValueError("insufficient data for NPMLE")
    a, c, _ = _coeffs_max_rival(b.size)
    return _init_levels(b, a, c, n_pinned=1)


def _foc(alpha: float, idx: np.ndarray, b: np.ndarray, a: np.ndarray, c: np.ndarray) -> float:
    return float(np.sum(a[idx] / (alpha - b[idx]) - c[idx] / (alpha - b[idx - 1])))


def _foc_deriv(alpha: float, idx: np.ndarray, b: np.ndarray, a: np.ndarray, c: np.ndarray) -> float:
    return float(np.sum(-a[idx] / (alpha - b[idx]) ** 2 + c[idx] / (alpha - b[idx - 1]) ** 2))


def _block_root(idx: np.ndarray, b: np.ndarray, a: np.ndarray, c: np.ndarray) -> float:
    if idx.size == 1:
        i = idx[0]
        return float((c[i] * b[i] - a[i] * b[i - 1]) / (c[i] - a[i]))
    last = idx[-1]
    lo = float(b[last])
    # per-term roots bound the search region from a sensible start
    per_term = (c[idx] * b[idx] - a[idx] * b[idx - 1]) / (c[idx] - a[idx])
    hi = float(np.max(per_term))
    spread = max(hi - lo, 1e-12 * max(lo, 1.0))
    hi = lo + spread
    while _foc(hi, idx, b, a, c) > 0.0:
        spread *= 2.0
        hi = lo + spread
        if not math.isfinite(hi):
            raise RuntimeError("root bracket expansion failure")
    start = np.nextafter(lo, math.inf)
    while _foc(start, idx, b, a, c) <= 0.0:
        # only possible within a few ulps of the pole
        start = np.nextafter(start, math.inf)
    root = brentq(_foc, start, hi, args=(idx, b, a, c), xtol=1e-15, rtol=8.9e-16)
    # polish so the stationarity residual is well under the 1e-9 certificate
    for _ in range(6):
        val = _foc(root, idx, b, a, c)
        if abs(val) < 1e-13:
            break
        der = _foc_deriv(root, idx, b, a, c)
        if der == 0.0:
            break
        step = val / der
        cand = root - step
        if not (lo < cand < hi * 2):
            break
        root = cand
    return float(root)


def pava_block_root(block, sample: MaxRivalSample, n: int | None = None) -> float:
    """Root of the pooled first-order condition on a contiguous index block.

    ``block`` is an iterable of 1-based order-statistic indices (all at
    least 3 in the max-rival case). The root is the unique zero of the
    block FOC above the largest bid in the block. Pass ``n`` for the
    pooled-likelihood coefficients.
    """
    b = _perturb_ties(sample.values)
    if n is None:
        a, c, n_pinned = _coeffs_max_rival(b.size)
    else:
        a, c, n_pinned = _coeffs_pooled(b.size, n)
    idx = np.asarray(sorted(int(t) - 1 for t in block), dtype=int)
    if idx.size == 0 or idx[0] < n_pinned:
        raise ValueError("block must contain only free indices")
    return _block_root(idx, b, a, c)


def _kkt(levels: np.ndarray, b: np.ndarray, a: np.ndarray, c: np.ndarray,
         n_pinned: int, blocks: list[np.ndarray]) -> KktReport:
    free = np.arange(n_pinned, b.size)
    g = a[free] / (levels[free] - b[free]) - c[free] / (levels[free] - b[free - 1])
    prefix = np.cumsum(g)
    block_res = 0.0
    for blk in blocks:
        block_res = max(block_res, abs(float(np.sum(
            a[blk] / (levels[blk] - b[blk]) - c[blk] / (levels[blk] - b[blk - 1])))))
    lambdas = prefix[:-1] if prefix.size > 1 else np.array([])
    min_mult = float(np.min(lambdas)) if lambdas.size else 0.0
    if lambdas.size:
        gaps = np.diff(levels[free])
        comp = float(np.max(np.abs(lambdas * gaps)))
    else:
        comp = 0.0
    total = float(prefix[-1]) if prefix.size else 0.0
    return KktReport(block_res, min_mult, comp, total)


def _run_pava(b: np.ndarray, a: np.ndarray, c: np.ndarray, n_pinned: int):
    T = b.size
    if T < n_pinned + 1:
        raise ValueError("insufficient data for NPMLE")
    levels = _init_levels(b, a, c, n_pinned)
    # left-to-right sweep over free indices with a block stack
    blocks: list[np.ndarray] = []
    block_levels: list[float] = []
    merges = 0
    for i in range(n_pinned, T):
        cur = np.array([i], dtype=int)
        cur_level = float(levels[i])
        while block_levels and cur_level < block_levels[-1]:
            prev = blocks.pop()
            block_levels.pop()
            cur = np.concatenate((prev, cur))
            cur_level = _block_root(cur, b, a, c)
            merges += 1
        blocks.append(cur)
        block_levels.append(cur_level)
    out = levels.copy()
    for blk, lev in zip(blocks, block_levels):
        out[blk] = lev
    return out, merges, blocks


def loglik(levels, sample: MaxRivalSample) -> float:
    """Max-rival log likelihood of the levels, omitting the pinned terms.

    Terms with zero coefficient are skipped; a required logarithm of a
    nonpositive argument yields -inf.
    """
    b = sample.values
    a, c, n_pinned = _coeffs_max_rival(b.size)
    return _loglik(np.asarray(levels, float), b, a, c, n_pinned)


def loglik_pooled(levels, pooled: MaxRivalSample, n: int) -> float:
    """Pooled-likelihood analog of :func:`loglik`."""
    b = pooled.values
    a, c, n_pinned = _coeffs_pooled(b.size, n)
    return _loglik(np.asarray(levels, float), b, a, c, n_pinned)


def _loglik(levels, b, a, c, n_pinned) -> float:
    total = 0.0
    for i in range(n_pinned, b.size):
        d1 = levels[i] - b[i]
        d0 = levels[i] - b[i - 1]
        if a[i] != 0.0:
            if d1 <= 0.0:
                return -math.inf
            total += a[i] * math.log(d1)
        if c[i] != 0.0:
            if d0 <= 0.0:
                return -math.inf
            total -= c[i] * math.log(d0)
    return total


def _reconstruct(levels: np.ndarray, b: np.ndarray, n_pinned: int) -> tuple[np.ndarray, ConvexPwlFn]:
    alpha = np.asarray(levels, dtype=float)
    T = b.size
    if alpha.size != T:
        raise ValueError("levels and sample must have equal length")
    r = np.zeros(T)
    for s in range(n_pinned, T):
        den = alpha[s] - b[s - 1]
        if den <= 0.0:
            raise ValueError("infeasible levels")
        r[s] = (alpha[s] - b[s]) / den
    p = np.ones(T)
    for t in range(T - 2, -1, -1):
        p[t] = p[t + 1] * r[t + 1]
    e = b * p
    # nodes at strictly increasing probabilities, prefixed by the origin
    xs = [0.0]
    ys = [0.0]
    for t in range(T):
        if p[t] > xs[-1]:
            xs.append(float(p[t]))
            ys.append(float(e[t]))
    payment = ConvexPwlFn(np.asarray(xs), np.asarray(ys), tol=1e-7)
    return p, payment


def e_from_alpha(levels, sample: MaxRivalSample, n_pinned: int = 2) -> ConvexPwlFn:
    """Payment reconstruction from valuation levels.

    Win probabilities are suffix products p_(t) = prod_{s>t} r_s with
    r_s = (alpha_(s) - b_(s))/(alpha_(s) - b_(s-1)) and r_s = 0 for the
    pinned prefix; e_(t) = b_(t) p_(t), so e_(T) = b_(T) and the
    interpolant of (p, e) has segment slopes exactly alpha_(t).

    Raises ``ValueError("infeasible levels")`` when a required
    denominator alpha_(s) - b_(s-1) is nonpositive.
    """
    _, payment = _reconstruct(np.asarray(levels, float), sample.values, n_pinned)
    return payment


def pava_mle(sample: MaxRivalSample) -> MleFit:
    """NPMLE of the inverse strategy from a max-rival sample.

    Starts at the per-term maximizers, pools adjacent violators from
    the left, and re-solves each pooled block's first-order condition;
    at most T - 3 merges occur. The report carries the KKT certificate
    of the final levels.
    """
    b = _perturb_ties(sample.values)
    if b.size < 3:
        raise ValueError("insufficient data for NPMLE")
    a, c, n_pinned = _coeffs_max_rival(b.size)
    return _fit(b, a, c, n_pinned)


def pava_mle_pooled(pooled: MaxRivalSample, n: int) -> MleFit:
    """NPMLE from the pooled bids of n symmetric bidders."""
    if n < 2:
        raise ValueError("pooled mode needs n >= 2")
    b = _perturb_ties(pooled.values)
    if b.size < n + 1:
        raise ValueError("insufficient data for NPMLE")
    a, c, n_pinned = _coeffs_pooled(b.size, n)
    return _fit(b, a, c, n_pinned)


def _fit(b: np.ndarray, a: np.ndarray, c: np.ndarray, n_pinned: int) -> MleFit:
    levels, merges, blocks = _run_pava(b, a, c, n_pinned)
    kkt = _kkt(levels, b, a, c, n_pinned, blocks)
    p, payment = _reconstruct(levels, b, n_pinned)
    ll = _loglik(levels, b, a, c, n_pinned)
    return MleFit(
        alpha_levels=levels,
        knot_probs=p,
        payment=payment,
        loglik=ll,
        merges=merges,
        kkt=kkt,
    )


def bid_function_mle(sample: MaxRivalSample, v: float) -> float:
    """Direct bid-function estimate at valuation v.

    Minimizes the step objective S(b, v) over candidate bids b_(t) < v;
    S accumulates (t-2)/(v - b_(t)) - (t-1)/(v - b_(t-1)) over included
    order statistics (the t = 1 term is -1/(v - b_(1))). Returns 0 when
    v <= b_(1); ties resolve to the smallest minimizer.
    """
    b = sample.values
    if v <= b[0]:
        return 0.0
    usable = int(np.searchsorted(b, v, side="left"))  # candidates b[0..usable-1] < v
    t = np.arange(1, usable + 1, dtype=float)
    terms = (t - 2.0) / (v - b[:usable])
    terms[1:] -= (t[1:] - 1.0) / (v - b[: usable - 1])
    s = np.cumsum(terms)
    k = int(np.argmin(s))  # first minimizer on ties
    return float(b[k])
