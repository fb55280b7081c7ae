"""Constrained least-squares estimation of the inverse strategy.

The convex expected-payment estimate is the greatest convex minorant
(GCM) of the unconstrained step estimate, and the inverse strategy
estimate alpha is its left derivative. Equivalently, alpha solves a
weighted isotonic regression on the scaled spacings of the
unconstrained estimate. Both routes are implemented from scratch and
cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ConvexPwlFn,
    MaxRivalSample,
    MonotoneStepFn,
    PwlFn,
    integrate_step,
    unconstrained_payment,
)

__all__ = [
    "IsotonicProblem",
    "LsFit",
    "gcm_stack",
    "pava_weighted",
    "isotonic_problem_from_payment",
    "solve_ls",
    "solve_ls_pooled",
    "theta_inverse",
]


@dataclass(frozen=True)
class IsotonicProblem:
    """Targets and positive weights of a separable isotonic LS problem."""

    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if t.shape != w.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("targets and weights must be equal-length 1-d arrays")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "weights", w)

    def objective(self, levels) -> float:
        levels = np.asarray(levels, dtype=float)
        return float(np.sum(self.weights * (levels - self.targets) ** 2))


@dataclass(frozen=True)
class LsFit:
    """Isotonic LS fit: step alpha, its integral (the payment), objective value."""

    alpha: MonotoneStepFn
    payment: ConvexPwlFn
    objective: float


def pava_weighted(targets, weights) -> np.ndarray:
    """Weighted isotonic regression by pool-adjacent-violators.

    Returns the nondecreasing vector minimizing
    sum_j weights[j] * (x[j] - targets[j])^2. Left-to-right sweep with a
    block stack; each merged block takes its weighted mean.
    """
    y = np.asarray(targets, dtype=float)
    w = np.asarray(weights, dtype=float)
    # stack of blocks as (weighted mean, total weight, count)
    means: list[float] = []
    wsum: list[float] = []
    count: list[int] = []
    for yi, wi in zip(y, w):
        cm, cw, cn = float(yi), float(wi), 1
        while means and cm < means[-1]:
            pm, pw, pn = means.pop(), wsum.pop(), count.pop()
            cm = (pm * pw + cm * cw) / (pw + cw)
            cw += pw
            cn += pn
        means.append(cm)
        wsum.append(cw)
        count.append(cn)
    return np.repeat(means, count)


def gcm_stack(x, y) -> tuple[np.ndarray, np.ndarray]:
    """Greatest convex minorant of the points (x_i, y_i) on [x_0, x_m].

    Monotone-stack lower convex hull after sorting by x; returns the
    hull node coordinates. The GCM of a cumulative-sum diagram yields
    the isotonic fit of its slopes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValueError("need at least two points")
    if np.any(np.diff(x) <= 0):
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]
    hx: list[float] = []
    hy: list[float] = []
    for xi, yi in zip(x, y):
        while len(hx) >= 2:
            # drop the middle point when it lies on or above the chord
            cross = (hx[-1] - hx[-2]) * (yi - hy[-2]) - (hy[-1] - hy[-2]) * (xi - hx[-2])
            if cross <= 0:
                hx.pop()
                hy.pop()
            else:
                break
        hx.append(float(xi))
        hy.append(float(yi))
    return np.asarray(hx), np.asarray(hy)


def isotonic_problem_from_payment(e_T: PwlFn) -> tuple[np.ndarray, IsotonicProblem]:
    """Scaled spacings of the unconstrained payment at its knots.

    Returns the knot grid q (without the leading 0) and the isotonic
    problem with targets (e(q_j) - e(q_{j-1})) / (q_j - q_{j-1}) and
    weights q_j - q_{j-1}; the weighted cumulative sums of the targets
    reproduce e at the knots.
    """
    xs, vals = e_T.knot_values()
    dq = np.diff(xs)
    targets = np.diff(vals) / dq
    return xs[1:], IsotonicProblem(targets, dq)


def solve_ls(e_T: PwlFn) -> LsFit:
    """Isotonic LS fit of the inverse strategy from an unconstrained payment.

    The fitted alpha is the weighted-PAVA solution on the scaled
    spacings, clamped at 0; its integral is the greatest convex
    minorant of e_T evaluated at the knots.
    """
    grid, problem = isotonic_problem_from_payment(e_T)
    levels = np.maximum(pava_weighted(problem.targets, problem.weights), 0.0)
    levels = np.maximum.accumulate(levels)  # guard fp wobble; exact for valid PAVA output
    alpha = MonotoneStepFn(grid, levels, continuity="left")
    payment = integrate_step(alpha)
    return LsFit(alpha=alpha, payment=payment, objective=problem.objective(levels))


def solve_ls_gcm(e_T: PwlFn) -> LsFit:
    """Same estimator through the independent convex-hull construction."""
    xs, vals = e_T.knot_values()
    hx, hy = gcm_stack(xs, vals)
    hull = ConvexPwlFn(hx, hy, tol=1e-7)
    slopes = np.maximum(hull.left_derivative(xs[1:]), 0.0)
    slopes = np.maximum.accumulate(slopes)
    alpha = MonotoneStepFn(xs[1:], slopes, continuity="left")
    payment = integrate_step(alpha)
    _, problem = isotonic_problem_from_payment(e_T)
    return LsFit(alpha=alpha, payment=payment, objective=problem.objective(slopes))


def solve_ls_max_rival(sample: MaxRivalSample) -> LsFit:
    """Convenience: isotonic LS from a max-rival sample."""
    return solve_ls(unconstrained_payment(sample, mode="max_rival"))


def solve_ls_pooled(pooled: MaxRivalSample, n: int) -> LsFit:
    """Isotonic LS from the pooled bids of n symmetric bidders.

    The unconstrained payment is p * Q_T(p^{1/(n-1)}) with breakpoints
    (l/nT)^{n-1}; the fit is the weighted isotonic regression of its
    scaled spacings.
    """
    if n < 2:
        raise ValueError("pooled mode needs n >= 2")
    return solve_ls(unconstrained_payment(pooled, mode="pooled_symmetric", n=n))


def theta_inverse(fit: LsFit, alpha_level: float) -> float:
    """Generalized inverse sup{p : alpha(p) < alpha_level} of the fitted step."""
    alpha = fit.alpha
    levels = alpha.levels
    if alpha_level <= levels[0]:
        return 0.0
    if alpha_level > levels[-1]:
        return 1.0
    # largest j with levels[j] < alpha_level; alpha < level on (0, knots[j]]
    j = int(np.searchsorted(levels, alpha_level, side="left")) - 1
    return float(alpha.knots[j])
