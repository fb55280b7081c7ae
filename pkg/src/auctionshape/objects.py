"""Economic objects derived from fitted payment and inverse-strategy curves.

Value quantiles, CDF and density, the bid function, bidder surplus,
mean valuation, and counterfactual revenues, each with the plug-in
asymptotic variance where a closed form is available. Variance values
are reported as nan when the required plug-in inputs are not supplied.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    ConvexPwlFn,
    MaxRivalSample,
    MonotoneStepFn,
    integrate_pwl_power,
    integrate_step,
    integrate_step_power,
    step_pieces,
)
from .smooth import kernel_epanechnikov
from .winprob import FpModel, fp_atoms

__all__ = [
    "AlphaEstimate",
    "VarianceReport",
    "alpha_unsmoothed",
    "alpha_smoothed",
    "quantile_v",
    "cdf_v",
    "pdf_v_onestep",
    "pdf_v_twostep",
    "bid_function",
    "bidder_surplus_symmetric",
    "bidder_surplus_asymmetric",
    "gamma_plugins",
    "local_quadratic_quantile",
    "mean_valuation",
    "profit_counterfactual_n",
    "profit_counterfactual_reserve",
    "asy_variance_alpha",
]


@dataclass(frozen=True, eq=False)
class AlphaEstimate:
    """Inverse strategy estimate with its payment function and inverse.

    Parameters
    ----------
    kind : str
        ``unsmoothed`` (step function) or ``smoothed`` (callable).
    alpha : callable
        Evaluator of the inverse strategy on [0, 1].
    payment : object
        The expected payment function: a ConvexPwlFn for unsmoothed
        fits, any callable for smoothed ones.
    inverse : callable
        Generalized inverse sup{p : alpha(p) < v}.
    step : MonotoneStepFn or None
        The step representation when ``kind`` is ``unsmoothed``.
    spec : object or None
        Smoothing specification for smoothed estimates, if any.
    """

    kind: str
    alpha: Callable
    payment: object
    inverse: Callable
    step: Optional[MonotoneStepFn] = None
    spec: Optional[object] = None


@dataclass(frozen=True)
class VarianceReport:
    """Point estimate with its asymptotic variance and formula tag."""

    estimate: float
    asymptotic_variance: float
    formula: str

    def __post_init__(self):
        v = self.asymptotic_variance
        if np.isfinite(v) and v < 0.0:
            if v < -1e-10:
                raise ValueError("negative variance")
            object.__setattr__(self, "asymptotic_variance", 0.0)


def _step_sup_inverse(step: MonotoneStepFn, y: float, inclusive: bool = False) -> float:
    xs, lv = step_pieces(step)
    side = "right" if inclusive else "left"
    cnt = int(np.searchsorted(lv, y, side=side))
    return float(xs[cnt])


def _callable_sup_inverse(fn, y: float, inclusive: bool = False, tol: float = 1e-12) -> float:
    below = (lambda t: t <= y) if inclusive else (lambda t: t < y)
    if not below(float(fn(0.0))):
        return 0.0
    if below(float(fn(1.0))):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if below(float(fn(mid))):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def alpha_unsmoothed(alpha_step: MonotoneStepFn, payment: Optional[ConvexPwlFn] = None) -> AlphaEstimate:
    """Wrap a fitted step inverse strategy with its exact payment integral."""
    if payment is None:
        payment = integrate_step(alpha_step)
    return AlphaEstimate(
        kind="unsmoothed",
        alpha=alpha_step,
        payment=payment,
        inverse=lambda v: _step_sup_inverse(alpha_step, float(v)),
        step=alpha_step,
    )


def alpha_smoothed(alpha_fn, payment=None, spec=None) -> AlphaEstimate:
    """Wrap a smooth inverse-strategy evaluator; inverse by bisection."""
    return AlphaEstimate(
        kind="smoothed",
        alpha=alpha_fn,
        payment=payment,
        inverse=lambda v: _callable_sup_inverse(alpha_fn, float(v)),
        spec=spec,
    )


def _inverse_of(alpha) -> Callable:
    if isinstance(alpha, AlphaEstimate):
        return alpha.inverse
    if isinstance(alpha, MonotoneStepFn):
        return lambda v: _step_sup_inverse(alpha, float(v))
    return lambda v: _callable_sup_inverse(alpha, float(v))


def _inclusive_inverse_of(alpha) -> Callable:
    # sup{p: alpha(p) <= v}: a flat top block maps its value to p = 1
    target = alpha.alpha if isinstance(alpha, AlphaEstimate) else alpha
    if isinstance(target, MonotoneStepFn):
        return lambda v: _step_sup_inverse(target, float(v), inclusive=True)
    return lambda v: _callable_sup_inverse(target, float(v), inclusive=True)


def _evaluator_of(alpha) -> Callable:
    return alpha.alpha if isinstance(alpha, AlphaEstimate) else alpha


# ------------------------------------------------------------ distribution


def quantile_v(alpha, fp: FpModel, tau: float) -> float:
    """Value quantile: the inverse strategy at the win-probability quantile."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau outside [0, 1]")
    return float(_evaluator_of(alpha)(float(fp.Q(tau))))


def cdf_v(alpha, fp: FpModel, v: float) -> float:
    """Value CDF: F_p at the generalized inverse of the inverse strategy."""
    p = _inverse_of(alpha)(float(v))
    return float(np.clip(fp.F(p), 0.0, 1.0))


def pdf_v_onestep(alpha, alpha_deriv, fp: FpModel, v: float) -> float:
    """Value density as the ratio f_p / alpha' at the generalized inverse.

    ``alpha_deriv`` is a derivative evaluator for the inverse strategy;
    a kernel-smoothed derivative with bandwidth of order T^{-1/7} keeps
    the ratio stable. Raises if the derivative estimate is not positive
    at the evaluation point.
    """
    if fp.f is None:
        raise ValueError("win-probability model has no density")
    p = _inverse_of(alpha)(float(v))
    d = float(alpha_deriv(p))
    if not d > 0.0:
        raise ValueError("nonmonotone derivative estimate")
    return float(fp.f(p)) / d


def pdf_v_twostep(pseudo_values, kernel=None, bandwidth: Optional[float] = None,
                  support: Optional[tuple] = None):
    """Kernel density of pseudo values with reflection at both support ends.

    Returns an evaluator of the boundary-corrected density on the
    support interval. The default bandwidth is the normal-reference
    rule for the Epanechnikov kernel, 2.345 sd m^{-1/5}.

    Parameters
    ----------
    pseudo_values : array_like
        Estimated valuations, nonempty.
    kernel : KernelSpec, optional
        Smoothing kernel; Epanechnikov by default.
    bandwidth : float, optional
    support : (float, float), optional
        Reflection interval; defaults to (0, max of the sample).
    """
    v = np.asarray(pseudo_values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    if kernel is None:
        kernel = kernel_epanechnikov()
    if support is None:
        support = (0.0, float(np.max(v)))
    a, b = float(support[0]), float(support[1])
    if bandwidth is None:
        sd = float(np.std(v))
        bandwidth = 2.345 * sd * v.size ** (-0.2) if sd > 0 else 1e-6 * max(1.0, abs(float(v[0])))
    h = float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")

    def density(x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        args = (x_arr[:, None] - v[None, :]) / h
        refl_lo = (x_arr[:, None] + v[None, :] - 2.0 * a) / h
        refl_hi = (2.0 * b - x_arr[:, None] - v[None, :]) / h
        vals = kernel.k(args) + kernel.k(refl_lo) + kernel.k(refl_hi)
        out = vals.sum(axis=1) / (v.size * h)
        return out if isinstance(x, np.ndarray) else float(out[0])

    return density


def bid_function(alpha, rival_quantile, v: float) -> float:
    """Bid at valuation v: the rival quantile at the win probability of v.

    Uses the inclusive inverse so the top valuation bids the maximum bid.
    """
    p = _inclusive_inverse_of(alpha)(float(v))
    return float(rival_quantile(p))


# --------------------------------------------------------------- quadrature


_GRID01 = None


def _graded01():
    # Composite Gauss-Legendre grid on [0, 1], geometrically graded
    # toward 0 so integrands with algebraic endpoint singularities
    # still integrate to near machine accuracy.
    global _GRID01
    if _GRID01 is None:
        x, w = np.polynomial.legendre.leggauss(48)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        edges = np.concatenate(([0.0], 0.25 ** np.arange(16, -1, -1.0)))
        nodes = [lo + (hi - lo) * x for lo, hi in zip(edges[:-1], edges[1:])]
        weights = [(hi - lo) * w for lo, hi in zip(edges[:-1], edges[1:])]
        _GRID01 = (np.concatenate(nodes), np.concatenate(weights))
    return _GRID01


def _eval_vec(fn, x: np.ndarray) -> np.ndarray:
    out = np.asarray(fn(x), dtype=float)
    if out.shape == x.shape:
        return out
    if out.ndim == 0:
        return np.full(x.shape, float(out))
    return np.vectorize(lambda t: float(fn(t)))(x)


def _min_kernel_variance(fn) -> float:
    # V(A) = int int A(p) A(p*) {min(p, p*) - p p*} dp dp*
    #      = 2 int A(p) (int_0^p A(w) w dw) dp - (int A(p) p dp)^2
    U, W = _graded01()
    g = _eval_vec(fn, U)
    gin = _eval_vec(fn, U[:, None] * U[None, :])
    inner = (gin * (W * U)[None, :]).sum(axis=1) * U**2
    term1 = 2.0 * float(np.sum(W * g * inner))
    term2 = float(np.sum(W * g * U)) ** 2
    return term1 - term2


# ------------------------------------------------------------------ surplus


def bidder_surplus_symmetric(payment, n: int, q_prime=None) -> VarianceReport:
    """Ex ante bidder surplus under symmetry, from the payment function.

    The estimate is e(1)/(n-1) - n/(n-1)^2 times the exact integral of
    e(p) p^{(2-n)/(n-1)}. The asymptotic variance requires a plug-in
    derivative of the pooled bid quantile function; it is nan when
    ``q_prime`` is not supplied.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    c = (2.0 - n) / (n - 1.0)
    est = float(payment(1.0)) / (n - 1) - n / (n - 1) ** 2 * integrate_pwl_power(payment, c)
    if q_prime is None:
        var = math.nan
    else:
        g = lambda u: _eval_vec(q_prime, np.asarray(u, dtype=float)) * np.asarray(u, dtype=float) ** (n - 1)
        var = n / (n - 1) ** 2 * _min_kernel_variance(g)
    return VarianceReport(est, var, "bs_symmetric")


def bidder_surplus_asymmetric(alpha, payment, fp: FpModel,
                              gamma1=None, gamma2=None) -> VarianceReport:
    """Ex ante bidder surplus without symmetry.

    Sums alpha(p) p - e(p) over the atoms of the empirical
    win-probability distribution. The variance is the sum of two
    Brownian-bridge quadratic forms in the plug-in influence weights
    ``gamma1`` and ``gamma2``; nan when those are not supplied.
    """
    locs, wts = fp_atoms(fp)
    a = _evaluator_of(alpha)
    avals = _eval_vec(a, locs)
    evals = _eval_vec(payment, locs)
    est = float(np.sum(wts * (avals * locs - evals)))
    if gamma1 is None or gamma2 is None:
        var = math.nan
    else:
        var = _min_kernel_variance(gamma1) + _min_kernel_variance(gamma2)
    return VarianceReport(est, var, "bs_asymmetric")


def gamma_plugins(fp: FpModel, q_c_prime, q_c_dblprime, alpha_deriv):
    """Influence weights for the asymmetric surplus variance.

    gamma1(p) = Q_c''(p) p^2 f_p(p) + Q_c'(p) {p^2 f_p'(p) + 4 p f_p(p)}
    and gamma2(p) = alpha'(p) p. Requires a win-probability model with
    density and density derivative evaluators.
    """
    if fp.f is None or fp.fprime is None:
        raise ValueError("win-probability model lacks density derivatives")

    def gamma1(p):
        p = np.asarray(p, dtype=float)
        return (_eval_vec(q_c_dblprime, p) * p * p * fp.f(p)
                + _eval_vec(q_c_prime, p) * (p * p * fp.fprime(p) + 4.0 * p * fp.f(p)))

    def gamma2(p):
        p = np.asarray(p, dtype=float)
        return _eval_vec(alpha_deriv, p) * p

    return gamma1, gamma2


def local_quadratic_quantile(sample: MaxRivalSample, window: Optional[float] = None):
    """Local quadratic fit of the empirical quantile function.

    Returns evaluators (value, first derivative, second derivative) of
    the max-rival quantile, fit by least squares on the grid points
    t/T within a moving window. This is a pragmatic curvature
    estimator for variance plug-ins; no optimality is claimed.
    """
    T = sample.T
    x = np.arange(1, T + 1) / T
    y = sample.values
    if window is None:
        window = max(5.0 / T, 0.35 * T ** (-0.2))
    w = float(window)

    def fit_at(p: float):
        lo, hi = p - w, p + w
        sel = (x >= lo) & (x <= hi)
        if np.count_nonzero(sel) < 3:
            order = np.argsort(np.abs(x - p))
            sel = np.zeros_like(x, dtype=bool)
            sel[order[:3]] = True
        coeff = np.polyfit(x[sel] - p, y[sel], 2)
        return coeff  # a2 (p-p0)^2 + a1 (p-p0) + a0

    def qc(p):
        return float(fit_at(float(p))[2])

    def qc_prime(p):
        return float(fit_at(float(p))[1])

    def qc_dblprime(p):
        return 2.0 * float(fit_at(float(p))[0])

    return qc, qc_prime, qc_dblprime


# ----------------------------------------------------------- mean valuation


def mean_valuation(alpha=None, fp: Optional[FpModel] = None, *,
                   pooled_bids=None, n: Optional[int] = None,
                   q_prime=None, gamma1=None, gamma2=None) -> VarianceReport:
    """Mean valuation, the integral of the inverse strategy against f_p.

    Three modes: with a symmetric model the step estimate integrates
    exactly against the closed-form density; with an empirical model
    the estimate is the atom sum; with ``pooled_bids`` the shortcut
    {max bid + (n-2) mean bid}/(n-1) is used and no curve is needed.
    Variance plug-ins follow the same pattern as the surplus
    estimators: ``q_prime`` in the symmetric case (identically zero
    for n = 2), ``gamma1``/``gamma2`` (already divided by p) in the
    empirical case.
    """
    if pooled_bids is not None:
        if n is None:
            raise ValueError("shortcut mode needs n")
        b = np.asarray(pooled_bids, dtype=float).ravel()
        if b.size == 0:
            raise ValueError("empty sample")
        est = (float(np.max(b)) + (n - 2) * float(np.mean(b))) / (n - 1)
        return VarianceReport(est, math.nan, "mv_shortcut")
    if alpha is None or fp is None:
        raise ValueError("need alpha and fp (or pooled_bids)")
    a = _evaluator_of(alpha)
    if fp.kind == "symmetric":
        n = fp.n
        c = (2.0 - n) / (n - 1.0)
        step = alpha.step if isinstance(alpha, AlphaEstimate) else None
        if step is not None:
            est = integrate_step_power(step, c) / (n - 1)
        else:
            U, W = _graded01()
            est = float(np.sum(W * _eval_vec(a, U ** (n - 1))))
        if n == 2:
            var = 0.0
        elif q_prime is None:
            var = math.nan
        else:
            var = (n - 2) ** 2 / ((n - 1) ** 2 * n) * _min_kernel_variance(q_prime)
        return VarianceReport(float(est), var, "mv_symmetric")
    if fp.kind == "empirical":
        locs, wts = fp_atoms(fp)
        est = float(np.sum(wts * _eval_vec(a, locs)))
        if gamma1 is None or gamma2 is None:
            var = math.nan
        else:
            var = _min_kernel_variance(gamma1) + _min_kernel_variance(gamma2)
        return VarianceReport(est, var, "mv_empirical")
    if fp.kind == "min_entropy":
        n = fp.n
        U, W = _graded01()
        p_nodes = U ** (n - 1)
        integrand = _eval_vec(a, p_nodes) * fp.f(p_nodes) * (n - 1) * U ** (n - 2)
        return VarianceReport(float(np.sum(W * integrand)), math.nan, "mv_min_entropy")
    raise ValueError(f"unsupported fp kind {fp.kind!r}")


# ------------------------------------------------------------ counterfactual


def profit_counterfactual_n(payment, n: int, m: int) -> float:
    """Expected total revenue with m symmetric bidders, from n-bidder data.

    Holding the value distribution fixed, the counterfactual payment
    function is a known power reweighting of the fitted one, so the
    revenue is m times an exact integral of e against a two-term power
    weight. Counterfactuals with m < n make the weight nonintegrable
    and are refused.
    """
    if int(n) != n or n < 2 or int(m) != m or m < 2:
        raise ValueError("n and m must be integers >= 2")
    n, m = int(n), int(m)
    xi = (n - 1.0) / (m - 1.0)
    chi1 = (m - 2.0 * n + 1.0) / (n - 1.0)
    chi2 = (m - 2.0 * n + 2.0) / (n - 1.0)
    total = (chi2 + 1.0) / xi * integrate_pwl_power(payment, chi2)
    if m != n:
        if chi1 <= -1.0:
            raise ValueError("divergent weight")
        total -= (chi1 + 1.0) / xi * integrate_pwl_power(payment, chi1)
    return m * total


def _power_int(k: float, lo: float, hi: float) -> float:
    # int_lo^hi p^{k-1} dp for k > 0
    return (hi**k - lo**k) / k


def _reserve_integral_exact(e: ConvexPwlFn, pstar: float, c: float) -> float:
    # int_pstar^1 (e(p) - e(pstar)) p^c dp, exact per linear segment
    xs = np.unique(np.concatenate((e.x, [pstar, 1.0])))
    xs = xs[(xs >= pstar) & (xs <= 1.0)]
    e_star = float(e(pstar))
    total = 0.0
    for lo, hi in zip(xs[:-1], xs[1:]):
        s = float(e.left_derivative(hi))
        const = float(e(lo)) - s * lo - e_star
        total += const * _power_int(c + 1.0, lo, hi) + s * _power_int(c + 2.0, lo, hi)
    return total


def profit_counterfactual_reserve(alpha, n: int, r: float) -> float:
    """Expected total revenue under a reserve price, symmetric model.

    Finds the no-sale probability root p* with alpha(p*) = r by the
    generalized inverse, then evaluates
    n { p* alpha(p*) (1 - p*^{1/(n-1)}) +
        (1/(n-1)) int_{p*}^1 (e(p) - e(p*)) p^{(2-n)/(n-1)} dp }.
    Reserves outside the fitted range are clamped with a warning.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    a = _evaluator_of(alpha)
    a0, a1 = float(a(0.0)), float(a(1.0))
    r = float(r)
    if r < a0 or r > a1:
        warnings.warn("reserve outside the fitted value range; clamped", RuntimeWarning,
                      stacklevel=2)
        r = min(max(r, a0), a1)
    if isinstance(alpha, AlphaEstimate) and alpha.step is not None:
        pstar = _step_sup_inverse(alpha.step, r, inclusive=True)
    else:
        pstar = _callable_sup_inverse(a, r, inclusive=True)
    c = (2.0 - n) / (n - 1.0)
    rr = float(a(pstar))
    payment = alpha.payment if isinstance(alpha, AlphaEstimate) else None
    if isinstance(alpha, AlphaEstimate) and alpha.step is not None:
        e_pwl = payment if isinstance(payment, ConvexPwlFn) else integrate_step(alpha.step)
        integral = _reserve_integral_exact(e_pwl, pstar, c)
    else:
        if payment is None:
            raise ValueError("smoothed alpha needs a payment evaluator")
        U, W = _graded01()
        p_nodes = pstar + (1.0 - pstar) * U
        e_star = float(payment(pstar))
        vals = (_eval_vec(payment, p_nodes) - e_star) * p_nodes**c
        integral = (1.0 - pstar) * float(np.sum(W * vals))
    first = pstar * rr * (1.0 - pstar ** (1.0 / (n - 1)))
    return n * (first + integral / (n - 1))


# --------------------------------------------------------- pointwise variance


def asy_variance_alpha(p: float, mode: str = "simple", kernel=None,
                       q_c=None, q_c_prime=None, q_prime=None,
                       n: Optional[int] = None, marginals=None) -> float:
    """Pointwise asymptotic variance factor of the smoothed inverse strategy.

    ``simple`` uses the max-rival quantile derivative only,
    V(p) = kappa2 zeta(p)^2 with zeta(p) = Q_c'(p) p. ``symmetric``
    exploits a common bid distribution across n bidders;
    ``asymmetric`` combines rival marginal distributions, supplied as
    (cdf, pdf) pairs for each rival, with the max-rival quantile.
    zeta(0) = 0, so every mode returns 0 at p = 0.
    """
    if kernel is None:
        kernel = kernel_epanechnikov()
    kappa2 = kernel.kappa2
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError("p outside [0, 1]")
    if p == 0.0:
        return 0.0
    if mode == "simple":
        if q_c_prime is None:
            raise ValueError("simple mode needs q_c_prime")
        zeta = float(q_c_prime(p)) * p
        return kappa2 * zeta**2
    if mode == "symmetric":
        if q_prime is None or n is None:
            raise ValueError("symmetric mode needs q_prime and n")
        u = p ** (1.0 / (n - 1))
        return p ** (n / (n - 1.0)) * float(q_prime(u)) ** 2 * kappa2 / (n * (n - 1.0))
    if mode == "asymmetric":
        if marginals is None or len(marginals) == 0:
            raise ValueError("missing marginals")
        if q_c is None or q_c_prime is None:
            raise ValueError("asymmetric mode needs q_c and q_c_prime")
        b = float(q_c(p))
        Gs = np.array([float(G(b)) for G, _ in marginals])
        gs = np.array([float(g(b)) for _, g in marginals])
        total = 0.0
        for i in range(len(marginals)):
            others = np.prod(np.delete(Gs, i))
            total += others**2 * gs[i]
        zeta = float(q_c_prime(p)) * p
        return kappa2 * zeta**2 * float(q_c_prime(p)) * total
    raise ValueError(f"unknown mode {mode!r}")
