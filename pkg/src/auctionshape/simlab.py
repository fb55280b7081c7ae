"""Monte Carlo laboratory for the shape-constrained auction estimators.

A two-parameter family of max-rival bid distributions with closed-form
equilibrium objects (quantile, inverse strategy, expected payment),
reference-model bandwidth rules, inverse-bid-function baselines, and a
deterministic replication harness that aggregates RMSE/bias/RMISE cells.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .core import MaxRivalSample, empirical_quantile_fn
from .isotonic_ls import solve_ls_max_rival
from .npmle import pava_mle
from .objects import (
    alpha_smoothed,
    alpha_unsmoothed,
    bidder_surplus_asymmetric,
    bidder_surplus_symmetric,
    cdf_v,
    mean_valuation,
    pdf_v_twostep,
    quantile_v,
)
from .smooth import (
    KernelSpec,
    SmoothSpec,
    Transform,
    kernel_epanechnikov,
    smooth_alpha,
    smooth_payment,
    transform_identity,
)
from .smooth import _smooth_payment_deriv  # shared exact segment sums
from .winprob import fp_empirical

__all__ = [
    "DgpSpec",
    "TruthSet",
    "IbfEstimate",
    "McCell",
    "McReport",
    "dgp_truths",
    "dgp_sample",
    "reference_power_fit",
    "rule_of_thumb_bandwidth",
    "silverman_bandwidth",
    "ibf_estimate",
    "run_monte_carlo",
    "report_long_rows",
    "report_to_json",
    "relative_rmse_rows",
]


# ------------------------------------------------------------------ the DGP


@dataclass(frozen=True)
class DgpSpec:
    """Design point: max-rival bid family (gamma, theta), sample size, seed.

    The rival bid distribution is G_c(b) proportional to
    (theta/b + gamma - theta)^(-1/theta) on (0, bbar]; bidder one's
    values follow F(v) = v^value_dist_exponent on [0, 1].
    """

    gamma: float
    theta: float
    T: int
    seed: int
    value_dist_exponent: float = 1.5

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be positive")
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ValueError("theta must be positive")
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ValueError("T must be a positive integer")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            raise ValueError("seed must be a nonnegative integer")
        if not (self.value_dist_exponent > 0):
            raise ValueError("value_dist_exponent must be positive")
        if not 0.0 < _bbar(self.gamma, self.theta) < 1.0:
            raise ValueError("upper bid bound outside (0, 1)")


def _bbar(gamma: float, theta: float) -> float:
    return 2.0 / (1.0 + theta + math.sqrt(4.0 * gamma + (theta - 1.0) ** 2))


def _forms(spec: DgpSpec) -> dict:
    # Closed forms. The quantile solves the equilibrium identity
    # Q'(p) p = theta Q + (gamma - theta) Q^2, which pins the sign in the
    # denominator; c is set by Q(1) = bbar.
    gamma, theta = spec.gamma, spec.theta
    bbar = _bbar(gamma, theta)
    c = bbar / (theta + bbar * (gamma - theta))
    d = gamma - theta
    a = spec.value_dist_exponent

    def den(p):
        return 1.0 - c * d * np.asarray(p, dtype=float) ** theta

    def q_c(p):
        p = np.asarray(p, dtype=float)
        return theta * c * p ** theta / den(p)

    def q_c_prime(p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            return theta * theta * c * p ** (theta - 1.0) / den(p) ** 2

    def e(p):
        p = np.asarray(p, dtype=float)
        return theta * c * p ** (theta + 1.0) / den(p)

    def alpha(p):
        q = q_c(p)
        return (1.0 + theta) * q + d * q * q

    def alpha_prime(p):
        q = q_c(p)
        return ((1.0 + theta) + 2.0 * d * q) * q_c_prime(p)

    def cdf_c(b):
        b = np.minimum(np.asarray(b, dtype=float), bbar)
        h = b / (c * (theta + d * b))
        return np.where(b <= 0.0, 0.0, np.maximum(h, 0.0) ** (1.0 / theta))

    def pdf_c(b):
        b = np.asarray(b, dtype=float)
        h = b / (c * (theta + d * b))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = h ** ((1.0 - theta) / theta) / (c * (theta + d * b) ** 2)
        return np.where((b <= 0.0) | (b > bbar), 0.0, out)

    def bid(v):
        # root of (1+theta) b + (gamma-theta) b^2 = v in [0, bbar],
        # written in the subtraction-free form
        v = np.asarray(v, dtype=float)
        return 2.0 * v / ((1.0 + theta) + np.sqrt((1.0 + theta) ** 2 + 4.0 * d * v))

    def F_v(v):
        return np.clip(np.asarray(v, dtype=float), 0.0, 1.0) ** a

    def f_v(v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            out = a * v ** (a - 1.0)
        return np.where((v < 0.0) | (v > 1.0), 0.0, out)

    return {
        "bbar": bbar, "c": c, "q_c": q_c, "q_c_prime": q_c_prime, "e": e,
        "alpha": alpha, "alpha_prime": alpha_prime, "cdf_c": cdf_c,
        "pdf_c": pdf_c, "bid": bid, "F_v": F_v, "f_v": f_v,
    }


@dataclass(frozen=True, eq=False)
class TruthSet:
    """Closed-form evaluators and quadrature scalars for one design."""

    spec: DgpSpec
    bbar: float
    q_c: Callable
    q_c_prime: Callable
    G_c: Callable
    g_c: Callable
    alpha: Callable
    alpha_prime: Callable
    e: Callable
    bid: Callable
    F_v: Callable
    f_v: Callable
    bs: float
    mv: float
    bs_symm: float


def dgp_truths(spec: DgpSpec) -> TruthSet:
    """Closed-form truths for a design, with BS/MV by adaptive quadrature.

    bs is bidder one's expected surplus under her actual value
    distribution; bs_symm is the limit of the symmetric-formula surplus
    functional e(1) - 2 int e, which coincides with bs only when the
    design is symmetric.
    """
    fm = _forms(spec)
    a = spec.value_dist_exponent

    def surplus_integrand(v):
        b = fm["bid"](v)
        return float((v - b) * fm["cdf_c"](b) * fm["f_v"](v))

    bs, _ = quad(surplus_integrand, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
    mv, _ = quad(lambda v: v * float(fm["f_v"](v)), 0.0, 1.0,
                 epsabs=1e-12, epsrel=1e-12, limit=200)
    int_e, _ = quad(lambda p: float(fm["e"](p)), 0.0, 1.0,
                    epsabs=1e-12, epsrel=1e-12, limit=200)
    bs_symm = float(fm["e"](1.0)) - 2.0 * int_e
    return TruthSet(
        spec=spec, bbar=fm["bbar"], q_c=fm["q_c"], q_c_prime=fm["q_c_prime"],
        G_c=fm["cdf_c"], g_c=fm["pdf_c"], alpha=fm["alpha"],
        alpha_prime=fm["alpha_prime"], e=fm["e"], bid=fm["bid"],
        F_v=fm["F_v"], f_v=fm["f_v"], bs=float(bs), mv=float(mv),
        bs_symm=float(bs_symm),
    )


def dgp_sample(spec: DgpSpec, rng: np.random.Generator):
    """Draw (max rival bids, bidder-one bids) for one replication.

    Rival bids are Q_c at uniforms; bidder-one values are inverse-CDF
    draws from F(v) = v^a and her bids solve the quadratic first-order
    condition. Draw order is fixed: rivals first, then values.
    """
    fm = _forms(spec)
    rival = fm["q_c"](rng.random(spec.T))
    values = rng.random(spec.T) ** (1.0 / spec.value_dist_exponent)
    bids = fm["bid"](values)
    return MaxRivalSample(np.sort(rival)), np.asarray(bids, dtype=float)


# ------------------------------------------------------------- bandwidths


def reference_power_fit(sample) -> tuple:
    """Fit (vbar, gamma) of the power reference alpha(p) = vbar p^gamma.

    Method of moments: with p uniform, mean m = vbar/(1+gamma) and
    var/m^2 = gamma^2/(2 gamma + 1); the ratio equation is solved by
    Brent. Falls back to gamma = 1 with a warning when the sample
    moments are unusable.
    """
    w = np.asarray(getattr(sample, "values", sample), dtype=float).ravel()
    if w.size == 0:
        raise ValueError("empty sample")
    m = float(np.mean(w))
    s2 = float(np.var(w, ddof=1)) if w.size > 1 else 0.0
    ratio = s2 / (m * m) if m > 0 else np.nan

    def f(g):
        return g * g / (2.0 * g + 1.0) - ratio

    hi = 1e4
    if not (np.isfinite(ratio) and 0.0 < ratio < hi * hi / (2.0 * hi + 1.0)):
        warnings.warn("reference moment fit failed; using gamma = 1",
                      RuntimeWarning)
        gamma = 1.0
    else:
        gamma = float(brentq(f, 1e-9, hi, xtol=1e-12, rtol=1e-14))
    vbar = (m if m > 0 else 1.0) * (1.0 + gamma)
    return vbar, gamma


def _rot_raw(T: int, vbar: float, gamma: float, psi: Transform,
             target: str, kernel: KernelSpec, lower: float) -> float:
    # Reference-model MISE constants; all integrals on [lower, 1]
    # (p-scale) or its image on the value scale.
    g = gamma

    def a1(p):
        return vbar * g * p ** (g - 1.0)

    def a2(p):
        return vbar * g * (g - 1.0) * p ** (g - 2.0)

    def a3(p):
        return vbar * g * (g - 1.0) * (g - 2.0) * p ** (g - 3.0)

    def zeta2(p):
        z = vbar * g * p ** g / (1.0 + g)
        return z * z

    p1, p2, p3 = psi.dpsi, psi.d2psi, psi.d3psi
    if target == "alpha":
        def bias(p):
            d1 = float(p1(p))
            return (a2(p) * d1 - a1(p) * float(p2(p))) / d1 ** 3

        ib = quad(lambda p: bias(p) ** 2, lower, 1.0, limit=200)[0]
        iv = quad(lambda p: zeta2(p) * float(p1(p)), lower, 1.0, limit=200)[0]
        num, den, root = kernel.kappa2 * iv, kernel.sigma2 ** 2 * ib, 5.0
    elif target == "derivative":
        ib = quad(lambda p: ((a3(p) / float(p1(p)) ** 3
                              - 3.0 * a2(p) * float(p2(p)) / float(p1(p)) ** 4
                              - a1(p) * float(p3(p)) / float(p1(p)) ** 4
                              + 3.0 * a1(p) * float(p2(p)) ** 2 / float(p1(p)) ** 5) ** 2
                             * float(p1(p)) ** 2), lower, 1.0, limit=200)[0]
        iv = quad(lambda p: zeta2(p) * float(p1(p)) ** 3, lower, 1.0, limit=200)[0]
        num, den, root = 3.0 * kernel.kappa2_deriv * iv, kernel.sigma2 ** 2 * ib, 7.0
    elif target == "density":
        # value-scale KDE of the reference density f(v) = (v/vbar)^(1/g-1)/(g vbar)
        vlo, vhi = vbar * lower ** g, vbar

        def fv(v):
            return (v / vbar) ** (1.0 / g - 1.0) / (g * vbar)

        def fv2(v):
            return ((1.0 / g - 1.0) * (1.0 / g - 2.0)
                    * (v / vbar) ** (1.0 / g - 3.0) / (g * vbar ** 3))

        i0 = quad(fv, vlo, vhi, limit=200)[0]
        ib = quad(lambda v: fv2(v) ** 2, vlo, vhi, limit=200)[0]
        num, den, root = kernel.kappa2 * i0, kernel.sigma2 ** 2 * ib, 5.0
        iv = i0
    else:
        raise ValueError(f"unknown bandwidth target {target!r}")
    if not (np.isfinite(den) and den > 1e-14 and np.isfinite(num) and num > 0):
        return 1.0
    h = (num / (T * den)) ** (1.0 / root)
    return float(min(max(h, 1e-4), 1.0))


def rule_of_thumb_bandwidth(sample, psi: Optional[Transform] = None,
                            target: str = "alpha", scale: float = 1.0,
                            kernel: Optional[KernelSpec] = None,
                            undersmooth: bool = False,
                            lower: float = 0.05) -> float:
    """MISE-minimizing bandwidth under the power reference model.

    The reference alpha(p) = vbar p^gamma is fitted by moments to the
    pseudo-value sample; the asymptotic bias^2 + variance integrals are
    evaluated on [lower, 1] (value-scale image for the density target)
    and minimized in closed form. Rates: T^(-1/5) for alpha and
    density, T^(-1/7) for derivative; undersmoothing multiplies by
    T^(-2/15); scale multiplies last.
    """
    w = np.asarray(getattr(sample, "values", sample), dtype=float).ravel()
    if w.size == 0:
        raise ValueError("empty sample")
    if not scale > 0:
        raise ValueError("scale must be positive")
    vbar, gamma = reference_power_fit(w)
    psi = psi or transform_identity()
    kernel = kernel or kernel_epanechnikov()
    h = _rot_raw(w.size, vbar, gamma, psi, target, kernel, lower)
    if undersmooth:
        h *= w.size ** (-2.0 / 15.0)
    return float(h * scale)


def silverman_bandwidth(sample, kernel: Optional[KernelSpec] = None) -> float:
    """Gaussian-reference bandwidth delta0(K) sd T^(-1/5)."""
    w = np.asarray(getattr(sample, "values", sample), dtype=float).ravel()
    if w.size == 0:
        raise ValueError("empty sample")
    kernel = kernel or kernel_epanechnikov()
    delta0 = (8.0 * math.sqrt(math.pi) * kernel.kappa2
              / (3.0 * kernel.sigma2 ** 2)) ** 0.2
    sd = float(np.std(w, ddof=1)) if w.size > 1 else 0.0
    if sd <= 0:
        sd = 1e-6 * max(1.0, abs(float(w[0])))
    return float(delta0 * sd * w.size ** (-0.2))


# --------------------------------------------------------- IBF baselines


@dataclass(frozen=True, eq=False)
class IbfEstimate:
    """Inverse-bid-function first stage built from the rival sample."""

    kind: str
    g: Callable
    G: Callable
    Q: Callable
    pseudo_value: Callable
    alpha: Callable
    bandwidth: float
    support: tuple


def ibf_estimate(rival: MaxRivalSample, bandwidth: Optional[float] = None,
                 boundary: str = "none",
                 kernel: Optional[KernelSpec] = None) -> IbfEstimate:
    """Pseudo-value machinery v = b + G_c(b)/g_c(b) from rival bids.

    g_c is a kernel density (reflection-corrected at both support ends
    when boundary='bc'), G_c the empirical CDF, Q the empirical
    quantile. Points where the density estimate vanishes are trimmed to
    nan; callers count them.
    """
    if boundary not in ("none", "bc"):
        raise ValueError(f"unknown boundary scheme {boundary!r}")
    kernel = kernel or kernel_epanechnikov()
    b = np.asarray(rival.values, dtype=float)
    T = b.size
    if bandwidth is None:
        bandwidth = silverman_bandwidth(rival, kernel)
    h = float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    bmax = float(b[-1])
    if boundary == "bc":
        g = pdf_v_twostep(b, kernel=kernel, bandwidth=h, support=(0.0, bmax))
    else:
        def g(x):
            x_arr = np.atleast_1d(np.asarray(x, dtype=float))
            vals = kernel.k((x_arr[:, None] - b[None, :]) / h).sum(axis=1)
            out = vals / (T * h)
            return out if isinstance(x, np.ndarray) else float(out[0])

    def G(x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.searchsorted(b, x_arr, side="right") / T
        return out if isinstance(x, np.ndarray) else float(out[0])

    qstep = empirical_quantile_fn(rival)

    def pseudo_value(x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        dens = np.atleast_1d(g(x_arr))
        cdf = np.atleast_1d(G(x_arr))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(dens > 0.0, x_arr + cdf / dens, np.nan)
        return out if isinstance(x, np.ndarray) else float(out[0])

    def alpha(p):
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        out = pseudo_value(qstep(p_arr))
        out = np.atleast_1d(out)
        return out if isinstance(p, np.ndarray) else float(out[0])

    return IbfEstimate(kind="ibf-bc" if boundary == "bc" else "ibf",
                       g=g, G=G, Q=qstep, pseudo_value=pseudo_value,
                       alpha=alpha, bandwidth=h, support=(0.0, bmax))


# ------------------------------------------------------------ the harness


_PGRID = np.linspace(0.0, 1.0, 2001)
_VGRID = np.linspace(0.0, 1.0, 514)[1:-1]
_TAUGRID = np.linspace(0.0, 1.0, 514)[1:-1]

_ESTIMATORS = ("ls", "mle", "smoothed-ls", "smoothed-mle",
               "ibf", "ibf-bc", "jackknife")
_SCALAR_OBJECTS = ("bs", "bs_symm", "mv")
_FUNCTION_OBJECTS = ("alpha", "e", "f_v", "F_v", "Q_v")
_JACKKNIFE_OBJECTS = ("alpha", "e")
_IBF_UNSUPPORTED = ("e", "bs_symm")


@dataclass(frozen=True)
class McCell:
    """One (design, estimator, object, scale) aggregate."""

    gamma: float
    theta: float
    T: int
    seed: int
    estimator: str
    obj: str
    scale: float
    rmse: float
    bias: float
    rmise: float
    n_fail: int
    n_reps: int
    trim_fraction: float
    flagged: bool


@dataclass(frozen=True)
class McReport:
    """Aggregated Monte Carlo results; cells in deterministic order."""

    replications: int
    scales: tuple
    cells: tuple


def _is_pointwise(obj: str) -> bool:
    return obj.startswith("alpha@")


def _check_config(designs, estimators, objects, replications):
    if not designs:
        raise ValueError("no designs")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    for est in estimators:
        if est not in _ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}")
    for obj in objects:
        if _is_pointwise(obj):
            x = float(obj[6:])
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"evaluation point outside [0, 1] in {obj!r}")
        elif obj not in _SCALAR_OBJECTS + _FUNCTION_OBJECTS:
            raise ValueError(f"unknown object {obj!r}")
    if any(e in ("mle", "smoothed-mle") for e in estimators):
        if any(d.T < 3 for d in designs):
            raise ValueError("NPMLE requires T >= 3")
    for est in estimators:
        for obj in objects:
            if est == "jackknife" and not (_is_pointwise(obj)
                                           or obj in _JACKKNIFE_OBJECTS):
                raise ValueError(
                    f"estimator 'jackknife' does not produce object {obj!r}")
            if est in ("ibf", "ibf-bc") and obj in _IBF_UNSUPPORTED:
                raise ValueError(
                    f"estimator {est!r} does not produce object {obj!r}")


def _truth_tables(truth: TruthSet, objects) -> dict:
    tbl = {}
    for obj in objects:
        if obj == "alpha":
            tbl[obj] = truth.alpha(_PGRID)
        elif obj == "e":
            tbl[obj] = truth.e(_PGRID)
        elif obj == "f_v":
            tbl[obj] = truth.f_v(_VGRID)
        elif obj == "F_v":
            tbl[obj] = truth.F_v(_VGRID)
        elif obj == "Q_v":
            a = truth.spec.value_dist_exponent
            tbl[obj] = _TAUGRID ** (1.0 / a)
    return tbl


def _ise(est_vals: np.ndarray, true_vals: np.ndarray, grid: np.ndarray) -> float:
    ok = np.isfinite(est_vals)
    if ok.sum() < 2:
        return float("nan")
    d2 = (est_vals[ok] - true_vals[ok]) ** 2
    g = grid[ok]
    return float(np.sum(0.5 * (d2[1:] + d2[:-1]) * np.diff(g)))


def _vectorize_scalar(fn):
    # plumbing downstream probes evaluators with whole arrays
    def wrapped(p):
        arr = np.asarray(p, dtype=float)
        if arr.ndim == 0:
            return float(fn(float(arr)))
        return np.array([fn(float(t)) for t in arr.ravel()]).reshape(arr.shape)
    return wrapped


def _jackknife_hat_curve(rival: MaxRivalSample, ps: np.ndarray, h: float,
                         kernel: KernelSpec) -> np.ndarray:
    # leave-one-out fits computed once, reused across evaluation points
    T = rival.T
    full = solve_ls_max_rival(rival)
    loo = [solve_ls_max_rival(MaxRivalSample(np.delete(rival.values, t)))
           for t in range(T)]
    out = np.empty(ps.size)
    for i, p in enumerate(ps):
        p = float(p)
        if p <= 0.0 or p >= 1.0:
            out[i] = 0.0
            continue
        a_full = _smooth_payment_deriv(full.payment, p, h, kernel)
        ssq = 0.0
        for fit in loo:
            d = a_full - _smooth_payment_deriv(fit.payment, p, h, kernel)
            ssq += d * d
        ep = smooth_payment(full.payment, p, h, kernel)
        out[i] = math.sqrt(h * (T - 1) * ssq / kernel.kappa2) + ep / p
    return out


def _bundle(name: str, rival: MaxRivalSample, own: np.ndarray, scale: float):
    # Lazily-evaluated per-replication estimator bundle.
    kernel = kernel_epanechnikov()
    out = {"trim": 0.0}
    p_own = np.searchsorted(rival.values, own, side="right") / rival.T
    fp_own = fp_empirical(own, empirical_quantile_fn(rival))

    if name in ("ls", "mle", "smoothed-ls", "smoothed-mle"):
        fit = pava_mle(rival) if name.endswith("mle") else solve_ls_max_rival(rival)
        step = fit.alpha_fn if name.endswith("mle") else fit.alpha
        pseudo_step = np.asarray(step(p_own), dtype=float)
        out["bs_symm"] = lambda: bidder_surplus_symmetric(fit.payment, 2).estimate
        if name in ("ls", "mle"):
            est = alpha_unsmoothed(step, fit.payment)
            out["alpha_at"] = lambda p: float(step(p))
            out["alpha_vec"] = lambda g: np.asarray(step(g), dtype=float)
            out["e_vec"] = lambda g: np.asarray(fit.payment(g), dtype=float)
            out["bs"] = lambda: bidder_surplus_asymmetric(
                step, fit.payment, fp_own).estimate
            out["mv"] = lambda: mean_valuation(est, fp_own).estimate
            pseudo = pseudo_step
        else:
            h_curve = rule_of_thumb_bandwidth(pseudo_step, target="alpha",
                                              scale=scale)
            h_scalar = rule_of_thumb_bandwidth(pseudo_step, target="alpha",
                                               scale=scale, undersmooth=True)
            sp_curve = SmoothSpec(kernel, transform_identity(), h_curve,
                                  boundary="kernel")
            sp_scalar = SmoothSpec(kernel, transform_identity(), h_scalar,
                                   boundary="kernel")
            breve = _vectorize_scalar(lambda p: smooth_alpha(step, sp_curve, p))
            breve_us = _vectorize_scalar(
                lambda p: smooth_alpha(step, sp_scalar, p))
            est = alpha_smoothed(breve)
            out["alpha_at"] = breve
            out["alpha_vec"] = lambda g: np.array([breve(p) for p in g])
            out["e_vec"] = lambda g: np.array(
                [smooth_payment(fit.payment, float(p), h_curve, kernel)
                 for p in g])
            # scalar functionals keep the raw payment; only alpha is smoothed
            out["bs"] = lambda: bidder_surplus_asymmetric(
                breve_us, fit.payment, fp_own).estimate
            out["mv"] = lambda: mean_valuation(
                alpha_smoothed(breve_us), fp_own).estimate
            pseudo = np.array([breve(p) for p in p_own])
        out["F_v_vec"] = lambda g: np.array(
            [cdf_v(est, fp_own, float(v)) for v in g])
        out["Q_v_vec"] = lambda g: np.array(
            [quantile_v(est, fp_own, float(t)) for t in g])
        out["f_v_vec"] = _twostep_curve(pseudo, scale)
        return out

    if name in ("ibf", "ibf-bc"):
        h_g = scale * silverman_bandwidth(rival, kernel)
        ib = ibf_estimate(rival, bandwidth=h_g,
                          boundary="bc" if name == "ibf-bc" else "none",
                          kernel=kernel)
        pseudo = np.asarray(ib.pseudo_value(own), dtype=float)
        okm = np.isfinite(pseudo)
        out["trim"] = float(1.0 - okm.mean()) if okm.size else 0.0
        fin = pseudo[okm]
        out["alpha_at"] = lambda p: float(ib.alpha(float(p)))
        out["alpha_vec"] = lambda g: np.asarray(ib.alpha(g), dtype=float)
        dens = np.asarray(ib.g(own), dtype=float)
        cdfs = np.asarray(ib.G(own), dtype=float)

        def bs_ibf():
            if fin.size == 0:
                return float("nan")
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(dens > 0.0, cdfs * cdfs / dens, np.nan)
            return float(np.nanmean(terms))

        out["bs"] = bs_ibf
        out["mv"] = lambda: float(np.mean(fin)) if fin.size else float("nan")
        fs = np.sort(fin)

        def F_vec(g):
            if fs.size == 0:
                return np.full(len(g), np.nan)
            return np.searchsorted(fs, g, side="right") / fs.size

        def Q_vec(g):
            if fs.size == 0:
                return np.full(len(g), np.nan)
            idx = np.minimum(np.ceil(np.asarray(g) * fs.size).astype(int) - 1,
                             fs.size - 1)
            return fs[np.maximum(idx, 0)]

        out["F_v_vec"] = F_vec
        out["Q_v_vec"] = Q_vec
        if fin.size:
            hv = scale * silverman_bandwidth(fin, kernel)
            support = (0.0, float(fs[-1])) if name == "ibf-bc" else None
            if name == "ibf-bc":
                kde = pdf_v_twostep(fin, kernel=kernel, bandwidth=hv,
                                    support=support)
            else:
                def kde(x, _f=fin, _h=hv):
                    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
                    vals = kernel.k((x_arr[:, None] - _f[None, :]) / _h)
                    return vals.sum(axis=1) / (_f.size * _h)
            out["f_v_vec"] = lambda g: np.asarray(kde(np.asarray(g)), dtype=float)
        else:
            out["f_v_vec"] = lambda g: np.full(len(g), np.nan)
        return out

    if name == "jackknife":
        pseudo_step = np.asarray(
            solve_ls_max_rival(rival).alpha(p_own), dtype=float)
        h = rule_of_thumb_bandwidth(pseudo_step, target="alpha", scale=scale)
        out["alpha_at"] = lambda p: float(
            _jackknife_hat_curve(rival, np.array([float(p)]), h, kernel)[0])
        out["alpha_vec"] = lambda g: _jackknife_hat_curve(
            rival, np.asarray(g, dtype=float), h, kernel)
        fit = solve_ls_max_rival(rival)
        out["e_vec"] = lambda g: np.array(
            [smooth_payment(fit.payment, float(p), h, kernel) for p in g])
        return out

    raise ValueError(f"unknown estimator {name!r}")


def _twostep_curve(pseudo: np.ndarray, scale: float):
    def f_vec(g):
        if pseudo.size == 0:
            return np.full(len(g), np.nan)
        h = scale * rule_of_thumb_bandwidth(pseudo, target="density")
        kde = pdf_v_twostep(pseudo, bandwidth=h,
                            support=(0.0, float(np.max(pseudo))))
        return np.asarray(kde(np.asarray(g)), dtype=float)
    return f_vec


def _eval_object(bundle: dict, obj: str, truth: TruthSet, tables: dict) -> float:
    # scalar objects return signed error; function objects return ISE
    if _is_pointwise(obj):
        x = float(obj[6:])
        return float(bundle["alpha_at"](x)) - float(truth.alpha(x))
    if obj in _SCALAR_OBJECTS:
        target = {"bs": truth.bs, "bs_symm": truth.bs_symm, "mv": truth.mv}[obj]
        return float(bundle[obj]()) - target
    grid = _PGRID if obj in ("alpha", "e") else (
        _TAUGRID if obj == "Q_v" else _VGRID)
    vec = bundle[{"alpha": "alpha_vec", "e": "e_vec", "f_v": "f_v_vec",
                  "F_v": "F_v_vec", "Q_v": "Q_v_vec"}[obj]](grid)
    return _ise(np.asarray(vec, dtype=float), tables[obj], grid)


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        raw = os.environ.get("AUCTIONSHAPE_THREADS", "").strip()
        threads = int(raw) if raw else 1
    return max(1, int(threads))


def run_monte_carlo(designs, estimators, objects, replications: int = 1000,
                    scales=(1.0,), threads: Optional[int] = None) -> McReport:
    """Replicated estimation across designs; RMSE/bias/RMISE per cell.

    Replication r of a design uses a counter-based generator keyed by
    seed XOR r, so reports are identical for a given seed regardless of
    thread count. Scale-invariant estimators (ls, mle) are computed
    once per replication and copied across scale cells. A cell is
    flagged when more than 1 percent of its replications fail.
    """
    designs = list(designs)
    estimators = list(estimators)
    objects = list(objects)
    scales = tuple(float(s) for s in scales)
    _check_config(designs, estimators, objects, replications)
    threads = _resolve_threads(threads)

    truths = [dgp_truths(d) for d in designs]
    tables = [_truth_tables(t, objects) for t in truths]
    keys = [(di, est, obj, si)
            for di in range(len(designs))
            for est in estimators
            for obj in objects
            for si in range(len(scales))]
    slot = {k: i for i, k in enumerate(keys)}
    values = np.full((len(keys), replications), np.nan)
    trims = np.zeros((len(keys), replications))

    def one_rep(di: int, r: int):
        spec = designs[di]
        rng = np.random.Generator(
            np.random.Philox(key=int(np.uint64(spec.seed) ^ np.uint64(r))))
        rival, own = dgp_sample(spec, rng)
        res = {}
        for est in estimators:
            invariant = est in ("ls", "mle")
            for si, s in enumerate(scales):
                if invariant and si > 0:
                    for obj in objects:
                        res[(di, est, obj, si)] = res[(di, est, obj, 0)]
                    continue
                try:
                    bundle = _bundle(est, rival, own, s)
                except Exception:
                    for obj in objects:
                        res[(di, est, obj, si)] = (float("nan"), 0.0)
                    continue
                for obj in objects:
                    try:
                        val = _eval_object(bundle, obj, truths[di], tables[di])
                    except Exception:
                        val = float("nan")
                    res[(di, est, obj, si)] = (val, bundle["trim"])
        return r, res

    tasks = [(di, r) for di in range(len(designs)) for r in range(replications)]
    if threads == 1:
        results = [one_rep(di, r) for di, r in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: one_rep(*a), tasks))
    for r, res in results:
        for key, (val, trim) in res.items():
            values[slot[key], r] = val
            trims[slot[key], r] = trim

    cells = []
    for key in keys:
        di, est, obj, si = key
        row = values[slot[key]]
        ok = np.isfinite(row)
        n_fail = int(replications - ok.sum())
        scalarlike = _is_pointwise(obj) or obj in _SCALAR_OBJECTS
        if ok.any():
            if scalarlike:
                rmse = float(np.sqrt(np.mean(row[ok] ** 2)))
                bias = float(np.mean(row[ok]))
                rmise = float("nan")
            else:
                rmse = float("nan")
                bias = float("nan")
                rmise = float(np.sqrt(np.mean(row[ok])))
        else:
            rmse = bias = rmise = float("nan")
        d = designs[di]
        cells.append(McCell(
            gamma=d.gamma, theta=d.theta, T=d.T, seed=d.seed, estimator=est,
            obj=obj, scale=scales[si], rmse=rmse, bias=bias, rmise=rmise,
            n_fail=n_fail, n_reps=replications,
            trim_fraction=float(np.mean(trims[slot[key]])),
            flagged=n_fail > 0.01 * replications,
        ))
    return McReport(replications=replications, scales=scales,
                    cells=tuple(cells))


# --------------------------------------------------------- serialization


def report_long_rows(report: McReport):
    """Long-format rows: one (cell, metric) per row, fixed order."""
    header = ["gamma", "theta", "T", "seed", "estimator", "object", "scale",
              "metric", "value"]
    rows = []
    for c in report.cells:
        for metric in ("rmse", "bias", "rmise", "n_fail", "trim_fraction"):
            rows.append([c.gamma, c.theta, c.T, c.seed, c.estimator, c.obj,
                         c.scale, metric, getattr(c, metric)])
    return header, rows


def report_to_json(report: McReport) -> dict:
    return {
        "replications": report.replications,
        "scales": list(report.scales),
        "cells": [
            {"gamma": c.gamma, "theta": c.theta, "T": c.T, "seed": c.seed,
             "estimator": c.estimator, "object": c.obj, "scale": c.scale,
             "rmse": c.rmse, "bias": c.bias, "rmise": c.rmise,
             "n_fail": c.n_fail, "n_reps": c.n_reps,
             "trim_fraction": c.trim_fraction, "flagged": c.flagged}
            for c in report.cells
        ],
    }


def relative_rmse_rows(report: McReport):
    """Relative errors, min across estimators = 1000 per column group."""
    header = ["gamma", "theta", "T", "scale", "object", "estimator",
              "relative"]
    groups = {}
    for c in report.cells:
        err = c.rmse if np.isfinite(c.rmse) else c.rmise
        groups.setdefault((c.gamma, c.theta, c.T, c.scale, c.obj), []).append(
            (c.estimator, err))
    rows = []
    for gkey in groups:
        vals = [e for _, e in groups[gkey] if np.isfinite(e)]
        best = min(vals) if vals else float("nan")
        for est, err in groups[gkey]:
            rel = 1000.0 * err / best if (np.isfinite(err) and best > 0) \
                else float("nan")
            rows.append(list(gkey[:4]) + [gkey[4], est, rel])
    return header, rows
