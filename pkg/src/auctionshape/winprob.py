"""Models for the distribution of equilibrium win probabilities.

The win probability of a bid is the coordinate p used throughout the
package. Its distribution across auctions, F_p, takes one of three
forms: the closed form implied by symmetric bidders, the empirical
composition of one bidder's bid distribution with the rival quantile
function, and an exponential-tilt density that is the closest density
to the symmetric reference among all densities matching the sample
moments of the empirical F_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import MonotoneStepFn, step_pieces

__all__ = [
    "FpModel",
    "fp_symmetric",
    "fp_empirical",
    "fp_min_entropy",
    "fp_atoms",
]


@dataclass(frozen=True, eq=False)
class FpModel:
    """Distribution of the win probability of a bid.

    Parameters
    ----------
    kind : str
        One of ``symmetric``, ``empirical``, ``min_entropy``.
    F : callable
        CDF on [0, 1], vectorized.
    Q : callable
        Quantile function (generalized inverse of ``F``).
    f, fprime, fdblprime : callable or None
        Density and its first two derivatives where defined. The
        empirical model has no density; the tilt model has ``f`` and
        ``fprime`` but no second derivative evaluator.
    n : int or None
        Number of bidders behind the model, when meaningful.
    step : MonotoneStepFn or None
        The empirical CDF as a step function (``empirical`` kind only).
    mu : ndarray or None
        Exponential-tilt coefficients (``min_entropy`` kind only).
    degree : int or None
        Tilt basis degree (``min_entropy`` kind only).
    """

    kind: str
    F: Callable
    Q: Callable
    f: Optional[Callable] = None
    fprime: Optional[Callable] = None
    fdblprime: Optional[Callable] = None
    n: Optional[int] = None
    step: Optional[MonotoneStepFn] = None
    mu: Optional[np.ndarray] = None
    degree: Optional[int] = None


def fp_symmetric(n: int) -> FpModel:
    """Win-probability model when all n bidders share one bid distribution.

    The maximum rival bid of any bidder then has CDF G^{n-1}, so the win
    probability of the bid at quantile tau is tau^{n-1} and
    F_p(p) = p^{1/(n-1)}. The density is unbounded at 0 for n > 2.

    Parameters
    ----------
    n : int
        Number of bidders, at least 2.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    a = 1.0 / (n - 1)

    def F(p):
        p = np.asarray(p, dtype=float)
        return p**a

    def Q(tau):
        tau = np.asarray(tau, dtype=float)
        return tau ** (n - 1)

    def f(p):
        p = np.asarray(p, dtype=float)
        if n == 2:
            return np.ones_like(p)
        with np.errstate(divide="ignore"):
            return p ** ((2.0 - n) * a) / (n - 1)

    def fprime(p):
        p = np.asarray(p, dtype=float)
        if n == 2:
            return np.zeros_like(p)
        with np.errstate(divide="ignore"):
            return (2.0 - n) / (n - 1) ** 2 * p ** ((3.0 - 2 * n) * a)

    def fdblprime(p):
        p = np.asarray(p, dtype=float)
        if n == 2:
            return np.zeros_like(p)
        with np.errstate(divide="ignore"):
            return (2.0 - n) * (3.0 - 2 * n) / (n - 1) ** 3 * p ** ((4.0 - 3 * n) * a)

    return FpModel(kind="symmetric", F=F, Q=Q, f=f, fprime=fprime,
                   fdblprime=fdblprime, n=n)


def fp_empirical(own_bids, rival_quantile: MonotoneStepFn) -> FpModel:
    """Empirical win-probability distribution of one bidder's bids.

    Composes the empirical CDF of the bidder's own bids with the rival
    quantile function: F_pT(p) = G_T(Q_cT(p)). The result is a proper
    left-continuous step CDF with F_pT(0) = 0 and F_pT(1) = 1; own bids
    that exceed the rival maximum contribute an atom at p = 1.

    Parameters
    ----------
    own_bids : array_like
        The bidder's own bids, nonempty.
    rival_quantile : MonotoneStepFn
        Quantile function of the maximum rival bid.
    """
    b = np.sort(np.asarray(own_bids, dtype=float).ravel())
    if b.size == 0:
        raise ValueError("own bid sample is empty")
    if not np.all(np.isfinite(b)):
        raise ValueError("own bids must be finite")
    xs, lv = step_pieces(rival_quantile)
    # G_T(Q_cT(p)) is constant between rival quantile jumps.
    comp = np.searchsorted(b, lv, side="right") / b.size
    knots = xs[1:]
    levels = comp.copy()
    levels[-1] = 1.0
    levels = np.maximum.accumulate(levels)
    keep = np.concatenate((np.diff(knots) > 0, [True]))
    knots = np.concatenate(([0.0], knots[keep]))
    levels = np.concatenate(([0.0], levels[keep]))
    stepF = MonotoneStepFn(knots, levels, continuity="left")
    locs, wts = _atoms_from_cdf(stepF)
    cumw = np.cumsum(wts)

    def F(p):
        p_arr = np.asarray(p, dtype=float)
        out = stepF(np.atleast_1d(p_arr))
        return out.reshape(p_arr.shape) if isinstance(p, np.ndarray) else float(out[0])

    def Q(tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        if np.any(tau_arr < 0) or np.any(tau_arr > 1):
            raise ValueError("evaluation outside [0, 1]")
        # smallest atom whose cumulative weight reaches tau
        idx = np.searchsorted(cumw, tau_arr - 1e-12, side="left")
        idx = np.minimum(idx, locs.size - 1)
        out = np.where(tau_arr <= 0.0, 0.0, locs[idx])
        return out if isinstance(tau, np.ndarray) else float(out[0])

    return FpModel(kind="empirical", F=F, Q=Q, step=stepF)


def _atoms_from_cdf(stepF: MonotoneStepFn):
    xs, lv = step_pieces(stepF)
    wts = np.diff(np.concatenate(([0.0], lv)))
    locs = xs[1:]
    keep = wts > 0
    return locs[keep], wts[keep]


def fp_atoms(fp: FpModel):
    """Atom locations and weights of an empirical win-probability model."""
    if fp.kind != "empirical" or fp.step is None:
        raise ValueError("no atoms: model kind is not empirical")
    return _atoms_from_cdf(fp.step)


def _gl01(order: int = 200):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def fp_min_entropy(F_pT: FpModel, n: int, degree: Optional[int] = None) -> FpModel:
    """Minimum-relative-entropy win-probability density.

    Among densities on [0, 1] matching the first ``degree`` + 1 moments
    of the empirical win-probability distribution, finds the one
    closest in Kullback-Leibler divergence to the symmetric reference.
    The solution is an exponential tilt of the reference,
    f_p(p) = exp(mu' [1, p, ..., p^degree]) p^{(2-n)/(n-1)}, with mu
    solving the moment-matching system via damped Newton on the convex
    dual. The p^{(2-n)/(n-1)} singularity is removed by the
    substitution u = p^{1/(n-1)} before quadrature.

    Parameters
    ----------
    F_pT : FpModel
        Empirical model supplying the target moments.
    n : int
        Number of bidders, at least 2.
    degree : int, optional
        Tilt basis degree. Defaults to ceil(T^{1/3}) capped at 8, where
        T is the number of atoms of ``F_pT``.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    n = int(n)
    locs, wts = fp_atoms(F_pT)
    if degree is None:
        degree = min(8, int(math.ceil(locs.size ** (1.0 / 3.0) - 1e-12)))
    degree = int(degree)
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    target = np.array([float(np.sum(wts * locs**j)) for j in range(degree + 1)])

    # Dual objective: integral of the tilt density minus mu'target.
    # With u = p^{1/(n-1)}, the reference weight p^{(2-n)/(n-1)} dp
    # becomes (n-1) du, so every integrand below is smooth in u.
    u, wu = _gl01(200)
    p_nodes = u ** (n - 1)
    quad_w = (n - 1.0) * wu
    design = np.vander(p_nodes, degree + 1, increasing=True).T  # (degree+1, nodes)

    mu = np.zeros(degree + 1)
    mu[0] = -math.log(n - 1.0)

    def dual_parts(m):
        with np.errstate(over="ignore"):
            dens = np.exp(m @ design)
        moments = design @ (quad_w * dens)
        value = moments[0] - m @ target
        return value, moments

    value, moments = dual_parts(mu)
    resid = moments - target
    res_norm = float(np.max(np.abs(resid)))
    for _ in range(200):
        if res_norm < 1e-8:
            break
        hess = (design * (quad_w * np.exp(mu @ design))) @ design.T
        try:
            step = np.linalg.solve(hess, resid)
        except np.linalg.LinAlgError:
            step = resid / max(hess[0, 0], 1e-300)
        t = 1.0
        for _ in range(60):
            cand = mu - t * step
            cand_value, cand_moments = dual_parts(cand)
            cand_resid = cand_moments - target
            cand_norm = float(np.max(np.abs(cand_resid)))
            if np.isfinite(cand_value) and (cand_value < value or cand_norm < res_norm):
                mu, value, moments = cand, cand_value, cand_moments
                resid, res_norm = cand_resid, cand_norm
                break
            t *= 0.5
        else:
            break
    if res_norm >= 1e-8:
        raise RuntimeError(
            "moment matching did not converge after 200 iterations; "
            f"max residual {float(np.max(np.abs(resid))):.3e}"
        )

    c = (2.0 - n) / (n - 1.0)
    powers = np.arange(degree + 1)

    def tilt(p):
        p = np.asarray(p, dtype=float)
        return np.exp(np.polynomial.polynomial.polyval(p, mu))

    def f(p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            return tilt(p) * p**c

    def fprime(p):
        p = np.asarray(p, dtype=float)
        dtilt = np.polynomial.polynomial.polyval(p, powers[1:] * mu[1:]) if degree else 0.0
        with np.errstate(divide="ignore"):
            return f(p) * (dtilt + c / p) if n > 2 else f(p) * dtilt

    def F(p):
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(p_arr < 0) or np.any(p_arr > 1):
            raise ValueError("evaluation outside [0, 1]")
        up = p_arr ** (1.0 / (n - 1))
        nodes = up[:, None] * u[None, :]
        vals = tilt(nodes ** (n - 1)) @ wu
        out = (n - 1.0) * up * vals
        return out if isinstance(p, np.ndarray) else float(out[0])

    def Q(tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        out = np.empty_like(tau_arr)
        for i, t in enumerate(tau_arr):
            if not 0.0 <= t <= 1.0:
                raise ValueError("evaluation outside [0, 1]")
            lo, hi = 0.0, 1.0
            while hi - lo > 1e-12:
                mid = 0.5 * (lo + hi)
                if F(mid) < t:
                    lo = mid
                else:
                    hi = mid
            out[i] = 0.5 * (lo + hi)
        return out if isinstance(tau, np.ndarray) else float(out[0])

    return FpModel(kind="min_entropy", F=F, Q=Q, f=f, fprime=fprime,
                   n=n, mu=mu, degree=degree)
