"""Kernel smoothing of the step inverse strategy.

Smooths alpha_T under a strictly increasing transformation psi with
three boundary treatments: none, position-dependent boundary kernels
(omega_1 - omega_2 s)k(s) whose truncated moments restore unit mass and
zero first moment, and a cubic change-of-variables extension past the
support edges followed by plain smoothing. Step-function structure is
exploited throughout: the psi-inside placement is an exact sum of
kernel-antiderivative differences over the pieces, and the extension
integrals split the domain at the preimages of the step knots so each
panel integrand is a low-degree polynomial integrated exactly by
Gauss-Legendre rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erf

from .core import MaxRivalSample, MonotoneStepFn, step_pieces
from .isotonic_ls import solve_ls_max_rival

__all__ = [
    "KernelSpec",
    "Transform",
    "SmoothSpec",
    "ReflectionState",
    "kernel_epanechnikov",
    "kernel_gaussian",
    "transform_identity",
    "transform_log",
    "transform_sqrt",
    "transform_fifthroot",
    "transform_custom",
    "transform_from_pilot",
    "normalize_at_one",
    "boundary_weights",
    "boundary_weights_general",
    "smooth_alpha",
    "smooth_payment",
    "estimate_d",
    "reflection_state",
    "reflect_extend",
    "smooth_alpha_reflected",
    "alpha_derivative",
    "monotonize_cummax",
    "jackknife_alpha",
]

_GL_X, _GL_W = leggauss(20)
_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric second-order kernel with closed-form antiderivatives.

    K is the running integral of k, J the running integral of s k(s),
    and moments(a, b) returns the truncated moments (m0, m1, m2) of k
    over [a, b] clamped to the kernel support. radius bounds the
    support in kernel units (an effective bound for the normal family).
    """

    name: str
    k: Callable
    K: Callable
    J: Callable
    kprime: Callable
    moments: Callable
    radius: float
    compact: bool
    sigma2: float
    kappa2: float
    kappa2_deriv: float


def kernel_epanechnikov() -> KernelSpec:
    """k(u) = 0.75 (1 - u^2) on [-1, 1]."""

    def k(u):
        u = np.asarray(u, dtype=float)
        w = np.clip(u, -1.0, 1.0)
        return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - w * w), 0.0)

    def K(u):
        w = np.clip(u, -1.0, 1.0)
        return 0.75 * (w - w ** 3 / 3.0) + 0.5

    def J(u):
        w = np.clip(u, -1.0, 1.0)
        return 0.75 * (w * w / 2.0 - w ** 4 / 4.0 - 0.25)

    def kprime(u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 1.0, -1.5 * np.clip(u, -1.0, 1.0), 0.0)

    def moments(a, b):
        wa = min(max(a, -1.0), 1.0)
        wb = min(max(b, -1.0), 1.0)

        def p0(w):
            return 0.75 * (w - w ** 3 / 3.0)

        def p1(w):
            return 0.75 * (w * w / 2.0 - w ** 4 / 4.0)

        def p2(w):
            return 0.75 * (w ** 3 / 3.0 - w ** 5 / 5.0)

        return p0(wb) - p0(wa), p1(wb) - p1(wa), p2(wb) - p2(wa)

    return KernelSpec("epanechnikov", k, K, J, kprime, moments,
                      radius=1.0, compact=True,
                      sigma2=0.2, kappa2=0.6, kappa2_deriv=1.5)


def _phi(u):
    return np.exp(-0.5 * np.square(u)) / _SQRT2PI


def _Phi(u):
    return 0.5 * (1.0 + erf(np.asarray(u, dtype=float) / math.sqrt(2.0)))


def kernel_gaussian() -> KernelSpec:
    """Standard normal kernel; support treated as [-8, 8] for windowing."""

    def J(u):
        return -_phi(u)

    def kprime(u):
        u = np.asarray(u, dtype=float)
        u_safe = np.where(np.isfinite(u), u, 0.0)
        return -u_safe * _phi(u)

    def _edge(x):
        # x * phi(x) with the correct 0 limit at +-inf
        if math.isinf(x):
            return 0.0
        return x * float(_phi(x))

    def moments(a, b):
        m0 = float(_Phi(b) - _Phi(a))
        m1 = float(_phi(a) - _phi(b))
        m2 = m0 + _edge(a) - _edge(b)
        return m0, m1, m2

    return KernelSpec("gaussian", _phi, _Phi, J, kprime, moments,
                      radius=8.0, compact=False,
                      sigma2=1.0, kappa2=1.0 / (2.0 * math.sqrt(math.pi)),
                      kappa2_deriv=1.0 / (4.0 * math.sqrt(math.pi)))


@dataclass(frozen=True)
class Transform:
    """Strictly increasing map of the probability axis with derivatives."""

    name: str
    psi: Callable
    dpsi: Callable
    d2psi: Callable
    d3psi: Callable


def transform_identity() -> Transform:
    return Transform(
        "identity",
        lambda p: np.asarray(p, dtype=float),
        lambda p: np.ones_like(np.asarray(p, dtype=float)),
        lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        lambda p: np.zeros_like(np.asarray(p, dtype=float)),
    )


def transform_log() -> Transform:
    def psi(p):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(p, dtype=float))

    return Transform(
        "log",
        psi,
        lambda p: 1.0 / np.asarray(p, dtype=float),
        lambda p: -1.0 / np.asarray(p, dtype=float) ** 2,
        lambda p: 2.0 / np.asarray(p, dtype=float) ** 3,
    )


def transform_sqrt() -> Transform:
    return Transform(
        "sqrt",
        lambda p: np.sqrt(np.asarray(p, dtype=float)),
        lambda p: 0.5 * np.asarray(p, dtype=float) ** -0.5,
        lambda p: -0.25 * np.asarray(p, dtype=float) ** -1.5,
        lambda p: 0.375 * np.asarray(p, dtype=float) ** -2.5,
    )


def transform_fifthroot() -> Transform:
    return Transform(
        "fifthroot",
        lambda p: np.asarray(p, dtype=float) ** 0.2,
        lambda p: 0.2 * np.asarray(p, dtype=float) ** -0.8,
        lambda p: -0.16 * np.asarray(p, dtype=float) ** -1.8,
        lambda p: 0.288 * np.asarray(p, dtype=float) ** -2.8,
    )


def transform_custom(name, psi, dpsi, d2psi=None, d3psi=None) -> Transform:
    zero = lambda p: np.zeros_like(np.asarray(p, dtype=float))
    return Transform(name, psi, dpsi, d2psi or zero, d3psi or zero)


def transform_from_pilot(pilot, grid_size: int = 2001) -> Transform:
    """Transform built from a pilot estimate of alpha.

    The pilot is sampled on a grid, monotonized, and interpolated
    linearly; a small linear ramp enforces strict increase and the ends
    extend linearly, so the transform is usable slightly outside [0,1].
    Second and third derivatives are taken to be zero.
    """
    g = np.linspace(0.0, 1.0, grid_size)
    try:
        v = np.asarray(pilot(g), dtype=float)
    except (TypeError, ValueError):
        v = np.array([float(pilot(x)) for x in g])
    if v.shape != g.shape:
        v = np.array([float(pilot(x)) for x in g])
    v = np.maximum.accumulate(v)
    span = v[-1] - v[0]
    eps = 1e-8 * (span if span > 0 else 1.0) + 1e-12
    dg = g[1] - g[0]
    slopes = np.diff(v) / dg + eps

    def psi(p):
        p = np.asarray(p, dtype=float)
        base = np.interp(p, g, v) + eps * p
        lo = v[0] + eps * 0.0 + (slopes[0]) * np.minimum(p, 0.0)
        hi = v[-1] + eps * 1.0 + (slopes[-1]) * (np.maximum(p, 1.0) - 1.0)
        return np.where(p < 0.0, lo, np.where(p > 1.0, hi, base))

    def dpsi(p):
        p = np.asarray(p, dtype=float)
        idx = np.clip(np.searchsorted(g, np.clip(p, 0.0, 1.0), side="right") - 1,
                      0, slopes.size - 1)
        return slopes[idx]

    zero = lambda p: np.zeros_like(np.asarray(p, dtype=float))
    return Transform("pilot", psi, dpsi, zero, zero)


def normalize_at_one(transform: Transform) -> Transform:
    """Affine rescale so that psi(1) = 0 and psi'(1) = 1."""
    m = float(transform.dpsi(1.0))
    c = float(transform.psi(1.0))
    if not (math.isfinite(m) and m > 0.0):
        raise ValueError("transform slope at 1 must be finite and positive")
    return Transform(
        transform.name + "~1",
        lambda x: (transform.psi(x) - c) / m,
        lambda x: transform.dpsi(x) / m,
        lambda x: transform.d2psi(x) / m,
        lambda x: transform.d3psi(x) / m,
    )


_BOUNDARY_ALIASES = {
    "none": "none",
    "kernel": "kernel",
    "boundary_kernel": "kernel",
    "reflect": "reflect",
    "reflection": "reflect",
}

_PLACEMENTS = ("psi_prime_inside", "psi_prime_outside")


@dataclass(frozen=True)
class SmoothSpec:
    """Bundle of kernel, transform, bandwidth, boundary scheme, placement.

    bandwidth 0 means no smoothing (the raw step function is returned).
    """

    kernel: KernelSpec
    transform: Transform
    bandwidth: float
    boundary: str = "none"
    placement: str = "psi_prime_inside"

    def __post_init__(self):
        if not (self.bandwidth >= 0.0 and math.isfinite(self.bandwidth)):
            raise ValueError("bandwidth must be nonnegative")
        if self.boundary not in _BOUNDARY_ALIASES:
            raise ValueError(f"unknown boundary scheme {self.boundary!r}")
        object.__setattr__(self, "boundary", _BOUNDARY_ALIASES[self.boundary])
        if self.placement not in _PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")


def boundary_weights_general(p: float, h: float, transform: Transform,
                             kernel: KernelSpec) -> tuple[float, float]:
    """Boundary-correction weights (omega_1, omega_2) at position p.

    The corrected kernel (omega_1 - omega_2 s)k(s), truncated to the
    window the support imposes in psi-space, integrates to one and has
    zero first moment. Interior points give (1, 0) for compact kernels.
    """
    if h <= 0.0:
        raise ValueError("bandwidth must be positive")
    psip = float(transform.psi(p))
    if not math.isfinite(psip):
        raise ValueError("degenerate boundary window")
    psi1 = float(transform.psi(1.0))
    psi0 = float(transform.psi(0.0))
    ubar = (psi1 - psip) / h
    ulow = (psi0 - psip) / h if math.isfinite(psi0) else -math.inf
    if not ubar > ulow:
        raise ValueError("degenerate boundary window")
    m0, m1, m2 = kernel.moments(ulow, ubar)
    det = m0 * m2 - m1 * m1
    if not (det > 1e-300 and m0 > 0.0):
        raise ValueError("degenerate boundary window")
    return m2 / det, -m1 / det


def boundary_weights(p: float, h: float, transform: Transform) -> tuple[float, float]:
    """Normal-kernel boundary weights (omega_1, omega_2)."""
    return boundary_weights_general(p, h, transform, kernel_gaussian())


def _kw(kernel: KernelSpec, w: tuple[float, float], s):
    s = np.asarray(s, dtype=float)
    # infinite arguments carry zero kernel mass; keep the linear factor finite
    s_safe = np.where(np.isfinite(s), s, np.clip(s, -kernel.radius, kernel.radius))
    return (w[0] - w[1] * s_safe) * kernel.k(s)


def _Kw(kernel: KernelSpec, w: tuple[float, float], s):
    return w[0] * kernel.K(s) - w[1] * kernel.J(s)


def _lambda_sum(alpha, kernel, transform, h, p, w):
    xs, lv = step_pieces(alpha)
    u = (np.asarray(transform.psi(xs), dtype=float) - float(transform.psi(p))) / h
    kv = _Kw(kernel, w, -u)
    return float(np.sum(lv * (kv[:-1] - kv[1:])))


def _lambda_deriv_sum(alpha, kernel, transform, h, p, w):
    xs, lv = step_pieces(alpha)
    u = (np.asarray(transform.psi(xs), dtype=float) - float(transform.psi(p))) / h
    kv = _kw(kernel, w, -u)
    return float(transform.dpsi(p)) / h * float(np.sum(lv * (kv[:-1] - kv[1:])))


def _inv_psi(transform, target, lo, hi):
    # monotone bisection of psi(s) = target on [lo, hi]
    flo = float(transform.psi(lo))
    fhi = float(transform.psi(hi))
    if flo >= target:
        return lo
    if fhi <= target:
        return hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(transform.psi(mid)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _outside_value(alpha, kernel, transform, h, p, w):
    xs, lv = step_pieces(alpha)
    psip = float(transform.psi(p))
    lo_t = psip - h * kernel.radius
    hi_t = psip + h * kernel.radius
    slo = _inv_psi(transform, lo_t, 0.0, 1.0)
    shi = _inv_psi(transform, hi_t, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        singular_left = not math.isfinite(float(transform.dpsi(slo)))
    total = 0.0
    for j in range(lv.size):
        a = max(xs[j], slo)
        b = min(xs[j + 1], shi)
        if b <= a:
            continue
        starts = [a]
        if j == 0 and a == slo and singular_left:
            # grade panels geometrically into the psi' singularity
            starts = list(a + (b - a) * 0.25 ** np.arange(26, 0, -1))
            starts.insert(0, a)
        starts.append(b)
        for lo_e, hi_e in zip(starts[:-1], starts[1:]):
            width = float(transform.psi(hi_e)) - float(transform.psi(lo_e))
            chunks = min(64, max(1, int(math.ceil(width / (0.25 * h)))))
            edges = np.linspace(lo_e, hi_e, chunks + 1)
            for i in range(chunks):
                mid = 0.5 * (edges[i] + edges[i + 1])
                half = 0.5 * (edges[i + 1] - edges[i])
                s = mid + half * _GL_X
                vals = _kw(kernel, w,
                           (psip - np.asarray(transform.psi(s), float)) / h)
                total += lv[j] * half * float(np.dot(_GL_W, vals))
    return float(transform.dpsi(p)) / h * total


def smooth_alpha(alpha: MonotoneStepFn, spec: SmoothSpec, p: float) -> float:
    """Smoothed inverse-strategy value at p.

    psi_prime_inside evaluates the exact antiderivative sum over the
    step pieces; psi_prime_outside evaluates psi'(p)/h times the kernel
    integral of the raw step function by panel quadrature. Boundary
    'kernel' applies the position-dependent weights; use
    smooth_alpha_reflected for the reflection scheme.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p outside [0,1]")
    if spec.boundary == "reflect":
        raise ValueError("reflection smoothing uses smooth_alpha_reflected")
    h = spec.bandwidth
    if h == 0.0:
        return float(alpha(p))
    if not math.isfinite(float(spec.transform.psi(p))):
        # window degenerates to the boundary piece (log-like transform at 0)
        return float(alpha(p))
    if spec.boundary == "kernel":
        w = boundary_weights_general(p, h, spec.transform, spec.kernel)
    else:
        w = (1.0, 0.0)
    if spec.placement == "psi_prime_inside":
        return _lambda_sum(alpha, spec.kernel, spec.transform, h, p, w)
    return _outside_value(alpha, spec.kernel, spec.transform, h, p, w)


def smooth_payment(payment, p: float, h: float,
                   kernel: KernelSpec | None = None) -> float:
    """Kernel-smoothed payment (1/h) int e(x) k((p-x)/h) dx over [0,1].

    Exact per linear segment: the integral of (c + s x) k((p-x)/h)/h is
    (c + s p) dK - s h dJ across the segment's kernel window.
    """
    kernel = kernel or kernel_epanechnikov()
    x = np.asarray(payment.x, dtype=float)
    y = np.asarray(payment.y, dtype=float)
    slopes = np.diff(y) / np.diff(x)
    inter = y[:-1] - slopes * x[:-1]
    w_hi = (p - x[:-1]) / h
    w_lo = (p - x[1:]) / h
    dK = kernel.K(w_hi) - kernel.K(w_lo)
    dJ = kernel.J(w_hi) - kernel.J(w_lo)
    return float(np.sum((inter + slopes * p) * dK - slopes * h * dJ))


def _smooth_payment_deriv(payment, p: float, h: float, kernel: KernelSpec) -> float:
    # d/dp of smooth_payment: (1/h^2) int e(x) k'((p-x)/h) dx, exact per segment
    x = np.asarray(payment.x, dtype=float)
    y = np.asarray(payment.y, dtype=float)
    slopes = np.diff(y) / np.diff(x)
    inter = y[:-1] - slopes * x[:-1]
    w_hi = (p - x[:-1]) / h
    w_lo = (p - x[1:]) / h
    dk = kernel.k(w_hi) - kernel.k(w_lo)
    wk = w_hi * kernel.k(w_hi) - w_lo * kernel.k(w_lo)
    dK = kernel.K(w_hi) - kernel.K(w_lo)
    return float(np.sum((inter + slopes * p) * dk - slopes * h * (wk - dK))) / h


def estimate_d(alpha: MonotoneStepFn, side: str, h_d: float) -> float:
    """Boundary log-derivative d = alpha'/alpha from a local linear fit.

    Fits a + b s to the step function in continuous least squares on
    [1-h_d, 1] (side 'right') or [0, h_d] (side 'left') using exact
    step integrals, then returns slope over level at the boundary.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if not (h_d > 0.0 and math.isfinite(h_d)):
        raise ValueError("window too narrow")
    a_w, b_w = (max(0.0, 1.0 - h_d), 1.0) if side == "right" else (0.0, min(1.0, h_d))
    if not b_w > a_w:
        raise ValueError("window too narrow")
    xs, lv = step_pieces(alpha)
    L = b_w - a_w
    S1 = 0.5 * (b_w ** 2 - a_w ** 2)
    S2 = (b_w ** 3 - a_w ** 3) / 3.0
    lo = np.maximum(xs[:-1], a_w)
    hi = np.minimum(xs[1:], b_w)
    width = np.maximum(hi - lo, 0.0)
    mask = width > 0.0
    I0 = float(np.sum(lv[mask] * width[mask]))
    I1 = float(np.sum(lv[mask] * 0.5 * (hi[mask] ** 2 - lo[mask] ** 2)))
    det = L * S2 - S1 * S1
    beta = (L * I1 - S1 * I0) / det
    a_coef = (I0 - beta * S1) / L
    level = a_coef + beta * (1.0 if side == "right" else 0.0)
    if level <= 0.0:
        raise ValueError("boundary level not positive")
    return float(beta / level)


@dataclass(frozen=True)
class ReflectionState:
    """Cubic extension coefficients for the two boundaries.

    rho holds (1, c2, c3) for rho(s) = s + c2 s^2 + c3 s^3 at the right
    boundary under the psi(1)=0, psi'(1)=1 normalization; rho0 is the
    left analog (None when the left boundary is unusable: level 0 or a
    transform with unbounded curvature at 0).
    """

    d_hat_right: float
    rho: tuple[float, float, float]
    d_hat_left: float | None = None
    rho0: tuple[float, float, float] | None = None


def reflection_state(alpha: MonotoneStepFn, transform: Transform,
                     h_d: float) -> ReflectionState:
    """Estimate boundary log-derivatives and build the extension cubics."""
    d_r = estimate_d(alpha, "right", h_d)
    curv1 = float(transform.d2psi(1.0)) / float(transform.dpsi(1.0))
    rho = (1.0, d_r, d_r * d_r - curv1 * d_r / 6.0)
    d_l = None
    rho0 = None
    with np.errstate(divide="ignore", invalid="ignore"):
        dpsi0 = float(transform.dpsi(0.0))
        d2psi0 = float(transform.d2psi(0.0))
    if math.isfinite(dpsi0) and dpsi0 > 0.0 and math.isfinite(d2psi0):
        try:
            d_l = estimate_d(alpha, "left", h_d)
        except ValueError:
            d_l = None
        if d_l is not None:
            curv0 = d2psi0 / dpsi0
            rho0 = (1.0, -d_l, d_l * d_l - d_l * curv0 / 6.0)
    return ReflectionState(d_hat_right=d_r, rho=rho, d_hat_left=d_l, rho0=rho0)


def _cubic(c, u):
    return u * (c[0] + u * (c[1] + u * c[2]))


def _cubic_deriv(c, u):
    return c[0] + u * (2.0 * c[1] + u * 3.0 * c[2])


def reflect_extend(alpha, state: ReflectionState, transform: Transform,
                   s: float) -> float:
    """Extended inverse-strategy value just outside the support.

    s > 0 evaluates the extension at 1 + s via the right cubic under
    the internal psi(1)=0, psi'(1)=1 normalization; s < 0 evaluates at
    s itself via the left cubic (the transform must be evaluable there).
    alpha may be any callable on [0, 1].
    """
    if s >= 0.0:
        m = float(transform.dpsi(1.0))
        c = float(transform.psi(1.0))
        u = (float(transform.psi(1.0 + s)) - c) / m
        x = min(max(1.0 - _cubic(state.rho, u), 0.0), 1.0)
        return float(alpha(x)) * float(_cubic_deriv(state.rho, u))
    if state.rho0 is None:
        raise ValueError("left reflection unavailable")
    psi0 = float(transform.psi(0.0))
    dpsi0 = float(transform.dpsi(0.0))
    val = float(transform.psi(s))
    if not (math.isfinite(val) and math.isfinite(psi0) and math.isfinite(dpsi0)):
        raise ValueError("left reflection unavailable")
    u = (psi0 - val) / dpsi0
    x = min(max(_cubic(state.rho0, u), 0.0), 1.0)
    return float(alpha(x)) * float(_cubic_deriv(state.rho0, u))


def _solve_cubic_monotone(c, target, lo, hi):
    # bisection of the increasing cubic on [lo, hi]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _cubic(c, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _extension_panels(alpha, cubic, tmax, reflected_coord):
    # panel edges in the extension variable, split where the reflected
    # coordinate crosses a knot of alpha so panels are polynomial
    edges = [0.0, tmax]
    knots = getattr(alpha, "knots", None)
    if knots is not None:
        x_end = reflected_coord(_cubic(cubic, tmax))
        x_start = reflected_coord(0.0)
        lo_x, hi_x = min(x_start, x_end), max(x_start, x_end)
        for kx in np.asarray(knots, dtype=float):
            if lo_x < kx < hi_x:
                target = abs(kx - x_start)
                edges.append(_solve_cubic_monotone(cubic, target, 0.0, tmax))
    else:
        edges.extend(np.linspace(0.0, tmax, 33)[1:-1])
    return np.unique(np.asarray(edges, dtype=float))


def _ext_integral(alpha, cubic, kernel, h, arg_fn, coord_fn, tmax, deriv):
    if tmax <= 0.0:
        return 0.0
    edges = _extension_panels(alpha, cubic, tmax, coord_fn)
    total = 0.0
    kfun = kernel.kprime if deriv else kernel.k
    for i in range(edges.size - 1):
        mid = 0.5 * (edges[i] + edges[i + 1])
        half = 0.5 * (edges[i + 1] - edges[i])
        if half <= 0.0:
            continue
        t = mid + half * _GL_X
        r = _cubic(cubic, t)
        x = np.clip(coord_fn(r), 0.0, 1.0)
        try:
            avals = np.asarray(alpha(x), dtype=float)
        except (TypeError, ValueError):
            avals = np.array([float(alpha(v)) for v in x])
        f = avals * _cubic_deriv(cubic, t) * kfun(arg_fn(t))
        total += half * float(np.dot(_GL_W, f))
    return total / h


def _reflected_parts(alpha, state, transform, h, p, deriv):
    kernel = kernel_epanechnikov()
    tpsi = normalize_at_one(transform)
    q_p = float(tpsi.psi(p))
    q0 = float(tpsi.psi(0.0))
    touches_left = math.isfinite(q0) and q_p - h < q0
    if touches_left and state.rho0 is None:
        # no usable left extension: fall back to the boundary-kernel scheme
        spec = SmoothSpec(kernel, tpsi, h, boundary="kernel",
                          placement="psi_prime_inside")
        if deriv:
            w = boundary_weights_general(p, h, tpsi, kernel)
            return _lambda_deriv_sum(alpha, kernel, tpsi, h, p, w)
        return smooth_alpha(alpha, spec, p)
    if deriv:
        value = _lambda_deriv_sum(alpha, kernel, tpsi, h, p, (1.0, 0.0))
    else:
        value = _lambda_sum(alpha, kernel, tpsi, h, p, (1.0, 0.0))
    scale = float(tpsi.dpsi(p)) / h if deriv else 1.0
    if q_p + h > 0.0:
        part = _ext_integral(
            alpha, state.rho, kernel, h,
            arg_fn=lambda t: (q_p - t) / h,
            coord_fn=lambda r: 1.0 - r,
            tmax=q_p + h,
            deriv=deriv,
        )
        value += scale * part if deriv else part
    if touches_left:
        dq0 = float(tpsi.dpsi(0.0))
        umax = (q0 - (q_p - h)) / dq0
        part = dq0 * _ext_integral(
            alpha, state.rho0, kernel, h,
            arg_fn=lambda u: (q_p - (q0 - dq0 * u)) / h,
            coord_fn=lambda r: r,
            tmax=umax,
            deriv=deriv,
        )
        value += scale * part if deriv else part
    return value


def smooth_alpha_reflected(alpha, state: ReflectionState, transform: Transform,
                           h: float, p: float) -> float:
    """Reflection-corrected smoothing with the Epanechnikov kernel.

    Works in normalized psi coordinates (psi(1)=0, psi'(1)=1); the
    bandwidth is in those units. Interior evaluations reduce exactly to
    the uncorrected transformed smoother; windows that cross a boundary
    integrate over the cubic extension instead of truncating. If the
    left extension is unavailable and the window touches 0, the whole
    evaluation falls back to the boundary-kernel scheme.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p outside [0,1]")
    if not h > 0.0:
        raise ValueError("bandwidth must be positive")
    return float(_reflected_parts(alpha, state, transform, h, p, deriv=False))


def alpha_derivative(alpha, spec: SmoothSpec, p: float,
                     state: ReflectionState | None = None,
                     clamp: bool = False) -> float:
    """Derivative of the smoothed inverse strategy at p.

    Differentiates the psi-inside form: psi'(p)/h times the exact sum
    of kernel differences over the step pieces. Under boundary 'kernel'
    the weights are held fixed at their value for p (their own position
    derivative is dropped). Under 'reflect' the extension integrals are
    differentiated with the kernel derivative. clamp floors at 0.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p outside [0,1]")
    h = spec.bandwidth
    if not h > 0.0:
        raise ValueError("bandwidth must be positive")
    if spec.boundary == "reflect":
        if state is None:
            state = reflection_state(alpha, spec.transform, h)
        out = _reflected_parts(alpha, state, spec.transform, h, p, deriv=True)
    else:
        if not math.isfinite(float(spec.transform.psi(p))):
            return 0.0
        if spec.boundary == "kernel":
            w = boundary_weights_general(p, h, spec.transform, spec.kernel)
        else:
            w = (1.0, 0.0)
        out = _lambda_deriv_sum(alpha, spec.kernel, spec.transform, h, p, w)
    if clamp:
        out = max(out, 0.0)
    return float(out)


def monotonize_cummax(f, grid_size: int = 2001) -> MonotoneStepFn:
    """Running maximum of f on an equispaced grid, as a step function.

    Idempotent; equals the input at the grid wherever the input is
    already nondecreasing.
    """
    g = np.linspace(0.0, 1.0, grid_size)
    try:
        vals = np.asarray(f(g), dtype=float)
        if vals.shape != g.shape:
            raise ValueError
    except (TypeError, ValueError):
        vals = np.array([float(f(x)) for x in g])
    return MonotoneStepFn(g, np.maximum.accumulate(vals))


def jackknife_alpha(sample: MaxRivalSample, variant: str, p: float,
                    h: float | None = None,
                    kernel: KernelSpec | None = None) -> float:
    """Jackknife estimate of alpha(p) from leave-one-out payment fits.

    'breve' combines the jackknife spread of e_T(1) - e_T(p) across
    leave-one-out isotonic fits, scaled by 1/(p(1-p)), with the plug-in
    e_T(p)/p. 'hat' uses the smoothed payment derivative instead, with
    spread scale h/kappa2 and plug-in e_hat(p)/p. Both return 0 at the
    endpoints by convention. Not guaranteed monotone in p.
    """
    if variant not in ("breve", "hat"):
        raise ValueError("variant must be 'breve' or 'hat'")
    if p <= 0.0 or p >= 1.0:
        return 0.0
    T = sample.T
    values = sample.values
    full = solve_ls_max_rival(sample)
    if variant == "breve":
        e1 = full.payment(1.0)
        ep = full.payment(p)
        ssq = 0.0
        for t in range(T):
            loo = solve_ls_max_rival(MaxRivalSample(np.delete(values, t)))
            d = e1 - ep - loo.payment(1.0) + loo.payment(p)
            ssq += d * d
        return float(math.sqrt((T - 1) * ssq / (p * (1.0 - p))) + ep / p)
    kernel = kernel or kernel_epanechnikov()
    if h is None:
        h = T ** (-1.0 / 3.0)
    a_full = _smooth_payment_deriv(full.payment, p, h, kernel)
    ep = smooth_payment(full.payment, p, h, kernel)
    ssq = 0.0
    for t in range(T):
        loo = solve_ls_max_rival(MaxRivalSample(np.delete(values, t)))
        d = a_full - _smooth_payment_deriv(loo.payment, p, h, kernel)
        ssq += d * d
    return float(math.sqrt(h * (T - 1) * ssq / kernel.kappa2) + ep / p)
