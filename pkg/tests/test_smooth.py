import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from auctionshape.core import MaxRivalSample, MonotoneStepFn, step_pieces
from auctionshape.isotonic_ls import solve_ls_max_rival
from auctionshape.smooth import (
    KernelSpec,
    ReflectionState,
    SmoothSpec,
    Transform,
    alpha_derivative,
    boundary_weights,
    boundary_weights_general,
    estimate_d,
    jackknife_alpha,
    kernel_epanechnikov,
    kernel_gaussian,
    monotonize_cummax,
    normalize_at_one,
    reflect_extend,
    reflection_state,
    smooth_alpha,
    smooth_alpha_reflected,
    smooth_payment,
    transform_custom,
    transform_fifthroot,
    transform_from_pilot,
    transform_identity,
    transform_log,
    transform_sqrt,
)
from auctionshape.smooth import _inv_psi, _smooth_payment_deriv


def random_step(rng, n_knots=6, lo=0.5, hi=3.0):
    knots = np.sort(rng.uniform(0.05, 1.0, n_knots))
    knots[-1] = 1.0
    levels = np.sort(rng.uniform(lo, hi, n_knots))
    return MonotoneStepFn(knots, levels)


# ---------------------------------------------------------------- kernels


@pytest.mark.parametrize("maker", [kernel_epanechnikov, kernel_gaussian])
def test_kernel_antiderivatives_match_quadrature(maker):
    ker = maker()
    lim = ker.radius if ker.compact else 10.0
    for s in [-0.9, -0.3, 0.2, 0.77, 1.0]:
        kint, _ = quad(lambda u: float(ker.k(u)), -lim, s)
        jint, _ = quad(lambda u: u * float(ker.k(u)), -lim, s)
        assert abs(float(ker.K(s)) - kint) < 1e-10
        assert abs(float(ker.J(s)) - jint) < 1e-10


@pytest.mark.parametrize("maker", [kernel_epanechnikov, kernel_gaussian])
def test_kernel_constants_match_quadrature(maker):
    ker = maker()
    lim = ker.radius if ker.compact else 12.0
    mass, _ = quad(lambda u: float(ker.k(u)), -lim, lim)
    var, _ = quad(lambda u: u * u * float(ker.k(u)), -lim, lim)
    k2, _ = quad(lambda u: float(ker.k(u)) ** 2, -lim, lim)
    k2d, _ = quad(lambda u: float(ker.kprime(u)) ** 2, -lim, lim)
    assert abs(mass - 1.0) < 1e-12
    assert abs(var - ker.sigma2) < 1e-12
    assert abs(k2 - ker.kappa2) < 1e-12
    assert abs(k2d - ker.kappa2_deriv) < 1e-12


@pytest.mark.parametrize("maker", [kernel_epanechnikov, kernel_gaussian])
def test_kernel_truncated_moments_match_quadrature(maker):
    ker = maker()
    lim = ker.radius if ker.compact else 12.0
    rng = np.random.default_rng(7)
    for _ in range(12):
        a, b = np.sort(rng.uniform(-1.6, 1.6, 2))
        m = ker.moments(a, b)
        for j in range(3):
            ref, _ = quad(lambda u, j=j: u ** j * float(ker.k(u)),
                          max(a, -lim), min(b, lim))
            assert abs(m[j] - ref) < 1e-12
    m = ker.moments(-math.inf, 0.4)
    for j in range(3):
        ref, _ = quad(lambda u, j=j: u ** j * float(ker.k(u)), -lim, 0.4)
        assert abs(m[j] - ref) < 1e-10


def test_kernel_derivative_matches_finite_differences():
    for ker in (kernel_epanechnikov(), kernel_gaussian()):
        for s in [-0.8, -0.2, 0.3, 0.9]:
            fd = (float(ker.k(s + 1e-6)) - float(ker.k(s - 1e-6))) / 2e-6
            assert abs(float(ker.kprime(s)) - fd) < 1e-8


# ------------------------------------------------------------- transforms


def test_transform_derivatives_by_finite_differences():
    makers = [transform_identity, transform_log, transform_sqrt, transform_fifthroot]
    for maker in makers:
        tr = maker()
        for p in [0.2, 0.5, 0.9]:
            d = 1e-6
            fd1 = (float(tr.psi(p + d)) - float(tr.psi(p - d))) / (2 * d)
            fd2 = (float(tr.dpsi(p + d)) - float(tr.dpsi(p - d))) / (2 * d)
            fd3 = (float(tr.d2psi(p + d)) - float(tr.d2psi(p - d))) / (2 * d)
            assert abs(fd1 - float(tr.dpsi(p))) < 1e-5 * max(1, abs(fd1))
            assert abs(fd2 - float(tr.d2psi(p))) < 1e-4 * max(1, abs(fd2))
            assert abs(fd3 - float(tr.d3psi(p))) < 1e-3 * max(1, abs(fd3))


def test_transform_from_pilot_monotone_and_extended():
    tr = transform_from_pilot(lambda p: p ** 2)
    g = np.linspace(0.0, 1.0, 501)
    vals = np.asarray(tr.psi(g))
    assert np.all(np.diff(vals) > 0)
    assert abs(float(tr.psi(0.5)) - 0.25) < 1e-6
    assert float(tr.psi(1.1)) > float(tr.psi(1.0))
    assert float(tr.psi(-0.1)) < float(tr.psi(0.0))
    assert np.all(np.asarray(tr.dpsi(g)) > 0)

    wiggly = transform_from_pilot(lambda p: p + 0.3 * np.sin(8 * np.pi * p))
    vals = np.asarray(wiggly.psi(g))
    assert np.all(np.diff(vals) > 0)


def test_normalize_at_one():
    tr = normalize_at_one(transform_sqrt())
    assert abs(float(tr.psi(1.0))) < 1e-15
    assert abs(float(tr.dpsi(1.0)) - 1.0) < 1e-15
    # affine rescale keeps ratios of derivatives
    base = transform_sqrt()
    assert abs(float(tr.d2psi(0.7)) / float(tr.dpsi(0.7))
               - float(base.d2psi(0.7)) / float(base.dpsi(0.7))) < 1e-12
    bad = transform_custom("dec", lambda p: -np.asarray(p, float),
                           lambda p: -np.ones_like(np.asarray(p, float)))
    with pytest.raises(ValueError):
        normalize_at_one(bad)


def test_smooth_spec_validation():
    ker = kernel_epanechnikov()
    tr = transform_identity()
    spec = SmoothSpec(ker, tr, 0.1, boundary="boundary_kernel")
    assert spec.boundary == "kernel"
    spec = SmoothSpec(ker, tr, 0.1, boundary="reflection")
    assert spec.boundary == "reflect"
    with pytest.raises(ValueError):
        SmoothSpec(ker, tr, -0.1)
    with pytest.raises(ValueError):
        SmoothSpec(ker, tr, 0.1, boundary="mirror")
    with pytest.raises(ValueError):
        SmoothSpec(ker, tr, 0.1, placement="outside")


# ------------------------------------------------------- boundary weights


def test_boundary_weights_epanechnikov_at_one():
    # window [-1, 0]: m0 = 1/2, m1 = -3/16, m2 = 1/10
    ker = kernel_epanechnikov()
    m0, m1, m2 = ker.moments(-1.0, 0.0)
    assert abs(m0 - 0.5) < 1e-15
    assert abs(m1 + 3.0 / 16.0) < 1e-15
    assert abs(m2 - 0.1) < 1e-15
    det = m0 * m2 - m1 * m1
    assert abs(det - 0.01484375) < 1e-12
    for h in (0.5, 1.0):
        w1, w2 = boundary_weights_general(1.0, h, transform_identity(), ker)
        assert abs(w1 - m2 / det) < 1e-12
        assert abs(w2 + m1 / det) < 1e-12
        assert w1 == pytest.approx(6.7368421052631575, rel=1e-9)
        assert w2 == pytest.approx(12.631578947368421, rel=1e-9)


def test_boundary_weights_gaussian_sign_at_one():
    # half-line window at the right edge: omega_2 = +phi-type positive value
    w1, w2 = boundary_weights(1.0, 0.05, transform_identity())
    assert w1 > 1.0
    assert w2 > 0.0
    w1l, w2l = boundary_weights(0.0, 0.05, transform_identity())
    assert abs(w1l - w1) < 1e-9
    assert abs(w2l + w2) < 1e-9


@pytest.mark.parametrize("maker", [kernel_epanechnikov, kernel_gaussian])
def test_boundary_weights_restore_moments(maker):
    ker = maker()
    lim = ker.radius if ker.compact else 12.0
    rng = np.random.default_rng(3)
    transforms = [transform_identity(), transform_sqrt(), transform_log()]
    for _ in range(20):
        p = float(rng.uniform(0.0, 1.0))
        h = float(rng.uniform(0.05, 0.6))
        tr = transforms[rng.integers(len(transforms))]
        if tr.name == "log" and p == 0.0:
            continue
        w1, w2 = boundary_weights_general(p, h, tr, ker)
        psip = float(tr.psi(p))
        ub = (float(tr.psi(1.0)) - psip) / h
        lo = float(tr.psi(0.0))
        ul = (lo - psip) / h if math.isfinite(lo) else -math.inf
        # the estimator feeds arguments (psi(p) - psi(s))/h, s in [0, 1]
        a = max(-ub, -lim)
        b = min(-ul, lim) if math.isfinite(ul) else lim
        mass, _ = quad(lambda s: (w1 - w2 * s) * float(ker.k(s)), a, b)
        first, _ = quad(lambda s: s * (w1 - w2 * s) * float(ker.k(s)), a, b)
        assert abs(mass - 1.0) < 1e-9
        assert abs(first) < 1e-9


def test_boundary_weights_interior_are_unit():
    w1, w2 = boundary_weights_general(0.5, 0.1, transform_identity(),
                                      kernel_epanechnikov())
    assert w1 == pytest.approx(1.0, abs=1e-14)
    assert w2 == pytest.approx(0.0, abs=1e-14)


def test_boundary_weights_errors():
    with pytest.raises(ValueError):
        boundary_weights(0.5, 0.0, transform_identity())
    with pytest.raises(ValueError, match="degenerate"):
        boundary_weights(0.0, 0.1, transform_log())


# ------------------------------------------------------------ smoothing


def test_smooth_alpha_zero_bandwidth_passthrough():
    alpha = MonotoneStepFn([0.4, 1.0], [1.0, 2.0])
    for placement in ("psi_prime_inside", "psi_prime_outside"):
        spec = SmoothSpec(kernel_epanechnikov(), transform_sqrt(), 0.0,
                          placement=placement)
        for p in (0.0, 0.4, 0.41, 1.0):
            assert smooth_alpha(alpha, spec, p) == alpha(p)


def test_smooth_alpha_constant_reproduction():
    const = MonotoneStepFn([1.0], [1.7])
    transforms = [transform_identity(), transform_sqrt(), transform_log(),
                  transform_fifthroot()]
    for ker in (kernel_epanechnikov(), kernel_gaussian()):
        for tr in transforms:
            spec = SmoothSpec(ker, tr, 0.25, boundary="kernel")
            for p in (0.0, 0.1, 0.5, 0.9, 1.0):
                assert smooth_alpha(const, spec, p) == pytest.approx(1.7, abs=1e-9)
    # outside placement with identity transform is also exact in the interior
    spec = SmoothSpec(kernel_epanechnikov(), transform_identity(), 0.2,
                      boundary="kernel", placement="psi_prime_outside")
    for p in (0.0, 0.3, 1.0):
        assert smooth_alpha(const, spec, p) == pytest.approx(1.7, abs=1e-8)


def test_smooth_alpha_midpoint_average_at_jump():
    alpha = MonotoneStepFn([0.5, 1.0], [1.0, 3.0])
    spec = SmoothSpec(kernel_epanechnikov(), transform_identity(), 0.2)
    assert smooth_alpha(alpha, spec, 0.5) == pytest.approx(2.0, abs=1e-13)


@pytest.mark.parametrize("maker", [kernel_epanechnikov, kernel_gaussian])
@pytest.mark.parametrize("placement", ["psi_prime_inside", "psi_prime_outside"])
def test_smooth_alpha_matches_quadrature(maker, placement):
    ker = maker()
    rng = np.random.default_rng(11)
    transforms = [transform_identity(), transform_sqrt(), transform_log()]
    for trial in range(10):
        alpha = random_step(rng)
        tr = transforms[trial % len(transforms)]
        h = float(rng.uniform(0.08, 0.3))
        boundary = "kernel" if trial % 2 == 0 else "none"
        p = float(rng.uniform(0.05, 1.0))
        spec = SmoothSpec(ker, tr, h, boundary=boundary, placement=placement)
        got = smooth_alpha(alpha, spec, p)
        if boundary == "kernel":
            w1, w2 = boundary_weights_general(p, h, tr, ker)
        else:
            w1, w2 = 1.0, 0.0
        psip = float(tr.psi(p))
        lim = ker.radius if ker.compact else 10.0
        lo_s = _inv_psi(tr, psip - h * lim, 0.0, 1.0)
        hi_s = _inv_psi(tr, psip + h * lim, 0.0, 1.0)
        knots = [x for x in np.asarray(alpha.knots) if lo_s < x < hi_s]
        knots.append(min(max(p, lo_s), hi_s))

        def integrand(s):
            u = (psip - float(tr.psi(s))) / h
            kv = (w1 - w2 * u) * float(ker.k(u))
            scale = float(tr.dpsi(s if placement == "psi_prime_inside" else p))
            return float(alpha(min(s, 1.0))) * kv * scale / h

        ref, _ = quad(integrand, lo_s, hi_s, points=sorted(set(knots)), limit=200)
        assert got == pytest.approx(ref, abs=2e-8)


def test_smooth_alpha_interior_equals_uncorrected():
    alpha = MonotoneStepFn([0.45, 0.55, 1.0], [1.0, 2.0, 2.5])
    plain = SmoothSpec(kernel_epanechnikov(), transform_identity(), 0.1)
    corrected = SmoothSpec(kernel_epanechnikov(), transform_identity(), 0.1,
                           boundary="kernel")
    assert smooth_alpha(alpha, plain, 0.5) == pytest.approx(
        smooth_alpha(alpha, corrected, 0.5), abs=1e-12)


def test_smooth_alpha_rejects_reflect_boundary():
    alpha = MonotoneStepFn([1.0], [1.0])
    spec = SmoothSpec(kernel_epanechnikov(), transform_identity(), 0.1,
                      boundary="reflect")
    with pytest.raises(ValueError):
        smooth_alpha(alpha, spec, 0.5)


def test_smooth_payment_matches_quadrature_and_derivative():
    rng = np.random.default_rng(5)
    sample = MaxRivalSample(rng.uniform(0.2, 1.0, 40))
    fit = solve_ls_max_rival(sample)
    ker = kernel_epanechnikov()
    for p in (0.3, 0.62, 0.9):
        h = 0.11
        got = smooth_payment(fit.payment, p, h, ker)
        pts = [x for x in np.asarray(fit.payment.x) if 0.0 < x < 1.0]
        ref, _ = quad(lambda x: float(fit.payment(x)) * float(ker.k((p - x) / h)) / h,
                      0.0, 1.0, points=pts, limit=200)
        assert got == pytest.approx(ref, abs=1e-10)
        d = 1e-6
        fd = (smooth_payment(fit.payment, p + d, h, ker)
              - smooth_payment(fit.payment, p - d, h, ker)) / (2 * d)
        assert _smooth_payment_deriv(fit.payment, p, h, ker) == pytest.approx(
            fd, abs=1e-7)


# ------------------------------------------------------------ estimate_d


def test_estimate_d_linear_levels():
    # alpha close to 2 + 3p: d_right = 3/5, d_left = 3/2
    alpha = monotonize_cummax(lambda p: 2.0 + 3.0 * np.asarray(p, float))
    assert estimate_d(alpha, "right", 0.3) == pytest.approx(0.6, abs=5e-3)
    assert estimate_d(alpha, "left", 0.3) == pytest.approx(1.5, abs=5e-3)


def test_estimate_d_constant_is_zero():
    alpha = MonotoneStepFn([1.0], [2.2])
    assert estimate_d(alpha, "right", 0.4) == 0.0
    assert estimate_d(alpha, "left", 0.4) == 0.0


def test_estimate_d_matches_dense_least_squares():
    rng = np.random.default_rng(9)
    alpha = random_step(rng)
    h_d = 0.37
    for side, edge in (("right", 1.0), ("left", 0.0)):
        lo, hi = (1.0 - h_d, 1.0) if side == "right" else (0.0, h_d)
        s = np.linspace(lo, hi, 200001)
        mid = 0.5 * (s[:-1] + s[1:])
        vals = np.asarray(alpha(mid))
        X = np.column_stack([np.ones_like(mid), mid])
        coef, *_ = np.linalg.lstsq(X, vals, rcond=None)
        ref = coef[1] / (coef[0] + coef[1] * edge)
        assert estimate_d(alpha, side, h_d) == pytest.approx(ref, abs=1e-4)


def test_estimate_d_errors():
    alpha = MonotoneStepFn([1.0], [1.0])
    with pytest.raises(ValueError, match="window too narrow"):
        estimate_d(alpha, "right", 0.0)
    with pytest.raises(ValueError, match="side"):
        estimate_d(alpha, "middle", 0.1)
    zero = MonotoneStepFn([1.0], [0.0])
    with pytest.raises(ValueError, match="boundary level not positive"):
        estimate_d(zero, "right", 0.2)


# ------------------------------------------------------------ reflection


def stencil_first(f, x, d, forward=True):
    s = 1.0 if forward else -1.0
    return s * (-3 * f(x) + 4 * f(x + s * d) - f(x + 2 * s * d)) / (2 * d)


def stencil_second(f, x, d, forward=True):
    s = 1.0 if forward else -1.0
    return (2 * f(x) - 5 * f(x + s * d) + 4 * f(x + 2 * s * d)
            - f(x + 3 * s * d)) / (d * d)


def test_reflect_extend_right_pasting_identity():
    # alpha = 2 + p, identity transform: d = 1/3
    alpha = lambda p: 2.0 + np.asarray(p, float)
    d = 1.0 / 3.0
    state = ReflectionState(d_hat_right=d, rho=(1.0, d, d * d))
    tr = transform_identity()
    F = lambda t: (float(alpha(t)) if t <= 1.0
                   else reflect_extend(alpha, state, tr, t - 1.0))
    delta = 1e-3
    assert abs(F(1.0 + 1e-15) - 3.0) < 1e-12
    left1 = stencil_first(F, 1.0, delta, forward=False)
    right1 = stencil_first(F, 1.0, delta, forward=True)
    assert abs(left1 - right1) < 1e-4
    left2 = stencil_second(F, 1.0, delta, forward=False)
    right2 = stencil_second(F, 1.0, delta, forward=True)
    assert abs(left2 - right2) < 1e-4


def test_reflect_extend_right_pasting_sqrt_transform():
    # curved transform: c3 = d^2 - (psi''(1)/psi'(1)) d / 6 = d^2 + d/12
    alpha = lambda p: 2.0 + np.asarray(p, float)
    d = 1.0 / 3.0
    state = ReflectionState(d_hat_right=d, rho=(1.0, d, d * d + d / 12.0))
    tr = transform_sqrt()
    F = lambda t: (float(alpha(t)) if t <= 1.0
                   else reflect_extend(alpha, state, tr, t - 1.0))
    delta = 1e-3
    assert abs(F(1.0 + 1e-15) - 3.0) < 1e-12
    assert abs(stencil_first(F, 1.0, delta, False)
               - stencil_first(F, 1.0, delta, True)) < 1e-4
    assert abs(stencil_second(F, 1.0, delta, False)
               - stencil_second(F, 1.0, delta, True)) < 1e-4


def test_reflect_extend_left_pasting_identity():
    # alpha = 2 + p at the left edge: d0 = 1/2, rho0 = u - d0 u^2 + d0^2 u^3
    alpha = lambda p: 2.0 + np.asarray(p, float)
    d0 = 0.5
    state = ReflectionState(d_hat_right=0.0, rho=(1.0, 0.0, 0.0),
                            d_hat_left=d0, rho0=(1.0, -d0, d0 * d0))
    tr = transform_identity()
    F = lambda t: (float(alpha(t)) if t >= 0.0
                   else reflect_extend(alpha, state, tr, t))
    delta = 1e-3
    assert abs(F(-1e-15) - 2.0) < 1e-12
    assert abs(stencil_first(F, 0.0, delta, True)
               - stencil_first(F, 0.0, delta, False)) < 1e-4
    assert abs(stencil_second(F, 0.0, delta, True)
               - stencil_second(F, 0.0, delta, False)) < 1e-4


def test_reflect_extend_left_pasting_curved_transform():
    # psi = p + p^2/2 exercises the analytic evaluation of psi below 0;
    # a linear continuation of psi would miss the curvature term here
    alpha = lambda p: 3.0 + np.asarray(p, float)
    tr = transform_custom(
        "quad",
        lambda p: np.asarray(p, float) + 0.5 * np.asarray(p, float) ** 2,
        lambda p: 1.0 + np.asarray(p, float),
        lambda p: np.ones_like(np.asarray(p, float)),
        lambda p: np.zeros_like(np.asarray(p, float)),
    )
    d0 = 1.0 / 3.0
    c3 = d0 * d0 - d0 * 1.0 / 6.0
    state = ReflectionState(d_hat_right=0.0, rho=(1.0, 0.0, 0.0),
                            d_hat_left=d0, rho0=(1.0, -d0, c3))
    F = lambda t: (float(alpha(t)) if t >= 0.0
                   else reflect_extend(alpha, state, tr, t))
    delta = 1e-3
    assert abs(F(-1e-15) - 3.0) < 1e-12
    assert abs(stencil_first(F, 0.0, delta, True)
               - stencil_first(F, 0.0, delta, False)) < 1e-4
    assert abs(stencil_second(F, 0.0, delta, True)
               - stencil_second(F, 0.0, delta, False)) < 1e-4


def test_reflect_extend_even_reflection_when_flat():
    # alpha'(1) = 0 gives rho(q) = q: plain even reflection
    alpha = lambda p: 4.0 + (1.0 - np.asarray(p, float)) ** 2
    state = ReflectionState(d_hat_right=0.0, rho=(1.0, 0.0, 0.0))
    tr = transform_identity()
    for s in (0.01, 0.1, 0.3):
        assert reflect_extend(alpha, state, tr, s) == pytest.approx(
            float(alpha(1.0 - s)), abs=1e-14)


def test_reflect_extend_left_requires_rho0():
    state = ReflectionState(d_hat_right=0.1, rho=(1.0, 0.1, 0.01))
    with pytest.raises(ValueError, match="left reflection unavailable"):
        reflect_extend(lambda p: 1.0, state, transform_identity(), -0.05)


def test_reflection_state_from_step_estimates():
    alpha = monotonize_cummax(lambda p: 2.0 + np.asarray(p, float))
    st = reflection_state(alpha, transform_identity(), 0.25)
    assert st.d_hat_right == pytest.approx(1.0 / 3.0, abs=3e-3)
    assert st.d_hat_left == pytest.approx(0.5, abs=3e-3)
    assert st.rho0 is not None
    d = st.d_hat_right
    assert st.rho == pytest.approx((1.0, d, d * d))
    # unbounded curvature at 0: no left extension
    st_log = reflection_state(alpha, transform_log(), 0.25)
    assert st_log.rho0 is None
    st_sqrt = reflection_state(alpha, transform_sqrt(), 0.25)
    assert st_sqrt.rho0 is None
    # zero level at the left edge: no left extension
    flat0 = MonotoneStepFn([0.5, 1.0], [0.0, 1.0])
    st0 = reflection_state(flat0, transform_identity(), 0.25)
    assert st0.rho0 is None


def test_smooth_alpha_reflected_interior_matches_plain():
    rng = np.random.default_rng(21)
    alpha = random_step(rng)
    for tr in (transform_identity(), transform_sqrt()):
        st = reflection_state(alpha, tr, 0.3)
        trn = normalize_at_one(tr)
        spec = SmoothSpec(kernel_epanechnikov(), trn, 0.08)
        got = smooth_alpha_reflected(alpha, st, tr, 0.08, 0.5)
        assert got == pytest.approx(smooth_alpha(alpha, spec, 0.5), abs=1e-12)


def test_smooth_alpha_reflected_constant_reproduction():
    const = MonotoneStepFn([1.0], [1.7])
    for tr in (transform_identity(), transform_sqrt()):
        st = reflection_state(const, tr, 0.3)
        assert abs(st.d_hat_right) < 1e-12
        for p in (0.0, 0.37, 0.9, 1.0):
            got = smooth_alpha_reflected(const, st, tr, 0.15, p)
            assert got == pytest.approx(1.7, abs=1e-9)


def test_smooth_alpha_reflected_matches_quadrature_at_edge():
    rng = np.random.default_rng(31)
    alpha = random_step(rng)
    tr = transform_identity()
    h = 0.17
    st = reflection_state(alpha, tr, 0.3)
    ker = kernel_epanechnikov()
    for p in (1.0, 0.93, 0.02, 0.0):
        got = smooth_alpha_reflected(alpha, st, tr, h, p)

        def at_ext(q):
            if q <= 0.0:
                return float(alpha(min(max(1.0 + q, 0.0), 1.0)))
            c = st.rho
            r = q * (c[0] + q * (c[1] + q * c[2]))
            rp = c[0] + q * (2 * c[1] + q * 3 * c[2])
            return float(alpha(min(max(1.0 - r, 0.0), 1.0))) * rp

        def at_left(q):
            # q below psi(0) = -1 maps through the left cubic
            u = -1.0 - q
            c = st.rho0
            r = u * (c[0] + u * (c[1] + u * c[2]))
            rp = c[0] + u * (2 * c[1] + u * 3 * c[2])
            return float(alpha(min(max(r, 0.0), 1.0))) * rp

        def integrand(q):
            if q < -1.0:
                val = at_left(q)
            else:
                val = at_ext(q)
            return val * float(ker.k((p - 1.0 - q) / h)) / h

        pts = list(np.concatenate([alpha.knots - 1.0, [0.0, -1.0]]))
        # jump locations on the left-extension branch: rho0(u) = knot
        c = st.rho0
        for kx in alpha.knots:
            f = lambda u: u * (c[0] + u * (c[1] + u * c[2])) - kx
            if f(0.0) < 0 < f(0.4):
                pts.append(-1.0 - brentq(f, 0.0, 0.4, xtol=1e-14))
        lo, hi = p - 1.0 - h, p - 1.0 + h
        pts = sorted({q for q in pts if lo < q < hi})
        ref, _ = quad(integrand, lo, hi, points=pts, limit=300)
        assert got == pytest.approx(ref, abs=5e-8)


def test_smooth_alpha_reflected_left_fallback_matches_boundary_kernel():
    # sqrt transform: finite left edge but unusable curvature, so a window
    # touching 0 falls back to the boundary-kernel scheme
    alpha = MonotoneStepFn([0.3, 1.0], [1.0, 2.0])
    tr = transform_sqrt()
    st = reflection_state(alpha, tr, 0.3)
    assert st.rho0 is None
    h = 0.5
    p = 0.02
    trn = normalize_at_one(tr)
    spec = SmoothSpec(kernel_epanechnikov(), trn, h, boundary="kernel")
    assert smooth_alpha_reflected(alpha, st, tr, h, p) == pytest.approx(
        smooth_alpha(alpha, spec, p), abs=1e-12)
    # log transform pushes the left edge to -inf: no window ever touches it
    tr_log = transform_log()
    st_log = reflection_state(alpha, tr_log, 0.3)
    plain = SmoothSpec(kernel_epanechnikov(), normalize_at_one(tr_log), 0.4)
    assert smooth_alpha_reflected(alpha, st_log, tr_log, 0.4, 0.05) == pytest.approx(
        smooth_alpha(alpha, plain, 0.05), abs=1e-12)


# ----------------------------------------------------------- derivatives


def test_alpha_derivative_matches_finite_differences_plain():
    rng = np.random.default_rng(13)
    alpha = random_step(rng)
    for tr in (transform_identity(), transform_sqrt()):
        spec = SmoothSpec(kernel_epanechnikov(), tr, 0.12)
        for p in (0.35, 0.6):
            d = 1e-6
            fd = (smooth_alpha(alpha, spec, p + d)
                  - smooth_alpha(alpha, spec, p - d)) / (2 * d)
            assert alpha_derivative(alpha, spec, p) == pytest.approx(fd, abs=1e-5)


def test_alpha_derivative_boundary_kernel_freezes_weights():
    from auctionshape.smooth import _lambda_sum

    alpha = MonotoneStepFn([0.85, 1.0], [1.0, 2.0])
    ker = kernel_epanechnikov()
    tr = transform_identity()
    h = 0.2
    spec = SmoothSpec(ker, tr, h, boundary="kernel")
    p = 1.0
    w = boundary_weights_general(p, h, tr, ker)
    d = 1e-4
    frozen = lambda t: _lambda_sum(alpha, ker, tr, h, t, w)
    fd = stencil_first(frozen, p, d, forward=False)
    got = alpha_derivative(alpha, spec, p)
    assert got == pytest.approx(fd, abs=1e-4)


def test_alpha_derivative_reflect_matches_finite_differences():
    rng = np.random.default_rng(17)
    alpha = random_step(rng)
    tr = transform_identity()
    h = 0.15
    st = reflection_state(alpha, tr, 0.3)
    spec = SmoothSpec(kernel_epanechnikov(), tr, h, boundary="reflect")
    F = lambda t: smooth_alpha_reflected(alpha, st, tr, h, t)
    for p in (0.5, 0.95):
        d = 1e-5
        fd = (F(p + d) - F(p - d)) / (2 * d)
        assert alpha_derivative(alpha, spec, p, state=st) == pytest.approx(
            fd, abs=1e-4)
    fd = stencil_first(F, 1.0, 1e-4, forward=False)
    assert alpha_derivative(alpha, spec, 1.0, state=st) == pytest.approx(
        fd, abs=1e-4)


def test_alpha_derivative_clamp():
    const = MonotoneStepFn([1.0], [2.0])
    spec = SmoothSpec(kernel_epanechnikov(), transform_identity(), 0.2)
    val = alpha_derivative(const, spec, 0.5, clamp=True)
    assert val == 0.0
    with pytest.raises(ValueError):
        alpha_derivative(const, SmoothSpec(kernel_epanechnikov(),
                                           transform_identity(), 0.0), 0.5)


# ----------------------------------------------------------- monotonize


def test_monotonize_cummax_matches_running_max():
    f = lambda p: np.asarray(p, float) + 0.2 * np.sin(6 * np.pi * np.asarray(p, float))
    step = monotonize_cummax(f, grid_size=801)
    g = np.linspace(0.0, 1.0, 801)
    ref = np.maximum.accumulate(f(g))
    got = np.asarray(step(g))
    assert np.allclose(got, ref, atol=1e-12)
    again = monotonize_cummax(step, grid_size=801)
    assert np.allclose(np.asarray(again(g)), got, atol=0.0)


def test_monotonize_cummax_scalar_only_callable():
    step = monotonize_cummax(lambda p: float(np.round(4 * p)) / 4, grid_size=101)
    assert step(1.0) == 1.0
    assert step(0.0) == 0.0


# ------------------------------------------------------------ jackknife


def test_jackknife_breve_two_point_hand_oracle():
    # full fit: convex minorant through (0,0), (1/2, b1/2), (1, b2), so
    # e(1/2) = b1/2 and e(1) = b2; leave-one-out fits give e'(p) = b p
    b1, b2 = 0.8, 1.4
    sample = MaxRivalSample([b1, b2])
    e1, ep = b2, b1 / 2.0
    d0 = e1 - ep - b2 + b2 / 2.0
    d1 = e1 - ep - b1 + b1 / 2.0
    expect = math.sqrt((d0 * d0 + d1 * d1) / 0.25) + ep / 0.5
    got = jackknife_alpha(sample, "breve", 0.5)
    assert got == pytest.approx(expect, abs=1e-12)


def test_jackknife_endpoints_zero():
    sample = MaxRivalSample([0.5, 0.8, 1.1])
    for variant in ("breve", "hat"):
        assert jackknife_alpha(sample, variant, 0.0) == 0.0
        assert jackknife_alpha(sample, variant, 1.0) == 0.0


def test_jackknife_scale_equivariance():
    rng = np.random.default_rng(23)
    b = rng.uniform(0.1, 1.0, 30)
    c = 3.7
    for variant in ("breve", "hat"):
        base = jackknife_alpha(MaxRivalSample(b), variant, 0.4, h=0.3)
        scaled = jackknife_alpha(MaxRivalSample(c * b), variant, 0.4, h=0.3)
        assert scaled == pytest.approx(c * base, rel=1e-10)


def test_jackknife_variant_validation():
    with pytest.raises(ValueError):
        jackknife_alpha(MaxRivalSample([1.0]), "tilde", 0.5)


@pytest.mark.slow
def test_jackknife_consistency_smoke():
    # two-bidder auctions with uniform values: max-rival bid ~ U(0, 1/2),
    # alpha(1/2) = 1/2; downscaled run, median relative error under 20%
    rng = np.random.default_rng(np.random.Philox(key=[2026, 42]))
    errs_breve = []
    errs_hat = []
    T = 500
    for _ in range(50):
        sample = MaxRivalSample(rng.uniform(0.0, 0.5, T))
        vb = jackknife_alpha(sample, "breve", 0.5)
        vh = jackknife_alpha(sample, "hat", 0.5)
        errs_breve.append(abs(vb - 0.5) / 0.5)
        errs_hat.append(abs(vh - 0.5) / 0.5)
    assert float(np.median(errs_breve)) < 0.2
    assert float(np.median(errs_hat)) < 0.2
