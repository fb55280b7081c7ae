import numpy as np
import pytest
from scipy.integrate import quad

from auctionshape.core import MaxRivalSample, MonotoneStepFn, empirical_quantile_fn
from auctionshape.winprob import fp_atoms, fp_empirical, fp_min_entropy, fp_symmetric


def empirical_from_samples(own, rival):
    return fp_empirical(own, empirical_quantile_fn(MaxRivalSample(np.sort(rival))))


# ---------------------------------------------------------------- symmetric


def test_symmetric_two_bidders_unit_density():
    fp = fp_symmetric(2)
    p = np.linspace(0.0, 1.0, 11)
    assert np.allclose(fp.F(p), p)
    assert np.allclose(fp.f(p), 1.0)
    assert np.allclose(fp.Q(p), p)


def test_symmetric_three_bidders_plugin():
    fp = fp_symmetric(3)
    assert fp.F(0.25) == pytest.approx(0.5, abs=1e-15)
    assert fp.f(0.25) == pytest.approx(1.0, abs=1e-15)


def test_symmetric_density_integrates_to_one():
    for n in range(2, 7):
        fp = fp_symmetric(n)
        total, _ = quad(lambda p: float(fp.f(p)), 0.0, 1.0)
        assert total == pytest.approx(1.0, abs=1e-8)


def test_symmetric_density_derivatives_match_finite_differences():
    for n in (3, 4, 5):
        fp = fp_symmetric(n)
        for p in (0.2, 0.5, 0.8):
            d = 1e-5
            fd1 = (fp.f(p + d) - fp.f(p - d)) / (2 * d)
            fd2 = (fp.f(p + d) - 2 * fp.f(p) + fp.f(p - d)) / d**2
            assert fp.fprime(p) == pytest.approx(fd1, rel=1e-6)
            assert fp.fdblprime(p) == pytest.approx(fd2, rel=1e-4)


def test_symmetric_three_bidders_derivative_plugin():
    # f' = (2-n)/(n-1)^2 F^{3-2n}, f'' = (2-n)(3-2n)/(n-1)^3 F^{4-3n}
    fp = fp_symmetric(3)
    assert fp.fprime(0.25) == pytest.approx(-0.25 * 0.5**-3, abs=1e-12)
    assert fp.fdblprime(0.25) == pytest.approx(0.375 * 0.5**-5, abs=1e-12)


def test_symmetric_two_bidders_derivatives_vanish():
    fp = fp_symmetric(2)
    p = np.linspace(0.0, 1.0, 21)
    assert np.all(fp.fprime(p) == 0.0)
    assert np.all(fp.fdblprime(p) == 0.0)


def test_symmetric_density_unbounded_at_zero_for_three_bidders():
    fp = fp_symmetric(3)
    assert np.isinf(fp.f(0.0))


def test_symmetric_quantile_roundtrip():
    for n in (2, 3, 5):
        fp = fp_symmetric(n)
        tau = np.linspace(0.0, 1.0, 17)
        assert np.allclose(fp.F(fp.Q(tau)), tau, atol=1e-12)


def test_symmetric_rejects_small_n():
    with pytest.raises(ValueError):
        fp_symmetric(1)


# ---------------------------------------------------------------- empirical


def test_empirical_self_composition():
    rng = np.random.default_rng(11)
    T = 40
    bids = np.sort(rng.uniform(0.1, 2.0, T))
    fp = empirical_from_samples(bids, bids)
    t = np.arange(1, T + 1) / T
    assert np.allclose(fp.F(t), t, atol=1e-12)
    assert fp.F(1.0) == pytest.approx(1.0)
    assert fp.F(0.0) == 0.0


def test_empirical_own_bids_below_rival_min():
    rng = np.random.default_rng(12)
    rival = rng.uniform(1.0, 2.0, 25)
    own = rng.uniform(0.0, 0.5, 25)
    fp = empirical_from_samples(own, rival)
    p = np.linspace(0.02, 1.0, 50)
    assert np.all(fp.F(p) == 1.0)


def test_empirical_monotone_and_in_range():
    rng = np.random.default_rng(13)
    for _ in range(5):
        own = rng.uniform(0.0, 1.5, rng.integers(3, 40))
        rival = rng.uniform(0.0, 1.5, rng.integers(3, 40))
        fp = empirical_from_samples(own, rival)
        vals = fp.F(np.linspace(0.0, 1.0, 101))
        assert np.all(np.diff(vals) >= 0)
        assert np.all((vals >= 0) & (vals <= 1))
        assert vals[-1] == 1.0


def test_empirical_matches_brute_force_composition():
    rng = np.random.default_rng(14)
    own = rng.uniform(0.0, 1.2, 23)
    rival = np.sort(rng.uniform(0.0, 1.2, 31))
    qc = empirical_quantile_fn(MaxRivalSample(rival))
    fp = fp_empirical(own, qc)
    Tr = rival.size
    for p in rng.uniform(1e-6, 1.0, 200):
        p = float(p)
        # the top piece carries the forced unit level (bids above the
        # rival maximum win with probability one)
        direct = float(np.mean(own <= qc(p))) if p <= (Tr - 1) / Tr else 1.0
        assert fp.F(p) == pytest.approx(direct, abs=1e-12)
    assert fp.F(1.0) == 1.0


def test_empirical_atoms_sum_to_one():
    rng = np.random.default_rng(15)
    own = rng.uniform(0.0, 1.0, 17)
    rival = rng.uniform(0.0, 1.0, 29)
    fp = empirical_from_samples(own, rival)
    locs, wts = fp_atoms(fp)
    assert np.sum(wts) == pytest.approx(1.0, abs=1e-12)
    assert np.all((locs > 0) & (locs <= 1))
    assert np.all(wts > 0)


def test_empirical_quantile_is_atom_rule():
    rng = np.random.default_rng(16)
    T = 30
    bids = np.sort(rng.uniform(0.0, 1.0, T))
    fp = empirical_from_samples(bids, bids)
    # atoms at t/T with weight 1/T: Q(tau) = ceil(tau T)/T
    for tau in rng.uniform(0.001, 1.0, 100):
        assert fp.Q(float(tau)) == pytest.approx(np.ceil(tau * T - 1e-9) / T, abs=1e-12)
    assert fp.Q(1.0) == pytest.approx(1.0)


def test_empirical_empty_input_raises():
    rival = empirical_quantile_fn(MaxRivalSample(np.array([0.3, 0.7])))
    with pytest.raises(ValueError):
        fp_empirical(np.array([]), rival)


# -------------------------------------------------------------- min entropy


def test_min_entropy_zero_degree_recovers_symmetric_reference():
    rng = np.random.default_rng(21)
    for n in (2, 3, 4):
        own = rng.uniform(0.0, 1.0, 50)
        rival = rng.uniform(0.0, 1.0, 50)
        fp = fp_min_entropy(empirical_from_samples(own, rival), n=n, degree=0)
        assert fp.mu.shape == (1,)
        assert fp.mu[0] == pytest.approx(-np.log(n - 1), abs=1e-10)
        ref = fp_symmetric(n)
        p = np.linspace(0.05, 1.0, 30)
        assert np.allclose(fp.f(p), ref.f(p), rtol=1e-9)


def test_min_entropy_moments_match():
    rng = np.random.default_rng(22)
    for n in (2, 3):
        own = rng.uniform(0.0, 1.0, 40)
        rival = rng.uniform(0.0, 1.0, 60)
        emp = empirical_from_samples(own, rival)
        fp = fp_min_entropy(emp, n=n, degree=2)
        locs, wts = fp_atoms(emp)
        u, wu = np.polynomial.legendre.leggauss(400)
        u = 0.5 * (u + 1)
        wu = 0.5 * wu
        dens_u = fp.f(u ** (n - 1)) * (n - 1) * u ** (n - 2) if n > 2 else fp.f(u)
        for j in range(3):
            model_moment = np.sum(wu * dens_u * u ** ((n - 1) * j))
            target = np.sum(wts * locs**j)
            assert model_moment == pytest.approx(target, abs=1e-8)


def test_min_entropy_density_positive_and_unit_mass():
    rng = np.random.default_rng(23)
    own = rng.uniform(0.0, 2.0, 64)
    rival = rng.uniform(0.0, 2.0, 64)
    for n in (2, 3):
        fp = fp_min_entropy(empirical_from_samples(own, rival), n=n)
        grid = np.linspace(1e-6, 1.0, 200)
        assert np.all(fp.f(grid) > 0)
        total, _ = quad(lambda p: float(fp.f(p)), 0.0, 1.0, limit=200)
        assert total == pytest.approx(1.0, abs=1e-8)
        assert fp.F(1.0) == pytest.approx(1.0, abs=1e-8)


def test_min_entropy_degree_one_matches_dual_grid_search():
    # rival quantile jumping at p = 0.2 and p = 1 with own bids at the two
    # jump values puts atoms of weight 1/2 at 0.2 and 1.0: first moment 0.6
    qc = MonotoneStepFn(np.array([0.2, 1.0]), np.array([0.4, 0.9]))
    emp = fp_empirical(np.array([0.4, 0.9]), qc)
    locs, wts = fp_atoms(emp)
    assert np.allclose(locs, [0.2, 1.0]) and np.allclose(wts, [0.5, 0.5])
    fp = fp_min_entropy(emp, n=2, degree=1)
    u, wu = np.polynomial.legendre.leggauss(200)
    u = 0.5 * (u + 1)
    wu = 0.5 * wu
    target = np.array([1.0, 0.6])

    def dual(m0, m1):
        dens = np.exp(m0 + m1 * u)
        return np.sum(wu * dens) - m0 * target[0] - m1 * target[1]

    lo = np.array([-6.0, -6.0])
    hi = np.array([6.0, 6.0])
    best = None
    for _ in range(8):
        g0 = np.linspace(lo[0], hi[0], 41)
        g1 = np.linspace(lo[1], hi[1], 41)
        vals = np.array([[dual(a, b) for b in g1] for a in g0])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        best = np.array([g0[i], g1[j]])
        span0 = (g0[1] - g0[0]) * 2
        span1 = (g1[1] - g1[0]) * 2
        lo = best - np.array([span0, span1])
        hi = best + np.array([span0, span1])
    assert np.max(np.abs(fp.mu - best)) < 1e-6


def test_min_entropy_density_derivative_matches_finite_differences():
    rng = np.random.default_rng(24)
    own = rng.uniform(0.0, 1.0, 30)
    rival = rng.uniform(0.0, 1.0, 30)
    for n in (2, 3):
        fp = fp_min_entropy(empirical_from_samples(own, rival), n=n, degree=2)
        for p in (0.3, 0.6, 0.9):
            d = 1e-6
            fd = (fp.f(p + d) - fp.f(p - d)) / (2 * d)
            assert fp.fprime(p) == pytest.approx(fd, rel=1e-5)


def test_min_entropy_quantile_inverts_cdf():
    rng = np.random.default_rng(25)
    own = rng.uniform(0.0, 1.0, 20)
    rival = rng.uniform(0.0, 1.0, 20)
    fp = fp_min_entropy(empirical_from_samples(own, rival), n=2, degree=1)
    for tau in (0.1, 0.5, 0.9):
        assert fp.F(fp.Q(tau)) == pytest.approx(tau, abs=1e-9)


def test_min_entropy_default_degree_cap():
    rng = np.random.default_rng(26)
    own = rng.uniform(0.0, 1.0, 1500)
    rival = rng.uniform(0.0, 1.0, 1500)
    fp = fp_min_entropy(empirical_from_samples(own, rival), n=2)
    assert fp.degree == 8  # ceil(1500^(1/3)) = 12, capped


def test_min_entropy_infeasible_moments_error():
    # all mass at p=1: the mean constraint is only attainable in the limit
    emp = fp_empirical(np.array([0.4]), MonotoneStepFn(np.array([1.0]), np.array([0.5])))
    locs, wts = fp_atoms(emp)
    assert np.allclose(locs, [1.0]) and np.allclose(wts, [1.0])
    with pytest.raises(RuntimeError, match="residual"):
        fp_min_entropy(emp, n=2, degree=1)
