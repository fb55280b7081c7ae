"""Function algebra for auction estimation.

Samples of maximum rival bids, empirical quantile functions, monotone
step functions, piecewise-linear functions, and exact integration of
their products with power weights. Everything here is deterministic
plumbing; the statistics live in the estimator modules.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BidData",
    "BidDataError",
    "MaxRivalSample",
    "MonotoneStepFn",
    "ConvexPwlFn",
    "PwlFn",
    "read_bid_data",
    "step_pieces",
    "empirical_quantile",
    "empirical_quantile_fn",
    "unconstrained_payment",
    "integrate_step",
    "integrate_step_power",
    "integrate_pwl_power",
]


class BidDataError(ValueError):
    """Malformed bid data (bad CSV rows, inconsistent bidder sets)."""


@dataclass(frozen=True)
class MaxRivalSample:
    """Sorted sample of maximum rival bids.

    Parameters
    ----------
    values : ndarray
        Bid values sorted ascending, all finite and nonnegative.
    source : str
        One of ``observed_max``, ``product_of_marginals``,
        ``pooled_symmetric``.
    """

    values: np.ndarray
    source: str = "observed_max"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("empty sample")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("bids must be finite and nonnegative")
        if np.any(np.diff(vals) < 0):
            vals = np.sort(vals, kind="stable")
        object.__setattr__(self, "values", vals)

    @property
    def T(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class BidData:
    """Per-auction bid records with a fixed bidder set.

    ``auctions`` maps auction ids to ``{bidder_id: bid}`` dictionaries.
    Every auction must contain the same bidder set. Bidder one is the
    lexicographically smallest bidder id (compared as strings).
    """

    auctions: tuple
    n_bidders: int = field(init=False)

    def __post_init__(self):
        if not self.auctions:
            raise BidDataError("no auctions")
        bidder_sets = [frozenset(b for b, _ in bids) for _, bids in self.auctions]
        first = bidder_sets[0]
        for (aid, _), bs in zip(self.auctions, bidder_sets):
            if bs != first:
                raise BidDataError(
                    f"auction {aid!r} has bidder set {sorted(map(str, bs))}, "
                    f"expected {sorted(map(str, first))}"
                )
        object.__setattr__(self, "n_bidders", len(first))

    @property
    def bidders(self) -> list:
        return sorted({b for _, bids in self.auctions for b, _ in bids}, key=str)

    @property
    def bidder_one(self):
        return self.bidders[0]

    def bids_of(self, bidder) -> np.ndarray:
        out = []
        for _, bids in self.auctions:
            out.extend(v for b, v in bids if b == bidder)
        return np.asarray(out, dtype=float)

    def max_rival_sample(self, bidder=None, source: str = "observed_max") -> MaxRivalSample:
        """Derive the maximum-rival-bid sample for a bidder.

        ``observed_max`` takes the per-auction maximum over the rivals'
        bids. ``pooled_symmetric`` pools all bids of all bidders.
        ``product_of_marginals`` builds a deterministic quantile grid of
        size T x (number of rivals) from the product of the rivals'
        marginal empirical distributions; this is an approximation for
        use when rivals bid independently but asymmetrically.
        """
        if bidder is None:
            bidder = self.bidder_one
        if source == "pooled_symmetric":
            pooled = np.concatenate([self.bids_of(b) for b in self.bidders])
            return MaxRivalSample(np.sort(pooled), source=source)
        rivals = [b for b in self.bidders if b != bidder]
        if not rivals:
            raise BidDataError("need at least two bidders for a rival sample")
        if source == "observed_max":
            vals = [max(v for b, v in bids if b != bidder) for _, bids in self.auctions]
            return MaxRivalSample(np.sort(np.asarray(vals, float)), source=source)
        if source == "product_of_marginals":
            marginals = [np.sort(self.bids_of(b)) for b in rivals]
            support = np.unique(np.concatenate(marginals))
            # CDF of the max of independent draws from the rival marginals.
            prod = np.ones_like(support)
            for m in marginals:
                prod *= np.searchsorted(m, support, side="right") / m.size
            M = len(self.auctions) * len(rivals)
            u = (np.arange(1, M + 1)) / M
            idx = np.searchsorted(prod, u - 1e-15, side="left")
            idx = np.minimum(idx, support.size - 1)
            return MaxRivalSample(support[idx], source=source)
        raise ValueError(f"unknown source {source!r}")


def read_bid_data(path) -> BidData:
    """Read bid data from a CSV file with header auction_id,bidder_id,bid.

    Raises
    ------
    BidDataError
        On a missing or wrong header, or on any row whose bid is not a
        finite nonnegative number; the message carries the row number.
    """
    auctions: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BidDataError("empty file") from None
        if [h.strip() for h in header] != ["auction_id", "bidder_id", "bid"]:
            raise BidDataError(
                f"expected header auction_id,bidder_id,bid, got {','.join(header)!r}"
            )
        for rownum, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise BidDataError(f"row {rownum}: expected 3 fields, got {len(row)}")
            aid, bidder, raw = (f.strip() for f in row)
            try:
                bid = float(raw)
            except ValueError:
                raise BidDataError(f"row {rownum}: non-numeric bid {raw!r}") from None
            if not math.isfinite(bid) or bid < 0:
                raise BidDataError(f"row {rownum}: bid must be finite and nonnegative, got {raw}")
            auctions.setdefault(aid, []).append((bidder, bid))
    items = tuple((aid, tuple(bids)) for aid, bids in auctions.items())
    return BidData(items)


class MonotoneStepFn:
    """Nondecreasing step function on [0, 1].

    With left continuity (the default), the value is ``levels[j]`` on
    ``(knots[j-1], knots[j]]`` where the implicit ``knots[-1]`` is 0,
    and the value at 0 is ``levels[0]``. A knot placed exactly at 0
    carries the value at 0 only. Right continuity mirrors this:
    ``levels[j]`` on ``[knots[j-1], knots[j])`` with the value at 1
    equal to the last level.
    """

    __slots__ = ("knots", "levels", "continuity")

    def __init__(self, knots, levels, continuity: str = "left"):
        knots = np.atleast_1d(np.asarray(knots, dtype=float))
        levels = np.atleast_1d(np.asarray(levels, dtype=float))
        if knots.size != levels.size or knots.size == 0:
            raise ValueError("knots and levels must be equal-length and nonempty")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if knots[0] < 0 or knots[-1] > 1:
            raise ValueError("knots must lie in [0, 1]")
        if np.any(np.diff(levels) < 0):
            raise ValueError("levels must be nondecreasing")
        if continuity not in ("left", "right"):
            raise ValueError("continuity must be 'left' or 'right'")
        self.knots = knots
        self.levels = levels
        self.continuity = continuity

    def __call__(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr < 0) or np.any(p_arr > 1):
            raise ValueError("evaluation outside [0, 1]")
        side = "left" if self.continuity == "left" else "right"
        idx = np.searchsorted(self.knots, p_arr, side=side)
        idx = np.minimum(idx, self.levels.size - 1)
        out = self.levels[idx]
        return out if isinstance(p, np.ndarray) else float(out)

    def __repr__(self):
        return (
            f"MonotoneStepFn({self.knots.size} knots on "
            f"[{self.knots[0]:g}, {self.knots[-1]:g}], {self.continuity}-continuous)"
        )


class ConvexPwlFn:
    """Convex piecewise-linear function given by its nodes.

    Node abscissae are strictly increasing; slopes between successive
    nodes must be nondecreasing. When representing an expected payment
    function the first node is (0, 0).
    """

    __slots__ = ("x", "y")

    def __init__(self, x, y, tol: float = 1e-9):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.size != y.size or x.size < 2:
            raise ValueError("need at least two nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("node abscissae must be strictly increasing")
        slopes = np.diff(y) / np.diff(x)
        scale = max(1.0, float(np.max(np.abs(slopes))))
        if np.any(np.diff(slopes) < -tol * scale):
            raise ValueError("slopes must be nondecreasing (convexity)")
        self.x = x
        self.y = y

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.y) / np.diff(self.x)

    def __call__(self, p):
        p_arr = np.asarray(p, dtype=float)
        out = np.interp(p_arr, self.x, self.y)
        return out if isinstance(p, np.ndarray) else float(out)

    def left_derivative(self, p):
        """Slope of the segment ending at p (right slope at the first node)."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        s = self.slopes
        idx = np.searchsorted(self.x, p_arr, side="left") - 1
        idx = np.clip(idx, 0, s.size - 1)
        out = s[idx]
        return out if isinstance(p, np.ndarray) else float(out[0])

    def derivative_step(self) -> MonotoneStepFn:
        """Left derivative as a left-continuous step function on [0, 1]."""
        knots = self.x[1:]
        levels = self.slopes
        if knots[-1] < 1.0:
            knots = np.append(knots, 1.0)
            levels = np.append(levels, levels[-1])
        keep = np.concatenate((np.diff(knots) > 0, [True]))
        return MonotoneStepFn(knots[keep], np.maximum.accumulate(levels)[keep])

    def as_pwlfn(self) -> "PwlFn":
        lo = self.x[:-1]
        hi = self.x[1:]
        slope = self.slopes
        intercept = self.y[:-1] - slope * lo
        return PwlFn(lo, hi, intercept, slope)

    def __repr__(self):
        return f"ConvexPwlFn({self.x.size} nodes on [{self.x[0]:g}, {self.x[-1]:g}])"


class PwlFn:
    """Piecewise-linear function on (0, 1], possibly discontinuous.

    Segment j is ``intercept[j] + slope[j] * p`` on ``(lo[j], hi[j]]``;
    the segments partition (0, 1]. The value at 0 is the limit from the
    right along the first segment.
    """

    __slots__ = ("lo", "hi", "intercept", "slope")

    def __init__(self, lo, hi, intercept, slope):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        intercept = np.atleast_1d(np.asarray(intercept, dtype=float))
        slope = np.atleast_1d(np.asarray(slope, dtype=float))
        if not (lo.size == hi.size == intercept.size == slope.size) or lo.size == 0:
            raise ValueError("segment arrays must be equal-length and nonempty")
        if np.any(hi <= lo):
            raise ValueError("empty segment")
        if lo[0] != 0.0 or hi[-1] != 1.0 or np.any(lo[1:] != hi[:-1]):
            raise ValueError("segments must partition (0, 1]")
        if not (np.all(np.isfinite(intercept)) and np.all(np.isfinite(slope))):
            raise ValueError("nonfinite segment coefficients")
        self.lo = lo
        self.hi = hi
        self.intercept = intercept
        self.slope = slope

    def __call__(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr < 0) or np.any(p_arr > 1):
            raise ValueError("evaluation outside [0, 1]")
        idx = np.searchsorted(self.hi, p_arr, side="left")
        idx = np.minimum(idx, self.slope.size - 1)
        out = self.intercept[idx] + self.slope[idx] * p_arr
        return out if isinstance(p, np.ndarray) else float(out)

    def knot_values(self):
        """Right-endpoint abscissae and values, prefixed with (0, value at 0)."""
        xs = np.concatenate(([0.0], self.hi))
        vals = np.concatenate(([self.intercept[0]], self.intercept + self.slope * self.hi))
        return xs, vals

    def __repr__(self):
        return f"PwlFn({self.slope.size} segments)"


def empirical_quantile(sample: MaxRivalSample, p: float) -> float:
    """Empirical quantile b_(ceil(pT)) of the sample; b_(1) at p = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p outside [0, 1]")
    T = sample.T
    t = max(1, int(math.ceil(p * T - 1e-12)))
    return float(sample.values[t - 1])


def empirical_quantile_fn(sample: MaxRivalSample) -> MonotoneStepFn:
    """The empirical quantile as a left-continuous step function with knots t/T."""
    T = sample.T
    return MonotoneStepFn(np.arange(1, T + 1) / T, sample.values, continuity="left")


def unconstrained_payment(sample: MaxRivalSample, mode: str = "max_rival", n: int = 2) -> PwlFn:
    """Unconstrained expected-payment estimate.

    ``max_rival`` mode returns Q_cT(p) * p: linear with slope b_(t) on
    ((t-1)/T, t/T], discontinuous at the knots. ``pooled_symmetric``
    mode takes the pooled bids of all n bidders (length nT) and returns
    p * Q_T(p^{1/(n-1)}), with breakpoints at (l/nT)^{n-1}.
    """
    b = sample.values
    if mode == "max_rival":
        T = b.size
        grid = np.arange(0, T + 1) / T
        return PwlFn(grid[:-1], grid[1:], np.zeros(T), b)
    if mode == "pooled_symmetric":
        if n < 2:
            raise ValueError("pooled mode needs n >= 2")
        L = b.size
        grid = (np.arange(0, L + 1) / L) ** (n - 1)
        return PwlFn(grid[:-1], grid[1:], np.zeros(L), b)
    raise ValueError(f"unknown mode {mode!r}")


def step_pieces(alpha: MonotoneStepFn):
    """Piece boundaries xs and per-piece levels lv with f = lv[j] on (xs[j], xs[j+1]].

    xs spans [0, 1]; a knot at exactly 0 (value-at-0 marker) is dropped.
    """
    knots = alpha.knots
    levels = alpha.levels
    if knots[0] == 0.0:
        knots = knots[1:]
        levels = levels[1:]
        if knots.size == 0:
            return np.array([0.0, 1.0]), np.array([alpha.levels[-1]])
    xs = np.concatenate(([0.0], knots))
    lv = levels
    if xs[-1] < 1.0:
        xs = np.append(xs, 1.0)
        lv = np.append(lv, lv[-1])
    return xs, lv


def integrate_step(alpha: MonotoneStepFn) -> ConvexPwlFn:
    """Exact antiderivative of a nondecreasing step function, anchored at 0.

    The result is convex piecewise linear with nodes at the step's
    knots (and at 0 and 1), and value 0 at 0.
    """
    xs, lv = step_pieces(alpha)
    areas = lv * np.diff(xs)
    ys = np.concatenate(([0.0], np.cumsum(areas)))
    return ConvexPwlFn(xs, ys)


def integrate_step_power(alpha: MonotoneStepFn, exponent: float) -> float:
    """Exact integral of alpha(p) * p^exponent over [0, 1] for a step alpha.

    Requires ``exponent > -1``; the step function is bounded so this is
    the exact convergence condition.
    """
    a = float(exponent)
    if a <= -1.0:
        raise ValueError("divergent weight")
    xs, lv = step_pieces(alpha)
    powers = xs ** (a + 1.0)
    return float(np.sum(lv * np.diff(powers)) / (a + 1.0))


def _power_antiderivative(k: float, p_lo: float, p_hi: float) -> float:
    # int_{p_lo}^{p_hi} p^{k-1} dp with the log special case at k = 0.
    if k == 0.0:
        return math.log(p_hi) - math.log(p_lo)
    return (p_hi**k - p_lo**k) / k


def integrate_pwl_power(f, exponent: float) -> float:
    """Exact integral of f(p) * p^exponent over (0, 1].

    ``f`` is a PwlFn or ConvexPwlFn. Each segment contributes
    ``c * I(a+1) + s * I(a+2)`` with power (or log) antiderivatives.
    For the segment touching 0, each term must converge: the constant
    term needs exponent > -1 and the linear term exponent > -2;
    otherwise the integral diverges and ``ValueError("divergent
    weight")`` is raised. Interior segments are exact for any exponent.
    """
    if isinstance(f, ConvexPwlFn):
        f = f.as_pwlfn()
    a = float(exponent)
    total = 0.0
    for lo, hi, c, s in zip(f.lo, f.hi, f.intercept, f.slope):
        if lo == 0.0:
            if c != 0.0 and a <= -1.0:
                raise ValueError("divergent weight")
            if s != 0.0 and a <= -2.0:
                raise ValueError("divergent weight")
            if c != 0.0:
                total += c * hi ** (a + 1.0) / (a + 1.0)
            if s != 0.0:
                total += s * hi ** (a + 2.0) / (a + 2.0)
        else:
            if c != 0.0:
                total += c * _power_antiderivative(a + 1.0, lo, hi)
            if s != 0.0:
                total += s * _power_antiderivative(a + 2.0, lo, hi)
    return total
