"""Shape-constrained estimation of first-price auction primitives.

Recovers the expected payment function e and the inverse strategy alpha
(the map from win probability to valuation) from bid data under the
convexity restriction implied by equilibrium bidding, then derives
economic objects such as bidder surplus, mean valuation, and
counterfactual revenues. Includes a simulation laboratory.
"""

__version__ = "0.1.0"
