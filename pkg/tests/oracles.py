"""Independent reference computations the test suite checks the solvers against.

Everything here is deliberately implemented by a different method than the
package (vectorized bisection + exhaustive grids instead of Newton + derivative
bisection) so the two sides cannot share a bug.
"""

import numpy as np

from wpcnsched.params import LN2
from wpcnsched.core import isc_features


def subproblem_bracket(c, target):
    """Analytic enclosure of the root of tau*ln(1+c/tau) = target (c > target)."""
    hi = c * target / (c - target)
    lo = hi * target / (c + target)
    return lo, hi


def subproblem_tau_bisect(c, target, iters=60):
    """Vectorized plain bisection for the IT subproblem root."""
    c = np.asarray(c, dtype=np.float64)
    lo, hi = subproblem_bracket(c, target)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = mid * np.log1p(c / mid) - target
        lo = np.where(f < 0, mid, lo)
        hi = np.where(f < 0, hi, mid)
    return 0.5 * (lo + hi)


def scalar_tau_grid_refine(c, target, rounds=6, points=100):
    """Scalar grid refinement (points^rounds effective resolution)."""
    lo, hi = subproblem_bracket(c, target)
    for _ in range(rounds):
        grid = np.linspace(lo, hi, points)
        f = grid * np.log1p(c / grid) - target
        k = int(np.searchsorted(f > 0, True))
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k, points - 1)]
    return 0.5 * (lo + hi)


def total_length_curve(tau0_grid, feats, params):
    """Exact schedule length at every tau0 on the grid, via bisection subproblems."""
    tau0_grid = np.asarray(tau0_grid, dtype=np.float64)
    target = params.demand_target_nats
    total = tau0_grid.copy()
    for i in range(feats.n_users):
        taus = np.full(tau0_grid.shape, feats.beta[i])
        mask = tau0_grid < feats.theta[i]
        if np.any(mask):
            taus[mask] = subproblem_tau_bisect(feats.alpha[i] * tau0_grid[mask], target)
        total += taus
    return total


def grid_min_length(inst, params, points=100_000, pad=1e-9):
    """Minimum schedule length over a dense tau0 grid (the master-problem oracle)."""
    feats = isc_features(inst, params)
    lower = float(np.max(params.demand_target_nats / feats.alpha)) * (1.0 + pad)
    upper = float(np.max(feats.theta))
    if lower >= upper:
        grid = np.array([upper])
    else:
        grid = np.linspace(lower * (1.0 + 1e-7), upper, points)
    curve = total_length_curve(grid, feats, params)
    k = int(np.argmin(curve))
    return float(curve[k]), float(grid[k])
