"""Pure-Python solver kernels, interchangeable with the compiled extension.

All functions work in nats (target = demand_bits * ln2 / bandwidth) and
return NaN for infeasible inputs; the wrappers in `solver` turn NaN into
exceptions. Keep this module free of numpy so the scalar hot path stays
allocation-free.
"""

from math import log1p, isnan

BACKEND_NAME = "python"


def solve_tau_nats(c: float, target: float, rel_tol: float, max_iter: int) -> float:
    """Root of tau * log1p(c / tau) = target for 0 < target < c.

    The left side rises from 0 to the asymptote c, is concave and increasing,
    so Newton started from an analytic lower bound converges monotonically
    from below; the analytic upper bound safeguards rounding excursions.
    """
    if not c > target:
        return float("nan")
    # From ln(1+u) >= u/(1+u):      root <= hi = c*target/(c-target)
    # From ln(1+u) <= u/sqrt(1+u):  root >= lo = hi*target/(c+target)
    hi = c * target / (c - target)
    lo = hi * target / (c + target)
    tau = lo
    for _ in range(max_iter):
        u = c / tau
        lg = log1p(u)
        f = tau * lg - target
        fp = lg - u / (1.0 + u)
        step = f / fp
        new = tau - step
        if new > hi:
            new = 0.5 * (tau + hi)
        if abs(new - tau) <= rel_tol * tau:
            return new
        tau = new
    return tau


def it_duration_nats(
    tau0: float,
    alpha: float,
    beta: float,
    theta: float,
    target: float,
    rel_tol: float,
    max_iter: int,
) -> float:
    """Optimal IT duration for a fixed EH duration: beta when the power cap
    binds, otherwise the energy-bound root."""
    if tau0 >= theta:
        return beta
    return solve_tau_nats(alpha * tau0, target, rel_tol, max_iter)


def total_length_nats(
    tau0: float,
    alpha,
    beta,
    theta,
    target: float,
    rel_tol: float,
    max_iter: int,
) -> float:
    # summed in ascending tau order so the result is independent of user order
    taus = []
    for i in range(len(alpha)):
        tau = it_duration_nats(tau0, alpha[i], beta[i], theta[i], target, rel_tol, max_iter)
        if isnan(tau):
            return float("nan")
        taus.append(tau)
    taus.sort()
    total = tau0
    for tau in taus:
        total += tau
    return total


def bisect_eh_nats(
    alpha,
    beta,
    theta,
    target: float,
    rel_tol: float,
    max_iter: int,
    bracket_eps: float,
    diff_step_rel: float,
) -> tuple[float, int, bool]:
    """Bisection on the central-difference derivative sign of the total length.

    Returns (tau0, iterations, converged). The bracket is
    [(1+eps) * max_i target/alpha_i, max_i theta_i]; below the raw lower
    bound the subproblems blow up, so the derivative is treated as negative
    whenever the difference stencil would cross it.
    """
    n = len(alpha)
    if n == 0:
        return 0.0, 0, True
    lower_raw = 0.0
    upper = 0.0
    for i in range(n):
        b = target / alpha[i]
        if b > lower_raw:
            lower_raw = b
        if theta[i] > upper:
            upper = theta[i]
    lower = lower_raw * (1.0 + bracket_eps)
    if lower >= upper:
        return upper, 0, True
    guard = lower_raw * (1.0 + 1e-12)

    def dsign(x: float) -> float:
        h = diff_step_rel * x
        if x - h <= guard:
            return -1.0
        right = total_length_nats(x + h, alpha, beta, theta, target, rel_tol, max_iter)
        left = total_length_nats(x - h, alpha, beta, theta, target, rel_tol, max_iter)
        return right - left

    if dsign(lower) >= 0.0:
        return lower, 0, True
    if dsign(upper) <= 0.0:
        return upper, 0, True
    lo, hi = lower, upper
    it = 0
    while hi - lo > rel_tol * hi and it < max_iter:
        mid = 0.5 * (lo + hi)
        if dsign(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi), it, hi - lo <= rel_tol * hi
