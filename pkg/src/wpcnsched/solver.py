"""Exact minimum-length scheduler: per-user subproblems plus a bisection master.

The schedule-length objective is convex in the EH duration, so the master
bisects on the sign of its central-difference derivative over an analytic
bracket; each evaluation solves every user's IT-duration subproblem exactly.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import backend
from .params import SystemParams, NetworkInstance, LN2
from .core import Features, Schedule, isc_features

# Central-difference step for the master derivative, relative to tau0.
DIFF_STEP_REL = 1e-6


class InfeasibleError(ValueError):
    """The requested EH duration cannot deliver the demand."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-12      # scalar-root and bisection stopping
    max_iter: int = 200
    bracket_eps: float = 1e-9   # lower-bound inflation

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 8:
            raise ValueError("max_iter must be at least 8")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = SolverConfig()


def feasibility_bound(alpha: float, params: SystemParams) -> float:
    """Smallest EH duration below which a user's demand is unreachable."""
    return params.demand_target_nats / alpha


def solve_tau(
    c: float,
    demand_bits: float,
    bandwidth: float,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """The unique tau > 0 with tau * log2(1 + c/tau) = demand_bits/bandwidth.

    c = alpha * tau0 is the user's harvested-SNR budget. Raises
    InfeasibleError when even tau -> inf cannot meet the demand.
    """
    target = demand_bits * LN2 / bandwidth
    tau = backend.active_backend().solve_tau_nats(c, target, cfg.rel_tol, cfg.max_iter)
    if math.isnan(tau):
        raise InfeasibleError(
            f"asymptotic bits c/ln2 = {c / LN2:.6g} below demand/bandwidth = {demand_bits / bandwidth:.6g}"
        )
    return tau


def it_duration(
    tau0: float,
    alpha: float,
    beta: float,
    theta: float,
    params: SystemParams,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """Optimal IT duration for one user at fixed EH duration tau0.

    Equals beta when tau0 covers the max-power energy need (theta), else the
    energy-bound root; non-increasing in tau0.
    """
    tau = backend.active_backend().it_duration_nats(
        tau0, alpha, beta, theta, params.demand_target_nats, cfg.rel_tol, cfg.max_iter
    )
    if math.isnan(tau):
        raise InfeasibleError(
            f"tau0 = {tau0:.6g} at or below the feasibility bound {feasibility_bound(alpha, params):.6g}"
        )
    return tau


def total_length(
    tau0: float,
    feats: Features,
    params: SystemParams,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """Schedule length tau0 + sum_i tau_i(tau0); convex in tau0."""
    total = backend.active_backend().total_length_nats(
        np.float64(tau0),
        np.ascontiguousarray(feats.alpha),
        np.ascontiguousarray(feats.beta),
        np.ascontiguousarray(feats.theta),
        params.demand_target_nats,
        cfg.rel_tol,
        cfg.max_iter,
    )
    if math.isnan(total):
        raise InfeasibleError(f"tau0 = {tau0:.6g} infeasible for some user")
    return total


def eh_bracket(feats: Features, params: SystemParams, cfg: SolverConfig = DEFAULT_CONFIG) -> tuple[float, float]:
    """[inflated feasibility bound, max_i theta_i]: contains the optimal EH duration."""
    lower = float(np.max(params.demand_target_nats / feats.alpha)) * (1.0 + cfg.bracket_eps)
    upper = float(np.max(feats.theta))
    return lower, upper


def solve_eh_duration(feats: Features, params: SystemParams, cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """Bisection master over the EH duration; returns the optimal tau0."""
    kern = backend.active_backend()
    tau0, iters, converged = kern.bisect_eh_nats(
        np.ascontiguousarray(feats.alpha),
        np.ascontiguousarray(feats.beta),
        np.ascontiguousarray(feats.theta),
        params.demand_target_nats,
        cfg.rel_tol,
        cfg.max_iter,
        cfg.bracket_eps,
        DIFF_STEP_REL,
    )
    if not converged:
        raise ConvergenceError(
            f"EH bisection did not reach rel_tol={cfg.rel_tol:g} in {iters} iterations"
        )
    return float(tau0)


def recover_powers(
    tau0: float, it_s: np.ndarray, inst: NetworkInstance, params: SystemParams
) -> np.ndarray:
    """Transmit powers implied by the durations: min(P_max, harvested / tau)."""
    harvest = params.harvest_rate_w_per_gain * inst.gain_down
    with np.errstate(divide="ignore"):
        p = np.where(it_s > 0, harvest * tau0 / np.maximum(it_s, 1e-300), 0.0)
    return np.minimum(p, params.max_tx_power_w)


def solve_opt(
    inst: NetworkInstance,
    params: SystemParams,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> Schedule:
    """Exact optimal schedule for one instance (the OPT algorithm)."""
    n = inst.n_users
    if n == 0:
        return Schedule(eh_s=0.0, it_s=np.zeros(0), power_w=np.zeros(0))
    feats = isc_features(inst, params)
    tau0 = solve_eh_duration(feats, params, cfg)
    it_s = np.array(
        [
            it_duration(tau0, feats.alpha[i], feats.beta[i], feats.theta[i], params, cfg)
            for i in range(n)
        ]
    )
    return Schedule(eh_s=tau0, it_s=it_s, power_w=recover_powers(tau0, it_s, inst, params))
