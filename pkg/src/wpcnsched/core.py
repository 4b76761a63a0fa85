"""Problem physics: rates, optimality-condition features, output set mapping, feasibility."""

from dataclasses import dataclass, field

import numpy as np

from .params import SystemParams, NetworkInstance

# Tolerances used by the feasibility flags.
POWER_CAP_RTOL = 1e-12
ENERGY_RTOL = 1e-9


@dataclass
class Features:
    """Per-user optimality-condition quantities.

    alpha  dimensionless coefficient of the energy-bound subproblem,
           harvest_eff * ap_power * gain_down * gamma
    gamma  1/W, gain_up / (noise_psd * bandwidth)
    beta   s, IT length when transmitting at max power
    theta  s, EH length needed to sustain max power for beta seconds
    """

    alpha: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    theta: np.ndarray

    @property
    def n_users(self) -> int:
        return int(self.alpha.size)


@dataclass
class Schedule:
    """Decision variables: EH duration, per-user IT durations and powers."""

    eh_s: float
    it_s: np.ndarray
    power_w: np.ndarray

    def __post_init__(self):
        self.it_s = np.asarray(self.it_s, dtype=np.float64)
        self.power_w = np.asarray(self.power_w, dtype=np.float64)

    @property
    def n_users(self) -> int:
        return int(self.it_s.size)


@dataclass
class FeasibilityReport:
    delivered_bits: np.ndarray
    outage_bits: float
    energy_ok: np.ndarray
    power_ok: np.ndarray

    def all_ok(self) -> bool:
        return bool(np.all(self.energy_ok) and np.all(self.power_ok))


def rate_bps(p: float, gamma: float, bandwidth: float) -> float:
    """Shannon rate W * log2(1 + p * gamma) for an AWGN uplink."""
    if p < 0:
        raise ValueError("power must be non-negative")
    if gamma <= 0:
        raise ValueError("gamma must be strictly positive")
    return bandwidth * np.log2(1.0 + p * gamma)


def isc_features(inst: NetworkInstance, params: SystemParams) -> Features:
    """Input set construction: (alpha, gamma, beta, theta) for every user."""
    if inst.n_users and np.any(inst.gain_up <= 0):
        raise ValueError("gains must be strictly positive")
    gamma = inst.gain_up / (params.noise_psd_w_per_hz * params.bandwidth_hz)
    harvest = params.harvest_rate_w_per_gain * inst.gain_down   # W harvested per EH second
    alpha = harvest * gamma
    beta = params.demand_bits / (params.bandwidth_hz * np.log2(1.0 + params.max_tx_power_w * gamma))
    theta = params.max_tx_power_w * beta / harvest
    return Features(alpha=alpha, gamma=gamma, beta=beta, theta=theta)


def osm(
    power_w: np.ndarray,
    inst: NetworkInstance,
    params: SystemParams,
    demand_bits: np.ndarray | None = None,
) -> Schedule:
    """Output set mapping: minimal feasible durations for given transmit powers.

    tau_i is the exact IT time delivering the demand at power p_i, and the EH
    duration is the smallest one satisfying every user's energy causality.
    Users with zero demand get tau_i = 0 and draw no energy.
    """
    power_w = np.asarray(power_w, dtype=np.float64)
    n = inst.n_users
    if power_w.size != n:
        raise ValueError("power vector must match the instance")
    if demand_bits is None:
        demand_bits = np.full(n, params.demand_bits)
    else:
        demand_bits = np.asarray(demand_bits, dtype=np.float64)
    if np.any(demand_bits < 0):
        raise ValueError("demands must be non-negative")
    active = demand_bits > 0
    if np.any(power_w[active] <= 0):
        raise ValueError("infeasible: zero power for a user with positive demand")
    if np.any(power_w > params.max_tx_power_w * (1.0 + POWER_CAP_RTOL)):
        raise ValueError("power exceeds the cap")

    gamma = inst.gain_up / (params.noise_psd_w_per_hz * params.bandwidth_hz)
    it_s = np.zeros(n)
    it_s[active] = demand_bits[active] / (
        params.bandwidth_hz * np.log2(1.0 + power_w[active] * gamma[active])
    )
    harvest = params.harvest_rate_w_per_gain * inst.gain_down
    eh = 0.0
    if np.any(active):
        eh = float(np.max(power_w[active] * it_s[active] / harvest[active]))
    return Schedule(eh_s=eh, it_s=it_s, power_w=power_w.copy())


def effective_power(
    schedule: Schedule, inst: NetworkInstance, params: SystemParams
) -> np.ndarray:
    """Per-user transmit power actually sustainable: min(p, P_max, harvested/tau)."""
    harvest = params.harvest_rate_w_per_gain * inst.gain_down
    p = np.minimum(schedule.power_w, params.max_tx_power_w)
    active = schedule.it_s > 0
    energy_cap = harvest * schedule.eh_s / np.where(active, schedule.it_s, 1.0)
    return np.where(active, np.minimum(p, energy_cap), 0.0)


def evaluate(
    schedule: Schedule,
    inst: NetworkInstance,
    params: SystemParams,
    demand_bits: np.ndarray | None = None,
) -> FeasibilityReport:
    """Delivered bits, outage and constraint flags for a (possibly infeasible) schedule.

    Delivered bits are computed at the effective power, so energy or cap
    violations degrade throughput instead of raising.
    """
    n = inst.n_users
    if schedule.it_s.size != n or schedule.power_w.size != n:
        raise ValueError("schedule arrays must match the instance")
    if demand_bits is None:
        demand_bits = np.full(n, params.demand_bits)
    else:
        demand_bits = np.asarray(demand_bits, dtype=np.float64)

    gamma = inst.gain_up / (params.noise_psd_w_per_hz * params.bandwidth_hz)
    harvest = params.harvest_rate_w_per_gain * inst.gain_down
    p_eff = effective_power(schedule, inst, params)
    delivered = schedule.it_s * params.bandwidth_hz * np.log2(1.0 + p_eff * gamma)
    outage = float(np.sum(np.maximum(0.0, demand_bits - delivered)))
    power_ok = schedule.power_w <= params.max_tx_power_w * (1.0 + POWER_CAP_RTOL)
    energy_ok = schedule.power_w * schedule.it_s <= harvest * schedule.eh_s * (1.0 + ENERGY_RTOL)
    return FeasibilityReport(
        delivered_bits=delivered,
        outage_bits=outage,
        energy_ok=energy_ok,
        power_ok=power_ok,
    )


def schedule_length(schedule: Schedule) -> float:
    """Total duration: EH phase plus all IT phases."""
    return float(schedule.eh_s + np.sum(schedule.it_s))
