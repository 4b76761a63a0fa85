"""Scenario constants and per-instance channel state."""

from dataclasses import dataclass, field, asdict

import numpy as np

LN2 = 0.6931471805599453


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the wireless-powered network scenario.

    All quantities are linear SI unless the name says dB.
    """

    ap_tx_power_w: float = 2.0          # AP broadcast power during energy harvesting
    harvest_eff: float = 0.5            # energy harvesting efficiency, in (0, 1]
    max_tx_power_w: float = 0.01        # per-user transmit power cap
    demand_bits: float = 50.0           # bits each user must deliver
    bandwidth_hz: float = 1e6
    noise_psd_w_per_hz: float = 10.0 ** (-110.0 / 10.0) * 1e-3   # -110 dBm/Hz
    cell_radius_m: float = 1.0
    ref_dist_m: float = 1.0
    ref_pl_db: float = 30.0             # path loss at the reference distance
    pl_exponent: float = 2.0
    shadow_sigma_db: float = 2.0
    min_dist_m: float = 0.05            # keeps gains bounded as d -> 0

    def __post_init__(self):
        positive = (
            "ap_tx_power_w", "max_tx_power_w", "demand_bits", "bandwidth_hz",
            "noise_psd_w_per_hz", "cell_radius_m", "ref_dist_m", "pl_exponent",
            "min_dist_m",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.harvest_eff <= 1.0:
            raise ValueError("harvest_eff must lie in (0, 1]")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be non-negative")
        if not 0.0 < self.min_dist_m < self.cell_radius_m:
            raise ValueError("min_dist_m must lie in (0, cell_radius_m)")

    @property
    def harvest_rate_w_per_gain(self) -> float:
        """Harvested power per unit downlink gain: harvest_eff * ap_tx_power_w."""
        return self.harvest_eff * self.ap_tx_power_w

    @property
    def noise_power_w(self) -> float:
        """Receiver noise power over the full band."""
        return self.noise_psd_w_per_hz * self.bandwidth_hz

    @property
    def demand_target_nats(self) -> float:
        """demand_bits * ln2 / bandwidth_hz, the subproblem right-hand side."""
        return self.demand_bits * LN2 / self.bandwidth_hz

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        return cls(**d)


@dataclass
class NetworkInstance:
    """Per-user linear channel power gains for one network realization."""

    gain_up: np.ndarray                 # uplink CSI, strictly positive
    gain_down: np.ndarray               # downlink CSI, strictly positive
    dist_m: np.ndarray = field(default=None)   # optional, kept for reproducibility

    def __post_init__(self):
        self.gain_up = np.asarray(self.gain_up, dtype=np.float64)
        self.gain_down = np.asarray(self.gain_down, dtype=np.float64)
        if self.gain_up.shape != self.gain_down.shape or self.gain_up.ndim != 1:
            raise ValueError("gain_up and gain_down must be 1-D arrays of equal length")
        if self.dist_m is not None:
            self.dist_m = np.asarray(self.dist_m, dtype=np.float64)
            if self.dist_m.shape != self.gain_up.shape:
                raise ValueError("dist_m must match the gain arrays")
        for name, arr in (("gain_up", self.gain_up), ("gain_down", self.gain_down)):
            if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0)):
                raise ValueError(f"{name} entries must be strictly positive and finite")

    @property
    def n_users(self) -> int:
        return int(self.gain_up.size)
