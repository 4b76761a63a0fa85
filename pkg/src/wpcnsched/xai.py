"""Mutual-information feature ranking and selection of the reduced input set."""

from dataclasses import dataclass

import numpy as np

from .params import SystemParams, NetworkInstance

# Candidate per-user input kinds, in deterministic tie-break order.
KIND_ORDER = ("alpha", "gamma", "g_up", "g_dn")

DEFAULT_BINS = 64
DEFAULT_BUDGET = 3


def kind_matrices(instances: list[NetworkInstance], params: SystemParams) -> dict[str, np.ndarray]:
    """(N, n) value matrix per candidate kind for a list of instances."""
    g_up = np.stack([inst.gain_up for inst in instances])
    g_dn = np.stack([inst.gain_down for inst in instances])
    gamma = g_up / (params.noise_psd_w_per_hz * params.bandwidth_hz)
    alpha = params.harvest_rate_w_per_gain * g_dn * gamma
    return {"alpha": alpha, "gamma": gamma, "g_up": g_up, "g_dn": g_dn}


def _equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Rank-based bin assignment: exactly invariant under strictly monotone maps."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(x.size)
    return (ranks * bins) // x.size


def mi_score(x: np.ndarray, y: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Plug-in mutual information (nats) from a 2-D equal-frequency histogram.

    Miller-Madow corrected (the raw plug-in bias is (bins-1)^2 / 2N, which
    swamps small dependencies) and clamped at zero. Degenerate constant
    inputs score 0.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have the same sample count")
    if x.size < 4 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    n = x.size
    bx = _equal_frequency_bins(x, bins)
    by = _equal_frequency_bins(y, bins)
    joint = np.bincount(bx * bins + by, minlength=bins * bins).astype(np.float64)
    pxy = joint / n
    px = pxy.reshape(bins, bins).sum(axis=1)
    py = pxy.reshape(bins, bins).sum(axis=0)
    outer = np.outer(px, py).ravel()
    mask = pxy > 0
    mi = float(np.sum(pxy[mask] * np.log(pxy[mask] / outer[mask])))
    occupied_x = int(np.count_nonzero(px))
    occupied_y = int(np.count_nonzero(py))
    occupied_xy = int(np.count_nonzero(pxy))
    mi += (occupied_x + occupied_y - occupied_xy - 1) / (2.0 * n)
    return max(mi, 0.0)


@dataclass
class FeatureCatalog:
    """MI scores per candidate kind and the selected reduced input set."""

    scores: dict[str, float]
    selected: tuple[str, ...]
    bins: int
    per_user_budget: int

    def input_width(self, n_users: int) -> int:
        return len(self.selected) * n_users

    def to_dict(self) -> dict:
        return {
            "scores": {k: self.scores[k] for k in KIND_ORDER if k in self.scores},
            "selected": list(self.selected),
            "bins": self.bins,
            "per_user_budget": self.per_user_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureCatalog":
        return cls(
            scores={k: float(v) for k, v in d["scores"].items()},
            selected=tuple(d["selected"]),
            bins=int(d["bins"]),
            per_user_budget=int(d["per_user_budget"]),
        )


def select_features(
    instances: list[NetworkInstance],
    lengths: np.ndarray,
    params: SystemParams,
    kinds: tuple[str, ...] = KIND_ORDER,
    per_user_budget: int = DEFAULT_BUDGET,
    bins: int = DEFAULT_BINS,
) -> FeatureCatalog:
    """Rank candidate kinds by their user-averaged MI against the schedule length.

    The top `per_user_budget` kinds form the reduced input vector; exact ties
    fall back to the fixed kind order.
    """
    if per_user_budget > len(kinds):
        raise ValueError(f"budget {per_user_budget} exceeds the {len(kinds)} candidate kinds")
    unknown = set(kinds) - set(KIND_ORDER)
    if unknown:
        raise ValueError(f"unknown kinds: {sorted(unknown)}")
    lengths = np.asarray(lengths, dtype=np.float64)
    values = kind_matrices(instances, params)
    scores = {}
    for kind in kinds:
        mat = values[kind]
        scores[kind] = float(np.mean([mi_score(mat[:, i], lengths, bins) for i in range(mat.shape[1])]))
    ranked = sorted(kinds, key=lambda k: (-scores[k], KIND_ORDER.index(k)))
    selected = tuple(k for k in KIND_ORDER if k in ranked[:per_user_budget])
    return FeatureCatalog(scores=scores, selected=selected, bins=bins, per_user_budget=per_user_budget)


def build_inputs(
    instances: list[NetworkInstance],
    params: SystemParams,
    kinds: tuple[str, ...],
) -> np.ndarray:
    """Kind-major input matrix (N, len(kinds)*n) for the given instances."""
    values = kind_matrices(instances, params)
    return np.concatenate([values[k] for k in kinds], axis=1)
