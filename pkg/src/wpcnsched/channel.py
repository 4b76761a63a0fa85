"""Random network instance generation: placement, large- and small-scale fading."""

import math

import numpy as np

from .params import SystemParams, NetworkInstance


def path_loss_db(d: float, params: SystemParams, shadow_z: float = 0.0) -> float:
    """Log-distance path loss with shadowing, in dB.

    PL(d) = PL(d0) + 10 * exponent * log10(d / d0) + Z
    """
    if d <= 0:
        raise ValueError("distance must be strictly positive")
    return params.ref_pl_db + 10.0 * params.pl_exponent * math.log10(d / params.ref_dist_m) + shadow_z


def sample_gain(pl_db: float, rng: np.random.Generator) -> float:
    """Draw one small-scale faded power gain at the given large-scale level.

    The Rayleigh amplitude squared gives an exponential power gain whose mean
    equals the large-scale level 10^(-pl_db/10).
    """
    if not math.isfinite(pl_db):
        raise ValueError("pl_db must be finite")
    return float(rng.exponential(10.0 ** (-pl_db / 10.0)))


def generate_instance(n: int, params: SystemParams, rng: np.random.Generator) -> NetworkInstance:
    """One network realization with n users placed area-uniformly around the AP.

    Distances are area-uniform on the annulus [min_dist_m, cell_radius_m];
    shadowing and small-scale fades are drawn independently for the uplink
    and downlink of each user.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    u = rng.random(n)
    lo2 = params.min_dist_m ** 2
    hi2 = params.cell_radius_m ** 2
    dist = np.sqrt(u * (hi2 - lo2) + lo2)

    shadow = rng.normal(0.0, params.shadow_sigma_db, size=(2, n))
    gain_up = np.empty(n)
    gain_down = np.empty(n)
    for i in range(n):
        gain_up[i] = sample_gain(path_loss_db(dist[i], params, shadow[0, i]), rng)
        gain_down[i] = sample_gain(path_loss_db(dist[i], params, shadow[1, i]), rng)
    return NetworkInstance(gain_up=gain_up, gain_down=gain_down, dist_m=dist)


def generate_dataset(
    n: int,
    count: int,
    params: SystemParams,
    seed: int,
) -> list[NetworkInstance]:
    """`count` independent instances, reproducible from the seed.

    Each instance uses its own child seed so generation can be parallelized
    across instances without changing the result.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    children = np.random.SeedSequence(seed).spawn(count)
    return [generate_instance(n, params, np.random.Generator(np.random.PCG64(s))) for s in children]
