"""The algorithm ladder: exact solver, learned pipelines and hybrids.

Every pipeline maps a network instance to a feasible schedule. The learned
kinds predict some subset of the decision variables and recover the rest
through the optimality-condition mappings; prediction errors are absorbed by
an output-set-mapping repair round on the residual demands.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import SystemParams, NetworkInstance
from .core import Schedule, isc_features, osm, evaluate, effective_power, schedule_length
from .solver import (
    SolverConfig,
    DEFAULT_CONFIG,
    DIFF_STEP_REL,
    solve_opt,
    it_duration,
    eh_bracket,
)
from .xai import FeatureCatalog, select_features, build_inputs, DEFAULT_BINS, DEFAULT_BUDGET
from . import nn

OPT = "OPT"
DNN = "DNN"
XAI_DNN = "XAI_DNN"
XAI_DNN_OSM = "XAI_DNN_OSM"
XAI_SB_DNN_OSM = "XAI_SB_DNN_OSM"
DEEP_UNFOLD = "DEEP_UNFOLD"

ALGORITHM_KINDS = (OPT, DNN, XAI_DNN, XAI_DNN_OSM, XAI_SB_DNN_OSM, DEEP_UNFOLD)
LEARNED_KINDS = (DNN, XAI_DNN, XAI_DNN_OSM, XAI_SB_DNN_OSM, DEEP_UNFOLD)

RAW_INPUT_KINDS = ("g_up", "g_dn")
REPAIR_OUTAGE_RTOL = 1e-9
REPAIR_POWER_MIN_W = 1e-9
SBDNN_TAU0_DRAWS = 10

BUNDLE_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class EvalRecord:
    length_s: float
    wall_time_s: float
    repair_rounds: int
    outage_bits: float
    model_calls: int
    bracket_clamped: bool = False


@dataclass
class TrainedPipeline:
    kind: str
    n_users: int
    params: SystemParams
    solver_cfg: SolverConfig
    models: list[nn.MlpModel] = field(default_factory=list)
    catalog: FeatureCatalog | None = None
    label_norms: dict = field(default_factory=dict)
    reports: list[nn.TrainReport] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ALGORITHM_KINDS:
            raise ValueError(f"unknown algorithm kind {self.kind!r}")
        expected = self.expected_input_width()
        for m in self.models:
            if m.spec.layer_sizes[0] != expected:
                raise ValueError(
                    f"{self.kind}: model input width {m.spec.layer_sizes[0]} != expected {expected}"
                )
        if self.kind in (XAI_DNN, XAI_DNN_OSM, XAI_SB_DNN_OSM) and self.models and self.catalog is None:
            raise ValueError(f"{self.kind} requires a feature catalog")

    def expected_input_width(self) -> int | None:
        n = self.n_users
        if self.kind == DNN:
            return 2 * n
        if self.kind in (XAI_DNN, XAI_DNN_OSM):
            return 3 * n
        if self.kind in (XAI_SB_DNN_OSM, DEEP_UNFOLD):
            return 3 * n + 1
        return None


def unfold_depth(n_users: int) -> int:
    """Half the number of sources plus one."""
    return n_users // 2 + 1


def params_hash(params: SystemParams) -> str:
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# training

def _label_arrays(ds):
    powers = np.stack([lbl.power_w for lbl in ds.labels])
    times = np.column_stack(
        [np.array([lbl.eh_s for lbl in ds.labels]), np.stack([lbl.it_s for lbl in ds.labels])]
    )
    return powers, times


def _log_normalizer(x: np.ndarray) -> nn.Normalizer:
    return nn.Normalizer.fit(x, log_mask=np.ones(x.shape[1], dtype=bool))


def _gamma_matrix(instances, params):
    return np.stack([inst.gain_up for inst in instances]) / (
        params.noise_psd_w_per_hz * params.bandwidth_hz
    )


def _mlp_spec(d_in: int, n_users: int, heads: list[nn.Head]) -> nn.MlpSpec:
    out = sum(h.size for h in heads)
    return nn.MlpSpec(layer_sizes=[d_in, *nn.hidden_sizes(n_users), out], heads=heads)


def _resolve_catalog(kind, train_ds, params, cfg_catalog):
    if kind == DNN:
        return None
    if cfg_catalog is not None:
        return cfg_catalog
    return select_features(
        train_ds.instances, train_ds.lengths(), params,
        per_user_budget=DEFAULT_BUDGET, bins=DEFAULT_BINS,
    )


def _train_dnn_like(kind, train_ds, val_ds, params, cfg, catalog, seeds):
    n = train_ds.n_users
    kinds = RAW_INPUT_KINDS if kind == DNN else catalog.selected
    x_tr = build_inputs(train_ds.instances, params, kinds)
    x_va = build_inputs(val_ds.instances, params, kinds)
    p_tr, t_tr = _label_arrays(train_ds)
    p_va, t_va = _label_arrays(val_ds)
    g_tr = _gamma_matrix(train_ds.instances, params)
    g_va = _gamma_matrix(val_ds.instances, params)

    in_norm = _log_normalizer(x_tr)
    # labels standardized in log10 domain: durations and powers span orders of
    # magnitude, and the EH mapping is linear in the bottleneck user's power
    power_norm = _log_normalizer(p_tr)
    time_norm = _log_normalizer(t_tr)

    power_net = nn.init_model(
        _mlp_spec(x_tr.shape[1], n, [nn.Head("power", n, np.full(n, params.max_tx_power_w))]),
        np.random.default_rng(seeds[0]),
        normalizer=in_norm,
    )
    time_net = nn.init_model(
        _mlp_spec(x_tr.shape[1], n, [nn.Head("time", n + 1, t_tr.mean(axis=0))]),
        np.random.default_rng(seeds[1]),
        normalizer=in_norm,
    )

    def batch_grad(idx):
        xb = x_tr[idx]
        c1, c2 = {}, {}
        (power,) = nn.forward(power_net, xb, c1)
        (times,) = nn.forward(time_net, xb, c2)
        loss, g_p, g_t = nn.joint_mse_outage(
            power, times, p_tr[idx], t_tr[idx], g_tr[idx],
            params.demand_bits, params.bandwidth_hz,
            power_norm, time_norm, cfg.w_mse, cfg.w_outage,
        )
        return loss, [nn.backward(power_net, c1, [g_p]), nn.backward(time_net, c2, [g_t])]

    def val_loss():
        (power,) = nn.forward(power_net, x_va)
        (times,) = nn.forward(time_net, x_va)
        loss, _, _ = nn.joint_mse_outage(
            power, times, p_va, t_va, g_va,
            params.demand_bits, params.bandwidth_hz,
            power_norm, time_norm, cfg.w_mse, cfg.w_outage,
        )
        return loss

    report = nn.train_loop(
        [power_net, time_net], len(train_ds), batch_grad, val_loss, cfg,
        extra_config={"label_normalization": "standardized", "outage_normalization": "n*D"},
    )
    return [power_net, time_net], {"power": power_norm, "time": time_norm}, report


def _train_power_only(train_ds, val_ds, params, cfg, catalog, seeds):
    # OSM produces the durations, so the outage term is identically zero and
    # the loss reduces to the power MSE
    n = train_ds.n_users
    x_tr = build_inputs(train_ds.instances, params, catalog.selected)
    x_va = build_inputs(val_ds.instances, params, catalog.selected)
    p_tr, _ = _label_arrays(train_ds)
    p_va, _ = _label_arrays(val_ds)
    power_norm = _log_normalizer(p_tr)

    power_net = nn.init_model(
        _mlp_spec(x_tr.shape[1], n, [nn.Head("power", n, np.full(n, params.max_tx_power_w))]),
        np.random.default_rng(seeds[0]),
        normalizer=_log_normalizer(x_tr),
    )

    def mse(power, labels):
        pn = power_norm.transform(power)
        yn = power_norm.transform(labels)
        loss = cfg.w_mse * float(np.mean((pn - yn) ** 2))
        grad = cfg.w_mse * 2.0 * (pn - yn) * power_norm.transform_grad(power) / pn.size
        return loss, grad

    def batch_grad(idx):
        cache = {}
        (power,) = nn.forward(power_net, x_tr[idx], cache)
        loss, g_p = mse(power, p_tr[idx])
        return loss, [nn.backward(power_net, cache, [g_p])]

    def val_loss():
        (power,) = nn.forward(power_net, x_va)
        loss, _ = mse(power, p_va)
        return loss

    report = nn.train_loop(
        [power_net], len(train_ds), batch_grad, val_loss, cfg,
        extra_config={"label_normalization": "standardized", "loss": "mse_only"},
    )
    return [power_net], {"power": power_norm}, report


def _sbdnn_rows(ds, params, solver_cfg, rng):
    """Sampled (h-features, tau0) inputs with exact subproblem labels."""
    rows_x, rows_y, rows_alpha, rows_gamma = [], [], [], []
    for inst in ds.instances:
        feats = isc_features(inst, params)
        lower, upper = eh_bracket(feats, params, solver_cfg)
        if lower >= upper:
            draws = np.full(SBDNN_TAU0_DRAWS, upper)
        else:
            draws = rng.uniform(lower, upper, size=SBDNN_TAU0_DRAWS)
        for tau0 in draws:
            taus = [
                it_duration(tau0, feats.alpha[i], feats.beta[i], feats.theta[i], params, solver_cfg)
                for i in range(inst.n_users)
            ]
            rows_x.append(tau0)
            rows_y.append(taus)
            rows_alpha.append(feats.alpha)
            rows_gamma.append(feats.gamma)
    return (
        np.array(rows_x),
        np.array(rows_y),
        np.stack(rows_alpha),
        np.stack(rows_gamma),
    )


def _sb_mse_outage(pred_tau, label_tau, tau0, alpha, gamma, params, power_cap, norm, w_mse, w_outage):
    """MSE on standardized IT durations + outage at the fixed EH duration.

    The implied power min(P_max, harvested/tau) makes the delivered bits a
    two-branch function of tau; both branch derivatives feed the hinge
    subgradient.
    """
    b, n = pred_tau.shape
    ln2 = np.log(2.0)
    demand = params.demand_bits
    tn = norm.transform(pred_tau)
    yn = norm.transform(label_tau)
    mse = float(np.mean((tn - yn) ** 2))
    g = w_mse * 2.0 * (tn - yn) * norm.transform_grad(pred_tau) / tn.size

    u_energy = alpha * tau0[:, None] / pred_tau
    u_cap = gamma * power_cap
    capped = u_energy >= u_cap
    u = np.where(capped, u_cap, u_energy)
    delivered = pred_tau * params.bandwidth_hz * np.log1p(u) / ln2
    shortfall = demand - delivered
    active = shortfall > 0
    outage = float(np.sum(np.where(active, shortfall, 0.0)) / (b * n * demand))

    d_del = np.where(
        capped,
        params.bandwidth_hz * np.log1p(u) / ln2,
        params.bandwidth_hz * (np.log1p(u) - u / (1.0 + u)) / ln2,
    )
    g += np.where(active, -w_outage * d_del / (b * n * demand), 0.0)
    return w_mse * mse + w_outage * outage, g


def _train_sbdnn(train_ds, val_ds, params, cfg, solver_cfg, catalog, seeds):
    n = train_ds.n_users
    rng = np.random.default_rng(seeds[2])
    tau0_tr, y_tr, alpha_tr, gamma_tr = _sbdnn_rows(train_ds, params, solver_cfg, rng)
    tau0_va, y_va, alpha_va, gamma_va = _sbdnn_rows(val_ds, params, solver_cfg, rng)
    h_tr = np.repeat(build_inputs(train_ds.instances, params, catalog.selected), SBDNN_TAU0_DRAWS, axis=0)
    h_va = np.repeat(build_inputs(val_ds.instances, params, catalog.selected), SBDNN_TAU0_DRAWS, axis=0)
    x_tr = np.column_stack([h_tr, tau0_tr])
    x_va = np.column_stack([h_va, tau0_va])
    time_norm = _log_normalizer(y_tr)

    net = nn.init_model(
        _mlp_spec(x_tr.shape[1], n, [nn.Head("time", n, y_tr.mean(axis=0))]),
        np.random.default_rng(seeds[0]),
        normalizer=_log_normalizer(x_tr),
    )

    def batch_grad(idx):
        cache = {}
        (taus,) = nn.forward(net, x_tr[idx], cache)
        loss, g_t = _sb_mse_outage(
            taus, y_tr[idx], tau0_tr[idx], alpha_tr[idx], gamma_tr[idx],
            params, params.max_tx_power_w, time_norm, cfg.w_mse, cfg.w_outage,
        )
        return loss, [nn.backward(net, cache, [g_t])]

    def val_loss():
        (taus,) = nn.forward(net, x_va)
        loss, _ = _sb_mse_outage(
            taus, y_va, tau0_va, alpha_va, gamma_va,
            params, params.max_tx_power_w, time_norm, cfg.w_mse, cfg.w_outage,
        )
        return loss

    report = nn.train_loop(
        [net], len(x_tr), batch_grad, val_loss, cfg,
        extra_config={"tau0_draws_per_instance": SBDNN_TAU0_DRAWS, "loss": "mse+outage_at_fixed_tau0"},
    )
    return [net], {"time": time_norm}, report


def _unfold_state_targets(ds, params, solver_cfg):
    """Optimal EH duration as a geometric bracket coordinate in (0, 1]."""
    targets = []
    for inst, label in zip(ds.instances, ds.labels):
        feats = isc_features(inst, params)
        lower, upper = eh_bracket(feats, params, solver_cfg)
        if lower >= upper:
            targets.append(1.0)
        else:
            s = np.log(label.eh_s / lower) / np.log(upper / lower)
            targets.append(min(max(s, 0.0), 1.0))
    return np.array(targets)


def _unfold_run_chain(blocks, h, s0, caches=None):
    """Blocks update the bracket coordinate through a sigmoid, so the state
    can never leave the bracket (the asymptotic left edge is unreachable)."""
    s = s0
    sig_grads = [] if caches is not None else None
    for block in blocks:
        cache = {} if caches is not None else None
        (z,) = nn.forward(block, np.column_stack([h, s]), cache)
        s = nn.sigmoid(z[:, 0])
        if caches is not None:
            caches.append(cache)
            sig_grads.append(s * (1.0 - s))
    return s, sig_grads


def _train_unfold(train_ds, val_ds, params, cfg, solver_cfg, catalog, seeds):
    n = train_ds.n_users
    depth = unfold_depth(n)
    h_tr = build_inputs(train_ds.instances, params, catalog.selected)
    h_va = build_inputs(val_ds.instances, params, catalog.selected)
    s_tr = _unfold_state_targets(train_ds, params, solver_cfg)
    s_va = _unfold_state_targets(val_ds, params, solver_cfg)

    d_in = h_tr.shape[1] + 1
    h_norm = _log_normalizer(h_tr)
    log_mask = np.append(np.ones(h_tr.shape[1], dtype=bool), False)
    in_norm = nn.Normalizer(
        mean=np.append(h_norm.mean, 0.5), std=np.append(h_norm.std, 1.0), log10=log_mask
    )
    block_spec = nn.MlpSpec(
        layer_sizes=[d_in, 4 * n, 2 * n, 1],
        heads=[nn.Head("raw", 1, np.ones(1))],
    )
    seed_seq = np.random.SeedSequence(seeds[0]).spawn(depth)
    blocks = [
        nn.init_model(block_spec, np.random.Generator(np.random.PCG64(s)), normalizer=in_norm)
        for s in seed_seq
    ]

    def batch_grad(idx):
        h, target = h_tr[idx], s_tr[idx]
        caches = []
        s_final, sig_grads = _unfold_run_chain(blocks, h, np.full(len(idx), 0.5), caches)
        err = s_final - target
        loss = float(np.mean(err ** 2))
        grads = [None] * depth
        ds = 2.0 * err / err.size
        for t in range(depth - 1, -1, -1):
            dz = ds * sig_grads[t]
            wg, bg, gin = nn.backward(blocks[t], caches[t], [dz[:, None]], want_input_grad=True)
            grads[t] = (wg, bg)
            ds = gin[:, -1]        # gradient through the state channel
        return loss, grads

    def val_loss():
        s_final, _ = _unfold_run_chain(blocks, h_va, np.full(len(h_va), 0.5))
        return float(np.mean((s_final - s_va) ** 2))

    report = nn.train_loop(
        blocks, len(h_tr), batch_grad, val_loss, cfg,
        extra_config={"unfold_depth": depth, "loss": "mse_on_final_state", "state": "geometric bracket coordinate"},
    )
    return blocks, {}, report


def train_pipeline(
    kind: str,
    train_ds,
    val_ds,
    params: SystemParams,
    cfg: nn.TrainConfig | None = None,
    solver_cfg: SolverConfig = DEFAULT_CONFIG,
    catalog: FeatureCatalog | None = None,
) -> TrainedPipeline:
    """Assemble and train one algorithm on OPT-labeled datasets."""
    if kind not in ALGORITHM_KINDS:
        raise ValueError(f"unknown algorithm kind {kind!r}")
    if kind == OPT:
        n = train_ds.n_users if train_ds is not None else 0
        return TrainedPipeline(kind=OPT, n_users=n, params=params, solver_cfg=solver_cfg)
    cfg = cfg or nn.TrainConfig()
    if not (train_ds.labeled and val_ds.labeled):
        raise ValueError(f"{kind} training requires OPT labels")
    if train_ds.n_users != val_ds.n_users:
        raise ValueError("train/val user counts differ")

    seeds = list(np.random.SeedSequence(cfg.seed).generate_state(3))
    catalog = _resolve_catalog(kind, train_ds, params, catalog)
    if kind in (DNN, XAI_DNN):
        models, norms, report = _train_dnn_like(kind, train_ds, val_ds, params, cfg, catalog, seeds)
    elif kind == XAI_DNN_OSM:
        models, norms, report = _train_power_only(train_ds, val_ds, params, cfg, catalog, seeds)
    elif kind == XAI_SB_DNN_OSM:
        models, norms, report = _train_sbdnn(train_ds, val_ds, params, cfg, solver_cfg, catalog, seeds)
    else:
        models, norms, report = _train_unfold(train_ds, val_ds, params, cfg, solver_cfg, catalog, seeds)

    return TrainedPipeline(
        kind=kind,
        n_users=train_ds.n_users,
        params=params,
        solver_cfg=solver_cfg,
        models=models,
        catalog=None if kind == DNN else catalog,
        label_norms=norms,
        reports=[report],
        meta={"train_size": len(train_ds), "val_size": len(val_ds), "seed": cfg.seed},
    )


# ---------------------------------------------------------------------------
# repair and inference

def repair(
    schedule: Schedule,
    inst: NetworkInstance,
    params: SystemParams,
    demand_bits: np.ndarray | None = None,
    max_rounds: int = 3,
):
    """Feasibility repair: one OSM round on the residual demands of deficient users.

    Returns (schedule, rounds, report). Deficient users re-transmit their
    residual at their predicted power (exact zeros fall back to P_max,
    positive predictions clamp into [1e-9, P_max]); the appended EH segment is
    stretched so cumulative energy causality holds for the flattened schedule.
    """
    n = inst.n_users
    if demand_bits is None:
        demand_bits = np.full(n, params.demand_bits)
    tol = REPAIR_OUTAGE_RTOL * float(np.sum(demand_bits))
    harvest = params.harvest_rate_w_per_gain * inst.gain_down

    report = evaluate(schedule, inst, params, demand_bits)
    if report.outage_bits <= tol and report.all_ok():
        return schedule, 0, report

    rounds = 0
    while report.outage_bits > tol and rounds < max_rounds:
        residual = np.maximum(0.0, demand_bits - report.delivered_bits)
        deficient = residual > REPAIR_OUTAGE_RTOL * np.maximum(demand_bits, 1.0)
        p_round = np.where(
            schedule.power_w <= 0.0,
            params.max_tx_power_w,
            np.clip(schedule.power_w, REPAIR_POWER_MIN_W, params.max_tx_power_w),
        )
        extra = osm(
            p_round[deficient],
            NetworkInstance(gain_up=inst.gain_up[deficient], gain_down=inst.gain_down[deficient]),
            params,
            residual[deficient],
        )
        # flatten the two segments: the energy-equivalent average power
        # delivers at least both segments' bits (rate is concave in power),
        # spends exactly their combined energy, and respects the cap
        p_eff = effective_power(schedule, inst, params)
        it_s = schedule.it_s.copy()
        it_s[deficient] += extra.it_s
        p_final = p_eff
        energy = p_eff[deficient] * schedule.it_s[deficient] + p_round[deficient] * extra.it_s
        p_final[deficient] = np.where(it_s[deficient] > 0, energy / np.maximum(it_s[deficient], 1e-300), 0.0)
        schedule = Schedule(eh_s=schedule.eh_s + extra.eh_s, it_s=it_s, power_w=p_final)
        report = evaluate(schedule, inst, params, demand_bits)
        rounds += 1

    if report.outage_bits <= tol and not report.all_ok():
        # demand met but a stored power overshoots a constraint: normalize it
        schedule = Schedule(
            eh_s=schedule.eh_s,
            it_s=schedule.it_s,
            power_w=effective_power(schedule, inst, params),
        )
        report = evaluate(schedule, inst, params, demand_bits)
    return schedule, rounds, report


class _CallCounter:
    def __init__(self):
        self.calls = 0

    def forward(self, model, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.calls += x.shape[0]
        return nn.forward(model, x)


def _dnn_like_infer(pipe, inst, counter):
    kinds = RAW_INPUT_KINDS if pipe.kind == DNN else pipe.catalog.selected
    x = build_inputs([inst], pipe.params, kinds)
    (power,) = counter.forward(pipe.models[0], x)
    (times,) = counter.forward(pipe.models[1], x)
    sched = Schedule(eh_s=float(times[0, 0]), it_s=times[0, 1:], power_w=power[0])
    return repair(sched, inst, pipe.params)


def _osm_infer(pipe, inst, counter):
    x = build_inputs([inst], pipe.params, pipe.catalog.selected)
    (power,) = counter.forward(pipe.models[0], x)
    sched = osm(power[0], inst, pipe.params)
    return repair(sched, inst, pipe.params)


def _sbdnn_infer(pipe, inst, counter):
    params, cfg = pipe.params, pipe.solver_cfg
    net = pipe.models[0]
    feats = isc_features(inst, params)
    lower, upper = eh_bracket(feats, params, cfg)
    h = build_inputs([inst], params, pipe.catalog.selected)[0]

    def predicted_total(tau0s):
        x = np.column_stack([np.tile(h, (tau0s.size, 1)), tau0s])
        (taus,) = counter.forward(net, x)
        return tau0s + taus.sum(axis=1)

    guard = lower / (1.0 + cfg.bracket_eps) * (1.0 + 1e-12)

    def dsign(x):
        step = DIFF_STEP_REL * x
        if x - step <= guard:
            return -1.0
        pair = predicted_total(np.array([x + step, x - step]))
        return float(pair[0] - pair[1])

    clamped = False
    if lower >= upper:
        tau0 = upper
    elif dsign(lower) >= 0.0:
        tau0 = lower
    elif dsign(upper) <= 0.0:
        tau0 = upper
    else:
        lo, hi = lower, upper
        iters = 0
        while hi - lo > cfg.rel_tol * hi and iters < 50:
            mid = 0.5 * (lo + hi)
            if dsign(mid) < 0.0:
                lo = mid
            else:
                hi = mid
            iters += 1
        tau0 = 0.5 * (lo + hi)
    if not lower <= tau0 <= upper:
        tau0 = min(max(tau0, lower), upper)
        clamped = True

    x = np.append(h, tau0)
    (taus,) = counter.forward(net, x[None, :])
    it_s = taus[0]
    harvest = params.harvest_rate_w_per_gain * inst.gain_down
    power = np.minimum(params.max_tx_power_w, harvest * tau0 / it_s)
    sched = Schedule(eh_s=tau0, it_s=it_s, power_w=power)
    out = repair(sched, inst, params)
    return out, clamped


def _unfold_infer(pipe, inst, counter):
    params, cfg = pipe.params, pipe.solver_cfg
    feats = isc_features(inst, params)
    lower, upper = eh_bracket(feats, params, cfg)
    h = build_inputs([inst], params, pipe.catalog.selected)
    clamped = False
    if lower >= upper:
        tau0 = upper
    else:
        s = np.array([0.5])        # geometric bracket midpoint
        for block in pipe.models:
            (z,) = counter.forward(block, np.column_stack([h, s]))
            s = nn.sigmoid(z[:, 0])
        tau0 = float(lower * (upper / lower) ** s[0])
    it_s = np.array(
        [
            it_duration(tau0, feats.alpha[i], feats.beta[i], feats.theta[i], params, cfg)
            for i in range(inst.n_users)
        ]
    )
    harvest = params.harvest_rate_w_per_gain * inst.gain_down
    power = np.minimum(params.max_tx_power_w, harvest * tau0 / it_s)
    sched = Schedule(eh_s=tau0, it_s=it_s, power_w=power)
    out = repair(sched, inst, params)
    return out, clamped


def infer(pipe: TrainedPipeline, inst: NetworkInstance, params: SystemParams | None = None):
    """Run one instance through the pipeline; returns (Schedule, EvalRecord).

    Wall-clock time covers the full inference path (feature construction,
    model evaluations, mappings, repair) and excludes I/O.
    """
    params = params or pipe.params
    if inst.n_users != pipe.n_users and pipe.kind != OPT:
        raise ValueError(f"instance has {inst.n_users} users, pipeline expects {pipe.n_users}")
    counter = _CallCounter()
    clamped = False

    start = time.perf_counter()
    if pipe.kind == OPT:
        sched = solve_opt(inst, params, pipe.solver_cfg)
        rounds = 0
        elapsed = time.perf_counter() - start
        report = evaluate(sched, inst, params)
    else:
        if pipe.kind in (DNN, XAI_DNN):
            (sched, rounds, report) = _dnn_like_infer(pipe, inst, counter)
        elif pipe.kind == XAI_DNN_OSM:
            (sched, rounds, report) = _osm_infer(pipe, inst, counter)
        elif pipe.kind == XAI_SB_DNN_OSM:
            (sched, rounds, report), clamped = _sbdnn_infer(pipe, inst, counter)
        else:
            (sched, rounds, report), clamped = _unfold_infer(pipe, inst, counter)
        elapsed = time.perf_counter() - start

    record = EvalRecord(
        length_s=schedule_length(sched),
        wall_time_s=elapsed,
        repair_rounds=rounds,
        outage_bits=report.outage_bits,
        model_calls=counter.calls,
        bracket_clamped=clamped,
    )
    return sched, record


# ---------------------------------------------------------------------------
# bundle serialization

def save_pipeline(pipe: TrainedPipeline, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_files = []
    for i, model in enumerate(pipe.models):
        name = f"model_{i:02d}.json"
        nn.save_model(model, out_dir / name)
        model_files.append(name)
    manifest = {
        "version": BUNDLE_VERSION,
        "kind": pipe.kind,
        "n_users": pipe.n_users,
        "params": pipe.params.to_dict(),
        "params_hash": params_hash(pipe.params),
        "solver_cfg": pipe.solver_cfg.to_dict(),
        "catalog": pipe.catalog.to_dict() if pipe.catalog else None,
        "label_norms": {k: v.to_dict() for k, v in pipe.label_norms.items()},
        "model_files": model_files,
        "meta": pipe.meta,
        "reports": [r.to_dict() for r in pipe.reports],
    }
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    for i, report in enumerate(pipe.reports):
        path = out_dir / (f"train_report.csv" if len(pipe.reports) == 1 else f"train_report_{i}.csv")
        with open(path, "w") as fh:
            fh.write("# config: " + json.dumps(report.config, sort_keys=True) + "\n")
            fh.write("epoch,train_loss,val_loss\n")
            for e, (tr, va) in enumerate(zip(report.train_losses, report.val_losses), start=1):
                fh.write(f"{e},{tr!r},{va!r}\n")


def load_pipeline(bundle_dir) -> TrainedPipeline:
    bundle_dir = Path(bundle_dir)
    with open(bundle_dir / MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    if manifest["version"] != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {manifest['version']}")
    reports = []
    for rd in manifest.get("reports", []):
        reports.append(
            nn.TrainReport(
                train_losses=rd["train_losses"],
                val_losses=rd["val_losses"],
                best_epoch=rd["best_epoch"],
                stop_epoch=rd["stop_epoch"],
                early_stopped=rd["early_stopped"],
                config=rd["config"],
            )
        )
    return TrainedPipeline(
        kind=manifest["kind"],
        n_users=manifest["n_users"],
        params=SystemParams.from_dict(manifest["params"]),
        solver_cfg=SolverConfig(**manifest["solver_cfg"]),
        models=[nn.load_model(bundle_dir / name) for name in manifest["model_files"]],
        catalog=FeatureCatalog.from_dict(manifest["catalog"]) if manifest["catalog"] else None,
        label_norms={k: nn.Normalizer.from_dict(v) for k, v in manifest["label_norms"].items()},
        reports=reports,
        meta=manifest.get("meta", {}),
    )
