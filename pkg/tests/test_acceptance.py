"""Acceptance gate: one test per release criterion, each at its stated tolerance.

The heavy fixtures run the desk-scale experiment (n=5, 10k training instances,
three seeds) once per session; expect the module to take on the order of
15-20 minutes. Wall-clock comparisons (criterion 7) pin the pure-Python solver
backend so all algorithms run in the same interpreter lane.
"""

import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from wpcnsched import (
    SystemParams,
    NetworkInstance,
    isc_features,
    osm,
    evaluate,
    solve_opt,
    schedule_length,
)
from wpcnsched import backend
from wpcnsched.channel import generate_dataset, generate_instance
from wpcnsched.datasets import Dataset, read_dataset
from wpcnsched.solver import it_duration, total_length, eh_bracket
from wpcnsched.nn import TrainConfig, Head, MlpSpec, Normalizer, init_model, forward, backward, joint_mse_outage
from wpcnsched.xai import mi_score, select_features, kind_matrices, KIND_ORDER
from wpcnsched import pipelines as pl
from wpcnsched.cli import ExperimentConfig, cmd_bench, cmd_generate, cmd_label, dataset_path, seed_dir, read_report

from oracles import grid_min_length, total_length_curve

PARAMS = SystemParams()
LADDER_KINDS = ["OPT", "DNN", "XAI_DNN", "XAI_DNN_OSM", "XAI_SB_DNN_OSM", "DEEP_UNFOLD"]
LADDER_SEEDS = [1, 2, 3]


def _report(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS — {detail}")


@pytest.fixture(scope="session")
def ladder(tmp_path_factory):
    """Desk-scale run: n=5, 10k/1k/1k, all kinds, three seeds."""
    out = tmp_path_factory.mktemp("ladder")
    cfg = ExperimentConfig(
        n_users=[5],
        train_size=10_000,
        val_size=1_000,
        test_size=1_000,
        kinds=LADDER_KINDS,
        seeds=LADDER_SEEDS,
        out_dir=str(out),
    )
    cmd_bench(cfg, verbose=False)
    return cfg


@pytest.fixture(scope="session")
def pipes_n10(tmp_path_factory):
    """Quickly trained pipelines at n=10 for the runtime-ordering criterion."""
    params = PARAMS
    n = 10
    train_insts = generate_dataset(n, 1_500, params, seed=401)
    val_insts = generate_dataset(n, 300, params, seed=402)
    test_insts = generate_dataset(n, 300, params, seed=403)
    train_ds = Dataset(params, 401, n, train_insts, [solve_opt(i, params) for i in train_insts])
    val_ds = Dataset(params, 402, n, val_insts, [solve_opt(i, params) for i in val_insts])
    cfg = TrainConfig(max_epochs=15, seed=9)
    pipes = {
        kind: pl.train_pipeline(kind, train_ds, val_ds, params, cfg)
        for kind in (pl.OPT, pl.DNN, pl.XAI_DNN, pl.XAI_DNN_OSM, pl.XAI_SB_DNN_OSM)
    }
    return pipes, test_insts


def test_c01_oracle_optimality():
    """solve_opt matches a 1e5-point EH-duration grid within 1e-6 on 100 instances."""
    start = time.perf_counter()
    worst = 0.0
    count = 0
    for n in (2, 3, 4, 5, 6):
        for k in range(20):
            inst = generate_instance(n, PARAMS, np.random.default_rng(7000 + 100 * n + k))
            got = schedule_length(solve_opt(inst, PARAMS))
            want, _ = grid_min_length(inst, PARAMS, points=100_000)
            worst = max(worst, abs(got - want) / want)
            count += 1
    elapsed = time.perf_counter() - start
    assert count == 100
    assert worst <= 1e-6
    assert elapsed < 120.0
    _report("C1 oracle optimality", f"worst rel dev {worst:.2e} over 100 instances in {elapsed:.0f}s")


def test_c02_feasibility_suite(ladder):
    """All OPT and post-repair schedules feasible over 1k test instances."""
    cfg = ladder
    test_ds = read_dataset(dataset_path(cfg, 5, 1, "test"))
    tol_outage = 1e-9 * PARAMS.demand_bits * 5
    checked = 0
    for kind in LADDER_KINDS:
        if kind == pl.OPT:
            pipe = pl.TrainedPipeline(kind=pl.OPT, n_users=5, params=cfg.system, solver_cfg=cfg.solver)
        else:
            pipe = pl.load_pipeline(seed_dir(cfg, 5, 1) / "bundles" / kind)
        for inst in test_ds.instances:
            sched, rec = pl.infer(pipe, inst)
            rep = evaluate(sched, inst, PARAMS)
            assert rep.outage_bits <= tol_outage, kind
            assert np.all(sched.power_w <= PARAMS.max_tx_power_w * (1 + 1e-12)), kind
            harvest = PARAMS.harvest_rate_w_per_gain * inst.gain_down
            assert np.all(sched.power_w * sched.it_s <= harvest * sched.eh_s * (1 + 1e-9)), kind
            checked += 1
    _report("C2 feasibility suite", f"{checked} schedules across {len(LADDER_KINDS)} algorithms, zero violations")


def test_c03_osm_round_trip():
    """osm(OPT powers) reproduces OPT's durations within 1e-9 relative on 1k instances."""
    worst = 0.0
    for k in range(1000):
        inst = generate_instance(5, PARAMS, np.random.default_rng(90_000 + k))
        opt = solve_opt(inst, PARAMS)
        rt = osm(opt.power_w, inst, PARAMS)
        worst = max(worst, abs(rt.eh_s - opt.eh_s) / opt.eh_s)
        worst = max(worst, float(np.max(np.abs(rt.it_s - opt.it_s) / opt.it_s)))
    assert worst <= 1e-9
    _report("C3 OSM round-trip", f"worst rel dev {worst:.2e} over 1000 instances")


def test_c04_convexity_monotonicity():
    """Sampled total length is convex in the EH duration; IT durations non-increasing."""
    for k in range(100):
        inst = generate_instance(4, PARAMS, np.random.default_rng(50_000 + k))
        feats = isc_features(inst, PARAMS)
        lower, upper = eh_bracket(feats, PARAMS)
        grid = np.linspace(lower * (1 + 1e-6), max(upper, lower * 2) * 1.2, 200)
        curve = np.array([total_length(x, feats, PARAMS) for x in grid])
        assert np.all(np.diff(curve, 2) >= -1e-9 * np.max(curve))
        for i in range(inst.n_users):
            taus = np.array(
                [it_duration(x, feats.alpha[i], feats.beta[i], feats.theta[i], PARAMS) for x in grid]
            )
            assert np.all(np.diff(taus) <= 1e-12 * taus[0])
    _report("C4 convexity/monotonicity", "100 instances, 200-point curves")


def test_c05_gradient_correctness():
    """Backprop matches central finite differences to 1e-4 on a <=500-param net."""
    rng = np.random.default_rng(12)
    n = 3
    heads = [Head("power", n, np.full(n, 0.01)), Head("time", n + 1, np.full(n + 1, 1e-4))]
    spec = MlpSpec(layer_sizes=[4, 8, 2 * n + 1], heads=heads)
    model = init_model(spec, np.random.default_rng(7))
    assert model.n_params <= 500

    x = np.abs(rng.normal(size=(6, 4))) + 0.5
    gamma = 10.0 ** rng.uniform(4, 6, size=(6, n))
    label_p = rng.uniform(0.002, 0.01, size=(6, n))
    label_t = rng.uniform(1e-5, 1e-4, size=(6, n + 1))
    p_norm = Normalizer.fit(label_p)
    t_norm = Normalizer.fit(label_t)

    def loss_value():
        power, times = forward(model, x)
        loss, _, _ = joint_mse_outage(power, times, label_p, label_t, gamma, 50.0, 1e6, p_norm, t_norm, 1.0, 1.0)
        return loss

    cache = {}
    power, times = forward(model, x, cache)
    _, g_p, g_t = joint_mse_outage(power, times, label_p, label_t, gamma, 50.0, 1e6, p_norm, t_norm, 1.0, 1.0)
    wg, bg = backward(model, cache, [g_p, g_t])

    h = 1e-6
    worst = 0.0
    for arr, grad in zip(model.weights + model.biases, wg + bg):
        flat_p, flat_g = arr.ravel(), grad.ravel()
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            up = loss_value()
            flat_p[k] = orig - h
            dn = loss_value()
            flat_p[k] = orig
            fd = (up - dn) / (2 * h)
            denom = max(abs(fd), abs(flat_g[k]), 1e-10)
            worst = max(worst, abs(fd - flat_g[k]) / denom)
    assert worst <= 1e-4
    _report("C5 gradient correctness", f"max rel error {worst:.2e} over {model.n_params} parameters")


def _seed_avg_gaps(cfg):
    data, _ = read_report(Path(cfg.out_dir) / "bench_summary.csv")
    gaps = {}
    for kind in LADDER_KINDS:
        vals = [data["mean_gap_pct"][i] for i in range(len(data["kind"])) if data["kind"][i] == kind]
        assert len(vals) == len(LADDER_SEEDS)
        gaps[kind] = float(np.mean(vals))
    return gaps


def test_c06_accuracy_ladder(ladder):
    """Seed-averaged mean schedule-length gaps: OSM kind within 5%, hybrid orderings hold."""
    gaps = _seed_avg_gaps(ladder)
    assert gaps[pl.XAI_DNN_OSM] <= 5.0
    assert gaps[pl.XAI_SB_DNN_OSM] <= gaps[pl.XAI_DNN_OSM]
    assert gaps[pl.XAI_DNN] <= gaps[pl.DNN]
    detail = ", ".join(f"{k} {gaps[k]:+.2f}%" for k in (pl.DNN, pl.XAI_DNN, pl.XAI_DNN_OSM, pl.XAI_SB_DNN_OSM))
    _report("C6 accuracy ladder", detail)


def test_c07_runtime_ordering(pipes_n10):
    """Median inference times at n=10 in the matched pure-Python solver lane."""
    pipes, test_insts = pipes_n10
    previous = backend.active_backend_name()
    backend.use_backend("python")
    try:
        medians = {}
        calls = {}
        for kind, pipe in pipes.items():
            pl.infer(pipe, test_insts[0])      # warm
            times = []
            for inst in test_insts:
                _, rec = pl.infer(pipe, inst)
                times.append(rec.wall_time_s)
                calls[kind] = rec.model_calls
            medians[kind] = float(np.median(times))
    finally:
        backend.use_backend(previous)

    assert calls[pl.XAI_DNN_OSM] == 1
    assert calls[pl.DNN] == 2
    assert calls[pl.XAI_DNN] == 2
    assert calls[pl.XAI_DNN_OSM] < calls[pl.DNN]
    assert medians[pl.XAI_DNN_OSM] < medians[pl.XAI_DNN] < medians[pl.OPT]
    assert medians[pl.XAI_SB_DNN_OSM] < medians[pl.OPT]
    detail = ", ".join(f"{k} {medians[k] * 1e3:.3f}ms" for k in medians)
    _report("C7 runtime ordering", detail)


def test_c08_convergence_ordering(ladder):
    """XAI+DNN+OSM reaches its final normalized validation loss at least as fast as DNN."""
    cfg = ladder
    wins = 0
    details = []
    for seed in LADDER_SEEDS:
        data, _ = read_report(seed_dir(cfg, 5, seed) / "reports" / "loss_curves.csv")
        epochs = {}
        for kind in (pl.DNN, pl.XAI_DNN_OSM):
            curve = [data["val_loss_norm"][i] for i in range(len(data["kind"])) if data["kind"][i] == kind]
            final = curve[-1]
            epochs[kind] = next(e for e, v in enumerate(curve, start=1) if v <= final + 0.1)
        wins += int(epochs[pl.XAI_DNN_OSM] <= epochs[pl.DNN])
        details.append(f"seed {seed}: {epochs[pl.XAI_DNN_OSM]} vs {epochs[pl.DNN]}")
    assert wins >= 2, details
    _report("C8 convergence ordering", f"majority {wins}/3 ({'; '.join(details)})")


def test_c09_mi_estimator():
    """MI sanity checks and agreement of the binned top-3 with a k-NN estimator."""
    rng = np.random.default_rng(2024)
    x = rng.normal(size=100_000)
    y = rng.normal(size=100_000)
    self_mi = mi_score(x, x, 64)
    indep_mi = mi_score(x, y, 64)
    assert abs(self_mi - np.log(64)) <= 0.05 * np.log(64)
    assert indep_mi <= 0.01

    instances = generate_dataset(5, 100_000, PARAMS, seed=2027)
    lengths = np.array([schedule_length(solve_opt(inst, PARAMS)) for inst in instances])
    catalog = select_features(instances, lengths, PARAMS)

    from sklearn.feature_selection import mutual_info_regression

    mats = kind_matrices(instances, PARAMS)
    knn_scores = {}
    for kind in KIND_ORDER:
        per_user = [
            mutual_info_regression(mats[kind][:, i][:, None], lengths, n_neighbors=3, random_state=0)[0]
            for i in range(5)
        ]
        knn_scores[kind] = float(np.mean(per_user))
    knn_top3 = set(sorted(KIND_ORDER, key=lambda k: -knn_scores[k])[:3])
    assert knn_top3 == set(catalog.selected)
    _report(
        "C9 MI estimator",
        f"MI(x,x)={self_mi:.3f} (ln64={np.log(64):.3f}), indep={indep_mi:.4f}, top-3 {catalog.selected} agreed",
    )


def test_c10_determinism(tmp_path):
    """Bit-identical datasets, models and report CSVs on rerun (timings excluded)."""
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cfg = ExperimentConfig(
            n_users=[3],
            train_size=150,
            val_size=40,
            test_size=40,
            kinds=LADDER_KINDS,
            seeds=[5],
            train=TrainConfig(max_epochs=6),
            out_dir=str(out),
        )
        cmd_bench(cfg, verbose=False)
        runs.append(out)

    a, b = runs
    compared = 0
    for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        if "timing" in rel.name:
            continue
        assert (b / rel).exists(), rel
        assert filecmp.cmp(a / rel, b / rel, shallow=False), f"{rel} differs between reruns"
        compared += 1
    assert compared > 10
    _report("C10 determinism", f"{compared} files byte-identical across reruns")
