"""Command-line harness: dataset generation, labeling, training, evaluation
and the full benchmark chain.

All outputs are CSV/JSONL with the generating config echoed in a comment
header. Wall-clock timings go to separate *_timing.csv files so that every
other emitted file is bit-reproducible from (config, seed).
"""

import argparse
import json
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import SystemParams
from .core import evaluate, schedule_length
from .solver import SolverConfig, solve_opt
from .channel import generate_dataset
from .datasets import Dataset, read_dataset, write_dataset
from .nn import TrainConfig
from .xai import DEFAULT_BINS, DEFAULT_BUDGET
from . import pipelines as pl
from . import backend

SPLITS = ("train", "val", "test")


@dataclass
class ExperimentConfig:
    system: SystemParams = field(default_factory=SystemParams)
    n_users: list[int] = field(default_factory=lambda: [3, 5, 10])
    train_size: int = 10_000
    val_size: int = 1_000
    test_size: int = 1_000
    kinds: list[str] = field(default_factory=lambda: list(pl.ALGORITHM_KINDS))
    seeds: list[int] = field(default_factory=lambda: [1])
    solver: SolverConfig = field(default_factory=SolverConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    restarts: int = 3           # training runs per kind; lowest validation loss wins
    mi_bins: int = DEFAULT_BINS
    mi_budget: int = DEFAULT_BUDGET
    out_dir: str = "runs/default"

    def __post_init__(self):
        for name in ("train_size", "val_size", "test_size", "restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.kinds:
            raise ValueError("kinds must be non-empty")
        unknown = set(self.kinds) - set(pl.ALGORITHM_KINDS)
        if unknown:
            raise ValueError(f"unknown kinds: {sorted(unknown)}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "n_users": list(self.n_users),
            "train_size": self.train_size,
            "val_size": self.val_size,
            "test_size": self.test_size,
            "kinds": list(self.kinds),
            "seeds": list(self.seeds),
            "solver": self.solver.to_dict(),
            "train": self.train.to_dict(),
            "restarts": self.restarts,
            "mi_bins": self.mi_bins,
            "mi_budget": self.mi_budget,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "system" in d:
            d["system"] = SystemParams.from_dict(d["system"])
        if "solver" in d:
            d["solver"] = SolverConfig(**d["solver"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def echo_line(self) -> str:
        return "# config: " + json.dumps(self.to_dict(), sort_keys=True)


def derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def seed_dir(cfg: ExperimentConfig, n: int, seed: int) -> Path:
    return Path(cfg.out_dir) / f"n{n}" / f"seed{seed}"


def dataset_path(cfg, n, seed, split) -> Path:
    return seed_dir(cfg, n, seed) / f"{split}.jsonl"


def bundle_dir(cfg, n, seed, kind) -> Path:
    return seed_dir(cfg, n, seed) / "bundles" / kind


def _write_csv(path, cfg: ExperimentConfig, seed, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(cfg.echo_line() + "\n")
        fh.write(f"# seed: {seed}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def read_report(path):
    """CSV reports as {column: list}; comment lines are returned separately."""
    comments, columns, rows = [], None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line)
            elif columns is None:
                columns = line.split(",")
            elif line:
                rows.append(line.split(","))
    data = {c: [] for c in columns}
    for row in rows:
        for c, v in zip(columns, row):
            try:
                data[c].append(int(v))
            except ValueError:
                try:
                    data[c].append(float(v))
                except ValueError:
                    data[c].append(v)
    return data, comments


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: ExperimentConfig, n_list=None, seeds=None, verbose=True) -> int:
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    for n in n_list or cfg.n_users:
        for seed in seeds or cfg.seeds:
            for idx, split in enumerate(SPLITS):
                path = dataset_path(cfg, n, seed, split)
                path.parent.mkdir(parents=True, exist_ok=True)
                split_seed = derived_seed(seed, n, idx)
                ds = Dataset(
                    params=cfg.system,
                    seed=split_seed,
                    n_users=n,
                    instances=generate_dataset(n, sizes[split], cfg.system, split_seed),
                )
                write_dataset(path, ds)
                if verbose:
                    print(f"wrote {path} ({sizes[split]} rows)")
    return 0


def label_file(path, out_path=None, solver_cfg=SolverConfig(), verbose=True) -> int:
    path = Path(path)
    ds = read_dataset(path)
    fresh = 0
    for i, (inst, label) in enumerate(zip(ds.instances, ds.labels)):
        if label is not None:
            continue       # idempotent: labeled rows are kept as-is
        try:
            ds.labels[i] = solve_opt(inst, ds.params, solver_cfg)
        except Exception as exc:
            raise RuntimeError(f"{path}: row id {i}: solver failed: {exc}") from exc
        fresh += 1
    write_dataset(out_path or path, ds)
    if verbose:
        print(f"labeled {path} ({fresh} new, {len(ds) - fresh} kept)")
    return 0


def cmd_label(cfg: ExperimentConfig, n_list=None, seeds=None, verbose=True) -> int:
    for n in n_list or cfg.n_users:
        for seed in seeds or cfg.seeds:
            for split in SPLITS:
                label_file(dataset_path(cfg, n, seed, split), solver_cfg=cfg.solver, verbose=verbose)
    return 0


def cmd_train(cfg: ExperimentConfig, kind: str, n: int, seed: int, verbose=True) -> int:
    """Train `restarts` candidates; the lowest-validation-loss one becomes the
    bundle root, and every candidate is kept under restart{r}/ so evaluation
    can average gaps over the whole ensemble instead of trusting one draw."""
    train_ds = read_dataset(dataset_path(cfg, n, seed, "train"))
    val_ds = read_dataset(dataset_path(cfg, n, seed, "val"))
    out = bundle_dir(cfg, n, seed, kind)
    pipe = None
    best = np.inf
    for r in range(cfg.restarts):
        train_cfg = TrainConfig(**{**cfg.train.to_dict(), "seed": derived_seed(seed, 1000, r)})
        candidate = pl.train_pipeline(kind, train_ds, val_ds, cfg.system, train_cfg, cfg.solver)
        if cfg.restarts > 1:
            pl.save_pipeline(candidate, out / f"restart{r}")
        val = min(candidate.reports[0].val_losses) if candidate.reports else np.inf
        if val < best or pipe is None:
            best = val
            pipe = candidate
    pl.save_pipeline(pipe, out)
    if verbose:
        report = pipe.reports[0] if pipe.reports else None
        note = (
            f"best val {min(report.val_losses):.4g} @ epoch {report.best_epoch}/{report.stop_epoch}"
            if report else "no training needed"
        )
        print(f"trained {kind} (n={n}, seed={seed}, {cfg.restarts} restarts): {note} -> {out}")
    return 0


def _normalized_curve(vals):
    lo, hi = min(vals), max(vals)
    if hi <= lo:
        return [0.0 for _ in vals]
    return [(v - lo) / (hi - lo) for v in vals]


def cmd_eval(cfg: ExperimentConfig, n: int, seed: int, kinds=None, verbose=True) -> int:
    kinds = list(kinds or cfg.kinds)
    if pl.OPT not in kinds:
        kinds = [pl.OPT] + kinds
    test_ds = read_dataset(dataset_path(cfg, n, seed, "test"))
    pipes = {}
    for kind in kinds:
        if kind == pl.OPT:
            pipes[kind] = pl.TrainedPipeline(kind=pl.OPT, n_users=n, params=cfg.system, solver_cfg=cfg.solver)
        else:
            pipes[kind] = pl.load_pipeline(bundle_dir(cfg, n, seed, kind))
            if pipes[kind].n_users != n:
                raise ValueError(f"{kind} bundle is for n={pipes[kind].n_users}, expected {n}")

    summary_rows, timing_rows, curve_rows = [], [], []
    lengths_by_kind = {}
    candidate_lengths = {}
    for kind in kinds:
        pipe = pipes[kind]
        pl.infer(pipe, test_ds.instances[0])       # warm cache/model
        lengths, times, rounds, outages, calls, clamps = [], [], [], [], [], 0
        for inst in test_ds.instances:
            sched, rec = pl.infer(pipe, inst)
            rep = evaluate(sched, inst, cfg.system)
            if rep.outage_bits > 1e-9 * cfg.system.demand_bits * n or not rep.all_ok():
                raise RuntimeError(f"{kind}: infeasible schedule escaped repair")
            lengths.append(rec.length_s)
            times.append(rec.wall_time_s)
            rounds.append(rec.repair_rounds)
            outages.append(rec.outage_bits)
            calls.append(rec.model_calls)
            clamps += int(rec.bracket_clamped)
        lengths_by_kind[kind] = lengths
        # gap statistics average over every training restart, not just the
        # validation-selected one, so one lucky run cannot skew a comparison
        extras = []
        root = bundle_dir(cfg, n, seed, kind)
        for r in range(cfg.restarts):
            cand_dir = root / f"restart{r}"
            if (cand_dir / pl.MANIFEST_NAME).exists():
                cand = pl.load_pipeline(cand_dir)
                extras.append([pl.infer(cand, inst)[1].length_s for inst in test_ds.instances])
        candidate_lengths[kind] = extras if extras else [lengths]
        hist = {r: rounds.count(r) for r in range(3)}
        summary_rows.append(
            [
                kind, n, seed, len(lengths),
                float(np.mean(lengths)), float(np.median(lengths)),
                float(np.mean(outages)),
                hist[0], hist[1], sum(1 for r in rounds if r >= 2),
                float(np.mean(calls)), clamps,
            ]
        )
        timing_rows.append(
            [kind, n, seed, float(np.mean(times)), float(statistics.median(times))]
        )
        report = pipes[kind].reports[0] if pipes[kind].reports else None
        if report is not None:
            for epoch, (val, norm) in enumerate(
                zip(report.val_losses, _normalized_curve(report.val_losses)), start=1
            ):
                curve_rows.append([kind, n, seed, epoch, float(val), float(norm)])

    opt_lengths = np.asarray(lengths_by_kind[pl.OPT])
    opt_mean = opt_lengths.mean()
    for row in summary_rows:
        row.append(float(100.0 * (row[4] / opt_mean - 1.0)))
        gaps = [100.0 * np.mean(np.asarray(ls) / opt_lengths - 1.0) for ls in candidate_lengths[row[0]]]
        row.append(float(np.mean(gaps)))

    reports_dir = seed_dir(cfg, n, seed) / "reports"
    _write_csv(
        reports_dir / "eval_summary.csv", cfg, seed,
        ["kind", "n", "seed", "count", "mean_length_s", "median_length_s",
         "mean_outage_bits", "repair_r0", "repair_r1", "repair_r2plus",
         "mean_model_calls", "bracket_clamped", "gap_vs_opt_pct", "mean_gap_pct"],
        summary_rows,
    )
    _write_csv(
        reports_dir / "eval_timing.csv", cfg, seed,
        ["kind", "n", "seed", "mean_time_s", "median_time_s"],
        timing_rows,
    )
    _write_csv(
        reports_dir / "loss_curves.csv", cfg, seed,
        ["kind", "n", "seed", "epoch", "val_loss", "val_loss_norm"],
        curve_rows,
    )
    if verbose:
        for row in summary_rows:
            print(f"eval n={n} seed={seed} {row[0]:16s} mean_len={row[4]:.4e} mean_gap={row[-1]:+.2f}%")
    return 0


def cmd_bench(cfg: ExperimentConfig, verbose=True) -> int:
    for n in cfg.n_users:
        for seed in cfg.seeds:
            cmd_generate(cfg, [n], [seed], verbose=verbose)
            cmd_label(cfg, [n], [seed], verbose=verbose)
            for kind in cfg.kinds:
                if kind != pl.OPT:
                    cmd_train(cfg, kind, n, seed, verbose=verbose)
            cmd_eval(cfg, n, seed, verbose=verbose)

    summary_rows, timing_rows = [], []
    for n in cfg.n_users:
        for seed in cfg.seeds:
            reports = seed_dir(cfg, n, seed) / "reports"
            data, _ = read_report(reports / "eval_summary.csv")
            summary_rows.extend(zip(*[data[c] for c in data]))
            tdata, _ = read_report(reports / "eval_timing.csv")
            timing_rows.extend(zip(*[tdata[c] for c in tdata]))
    data_cols = ["kind", "n", "seed", "count", "mean_length_s", "median_length_s",
                 "mean_outage_bits", "repair_r0", "repair_r1", "repair_r2plus",
                 "mean_model_calls", "bracket_clamped", "gap_vs_opt_pct", "mean_gap_pct"]
    _write_csv(Path(cfg.out_dir) / "bench_summary.csv", cfg, cfg.seeds[0], data_cols, summary_rows)
    _write_csv(
        Path(cfg.out_dir) / "bench_timing.csv", cfg, cfg.seeds[0],
        ["kind", "n", "seed", "mean_time_s", "median_time_s"], timing_rows,
    )
    if verbose:
        print(f"bench complete -> {cfg.out_dir}/bench_summary.csv")
    return 0


def validate_dataset_file(path, verbose=True) -> bool:
    try:
        ds = read_dataset(path)
    except ValueError as exc:
        if verbose:
            print(f"FAIL {path}: {exc}")
        return False
    tol = 1e-9 * ds.params.demand_bits * ds.n_users
    for i, (inst, label) in enumerate(zip(ds.instances, ds.labels)):
        if label is None:
            continue
        rep = evaluate(label, inst, ds.params)
        if rep.outage_bits > tol or not rep.all_ok():
            if verbose:
                print(f"FAIL {path}: row {i}: infeasible label (outage {rep.outage_bits:.3g} bits)")
            return False
    if verbose:
        print(f"OK   {path}")
    return True


def cmd_validate(paths, verbose=True) -> int:
    ok = True
    for path in paths:
        path = Path(path)
        if path.is_dir():
            try:
                pl.load_pipeline(path)
                if verbose:
                    print(f"OK   {path}")
            except Exception as exc:
                ok = False
                if verbose:
                    print(f"FAIL {path}: {exc}")
        else:
            ok = validate_dataset_file(path, verbose) and ok
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing

def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.n is not None:
        cfg.n_users = [args.n]
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wpcnsched", description=__doc__)
    parser.add_argument("--backend", choices=backend.available_backends(),
                        help="solver kernel backend (default: compiled when available)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override config seeds with one seed")
        p.add_argument("--n", type=int, help="override config n_users with one value")
        p.add_argument("--out", help="override config output directory")

    p = sub.add_parser("generate", help="write train/val/test datasets")
    common(p)

    p = sub.add_parser("label", help="attach exact-solver labels")
    common(p)
    p.add_argument("paths", nargs="*", help="explicit dataset files (default: config datasets)")

    p = sub.add_parser("train", help="train one algorithm")
    common(p)
    p.add_argument("--kind", required=True, choices=[k for k in pl.ALGORITHM_KINDS if k != pl.OPT])

    p = sub.add_parser("eval", help="evaluate trained bundles on the test set")
    common(p)
    p.add_argument("--kind", action="append", help="restrict to these kinds")

    p = sub.add_parser("bench", help="full chain over every n and seed in the config")
    common(p)

    p = sub.add_parser("validate", help="check dataset files / pipeline bundles")
    p.add_argument("paths", nargs="+")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.backend:
        backend.use_backend(args.backend)
    if args.command == "validate":
        return cmd_validate(args.paths)
    cfg = _load_config(args)
    if args.command == "generate":
        return cmd_generate(cfg)
    if args.command == "label":
        if args.paths:
            for path in args.paths:
                label_file(path, solver_cfg=cfg.solver)
            return 0
        return cmd_label(cfg)
    if args.command == "train":
        rc = 0
        for n in cfg.n_users:
            for seed in cfg.seeds:
                rc |= cmd_train(cfg, args.kind, n, seed)
        return rc
    if args.command == "eval":
        rc = 0
        for n in cfg.n_users:
            for seed in cfg.seeds:
                rc |= cmd_eval(cfg, n, seed, kinds=args.kind)
        return rc
    if args.command == "bench":
        return cmd_bench(cfg)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
