"""Command-line driver: search, post-search evaluation, baselines, and
paired ablations, all emitting reproducible CSV artifacts.

Pool layout: the front warmup_fraction of the training pool pretrains the
reference bank; the remainder is the incremental pool. Search-time
evaluations see only the leading search_fraction slice of that pool (and of
the test set), post-search commands use all of it. Every command writes a
manifest tying its outputs to the config hash and seeds.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, load_config, normalized_dump
from .data import load_dataset
from .errors import ConfigError, DataFormatError, NumericError, SealError
from .evaluator import CandidateEvaluator
from .fitting import DistillConfig
from .gradcheck import run_gradcheck
from .incremental import (BASELINE_KINDS, fwt_reference, make_task_stream,
                          run_baseline, run_incremental)
from .metrics import (average_accuracy, compute_report, forgetting_metrics,
                      forward_transfer)
from .network import init_params
from .search import (load_archive, save_archive, search_loop, select_tradeoff)
from .space import ArchEncoding, decode_genome, decode_plan
from .surrogates import SURROGATE_KINDS
from .transfer import load_bank, pretrain_reference, save_bank, slice_reference

METRIC_COLUMNS = ("method", "acc_mean", "acc_std", "forg_mean", "forg_std",
                  "fwt_mean", "fwt_std")
TRAJECTORY_COLUMNS = ("seed", "task", "average_accuracy",
                      "average_incremental_accuracy", "average_forgetting",
                      "backward_transfer", "forward_transfer")
ABLATIONS = ("init_policy", "distill", "expand_target")


# ---------------------------------------------------------------------------
# shared plumbing


@dataclass
class Pools:
    bank_x: np.ndarray
    bank_y: np.ndarray
    search: tuple      # (train_x, train_y, test_x, test_y) reduced slice
    full: tuple        # same shape, whole incremental pool


def split_pools(cfg: ExperimentConfig) -> Pools:
    train, test = load_dataset(cfg.dataset_kind, cfg.dataset_params)
    warm_n = int(round(cfg.warmup_fraction * len(train)))
    pool_x, pool_y = train.x[warm_n:], train.y[warm_n:]
    s_n = int(round(cfg.search_fraction * len(pool_x)))
    s_t = int(round(cfg.search_fraction * len(test.x)))
    return Pools(
        bank_x=train.x[:warm_n], bank_y=train.y[:warm_n],
        search=(pool_x[:s_n], pool_y[:s_n], test.x[:s_t], test.y[:s_t]),
        full=(pool_x, pool_y, test.x, test.y))


def obtain_bank(cfg: ExperimentConfig, pools: Pools):
    if cfg.bank_path and Path(cfg.bank_path).exists():
        return load_bank(cfg.bank_path, cfg.space)
    bank = pretrain_reference(cfg.space, pools.bank_x, pools.bank_y,
                              cfg.bank_epochs, opt=cfg.opt,
                              seed=cfg.bank_seed)
    if cfg.bank_path:
        Path(cfg.bank_path).parent.mkdir(parents=True, exist_ok=True)
        save_bank(cfg.bank_path, bank)
    return bank


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}")


def _write_manifest(out: Path, name: str, cfg: ExperimentConfig, **payload):
    body = {"version": __version__,
            "config_sha256": config_hash(cfg),
            "config": normalized_dump(cfg),
            "created_unix": time.time(),
            **payload}
    path = out / name
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")


def _pick_seeds(cfg: ExperimentConfig, repeats, seed_flag) -> tuple:
    if seed_flag is not None:
        n = repeats or 1
        return tuple(seed_flag + i for i in range(n))
    if repeats is None:
        return cfg.seeds
    seeds = list(cfg.seeds)[:repeats]
    while len(seeds) < repeats:
        seeds.append(max(seeds + [max(cfg.seeds)]) + 1)
    return tuple(seeds)


def _aggregate_rows(method: str, triples) -> list:
    """Per-seed rows plus one mean/std row (n-1 denominator, blank for n=1).

    Each triple is (seed, acc, forg, fwt) in percent; None leaves the cell
    empty, matching the dashes conventionally shown for joint training.
    """
    rows = []
    for seed, acc, forg, fwt in triples:
        rows.append([f"{method}[seed={seed}]", _fmt(acc), "", _fmt(forg), "",
                     _fmt(fwt), ""])

    def stats(idx):
        vals = [t[idx] for t in triples if t[idx] is not None]
        if not vals:
            return "", ""
        mean = _fmt(np.mean(vals))
        std = _fmt(np.std(vals, ddof=1)) if len(vals) > 1 else ""
        return mean, std

    a_m, a_s = stats(1)
    f_m, f_s = stats(2)
    w_m, w_s = stats(3)
    rows.append([method, a_m, a_s, f_m, f_s, w_m, w_s])
    return rows


def _load_top_entry(out: Path, cfg: ExperimentConfig):
    path = out / "topm.jsonl"
    if not path.exists():
        raise ConfigError(f"{path} not found; run `seal search` into this "
                          f"output directory first")
    top = load_archive(path)
    return select_tradeoff(top, cfg.tradeoff)


def _fwt_references(cfg, specs, resolution, stream, seed) -> list:
    refs = [None]
    for i in range(1, cfg.num_tasks):
        refs.append(fwt_reference(specs, stream, i, cfg.epochs, cfg.opt,
                                  seed=seed, resolution=resolution))
    return refs


# ---------------------------------------------------------------------------
# per-seed measurements (module level so worker processes can pickle them)


def seal_seed_metrics(cfg: ExperimentConfig, pool, bank, genome, seed,
                      policy=None, target=None, distill=None):
    enc, growth = decode_genome(genome, cfg.space)
    stream = make_task_stream(*pool, cfg.num_tasks, seed=seed)
    result = run_incremental(
        enc, growth, stream, bank, cfg.space, cfg.tau,
        distill or cfg.distill, cfg.epochs, cfg.opt, seed=seed,
        policy=policy or cfg.policy, target=target or cfg.target)
    k = cfg.num_tasks - 1
    plan = decode_plan(enc, cfg.space)
    refs = _fwt_references(cfg, list(plan.specs), plan.resolution, stream, seed)
    acc = 100.0 * average_accuracy(result.matrix, k)
    _, forg, _ = forgetting_metrics(result.matrix, k)
    fwt = 100.0 * forward_transfer(result.matrix, refs, k)
    return (seed, acc, 100.0 * forg, fwt), result


def baseline_seed_metrics(cfg: ExperimentConfig, pool, enc, kind, seed,
                          refs=None, bank=None):
    plan = decode_plan(enc, cfg.space)
    specs = list(plan.specs)
    stream = make_task_stream(*pool, cfg.num_tasks, seed=seed)
    if bank is not None and cfg.policy == "warm_start":
        init = slice_reference(bank, enc)
    else:
        init_seq = np.random.SeedSequence(seed).spawn(2)[0]
        init = init_params(specs, np.random.default_rng(init_seq))
    result = run_baseline(kind, specs, init, stream, cfg.epochs, cfg.opt,
                          seed=seed, resolution=plan.resolution)
    k = cfg.num_tasks - 1
    acc = 100.0 * average_accuracy(result.matrix, k)
    if kind == "joint":
        return (seed, acc, None, None)
    _, forg, _ = forgetting_metrics(result.matrix, k)
    if refs is None:
        refs = _fwt_references(cfg, specs, plan.resolution, stream, seed)
    fwt = 100.0 * forward_transfer(result.matrix, refs, k)
    return (seed, acc, 100.0 * forg, fwt)


# ---------------------------------------------------------------------------
# subcommands


def cmd_search(cfg: ExperimentConfig, out: Path, seed: int, jobs: int) -> int:
    pools = split_pools(cfg)
    bank = obtain_bank(cfg, pools)
    evaluator = CandidateEvaluator(
        space=cfg.space, bank=bank,
        train_x=pools.search[0], train_y=pools.search[1],
        test_x=pools.search[2], test_y=pools.search[3],
        num_tasks=cfg.num_tasks, tau=cfg.tau, distill=cfg.distill,
        epochs=cfg.epochs, opt=cfg.opt, flatness=cfg.flatness,
        policy=cfg.policy, target=cfg.target)
    search_cfg = dataclasses.replace(cfg.search, seed=seed)
    result = search_loop(cfg.space, search_cfg, evaluator, jobs=jobs)

    out.mkdir(parents=True, exist_ok=True)
    save_archive(out / "archive.jsonl", result.archive)
    print(f"wrote {out / 'archive.jsonl'}")
    save_archive(out / "topm.jsonl", result.top)
    print(f"wrote {out / 'topm.jsonl'}")
    tau_cols = ([f"error_tau_{k}" for k in SURROGATE_KINDS]
                + [f"flatness_tau_{k}" for k in SURROGATE_KINDS])
    rows = []
    for rep in result.reports:
        rows.append([rep.iteration, rep.error_surrogate, rep.flatness_surrogate,
                     rep.front_size, _fmt(rep.hypervolume), rep.evaluated,
                     rep.failures]
                    + [_fmt(rep.error_taus.get(k)) for k in SURROGATE_KINDS]
                    + [_fmt(rep.flatness_taus.get(k)) for k in SURROGATE_KINDS])
    _write_csv(out / "iterations.csv",
               ("iteration", "error_surrogate", "flatness_surrogate",
                "front_size", "hypervolume", "evaluated", "failures",
                *tau_cols), rows)
    _write_manifest(out, "manifest.json", cfg, command="search", seed=seed,
                    jobs=jobs,
                    artifacts=["archive.jsonl", "topm.jsonl", "iterations.csv"],
                    archive_size=len(result.archive),
                    failures=len(result.failures),
                    top=[list(e.genome) for e in result.top])
    pick = select_tradeoff(result.top, cfg.tradeoff)
    print(f"archive {len(result.archive)} entries, "
          f"{len(result.failures)} failures; top-{len(result.top)} saved")
    print(f"{cfg.tradeoff} pick: genome={list(pick.genome)} "
          f"error={pick.error:.4f} flatness={pick.flatness:.4f} "
          f"params={pick.param_count}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, out: Path, repeats, seed_flag,
                 jobs: int) -> int:
    entry = _load_top_entry(out, cfg)
    pools = split_pools(cfg)
    bank = obtain_bank(cfg, pools)
    seeds = _pick_seeds(cfg, repeats, seed_flag)
    triples = []
    for seed in seeds:
        triple, _ = seal_seed_metrics(cfg, pools.full, bank, entry.genome,
                                      seed)
        triples.append(triple)
    _write_csv(out / "metrics.csv", METRIC_COLUMNS,
               _aggregate_rows("seal", triples))
    _write_manifest(out, "manifest_evaluate.json", cfg, command="evaluate",
                    seeds=list(seeds), genome=list(entry.genome),
                    artifacts=["metrics.csv"])
    return 0


def cmd_baselines(cfg: ExperimentConfig, out: Path, kinds, repeats, seed_flag,
                  jobs: int) -> int:
    for kind in kinds:
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline kind {kind!r}; expected "
                              f"some of {BASELINE_KINDS}")
    pools = split_pools(cfg)
    bank = obtain_bank(cfg, pools) if cfg.policy == "warm_start" else None
    top_path = out / "topm.jsonl"
    if top_path.exists():
        entry = select_tradeoff(load_archive(top_path), cfg.tradeoff)
        enc, _ = decode_genome(entry.genome, cfg.space)
    else:
        # no search artifacts: fall back to the canonical smallest base
        b = cfg.space.num_blocks
        s = cfg.space.max_slots
        enc = ArchEncoding(0, (0,) * b, ((0,) * s,) * b, ((0,) * s,) * b)
    seeds = _pick_seeds(cfg, repeats, seed_flag)
    plan = decode_plan(enc, cfg.space)
    rows = []
    for kind in kinds:
        triples = []
        for seed in seeds:
            stream = make_task_stream(*pools.full, cfg.num_tasks, seed=seed)
            refs = (None if kind == "joint" else
                    _fwt_references(cfg, list(plan.specs), plan.resolution,
                                    stream, seed))
            triples.append(baseline_seed_metrics(cfg, pools.full, enc, kind,
                                                 seed, refs=refs, bank=bank))
        rows.extend(_aggregate_rows(kind, triples))
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "baselines.csv", METRIC_COLUMNS, rows)
    _write_manifest(out, "manifest_baselines.json", cfg, command="baselines",
                    kinds=list(kinds), seeds=list(seeds),
                    encoding_genome=None if not top_path.exists()
                    else list(entry.genome),
                    artifacts=["baselines.csv"])
    return 0


def cmd_ablate(cfg: ExperimentConfig, out: Path, which: str, repeats,
               seed_flag, jobs: int) -> int:
    if which not in ABLATIONS:
        raise ConfigError(f"unknown ablation {which!r}; "
                          f"expected one of {ABLATIONS}")
    entry = _load_top_entry(out, cfg)
    pools = split_pools(cfg)
    bank = obtain_bank(cfg, pools)
    seeds = _pick_seeds(cfg, repeats, seed_flag)
    if which == "init_policy":
        arms = [("warm_start", {"policy": "warm_start"}),
                ("random", {"policy": "random"})]
    elif which == "distill":
        arms = [("distill", {}),
                ("alpha0", {"distill": DistillConfig(
                    0.0, cfg.distill.temperature)})]
    else:
        arms = [("last_first", {"target": "last_first"}),
                ("early_first", {"target": "early_first"})]
    summary = []
    trajectory_files = []
    for arm_name, overrides in arms:
        triples, trajectory = [], []
        for seed in seeds:
            triple, result = seal_seed_metrics(cfg, pools.full, bank,
                                               entry.genome, seed, **overrides)
            triples.append(triple)
            for k in range(cfg.num_tasks):
                rep = compute_report(result.matrix, k)
                trajectory.append([seed, *rep.csv_row()])
        name = f"ablate_{which}_{arm_name}.csv"
        _write_csv(out / name, TRAJECTORY_COLUMNS, trajectory)
        trajectory_files.append(name)
        summary.extend(_aggregate_rows(arm_name, triples))
    _write_csv(out / f"ablate_{which}.csv", METRIC_COLUMNS, summary)
    _write_manifest(out, f"manifest_ablate_{which}.json", cfg,
                    command=f"ablate:{which}", seeds=list(seeds),
                    genome=list(entry.genome),
                    artifacts=trajectory_files + [f"ablate_{which}.csv"])
    return 0


def cmd_gradcheck() -> int:
    worst = run_gradcheck()
    for kind in sorted(worst):
        print(f"{kind:>12s}  max relative error {worst[kind]:.3e}")
    peak = max(worst.values())
    if peak >= 1e-3:
        raise NumericError(f"gradient check failed: max relative error "
                           f"{peak:.3e} >= 1e-3")
    print(f"all layer kinds pass (peak {peak:.3e} < 1e-3)")
    return 0


def cmd_report(out: Path) -> int:
    manifest = out / "manifest.json"
    if not manifest.exists():
        raise ConfigError(f"no manifest at {manifest}")
    body = json.loads(manifest.read_text())
    print(f"run {out}  (config sha256 {body['config_sha256'][:16]}..., "
          f"version {body['version']})")
    archive_path = out / "archive.jsonl"
    if archive_path.exists():
        archive = load_archive(archive_path)
        errs = [e.error for e in archive]
        flats = [e.flatness for e in archive]
        print(f"archive: {len(archive)} entries, error "
              f"[{min(errs):.4f}, {max(errs):.4f}], flatness "
              f"[{min(flats):.4f}, {max(flats):.4f}]")
    top_path = out / "topm.jsonl"
    if top_path.exists():
        for e in load_archive(top_path):
            print(f"  top genome={list(e.genome)} error={e.error:.4f} "
                  f"flatness={e.flatness:.4f} params={e.param_count} "
                  f"expansions={e.expansions}")
    for name in ("metrics.csv", "baselines.csv"):
        path = out / name
        if path.exists():
            print(f"-- {name} --")
            print(path.read_text().rstrip())
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sp, needs_config=True):
    sp.add_argument("--config", required=needs_config,
                    help="experiment config (INI)")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the run seed(s)")
    sp.add_argument("--out", default=None, help="output directory override")
    sp.add_argument("--repeats", type=int, default=None,
                    help="number of seeds to run")
    sp.add_argument("--jobs", type=int, default=1,
                    help="parallel evaluation workers")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seal",
        description="expansion-aware architecture search for data-"
                    "incremental learning")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("search", help="run the surrogate NAS loop"))
    _add_common(sub.add_parser("evaluate",
                               help="score the searched pick on full pools"))
    p_base = sub.add_parser("baselines", help="run continual-learning "
                                              "baselines")
    _add_common(p_base)
    p_base.add_argument("kinds", nargs="*", default=list(BASELINE_KINDS))
    p_abl = sub.add_parser("ablate", help="paired ablation arms")
    _add_common(p_abl)
    p_abl.add_argument("which", choices=ABLATIONS)
    sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_rep = sub.add_parser("report", help="summarize artifacts in --out")
    p_rep.add_argument("--out", required=False, default=None)
    p_rep.add_argument("--config", required=False, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "report":
            if args.out is None and args.config is None:
                raise ConfigError("report needs --out or --config")
            out = Path(args.out) if args.out else \
                Path(load_config(args.config).out_dir)
            return cmd_report(out)
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else Path(cfg.out_dir)
        if args.command == "search":
            seed = args.seed if args.seed is not None else cfg.seeds[0]
            return cmd_search(cfg, out, seed, args.jobs)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.repeats, args.seed, args.jobs)
        if args.command == "baselines":
            return cmd_baselines(cfg, out, tuple(args.kinds), args.repeats,
                                 args.seed, args.jobs)
        if args.command == "ablate":
            return cmd_ablate(cfg, out, args.which, args.repeats, args.seed,
                              args.jobs)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as err:
        print(f"error[config]: {err}", file=sys.stderr)
        return 2
    except DataFormatError as err:
        print(f"error[data-format]: {err}", file=sys.stderr)
        return 3
    except SealError as err:
        print(f"error[{type(err).__name__}]: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
