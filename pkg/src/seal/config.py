"""Experiment configuration: a strict, flat INI format.

Every key is declared below; unknown sections or keys fail loudly, every
numeric field is range-checked, and referenced dataset files must exist at
load time. normalized_dump() gives a canonical text rendering whose sha256
ties emitted artifacts back to the exact configuration.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .data import DATASET_KINDS, resolve_data_path
from .errors import ConfigError, DataFormatError
from .fitting import DistillConfig
from .metrics import FlatnessConfig
from .optim import OptConfig
from .search import TRADEOFF_MODES, SearchConfig
from .space import TARGETS, SpaceConfig
from .transfer import POLICIES

_DATASET_KEYS = {
    "synthetic": {"kind", "classes", "train_samples", "test_samples", "side",
                  "noise", "seed"},
    "idx": {"kind", "train_images", "train_labels", "test_images",
            "test_labels"},
    "cifar": {"kind", "train_batches", "test_batch"},
    "table": {"kind", "train_path", "test_path"},
}

_KNOWN_KEYS = {
    "stream": {"tasks", "tau"},
    "train": {"epochs", "lr", "momentum", "batch_size"},
    "distill": {"alpha", "temperature"},
    "space": {"blocks", "depth_levels", "width_levels", "kernel_levels",
              "resolution_levels", "base_channels", "in_channels", "classes"},
    "bank": {"epochs", "seed", "path"},
    "search": {"n_start", "iterations", "infill", "population", "generations",
               "crossover", "mutation", "top_m", "cv_folds"},
    "flatness": {"sigma", "draws"},
    "run": {"seeds", "policy", "target", "out", "tradeoff",
            "warmup_fraction", "search_fraction"},
}

_FILE_KEYS = ("train_images", "train_labels", "test_images", "test_labels",
              "test_batch", "train_path", "test_path")


@dataclass
class ExperimentConfig:
    dataset_kind: str
    dataset_params: dict
    num_tasks: int
    tau: float
    epochs: int
    opt: OptConfig
    distill: DistillConfig
    space: SpaceConfig
    bank_epochs: int
    bank_seed: int
    bank_path: str | None
    search: SearchConfig
    flatness: FlatnessConfig
    seeds: tuple = (0,)
    policy: str = "warm_start"
    target: str = "last_first"
    out_dir: str = "runs/exp"
    tradeoff: str = "knee"
    warmup_fraction: float = 0.2
    search_fraction: float = 0.5
    extras: dict = field(default_factory=dict, compare=False)


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _get(sec, key, cast, default=None):
    if key not in sec or sec[key].strip() == "":
        if default is None:
            raise ConfigError(f"missing required key {key!r} in [{sec.name}]")
        return default
    try:
        return cast(sec[key].strip())
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{sec.name}] {key}: {err}") from None


def _num_list(cast):
    return lambda s: tuple(cast(tok.strip()) for tok in s.split(",") if tok.strip())


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    for name in parser.sections():
        if name == "dataset":
            continue
        if name not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{name}]")
        for key in parser[name]:
            if key not in _KNOWN_KEYS[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
    if "dataset" not in parser:
        raise ConfigError("config needs a [dataset] section")

    ds = parser["dataset"]
    kind = _get(ds, "kind", str)
    if kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}; "
                          f"expected one of {DATASET_KINDS}")
    for key in ds:
        if key not in _DATASET_KEYS[kind]:
            raise ConfigError(f"unknown key {key!r} in [dataset] for kind {kind}")
    params = {k: v.strip() for k, v in ds.items() if k != "kind"}
    for key in _FILE_KEYS:
        if key in params and not resolve_data_path(params[key]).exists():
            raise DataFormatError(
                f"[dataset] {key}: file not found: {params[key]}")
    if "train_batches" in params:
        for tok in params["train_batches"].split(","):
            if not resolve_data_path(tok.strip()).exists():
                raise DataFormatError(
                    f"[dataset] train_batches: file not found: {tok.strip()}")
    if kind == "synthetic":
        _require(int(params.get("classes", 10)) >= 2,
                 "[dataset] classes must be >= 2")
        _require(int(params.get("train_samples", 1500)) >= 1
                 and int(params.get("test_samples", 500)) >= 1,
                 "[dataset] sample counts must be positive")
        _require(float(params.get("noise", 0.25)) >= 0.0,
                 "[dataset] noise must be >= 0")

    if "stream" not in parser:
        raise ConfigError("config needs a [stream] section")
    for name in _KNOWN_KEYS:
        if name not in parser:
            parser.add_section(name)

    stream = parser["stream"]
    num_tasks = _get(stream, "tasks", int)
    tau = _get(stream, "tau", float)
    _require(num_tasks >= 2, f"[stream] tasks must be >= 2, got {num_tasks}")
    _require(0.0 < tau < 1.0, f"[stream] tau must lie in (0, 1), got {tau}")

    tr = parser["train"]
    epochs = _get(tr, "epochs", int, 3)
    opt = OptConfig(lr=_get(tr, "lr", float, 0.05),
                    momentum=_get(tr, "momentum", float, 0.9),
                    batch_size=_get(tr, "batch_size", int, 32))
    _require(epochs >= 1, f"[train] epochs must be >= 1, got {epochs}")
    _require(opt.lr > 0, f"[train] lr must be positive, got {opt.lr}")
    _require(0.0 <= opt.momentum < 1.0,
             f"[train] momentum must lie in [0, 1), got {opt.momentum}")
    _require(opt.batch_size >= 1, "[train] batch_size must be >= 1")

    di = parser["distill"]
    distill = DistillConfig(alpha=_get(di, "alpha", float, 0.5),
                            temperature=_get(di, "temperature", float, 2.0))

    sp = parser["space"]
    space = SpaceConfig(
        num_blocks=_get(sp, "blocks", int, 3),
        depth_levels=_get(sp, "depth_levels", _num_list(int), (1, 2, 3)),
        width_levels=_get(sp, "width_levels", _num_list(float),
                          (1.0, 1.5, 2.0)),
        kernel_levels=_get(sp, "kernel_levels", _num_list(int), (3, 5)),
        resolution_levels=_get(sp, "resolution_levels", _num_list(int),
                               (16, 24, 32)),
        base_channels=_get(sp, "base_channels", _num_list(int), (8, 16, 32)),
        in_channels=_get(sp, "in_channels", int, 1),
        num_classes=_get(sp, "classes", int, 10))

    bk = parser["bank"]
    bank_epochs = _get(bk, "epochs", int, 3)
    bank_seed = _get(bk, "seed", int, 0)
    bank_path = bk.get("path", "").strip() or None
    _require(bank_epochs >= 1, "[bank] epochs must be >= 1")

    se = parser["search"]
    mutation = None
    if se.get("mutation", "").strip():
        mutation = float(se["mutation"])
    search = SearchConfig(
        n_start=_get(se, "n_start", int, 100),
        iterations=_get(se, "iterations", int, 10),
        infill_per_iteration=_get(se, "infill", int, 8),
        population=_get(se, "population", int, 40),
        generations=_get(se, "generations", int, 30),
        crossover=_get(se, "crossover", float, 0.9),
        mutation=mutation,
        top_m=_get(se, "top_m", int, 5),
        cv_folds=_get(se, "cv_folds", int, 5))

    fl = parser["flatness"]
    flatness = FlatnessConfig(sigma=_get(fl, "sigma", float, 0.05),
                              draws=_get(fl, "draws", int, 5))

    ru = parser["run"]
    seeds = _get(ru, "seeds", _num_list(int), (0,))
    _require(len(seeds) >= 1 and all(s >= 0 for s in seeds),
             "[run] seeds must be a nonempty list of nonnegative ints")
    policy = _get(ru, "policy", str, "warm_start")
    target = _get(ru, "target", str, "last_first")
    tradeoff = _get(ru, "tradeoff", str, "knee")
    _require(policy in POLICIES, f"[run] policy must be one of {POLICIES}")
    _require(target in TARGETS, f"[run] target must be one of {TARGETS}")
    _require(tradeoff in TRADEOFF_MODES,
             f"[run] tradeoff must be one of {TRADEOFF_MODES}")
    warmup = _get(ru, "warmup_fraction", float, 0.2)
    searchf = _get(ru, "search_fraction", float, 0.5)
    _require(0.0 < warmup < 0.9, "[run] warmup_fraction must lie in (0, 0.9)")
    _require(0.0 < searchf <= 1.0,
             "[run] search_fraction must lie in (0, 1]")

    return ExperimentConfig(
        dataset_kind=kind, dataset_params=params, num_tasks=num_tasks,
        tau=tau, epochs=epochs, opt=opt, distill=distill, space=space,
        bank_epochs=bank_epochs, bank_seed=bank_seed, bank_path=bank_path,
        search=search, flatness=flatness, seeds=tuple(seeds), policy=policy,
        target=target, out_dir=_get(ru, "out", str, "runs/exp"),
        tradeoff=tradeoff, warmup_fraction=warmup, search_fraction=searchf)


def normalized_dump(cfg: ExperimentConfig) -> str:
    """Canonical text rendering: fixed section order, sorted keys, repr
    floats. Identical configs produce identical dumps byte for byte."""
    lines = []

    def sec(name, pairs):
        lines.append(f"[{name}]")
        for k in sorted(pairs):
            lines.append(f"{k} = {pairs[k]}")
        lines.append("")

    sec("dataset", {"kind": cfg.dataset_kind, **cfg.dataset_params})
    sec("stream", {"tasks": cfg.num_tasks, "tau": repr(cfg.tau)})
    sec("train", {"epochs": cfg.epochs, "lr": repr(cfg.opt.lr),
                  "momentum": repr(cfg.opt.momentum),
                  "batch_size": cfg.opt.batch_size})
    sec("distill", {"alpha": repr(cfg.distill.alpha),
                    "temperature": repr(cfg.distill.temperature)})
    s = cfg.space
    sec("space", {"blocks": s.num_blocks,
                  "depth_levels": ",".join(map(str, s.depth_levels)),
                  "width_levels": ",".join(map(repr, s.width_levels)),
                  "kernel_levels": ",".join(map(str, s.kernel_levels)),
                  "resolution_levels": ",".join(map(str, s.resolution_levels)),
                  "base_channels": ",".join(map(str, s.base_channels)),
                  "in_channels": s.in_channels, "classes": s.num_classes})
    sec("bank", {"epochs": cfg.bank_epochs, "seed": cfg.bank_seed,
                 "path": cfg.bank_path or ""})
    q = cfg.search
    sec("search", {"n_start": q.n_start, "iterations": q.iterations,
                   "infill": q.infill_per_iteration,
                   "population": q.population, "generations": q.generations,
                   "crossover": repr(q.crossover),
                   "mutation": "" if q.mutation is None else repr(q.mutation),
                   "top_m": q.top_m, "cv_folds": q.cv_folds})
    sec("flatness", {"sigma": repr(cfg.flatness.sigma),
                     "draws": cfg.flatness.draws})
    sec("run", {"seeds": ",".join(map(str, cfg.seeds)), "policy": cfg.policy,
                "target": cfg.target, "tradeoff": cfg.tradeoff,
                "out": cfg.out_dir,
                "warmup_fraction": repr(cfg.warmup_fraction),
                "search_fraction": repr(cfg.search_fraction)})
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(normalized_dump(cfg).encode()).hexdigest()
