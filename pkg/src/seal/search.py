"""Surrogate-assisted two-objective search over the architecture genome.

The loop keeps an archive of measured candidates, fits one cheap predictor
per objective each iteration (kind chosen by cross-validated rank fidelity),
runs a multi-objective GA on the predictors, and sends a small batch of
novel, well-spread candidates to the real evaluator. Objectives are
minimized as (size-weighted error, -flatness).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConstraintError, NumericError, SealError
from .space import (ExpansionVector, SpaceConfig, encode_genome, genome_bounds,
                    genome_length, repair_genome, sample_constrained)
from .surrogates import fit_adaptive_surrogate

# reference corner for the 2-d hypervolume of (error, -flatness) points;
# errors stay well under 4 and -flatness under 1 on every fixture we run
HV_REFERENCE = (4.0, 1.0)

TRADEOFF_MODES = ("best_acc", "best_flat", "knee")


@dataclass(frozen=True)
class ArchiveEntry:
    """One measured candidate: genome plus both objectives and provenance."""

    genome: tuple
    error: float          # size-weighted final error, minimized
    flatness: float       # perturbation robustness, maximized
    seed: int
    aa_final: float
    param_count: int
    expansions: int

    def __post_init__(self):
        if not (np.isfinite(self.error) and np.isfinite(self.flatness)):
            raise NumericError(
                f"archive entry needs finite objectives, got "
                f"({self.error}, {self.flatness})")


@dataclass(frozen=True)
class EvalFailure:
    genome: tuple
    seed: int
    message: str


@dataclass
class SearchConfig:
    n_start: int = 100
    iterations: int = 10
    infill_per_iteration: int = 8
    population: int = 40
    generations: int = 30
    crossover: float = 0.9
    mutation: float | None = None    # None -> 1/genome_length
    top_m: int = 5
    seed: int = 0
    cv_folds: int = 5
    retries: int = 50

    def __post_init__(self):
        if self.n_start < 8:
            raise ConfigError(f"n_start must be >= 8, got {self.n_start}")
        if self.iterations < 0 or self.infill_per_iteration < 1:
            raise ConfigError("iterations must be >= 0 and infill >= 1")
        if self.population < 4 or self.generations < 1:
            raise ConfigError("population must be >= 4 and generations >= 1")
        if not 0.0 <= self.crossover <= 1.0:
            raise ConfigError(f"crossover rate {self.crossover} out of [0, 1]")
        if self.mutation is not None and not 0.0 < self.mutation <= 1.0:
            raise ConfigError(f"mutation rate {self.mutation} out of (0, 1]")
        if self.top_m < 1:
            raise ConfigError("top_m must be >= 1")


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    error_surrogate: str
    flatness_surrogate: str
    error_taus: dict = field(compare=False)
    flatness_taus: dict = field(compare=False)
    front_size: int = 0
    hypervolume: float = 0.0
    evaluated: int = 0
    failures: int = 0


@dataclass(frozen=True)
class SearchResult:
    archive: tuple
    top: tuple
    reports: tuple
    failures: tuple


# ---------------------------------------------------------------------------
# dominance machinery (all objectives minimized)


def objective_rows(entries) -> np.ndarray:
    return np.array([(e.error, -e.flatness) for e in entries], dtype=float)


def non_dominated_sort(points) -> list:
    """Partition row indices into fronts; front 0 is the nondominated set."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ConfigError(f"expected a 2-d point array, got shape {pts.shape}")
    le = (pts[:, None, :] <= pts[None, :, :]).all(axis=2)
    lt = (pts[:, None, :] < pts[None, :, :]).any(axis=2)
    dominates = le & lt                       # [i, j]: i dominates j
    n_dominators = dominates.sum(axis=0).astype(int)
    fronts = []
    current = np.where(n_dominators == 0)[0]
    while len(current):
        fronts.append(current)
        n_dominators[current] = -1            # retire this front
        n_dominators -= dominates[current].sum(axis=0)
        current = np.where(n_dominators == 0)[0]
    return fronts


def crowding_distance(points) -> np.ndarray:
    """Per-point spread measure within one front; boundary points get inf."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n <= 2:
        return np.full(n, np.inf)
    crowd = np.zeros(n)
    for m in range(pts.shape[1]):
        order = np.argsort(pts[:, m], kind="stable")
        span = pts[order[-1], m] - pts[order[0], m]
        crowd[order[0]] = crowd[order[-1]] = np.inf
        if span > 0:
            gaps = (pts[order[2:], m] - pts[order[:-2], m]) / span
            crowd[order[1:-1]] += gaps
    return crowd


def _rank_and_crowd(obj: np.ndarray):
    rank = np.empty(len(obj), dtype=int)
    crowd = np.empty(len(obj), dtype=float)
    for r, fr in enumerate(non_dominated_sort(obj)):
        rank[fr] = r
        crowd[fr] = crowding_distance(obj[fr])
    return rank, crowd


# ---------------------------------------------------------------------------
# candidate generation


def random_genome(space: SpaceConfig, rng: np.random.Generator) -> tuple:
    """A feasible genome: constrained base point plus nonzero growth bits."""
    enc = sample_constrained(space, rng)
    bits = int(rng.integers(1, 8))
    d = ExpansionVector((bits >> 2) & 1, (bits >> 1) & 1, bits & 1)
    return encode_genome(enc, d)


def nsga2_search(predict_error, predict_flatness, space: SpaceConfig,
                 cfg: SearchConfig, rng: np.random.Generator) -> list:
    """Multi-objective GA on the predictors; returns the final front's genomes.

    Tournament selection on (rank, -crowding), uniform crossover, per-gene
    reset mutation, deterministic repair after every variation. Each
    predictor is called exactly generations + 1 times, on batches of
    population size.
    """
    L = genome_length(space)
    bounds = genome_bounds(space)
    p_mut = cfg.mutation if cfg.mutation is not None else 1.0 / L
    pop = [random_genome(space, rng) for _ in range(cfg.population)]

    def evaluate(genomes):
        arr = np.array(genomes, dtype=int)
        f = np.asarray(predict_error(arr), dtype=float)
        h = np.asarray(predict_flatness(arr), dtype=float)
        return np.column_stack([f, -h])

    def tournament(rank, crowd):
        i, j = rng.integers(0, len(rank), size=2)
        if rank[i] != rank[j]:
            return i if rank[i] < rank[j] else j
        return i if crowd[i] >= crowd[j] else j

    obj = evaluate(pop)
    for _ in range(cfg.generations):
        rank, crowd = _rank_and_crowd(obj)
        children = []
        while len(children) < cfg.population:
            a = pop[tournament(rank, crowd)]
            b = pop[tournament(rank, crowd)]
            g1, g2 = list(a), list(b)
            if rng.random() < cfg.crossover:
                swap = rng.random(L) < 0.5
                for pos in np.where(swap)[0]:
                    g1[pos], g2[pos] = g2[pos], g1[pos]
            for child in (g1, g2):
                if len(children) == cfg.population:
                    break
                flip = np.where(rng.random(L) < p_mut)[0]
                for pos in flip:
                    child[pos] = int(rng.integers(0, bounds[pos] + 1))
                children.append(repair_genome(child, space))
        child_obj = evaluate(children)
        combined = pop + children
        comb_obj = np.vstack([obj, child_obj])
        keep = []
        for fr in non_dominated_sort(comb_obj):
            if len(keep) + len(fr) <= cfg.population:
                keep.extend(fr.tolist())
            else:
                order = np.argsort(-crowding_distance(comb_obj[fr]),
                                   kind="stable")
                keep.extend(fr[order][:cfg.population - len(keep)].tolist())
                break
        pop = [combined[i] for i in keep]
        obj = comb_obj[keep]

    seen, front = set(), []
    for i in non_dominated_sort(obj)[0]:
        if pop[i] not in seen:
            seen.add(pop[i])
            front.append(pop[i])
    return front


def differential_evolution(predict_error, space: SpaceConfig,
                           cfg: SearchConfig,
                           rng: np.random.Generator) -> tuple:
    """Single-objective rand/1/bin baseline over a relaxed real genome.

    Vectors live in the box [0, bound] per gene; every prediction happens on
    the rounded + repaired integer genome, so the returned genome is always
    feasible. Returns the lowest-predicted genome seen in the final
    population.
    """
    L = genome_length(space)
    hi = np.array(genome_bounds(space), dtype=float)
    P = max(cfg.population, 4)
    F_weight, cr = 0.5, 0.9

    def to_genome(vec):
        return repair_genome(np.clip(np.rint(vec), 0, hi).astype(int), space)

    X = rng.uniform(0.0, 1.0, size=(P, L)) * hi
    genomes = [to_genome(x) for x in X]
    cost = np.asarray(predict_error(np.array(genomes, dtype=int)), dtype=float)
    for _ in range(cfg.generations):
        trials = np.empty_like(X)
        for i in range(P):
            r = rng.choice(P - 1, size=3, replace=False)
            r[r >= i] += 1
            mutant = X[r[0]] + F_weight * (X[r[1]] - X[r[2]])
            mask = rng.random(L) < cr
            mask[rng.integers(0, L)] = True
            trials[i] = np.clip(np.where(mask, mutant, X[i]), 0.0, hi)
        trial_genomes = [to_genome(t) for t in trials]
        trial_cost = np.asarray(
            predict_error(np.array(trial_genomes, dtype=int)), dtype=float)
        better = trial_cost <= cost
        X[better] = trials[better]
        cost[better] = trial_cost[better]
        for i in np.where(better)[0]:
            genomes[i] = trial_genomes[i]
    return genomes[int(np.argmin(cost))]


def select_infill(candidates, predictions, archive_genomes, n: int) -> list:
    """Pick up to n novel candidates by predicted front rank, then spread.

    Candidates already in the archive (or repeated in the batch) are
    dropped first; if fewer than n novel ones remain, all are returned.
    """
    seen = set(archive_genomes)
    novel = []
    for i, g in enumerate(candidates):
        g = tuple(g)
        if g not in seen:
            seen.add(g)
            novel.append(i)
    if not novel:
        return []
    pts = np.asarray(predictions, dtype=float)[novel]
    picked = []
    for fr in non_dominated_sort(pts):
        order = np.argsort(-crowding_distance(pts[fr]), kind="stable")
        for j in fr[order]:
            picked.append(tuple(candidates[novel[j]]))
            if len(picked) == n:
                return picked
    return picked


def hypervolume(points, reference=HV_REFERENCE) -> float:
    """Area dominated by the points and bounded by the reference corner.

    Points at or beyond the reference in either coordinate contribute
    nothing; dominated points add no area by construction.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ref = np.asarray(reference, dtype=float)
    pts = pts[(pts < ref).all(axis=1)]
    if not len(pts):
        return 0.0
    front = pts[non_dominated_sort(pts)[0]]
    front = front[np.argsort(front[:, 0], kind="stable")]
    area, prev = 0.0, ref[1]
    for a, b in front:
        area += (ref[0] - a) * (prev - b)
        prev = b
    return float(area)


# ---------------------------------------------------------------------------
# the outer loop


def _draw_distinct(space, rng, seen, retries):
    genome = random_genome(space, rng)
    for _ in range(retries):
        if genome not in seen:
            seen.add(genome)
            return genome
        genome = random_genome(space, rng)
    raise ConstraintError("could not sample another distinct genome "
                          "from this space")


def _map_evaluations(evaluator, batch, jobs):
    """Evaluate (genome, seed) pairs, preserving order; failures become
    EvalFailure records. jobs > 1 fans out to worker processes, so the
    evaluator must be picklable there. Results are independent of jobs."""
    outcomes = []
    if jobs <= 1 or len(batch) <= 1:
        for genome, seed in batch:
            try:
                outcomes.append(evaluator(genome, seed))
            except SealError as err:
                outcomes.append(EvalFailure(genome, seed, str(err)))
        return outcomes
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(evaluator, g, s) for g, s in batch]
        for (genome, seed), fut in zip(batch, futures):
            try:
                outcomes.append(fut.result())
            except SealError as err:
                outcomes.append(EvalFailure(genome, seed, str(err)))
    return outcomes


def init_archive(space: SpaceConfig, n: int, evaluator,
                 rng: np.random.Generator, retries: int = 50, jobs: int = 1):
    """Measure n distinct random genomes.

    Failed measurements are logged and their slots resampled in later
    waves (bounded by retries), so the archive normally comes back with
    exactly n entries. Genomes and seeds are drawn serially before each
    wave is dispatched, which keeps results identical for any jobs value.
    """
    entries, failures, seen = [], [], set()
    for _ in range(retries):
        need = n - len(entries)
        if need == 0:
            break
        batch = [(_draw_distinct(space, rng, seen, retries),
                  int(rng.integers(2**31 - 1))) for _ in range(need)]
        for out in _map_evaluations(evaluator, batch, jobs):
            if isinstance(out, EvalFailure):
                failures.append(out)
            else:
                entries.append(out)
    return entries, failures


def _ordered_by_front(entries) -> list:
    rows = objective_rows(entries)
    ordered = []
    for fr in non_dominated_sort(rows):
        order = np.argsort(-crowding_distance(rows[fr]), kind="stable")
        ordered.extend(entries[i] for i in fr[order])
    return ordered


def search_loop(space: SpaceConfig, config: SearchConfig, evaluator,
                jobs: int = 1) -> SearchResult:
    """Run the full surrogate-assisted search and return archive + top set.

    evaluator(genome, seed) -> ArchiveEntry, raising a seal error on a
    failed measurement. Init-phase failures are resampled; infill failures
    are recorded and skipped, so the final archive holds
    n_start + iterations * infill - (infill failures) entries. With
    iterations=0 the top set comes straight from the initial archive.
    jobs > 1 evaluates each wave in worker processes without changing any
    result.
    """
    rng = np.random.default_rng(config.seed)
    archive, failures = init_archive(space, config.n_start, evaluator, rng,
                                     config.retries, jobs)
    reports = []
    for it in range(config.iterations):
        if len(archive) >= 8:
            X = np.array([e.genome for e in archive], dtype=int)
            err_model, err_rep = fit_adaptive_surrogate(
                X, np.array([e.error for e in archive]),
                folds=config.cv_folds, seed=config.seed + it)
            flat_model, flat_rep = fit_adaptive_surrogate(
                X, np.array([e.flatness for e in archive]),
                folds=config.cv_folds, seed=config.seed + it)
            candidates = nsga2_search(err_model.predict, flat_model.predict,
                                      space, config, rng)
            arr = np.array(candidates, dtype=int)
            predictions = np.column_stack([
                np.asarray(err_model.predict(arr), dtype=float),
                -np.asarray(flat_model.predict(arr), dtype=float)])
            batch = select_infill(candidates, predictions,
                                  {e.genome for e in archive},
                                  config.infill_per_iteration)
            err_kind, flat_kind = err_rep.chosen, flat_rep.chosen
            err_taus, flat_taus = err_rep.taus, flat_rep.taus
            # the GA front can be small or already measured; keep the
            # per-iteration budget by padding with random novel genomes
            seen = {e.genome for e in archive} | set(batch)
            for _ in range(config.infill_per_iteration * config.retries):
                if len(batch) == config.infill_per_iteration:
                    break
                g = random_genome(space, rng)
                if g not in seen:
                    seen.add(g)
                    batch.append(g)
        else:
            # too many early failures to model anything: explore at random
            batch, seen = [], {e.genome for e in archive}
            for _ in range(config.infill_per_iteration * config.retries):
                if len(batch) == config.infill_per_iteration:
                    break
                g = random_genome(space, rng)
                if g not in seen:
                    seen.add(g)
                    batch.append(g)
            err_kind = flat_kind = "random_fallback"
            err_taus, flat_taus = {}, {}
        evaluated = failed = 0
        seeded = [(g, int(rng.integers(2**31 - 1))) for g in batch]
        for out in _map_evaluations(evaluator, seeded, jobs):
            if isinstance(out, EvalFailure):
                failures.append(out)
                failed += 1
            else:
                archive.append(out)
                evaluated += 1
        if archive:
            rows = objective_rows(archive)
            front = non_dominated_sort(rows)[0]
            front_size, hv = len(front), hypervolume(rows[front])
        else:
            front_size, hv = 0, 0.0
        reports.append(IterationReport(
            iteration=it,
            error_surrogate=err_kind,
            flatness_surrogate=flat_kind,
            error_taus=err_taus,
            flatness_taus=flat_taus,
            front_size=front_size,
            hypervolume=hv,
            evaluated=evaluated,
            failures=failed,
        ))
    top = tuple(_ordered_by_front(archive)[:min(config.top_m, len(archive))])
    return SearchResult(tuple(archive), top, tuple(reports), tuple(failures))


def select_tradeoff(front, mode: str = "knee") -> ArchiveEntry:
    """Pick one entry from a measured front.

    best_acc takes the lowest error, best_flat the highest flatness, and
    knee the point farthest from the chord between the normalized extremes
    (ties resolve toward lower error).
    """
    front = list(front)
    if not front:
        raise ConfigError("cannot select from an empty front")
    if mode == "best_acc":
        return min(front, key=lambda e: (e.error, -e.flatness))
    if mode == "best_flat":
        return min(front, key=lambda e: (-e.flatness, e.error))
    if mode != "knee":
        raise ConfigError(f"unknown tradeoff mode {mode!r}; "
                          f"expected one of {TRADEOFF_MODES}")
    err = np.array([e.error for e in front])
    flat = np.array([e.flatness for e in front])
    u = (err - err.min()) / (np.ptp(err) or 1.0)
    v = (flat - flat.min()) / (np.ptp(flat) or 1.0)
    dist = np.abs(v - u) / np.sqrt(2.0)
    best = min(range(len(front)),
               key=lambda i: (-dist[i], front[i].error, -front[i].flatness))
    return front[best]


# ---------------------------------------------------------------------------
# archive persistence (one JSON object per line)


def save_archive(path, entries):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps({
                "genome": list(e.genome), "error": e.error,
                "flatness": e.flatness, "seed": e.seed,
                "aa_final": e.aa_final, "param_count": e.param_count,
                "expansions": e.expansions}) + "\n")


def load_archive(path) -> list:
    entries = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                d["genome"] = tuple(d["genome"])
                entries.append(ArchiveEntry(**d))
    return entries
