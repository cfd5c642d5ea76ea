"""The measurement side of the search: one genome -> one archive entry.

A CandidateEvaluator owns everything a single evaluation needs (pool
arrays, reference bank, training hyperparameters), so instances pickle
cleanly into worker processes. Calling one runs a full incremental pass
for the genome, then scores size-weighted error and flatness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import DistillConfig, adapt_resolution
from .incremental import make_task_stream, run_incremental
from .metrics import FlatnessConfig, average_accuracy, flatness_H, objective_F
from .optim import OptConfig
from .search import ArchiveEntry
from .space import SpaceConfig, decode_genome, decode_plan
from .transfer import ReferenceBank


@dataclass
class CandidateEvaluator:
    space: SpaceConfig
    bank: ReferenceBank
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_tasks: int
    tau: float
    distill: DistillConfig
    epochs: int
    opt: OptConfig
    flatness: FlatnessConfig
    policy: str = "warm_start"
    target: str = "last_first"

    def __call__(self, genome, seed: int) -> ArchiveEntry:
        genome = tuple(int(g) for g in genome)
        enc, growth = decode_genome(genome, self.space)
        stream = make_task_stream(self.train_x, self.train_y,
                                  self.test_x, self.test_y,
                                  self.num_tasks, seed=seed)
        result = run_incremental(enc, growth, stream, self.bank, self.space,
                                 self.tau, self.distill, self.epochs, self.opt,
                                 seed=seed, policy=self.policy,
                                 target=self.target)
        aa = average_accuracy(result.matrix, self.num_tasks - 1)
        n_params = result.param_counts[-1]
        plan = decode_plan(result.final_encoding, self.space)
        x = adapt_resolution(np.concatenate([t.test_x for t in stream.tasks]),
                             plan.resolution)
        y = np.concatenate([t.test_y for t in stream.tasks])
        flat_cfg = FlatnessConfig(self.flatness.sigma, self.flatness.draws,
                                  seed=seed)
        h = flatness_H(list(plan.specs), result.final_params, x, y, flat_cfg)
        return ArchiveEntry(genome, float(objective_F(aa, n_params)), float(h),
                            int(seed), float(aa), int(n_params),
                            result.expansions)
