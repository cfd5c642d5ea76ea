"""Data-incremental protocol: task streams, the capacity trigger, the
expand-and-distill runner, and the five comparison baselines.

Splits arrive in order and are never retained: each runner touches only the
current task's training data. Knowledge of earlier splits flows through the
model (and, for distillation methods, through a frozen copy of it).

Randomness discipline: every runner derives one child sequence per task from
the run seed, and each task's training loop consumes only its own child, so
methods that share a seed see bit-identical batch orders. That makes the
reduction cases (penalty weight zero, blocked trigger) exact, not just close.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, ConstraintError, ExpansionExhaustedError,
                     NumericError)
from .fitting import (DistillConfig, adapt_resolution, evaluate_accuracy,
                      mean_loss, train_task, train_task_distill)
from .losses import cross_entropy
from .metrics import AccuracyMatrix
from .network import (NetworkParams, backward, commit_bn_updates,
                      count_parameters, forward, init_params)
from .optim import OptConfig, init_velocity, sgd_step
from .space import (ArchEncoding, ExpansionVector, SpaceConfig,
                    apply_expansion, decode_plan, in_constrained_space)
from .transfer import ReferenceBank, slice_reference, transfer_expanded

BASELINE_KINDS = ("naive", "joint", "ewc", "si", "lwf")


@dataclass
class Task:
    index: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class TaskStream:
    tasks: list[Task]
    num_classes: int
    seed: int

    def __len__(self):
        return len(self.tasks)


def _deal(y: np.ndarray, num_tasks: int, rng: np.random.Generator,
          start: int = 0) -> list[np.ndarray]:
    """Stratified round-robin split of indices into num_tasks buckets.

    The bucket pointer runs globally across classes, so both the per-class
    and the total bucket sizes differ by at most one.
    """
    buckets: list[list[int]] = [[] for _ in range(num_tasks)]
    p = start
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for j in idx:
            buckets[p].append(int(j))
            p = (p + 1) % num_tasks
    return [np.sort(np.array(b, dtype=np.int64)) for b in buckets]


def make_task_stream(train_x, train_y, test_x, test_y, num_tasks: int,
                     seed: int = 0) -> TaskStream:
    """Disjoint stratified splits of train and test into num_tasks tasks."""
    if num_tasks < 2:
        raise ConfigError(f"need at least 2 tasks, got {num_tasks}")
    if num_tasks > len(train_y) or num_tasks > len(test_y):
        raise ConfigError(f"{num_tasks} tasks but only {len(train_y)} train / "
                          f"{len(test_y)} test samples")
    rng = np.random.default_rng(seed)
    train_idx = _deal(np.asarray(train_y), num_tasks, rng)
    test_idx = _deal(np.asarray(test_y), num_tasks, rng)
    tasks = [Task(t, train_x[train_idx[t]], train_y[train_idx[t]],
                  test_x[test_idx[t]], test_y[test_idx[t]])
             for t in range(num_tasks)]
    classes = int(max(int(np.max(train_y)), int(np.max(test_y))) + 1)
    return TaskStream(tasks, classes, seed)


# ---------------------------------------------------------------------------
# capacity trigger


@dataclass
class CapacityState:
    """Carries the previous task's final training loss and the threshold."""

    prev_loss: float
    threshold: float
    events: list = field(default_factory=list)


@dataclass
class ExpansionEvent:
    task: int
    fired: bool
    gain: float                 # 1 - loss_on_new / prev_loss
    exhausted: bool = False
    param_count: int = 0


def capacity_trigger(state: CapacityState, loss_on_new: float) -> bool:
    """Fire when the old weights retain too little margin on the new split.

    The relative improvement 1 - loss_on_new/prev_loss below the threshold
    means the inherited capacity does not transfer; grow the model.
    """
    if state.prev_loss <= 0 or not np.isfinite(state.prev_loss):
        raise NumericError(f"previous loss must be positive, got {state.prev_loss}")
    if loss_on_new <= 0 or not np.isfinite(loss_on_new):
        raise NumericError(f"loss on new data must be positive, got {loss_on_new}")
    return bool(1.0 - loss_on_new / state.prev_loss < state.threshold)


# ---------------------------------------------------------------------------
# the expand-and-distill runner


@dataclass
class IncrementalResult:
    matrix: AccuracyMatrix
    final_params: NetworkParams
    final_encoding: ArchEncoding
    events: list[ExpansionEvent]
    param_counts: list[int]
    train_losses: list[float]

    @property
    def expansions(self) -> int:
        return sum(1 for e in self.events if e.fired and not e.exhausted)


def _task_seqs(seed: int, num_tasks: int):
    """Per-task (train, aux) seed sequences plus one init sequence."""
    init_seq, task_root = np.random.SeedSequence(seed).spawn(2)
    pairs = [seq.spawn(2) for seq in task_root.spawn(num_tasks)]
    return init_seq, pairs


def run_incremental(enc: ArchEncoding, growth: ExpansionVector,
                    stream: TaskStream, bank: ReferenceBank,
                    space: SpaceConfig, tau: float, distill: DistillConfig,
                    epochs: int, opt: OptConfig, seed: int = 0,
                    policy: str = "warm_start", target: str = "last_first"
                    ) -> IncrementalResult:
    """Train through the stream, expanding by ``growth`` when triggered.

    Task 0 starts from the bank slice (policy warm_start) or a fresh init and
    trains with plain cross-entropy. From task 1 on, the trigger compares the
    frozen model's loss on the incoming split against the previous final
    training loss; on fire the architecture grows one step and the new net
    trains under cross-distillation against its frozen predecessor. A fire
    with no headroom left is logged and training continues unexpanded.
    """
    if not in_constrained_space(enc, space):
        raise ConstraintError("base encoding must keep headroom in some block")
    if growth.total < 1:
        raise ConstraintError("growth vector must set at least one bit")
    K = len(stream)
    init_seq, seqs = _task_seqs(seed, K)
    plan = decode_plan(enc, space)
    res = plan.resolution
    specs = list(plan.specs)
    if policy == "warm_start":
        params = slice_reference(bank, enc)
    else:
        params = init_params(specs, np.random.default_rng(init_seq))
    matrix = AccuracyMatrix(K)
    events: list[ExpansionEvent] = []
    counts: list[int] = []
    losses: list[float] = []
    current = enc
    prev_loss = None
    tests = [(adapt_resolution(t.test_x, res), t.test_y) for t in stream.tasks]
    for t, task in enumerate(stream.tasks):
        xt = adapt_resolution(task.train_x, res)
        yt = task.train_y
        train_rng = np.random.default_rng(seqs[t][0])
        aux_rng = np.random.default_rng(seqs[t][1])
        if t == 0:
            params, prev_loss = train_task(specs, params, xt, yt, epochs, opt,
                                           train_rng)
        else:
            matrix.record_zero_shot(
                t, evaluate_accuracy(specs, params, tests[t][0], tests[t][1]))
            loss_new = mean_loss(specs, params, xt, yt)
            state = CapacityState(prev_loss, tau, events)
            gain = 1.0 - loss_new / prev_loss
            if capacity_trigger(state, loss_new):
                try:
                    grown = apply_expansion(current, growth, space, target)
                except ExpansionExhaustedError:
                    events.append(ExpansionEvent(t, True, gain, exhausted=True,
                                                 param_count=count_parameters(specs)))
                    params, prev_loss = train_task(specs, params, xt, yt,
                                                   epochs, opt, train_rng)
                else:
                    teacher_specs, teacher = specs, params
                    new_plan = decode_plan(grown, space)
                    new_specs = list(new_plan.specs)
                    new_params, _report = transfer_expanded(
                        params, current, grown, space, bank, aux_rng,
                        policy=policy, target=target)
                    params, prev_loss, _ = train_task_distill(
                        new_specs, new_params, teacher_specs, teacher, xt, yt,
                        distill, epochs, opt, train_rng)
                    specs, current = new_specs, grown
                    events.append(ExpansionEvent(t, True, gain,
                                                 param_count=count_parameters(specs)))
            else:
                events.append(ExpansionEvent(t, False, gain,
                                             param_count=count_parameters(specs)))
                params, prev_loss = train_task(specs, params, xt, yt, epochs,
                                               opt, train_rng)
        matrix.add_row([evaluate_accuracy(specs, params, tx, ty)
                        for tx, ty in tests[: t + 1]])
        counts.append(count_parameters(specs))
        losses.append(prev_loss)
    return IncrementalResult(matrix, params, current, events, counts, losses)


# ---------------------------------------------------------------------------
# baselines


@dataclass
class BaselineHypers:
    ewc_lambda: float = 100.0
    si_c: float = 0.1
    si_xi: float = 1e-3
    lwf_alpha: float = 0.5
    lwf_temperature: float = 2.0


@dataclass
class BaselineResult:
    matrix: AccuracyMatrix
    final_params: NetworkParams


def _train_hooked(specs, params, x, y, epochs, opt, rng, grad_hook=None,
                  step_watch=None):
    """train_task with optional per-step grad modification and step observer.

    Mirrors fitting.train_task operation-for-operation so a hook adding
    exact zeros reproduces it bit-for-bit.
    """
    params = params.copy()
    if epochs == 0:
        return params, mean_loss(specs, params, x, y)
    velocity = init_velocity(params)
    n = x.shape[0]
    final = 0.0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, opt.batch_size):
            idx = perm[lo:lo + opt.batch_size]
            logits, cache = forward(specs, params, x[idx], train=True)
            loss, dlogits = cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}")
            grads = backward(specs, params, cache, dlogits)
            if grad_hook is not None:
                grad_hook(params, grads)
            sgd_step(params, grads, opt.lr, opt.momentum, velocity)
            if step_watch is not None:
                step_watch(grads, velocity)
            commit_bn_updates(params, cache)
            epoch_loss += loss * len(idx)
        final = epoch_loss / n
    return params, final


def _diag_fisher(specs, params, x, y, batch_size):
    """Batch-approximated diagonal empirical Fisher over one data pass."""
    fisher = params.zeros_like_arrays()
    n = x.shape[0]
    for lo in range(0, n, batch_size):
        xb, yb = x[lo:lo + batch_size], y[lo:lo + batch_size]
        logits, cache = forward(specs, params, xb, train=True)
        _, dlogits = cross_entropy(logits, yb)
        grads = backward(specs, params, cache, dlogits)
        w = len(yb) / n
        for fi, gi in zip(fisher, grads):
            for name in fi:
                fi[name] += w * gi[name] ** 2
    return fisher


def run_baseline(kind: str, specs, init: NetworkParams, stream: TaskStream,
                 epochs: int, opt: OptConfig, seed: int = 0,
                 resolution: int | None = None,
                 hypers: BaselineHypers | None = None) -> BaselineResult:
    """Continual-learning reference methods on a fixed architecture.

    naive: sequential fine-tuning. joint: one training run on the union of
    all splits with the full K-task epoch budget (its matrix replicates the
    final accuracies, the only ones the method defines). ewc: quadratic pull
    toward the previous task's weights scaled by a diagonal Fisher. si: path-
    integral importance accumulated online. lwf: distillation from the frozen
    pre-task model on current data.
    """
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline {kind!r}, expected one of "
                          f"{BASELINE_KINDS}")
    hp = hypers or BaselineHypers()
    K = len(stream)
    _, seqs = _task_seqs(seed, K)
    res = resolution or stream.tasks[0].train_x.shape[-1]
    tests = [(adapt_resolution(t.test_x, res), t.test_y) for t in stream.tasks]
    matrix = AccuracyMatrix(K)
    params = init.copy()

    if kind == "joint":
        union_x = np.concatenate(
            [adapt_resolution(t.train_x, res) for t in stream.tasks])
        union_y = np.concatenate([t.train_y for t in stream.tasks])
        params, _ = train_task(specs, params, union_x, union_y, K * epochs,
                               opt, np.random.default_rng(seqs[0][0]))
        final = [evaluate_accuracy(specs, params, tx, ty) for tx, ty in tests]
        for t in range(K):
            matrix.add_row(final[: t + 1])
        return BaselineResult(matrix, params)

    # state for the regularized methods
    anchor = None          # previous-task weights
    fisher = None          # ewc: diagonal importance at the anchor
    omega = None           # si: accumulated importance
    path = params.zeros_like_arrays()   # si: per-task path integral

    for t, task in enumerate(stream.tasks):
        xt = adapt_resolution(task.train_x, res)
        yt = task.train_y
        train_rng = np.random.default_rng(seqs[t][0])
        if t >= 1:
            matrix.record_zero_shot(
                t, evaluate_accuracy(specs, params, tests[t][0], tests[t][1]))

        grad_hook = step_watch = None
        if kind == "ewc" and t >= 1:
            a, f = anchor, fisher

            def grad_hook(p, grads, a=a, f=f):
                for gi, pi, ai, fi in zip(grads, p.arrays, a.arrays, f):
                    for name in gi:
                        gi[name] += hp.ewc_lambda * fi[name] * (pi[name] - ai[name])
        if kind == "si":
            def step_watch(grads, velocity, path=path):
                # SGD moved params by -lr * v; importance is -g * delta
                for pa, gi, vi in zip(path, grads, velocity):
                    for name in pa:
                        pa[name] += opt.lr * gi[name] * vi[name]
            if t >= 1:
                a, om = anchor, omega

                def grad_hook(p, grads, a=a, om=om):
                    for gi, pi, ai, oi in zip(grads, p.arrays, a.arrays, om):
                        for name in gi:
                            gi[name] += 2.0 * hp.si_c * oi[name] * (pi[name] - ai[name])

        start = params.copy() if kind == "si" else None
        if kind == "lwf" and t >= 1:
            teacher = params
            params, _, _ = train_task_distill(
                specs, params, specs, teacher, xt, yt,
                DistillConfig(hp.lwf_alpha, hp.lwf_temperature), epochs, opt,
                train_rng)
        else:
            params, _ = _train_hooked(specs, params, xt, yt, epochs, opt,
                                      train_rng, grad_hook, step_watch)

        if kind == "ewc":
            fisher = _diag_fisher(specs, params, xt, yt, opt.batch_size)
            anchor = params.copy()
        if kind == "si":
            if omega is None:
                omega = params.zeros_like_arrays()
            for oi, pa, pi, si in zip(omega, path, params.arrays, start.arrays):
                for name in oi:
                    oi[name] += pa[name] / ((pi[name] - si[name]) ** 2 + hp.si_xi)
            path = params.zeros_like_arrays()
            anchor = params.copy()

        matrix.add_row([evaluate_accuracy(specs, params, tx, ty)
                        for tx, ty in tests[: t + 1]])
    return BaselineResult(matrix, params)


def fwt_reference(specs, stream: TaskStream, task_index: int, epochs: int,
                  opt: OptConfig, seed: int = 0,
                  resolution: int | None = None) -> float:
    """Test accuracy of a fresh random-init model trained on one task alone."""
    if task_index < 1:
        raise ConfigError("reference accuracies are defined for tasks >= 1")
    task = stream.tasks[task_index]
    res = resolution or task.train_x.shape[-1]
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    params = init_params(specs, np.random.default_rng(init_seq))
    params, _ = train_task(specs, params, adapt_resolution(task.train_x, res),
                           task.train_y, epochs, opt,
                           np.random.default_rng(train_seq))
    return evaluate_accuracy(specs, params, adapt_resolution(task.test_x, res),
                             task.test_y)
