"""Reference bank pretraining and weight transfer into expanded networks.

The bank is the maximal architecture of a search space, pretrained once on a
warmup split. Any smaller member embeds into it by leading-index slices over
channels and centered crops over kernel windows, so a slice of the bank is a
warm starting point for that member, and the grown regions of an expanded
network can be filled from the matching bank coordinates.

Transfer bookkeeping: every trainable scalar of the expanded network comes
from exactly one of {carried verbatim from the base, sliced from the bank,
freshly initialized}. Batchnorm layers whose channel count changed cannot be
carried; their scale/shift are reset to identity and their running stats are
redrawn to match the first two moments of the base layer's stats.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .checkpoint import KIND_BANK, load_checkpoint, save_checkpoint
from .errors import (ConfigError, DataFormatError, ExpansionExhaustedError,
                     LineageError, StateError)
from .fitting import adapt_resolution, mean_loss, train_task
from .network import NetworkParams, count_parameters, init_params
from .optim import OptConfig
from .space import (ArchEncoding, ExpansionVector, Plan, SpaceConfig,
                    TARGETS, apply_expansion, decode_plan, maximal_encoding)

POLICIES = ("warm_start", "random")

# floor for redrawn batchnorm running variances
VAR_FLOOR = 1e-3


@dataclass
class ReferenceBank:
    space: SpaceConfig
    encoding: ArchEncoding
    plan: Plan
    params: NetworkParams
    manifest: dict


@dataclass(frozen=True)
class TransferReport:
    """Provenance accounting for one transfer.

    Counts are trainable scalars. carried + bank_sliced + random_init equals
    the expanded model's parameter count; carried + dropped equals the base
    model's. ``dropped`` is the base batchnorm scalars reset instead of
    carried. ``provenance`` rows are (layer index, tensor name, origin).
    """

    growth: ExpansionVector
    target: str
    policy: str
    total: int
    carried: int
    bank_sliced: int
    random_init: int
    dropped: int
    duplicated: int
    provenance: tuple[tuple[int, str, str], ...]


def pretrain_reference(space: SpaceConfig, x: np.ndarray, y: np.ndarray,
                       epochs: int, opt: OptConfig | None = None,
                       seed: int = 0) -> ReferenceBank:
    """Train the maximal member of ``space`` on a warmup split."""
    enc = maximal_encoding(space)
    plan = decode_plan(enc, space)
    specs = list(plan.specs)
    init_rng, train_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(seed).spawn(2))
    params = init_params(specs, init_rng)
    xr = adapt_resolution(x, plan.resolution)
    initial = mean_loss(specs, params, xr, y)
    params, final_train = train_task(specs, params, xr, y, epochs, opt or OptConfig(),
                                     train_rng)
    manifest = {
        "seed": seed,
        "epochs": epochs,
        "examples": int(x.shape[0]),
        "initial_loss": float(initial),
        "final_train_loss": float(final_train),
        "final_loss": float(mean_loss(specs, params, xr, y)),
    }
    return ReferenceBank(space, enc, plan, params, manifest)


def save_bank(path, bank: ReferenceBank):
    save_checkpoint(path, list(bank.plan.specs), bank.params,
                    seed=int(bank.manifest.get("seed", 0)), kind=KIND_BANK,
                    extras=bank.manifest)


def load_bank(path, space: SpaceConfig) -> ReferenceBank:
    specs, params, _seed, kind, extras = load_checkpoint(path)
    if kind != KIND_BANK:
        raise DataFormatError(f"checkpoint kind {kind} is not a reference bank")
    enc = maximal_encoding(space)
    plan = decode_plan(enc, space)
    if list(plan.specs) != specs:
        raise ConfigError("bank layer table does not match this search space")
    return ReferenceBank(space, enc, plan, params, extras)


def _crop_kernel(w: np.ndarray, k: int) -> np.ndarray:
    lo = (w.shape[-1] - k) // 2
    return w[..., lo:lo + k, lo:lo + k]


def slice_reference(bank: ReferenceBank, enc: ArchEncoding) -> NetworkParams:
    """Bank weights for any space member: leading channels, centered kernels."""
    plan = decode_plan(enc, bank.space)
    bplan = bank.plan
    arrays: list[dict] = [{} for _ in plan.specs]
    stats: list[dict] = [{} for _ in plan.specs]
    for b in range(bank.space.num_blocks):
        for s, ci in enumerate(plan.conv_index[b]):
            cin, cout, k, _ = plan.specs[ci].dims
            src = bank.params.arrays[bplan.conv_index[b][s]]
            arrays[ci]["w"] = _crop_kernel(src["w"][:cout, :cin], k).copy()
            arrays[ci]["b"] = src["b"][:cout].copy()
            bi = plan.bn_index[b][s]
            bsrc = bank.params.arrays[bplan.bn_index[b][s]]
            bstat = bank.params.stats[bplan.bn_index[b][s]]
            arrays[bi]["gamma"] = bsrc["gamma"][:cout].copy()
            arrays[bi]["beta"] = bsrc["beta"][:cout].copy()
            stats[bi]["mean"] = bstat["mean"][:cout].copy()
            stats[bi]["var"] = bstat["var"][:cout].copy()
    fin, fout = plan.specs[plan.head_index].dims
    hsrc = bank.params.arrays[bplan.head_index]
    arrays[plan.head_index]["w"] = hsrc["w"][:fin].copy()
    arrays[plan.head_index]["b"] = hsrc["b"].copy()
    return NetworkParams(arrays, stats)


def _find_lineage(base_enc: ArchEncoding, new_enc: ArchEncoding,
                  space: SpaceConfig, target: str | None):
    targets = TARGETS if target is None else (target,)
    for t in targets:
        for bits in itertools.product((0, 1), repeat=3):
            if sum(bits) == 0:
                continue
            d = ExpansionVector(*bits)
            try:
                if apply_expansion(base_enc, d, space, t) == new_enc:
                    return d, t
            except ExpansionExhaustedError:
                continue
    raise LineageError("new encoding is not a one-step expansion of the base")


def _redraw_bn_stats(mean: np.ndarray, var: np.ndarray, c: int,
                     rng: np.random.Generator):
    """Fresh running stats matching the base layer's stat moments."""
    m = rng.normal(float(mean.mean()), float(mean.std()), c)
    v = rng.normal(float(var.mean()), float(var.std()), c)
    return m.astype(np.float32), np.maximum(v, VAR_FLOOR).astype(np.float32)


def transfer_expanded(base_params: NetworkParams, base_enc: ArchEncoding,
                      new_enc: ArchEncoding, space: SpaceConfig,
                      bank: ReferenceBank, rng: np.random.Generator,
                      policy: str = "warm_start", target: str | None = None,
                      duplicate_width_filters: bool = False
                      ) -> tuple[NetworkParams, TransferReport]:
    """Build expanded-network weights from the base net plus the bank.

    Base weights are carried verbatim into the leading-channel / centered-
    kernel region of each grown tensor. The remainder comes from the bank
    slice (policy "warm_start") or a fresh He init (policy "random").
    Batchnorm running-stat redraws consume ``rng`` under both policies.

    With ``duplicate_width_filters`` the new output channels of a widened
    layer copy the base layer's trailing filters (cyclically when the layer
    more than doubles) instead of keeping the policy fill; off by default.
    """
    if policy not in POLICIES:
        raise ConfigError(f"policy must be one of {POLICIES}, got {policy!r}")
    if bank.space != space:
        raise ConfigError("bank was built for a different search space")
    growth, found_target = _find_lineage(base_enc, new_enc, space, target)
    base_plan = decode_plan(base_enc, space)
    new_plan = decode_plan(new_enc, space)
    bplan = bank.plan
    arrays: list[dict] = [{} for _ in new_plan.specs]
    stats: list[dict] = [{} for _ in new_plan.specs]
    counts = {"carried": 0, "bank": 0, "random": 0, "dropped": 0, "duplicated": 0}
    rows: list[tuple[int, str, str]] = []
    grown_tag = "bank" if policy == "warm_start" else "random"

    def fill_conv(spec: L.LayerSpec, bank_idx: int) -> dict:
        cin, cout, k, _ = spec.dims
        if policy == "warm_start":
            src = bank.params.arrays[bank_idx]
            return {"w": _crop_kernel(src["w"][:cout, :cin], k).copy(),
                    "b": src["b"][:cout].copy()}
        a, _ = L.init_layer(spec, rng)
        return a

    for b in range(space.num_blocks):
        a1 = base_enc.active_slots(space, b)
        a2 = new_enc.active_slots(space, b)
        for s in range(a2):
            ci, bi = new_plan.conv_index[b][s], new_plan.bn_index[b][s]
            spec = new_plan.specs[ci]
            cin2, cout2, k2, _ = spec.dims
            n_conv = cout2 * cin2 * k2 * k2 + cout2
            if s < a1:
                old_ci = base_plan.conv_index[b][s]
                cin1, cout1, k1, _ = base_plan.specs[old_ci].dims
                bw = base_params.arrays[old_ci]["w"]
                if (cin1, cout1, k1) == (cin2, cout2, k2):
                    arrays[ci] = {"w": bw.copy(),
                                  "b": base_params.arrays[old_ci]["b"].copy()}
                    counts["carried"] += n_conv
                    rows.append((ci, "w", "carried"))
                else:
                    filled = fill_conv(spec, bplan.conv_index[b][s])
                    lo = (k2 - k1) // 2
                    filled["w"][:cout1, :cin1, lo:lo + k1, lo:lo + k1] = bw
                    filled["b"][:cout1] = base_params.arrays[old_ci]["b"]
                    kept = cout1 * cin1 * k1 * k1 + cout1
                    dup = 0
                    if duplicate_width_filters and cout2 > cout1:
                        for r in range(cout1, cout2):
                            src = cout1 - 1 - (cout2 - 1 - r) % cout1
                            filled["w"][r, :cin1, lo:lo + k1, lo:lo + k1] = bw[src]
                            filled["b"][r] = base_params.arrays[old_ci]["b"][src]
                            dup += cin1 * k1 * k1 + 1
                    arrays[ci] = filled
                    counts["carried"] += kept
                    counts["duplicated"] += dup
                    counts[grown_tag] += n_conv - kept - dup
                    rows.append((ci, "w", f"carried+{grown_tag}"))
                old_bi = base_plan.bn_index[b][s]
                if cout1 == cout2:
                    arrays[bi] = {k: v.copy()
                                  for k, v in base_params.arrays[old_bi].items()}
                    stats[bi] = {k: v.copy()
                                 for k, v in base_params.stats[old_bi].items()}
                    counts["carried"] += 2 * cout1
                    rows.append((bi, "gamma/beta", "carried"))
                else:
                    # channel count changed: identity reset, moment-matched stats
                    arrays[bi] = {"gamma": np.ones(cout2, np.float32),
                                  "beta": np.zeros(cout2, np.float32)}
                    m, v = _redraw_bn_stats(base_params.stats[old_bi]["mean"],
                                            base_params.stats[old_bi]["var"],
                                            cout2, rng)
                    stats[bi] = {"mean": m, "var": v}
                    counts["random"] += 2 * cout2
                    counts["dropped"] += 2 * cout1
                    rows.append((bi, "gamma/beta", "reinit"))
            else:
                # slot activated by depth growth
                arrays[ci] = fill_conv(spec, bplan.conv_index[b][s])
                counts[grown_tag] += n_conv
                rows.append((ci, "w", grown_tag))
                if policy == "warm_start":
                    bsrc = bank.params.arrays[bplan.bn_index[b][s]]
                    bstat = bank.params.stats[bplan.bn_index[b][s]]
                    arrays[bi] = {"gamma": bsrc["gamma"][:cout2].copy(),
                                  "beta": bsrc["beta"][:cout2].copy()}
                    stats[bi] = {"mean": bstat["mean"][:cout2].copy(),
                                 "var": bstat["var"][:cout2].copy()}
                else:
                    a, st = L.init_layer(new_plan.specs[bi], rng)
                    arrays[bi], stats[bi] = a, st
                counts[grown_tag] += 2 * cout2
                rows.append((bi, "gamma/beta", grown_tag))

    fin2, fout = new_plan.specs[new_plan.head_index].dims
    fin1 = base_plan.specs[base_plan.head_index].dims[0]
    hsrc = base_params.arrays[base_plan.head_index]
    hi = new_plan.head_index
    if fin1 == fin2:
        arrays[hi] = {"w": hsrc["w"].copy(), "b": hsrc["b"].copy()}
        counts["carried"] += fin1 * fout + fout
        rows.append((hi, "w", "carried"))
    else:
        if policy == "warm_start":
            w = bank.params.arrays[bplan.head_index]["w"][:fin2].copy()
        else:
            w = L.init_layer(new_plan.specs[hi], rng)[0]["w"]
        w[:fin1] = hsrc["w"]
        arrays[hi] = {"w": w, "b": hsrc["b"].copy()}
        counts["carried"] += fin1 * fout + fout
        counts[grown_tag] += (fin2 - fin1) * fout
        rows.append((hi, "w", f"carried+{grown_tag}"))

    total = count_parameters(list(new_plan.specs))
    placed = (counts["carried"] + counts["bank"] + counts["random"]
              + counts["duplicated"])
    if placed != total:
        raise StateError(f"transfer bookkeeping off: placed {placed} of {total}")
    report = TransferReport(growth=growth, target=found_target, policy=policy,
                            total=total, carried=counts["carried"],
                            bank_sliced=counts["bank"],
                            random_init=counts["random"],
                            dropped=counts["dropped"],
                            duplicated=counts["duplicated"],
                            provenance=tuple(rows))
    return NetworkParams(arrays, stats), report


def zero_new_kernel_rings(params: NetworkParams, base_enc: ArchEncoding,
                          new_enc: ArchEncoding, space: SpaceConfig
                          ) -> NetworkParams:
    """Audit helper: zero the taps outside each grown kernel's old window.

    After a kernel-only expansion the returned weights compute exactly the
    base function, so eval-mode logits must match the base network's.
    """
    base_plan = decode_plan(base_enc, space)
    new_plan = decode_plan(new_enc, space)
    out = params.copy()
    for b in range(space.num_blocks):
        for s in range(base_enc.active_slots(space, b)):
            k1 = base_plan.specs[base_plan.conv_index[b][s]].dims[2]
            ci = new_plan.conv_index[b][s]
            k2 = new_plan.specs[ci].dims[2]
            if k2 > k1:
                w = out.arrays[ci]["w"]
                lo = (k2 - k1) // 2
                center = w[..., lo:lo + k1, lo:lo + k1].copy()
                w[...] = 0.0
                w[..., lo:lo + k1, lo:lo + k1] = center
    return out
