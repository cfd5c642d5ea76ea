"""Searchable architecture space and the expansion operator.

An encoding fixes input resolution plus, per block, a depth level and
per-slot width/kernel levels. Every block owns ``max depth`` slots; slots at
or beyond the active depth are inactive and pinned to level 0 so each network
has exactly one canonical encoding.

The constrained subspace used for sampling contains the encodings where at
least one block still has headroom in depth AND width AND kernel, so any
single-dimension growth request can be honored at least once.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .errors import (ConfigError, ConstraintError, ExpansionExhaustedError)

EXPANSION_DIMS = ("depth", "width", "kernel")
TARGETS = ("last_first", "early_first")


@dataclass(frozen=True)
class SpaceConfig:
    num_blocks: int = 3
    depth_levels: tuple[int, ...] = (1, 2, 3)
    width_levels: tuple[float, ...] = (1.0, 1.5, 2.0)
    kernel_levels: tuple[int, ...] = (3, 5)
    resolution_levels: tuple[int, ...] = (16, 24, 32)
    base_channels: tuple[int, ...] = (8, 16, 32)
    in_channels: int = 1
    num_classes: int = 10

    def __post_init__(self):
        for name in ("depth_levels", "width_levels", "kernel_levels"):
            lv = getattr(self, name)
            if len(lv) < 2:
                raise ConfigError(f"{name} needs >= 2 entries so growth headroom exists")
            if list(lv) != sorted(set(lv)):
                raise ConfigError(f"{name} must be strictly ascending, got {lv}")
        if not self.resolution_levels or \
                list(self.resolution_levels) != sorted(set(self.resolution_levels)):
            raise ConfigError("resolution_levels must be non-empty and ascending")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if len(self.base_channels) != self.num_blocks:
            raise ConfigError("base_channels must have one entry per block")
        if min(self.base_channels) < 1:
            raise ConfigError("base_channels must be positive")
        if self.depth_levels[0] < 1:
            raise ConfigError("depth levels must be positive")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_levels):
            raise ConfigError("kernel levels must be odd and positive")
        if self.width_levels[0] <= 0:
            raise ConfigError("width levels must be positive")
        div = 2 ** self.num_blocks
        for r in self.resolution_levels:
            if r % div:
                raise ConfigError(
                    f"resolution {r} not divisible by 2^{self.num_blocks} "
                    f"(one 2x2 pool per block)")
        if self.num_classes < 2 or self.in_channels < 1:
            raise ConfigError("need num_classes >= 2 and in_channels >= 1")

    @property
    def max_slots(self) -> int:
        return self.depth_levels[-1]

    def channels(self, block: int, width_idx: int) -> int:
        return int(round(self.base_channels[block] * self.width_levels[width_idx]))


@dataclass(frozen=True)
class ArchEncoding:
    """Canonical architecture point: one tuple per block dimension."""

    resolution_idx: int
    depth_idx: tuple[int, ...]
    width_idx: tuple[tuple[int, ...], ...]
    kernel_idx: tuple[tuple[int, ...], ...]

    def active_slots(self, space: SpaceConfig, block: int) -> int:
        return space.depth_levels[self.depth_idx[block]]


@dataclass(frozen=True)
class ExpansionVector:
    """Growth request bits: (depth, width, kernel)."""

    depth: int = 0
    width: int = 0
    kernel: int = 0

    def __post_init__(self):
        if any(b not in (0, 1) for b in (self.depth, self.width, self.kernel)):
            raise ConstraintError(f"growth bits must be 0/1, got {self.bits}")

    @property
    def bits(self) -> tuple[int, int, int]:
        return (self.depth, self.width, self.kernel)

    @property
    def total(self) -> int:
        return sum(self.bits)


def validate(enc: ArchEncoding, space: SpaceConfig) -> list[str]:
    """Violation messages; empty means the encoding is a legal canonical point."""
    out = []
    b, s = space.num_blocks, space.max_slots
    if not 0 <= enc.resolution_idx < len(space.resolution_levels):
        out.append(f"resolution_idx {enc.resolution_idx} out of range")
    if len(enc.depth_idx) != b or len(enc.width_idx) != b or len(enc.kernel_idx) != b:
        return out + [f"encoding must have {b} blocks"]
    for bi in range(b):
        if not 0 <= enc.depth_idx[bi] < len(space.depth_levels):
            out.append(f"block {bi}: depth_idx {enc.depth_idx[bi]} out of range")
            continue
        if len(enc.width_idx[bi]) != s or len(enc.kernel_idx[bi]) != s:
            out.append(f"block {bi}: expected {s} slots")
            continue
        active = enc.active_slots(space, bi)
        for si in range(s):
            w, k = enc.width_idx[bi][si], enc.kernel_idx[bi][si]
            if not 0 <= w < len(space.width_levels):
                out.append(f"block {bi} slot {si}: width_idx {w} out of range")
            if not 0 <= k < len(space.kernel_levels):
                out.append(f"block {bi} slot {si}: kernel_idx {k} out of range")
            if si >= active and (w != 0 or k != 0):
                out.append(f"block {bi} slot {si}: inactive slot not canonical")
    return out


def block_headroom(enc: ArchEncoding, space: SpaceConfig, block: int) -> dict[str, bool]:
    active = enc.active_slots(space, block)
    return {
        "depth": enc.depth_idx[block] < len(space.depth_levels) - 1,
        "width": any(enc.width_idx[block][s] < len(space.width_levels) - 1
                     for s in range(active)),
        "kernel": enc.kernel_idx[block][active - 1] < len(space.kernel_levels) - 1,
    }


def in_constrained_space(enc: ArchEncoding, space: SpaceConfig) -> bool:
    """True when some block has headroom in every growth dimension."""
    return any(all(block_headroom(enc, space, b).values())
               for b in range(space.num_blocks))


def _sample_block(space: SpaceConfig, rng: np.random.Generator):
    """Uniform draw over a block's canonical (depth, widths, kernels) combos."""
    nw, nk = len(space.width_levels), len(space.kernel_levels)
    counts = [(nw * nk) ** space.depth_levels[d] for d in range(len(space.depth_levels))]
    total = sum(counts)
    u = int(rng.integers(total))
    d = 0
    while u >= counts[d]:
        u -= counts[d]
        d += 1
    active = space.depth_levels[d]
    widths = [0] * space.max_slots
    kernels = [0] * space.max_slots
    for s in range(active):
        widths[s] = int(rng.integers(nw))
        kernels[s] = int(rng.integers(nk))
    return d, tuple(widths), tuple(kernels)


def sample_constrained(space: SpaceConfig, rng: np.random.Generator,
                       max_tries: int = 100_000) -> ArchEncoding:
    """Uniform sample over the constrained subspace, by rejection."""
    for _ in range(max_tries):
        blocks = [_sample_block(space, rng) for _ in range(space.num_blocks)]
        enc = ArchEncoding(
            resolution_idx=int(rng.integers(len(space.resolution_levels))),
            depth_idx=tuple(b[0] for b in blocks),
            width_idx=tuple(b[1] for b in blocks),
            kernel_idx=tuple(b[2] for b in blocks),
        )
        if in_constrained_space(enc, space):
            return enc
    raise ConfigError("could not sample the constrained space (no headroom anywhere?)")


def enumerate_constrained(space: SpaceConfig):
    """Every canonical constrained encoding. Oracle use; exponential in size."""
    nw, nk = len(space.width_levels), len(space.kernel_levels)

    def block_combos():
        for d in range(len(space.depth_levels)):
            active = space.depth_levels[d]
            slots = list(itertools.product(range(nw), range(nk)))
            for combo in itertools.product(slots, repeat=active):
                widths = tuple(c[0] for c in combo) + (0,) * (space.max_slots - active)
                kernels = tuple(c[1] for c in combo) + (0,) * (space.max_slots - active)
                yield d, widths, kernels

    per_block = list(block_combos())
    for res in range(len(space.resolution_levels)):
        for blocks in itertools.product(per_block, repeat=space.num_blocks):
            enc = ArchEncoding(res, tuple(b[0] for b in blocks),
                               tuple(b[1] for b in blocks), tuple(b[2] for b in blocks))
            if in_constrained_space(enc, space):
                yield enc


def apply_expansion(enc: ArchEncoding, d: ExpansionVector, space: SpaceConfig,
                    target: str = "last_first") -> ArchEncoding:
    """Grow one block per set bit, scanning blocks per ``target`` order.

    Bits are applied depth, then width, then kernel. A newly activated slot
    duplicates the shape (width/kernel levels) of the block's previous last
    slot so downstream layer shapes are untouched. Never a silent no-op: a set
    bit that cannot be honored raises ExpansionExhaustedError.
    """
    if target not in TARGETS:
        raise ConfigError(f"target must be one of {TARGETS}, got {target!r}")
    if bad := validate(enc, space):
        raise ConstraintError("; ".join(bad))
    if d.total == 0:
        raise ConstraintError("growth vector must set at least one bit")
    order = range(space.num_blocks - 1, -1, -1) if target == "last_first" \
        else range(space.num_blocks)
    depth_idx = list(enc.depth_idx)
    width_idx = [list(w) for w in enc.width_idx]
    kernel_idx = [list(k) for k in enc.kernel_idx]

    def current(b):
        return ArchEncoding(enc.resolution_idx, tuple(depth_idx),
                            tuple(tuple(w) for w in width_idx),
                            tuple(tuple(k) for k in kernel_idx)).active_slots(space, b)

    if d.depth:
        for b in order:
            if depth_idx[b] < len(space.depth_levels) - 1:
                old_active = space.depth_levels[depth_idx[b]]
                depth_idx[b] += 1
                new_active = space.depth_levels[depth_idx[b]]
                for s in range(old_active, new_active):
                    width_idx[b][s] = width_idx[b][old_active - 1]
                    kernel_idx[b][s] = kernel_idx[b][old_active - 1]
                break
        else:
            raise ExpansionExhaustedError("no block has depth headroom")
    if d.width:
        for b in order:
            active = current(b)
            grow = [s for s in range(active)
                    if width_idx[b][s] < len(space.width_levels) - 1]
            if grow:
                for s in grow:
                    width_idx[b][s] += 1
                break
        else:
            raise ExpansionExhaustedError("no block has width headroom")
    if d.kernel:
        for b in order:
            active = current(b)
            if kernel_idx[b][active - 1] < len(space.kernel_levels) - 1:
                kernel_idx[b][active - 1] += 1
                break
        else:
            raise ExpansionExhaustedError("no block has kernel headroom")
    return ArchEncoding(enc.resolution_idx, tuple(depth_idx),
                        tuple(tuple(w) for w in width_idx),
                        tuple(tuple(k) for k in kernel_idx))


# ---------------------------------------------------------------------------
# decoding to layer specs


@dataclass(frozen=True)
class Plan:
    """Decoded network: specs plus index maps used by weight transfer."""

    specs: tuple[L.LayerSpec, ...]
    resolution: int
    conv_index: tuple[tuple[int, ...], ...]   # [block][slot] -> conv layer index
    bn_index: tuple[tuple[int, ...], ...]
    head_index: int
    slot_channels: tuple[tuple[int, ...], ...]


def decode_plan(enc: ArchEncoding, space: SpaceConfig) -> Plan:
    if bad := validate(enc, space):
        raise ConstraintError("; ".join(bad))
    specs: list[L.LayerSpec] = []
    conv_index, bn_index, slot_channels = [], [], []
    ch = space.in_channels
    for b in range(space.num_blocks):
        ci, bi, cc = [], [], []
        for s in range(enc.active_slots(space, b)):
            out = space.channels(b, enc.width_idx[b][s])
            k = space.kernel_levels[enc.kernel_idx[b][s]]
            ci.append(len(specs))
            specs.append(L.conv2d(ch, out, k))
            bi.append(len(specs))
            specs.append(L.batchnorm(out))
            specs.append(L.relu())
            cc.append(out)
            ch = out
        specs.append(L.pooling("max", 2, 2))
        conv_index.append(tuple(ci))
        bn_index.append(tuple(bi))
        slot_channels.append(tuple(cc))
    specs.append(L.pooling("global_avg"))
    specs.append(L.flatten())
    head = len(specs)
    specs.append(L.dense(ch, space.num_classes))
    return Plan(tuple(specs), space.resolution_levels[enc.resolution_idx],
                tuple(conv_index), tuple(bn_index), head, tuple(slot_channels))


def decode_to_specs(enc: ArchEncoding, space: SpaceConfig) -> list[L.LayerSpec]:
    return list(decode_plan(enc, space).specs)


def count_encoding_parameters(enc: ArchEncoding, space: SpaceConfig) -> int:
    from .network import count_parameters
    return count_parameters(decode_to_specs(enc, space))


def maximal_encoding(space: SpaceConfig) -> ArchEncoding:
    s = space.max_slots
    top_w = len(space.width_levels) - 1
    top_k = len(space.kernel_levels) - 1
    return ArchEncoding(
        resolution_idx=len(space.resolution_levels) - 1,
        depth_idx=tuple(len(space.depth_levels) - 1 for _ in range(space.num_blocks)),
        width_idx=tuple((top_w,) * s for _ in range(space.num_blocks)),
        kernel_idx=tuple((top_k,) * s for _ in range(space.num_blocks)),
    )


# ---------------------------------------------------------------------------
# flat genome codec (architecture + growth bits) for the search engine


def genome_length(space: SpaceConfig) -> int:
    return 1 + space.num_blocks + 2 * space.num_blocks * space.max_slots + 3


def genome_bounds(space: SpaceConfig) -> list[int]:
    """Inclusive upper bound per gene (lower bound is 0)."""
    b, s = space.num_blocks, space.max_slots
    return ([len(space.resolution_levels) - 1]
            + [len(space.depth_levels) - 1] * b
            + [len(space.width_levels) - 1] * (b * s)
            + [len(space.kernel_levels) - 1] * (b * s)
            + [1] * 3)


def encode_genome(enc: ArchEncoding, d: ExpansionVector) -> tuple[int, ...]:
    flat = [enc.resolution_idx, *enc.depth_idx]
    for w in enc.width_idx:
        flat.extend(w)
    for k in enc.kernel_idx:
        flat.extend(k)
    flat.extend(d.bits)
    return tuple(int(v) for v in flat)


def decode_genome(genome, space: SpaceConfig) -> tuple[ArchEncoding, ExpansionVector]:
    genome = tuple(int(v) for v in genome)
    if len(genome) != genome_length(space):
        raise ConfigError(
            f"genome length {len(genome)} != {genome_length(space)} for this space")
    b, s = space.num_blocks, space.max_slots
    pos = 1
    depth = genome[pos:pos + b]
    pos += b
    width = tuple(genome[pos + i * s:pos + (i + 1) * s] for i in range(b))
    pos += b * s
    kernel = tuple(genome[pos + i * s:pos + (i + 1) * s] for i in range(b))
    pos += b * s
    enc = ArchEncoding(genome[0], depth, width, kernel)
    if bad := validate(enc, space):
        raise ConstraintError("; ".join(bad))
    d = ExpansionVector(*genome[pos:pos + 3])
    return enc, d


def repair_genome(genome, space: SpaceConfig) -> tuple[int, ...]:
    """Clamp genes to range, re-canonicalize, and restore feasibility.

    Feasibility: the base encoding must keep full growth headroom somewhere
    (the last block is forced if needed) and at least one growth bit is set.
    Deterministic, so repairs are reproducible.
    """
    bounds = genome_bounds(space)
    if len(genome) != len(bounds):
        raise ConfigError(f"genome length {len(genome)} != {len(bounds)}")
    g = [min(max(int(v), 0), hi) for v, hi in zip(genome, bounds)]
    b, s = space.num_blocks, space.max_slots
    depth = g[1:1 + b]
    wpos, kpos = 1 + b, 1 + b + b * s
    if sum(g[kpos + b * s:]) == 0:
        g[kpos + b * s] = 1                       # default to a depth bump
    enc_ok = False
    for bi in range(b):
        active = space.depth_levels[depth[bi]]
        hw = (depth[bi] < len(space.depth_levels) - 1
              and any(g[wpos + bi * s + si] < len(space.width_levels) - 1
                      for si in range(active))
              and g[kpos + bi * s + active - 1] < len(space.kernel_levels) - 1)
        enc_ok = enc_ok or hw
    if not enc_ok:
        bi = b - 1
        depth[bi] = min(depth[bi], len(space.depth_levels) - 2)
        g[1 + bi] = depth[bi]
        active = space.depth_levels[depth[bi]]
        last = active - 1
        g[wpos + bi * s + last] = min(g[wpos + bi * s + last],
                                      len(space.width_levels) - 2)
        g[kpos + bi * s + last] = min(g[kpos + bi * s + last],
                                      len(space.kernel_levels) - 2)
    for bi in range(b):                           # canonical inactive slots
        active = space.depth_levels[g[1 + bi]]
        for si in range(active, s):
            g[wpos + bi * s + si] = 0
            g[kpos + bi * s + si] = 0
    return tuple(g)
