"""Bit-level Monte Carlo of decentralized placement and coded delivery.

Bits carry no payload here. A coded message is tracked as, for each of its
positions, the set of file bits XORed into it, which is all a decodability
argument needs.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from .combinatorics import LeaderGroup, canonical_leader_group, nonredundant_groups
from .errors import OutOfRange, UndecodableBit
from .model import DemandScenario, FileCatalog, UserPopulation


@dataclass(frozen=True)
class BitPlacement:
    """cached[n] is a (K, F_n) boolean array: user k holds bit b of file n."""

    cached: tuple[np.ndarray, ...]
    seed: int
    rounding: tuple[float, ...] = ()  # round(q_n F_n) - q_n F_n per file

    @property
    def n_users(self) -> int:
        return self.cached[0].shape[0]

    def file_bits(self, n: int) -> int:
        return self.cached[n].shape[1]

    def cached_bits(self, k: int, n: int) -> set[int]:
        return set(np.flatnonzero(self.cached[n][k]).tolist())


def file_lengths(catalog: FileCatalog) -> list[int]:
    """Sizes rounded to whole bits."""
    return [int(round(f)) for f in catalog.sizes]


def random_placement(q: Sequence[float], catalog: FileCatalog, K: int, seed) -> BitPlacement:
    """Each user caches a uniformly random set of exactly round(q_n F_n) bits of each file."""
    if len(q) != catalog.n_files:
        raise OutOfRange(f"placement has {len(q)} entries for {catalog.n_files} files")
    if any(not 0.0 <= v <= 1.0 for v in q):
        raise OutOfRange("placement fractions must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    cached, residual = [], []
    for n, F in enumerate(file_lengths(catalog)):
        m = int(round(q[n] * F))
        residual.append(m - q[n] * F)
        masks = np.zeros((K, F), dtype=bool)
        for k in range(K):
            masks[k, rng.choice(F, size=m, replace=False)] = True
        cached.append(masks)
    return BitPlacement(tuple(cached), seed, tuple(residual))


@dataclass(frozen=True)
class SubfilePartition:
    """Bits of each file keyed by the exact set of active users holding them."""

    active_set: tuple[int, ...]
    pieces: dict  # (file, users tuple) -> sorted bit indices
    lengths: tuple[int, ...]

    def bits(self, n: int, S: Sequence[int]) -> np.ndarray:
        return self.pieces.get((n, tuple(sorted(S))), _EMPTY)

    def size(self, n: int, S: Sequence[int]) -> int:
        return len(self.bits(n, S))

    def is_partition(self) -> bool:
        for n, F in enumerate(self.lengths):
            parts = [b for (m, _), b in self.pieces.items() if m == n]
            joined = np.concatenate(parts) if parts else _EMPTY
            if len(joined) != F or not np.array_equal(np.sort(joined), np.arange(F)):
                return False
        return True


_EMPTY = np.zeros(0, dtype=np.int64)


def partition_subfiles(placement: BitPlacement, active_set: Sequence[int]) -> SubfilePartition:
    active = tuple(sorted(active_set))
    if any(not 0 <= k < placement.n_users for k in active):
        raise OutOfRange(f"active users must lie in 0..{placement.n_users - 1}")
    pieces = {}
    lengths = []
    for n, masks in enumerate(placement.cached):
        F = masks.shape[1]
        lengths.append(F)
        code = np.zeros(F, dtype=np.int64)
        for j, k in enumerate(active):
            code |= masks[k].astype(np.int64) << j
        order = np.argsort(code, kind="stable")
        values, starts = np.unique(code[order], return_index=True)
        for c, chunk in zip(values.tolist(), np.split(order, starts[1:])):
            S = tuple(k for j, k in enumerate(active) if c >> j & 1)
            pieces[(n, S)] = chunk
    return SubfilePartition(active, pieces, tuple(lengths))


@dataclass(frozen=True)
class CodedMessage:
    """XOR of the listed subfiles, each zero-padded to the longest.

    parts holds (user, file, subset without that user, bit indices).
    """

    target: tuple[int, ...]
    parts: tuple
    length: int

    @property
    def part_lengths(self) -> tuple[int, ...]:
        return tuple(len(b) for _, _, _, b in self.parts)


def _message(S, d: DemandScenario, partition: SubfilePartition) -> CodedMessage:
    parts = []
    for k in S:
        rest = tuple(u for u in S if u != k)
        n = d.demand_of(k)
        parts.append((k, n, rest, partition.bits(n, rest)))
    return CodedMessage(tuple(S), tuple(parts), max((len(b) for *_, b in parts), default=0))


def deliver(d: DemandScenario, partition: SubfilePartition, leaders: LeaderGroup | None = None) -> list[CodedMessage]:
    """One coded message per non-redundant group."""
    if tuple(d.active_set) != partition.active_set:
        raise OutOfRange("partition was built for a different active set")
    if not d.active_set:
        return []
    if leaders is None:
        leaders = canonical_leader_group(d)
    return [_message(S, d, partition) for S in nonredundant_groups(d.active_set, leaders)]


def total_bits(messages: Sequence[CodedMessage]) -> int:
    return sum(m.length for m in messages)


@dataclass(frozen=True)
class DecodeResult:
    decoded: dict  # user -> bool
    witness: tuple | None = None  # (user, file, bit) of the first bit someone could not recover

    @property
    def all_decoded(self) -> bool:
        return all(self.decoded.values())


def _positions(parts) -> list[frozenset]:
    """Per payload position, the file bits XORed there (pairs appearing twice cancel)."""
    length = max((len(b) for *_, b in parts), default=0)
    out = []
    for i in range(length):
        c = Counter((n, int(b[i])) for _, n, _, b in parts if i < len(b))
        out.append(frozenset(key for key, v in c.items() if v % 2))
    return out


def _leader_like_sets(d: DemandScenario, pool: Sequence[int]) -> list[tuple[int, ...]]:
    """Subsets of pool holding exactly one requester of every requested file."""
    by_file: dict[int, list[int]] = {}
    for k in pool:
        by_file.setdefault(d.demand_of(k), []).append(k)
    if set(by_file) != set(d.demands):
        return []
    return [tuple(sorted(pick)) for pick in itertools.product(*by_file.values())]


def synthesize_redundant(d: DemandScenario, messages: Sequence[CodedMessage],
                         leaders: LeaderGroup) -> dict[tuple[int, ...], list]:
    """Parts lists for every redundant group's message, built only from sent messages.

    For a group B with no leader, XORing the messages of (B + leaders) minus V
    over every leader-like V inside that union gives zero, so B's message is
    the XOR of the others, all of which are non-redundant.
    """
    sent = {m.target: m for m in messages}
    lead = tuple(sorted(leaders.leaders))
    others = [k for k in d.active_set if k not in leaders.leaders]
    out = {}
    for size in range(1, len(others) + 1):
        for B in itertools.combinations(others, size):
            union = tuple(sorted(set(B) | set(lead)))
            parts = []
            for V in _leader_like_sets(d, union):
                if V == lead:
                    continue
                rest = tuple(k for k in union if k not in V)
                if rest in sent:
                    parts.extend(sent[rest].parts)
            out[B] = parts
    return out


def _peel(known: set, equations: list[frozenset]) -> set:
    known = set(known)
    pending = [e - known for e in equations]
    progress = True
    while progress:
        progress = False
        keep = []
        for e in pending:
            e = e - known
            if len(e) == 1:
                known |= e
                progress = True
            elif e:
                keep.append(e)
        pending = keep
    return known


def _gf2_span_check(known: set, equations: list[frozenset], wanted: list) -> list:
    """Bits in ``wanted`` that are not determined by the equations plus known bits."""
    index: dict = {}
    rows = []
    for e in equations:
        e = e - known
        if e:
            v = 0
            for key in e:
                v |= 1 << index.setdefault(key, len(index))
            rows.append(v)
    basis: dict[int, int] = {}  # pivot bit -> row
    for v in rows:
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                basis[top] = v
                break
            v ^= basis[top]
    missing = []
    for key in wanted:
        if key in known:
            continue
        if key not in index:
            missing.append(key)
            continue
        v = 1 << index[key]
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                break
            v ^= basis[top]
        if v:
            missing.append(key)
    return missing


def decode_check(d: DemandScenario, placement: BitPlacement, messages: Sequence[CodedMessage],
                 leaders: LeaderGroup | None = None, rank_oracle: bool = False) -> DecodeResult:
    """Whether each active user can rebuild its requested file from its cache and the messages.

    The default decoder adds synthesized redundant-group messages and then
    peels equations with a single unknown bit. ``rank_oracle=True`` instead
    runs Gaussian elimination over GF(2) on the sent messages alone, which is
    exact but only practical for small files.
    """
    if not d.active_set:
        return DecodeResult({})
    if leaders is None:
        leaders = canonical_leader_group(d)
    equations = [eq for m in messages for eq in _positions(m.parts)]
    if not rank_oracle:
        for parts in synthesize_redundant(d, messages, leaders).values():
            equations.extend(_positions(parts))
    decoded, witness = {}, None
    for k in d.active_set:
        known = {(n, b) for n in range(len(placement.cached)) for b in np.flatnonzero(placement.cached[n][k]).tolist()}
        n = d.demand_of(k)
        wanted = [(n, b) for b in range(placement.file_bits(n))]
        if rank_oracle:
            missing = _gf2_span_check(known, equations, wanted)
        else:
            got = _peel(known, equations)
            missing = [key for key in wanted if key not in got]
        decoded[k] = not missing
        if missing and witness is None:
            witness = (k, *missing[0])
    return DecodeResult(decoded, witness)


def sample_scenario(rng: np.random.Generator, catalog: FileCatalog, users: UserPopulation) -> DemandScenario:
    """Independent user activity, then i.i.d. requests from the popularity distribution."""
    active = tuple(int(k) for k in np.flatnonzero(rng.random(users.n_users) < np.asarray(users.activity)))
    demands = rng.choice(catalog.n_files, size=len(active), p=np.asarray(catalog.popularity)) if active else ()
    return DemandScenario(active, tuple(int(n) for n in demands))


@dataclass
class TrialRecord:
    trial: int
    scenario: DemandScenario
    message_lengths: list = field(default_factory=list)
    cached_bits: list = field(default_factory=list)  # bits per file held by each user
    decoded: bool | None = None

    def line(self) -> str:
        lens = ",".join(map(str, self.message_lengths)) or "-"
        verdict = "" if self.decoded is None else f" decoded={self.decoded}"
        cached = ",".join(map(str, self.cached_bits)) or "-"
        return (f"trial={self.trial} active={list(self.scenario.active_set)} "
                f"demands={list(self.scenario.demands)} cached={cached} messages={lens} "
                f"total={sum(self.message_lengths)}{verdict}")


def empirical_rate(q: Sequence[float], catalog: FileCatalog, users: UserPopulation, n_trials: int, seed: int = 0,
                   demand_sampler: Callable[[np.random.Generator], DemandScenario] | None = None,
                   check_decoding: bool = False, trace: TextIO | None = None) -> tuple[float, float]:
    """Mean transmitted bits per request round and its standard error.

    Trial t draws everything from a generator seeded by (seed, t), so any
    subset of trials can be rerun on its own.
    """
    if n_trials < 1:
        raise OutOfRange("need at least one trial")
    totals = np.zeros(n_trials)
    for t in range(n_trials):
        rng = np.random.default_rng([seed, t])
        d = demand_sampler(rng) if demand_sampler else sample_scenario(rng, catalog, users)
        record = TrialRecord(t, d)
        if d.active_set:
            placement = random_placement(q, catalog, users.n_users, rng)
            messages = deliver(d, partition_subfiles(placement, d.active_set))
            totals[t] = total_bits(messages)
            record.message_lengths = [m.length for m in messages]
            record.cached_bits = [int(c[0].sum()) for c in placement.cached]
            if check_decoding:
                result = decode_check(d, placement, messages)
                record.decoded = result.all_decoded
                if not record.decoded:
                    raise UndecodableBit(f"trial {t}: user {result.witness[0]} cannot recover bit "
                                         f"{result.witness[2]} of file {result.witness[1]}", result.witness)
        if trace is not None:
            trace.write(record.line() + "\n")
    stderr = float(totals.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0
    return float(totals.mean()), stderr
