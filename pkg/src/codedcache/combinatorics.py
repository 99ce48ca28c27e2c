"""Active-set enumeration, leader groups, and non-redundant user groups."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

from .errors import EmptyActiveSet, OutOfRange, TooManyUsers
from .model import DemandScenario, UserPopulation

MAX_ENUM_USERS = 20


def enumerate_active_sets(users: UserPopulation) -> Iterator[tuple[tuple[int, ...], float]]:
    """Yield every subset of users with its probability of being the active set.

    Subsets come in increasing bitmask order (bit k set means user k is
    active), starting with the empty set.
    """
    K = users.n_users
    if K > MAX_ENUM_USERS:
        raise TooManyUsers(f"K={K} exceeds the enumeration limit of {MAX_ENUM_USERS}")
    pa = users.activity
    for mask in range(1 << K):
        prob = 1.0
        members = []
        for k in range(K):
            if mask >> k & 1:
                prob *= pa[k]
                members.append(k)
            else:
                prob *= 1.0 - pa[k]
        yield tuple(members), prob


def active_size_distribution(users: UserPopulation) -> list[float]:
    """P(|A| = a) for a = 0..K, accumulated in the same order as the enumeration."""
    dist = [0.0] * (users.n_users + 1)
    for active, prob in enumerate_active_sets(users):
        dist[len(active)] += prob
    return dist


@dataclass(frozen=True)
class DistinctDemand:
    distinct_files: tuple[int, ...]
    multiplicity: dict
    active_size: int

    @property
    def n_distinct(self) -> int:
        return len(self.distinct_files)


def distinct_demand(d: DemandScenario) -> DistinctDemand:
    mult: dict[int, int] = {}
    for n in d.demands:
        mult[n] = mult.get(n, 0) + 1
    return DistinctDemand(tuple(sorted(mult)), mult, d.size)


@dataclass(frozen=True)
class LeaderGroup:
    leaders: frozenset


def is_leader_group(d: DemandScenario, leaders) -> bool:
    leaders = set(leaders)
    if not leaders <= set(d.active_set):
        return False
    files = [d.demand_of(k) for k in leaders]
    return len(set(files)) == len(files) and set(files) == set(d.demands)


def canonical_leader_group(d: DemandScenario) -> LeaderGroup:
    """Pick the lowest-index requester of each distinct file."""
    if not d.active_set:
        raise EmptyActiveSet("leader group of an empty active set")
    first: dict[int, int] = {}
    for k, n in zip(d.active_set, d.demands):
        first.setdefault(n, k)
    return LeaderGroup(frozenset(first.values()))


def all_leader_groups(d: DemandScenario) -> list[LeaderGroup]:
    """Every valid leader group (one requester chosen per distinct file)."""
    by_file: dict[int, list[int]] = {}
    for k, n in zip(d.active_set, d.demands):
        by_file.setdefault(n, []).append(k)
    choices = [by_file[n] for n in sorted(by_file)]
    return [LeaderGroup(frozenset(pick)) for pick in itertools.product(*choices)]


def nonredundant_groups(active_set: Sequence[int], leaders: LeaderGroup) -> Iterator[tuple[int, ...]]:
    """Nonempty subsets of the active set that contain at least one leader.

    Ordered by size, then lexicographically.
    """
    users = tuple(sorted(active_set))
    lead = leaders.leaders
    for size in range(1, len(users) + 1):
        for S in itertools.combinations(users, size):
            if not lead.isdisjoint(S):
                yield S


def all_groups(active_set: Sequence[int]) -> Iterator[tuple[int, ...]]:
    users = tuple(sorted(active_set))
    for size in range(1, len(users) + 1):
        yield from itertools.combinations(users, size)


def count_identity_sides(A: int, n_distinct: int, s: int) -> tuple[int, int]:
    """Both sides of C(A, s+1) - C(A-Nd, s+1) = sum_{i=1..Nd} C(A-i, s)."""
    lhs = math.comb(A, s + 1) - math.comb(A - n_distinct, s + 1)
    rhs = sum(math.comb(A - i, s) for i in range(1, n_distinct + 1))
    return lhs, rhs


def count_nonredundant(A: int, n_distinct: int, s: int) -> int:
    """Number of non-redundant groups of size s+1."""
    if not 1 <= n_distinct <= A or not 0 <= s <= A - 1:
        raise OutOfRange(f"need 1 <= Nd <= A and 0 <= s <= A-1, got A={A}, Nd={n_distinct}, s={s}")
    lhs, rhs = count_identity_sides(A, n_distinct, s)
    if lhs != rhs:
        raise AssertionError(f"counting identity broken at A={A}, Nd={n_distinct}, s={s}")
    return lhs
