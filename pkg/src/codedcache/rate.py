"""Exact delivery rates and average rates for D-MCCS, D-CCS and the lower bound."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

from .combinatorics import (
    DistinctDemand,
    LeaderGroup,
    active_size_distribution,
    all_groups,
    canonical_leader_group,
    distinct_demand,
    enumerate_active_sets,
    nonredundant_groups,
)
from .errors import EmptySubset, EnumerationTooLarge, LengthMismatch, OutOfRange, TooManyPermutations
from .model import DemandScenario, FileCatalog, UserPopulation

MAX_TERMS = 10**7
MAX_LB_DISTINCT = 8  # 8! = 40320 permutations


class Scheme(str, enum.Enum):
    DMCCS = "DMCCS"
    DCCS = "DCCS"
    LOWER_BOUND = "LOWER_BOUND"


def subfile_size(q_n: float, F_n: float, s: int, A: int) -> float:
    """Expected bits of a file cached by exactly s of A active users."""
    if not 0.0 <= q_n <= 1.0:
        raise OutOfRange(f"q_n={q_n} outside [0, 1]")
    if not 0 <= s <= A:
        raise OutOfRange(f"s={s} outside [0, {A}]")
    # Python's 0.0 ** 0 is 1.0, which is the convention needed at q in {0, 1}
    return q_n**s * (1.0 - q_n) ** (A - s) * F_n


def _check(q, catalog):
    if len(q) != catalog.n_files:
        raise LengthMismatch(f"placement has {len(q)} entries for {catalog.n_files} files")


def coded_message_size(S: Sequence[int], d: DemandScenario, q: Sequence[float], catalog: FileCatalog) -> float:
    """Length of the zero-padded XOR message for user subset S."""
    if not S:
        raise EmptySubset("coded message needs a nonempty user subset")
    A = d.size
    s = len(S) - 1
    sizes = catalog.sizes
    best = 0.0
    for k in S:
        n = d.demand_of(k)
        best = max(best, subfile_size(q[n], sizes[n], s, A))
    return best


def rate_mccs_demand(d: DemandScenario, q: Sequence[float], catalog: FileCatalog,
                     leaders: LeaderGroup | None = None) -> float:
    _check(q, catalog)
    if not d.active_set:
        return 0.0
    if leaders is None:
        leaders = canonical_leader_group(d)
    return math.fsum(coded_message_size(S, d, q, catalog)
                     for S in nonredundant_groups(d.active_set, leaders))


def rate_ccs_demand(d: DemandScenario, q: Sequence[float], catalog: FileCatalog) -> float:
    _check(q, catalog)
    return math.fsum(coded_message_size(S, d, q, catalog) for S in all_groups(d.active_set))


def _lb_value(files: Sequence[int], q, sizes, A: int) -> float:
    Nd = len(files)
    if Nd > MAX_LB_DISTINCT:
        raise TooManyPermutations(f"{Nd}! permutations exceed the exhaustive-search limit")
    coeff = [[math.comb(A - i, s) for s in range(A)] for i in range(1, Nd + 1)]
    best = -math.inf
    for perm in itertools.permutations(files):
        total = 0.0
        for i, n in enumerate(perm):
            row = coeff[i]
            qn, Fn = q[n], sizes[n]
            for s in range(A):
                if row[s]:
                    total += row[s] * qn**s * (1.0 - qn) ** (A - s) * Fn
        best = max(best, total)
    return best


def rate_lb_demand(D: DistinctDemand | Sequence[int], q: Sequence[float], catalog: FileCatalog,
                   A: int | None = None) -> float:
    """Per-demand lower bound: max over orderings of the distinct requested files."""
    _check(q, catalog)
    if isinstance(D, DistinctDemand):
        files = D.distinct_files
        A = D.active_size if A is None else A
    else:
        files = tuple(sorted(set(D)))
    if A is None:
        raise ValueError("active-set size A is required")
    if not files:
        raise OutOfRange("lower bound needs at least one distinct request")
    if len(files) > A:
        raise OutOfRange("more distinct files than active users")
    return _lb_value(files, q, catalog.sizes, A)


@dataclass(frozen=True)
class RateReport:
    average_rate: float
    scheme: Scheme
    per_scenario: dict | None = None


def _check_enumeration(catalog, users):
    terms = catalog.n_files**users.n_users * 2**users.n_users
    if terms > MAX_TERMS:
        raise EnumerationTooLarge(f"{terms} (A, d) terms exceed the limit of {MAX_TERMS}")


def _multisets(N: int, a: int):
    """Yield (sorted demand tuple, number of orderings) for all size-a multisets."""
    fa = math.factorial(a)
    for combo in itertools.combinations_with_replacement(range(N), a):
        count = fa
        for _, grp in itertools.groupby(combo):
            count //= math.factorial(len(list(grp)))
        yield combo, count


def _rate_by_mask(demands, v, only_leaders: bool) -> float:
    """Sum of coded-message sizes for users 0..a-1 requesting ``demands``.

    ``v[n][s]`` is the subfile size of file n cached by s of the a users.
    """
    a = len(demands)
    lead_mask = 0
    if only_leaders:
        seen = set()
        for k, n in enumerate(demands):
            if n not in seen:
                seen.add(n)
                lead_mask |= 1 << k
    else:
        lead_mask = (1 << a) - 1
    total = 0.0
    for mask in range(1, 1 << a):
        if not mask & lead_mask:
            continue
        s = bin(mask).count("1") - 1
        best = 0.0
        for k in range(a):
            if mask >> k & 1:
                val = v[demands[k]][s]
                if val > best:
                    best = val
        total += best
    return total


def expected_rate_given_size(scheme: Scheme, a: int, q: Sequence[float], catalog: FileCatalog) -> float:
    """E over i.i.d. demands of the per-demand rate when a users are active."""
    if a == 0:
        return 0.0
    N = catalog.n_files
    p, F = catalog.popularity, catalog.sizes
    total = 0.0
    if scheme is Scheme.LOWER_BOUND:
        cache: dict = {}
        for combo, count in _multisets(N, a):
            files = tuple(sorted(set(combo)))
            if files not in cache:
                cache[files] = _lb_value(files, q, F, a)
            total += count * math.prod(p[n] for n in combo) * cache[files]
        return total
    v = [[q[n] ** s * (1.0 - q[n]) ** (a - s) * F[n] for s in range(a + 1)] for n in range(N)]
    only_leaders = scheme is Scheme.DMCCS
    for combo, count in _multisets(N, a):
        total += count * math.prod(p[n] for n in combo) * _rate_by_mask(combo, v, only_leaders)
    return total


def _scenario_rate(scheme, d, q, catalog):
    if scheme is Scheme.DMCCS:
        return rate_mccs_demand(d, q, catalog)
    if scheme is Scheme.DCCS:
        return rate_ccs_demand(d, q, catalog)
    return rate_lb_demand(distinct_demand(d), q, catalog)


def average_rate(scheme: Scheme | str, q: Sequence[float], catalog: FileCatalog, users: UserPopulation,
                 keep_scenarios: bool = False) -> RateReport:
    """Exact expectation of the delivery rate over active sets and demands.

    The per-demand rate depends only on how many users are active and on the
    multiset of requested files, so the default path sums over demand
    multisets with multinomial weights. ``keep_scenarios=True`` walks every
    (A, d_A) pair explicitly and records each scenario's rate.
    """
    scheme = Scheme(scheme)
    _check(q, catalog)
    if any(not 0.0 <= v <= 1.0 for v in q):
        raise OutOfRange("placement fractions must lie in [0, 1]")
    _check_enumeration(catalog, users)
    if not keep_scenarios:
        dist = active_size_distribution(users)
        g = [expected_rate_given_size(scheme, a, q, catalog) if dist[a] > 0 else 0.0
             for a in range(users.n_users + 1)]
        return RateReport(math.fsum(dist[a] * g[a] for a in range(len(dist))), scheme)

    per: dict = {}
    terms = []
    p = catalog.popularity
    for active, prob in enumerate_active_sets(users):
        if not active:
            continue
        for demands in itertools.product(range(catalog.n_files), repeat=len(active)):
            d = DemandScenario(active, demands)
            r = _scenario_rate(scheme, d, q, catalog)
            per[(active, demands)] = r
            terms.append(prob * math.prod(p[n] for n in demands) * r)
    return RateReport(math.fsum(terms), scheme, per)
