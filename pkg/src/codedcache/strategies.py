"""Two-group placements: PF-SA with its closed-form rates, and the PF / SF baselines."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

from .combinatorics import active_size_distribution
from .errors import CacheUnderuse, NonuniformSizes, OutOfRange
from .model import FileCatalog, Placement, UserPopulation
from .rate import Scheme, _check_enumeration, _multisets, average_rate


class Strategy(str, enum.Enum):
    PFSA = "PFSA"
    PF = "PF"
    SF = "SF"


@dataclass(frozen=True)
class TwoGroupPlacement:
    n1: int
    q: Placement
    strategy: Strategy
    underuse: bool = False  # set when a caller forced an n1 whose files cannot hold M

    @property
    def fractions(self) -> tuple[float, ...]:
        return self.q.q


def _check_n1(n1: int, catalog: FileCatalog) -> None:
    if not 1 <= n1 <= catalog.n_files:
        raise OutOfRange(f"n1={n1} outside 1..{catalog.n_files}")


def _group_level(n1: int, catalog: FileCatalog, M: float) -> float:
    if M <= 0:
        return 0.0
    return min(1.0, M / math.fsum(catalog.sizes[:n1]))


def pfsa_placement(n1: int, catalog: FileCatalog, M: float, force: bool = False) -> TwoGroupPlacement:
    """Cache the same fraction of each of the n1 most popular files, nothing else.

    An n1 whose files total fewer than M bits leaves cache unused; that is
    rejected with CacheUnderuse unless n1 = N or ``force`` is set.
    """
    _check_n1(n1, catalog)
    if M < 0:
        raise OutOfRange(f"cache size must be nonnegative, got {M}")
    underuse = n1 < catalog.n_files and math.fsum(catalog.sizes[:n1]) < M
    if underuse and not force:
        raise CacheUnderuse(f"the {n1} most popular files hold fewer than M={M} bits")
    level = _group_level(n1, catalog, M)
    q = tuple(level if n < n1 else 0.0 for n in range(catalog.n_files))
    return TwoGroupPlacement(n1, Placement(q, M), Strategy.PFSA, underuse)


def _pfsa_demand_rate(demands, n1: int, level: float, sizes) -> float:
    """Rate for users 0..a-1 requesting ``demands`` under the two-group placement.

    Coded messages only matter for groups with a member asking for a cached
    file; the uncached files requested by everyone else go out whole.
    """
    a = len(demands)
    first = {}
    for k, n in enumerate(demands):
        first.setdefault(n, k)
    leader_mask = sum(1 << k for k in first.values())
    cached_mask = sum(1 << k for k, n in enumerate(demands) if n < n1)
    total = 0.0
    for size in range(1, a + 1):
        s = size - 1
        piece = level**s * (1.0 - level) ** (a - s)
        if piece == 0.0:
            continue
        for S in itertools.combinations(range(a), size):
            mask = sum(1 << k for k in S)
            if not mask & leader_mask or not mask & cached_mask:
                continue
            total += piece * max(sizes[demands[k]] for k in S if demands[k] < n1)
    return total + math.fsum(sizes[n] for n in first if n >= n1)


def _pfsa_uniform_demand_rate(demands, n1: int, level: float, F: float) -> float:
    a = len(demands)
    n_distinct = len(set(demands))
    uncached = [n for n in demands if n >= n1]
    a2, n_distinct2 = len(uncached), len(set(uncached))
    total = 0.0
    for s in range(a):
        coeff = (sum(math.comb(a - i, s) for i in range(1, n_distinct + 1))
                 - sum(math.comb(a2 - i, s) for i in range(1, n_distinct2 + 1)))
        total += coeff * level**s * (1.0 - level) ** (a - s) * F
    return total + n_distinct2 * F


def _average_over_demands(users: UserPopulation, catalog: FileCatalog, per_demand) -> float:
    # the per-demand rate is symmetric in the users, so sum over request multisets
    _check_enumeration(catalog, users)
    dist = active_size_distribution(users)
    p = catalog.popularity
    out = []
    for a in range(1, users.n_users + 1):
        if dist[a] == 0.0:
            continue
        acc = math.fsum(count * math.prod(p[n] for n in combo) * per_demand(combo)
                        for combo, count in _multisets(catalog.n_files, a))
        out.append(dist[a] * acc)
    return math.fsum(out)


def pfsa_rate_general(n1: int, catalog: FileCatalog, users: UserPopulation, M: float,
                      force: bool = False) -> float:
    """Average D-MCCS rate of the PF-SA placement with n1 cached files, any file sizes."""
    placement = pfsa_placement(n1, catalog, M, force=force)
    level = placement.fractions[0]
    sizes = catalog.sizes
    return _average_over_demands(users, catalog, lambda d: _pfsa_demand_rate(d, n1, level, sizes))


def pfsa_rate_uniform_size(n1: int, catalog: FileCatalog, users: UserPopulation, M: float,
                           force: bool = False) -> float:
    """Counting form of the PF-SA rate, valid only when every file has the same size."""
    F = catalog.sizes[0]
    if any(f != F for f in catalog.sizes):
        raise NonuniformSizes("the counting form needs equal file sizes")
    placement = pfsa_placement(n1, catalog, M, force=force)
    level = placement.fractions[0]
    return _average_over_demands(users, catalog, lambda d: _pfsa_uniform_demand_rate(d, n1, level, F))


def pfsa_rates(catalog: FileCatalog, users: UserPopulation, M: float) -> dict[int, float]:
    """Rate for every admissible n1 (those that do not leave cache unused)."""
    uniform = all(f == catalog.sizes[0] for f in catalog.sizes)
    rate_fn = pfsa_rate_uniform_size if uniform else pfsa_rate_general
    rates = {}
    for n1 in range(1, catalog.n_files + 1):
        if n1 < catalog.n_files and math.fsum(catalog.sizes[:n1]) < M:
            continue
        rates[n1] = rate_fn(n1, catalog, users, M)
    return rates


def pfsa_search(catalog: FileCatalog, users: UserPopulation, M: float) -> tuple[int, TwoGroupPlacement, float]:
    """Best n1 for the PF-SA placement; ties go to the smaller n1."""
    rates = pfsa_rates(catalog, users, M)
    n1 = min(rates, key=lambda k: (rates[k], k))
    return n1, pfsa_placement(n1, catalog, M), rates[n1]


def _from_bits(bits: dict[int, float], catalog: FileCatalog, M: float, n1: int, strategy: Strategy):
    q = tuple(min(1.0, bits.get(n, 0.0) / catalog.sizes[n]) for n in range(catalog.n_files))
    return TwoGroupPlacement(n1, Placement(q, M), strategy)


def pf_group(n1: int, catalog: FileCatalog, M: float) -> TwoGroupPlacement:
    """Popularity-first: file n gets min(M/n1, smallest size among files 1..n) bits."""
    _check_n1(n1, catalog)
    bits = {}
    smallest = math.inf
    for n in range(n1):
        smallest = min(smallest, catalog.sizes[n])
        bits[n] = min(max(M, 0.0) / n1, smallest)
    return _from_bits(bits, catalog, M, n1, Strategy.PF)


def size_order(catalog: FileCatalog) -> list[int]:
    """File indices by decreasing size; equal sizes keep popularity order."""
    return sorted(range(catalog.n_files), key=lambda n: (-catalog.sizes[n], n))


def sf_group(n1: int, catalog: FileCatalog, M: float) -> TwoGroupPlacement:
    """Size-first: each of the n1 largest files gets min(M/n1, F_n) bits."""
    _check_n1(n1, catalog)
    bits = {n: min(max(M, 0.0) / n1, catalog.sizes[n]) for n in size_order(catalog)[:n1]}
    return _from_bits(bits, catalog, M, n1, Strategy.SF)


def _baseline(build, catalog: FileCatalog, M: float, users: UserPopulation) -> tuple[int, TwoGroupPlacement]:
    best = None
    for n1 in range(1, catalog.n_files + 1):
        placement = build(n1, catalog, M)
        r = average_rate(Scheme.DMCCS, placement.fractions, catalog, users).average_rate
        if best is None or r < best[0]:
            best = (r, placement)
    return best[1].n1, best[1]


def pf_baseline(catalog: FileCatalog, M: float, users: UserPopulation) -> tuple[int, TwoGroupPlacement]:
    return _baseline(pf_group, catalog, M, users)


def sf_baseline(catalog: FileCatalog, M: float, users: UserPopulation) -> tuple[int, TwoGroupPlacement]:
    return _baseline(sf_group, catalog, M, users)
