"""Domain types: file catalog, user population, placements and demands.

File and user indices are 0-based throughout the library. Sizes are in bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import (
    InvalidScenario,
    LengthMismatch,
    NonPositiveValue,
    OutOfRange,
    PopularityNotNormalized,
)

NORMALIZATION_TOL = 1e-9
BUDGET_REL_SLACK = 1e-9


def _canonical_key(popularity, sizes, i):
    # decreasing popularity, then decreasing size, then input position
    return (-popularity[i], -sizes[i], i)


@dataclass(frozen=True)
class FileCatalog:
    """N files with request probabilities and sizes, in canonical order."""

    popularity: tuple[float, ...]
    sizes: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.popularity)
        F = tuple(float(v) for v in self.sizes)
        object.__setattr__(self, "popularity", p)
        object.__setattr__(self, "sizes", F)
        if len(p) != len(F):
            raise LengthMismatch(f"{len(p)} popularities vs {len(F)} sizes")
        if not p:
            raise LengthMismatch("catalog needs at least one file")
        if any(not v > 0 or not math.isfinite(v) for v in p):
            raise NonPositiveValue("popularities must be positive")
        if any(not v > 0 or not math.isfinite(v) for v in F):
            raise NonPositiveValue("sizes must be positive")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise PopularityNotNormalized(f"popularities sum to {math.fsum(p)!r}")
        for n in range(len(p) - 1):
            if p[n] < p[n + 1] or (p[n] == p[n + 1] and F[n] < F[n + 1]):
                raise ValueError(f"files {n} and {n + 1} are not in canonical order")

    @property
    def n_files(self) -> int:
        return len(self.popularity)

    @property
    def total_size(self) -> float:
        return math.fsum(self.sizes)

    @property
    def uniform_size(self) -> bool:
        return all(f == self.sizes[0] for f in self.sizes)


def build_catalog(popularities: Sequence[float], sizes: Sequence[float]):
    """Sort files into canonical order and validate them.

    Returns ``(catalog, perm)`` where ``perm[j]`` is the input position of the
    file placed at canonical index ``j``.
    """
    p = [float(v) for v in popularities]
    F = [float(v) for v in sizes]
    if len(p) != len(F):
        raise LengthMismatch(f"{len(p)} popularities vs {len(F)} sizes")
    if not p:
        raise LengthMismatch("catalog needs at least one file")
    if any(not v > 0 for v in p) or any(not v > 0 for v in F):
        raise NonPositiveValue("popularities and sizes must be positive")
    total = math.fsum(p)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise PopularityNotNormalized(f"popularities sum to {total!r}")
    if total != 1.0:
        p = [v / total for v in p]
    perm = tuple(sorted(range(len(p)), key=lambda i: _canonical_key(p, F, i)))
    catalog = FileCatalog(tuple(p[i] for i in perm), tuple(F[i] for i in perm))
    return catalog, perm


def zipf_popularity(N: int, theta: float) -> list[float]:
    if N < 1:
        raise OutOfRange("N must be >= 1")
    if theta < 0:
        raise OutOfRange("theta must be non-negative")
    weights = [n ** (-theta) for n in range(1, N + 1)]
    total = math.fsum(weights)
    return [w / total for w in weights]


@dataclass(frozen=True)
class UserPopulation:
    """K users, each active independently with its own probability."""

    activity: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(v) for v in self.activity)
        object.__setattr__(self, "activity", a)
        if not a:
            raise OutOfRange("need at least one user")
        if any(not 0.0 <= v <= 1.0 for v in a):
            raise OutOfRange("activity probabilities must lie in [0, 1]")

    @classmethod
    def uniform(cls, K: int, p_active: float) -> "UserPopulation":
        return cls((p_active,) * K)

    @property
    def n_users(self) -> int:
        return len(self.activity)


@dataclass(frozen=True)
class Placement:
    q: tuple[float, ...]
    budget: float

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "budget", float(self.budget))


@dataclass(frozen=True)
class Violation:
    constraint: str  # "lower", "upper" or "budget"
    index: int | None
    amount: float  # how far past the bound, in the constraint's own units


@dataclass(frozen=True)
class PlacementReport:
    valid: bool
    budget_used: float
    budget_slack: float
    violations: tuple[Violation, ...] = field(default_factory=tuple)


def validate_placement(q: Sequence[float], catalog: FileCatalog, M: float) -> PlacementReport:
    if len(q) != catalog.n_files:
        raise LengthMismatch(f"placement has {len(q)} entries for {catalog.n_files} files")
    violations = []
    for n, v in enumerate(q):
        if v < 0:
            violations.append(Violation("lower", n, -v))
        elif v > 1:
            violations.append(Violation("upper", n, v - 1))
    used = math.fsum(v * f for v, f in zip(q, catalog.sizes))
    slack = M - used
    if used > M + BUDGET_REL_SLACK * M:
        violations.append(Violation("budget", None, used - M))
    return PlacementReport(not violations, used, slack, tuple(violations))


@dataclass(frozen=True)
class DemandScenario:
    """Active users (sorted) and the file each of them requests."""

    active_set: tuple[int, ...]
    demands: tuple[int, ...]

    def __post_init__(self):
        A = tuple(int(k) for k in self.active_set)
        d = tuple(int(n) for n in self.demands)
        if len(A) != len(d):
            raise InvalidScenario("demands must be defined exactly on the active set")
        if len(set(A)) != len(A):
            raise InvalidScenario("duplicate user in active set")
        order = sorted(range(len(A)), key=A.__getitem__)
        object.__setattr__(self, "active_set", tuple(A[i] for i in order))
        object.__setattr__(self, "demands", tuple(d[i] for i in order))

    @classmethod
    def from_mapping(cls, demands: Mapping[int, int]) -> "DemandScenario":
        items = sorted(demands.items())
        return cls(tuple(k for k, _ in items), tuple(n for _, n in items))

    @property
    def size(self) -> int:
        return len(self.active_set)

    def demand_of(self, user: int) -> int:
        return self.demands[self.active_set.index(user)]

    def check_files(self, n_files: int) -> None:
        if any(not 0 <= n < n_files for n in self.demands):
            raise OutOfRange(f"demanded file index outside 0..{n_files - 1}")
