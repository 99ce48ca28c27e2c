"""Complementary GP formulations of the placement problems and their condensation."""
from __future__ import annotations

import io
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, TextIO

from ..combinatorics import all_groups, canonical_leader_group, enumerate_active_sets, nonredundant_groups
from ..errors import NonPositiveAnchor, OutOfRange, ProblemTooLarge, TooManyPermutations
from ..model import DemandScenario, FileCatalog, UserPopulation
from ..rate import Scheme
from .posynomial import Monomial, Posynomial, posy

EPIGRAPH_ROLES = ("w", "r")
MAX_GP_VARIABLES = 200_000
MAX_PERMUTATIONS = 5040


@dataclass(frozen=True)
class Constraint:
    """``lhs <= 1``."""

    lhs: Posynomial
    tag: str = ""


@dataclass(frozen=True)
class Link:
    """The pair constraint 1/(q + x) <= 1, optionally condensed around an anchor.

    With ``anchor=None`` this is the inverted-posynomial constraint that makes
    the problem a complementary GP. With an anchor ``(q0, x0)`` the
    denominator is replaced by its weighted geometric-mean lower bound, a
    monomial that matches q + x at the anchor and never exceeds it.
    """

    q: str
    x: str
    anchor: tuple[float, float] | None = None

    @property
    def weights(self) -> tuple[float, float]:
        q0, x0 = self.anchor
        return q0 / (q0 + x0), x0 / (q0 + x0)

    def denominator(self) -> Monomial:
        q0, x0 = self.anchor
        alpha, beta = self.weights
        return Monomial.of((q0 + x0) * q0**-alpha * x0**-beta, {self.q: alpha, self.x: beta})

    def monomial(self) -> Monomial:
        """The condensed constraint 1 / denominator as a monomial."""
        return self.denominator() ** -1.0

    def value(self, values: Mapping[str, float]) -> float:
        if self.anchor is None:
            return 1.0 / (values[self.q] + values[self.x])
        return self.monomial().evaluate(values)


@dataclass(eq=False)
class GPProblem:
    """Minimize a posynomial subject to posynomial <= 1 constraints and q/x links.

    ``variables`` maps each variable id to its role: ``q``, ``x`` (placement and
    its complement), ``w`` (coded-message epigraph) or ``r`` (lower-bound
    epigraph).
    """

    objective: Posynomial
    constraints: tuple[Constraint, ...]
    variables: Mapping[str, str]
    links: tuple[Link, ...] = ()
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.constraints = tuple(self.constraints)
        self.links = tuple(self.links)
        self.variables = MappingProxyType(dict(self.variables))
        seen = set()
        for term in self._all_terms():
            for v in term.variables:
                if v not in seen:
                    if v not in self.variables:
                        raise ValueError(f"variable {v!r} is not registered")
                    seen.add(v)
        linked = [v for link in self.links for v in (link.q, link.x)]
        if len(linked) != len(set(linked)):
            raise ValueError("each q/x variable may appear in only one link")
        for v in linked:
            if v not in self.variables:
                raise ValueError(f"linked variable {v!r} is not registered")

    def _all_terms(self):
        yield from self.objective.terms
        for c in self.constraints:
            yield from c.lhs.terms

    @property
    def is_standard(self) -> bool:
        return all(link.anchor is not None for link in self.links)

    def variables_with_role(self, role: str) -> list[str]:
        return [v for v, r in self.variables.items() if r == role]

    def standard_constraints(self) -> list[Constraint]:
        """All constraints as posynomials, condensed links included."""
        if not self.is_standard:
            raise ValueError("problem has un-condensed links")
        return list(self.constraints) + [Constraint(posy(link.monomial()), "condensed") for link in self.links]

    def max_violation(self, values: Mapping[str, float]) -> float:
        worst = max((c.lhs.evaluate(values) - 1.0 for c in self.constraints), default=-math.inf)
        for link in self.links:
            worst = max(worst, link.value(values) - 1.0)
        return worst

    def epigraph_index(self) -> dict[str, list[int]]:
        """Constraints bounding each epigraph variable from below."""
        if "epigraph" not in self._cache:
            idx: dict[str, list[int]] = defaultdict(list)
            for ci, c in enumerate(self.constraints):
                for t in c.lhs.terms:
                    for v, _ in t.exponents:
                        if self.variables.get(v) in EPIGRAPH_ROLES:
                            idx[v].append(ci)
                            break
                    else:
                        continue
                    break
            self._cache["epigraph"] = dict(idx)
        return self._cache["epigraph"]

    def tight_values(self, base: Mapping[str, float]) -> dict[str, float]:
        """Complete ``base`` with each epigraph variable set to its smallest feasible value."""
        values = dict(base)
        for v, cons in self.epigraph_index().items():
            best = 0.0
            for ci in cons:
                lhs = self.constraints[ci].lhs
                body = math.fsum(t.without(v).evaluate(values) for t in lhs.terms)
                best = max(best, body)
            values[v] = best
        return values

    def evaluate(self, values: Mapping[str, float]) -> float:
        return self.objective.evaluate(values)


@dataclass(frozen=True)
class SolverConfig:
    outer_tol: float = 1e-4
    inner_tol: float = 1e-8
    max_outer: int = 200
    max_inner: int = 500
    initial_q: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.outer_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.initial_q is not None:
            object.__setattr__(self, "initial_q", tuple(float(v) for v in self.initial_q))


def qvar(n: int) -> str:
    return f"q{n}"


def xvar(n: int) -> str:
    return f"x{n}"


def _fmt(seq: Iterable[int]) -> str:
    return ",".join(str(v) for v in seq)


def _placement_part(catalog: FileCatalog, M: float):
    if not M > 0:
        raise OutOfRange("the GP formulation needs a positive cache size M")
    N = catalog.n_files
    variables = {}
    for n in range(N):
        variables[qvar(n)] = "q"
        variables[xvar(n)] = "x"
    constraints = [Constraint(posy(Monomial.of(1.0, {qvar(n): 1.0})), "cache_fraction") for n in range(N)]
    constraints.append(Constraint(
        Posynomial(tuple(Monomial.of(catalog.sizes[n] / M, {qvar(n): 1.0}) for n in range(N))), "budget"))
    links = tuple(Link(qvar(n), xvar(n)) for n in range(N))
    return variables, constraints, links


def _subfile_monomial(coef: float, n: int, s: int, A: int, epi: str) -> Monomial:
    return Monomial.of(coef, {epi: -1.0, qvar(n): float(s), xvar(n): float(A - s)})


def p1_size_estimate(N: int, K: int) -> int:
    return sum(math.comb(K, a) * N**a * 2**a for a in range(1, K + 1))


def build_p1(catalog: FileCatalog, users: UserPopulation, M: float,
             delivery: Scheme | str = Scheme.DMCCS, max_variables: int = MAX_GP_VARIABLES) -> GPProblem:
    """Epigraph CGP for the average delivery rate of D-MCCS (or D-CCS).

    One ``w`` variable per (active set, demand vector, coded message); each is
    bounded below by every constituent subfile size.
    """
    delivery = Scheme(delivery)
    if delivery is Scheme.LOWER_BOUND:
        raise ValueError("use build_p4 for the lower bound")
    N, K = catalog.n_files, users.n_users
    estimate = p1_size_estimate(N, K)
    if estimate > max_variables:
        raise ProblemTooLarge(f"about {estimate} message variables for N={N}, K={K}")
    variables, constraints, links = _placement_part(catalog, M)
    p, F = catalog.popularity, catalog.sizes
    objective = []
    for active, prob in enumerate_active_sets(users):
        if not active or prob == 0.0:
            continue
        a = len(active)
        for demands in itertools.product(range(N), repeat=a):
            weight = prob * math.prod(p[n] for n in demands)
            d = DemandScenario(active, demands)
            groups = (nonredundant_groups(active, canonical_leader_group(d))
                      if delivery is Scheme.DMCCS else all_groups(active))
            for S in groups:
                w = f"w[{_fmt(active)}|{_fmt(demands)}|{_fmt(S)}]"
                variables[w] = "w"
                objective.append(Monomial.of(weight, {w: 1.0}))
                s = len(S) - 1
                for k in S:
                    n = demands[active.index(k)]
                    constraints.append(Constraint(posy(_subfile_monomial(F[n], n, s, a, w)), "message"))
    return GPProblem(Posynomial(tuple(objective)), tuple(constraints), variables, links,
                     name=f"P1-{delivery.value}")


def _distinct_set_weights(p: Sequence[float], a: int) -> dict[tuple[int, ...], float]:
    """Sum of demand-vector probabilities grouped by the set of distinct files."""
    out: dict[tuple[int, ...], list[float]] = defaultdict(list)
    for demands in itertools.product(range(len(p)), repeat=a):
        out[tuple(sorted(set(demands)))].append(math.prod(p[n] for n in demands))
    return {D: math.fsum(v) for D, v in out.items()}


def build_p4(catalog: FileCatalog, users: UserPopulation, M: float,
             max_variables: int = MAX_GP_VARIABLES) -> GPProblem:
    """Epigraph CGP for the lower bound: one ``r`` per (active set, distinct-file set).

    Each ``r`` is bounded below by the bound's sum for every ordering of its
    distinct files.
    """
    N, K = catalog.n_files, users.n_users
    estimate = p1_size_estimate(N, K)
    if estimate > max_variables:
        raise ProblemTooLarge(f"about {estimate} scenario terms for N={N}, K={K}")
    variables, constraints, links = _placement_part(catalog, M)
    F = catalog.sizes
    objective = []
    set_weights: dict[int, dict] = {}
    for active, prob in enumerate_active_sets(users):
        if not active or prob == 0.0:
            continue
        a = len(active)
        if a not in set_weights:
            set_weights[a] = _distinct_set_weights(catalog.popularity, a)
        for D, dweight in sorted(set_weights[a].items()):
            if math.factorial(len(D)) > MAX_PERMUTATIONS:
                raise TooManyPermutations(f"{len(D)}! orderings of a distinct-demand set")
            r = f"r[{_fmt(active)}|{_fmt(D)}]"
            variables[r] = "r"
            objective.append(Monomial.of(prob * dweight, {r: 1.0}))
            for perm in itertools.permutations(D):
                terms = []
                for i, n in enumerate(perm, start=1):
                    for s in range(a):
                        c = math.comb(a - i, s)
                        if c:
                            terms.append(_subfile_monomial(c * F[n], n, s, a, r))
                constraints.append(Constraint(Posynomial(tuple(terms)), "lower_bound"))
    return GPProblem(Posynomial(tuple(objective)), tuple(constraints), variables, links, name="P4")


def condense(problem: GPProblem, anchor_q: Sequence[float], anchor_x: Sequence[float]) -> GPProblem:
    """Replace every q/x link by its monomial approximation around the anchor."""
    if len(anchor_q) != len(problem.links) or len(anchor_x) != len(problem.links):
        raise ValueError("one anchor pair per link is required")
    links = []
    for link, q0, x0 in zip(problem.links, anchor_q, anchor_x):
        if not (q0 > 0 and x0 > 0 and math.isfinite(q0) and math.isfinite(x0)):
            raise NonPositiveAnchor(f"anchor ({q0}, {x0}) for {link.q}/{link.x} must be positive")
        links.append(Link(link.q, link.x, (float(q0), float(x0))))
    # constraints and objective are shared, so is everything derived from them
    return replace(problem, links=tuple(links), _cache=problem._cache)


def dump_gp(problem: GPProblem, fh: TextIO) -> None:
    """Write the problem in a line-oriented text format.

    ``var <id> <role>`` lines register variables, then ``objective`` and each
    ``constraint <tag>`` header are followed by one monomial per line
    (coefficient then ``var:exponent`` pairs). Links are written as
    ``link <q> <x> [<q0> <x0>]``.
    """
    fh.write("gp 1\n")
    for v, role in problem.variables.items():
        fh.write(f"var {v} {role}\n")
    fh.write("objective\n")
    for t in problem.objective.terms:
        fh.write(f"{t}\n")
    for c in problem.constraints:
        fh.write(f"constraint {c.tag or '-'}\n")
        for t in c.lhs.terms:
            fh.write(f"{t}\n")
    for link in problem.links:
        extra = "" if link.anchor is None else f" {link.anchor[0]!r} {link.anchor[1]!r}"
        fh.write(f"link {link.q} {link.x}{extra}\n")


def _parse_monomial(line: str) -> Monomial:
    head, *pairs = line.split()
    exps = {}
    for pair in pairs:
        v, _, e = pair.rpartition(":")
        exps[v] = exps.get(v, 0.0) + float(e)
    return Monomial.of(float(head), exps)


def load_gp(fh: TextIO | str) -> GPProblem:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "gp 1":
        raise ValueError("not a gp dump")
    variables, objective, constraints, links = {}, [], [], []
    current, tag = None, None
    pending: list[Monomial] = []

    def flush():
        if current == "constraint":
            constraints.append(Constraint(Posynomial(tuple(pending)), "" if tag == "-" else tag))

    for ln in lines[1:]:
        word = ln.split(maxsplit=1)[0]
        if word == "var":
            _, v, role = ln.split()
            variables[v] = role
        elif word == "objective":
            current = "objective"
        elif word == "constraint":
            flush()
            current, tag, pending = "constraint", ln.split()[1], []
        elif word == "link":
            flush()
            current = None
            parts = ln.split()
            anchor = (float(parts[3]), float(parts[4])) if len(parts) == 5 else None
            links.append(Link(parts[1], parts[2], anchor))
        elif current == "objective":
            objective.append(_parse_monomial(ln))
        else:
            pending.append(_parse_monomial(ln))
    flush()
    return GPProblem(Posynomial(tuple(objective)), tuple(constraints), variables, tuple(links))
