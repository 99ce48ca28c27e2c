"""Successive condensation: solve a sequence of standard GPs converging to a CGP stationary point."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..errors import LengthMismatch, NonMonotoneTrace, NumericalBreakdown, OutOfRange
from ..model import FileCatalog, UserPopulation
from ..rate import Scheme, average_rate
from .problems import GPProblem, SolverConfig, build_p1, build_p4, condense, qvar, xvar
from .solver import _compile, solve_gp

log = logging.getLogger(__name__)

START_SHRINK = 0.99
X_MARGIN = 1e-6
FEASIBILITY_TOL = 1e-8
START_FLOOR = 1e-9  # distance kept from q = 0, q = 1 and a full cache
STRICT_MARGIN = 1e-6  # relative; the x margin is X_MARGIN * STRICT_MARGIN


class Target(str, enum.Enum):
    P0_DMCCS = "P0_DMCCS"
    P3_LOWER_BOUND = "P3_LOWER_BOUND"
    P0_DCCS = "P0_DCCS"

    @property
    def scheme(self) -> Scheme:
        return {Target.P0_DMCCS: Scheme.DMCCS, Target.P3_LOWER_BOUND: Scheme.LOWER_BOUND,
                Target.P0_DCCS: Scheme.DCCS}[self]


@dataclass(frozen=True)
class OuterStep:
    iteration: int
    objective: float
    q: tuple
    newton_steps: int
    kkt_residual: float


@dataclass(frozen=True)
class SuccessiveResult:
    q: tuple
    rate: float
    trace: tuple
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.trace)


def build_problem(target: Target | str, catalog: FileCatalog, users: UserPopulation, M: float) -> GPProblem:
    target = Target(target)
    if target is Target.P3_LOWER_BOUND:
        return build_p4(catalog, users, M)
    return build_p1(catalog, users, M, delivery=target.scheme)


def tight_objective(problem: GPProblem, q: Sequence[float]) -> float:
    """Objective at x = 1 - q with every epigraph variable at its tight value.

    This is the average rate (or bound) of placement q, computed from the GP's
    own constraints.
    """
    core = _compile(problem)
    from .solver import _Groups  # local: only this helper needs the row layout
    import scipy.sparse as sp

    # group rows of the core constraints (no box rows, no links)
    n_groups = int(np.count_nonzero(core.epi_of_group >= 0))
    rows = [(t, g) for t, g in zip(core.rows, core.row_group) if core.epi_of_group[g] >= 0]
    u = np.zeros(len(core.names))
    for n, qn in enumerate(q):
        if qvar(n) in core.index:
            u[core.index[qvar(n)]] = math.log(max(qn, 1e-300))
        if xvar(n) in core.index:
            u[core.index[xvar(n)]] = math.log(max(1.0 - qn, 1e-300))
    data, ri, ci, b, seg = [], [], [], [], []
    epi_cols = []
    remap = {}
    for r, (t, g) in enumerate(rows):
        if g not in remap:
            remap[g] = len(remap)
            epi_cols.append(core.epi_of_group[g])
        seg.append(remap[g])
        b.append(math.log(t.coefficient))
        for v, e in t.exponents:
            j = core.index[v]
            if j == core.epi_of_group[g]:
                continue  # epigraph variable fixed at 1 here
            ri.append(r)
            ci.append(j)
            data.append(e)
    assert len(remap) == n_groups
    groups = _Groups(sp.csr_matrix((data, (ri, ci)), shape=(len(rows), len(core.names))), np.array(b), np.array(seg))
    f, _ = groups.values(u)
    best = np.full(len(core.names), -np.inf)
    np.maximum.at(best, np.array(epi_cols), f)
    mask = np.isfinite(best)
    u[mask] = best[mask]
    u[~mask & np.isin(np.arange(len(u)), core.epi_of_group)] = -np.inf
    f0, _ = core.obj.values(u)
    return math.exp(f0[0])


def _parent_violation(catalog: FileCatalog, M: float, q, x) -> float:
    """Largest relative violation of q <= 1, the budget and q + x >= 1.

    The message and bound constraints are shared verbatim with the condensed
    problem, so only these can differ between the two.
    """
    worst = max(max(q) - 1.0, math.fsum(v * f for v, f in zip(q, catalog.sizes)) / M - 1.0)
    return max(worst, max(1.0 - (a + b) for a, b in zip(q, x)))


def _strict_start(catalog: FileCatalog, M: float, q, x):
    """Pull a solver output strictly inside q <= 1, the budget and q + x >= 1.

    Solutions satisfy the constraints only to solver tolerance; the next round
    starts cleanly from an interior point instead of running a phase 1.
    """
    used = math.fsum(v * f for v, f in zip(q, catalog.sizes))
    scale = min(1.0, (1.0 - STRICT_MARGIN) * M / used) if used > 0 else 1.0
    q = [min(v * scale, 1.0 - STRICT_MARGIN) for v in q]
    x = [max(b, 1.0 - a + X_MARGIN * STRICT_MARGIN) for a, b in zip(q, x)]
    return q, x


def _default_start(catalog: FileCatalog, M: float) -> list[float]:
    level = min(1.0, M / catalog.total_size) * START_SHRINK
    return [level] * catalog.n_files


def successive_gp(target: Target | str, catalog: FileCatalog, users: UserPopulation, M: float,
                  config: SolverConfig = SolverConfig(), problem: GPProblem | None = None) -> SuccessiveResult:
    """Minimize the target's average rate over placements by successive condensation.

    Each round condenses the q/x links around the previous solution and solves
    the resulting standard GP. Rounds stop once the objective changes by less
    than ``config.outer_tol`` relative to its value.
    """
    target = Target(target)
    N = catalog.n_files
    if M <= 0:
        q = (0.0,) * N
        return SuccessiveResult(q, average_rate(target.scheme, q, catalog, users).average_rate, (), True)
    if M >= catalog.total_size:
        q = (1.0,) * N
        return SuccessiveResult(q, average_rate(target.scheme, q, catalog, users).average_rate, (), True)
    if problem is None:
        problem = build_problem(target, catalog, users, M)

    q = list(config.initial_q) if config.initial_q is not None else _default_start(catalog, M)
    if len(q) != N:
        raise LengthMismatch(f"initial placement has {len(q)} entries for {N} files")
    if any(not 0.0 < v < 1.0 for v in q):
        raise OutOfRange("initial placement must lie strictly inside (0, 1)")
    used = math.fsum(v * f for v, f in zip(q, catalog.sizes))
    if used >= M:
        q = [v * (1.0 - START_FLOOR) * M / used for v in q]
    x = [1.0 - v + X_MARGIN for v in q]

    trace = []
    prev = None
    converged = False
    for it in range(1, config.max_outer + 1):
        q, x = _strict_start(catalog, M, q, x)
        standard = condense(problem, q, x)
        start = {qvar(n): q[n] for n in range(N)} | {xvar(n): x[n] for n in range(N)}
        sol = solve_gp(standard, config, start)
        q = [sol.values[qvar(n)] for n in range(N)]
        x = [sol.values[xvar(n)] for n in range(N)]
        obj = sol.objective
        violation = _parent_violation(catalog, M, q, x)
        if violation > FEASIBILITY_TOL:
            raise NumericalBreakdown(f"round {it} solution violates the original constraints by {violation:.3g}")
        trace.append(OuterStep(it, obj, tuple(q), sol.newton_steps, sol.kkt_residual))
        log.info("%s M=%g round %d: objective %.10g, KKT residual %.2g, %d Newton steps", target.value, M, it,
                 obj, sol.kkt_residual, sol.newton_steps + sol.phase1_steps)
        if prev is not None:
            if obj > prev * (1.0 + 10.0 * config.inner_tol) + 1e-300:
                raise NonMonotoneTrace(f"objective rose from {prev!r} to {obj!r} in round {it}")
            if abs(prev - obj) <= config.outer_tol * abs(prev):
                converged = True
                break
        prev = obj
    q_final = tuple(min(1.0, max(0.0, v)) for v in q)
    return SuccessiveResult(q_final, tight_objective(problem, q_final), tuple(trace), converged)


def interior_start(q: Sequence[float], floor: float = START_FLOOR) -> tuple[float, ...]:
    """Clip a placement into [floor, 1 - floor] so it can seed successive_gp."""
    return tuple(min(1.0 - floor, max(floor, v)) for v in q)


def best_of_starts(target: Target | str, catalog: FileCatalog, users: UserPopulation, M: float,
                   starts: Sequence[Sequence[float] | None], config: SolverConfig = SolverConfig()) -> SuccessiveResult:
    """Run successive_gp from several initial placements and keep the lowest rate.

    None stands for the default start. Boundary placements are pulled inside
    with interior_start; ties keep the earlier start.
    """
    target = Target(target)
    problem = None
    if 0 < M < catalog.total_size:
        problem = build_problem(target, catalog, users, M)
    best = None
    for q0 in starts:
        cfg = replace(config, initial_q=None if q0 is None else interior_start(q0))
        result = successive_gp(target, catalog, users, M, cfg, problem=problem)
        if best is None or result.rate < best.rate:
            best = result
    if best is None:
        raise ValueError("need at least one start")
    return best
