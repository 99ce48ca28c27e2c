"""Interior-point solver for standard geometric programs in log space.

With v = exp(u) every posynomial becomes a log-sum-exp of affine forms, so the
problem is convex in u and a primal-dual interior-point method applies.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..errors import Infeasible, MaxIterations, NotStandardGP, NumericalBreakdown
from .posynomial import Monomial
from .problems import EPIGRAPH_ROLES, GPProblem, SolverConfig

log = logging.getLogger(__name__)

LOG_BOX = 40.0  # every variable is kept inside [e^-40, e^40]
FEAS_TOL = 1e-9
PHASE1_MARGIN = 1e-6
PHASE1_SKIP = 1e-6
ALPHA, BETA = 0.01, 0.5
MIN_STEP = 1e-12
FALLBACK_SIGMA = 0.5  # centering weight when the predictor-corrector step fails


@dataclass(frozen=True)
class GPSolution:
    values: dict
    objective: float
    duality_gap: float  # bound on log(objective) - log(optimum)
    kkt_residual: float
    newton_steps: int
    phase1_steps: int


class _Groups:
    """Rows of affine forms grouped into log-sum-exp functions."""

    def __init__(self, rows: sp.csr_matrix, b: np.ndarray, seg: np.ndarray):
        self.A = rows.tocsr()
        self.b = np.asarray(b, dtype=float)
        self.seg = np.asarray(seg, dtype=np.int64)
        self.starts = np.flatnonzero(np.r_[True, self.seg[1:] != self.seg[:-1]])
        self.m = len(self.starts)
        R = len(self.b)
        self.S = sp.csr_matrix((np.ones(R), (self.seg, np.arange(R))), shape=(self.m, R))

    def values(self, u):
        z = self.A @ u + self.b
        zmax = np.maximum.reduceat(z, self.starts)
        e = np.exp(z - zmax[self.seg])
        tot = np.add.reduceat(e, self.starts)
        return zmax + np.log(tot), e / tot[self.seg]

    def jacobian(self, pi):
        return (self.S @ sp.diags(pi) @ self.A).tocsr()


@dataclass
class _Core:
    names: list
    index: dict
    alias: dict
    obj: _Groups
    rows: list  # (coef, [(col, exp)]) for every constraint row
    row_group: list
    n_groups: int
    epi_of_group: np.ndarray  # compiled epigraph column bounded by the group, or -1
    n_presolve_merged: int


def _presolve(problem: GPProblem):
    """Merge epigraph variables whose lower-bound constraints are identical.

    Such variables always take the same value at an optimum, so one of them
    carries the summed objective weight of the whole class.
    """
    roles = problem.variables
    blocked = set()
    bodies = defaultdict(list)
    passthrough = []
    for c in problem.constraints:
        epi = {v for t in c.lhs.terms for v in t.variables if roles[v] in EPIGRAPH_ROLES}
        if len(epi) == 1:
            (v,) = epi
            if all(t.exponent(v) == -1.0 for t in c.lhs.terms):
                bodies[v].append(tuple(sorted((t.coefficient, t.without(v).exponents) for t in c.lhs.terms)))
                continue
        blocked |= epi
        passthrough.append(c.lhs)
    weight = defaultdict(float)
    other_obj = []
    for t in problem.objective.terms:
        if len(t.exponents) == 1 and t.exponents[0][1] == 1.0 and roles[t.exponents[0][0]] in EPIGRAPH_ROLES:
            weight[t.exponents[0][0]] += t.coefficient
        else:
            blocked |= {v for v in t.variables if roles[v] in EPIGRAPH_ROLES}
            other_obj.append(t)

    classes = {}
    alias = {}
    for v in sorted(bodies):
        if v in blocked:
            continue
        key = frozenset(bodies[v])
        rep = classes.setdefault(key, v)
        alias[v] = rep
    merged_weight = defaultdict(float)
    for v, w in weight.items():
        if v in alias:
            merged_weight[alias[v]] += w
        else:
            other_obj.append(Monomial.of(w, {v: 1.0}))
    objective = other_obj + [Monomial.of(merged_weight[rep], {rep: 1.0})
                             for rep in sorted(set(alias.values())) if merged_weight[rep] > 0]

    constraints = []
    seen = set()

    def add(terms):
        key = tuple(sorted((t.coefficient, t.exponents) for t in terms))
        if key not in seen:
            seen.add(key)
            constraints.append(terms)

    for lhs in passthrough:
        add(lhs.terms)
    for v in sorted(bodies):
        if v in alias and alias[v] != v:
            continue
        for body in bodies[v]:
            add(tuple(Monomial(c, e) * Monomial.of(1.0, {v: -1.0}) for c, e in body))
    return objective, constraints, alias


def _compile(problem: GPProblem) -> _Core:
    if "core" in problem._cache:
        return problem._cache["core"]
    objective, constraints, alias = _presolve(problem)
    used = set()
    for t in objective:
        used.update(t.variables)
    for terms in constraints:
        for t in terms:
            used.update(t.variables)
    for link in problem.links:
        used.update((link.q, link.x))
    names = sorted(used)
    index = {v: j for j, v in enumerate(names)}
    for v in problem.variables:
        alias.setdefault(v, v)

    def affine(terms, group_ids):
        data, ri, ci, b = [], [], [], []
        for r, t in enumerate(terms):
            b.append(math.log(t.coefficient))
            for v, e in t.exponents:
                ri.append(r)
                ci.append(index[v])
                data.append(e)
        mat = sp.csr_matrix((data, (ri, ci)), shape=(len(terms), len(names)))
        return mat, np.array(b), np.asarray(group_ids)

    obj = _Groups(*affine(objective, [0] * len(objective)))
    rows, row_group = [], []
    epi_of_group = []
    for g, terms in enumerate(constraints):
        epi = -1
        for t in terms:
            rows.append(t)
            row_group.append(g)
            for v, e in t.exponents:
                if problem.variables[v] in EPIGRAPH_ROLES and e == -1.0:
                    epi = index[v]
        epi_of_group.append(epi)
    n_groups = len(constraints)
    # box rows keep the log-space problem bounded
    for j, v in enumerate(names):
        rows.append(Monomial.of(math.exp(-LOG_BOX), {v: 1.0}))
        row_group.append(n_groups)
        epi_of_group.append(-1)
        n_groups += 1
        rows.append(Monomial.of(math.exp(-LOG_BOX), {v: -1.0}))
        row_group.append(n_groups)
        epi_of_group.append(-1)
        n_groups += 1
    core = _Core(names, index, alias, obj, rows, row_group, n_groups, np.array(epi_of_group, dtype=np.int64),
                 len(problem.variables) - len(names))
    problem._cache["core"] = core
    return core


def _constraint_groups(problem: GPProblem, core: _Core) -> _Groups:
    rows = list(core.rows)
    groups = list(core.row_group)
    g = core.n_groups
    for link in problem.links:
        rows.append(link.monomial())
        groups.append(g)
        g += 1
    data, ri, ci, b = [], [], [], []
    for r, t in enumerate(rows):
        b.append(math.log(t.coefficient))
        for v, e in t.exponents:
            ri.append(r)
            ci.append(core.index[v])
            data.append(e)
    mat = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), len(core.names)))
    return _Groups(mat, np.array(b), np.array(groups))


def _factor(H):
    """Return a solver for H x = b, regularizing H if it is not numerically positive definite."""
    # symmetric diagonal scaling keeps the factorization accurate when
    # variables live on very different scales
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / d[:, None] / d[None, :]
    n = len(d)
    reg = 0.0
    for _ in range(8):
        try:
            c = scipy.linalg.cho_factor(Hs + reg * np.eye(n), check_finite=True)
            return lambda b: scipy.linalg.cho_solve(c, b / d) / d
        except (np.linalg.LinAlgError, ValueError):
            reg = 1e-14 if reg == 0.0 else reg * 100.0
    raise NumericalBreakdown("Newton system is not positive definite even after regularization")


def _max_step(v, dv):
    neg = dv < 0
    return float(np.min(-v[neg] / dv[neg])) if np.any(neg) else math.inf


class _PrimalDual:
    """Primal-dual interior-point method for min f0 s.t. f_i <= 0 with log-sum-exp f's.

    Slacks turn the inequalities into f + s = 0 with s, lam > 0, so iterates
    need not satisfy the curved constraints until convergence. Steps use
    Mehrotra's predictor-corrector rule and backtrack on the KKT residual norm.
    """

    def __init__(self, obj: _Groups, cons: _Groups, max_iter: int):
        self.obj, self.cons = obj, cons
        self.max_iter = max_iter
        self.iterations = 0

    def _first_order(self, u):
        f0, pi0 = self.obj.values(u)
        f, pi = self.cons.values(u)
        g0 = np.asarray(self.obj.A.T @ pi0).ravel()
        G = self.cons.jacobian(pi)
        return pi0, g0, f, pi, G

    def _merit(self, u, s, lam, target):
        _, g0, f, _, G = self._first_order(u)
        r_d = g0 + np.asarray(G.T @ lam).ravel()
        r_p = f + s
        r_c = s * lam - target
        return math.sqrt(float(r_d @ r_d + r_p @ r_p + r_c @ r_c))

    def run(self, u, s, lam, gap_tol, feas_tol, stop=None):
        """Return ``(u, gap, dual_residual, primal_residual, stopped_early)``."""
        m = self.cons.m
        A0, A = self.obj.A, self.cons.A
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            while True:
                pi0, g0, f, pi, G = self._first_order(u)
                r_d = g0 + np.asarray(G.T @ lam).ravel()
                r_p = f + s
                gap = float(s @ lam)
                res_d = float(np.max(np.abs(r_d)))
                res_p = float(np.max(np.abs(r_p)))
                if gap <= gap_tol and res_d <= feas_tol and res_p <= feas_tol:
                    return u, gap, res_d, res_p, False
                if stop is not None and stop(u):
                    return u, gap, res_d, res_p, True
                if self.iterations >= self.max_iter:
                    raise MaxIterations(f"no convergence in {self.max_iter} interior-point iterations "
                                        f"(gap {gap:.3g}, dual residual {res_d:.3g}, primal residual {res_p:.3g})")
                self.iterations += 1
                mu = gap / m
                W = lam / s
                H = (A0.T @ sp.diags(pi0) @ A0).toarray() - np.outer(g0, g0)
                H += (A.T @ sp.diags(pi * lam[self.cons.seg]) @ A).toarray()
                H += (G.T @ sp.diags(W - lam) @ G).toarray()
                solve = _factor(H)

                def direction(r_c):
                    du = solve(-(r_d + np.asarray(G.T @ (W * r_p - r_c / s)).ravel()))
                    dlam = W * (np.asarray(G @ du).ravel() + r_p) - r_c / s
                    ds = -(r_c + s * dlam) / lam
                    return du, ds, dlam

                _, ds_a, dlam_a = direction(s * lam)
                a_aff = min(1.0, _max_step(s, ds_a), _max_step(lam, dlam_a))
                mu_aff = float((s + a_aff * ds_a) @ (lam + a_aff * dlam_a)) / m
                sigma = min(1.0, (mu_aff / mu) ** 3)
                plans = [(sigma * mu, ds_a * dlam_a), (FALLBACK_SIGMA * mu, 0.0)]
                for target, corrector in plans:
                    du, ds, dlam = direction(s * lam + corrector - target)
                    step = min(1.0, 0.99 * _max_step(s, ds), 0.99 * _max_step(lam, dlam))
                    r0 = math.sqrt(float(r_d @ r_d + r_p @ r_p) + float(np.sum((s * lam - target) ** 2)))
                    while step >= MIN_STEP:
                        cand = (u + step * du, s + step * ds, lam + step * dlam)
                        if self._merit(*cand, target) <= (1.0 - ALPHA * step) * r0:
                            break
                        step *= BETA
                    if step >= MIN_STEP:
                        break
                else:
                    if gap <= gap_tol and res_d <= math.sqrt(feas_tol) and res_p <= math.sqrt(feas_tol):
                        return u, gap, res_d, res_p, False  # roundoff floor reached
                    raise NumericalBreakdown(f"line search stalled (gap {gap:.3g}, dual residual "
                                             f"{res_d:.3g}, primal residual {res_p:.3g})")
                log.debug("ipm %d: gap %.3g, dual residual %.3g, primal residual %.3g, step %.3g",
                          self.iterations, gap, res_d, res_p, step)
                u, s, lam = cand


def _initial_duals(f, t0):
    s = np.maximum(-f, 1e-8)
    return s, 1.0 / (t0 * s)


def _phase1(obj_dim: int, cons: _Groups, u0, config: SolverConfig):
    """Find a strictly feasible point by minimizing a common slack s."""
    n = obj_dim
    A_aug = sp.hstack([cons.A, sp.csr_matrix(-np.ones((cons.A.shape[0], 1)))]).tocsr()
    cons_aug = _Groups(A_aug, cons.b, cons.seg)
    obj_aug = _Groups(sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n + 1)), np.zeros(1), np.zeros(1, dtype=np.int64))
    with np.errstate(over="ignore"):
        f, _ = cons.values(u0)
    s0 = float(np.max(f)) + 1.0
    start = np.r_[u0, s0]
    solver = _PrimalDual(obj_aug, cons_aug, config.max_inner)

    def feasible(v):
        return bool(np.max(cons.values(v[:n])[0]) < -PHASE1_MARGIN)

    f_aug, _ = cons_aug.values(start)
    u, *_ = solver.run(start, *_initial_duals(f_aug, 1.0), config.inner_tol, FEAS_TOL, stop=feasible)
    f, _ = cons.values(u[:n])
    if not np.max(f) < 0:
        raise Infeasible(f"no strictly feasible point (largest constraint value {np.max(f):.3g} in log scale)")
    return u[:n], solver.iterations


def _start_vector(problem: GPProblem, core: _Core, cons: _Groups, start: Mapping[str, float] | None):
    u = np.zeros(len(core.names))
    have = np.zeros(len(core.names), dtype=bool)
    for v, val in (start or {}).items():
        rep = core.alias.get(v, v)
        j = core.index.get(rep)
        if j is not None and val > 0:
            u[j] = max(u[j], math.log(val)) if have[j] else math.log(val)
            have[j] = True
    u = np.clip(u, -LOG_BOX + 1.0, LOG_BOX - 1.0)
    # place unset epigraph variables just above their tight value
    epi = core.epi_of_group
    epi_cols = np.unique(epi[epi >= 0])
    missing = epi_cols[~have[epi_cols]]
    if missing.size:
        trial = u.copy()
        trial[missing] = 0.0
        with np.errstate(over="ignore"):
            f, _ = cons.values(trial)
        n_core = len(epi)
        best = np.full(len(core.names), -np.inf)
        mask = epi >= 0
        np.maximum.at(best, epi[mask], f[:n_core][mask])
        u[missing] = np.clip(best[missing] + 1e-3, -LOG_BOX + 1.0, LOG_BOX - 1.0)
    return u


def solve_gp(problem: GPProblem, config: SolverConfig = SolverConfig(),
             start: Mapping[str, float] | None = None, t0: float = 1.0) -> GPSolution:
    """Solve a standard GP (all q/x links condensed) to duality gap ``config.inner_tol``."""
    if not problem.is_standard:
        raise NotStandardGP("solve_gp needs a standard GP; condense the links first")
    core = _compile(problem)
    cons = _constraint_groups(problem, core)
    u = _start_vector(problem, core, cons, start)
    with np.errstate(over="ignore"):
        f, _ = cons.values(u)
    phase1_steps = 0
    # slacks absorb a slightly infeasible start; only a clearly infeasible one needs phase 1
    if np.max(f) > PHASE1_SKIP:
        u, phase1_steps = _phase1(len(core.names), cons, u, config)
    pd = _PrimalDual(core.obj, cons, config.max_inner)
    f, _ = cons.values(u)
    u, gap, kkt, _, _ = pd.run(u, *_initial_duals(f, t0), config.inner_tol, FEAS_TOL)
    f0, _ = core.obj.values(u)
    values = {v: math.exp(u[core.index[core.alias[v]]]) for v in problem.variables
              if core.alias[v] in core.index}
    log.debug("gp solved: %d Newton steps, %d phase-1 steps, objective %.10g",
              pd.iterations, phase1_steps, math.exp(f0[0]))
    return GPSolution(values, math.exp(f0[0]), gap, kkt, pd.iterations, phase1_steps)
