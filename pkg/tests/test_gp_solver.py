import math

import numpy as np
import pytest

from codedcache.errors import Infeasible, NotStandardGP
from codedcache.gp import Constraint, GPProblem, Monomial, SolverConfig, build_p1, build_p4, condense, posy, solve_gp
from codedcache.gp.solver import _compile, _constraint_groups
from codedcache.model import UserPopulation, build_catalog

cvxpy = pytest.importorskip("cvxpy")


def mono(c, **exps):
    return Monomial.of(c, exps)


def problem(objective, *constraints, names=None):
    names = names or sorted({v for t in objective.terms for v in t.variables}
                            | {v for c in constraints for t in c.terms for v in t.variables})
    return GPProblem(objective, tuple(Constraint(c) for c in constraints), {v: "aux" for v in names})


def test_reciprocal_bound():
    sol = solve_gp(problem(posy(mono(1.0, v=1.0)), posy(mono(1.0, v=-1.0))))
    assert sol.values["v"] == pytest.approx(1.0, rel=1e-6)
    assert sol.objective == pytest.approx(1.0, rel=1e-6)
    assert sol.duality_gap <= 1e-8


def test_flat_optimum():
    sol = solve_gp(problem(posy(mono(1.0, a=1.0, b=1.0)), posy(mono(1.0, a=-1.0, b=-1.0))))
    assert sol.objective == pytest.approx(1.0, rel=1e-6)
    assert sol.values["a"] * sol.values["b"] == pytest.approx(1.0, rel=1e-6)


def test_cube_root_optimum():
    sol = solve_gp(problem(posy(mono(1.0, a=1.0), mono(1.0, b=1.0)), posy(mono(1.0, a=-2.0, b=-1.0))))
    assert sol.values["a"] == pytest.approx(2 ** (1 / 3), rel=1e-6)
    assert sol.values["b"] == pytest.approx(2 ** (-2 / 3), rel=1e-6)
    assert sol.objective == pytest.approx(2 ** (1 / 3) + 2 ** (-2 / 3), rel=1e-6)


def test_weighted_cube_root():
    # v = 2u at the optimum, so u^3 = 1/2
    sol = solve_gp(problem(posy(mono(1.0, u=1.0), mono(1.0, v=1.0)), posy(mono(2.0, u=-1.0, v=-2.0))))
    u = 2 ** (-1 / 3)
    assert sol.values["u"] == pytest.approx(u, rel=1e-6)
    assert sol.values["v"] == pytest.approx(2 * u, rel=1e-6)
    assert sol.objective == pytest.approx(3 * u, rel=1e-6)


def test_infeasible():
    with pytest.raises(Infeasible):
        solve_gp(problem(posy(mono(1.0, v=1.0)), posy(mono(2.0, v=1.0)), posy(mono(2.0, v=-1.0))))


def test_rejects_uncondensed():
    cat, _ = build_catalog([1.0], [1.0])
    with pytest.raises(NotStandardGP):
        solve_gp(build_p1(cat, UserPopulation((1.0,)), 0.5))


def _cvx_solve(prob):
    names = sorted(prob.variables)
    var = {v: cvxpy.Variable(pos=True, name=v) for v in names}

    def expr(p):
        total = 0
        for t in p.terms:
            term = t.coefficient
            for v, e in t.exponents:
                term = term * var[v] ** e
            total = total + term
        return total

    cons = [expr(c.lhs) <= 1 for c in prob.standard_constraints()]
    cp = cvxpy.Problem(cvxpy.Minimize(expr(prob.objective)), cons)
    cp.solve(gp=True)
    return cp.value


def test_random_gps_against_cvxpy():
    rng = np.random.default_rng(3)
    names = ["a", "b", "c"]
    checked = 0
    for _ in range(20):
        obj = posy(*[Monomial.of(float(rng.uniform(0.5, 2)), dict(zip(names, rng.uniform(-1, 1, 3))))
                     for _ in range(3)])
        cons = [posy(*[Monomial.of(float(rng.uniform(0.1, 1)), dict(zip(names, rng.uniform(-2, 2, 3))))
                       for _ in range(2)]) for _ in range(4)]
        # bound every variable so the problem is not unbounded
        for v in names:
            cons.append(posy(Monomial.of(1e-2, {v: 1.0})))
            cons.append(posy(Monomial.of(1e-2, {v: -1.0})))
        prob = problem(obj, *cons, names=names)
        try:
            ref = _cvx_solve(prob)
        except cvxpy.error.SolverError:
            continue
        if ref is None or not math.isfinite(ref):
            continue
        try:
            sol = solve_gp(prob)
        except Infeasible:
            pytest.fail("reference solver found a feasible point")
        assert sol.objective == pytest.approx(ref, rel=1e-5)
        checked += 1
    assert checked >= 10


def test_condensed_p1_against_cvxpy():
    cat, _ = build_catalog([0.5, 0.3, 0.2], [2.0, 1.0, 3.0])
    prob = condense(build_p1(cat, UserPopulation((0.7, 0.5)), 2.0), [0.3, 0.3, 0.3], [0.7, 0.7, 0.7])
    ref = _cvx_solve(prob)
    assert solve_gp(prob).objective == pytest.approx(ref, rel=1e-5)
    lb = condense(build_p4(cat, UserPopulation((0.7, 0.5)), 2.0), [0.3, 0.3, 0.3], [0.7, 0.7, 0.7])
    assert solve_gp(lb).objective == pytest.approx(_cvx_solve(lb), rel=1e-5)


def test_constraint_gradient_matches_finite_differences():
    cat, _ = build_catalog([0.5, 0.3, 0.2], [2.0, 1.0, 3.0])
    prob = condense(build_p1(cat, UserPopulation((0.7, 0.5)), 2.0), [0.3, 0.2, 0.4], [0.8, 0.9, 0.7])
    core = _compile(prob)
    groups = _constraint_groups(prob, core)
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(100):
        u = rng.uniform(-2, 1, len(core.names))
        f, pi = groups.values(u)
        J = groups.jacobian(pi).toarray()
        j = int(rng.integers(len(u)))
        e = np.zeros_like(u)
        e[j] = h
        fd = (groups.values(u + e)[0] - groups.values(u - e)[0]) / (2 * h)
        scale = np.maximum(np.abs(J[:, j]), 1.0)
        assert np.all(np.abs(fd - J[:, j]) <= 1e-5 * scale)


def test_kkt_and_gap_reported():
    cat, _ = build_catalog([0.6, 0.4], [1.0, 1.0])
    prob = condense(build_p1(cat, UserPopulation((1.0, 1.0)), 1.0), [0.5, 0.5], [0.5, 0.5])
    sol = solve_gp(prob, SolverConfig(inner_tol=1e-9))
    assert sol.duality_gap <= 1e-9
    assert sol.kkt_residual < 1e-6
    assert sol.newton_steps > 0
    assert prob.max_violation(sol.values) <= 1e-7
