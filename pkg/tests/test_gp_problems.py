import io
import itertools
import math
import random

import pytest

from codedcache.combinatorics import canonical_leader_group, enumerate_active_sets, nonredundant_groups
from codedcache.errors import NonPositiveAnchor, OutOfRange, ProblemTooLarge, TooManyPermutations
from codedcache.gp import Link, Monomial, Posynomial, build_p1, build_p4, condense, dump_gp, load_gp, posy
from codedcache.gp.problems import qvar, xvar
from codedcache.model import DemandScenario, UserPopulation, build_catalog
from codedcache.rate import Scheme


def test_monomial_algebra():
    a = Monomial.of(2.0, {"u": 1.0, "v": -2.0})
    b = Monomial.of(3.0, {"u": -1.0})
    c = a * b
    assert c.coefficient == 6.0 and c.exponents == (("v", -2.0),)
    assert (a ** 2).exponent("v") == -4.0
    assert (a / a).exponents == ()
    assert a.without("v").exponents == (("u", 1.0),)
    assert str(Monomial.of(1.5, {"u": 2.0})) == "1.5 u:2.0"
    with pytest.raises(ValueError):
        Monomial(0.0)
    with pytest.raises(ValueError):
        Monomial(math.inf)


def test_posynomial_algebra():
    p = posy(Monomial.of(1.0, {"u": 1.0}), Monomial.of(2.0, {"v": 1.0}))
    vals = {"u": 3.0, "v": 0.5}
    assert p.evaluate(vals) == 4.0
    assert (p * 2).evaluate(vals) == 8.0
    assert (p / Monomial.of(2.0, {"u": 1.0})).evaluate(vals) == pytest.approx(4.0 / 6.0)
    assert (p + Monomial.of(1.0)).evaluate(vals) == 5.0
    assert (p + p).evaluate(vals) == 8.0
    assert p.variables == {"u", "v"}
    with pytest.raises(ValueError):
        Posynomial(())


def test_log_transform_matches_direct_evaluation():
    rng = random.Random(0)
    names = [f"v{i}" for i in range(6)]
    for _ in range(1000):
        m = Monomial.of(math.exp(rng.uniform(-5, 5)), {v: rng.uniform(-3, 3) for v in rng.sample(names, 3)})
        point = {v: math.exp(rng.uniform(-2, 2)) for v in names}
        logs = {v: math.log(x) for v, x in point.items()}
        direct = m.evaluate(point)
        assert abs(math.exp(m.log_evaluate(logs)) - direct) <= 1e-12 * direct


def test_posynomial_log_evaluate():
    p = posy(Monomial.of(1.0, {"u": 1.0}), Monomial.of(2.0, {"u": -1.0}))
    assert math.exp(p.log_evaluate({"u": math.log(2.0)})) == pytest.approx(3.0, rel=1e-14)


def test_p1_single_user_single_file():
    cat, _ = build_catalog([1.0], [10.0])
    prob = build_p1(cat, UserPopulation((1.0,)), 4.0)
    assert set(prob.variables) == {"q0", "x0", "w[0|0|0]"}
    assert len(prob.constraints) + len(prob.links) == 4
    assert sorted(c.tag for c in prob.constraints) == ["budget", "cache_fraction", "message"]
    assert not prob.is_standard


def test_p1_message_variable_count():
    cat, _ = build_catalog([0.6, 0.4], [1.0, 2.0])
    users = UserPopulation((0.5, 0.5))
    prob = build_p1(cat, users, 1.0)
    want = 0
    for active, _ in enumerate_active_sets(users):
        for demands in itertools.product(range(2), repeat=len(active)):
            if active:
                d = DemandScenario(active, demands)
                want += len(list(nonredundant_groups(active, canonical_leader_group(d))))
    assert len(prob.variables_with_role("w")) == want
    ccs = build_p1(cat, users, 1.0, delivery=Scheme.DCCS)
    assert len(ccs.variables_with_role("w")) == sum(2 ** len(a) - 1 for a, _ in enumerate_active_sets(users)
                                                    for _ in itertools.product(range(2), repeat=len(a)))


def test_p1_guards():
    cat, _ = build_catalog([0.5, 0.5], [1.0, 1.0])
    with pytest.raises(OutOfRange):
        build_p1(cat, UserPopulation((1.0,)), 0.0)
    with pytest.raises(ProblemTooLarge):
        build_p1(cat, UserPopulation.uniform(4, 0.5), 1.0, max_variables=10)


def test_p4_counts():
    cat, _ = build_catalog([0.6, 0.4], [1.0, 1.0])
    one = build_p4(cat, UserPopulation((1.0,)), 1.0)
    assert sorted(one.variables_with_role("r")) == ["r[0|0]", "r[0|1]"]
    assert sum(c.tag == "lower_bound" for c in one.constraints) == 2
    two = build_p4(cat, UserPopulation((1.0, 1.0)), 1.0)
    both = [c for c in two.constraints if c.tag == "lower_bound" and "r[0,1|0,1]" in c.lhs.variables]
    assert len(both) == 2


def test_p4_permutation_guard(monkeypatch):
    import codedcache.gp.problems as problems
    monkeypatch.setattr(problems, "MAX_PERMUTATIONS", 5)
    cat, _ = build_catalog([1 / 3] * 3, [1.0] * 3)
    build_p4(cat, UserPopulation.uniform(2, 1.0), 1.0)
    with pytest.raises(TooManyPermutations):
        build_p4(cat, UserPopulation.uniform(3, 1.0), 1.0)


def test_condense_equal_at_anchor():
    link = condense(build_p1(build_catalog([1.0], [1.0])[0], UserPopulation((1.0,)), 0.5), [0.5], [0.5]).links[0]
    assert link.weights == (0.5, 0.5)
    assert link.denominator().evaluate({"q0": 0.5, "x0": 0.5}) == pytest.approx(1.0, abs=1e-12)


def test_condensed_monomial_never_exceeds_sum():
    rng = random.Random(1)
    for q0, x0 in [(0.9, 0.1), (0.5, 0.5), (1e-3, 0.999), (0.3, 2.0)]:
        link = Link("q", "x", (q0, x0))
        assert abs(link.denominator().evaluate({"q": q0, "x": x0}) - (q0 + x0)) <= 1e-12 * (q0 + x0)
        for _ in range(100):
            q, x = rng.uniform(1e-4, 2), rng.uniform(1e-4, 2)
            assert link.denominator().evaluate({"q": q, "x": x}) <= (q + x) * (1 + 1e-14)
    alpha, beta = Link("q", "x", (0.9, 0.1)).weights
    assert alpha == pytest.approx(0.9) and beta == pytest.approx(0.1)


def test_condensed_feasible_set_inside_original():
    rng = random.Random(2)
    for _ in range(200):
        q0, x0 = rng.uniform(0.01, 1), rng.uniform(0.01, 1)
        link = Link("q", "x", (q0, x0))
        q, x = rng.uniform(0.001, 1.5), rng.uniform(0.001, 1.5)
        if link.value({"q": q, "x": x}) <= 1.0:
            assert q + x >= 1.0 - 1e-12


def test_condense_rejects_bad_anchor():
    prob = build_p1(build_catalog([1.0], [1.0])[0], UserPopulation((1.0,)), 0.5)
    with pytest.raises(NonPositiveAnchor):
        condense(prob, [0.0], [1.0])
    with pytest.raises(ValueError):
        condense(prob, [0.5, 0.5], [0.5])


def test_problem_registry_checks():
    with pytest.raises(ValueError):
        from codedcache.gp import Constraint, GPProblem
        GPProblem(posy(Monomial.of(1.0, {"a": 1.0})), (Constraint(posy(Monomial.of(1.0, {"b": 1.0}))),), {"a": "q"})


def test_dump_load_round_trip():
    cat, _ = build_catalog([0.7, 0.3], [3.0, 5.0])
    users = UserPopulation((0.6, 0.8))
    for prob in (build_p1(cat, users, 2.0), build_p4(cat, users, 2.0)):
        standard = condense(prob, [0.3, 0.2], [0.75, 0.81])
        buf = io.StringIO()
        dump_gp(standard, buf)
        back = load_gp(buf.getvalue())
        assert back.objective == standard.objective
        assert back.constraints == standard.constraints
        assert back.links == standard.links
        assert dict(back.variables) == dict(standard.variables)
    raw = io.StringIO()
    dump_gp(build_p1(cat, users, 2.0), raw)
    assert load_gp(raw.getvalue()).links[0].anchor is None


def test_tight_values_give_average_rate():
    from codedcache.rate import average_rate
    cat, _ = build_catalog([0.5, 0.3, 0.2], [4.0, 2.0, 7.0])
    users = UserPopulation((0.4, 0.9))
    q = [0.3, 0.8, 0.1]
    base = {qvar(n): q[n] for n in range(3)} | {xvar(n): 1 - q[n] for n in range(3)}
    for prob, scheme in [(build_p1(cat, users, 5.0), Scheme.DMCCS),
                         (build_p1(cat, users, 5.0, delivery=Scheme.DCCS), Scheme.DCCS),
                         (build_p4(cat, users, 5.0), Scheme.LOWER_BOUND)]:
        got = prob.evaluate(prob.tight_values(base))
        assert got == pytest.approx(average_rate(scheme, q, cat, users).average_rate, rel=1e-12)
