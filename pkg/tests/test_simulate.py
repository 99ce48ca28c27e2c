import io
import itertools
import math

import numpy as np
import pytest

from codedcache.errors import OutOfRange
from codedcache.model import DemandScenario, UserPopulation, build_catalog
from codedcache.rate import Scheme, average_rate, rate_mccs_demand
from codedcache.simulate import (
    decode_check,
    deliver,
    empirical_rate,
    partition_subfiles,
    random_placement,
    total_bits,
)


def catalog(sizes, pop=None):
    pop = pop or [1 / len(sizes)] * len(sizes)
    return build_catalog(pop, sizes)[0]


def test_placement_extremes():
    cat = catalog([50.0, 80.0])
    pl = random_placement([0.0, 1.0], cat, 3, seed=1)
    assert not pl.cached[0].any()
    assert pl.cached[1].all()


def test_placement_caches_exact_counts():
    cat = catalog([1000.0, 333.0])
    pl = random_placement([0.37, 0.5], cat, 4, seed=2)
    assert (pl.cached[0].sum(axis=1) == 370).all()
    assert (pl.cached[1].sum(axis=1) == 166).all()  # round(166.5) to even
    assert pl.rounding[1] == pytest.approx(166 - 166.5)
    assert pl.cached_bits(0, 0) == set(np.flatnonzero(pl.cached[0][0]).tolist())


def test_placement_rejects_bad_q():
    cat = catalog([10.0])
    with pytest.raises(OutOfRange):
        random_placement([1.5], cat, 1, seed=0)
    with pytest.raises(OutOfRange):
        random_placement([0.5, 0.5], cat, 1, seed=0)


def test_placement_is_deterministic():
    cat = catalog([500.0, 300.0])
    a = random_placement([0.3, 0.6], cat, 3, seed=9)
    b = random_placement([0.3, 0.6], cat, 3, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.cached, b.cached))
    d = DemandScenario((0, 2), (1, 0))
    ma = deliver(d, partition_subfiles(a, d.active_set))
    mb = deliver(d, partition_subfiles(b, d.active_set))
    assert [m.parts[0][3].tolist() for m in ma] == [m.parts[0][3].tolist() for m in mb]
    assert total_bits(ma) == total_bits(mb)


def test_partition_trivial_cases():
    cat = catalog([40.0])
    empty = partition_subfiles(random_placement([0.0], cat, 1, 0), (0,))
    assert empty.size(0, ()) == 40
    full = partition_subfiles(random_placement([1.0], cat, 2, 0), (0, 1))
    assert full.size(0, (0, 1)) == 40 and full.size(0, ()) == 0


def test_partition_sizes_concentrate():
    cat = catalog([1e5])
    part = partition_subfiles(random_placement([0.5], cat, 2, 3), (0, 1))
    for S in [(), (0,), (1,), (0, 1)]:
        assert abs(part.size(0, S) - 25000) <= 700


def test_empty_subfile_concentrates_over_seeds():
    F, q = 10_000, 0.5
    p = (1 - q) ** 2
    sigma = math.sqrt(F * p * (1 - p))
    cat = catalog([float(F)])
    for seed in range(100):
        part = partition_subfiles(random_placement([q], cat, 2, seed), (0, 1))
        assert abs(part.size(0, ()) - F * p) <= 5 * sigma


def test_partition_property_random():
    rng = np.random.default_rng(5)
    for t in range(30):
        N, K = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        cat = catalog([float(rng.integers(20, 200)) for _ in range(N)])
        pl = random_placement(rng.uniform(0, 1, N).tolist(), cat, K, seed=t)
        active = tuple(k for k in range(K) if rng.random() < 0.7) or (0,)
        part = partition_subfiles(pl, active)
        assert part.is_partition()
        for (n, S), bits in part.pieces.items():
            for k in active:
                assert pl.cached[n][k, bits].all() == (k in S)


def test_partition_rejects_unknown_user():
    pl = random_placement([0.5], catalog([10.0]), 2, 0)
    with pytest.raises(OutOfRange):
        partition_subfiles(pl, (0, 5))


def test_single_user_gets_whole_file():
    cat = catalog([70.0])
    d = DemandScenario((0,), (0,))
    msgs = deliver(d, partition_subfiles(random_placement([0.0], cat, 1, 0), d.active_set))
    assert [m.length for m in msgs] == [70]
    assert decode_check(d, random_placement([0.0], cat, 1, 0), msgs).all_decoded


def test_full_cache_sends_nothing():
    cat = catalog([30.0, 30.0])
    pl = random_placement([1.0, 1.0], cat, 3, 0)
    d = DemandScenario((0, 1, 2), (0, 1, 1))
    assert total_bits(deliver(d, partition_subfiles(pl, d.active_set))) == 0


def test_message_length_is_longest_part():
    cat = catalog([400.0, 900.0])
    pl = random_placement([0.3, 0.6], cat, 3, 4)
    d = DemandScenario((0, 1, 2), (0, 1, 1))
    for m in deliver(d, partition_subfiles(pl, d.active_set)):
        assert m.length == max(m.part_lengths)
        assert len(m.parts) == len(m.target)


def test_same_demand_total_matches_closed_form():
    cat = catalog([1e5, 1e5])
    q = [0.5, 0.5]
    d = DemandScenario((0, 1), (0, 0))
    msgs = deliver(d, partition_subfiles(random_placement(q, cat, 2, 6), d.active_set))
    want = rate_mccs_demand(d, q, cat)
    assert abs(total_bits(msgs) - want) <= 0.02 * want


def test_distinct_demands_decode_over_seeds():
    cat = catalog([200.0, 200.0])
    d = DemandScenario((0, 1), (0, 1))
    for seed in range(50):
        pl = random_placement([0.5, 0.5], cat, 2, seed)
        assert decode_check(d, pl, deliver(d, partition_subfiles(pl, d.active_set))).all_decoded


def _suite_cases():
    for K, N in itertools.product((1, 2, 3), (1, 2, 3)):
        for q in (0.0, 0.3, 0.7, 1.0):
            yield K, N, q


@pytest.mark.parametrize("K,N,qv", list(_suite_cases()))
def test_decodability_suite(K, N, qv):
    rng = np.random.default_rng([K, N, int(qv * 10)])
    cat = catalog([float(rng.integers(20, 60)) for _ in range(N)])
    for seed in range(50):
        q = np.clip(qv + rng.uniform(-0.1, 0.1, N), 0, 1).tolist() if 0 < qv < 1 else [qv] * N
        pl = random_placement(q, cat, K, seed)
        active = tuple(range(K))
        d = DemandScenario(active, tuple(int(n) for n in rng.integers(0, N, K)))
        msgs = deliver(d, partition_subfiles(pl, active))
        result = decode_check(d, pl, msgs)
        assert result.all_decoded, result.witness


def test_rank_oracle_agrees_with_peeling():
    rng = np.random.default_rng(8)
    for seed in range(40):
        cat = catalog([float(rng.integers(8, 20)) for _ in range(3)])
        d = DemandScenario((0, 1, 2), tuple(int(n) for n in rng.integers(0, 3, 3)))
        pl = random_placement(rng.uniform(0, 1, 3).tolist(), cat, 3, seed)
        msgs = deliver(d, partition_subfiles(pl, d.active_set))
        assert decode_check(d, pl, msgs, rank_oracle=True).all_decoded
        assert decode_check(d, pl, msgs).all_decoded


def test_dropping_a_message_breaks_decoding():
    cat = catalog([200.0, 200.0, 200.0])
    d = DemandScenario((0, 1, 2), (0, 1, 1))
    pl = random_placement([0.4, 0.4, 0.4], cat, 3, 11)
    msgs = deliver(d, partition_subfiles(pl, d.active_set))
    for i, m in enumerate(msgs):
        if m.length == 0:
            continue
        kept = msgs[:i] + msgs[i + 1:]
        for oracle in (False, True):
            result = decode_check(d, pl, kept, rank_oracle=oracle)
            assert not result.all_decoded
            user, n, bit = result.witness
            assert d.demand_of(user) == n and not pl.cached[n][user, bit]


def test_empirical_rate_trivial():
    cat = catalog([100.0, 100.0])
    assert empirical_rate([1.0, 1.0], cat, UserPopulation.uniform(2, 0.8), 50) == (0.0, 0.0)
    assert empirical_rate([0.2, 0.2], cat, UserPopulation.uniform(2, 0.0), 50) == (0.0, 0.0)
    with pytest.raises(OutOfRange):
        empirical_rate([0.2, 0.2], cat, UserPopulation.uniform(2, 0.5), 0)


def test_empirical_rate_matches_expectation():
    cat = catalog([1e4, 1e4])
    users = UserPopulation.uniform(2, 0.5)
    q = [0.4, 0.4]
    mean, se = empirical_rate(q, cat, users, 2000, seed=1)
    want = average_rate(Scheme.DMCCS, q, cat, users).average_rate
    assert abs(mean - want) <= 3 * se


def test_trials_are_reproducible_individually():
    cat = catalog([300.0, 200.0])
    users = UserPopulation((0.7, 0.5, 0.9))
    short, long = io.StringIO(), io.StringIO()
    empirical_rate([0.3, 0.5], cat, users, 5, seed=4, trace=short, check_decoding=True)
    empirical_rate([0.3, 0.5], cat, users, 10, seed=4, trace=long, check_decoding=True)
    a, b = short.getvalue().splitlines(), long.getvalue().splitlines()
    assert len(b) == 10 and a == b[:5]
    assert all("decoded=True" in line for line in b if "active=[]" not in line)


def test_custom_demand_sampler():
    cat = catalog([100.0])
    users = UserPopulation((1.0, 1.0))
    mean, se = empirical_rate([0.0], cat, users, 20, demand_sampler=lambda rng: DemandScenario((0, 1), (0, 0)))
    assert mean == 100.0 and se == 0.0
