"""Eviction policies: hand-traced contracts plus naive-oracle equivalence."""

from __future__ import annotations

import math

import pytest

from corrcache.engine import CacheConfig, ConfigurationError, simulate
from corrcache.policies import (
    LFRUPolicy,
    LFRUSPolicy,
    POLICY_KINDS,
    PolicyConfigError,
    PolicyParams,
    build_policy,
    parse_policy_spec,
    static_optimal_select,
)

from conftest import (
    NAIVE,
    make_trace,
    random_unit_trace,
    unpacked_eviction_objects,
    victim_sequence,
)


def evictions(events, kind, capacity, sizes=None):
    """Object-id eviction sequence for a small hand-built trace."""
    m = victim_sequence(make_trace(events, sizes=sizes), kind, capacity)
    return unpacked_eviction_objects(m)


def run_policy(events, policy, capacity=10.0):
    """Simulate with a concrete policy instance and hand it back."""
    m = simulate(
        make_trace(events), policy, CacheConfig(capacity), record_evictions=True
    )
    return m, policy


# ---------------------------------------------------------------------------
# parameter parsing
# ---------------------------------------------------------------------------


def test_parse_policy_spec_defaults_and_options():
    assert parse_policy_spec("lru") == PolicyParams("lru")
    assert parse_policy_spec("lfru:w=7").window == 7
    p = parse_policy_spec("lfrus:w=2:gamma=0.5")
    assert (p.kind, p.window, p.gamma) == ("lfrus", 2, 0.5)
    assert parse_policy_spec("lfrus:g=1").gamma == 1.0
    assert parse_policy_spec(" LFU ").kind == "lfu"


def test_policy_labels():
    assert PolicyParams("lru").label() == "lru"
    assert PolicyParams("lfru", window=20).label() == "lfru(w=20)"
    assert PolicyParams("lfrus", window=2, gamma=0.5).label() == "lfrus(w=2,g=0.5)"


@pytest.mark.parametrize(
    "bad",
    ["", "fifo", "lfru:20", "lfru:size=3", "lfru:w=-1", "lfrus:gamma=0", "lfrus:gamma=1.5"],
)
def test_parse_policy_spec_errors(bad):
    with pytest.raises(PolicyConfigError):
        parse_policy_spec(bad)


def test_build_policy_static_opt_needs_rates():
    with pytest.raises(PolicyConfigError, match="rates"):
        build_policy(PolicyParams("static_opt"), [], {}, 5.0)
    with pytest.raises(PolicyConfigError, match="unknown policy"):
        build_policy(PolicyParams("mystery"), [], {}, 5.0)


# ---------------------------------------------------------------------------
# LRU / LFU
# ---------------------------------------------------------------------------


def test_lru_evicts_least_recent():
    assert evictions([(1, 1, 1), (2, 1, 2), (3, 1, 3)], "lru", 2) == [1]


def test_lru_hit_refreshes_recency():
    assert evictions([(1, 1, 1), (2, 1, 2), (3, 1, 1), (4, 1, 3)], "lru", 2) == [2]


def test_lfu_evicts_smallest_count():
    ev = evictions([(1, 1, 1), (2, 1, 1), (3, 1, 1), (4, 1, 2), (5, 1, 3)], "lfu", 2)
    assert ev == [2]


def test_lfu_tie_breaks_to_lru():
    assert evictions([(1, 1, 1), (2, 1, 2), (3, 1, 3)], "lfu", 2) == [1]


def test_lfu_counts_survive_eviction():
    events = [(t, 1, o) for t, o in enumerate([1, 1, 2, 3, 2, 3], start=1)]
    # d2 evicted with count 1, readmitted with lifetime count 2 -> then d3
    # (count 1) goes, and the final tie at count 2 falls back to LRU (d1)
    assert evictions(events, "lfu", 2) == [2, 3, 1]


# ---------------------------------------------------------------------------
# Sieve
# ---------------------------------------------------------------------------


def test_sieve_no_hits_evicts_oldest():
    assert evictions([(1, 1, 1), (2, 1, 2), (3, 1, 3)], "sieve", 2) == [1]


def test_sieve_visited_bit_spares_and_clears():
    # hit on d1 sets its bit; the scan clears it and removes d2; the next
    # eviction takes d1 because its bit was consumed
    ev = evictions([(1, 1, 1), (2, 1, 2), (3, 1, 1), (4, 1, 3), (5, 1, 4)], "sieve", 2)
    assert ev == [2, 1]


def test_sieve_all_visited_full_pass_then_oldest():
    ev = evictions([(1, 1, 1), (2, 1, 2), (3, 1, 1), (4, 1, 2), (5, 1, 3)], "sieve", 2)
    assert ev == [1]


def test_sieve_scan_direction_wraps_to_newest():
    # queue oldest->newest is [d1,d2,d3] with only d1 visited: the hand
    # clears d1, wraps to the newest end, and evicts d3 (a newer-moving
    # scan would have taken d2 instead)
    ev = evictions([(1, 1, 1), (2, 1, 2), (3, 1, 3), (4, 1, 1), (5, 1, 4)], "sieve", 3)
    assert ev == [3]


# ---------------------------------------------------------------------------
# Belady
# ---------------------------------------------------------------------------


def test_belady_evicts_never_used_again():
    assert evictions([(1, 1, 1), (2, 1, 2), (3, 1, 3), (4, 1, 1)], "belady", 2) == [2]


def test_belady_classic_trace():
    events = [(t, 1, o) for t, o in enumerate([1, 2, 3, 1, 2, 4], start=1)]
    m = victim_sequence(make_trace(events), "belady", 2)
    # at d3's admission, d2 is requested later than d1 and is evicted;
    # the two infinite-next-use ties afterwards fall to LRU
    assert unpacked_eviction_objects(m) == [2, 3, 1]
    assert m.hits == 1


def test_belady_rejects_non_unit_sizes():
    tr = make_trace([(1, 1, 1), (2, 1, 2)], sizes={1: 2.0, 2: 5.0})
    with pytest.raises(ConfigurationError, match="unit-size"):
        simulate(tr, PolicyParams("belady"), CacheConfig(4.0))


# ---------------------------------------------------------------------------
# naive-oracle equivalence (victim-for-victim)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["lru", "lfu", "belady", "sieve"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_victims_match_naive_reference(kind, seed):
    tr = random_unit_trace(seed, 1500, 40, 6)
    m = victim_sequence(tr, kind, 12.0)
    hits, victims = NAIVE[kind](tr.objects.tolist(), 12)
    assert unpacked_eviction_objects(m) == victims
    assert m.hits == sum(hits)


# ---------------------------------------------------------------------------
# static-optimal selection
# ---------------------------------------------------------------------------


def test_static_optimal_unit_sizes_top_k():
    sel = static_optimal_select({1: 5.0, 2: 3.0, 3: 1.0}, {1: 1.0, 2: 1.0, 3: 1.0}, 2.0)
    assert sel.keys == frozenset({1, 2}) and sel.value == 8.0 and sel.exact


def test_static_optimal_budget_covers_everything():
    sizes = {1: 3.0, 2: 2.0, 3: 2.0}
    sel = static_optimal_select({1: 4.0, 2: 3.0, 3: 3.0}, sizes, 7.0)
    assert sel.keys == frozenset({1, 2, 3}) and sel.exact


def test_static_optimal_prefers_two_small_over_one_big():
    sel = static_optimal_select({1: 4.0, 2: 3.0, 3: 3.0}, {1: 3.0, 2: 2.0, 3: 2.0}, 4.0)
    assert sel.keys == frozenset({2, 3}) and sel.value == 6.0 and sel.exact


def test_static_optimal_validation():
    with pytest.raises(PolicyConfigError):
        static_optimal_select({1: 1.0}, {1: 1.0}, 0.0)
    with pytest.raises(PolicyConfigError, match="size"):
        static_optimal_select({1: 1.0, 2: 1.0}, {1: 1.0}, 1.0)


def test_static_optimal_drops_zero_weight_objects():
    sel = static_optimal_select({1: 0.0, 2: 1.0}, {1: 1.0, 2: 1.0}, 5.0)
    assert sel.keys == frozenset({2})


def test_static_optimal_large_catalogs_flagged_heuristic():
    n = 40
    weights = {k: float(k) for k in range(1, n + 1)}
    sizes = {k: 1.0 + (k % 3) for k in range(1, n + 1)}
    sel = static_optimal_select(weights, sizes, 11.0)
    assert not sel.exact
    assert sum(sizes[k] for k in sel.keys) <= 11.0


def test_static_optimal_matches_bruteforce_on_random_instances():
    import itertools

    import numpy as np

    rng = np.random.default_rng(7)
    for _ in range(30):
        n = int(rng.integers(2, 13))
        keys = list(range(1, n + 1))
        weights = {k: float(rng.integers(1, 64)) for k in keys}
        sizes = {k: float(rng.integers(1, 8)) for k in keys}
        budget = float(rng.integers(1, 20))
        sel = static_optimal_select(weights, sizes, budget)
        best = 0.0
        for r in range(n + 1):
            for combo in itertools.combinations(keys, r):
                if sum(sizes[k] for k in combo) <= budget:
                    best = max(best, sum(weights[k] for k in combo))
        assert sel.exact
        assert sel.value == best
        assert sum(sizes[k] for k in sel.keys) <= budget
        assert sum(weights[k] for k in sel.keys) == best


# ---------------------------------------------------------------------------
# follow bookkeeping (shared by the follow-aware policies)
# ---------------------------------------------------------------------------


def test_follow_recorded_on_cross_client_hit():
    _, pol = run_policy([(1, 1, 1), (2, 2, 1)], LFRUPolicy(window=5))
    assert pol.follow_counts() == {(1, 2): 1}
    assert pol.follow_matrix_csv() == "c1,c2,count\n1,2,1\n"


def test_self_follow_is_not_recorded():
    _, pol = run_policy([(1, 2, 1), (2, 2, 1)], LFRUPolicy(window=5))
    assert pol.follow_counts() == {}
    assert pol.window_snapshot()[2] == (None, None)


def test_follow_event_slides_out_of_window():
    events = [(1, 1, 1), (2, 2, 1), (3, 2, 7), (4, 2, 8)]
    _, pol = run_policy(events, LFRUPolicy(window=1))
    assert pol.follow_counts() == {}


def test_misses_do_not_count_as_follows():
    _, pol = run_policy([(1, 1, 1), (2, 2, 2)], LFRUPolicy(window=5))
    assert pol.follow_counts() == {}


def test_follow_score_is_row_maximum():
    # B follows A twice, C follows A once: A's score is max(2, 1) = 2
    events = [
        (1, 1, 1), (2, 2, 1), (3, 1, 2), (4, 2, 2),
        (5, 1, 3), (6, 3, 3),
    ]
    _, pol = run_policy(events, LFRUPolicy(window=10))
    assert pol.follow_counts() == {(1, 2): 2, (1, 3): 1}
    assert pol._row_scores() == {1: 2}


def test_follow_counts_bounded_and_off_diagonal():
    tr = random_unit_trace(5, 2000, 25, 4)
    pol = LFRUPolicy(window=5)
    simulate(tr, pol, CacheConfig(10.0))
    counts = pol.follow_counts()
    assert counts, "expected some follow events in a skewed random trace"
    for (c1, c2), n in counts.items():
        assert c1 != c2
        assert 1 <= n <= 6  # window + 1


def test_follow_counts_match_window_recomputation():
    tr = random_unit_trace(9, 3000, 30, 5)
    pol = LFRUPolicy(window=8)
    simulate(tr, pol, CacheConfig(12.0))
    recomputed: dict = {}
    for c2, window in pol.window_snapshot().items():
        for outcome in window:
            if outcome is not None:
                recomputed[(outcome, c2)] = recomputed.get((outcome, c2), 0) + 1
    assert pol.follow_counts() == recomputed


def test_lfrus_counts_match_window_recomputation():
    tr = random_unit_trace(13, 3000, 30, 5)
    pol = LFRUSPolicy(window=8, gamma=0.7)
    simulate(tr, pol, CacheConfig(12.0))
    recomputed: dict = {}
    for c2, window in pol.window_snapshot().items():
        for lag, outcome in enumerate(reversed(window)):
            if outcome is not None:
                key = (outcome, c2)
                recomputed[key] = recomputed.get(key, 0.0) + 0.7**lag
    floored = {k: math.floor(v) for k, v in recomputed.items() if math.floor(v)}
    assert pol.follow_counts() == floored


# ---------------------------------------------------------------------------
# LFRU / LFRUS eviction behaviour
# ---------------------------------------------------------------------------


def test_lfru_spares_object_of_followed_client():
    events = [(1, 1, 1), (2, 1, 2), (3, 2, 1), (4, 3, 3)]
    # LRU would drop d2 (least recent); LFRU drops d1 because its last
    # requester B has follow score 0 while d2's requester A scores 1
    assert evictions(events, "lru", 2) == [2]
    m = simulate(
        make_trace(events), LFRUPolicy(window=20), CacheConfig(2.0), record_evictions=True
    )
    assert unpacked_eviction_objects(m) == [1]


def test_lfru_without_hits_equals_lru():
    tr = make_trace([(t, 1, t) for t in range(1, 30)])  # every request misses
    a = victim_sequence(tr, "lru", 4.0)
    b = simulate(tr, LFRUPolicy(window=20), CacheConfig(4.0), record_evictions=True)
    assert a.eviction_log == b.eviction_log
    assert b.hits == 0


def test_lfru_window_zero_equals_lru():
    tr = random_unit_trace(3, 2500, 30, 5)
    a = victim_sequence(tr, "lru", 10.0)
    b = simulate(tr, LFRUPolicy(window=0), CacheConfig(10.0), record_evictions=True)
    c = simulate(tr, LFRUSPolicy(window=0, gamma=0.5), CacheConfig(10.0), record_evictions=True)
    assert a.eviction_log == b.eviction_log == c.eviction_log
    assert a.hits == b.hits == c.hits


def test_lfrus_gamma_one_equals_lfru():
    tr = random_unit_trace(8, 2500, 30, 5)
    a = simulate(tr, LFRUPolicy(window=6), CacheConfig(10.0), record_evictions=True)
    pol_b = LFRUSPolicy(window=6, gamma=1.0)
    b = simulate(tr, pol_b, CacheConfig(10.0), record_evictions=True)
    assert a.eviction_log == b.eviction_log
    assert a.hits == b.hits
    pol_a = LFRUPolicy(window=6)
    simulate(tr, pol_a, CacheConfig(10.0))
    assert pol_a.follow_counts() == pol_b.follow_counts()


def test_lfrus_geometric_weighting_floors():
    # follows of A at lags 0,1,2 with gamma=0.5: floor(1 + 0.5 + 0.25) = 1
    events = [(1, 1, 1), (2, 1, 2), (3, 1, 3), (4, 2, 1), (5, 2, 2), (6, 2, 3)]
    _, pol = run_policy(events, LFRUSPolicy(window=5, gamma=0.5))
    assert pol.follow_counts() == {(1, 2): 1}


def test_lfrus_single_follow_at_lag_three_floors_to_zero():
    # gamma=0.5 at lag 3 contributes 0.125, flooring to nothing
    events = [(1, 1, 1), (2, 2, 1), (3, 2, 7), (4, 2, 8), (5, 2, 9)]
    _, pol = run_policy(events, LFRUSPolicy(window=5, gamma=0.5))
    assert pol.follow_counts() == {}
    assert pol.window_snapshot()[2] == (1, None, None, None)


def test_policy_kind_registry_is_complete():
    assert set(POLICY_KINDS) == {"lru", "lfu", "sieve", "belady", "static_opt", "lfru", "lfrus"}
