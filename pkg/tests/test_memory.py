import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfmem.memory import (
    Cluster,
    EmptyCluster,
    MemoryState,
    NominationBatch,
    NonMonotonicTick,
    PositionOutOfRange,
    SelectedKeyframes,
    cluster_median,
    enforce_cap,
    ingest,
    rel_to_abs,
    selected_keyframes,
    single_linkage,
)

from oracles import closure_clusters, random_stream, sorted_position_median


def members(clusters):
    return [c.members for c in clusters]


def fold(stream, d=5, n=8, cap=8):
    state = MemoryState(d=d, N=n, cap=cap)
    for tick, wl, pos in stream:
        state = ingest(state, NominationBatch.from_positions(tick, pos, wl))
    return state


class TestRelToAbs:
    def test_last_position_is_current_frame(self):
        assert rel_to_abs(10, 8, [8]) == [10]

    def test_first_position(self):
        window = list(range(3, 11))
        assert rel_to_abs(10, 8, [1]) == [window[0]] == [3]

    def test_position_seven(self):
        assert rel_to_abs(10, 8, [7]) == [9]

    def test_output_sorted(self):
        assert rel_to_abs(10, 8, [8, 1, 4]) == [3, 6, 10]

    def test_short_startup_window(self):
        assert rel_to_abs(2, 3, [1, 3]) == [0, 2]

    @pytest.mark.parametrize("p", [0, 9, -1])
    def test_out_of_range(self, p):
        with pytest.raises(PositionOutOfRange):
            rel_to_abs(10, 8, [p])


class TestSingleLinkage:
    def test_worked_example_two_clusters(self, backend):
        assert members(single_linkage([1, 3, 3, 4, 10], 5)) == [(1, 3, 3, 4), (10,)]

    def test_empty(self, backend):
        assert single_linkage([], 5) == []

    def test_unsorted_input(self, backend):
        assert members(single_linkage([10, 3, 1, 4, 3], 5)) == [(1, 3, 3, 4), (10,)]

    def test_gap_exactly_d_links(self, backend):
        assert members(single_linkage([0, 5], 5)) == [(0, 5)]
        assert members(single_linkage([0, 6], 5)) == [(0,), (6,)]

    def test_d_zero_groups_duplicates(self, backend):
        assert members(single_linkage([2, 2, 3], 0)) == [(2, 2), (3,)]

    def test_matches_closure_oracle(self, backend):
        rng = random.Random(7)
        for _ in range(300):
            d = rng.randint(1, 10)
            vals = [rng.randint(0, 120) for _ in range(rng.randint(0, 50))]
            assert members(single_linkage(vals, d)) == closure_clusters(vals, d)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 300), max_size=60), st.integers(0, 12))
    def test_idempotent(self, vals, d):
        once = single_linkage(vals, d)
        flat = [m for c in once for m in c.members]
        assert single_linkage(flat, d) == once

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 300), max_size=60), st.integers(0, 12), st.randoms())
    def test_permutation_invariant(self, vals, d, r):
        shuffled = list(vals)
        r.shuffle(shuffled)
        assert single_linkage(shuffled, d) == single_linkage(vals, d)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 300), min_size=1, max_size=60), st.integers(0, 12))
    def test_separation_and_multiplicity(self, vals, d):
        cl = single_linkage(vals, d)
        assert sorted(m for c in cl for m in c.members) == sorted(vals)
        for a, b in zip(cl, cl[1:]):
            assert b.members[0] - a.members[-1] > d
        for c in cl:
            assert all(y - x <= d for x, y in zip(c.members, c.members[1:]))


class TestMedian:
    def test_four_member_cluster_median(self):
        assert cluster_median(Cluster((1, 3, 3, 4))) == 3

    def test_singleton(self):
        assert cluster_median(Cluster((10,))) == 10

    def test_even_lower(self):
        assert cluster_median(Cluster((2, 4))) == sorted_position_median([2, 4]) == 2

    def test_empty(self):
        with pytest.raises(EmptyCluster):
            cluster_median(())
        with pytest.raises(EmptyCluster):
            Cluster(())

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 50), min_size=1, max_size=30))
    def test_against_sorted_position(self, vals):
        assert cluster_median(sorted(vals)) == sorted_position_median(vals)

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 50), min_size=1, max_size=30), st.integers(0, 50))
    def test_majority_duplicate_wins(self, others, hot):
        k_other = len(others)
        # hot index holds at least ceil(k/2) of the k nominations
        n_hot = k_other + 1
        assert cluster_median(sorted(others + [hot] * n_hot)) == hot


class TestIngest:
    def test_empty_batch_only_advances_tick(self):
        s = fold([(9, 8, [1, 3])])
        s2 = ingest(s, NominationBatch.from_positions(10, [], 8))
        assert s2.log == s.log and members(s2.clusters) == members(s.clusters)
        assert s2.tick == 10

    def test_hand_trace_freeze(self):
        # abs indices: t=9,L=8 -> window [2..9]; positions chosen to hit {1,3}? use indices directly
        s = MemoryState(d=5, N=8)
        s = ingest(s, NominationBatch.from_indices(9, [3, 4], 8))
        s = ingest(s, NominationBatch.from_indices(10, [3, 4], 8))
        assert members(s.active_clusters) == [(3, 3, 4, 4)]
        # threshold t-N+1-d = 20-8+1-5 = 8 > 4 -> frozen
        s = ingest(s, NominationBatch.from_indices(20, [17], 8))
        assert members(s.frozen_clusters) == [(3, 3, 4, 4)]
        assert all(c.frozen for c in s.frozen_clusters)
        assert members(s.active_clusters) == [(17,)]

    def test_worked_log_freezes_first_cluster(self):
        s = MemoryState(d=5, N=8)
        s = ingest(s, NominationBatch.from_indices(7, [1, 3], 8))
        s = ingest(s, NominationBatch.from_indices(8, [3, 4], 8))
        s = ingest(s, NominationBatch.from_indices(12, [10], 8))
        assert s.frozen_clusters == ()
        s = ingest(s, NominationBatch.from_indices(16, [], 8))  # threshold 4, not yet
        assert s.frozen_clusters == ()
        s = ingest(s, NominationBatch.from_indices(20, [], 8))  # threshold 8
        assert members(s.frozen_clusters) == [(1, 3, 3, 4)]
        assert members(s.active_clusters) == [(10,)]

    def test_freeze_boundary(self):
        s = ingest(MemoryState(d=5, N=8), NominationBatch.from_indices(4, [4], 8))
        # threshold at tick 16 is 4: max 4 is not < 4, stays active
        s = ingest(s, NominationBatch.from_indices(16, [], 8))
        assert s.frozen_clusters == () and members(s.active_clusters) == [(4,)]
        s = ingest(s, NominationBatch.from_indices(17, [], 8))
        assert members(s.frozen_clusters) == [(4,)]

    def test_non_monotonic(self):
        s = fold([(10, 8, [1])])
        with pytest.raises(NonMonotonicTick):
            ingest(s, NominationBatch.from_positions(9, [1], 8))

    def test_equal_tick_allowed(self):
        s = fold([(10, 8, [1]), (10, 8, [2])])
        assert s.log == (3, 4)

    def test_out_of_window_indices_rejected(self):
        with pytest.raises(PositionOutOfRange):
            ingest(MemoryState(), NominationBatch(10, (), (1,)))

    def test_incremental_equals_batch(self, backend):
        rng = random.Random(11)
        for _ in range(200):
            d = rng.randint(1, 10)
            stream = random_stream(rng, rng.randint(0, 120), 3, 8)
            s = fold(stream, d=d)
            pooled = [i for t, wl, p in stream for i in rel_to_abs(t, wl, p)]
            assert members(s.clusters) == members(single_linkage(pooled, d))

    def test_freeze_safety(self):
        rng = random.Random(3)
        for _ in range(50):
            stream = random_stream(rng, 150, 3, 8)
            s = MemoryState()
            seen = {}
            for tick, wl, pos in stream:
                s = ingest(s, NominationBatch.from_positions(tick, pos, wl))
                for i, c in enumerate(s.frozen_clusters):
                    if i in seen:
                        assert seen[i] == (c.members, s.frozen_medians[i])
                    seen[i] = (c.members, s.frozen_medians[i])

    def test_value_semantics(self):
        s = fold([(9, 8, [1, 3])])
        before = s.log
        ingest(s, NominationBatch.from_positions(10, [8], 8))
        assert s.log == before


class TestSelected:
    def paper_state(self):
        s = MemoryState(d=5, N=8)
        s = ingest(s, NominationBatch.from_indices(4, [1, 3, 3, 4], 8))
        return ingest(s, NominationBatch.from_indices(10, [10], 8))

    def test_both_exited(self):
        assert selected_keyframes(self.paper_state(), 20).indices == (3, 10)

    def test_pending_inside_window(self):
        assert selected_keyframes(self.paper_state(), 12).indices == (3,)

    def test_empty(self):
        assert selected_keyframes(MemoryState(), 30).indices == ()

    def test_never_inside_window(self):
        rng = random.Random(5)
        for _ in range(100):
            s = MemoryState()
            for tick, wl, pos in random_stream(rng, 80, 3, 8):
                s = ingest(s, NominationBatch.from_positions(tick, pos, wl))
                k = selected_keyframes(s, tick)
                assert all(i < tick - 8 + 1 for i in k.indices)
                assert list(k.indices) == sorted(k.indices) and len(k) <= 8

    def test_cap_applied(self):
        s = MemoryState(d=1, N=8, cap=3)
        for t in range(0, 60, 6):
            s = ingest(s, NominationBatch.from_indices(t, [t], 8))
        k = selected_keyframes(s, 100)
        assert k.indices == (42, 48, 54) and k.evicted == (0, 6, 12, 18, 24, 30, 36)


class TestCap:
    def test_identity_at_cap(self):
        k = list(range(8))
        assert enforce_cap(k, 8) == SelectedKeyframes(tuple(k))

    def test_drop_oldest(self):
        out = enforce_cap([1, 5, 9, 13, 17, 21, 25, 29, 33], 8)
        assert out.indices == (5, 9, 13, 17, 21, 25, 29, 33)
        assert out.evicted == (1,)

    def test_empty(self):
        assert enforce_cap([], 8).indices == ()

    def test_bad_cap(self):
        with pytest.raises(ValueError):
            enforce_cap([1], 0)
