import math

import numpy as np
import pytest

from spinboson.combinatorics import (
    base_matching,
    contracted_multigraph,
    count_compatible_pairs,
    degree_census,
    enumerate_forest_selections,
    enumerate_matchings,
    forest_volume,
    interpolated_coupling,
    matching_count,
    open_cycles,
    partition_join,
    random_matching,
    spanning_trees,
    verify_bkar_identity,
)
from spinboson.errors import ResourceError, StructureError
from spinboson.rng import stream

CROSS_A = ((0, 2), (1, 3))  # both cross matchings of 4 points
CROSS_B = ((0, 3), (1, 2))


def test_matching_counts():
    for p, want in [(1, 1), (2, 3), (3, 15), (4, 105)]:
        assert matching_count(p) == want
        got = list(enumerate_matchings(p))
        assert len(got) == want
        assert len(set(got)) == want


def test_matching_count_formula():
    for p in range(1, 6):
        assert matching_count(p) == math.factorial(2 * p) // (2**p * math.factorial(p))


def test_enumerate_matchings_resource_guard():
    with pytest.raises(ResourceError):
        list(enumerate_matchings(5))
    with pytest.raises(ResourceError):
        list(enumerate_matchings(7, p_max=7))
    with pytest.warns(ResourceWarning):
        assert len(list(enumerate_matchings(5, p_max=5))) == 945


def test_partition_join_base_matching_gives_singletons():
    blocks = partition_join(base_matching(3))
    assert blocks.pair_blocks == ((0,), (1,), (2,))


def test_partition_join_crossing_merges():
    # hand union-find on 4 points: 0-1 and 2-3 from the base, 0-2 and 1-3 from P
    blocks = partition_join(CROSS_A)
    assert blocks.pair_blocks == ((0, 1),)
    assert blocks.point_blocks == (frozenset({0, 1, 2, 3}),)


def test_cycle_supports_are_even():
    for p in (2, 3, 4):
        for m in enumerate_matchings(p):
            blocks = partition_join(m)
            assert all(len(b) % 2 == 0 for b in blocks.point_blocks)


def test_contracted_multigraph_cases():
    assert contracted_multigraph(base_matching(2)) == {}
    assert contracted_multigraph(CROSS_A) == {(0, 1): 2}
    assert contracted_multigraph(CROSS_B) == {(0, 1): 2}
    total = sum(contracted_multigraph(((0, 2), (1, 4), (3, 5))).values())
    assert total == 3  # no edge internal to a base pair


def test_forest_selections_p1():
    sels = list(enumerate_forest_selections(base_matching(1), connecting_only=True))
    assert len(sels) == 1 and sels[0].micro_edges == ()


def test_forest_selections_p2():
    # base matching: two singleton blocks, the single cross edge must be chosen
    conn = list(enumerate_forest_selections(base_matching(2), connecting_only=True))
    assert len(conn) == 1 and conn[0].micro_edges == ((0, 1),)
    both = list(enumerate_forest_selections(base_matching(2)))
    assert sorted(s.micro_edges for s in both) == [(), ((0, 1),)]
    # crossing matching: one block, intra-block edges forbidden, empty is connecting
    conn = list(enumerate_forest_selections(CROSS_A, connecting_only=True))
    assert len(conn) == 1 and conn[0].micro_edges == ()


def test_forest_selection_streams_are_consistent():
    for p in (2, 3):
        for m in enumerate_matchings(p):
            every = list(enumerate_forest_selections(m))
            conn = list(enumerate_forest_selections(m, connecting_only=True))
            k = len(partition_join(m).pair_blocks)
            filtered = [s for s in every if len(s.micro_edges) == k - 1 and _hat_connected(s, k)]
            assert sorted(s.micro_edges for s in conn) == sorted(s.micro_edges for s in filtered)


def _hat_connected(sel, k):
    seen = {0}
    frontier = [0]
    adj = {}
    for x, y in sel.hat_edges:
        adj.setdefault(x, []).append(y)
        adj.setdefault(y, []).append(x)
    while frontier:
        cur = frontier.pop()
        for nbr in adj.get(cur, []):
            if nbr not in seen:
                seen.add(nbr)
                frontier.append(nbr)
    return len(seen) == k


def test_interpolated_coupling_rules():
    # p = 4 base matching with a two-edge path on blocks 0-1-2; block 3 isolated
    m = base_matching(4)
    sels = [
        s for s in enumerate_forest_selections(m)
        if sorted(s.micro_edges) == [(0, 1), (1, 2)]
    ]
    assert len(sels) == 1
    sel = sels[0]
    v = [0.3, 0.7]
    assert interpolated_coupling(sel, v, (0, 2)) == pytest.approx(0.3)
    assert interpolated_coupling(sel, v, (0, 3)) == 0.0
    with pytest.raises(ValueError):
        interpolated_coupling(sel, v, (0, 1))
    # same-block pair: crossing matching on 4 points plus a spectator pair
    m2 = ((0, 2), (1, 3), (4, 5))
    sel2 = next(iter(enumerate_forest_selections(m2, connecting_only=True)))
    v2 = [0.5] * len(sel2.micro_edges)
    assert interpolated_coupling(sel2, v2, (0, 1)) == 1.0


def test_coupling_vanishes_across_components():
    # random instances: coupling nonzero only when the contracted graph plus the
    # selection connects the two base pairs (checked by independent reachability)
    rng = stream(77, 0)
    checked = 0
    for _ in range(40):
        p = int(rng.integers(2, 5))
        m = random_matching(p, rng)
        sels = list(enumerate_forest_selections(m))
        sel = sels[int(rng.integers(0, len(sels)))]
        v = rng.random(len(sel.micro_edges))
        adj = {i: set() for i in range(p)}
        for a, b in m:
            if a // 2 != b // 2:
                adj[a // 2].add(b // 2)
                adj[b // 2].add(a // 2)
        for i, j in sel.micro_edges:
            adj[i].add(j)
            adj[j].add(i)
        for i in range(p):
            for j in range(i + 1, p):
                if (i, j) in sel.micro_edges:
                    continue
                reach = _reachable(adj, i)
                r = interpolated_coupling(sel, v, (i, j))
                if j not in reach:
                    assert r == 0.0
                    checked += 1
    assert checked > 0


def _reachable(adj, start):
    seen = {start}
    frontier = [start]
    while frontier:
        cur = frontier.pop()
        for nbr in adj[cur]:
            if nbr not in seen:
                seen.add(nbr)
                frontier.append(nbr)
    return seen


def test_open_cycles_p1():
    m = base_matching(1)
    sel = next(iter(enumerate_forest_selections(m, connecting_only=True)))
    opened = open_cycles(m, sel)
    assert opened.tree_edges == ()
    assert opened.offspring == (0,)
    assert opened.opened_matching == ()


def test_open_cycles_p2_base():
    m = base_matching(2)
    sel = next(iter(enumerate_forest_selections(m, connecting_only=True)))
    opened = open_cycles(m, sel)
    assert opened.tree_edges == ((0, 1, "overlap", None),)
    assert opened.offspring == (1, 0)
    assert opened.opened_matching == ()
    assert set(opened.deleted_edges) == set(m)


def test_open_cycles_counts_random():
    rng = stream(78, 0)
    for _ in range(30):
        p = int(rng.integers(2, 5))
        m = random_matching(p, rng)
        blocks = partition_join(m)
        sel = next(iter(enumerate_forest_selections(m, connecting_only=True)))
        opened = open_cycles(m, sel)
        assert len(opened.opened_matching) == p - len(blocks.point_blocks)
        assert sum(opened.offspring) == len(sel.micro_edges)
        assert len(sel.micro_edges) <= p - 1
        assert len(opened.tree_edges) == p - 1


def test_open_cycles_rejects_non_connecting():
    m = base_matching(2)
    empty = [s for s in enumerate_forest_selections(m) if not s.micro_edges][0]
    with pytest.raises(StructureError):
        open_cycles(m, empty)


def test_spanning_tree_counts_match_cayley():
    for p in (2, 3, 4, 5, 6):
        assert len(list(spanning_trees(p))) == p ** (p - 2)


def test_degree_census_matches_cayley_formula():
    for p in (3, 4, 5, 6):
        census = degree_census(p)
        for degs, count in census.items():
            want = math.factorial(p - 2)
            for d in degs:
                want //= math.factorial(d - 1)
            assert count == want
        # completeness: degree sequences sum to 2(p-1)
        assert all(sum(d) == 2 * (p - 1) for d in census)


def test_count_compatible_pairs_small():
    assert count_compatible_pairs((), 1) == 1
    n2 = count_compatible_pairs(((0, 1),), 2)
    assert n2 == 3  # (base, edge), (cross, empty) x 2 -- by hand
    assert n2 < 4**2
    for tree in spanning_trees(3):
        assert count_compatible_pairs(tree, 3) < 4**3


def test_bkar_identity_analytic_p2():
    m = base_matching(2)
    disjoint = [0.0, 1.0, 2.0, 3.0]
    overlapping = [0.0, 2.0, 1.0, 3.0]
    assert verify_bkar_identity(m, disjoint) < 1e-14
    assert verify_bkar_identity(m, overlapping) < 1e-14


def test_bkar_identity_random_p3():
    rng = stream(79, 0)
    matchings = list(enumerate_matchings(3))
    for trial in range(25):
        m = matchings[int(rng.integers(0, len(matchings)))]
        starts = rng.uniform(-1.5, 1.5, size=3)
        lengths = rng.exponential(0.8, size=3) + 1e-3
        t = np.empty(6)
        t[0::2] = starts
        t[1::2] = starts + lengths
        assert verify_bkar_identity(m, t) < 1e-8


def test_bkar_identity_rejects_bad_intervals():
    with pytest.raises(ValueError):
        verify_bkar_identity(base_matching(2), [1.0, 0.5, 2.0, 3.0])


def test_forest_volume_two_edge_path():
    m = base_matching(3)
    sel = [
        s for s in enumerate_forest_selections(m)
        if sorted(s.micro_edges) == [(0, 1), (1, 2)]
    ][0]
    # only the long pair (0, 2) overlaps: integral of 1 - min(v1, v2) is 2/3
    overlap = [[False, False, True], [False, False, False], [True, False, False]]
    assert forest_volume(sel, overlap) == pytest.approx(2 / 3, rel=1e-12)
    # quasi-random fallback agrees with the exact value
    approx = forest_volume(sel, overlap, exact_max=0, qmc_exponent=14)
    assert approx == pytest.approx(2 / 3, rel=5e-3)
