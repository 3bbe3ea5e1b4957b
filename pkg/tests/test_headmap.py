"""Head-to-level allocation tests."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pefield.headmap import HeadLevelMap, level_for_head, num_levels, subcell_for_head


def test_num_levels_worked_example():
    # 24 heads: three levels, quota 1 + 4 + 16 = 21
    assert num_levels(24) == (3, 21)


def test_num_levels_single_head():
    assert num_levels(1) == (1, 1)


def test_num_levels_twelve_heads():
    # 3*12+1 = 37: 4^2 = 16 <= 37 < 64 = 4^3
    assert num_levels(12) == (2, 5)


def test_num_levels_rejects_zero():
    with pytest.raises(ValueError):
        num_levels(0)


@pytest.mark.parametrize(
    "head,expected",
    [(1, 0), (2, 1), (5, 1), (6, 2), (21, 2), (22, 0), (23, 0), (24, 0)],
)
def test_level_for_head_flux_mapping(head, expected):
    assert level_for_head(head, 24) == expected


def test_level_for_head_surplus_small():
    # H=2: W=1, so head 2 is surplus
    assert level_for_head(2, 2) == 0


def test_level_for_head_range_check():
    with pytest.raises(ValueError):
        level_for_head(0, 24)
    with pytest.raises(ValueError):
        level_for_head(25, 24)


@pytest.mark.parametrize(
    "head,expected",
    [
        (1, (0, 0, 0)),
        (2, (1, 0, 0)),
        (5, (1, 1, 1)),
        (6, (2, 0, 0)),
        (9, (2, 3, 0)),
        (21, (2, 3, 3)),
        (22, (0, 0, 0)),
    ],
)
def test_subcell_for_head_row_major(head, expected):
    assert subcell_for_head(head, 24) == expected


@given(st.integers(min_value=1, max_value=256))
def test_allocation_totals(n_heads):
    m, w = num_levels(n_heads)
    assert w <= n_heads
    levels = [level_for_head(h, n_heads) for h in range(1, n_heads + 1)]
    for l in range(m):
        assert sum(1 for x in levels[:w] if x == l) == 4**l
    assert all(x == 0 for x in levels[w:])
    assert len(levels) - w == n_heads - w


@given(st.integers(min_value=1, max_value=256))
def test_subcells_enumerate_each_level_block(n_heads):
    m, w = num_levels(n_heads)
    by_level = {}
    for h in range(1, w + 1):
        l, u, v = subcell_for_head(h, n_heads)
        assert 0 <= u < 2**l and 0 <= v < 2**l
        by_level.setdefault(l, []).append((u, v))
    for l, cells in by_level.items():
        side = 2**l
        assert sorted(cells) == sorted((u, v) for v in range(side) for u in range(side))


@given(st.integers(min_value=1, max_value=4096))
def test_integer_formulas_match_float_log(n_heads):
    m, w = num_levels(n_heads)
    assert m == math.floor(math.log(3 * n_heads + 1, 4))
    assert w == (4**m - 1) // 3


@given(st.integers(min_value=1, max_value=4096))
def test_level_formula_matches_float_log(head):
    n_heads = 4096
    _, w = num_levels(n_heads)
    l = level_for_head(head, n_heads)
    if head <= w:
        assert l == math.ceil(math.log(3 * head + 1, 4)) - 1
    else:
        assert l == 0


def test_level_zero_implies_origin_subcell():
    for n_heads in (1, 5, 24, 64):
        hm = HeadLevelMap.build(n_heads)
        for l, (u, v) in zip(hm.levels, hm.subcells):
            if l == 0:
                assert (u, v) == (0, 0)


def test_head_level_map_roundtrip():
    hm = HeadLevelMap.build(24)
    assert HeadLevelMap.from_dict(hm.to_dict()) == hm


def test_flat_map_disables_hierarchy():
    hm = HeadLevelMap.flat(24)
    assert hm.levels == (0,) * 24
    assert hm.subcells == ((0, 0),) * 24
