"""Hierarchical allocation of attention heads to resolution levels.

Heads are assigned to levels with geometric quotas 1:4:16:..., one head per
sub-cell: level l tiles a patch into 2^l x 2^l cells and consumes exactly 4^l
heads. Heads beyond the cumulative quota fall back to level 0. All level
formulas use integer arithmetic so boundary head indices (where 3h+1 is an
exact power of 4) cannot be misassigned by floating-point log rounding.
"""

from dataclasses import dataclass


def num_levels(n_heads: int) -> tuple[int, int]:
    """Number of levels M and cumulative head quota W = 1 + 4 + ... + 4^(M-1).

    M is the largest integer with 4^M <= 3*n_heads + 1.
    """
    if n_heads < 1:
        raise ValueError(f"head count must be >= 1, got {n_heads}")
    target = 3 * n_heads + 1
    m = 0
    power = 1
    while power * 4 <= target:
        power *= 4
        m += 1
    w = (power - 1) // 3
    return m, w


def level_for_head(head: int, n_heads: int) -> int:
    """Level of 1-based head index `head`; surplus heads (head > W) get 0."""
    if not 1 <= head <= n_heads:
        raise ValueError(f"head index {head} out of range 1..{n_heads}")
    m, w = num_levels(n_heads)
    if head > w:
        return 0
    # smallest k with 4^k >= 3*head + 1, minus one
    target = 3 * head + 1
    k = 0
    power = 1
    while power < target:
        power *= 4
        k += 1
    return k - 1


def subcell_for_head(head: int, n_heads: int) -> tuple[int, int, int]:
    """(level, u, v) for a head; (u, v) is its sub-cell in row-major rank order.

    Ranks within a level-l block enumerate the 2^l x 2^l sub-cells with u
    (the x direction) varying fastest. Surplus heads get (0, 0, 0).
    """
    level = level_for_head(head, n_heads)
    _, w = num_levels(n_heads)
    if head > w:
        return 0, 0, 0
    block_start = (4**level - 1) // 3 + 1
    rank = head - block_start
    side = 2**level
    return level, rank % side, rank // side


@dataclass(frozen=True)
class HeadLevelMap:
    """Per-head level and sub-cell assignment for an attention stack.

    levels[h-1] is the level of head h; subcells[h-1] its (u, v) sub-cell.
    """

    n_heads: int
    n_levels: int
    quota: int
    levels: tuple[int, ...]
    subcells: tuple[tuple[int, int], ...]

    @classmethod
    def build(cls, n_heads: int) -> "HeadLevelMap":
        m, w = num_levels(n_heads)
        assignments = [subcell_for_head(h, n_heads) for h in range(1, n_heads + 1)]
        return cls(
            n_heads=n_heads,
            n_levels=m,
            quota=w,
            levels=tuple(a[0] for a in assignments),
            subcells=tuple((a[1], a[2]) for a in assignments),
        )

    @classmethod
    def flat(cls, n_heads: int) -> "HeadLevelMap":
        """All heads at level 0, sub-cell (0, 0) (multi-level disabled)."""
        if n_heads < 1:
            raise ValueError(f"head count must be >= 1, got {n_heads}")
        return cls(
            n_heads=n_heads,
            n_levels=1,
            quota=1,
            levels=(0,) * n_heads,
            subcells=((0, 0),) * n_heads,
        )

    def to_dict(self) -> dict:
        return {
            "n_heads": self.n_heads,
            "n_levels": self.n_levels,
            "quota": self.quota,
            "levels": list(self.levels),
            "subcells": [list(s) for s in self.subcells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadLevelMap":
        return cls(
            n_heads=d["n_heads"],
            n_levels=d["n_levels"],
            quota=d["quota"],
            levels=tuple(d["levels"]),
            subcells=tuple((s[0], s[1]) for s in d["subcells"]),
        )
