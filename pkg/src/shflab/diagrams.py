"""Collision-diagram combinatorics for the moment kernel series.

A diagram over a finite index set omega is a finite sequence of unordered
index pairs in which consecutive pairs differ.  The series for the moment
semigroup sums over all diagrams; the centered variant keeps only covering
diagrams (every index appears); short-time analysis routes through
sequences whose running unions strictly grow.

Pairs are canonically sorted 2-tuples ``(i, j)`` with ``i < j``.
Enumeration order is deterministic: pairs lexicographic, sequences in
lexicographic order of their pair indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

__all__ = [
    "Diagram",
    "enumerate_pairs",
    "enumerate_dgm",
    "enumerate_dgm_star",
    "enumerate_dgm_up",
    "count_dgm",
    "decompose_to_eta",
    "EnumerationCapError",
]

# Hard cap on the number of sequences any enumeration may yield.
ENUMERATION_CAP = 10**7


class EnumerationCapError(RuntimeError):
    pass


def _canon_pair(p) -> tuple[int, int]:
    i, j = p
    if i == j:
        raise ValueError(f"pair must have two distinct indices, got {p}")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Diagram:
    """Sequence of index pairs with distinct consecutive entries."""

    omega: tuple[int, ...]
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        omega = tuple(sorted(set(self.omega)))
        pairs = tuple(_canon_pair(p) for p in self.pairs)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "pairs", pairs)
        oset = set(omega)
        for p in pairs:
            if not set(p) <= oset:
                raise ValueError(f"pair {p} not inside omega {omega}")
        for a, b in zip(pairs, pairs[1:]):
            if a == b:
                raise ValueError(f"consecutive repeated pair {a}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def union(self) -> frozenset[int]:
        return frozenset(i for p in self.pairs for i in p)

    @property
    def covering(self) -> bool:
        return self.union == frozenset(self.omega)


def enumerate_pairs(omega):
    """All 2-subsets of omega as sorted tuples, lexicographic.

    A singleton or empty omega has no pairs.
    """
    return [tuple(p) for p in combinations(sorted(set(omega)), 2)]


def _sequences(pairs, m, cap_counter):
    """Yield all length-m consecutive-distinct sequences over ``pairs``."""
    if m <= 0:
        return
    seq = [None] * m

    def rec(k):
        for p in pairs:
            if k > 0 and p == seq[k - 1]:
                continue
            seq[k] = p
            if k + 1 == m:
                cap_counter[0] += 1
                if cap_counter[0] > ENUMERATION_CAP:
                    raise EnumerationCapError(
                        f"enumeration exceeded cap {ENUMERATION_CAP}"
                    )
                yield tuple(seq)
            else:
                yield from rec(k + 1)

    yield from rec(0)


def enumerate_dgm(omega, m: int):
    """Iterate diagrams of length exactly m over omega.

    The count is P * (P-1)^(m-1) with P the number of pairs of omega.
    """
    omega = tuple(sorted(set(omega)))
    pairs = enumerate_pairs(omega)
    cap = [0]
    for seq in _sequences(pairs, m, cap):
        yield Diagram(omega, seq)


def count_dgm(omega, m: int) -> int:
    """Closed-form size of the length-m diagram set."""
    P = len(enumerate_pairs(omega))
    if m <= 0 or P == 0:
        return 0
    return P * (P - 1) ** (m - 1)


def enumerate_dgm_star(omega, m: int):
    """Iterate covering diagrams of length exactly m over omega."""
    full = frozenset(set(omega))
    for d in enumerate_dgm(omega, m):
        if d.union == full:
            yield d


def enumerate_dgm_up(two_n: int):
    """Iterate the strictly-growing sequences for ground set {1..2n}.

    These have length exactly n; each successive pair must bring at least
    one new index, so the final union has size between n+1 and 2n.
    For 2n = 4 there are exactly 30 of them.
    """
    if two_n % 2 != 0 or two_n < 2:
        raise ValueError("ground set size must be a positive even integer")
    n = two_n // 2
    omega = tuple(range(1, two_n + 1))
    pairs = enumerate_pairs(omega)
    cap = [0]
    out = [None] * n

    def rec(k, union):
        for p in pairs:
            if set(p) <= union:
                continue
            out[k] = p
            if k + 1 == n:
                cap[0] += 1
                if cap[0] > ENUMERATION_CAP:
                    raise EnumerationCapError(
                        f"enumeration exceeded cap {ENUMERATION_CAP}"
                    )
                yield tuple(out)
            else:
                yield from rec(k + 1, union | set(p))

    yield from rec(0, set())


def decompose_to_eta(diagram: Diagram):
    """Growth positions and extracted strictly-growing prefix sequence.

    For a covering diagram over a ground set of even size 2n, returns
    ``(k_positions, eta)`` where ``k_positions`` are the first n positions
    (1-based) at which the running union of the diagram strictly grows and
    ``eta[l] = pairs[k_positions[l] - 1]``.  The first position always
    qualifies.  The extracted sequence has strictly growing unions, so it
    belongs to the length-n strictly-growing family.
    """
    two_n = len(diagram.omega)
    if two_n % 2 != 0:
        raise ValueError("ground set size must be even")
    if not diagram.covering:
        raise ValueError("diagram must cover its ground set")
    n = two_n // 2
    ks = []
    union: set[int] = set()
    for pos, p in enumerate(diagram.pairs, start=1):
        if not set(p) <= union:
            ks.append(pos)
            if len(ks) == n:
                break
        union |= set(p)
    # A covering diagram starts from an empty union and adds at most two
    # indices per growth, so it has at least n growth positions.
    assert len(ks) == n
    eta = tuple(diagram.pairs[k - 1] for k in ks)
    return tuple(ks), eta
