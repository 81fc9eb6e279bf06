"""Diagram enumeration against an independent brute-force oracle.

The oracle builds raw cartesian products with itertools and filters, sharing
no code with the package's recursive enumerators.
"""

from itertools import combinations, product

import pytest

from shflab import diagrams as dg


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def brute_pairs(omega):
    return [tuple(sorted(p)) for p in combinations(sorted(omega), 2)]


def brute_dgm(omega, m):
    """All length-m pair sequences with distinct consecutive entries."""
    out = []
    for seq in product(brute_pairs(omega), repeat=m):
        if any(seq[k] == seq[k + 1] for k in range(m - 1)):
            continue
        out.append(seq)
    return out


def brute_dgm_star(omega, m):
    full = set(omega)
    return [s for s in brute_dgm(omega, m) if set().union(*map(set, s)) == full]


def brute_dgm_up(two_n):
    n = two_n // 2
    out = []
    for seq in product(brute_pairs(range(1, two_n + 1)), repeat=n):
        union = set()
        ok = True
        for p in seq:
            if set(p) <= union:
                ok = False
                break
            union |= set(p)
        if ok:
            out.append(seq)
    return out


# Frozen counts computed with the oracle above (omega sizes 2..4, m 1..4).
# dgm:      |omega| -> [m=1, m=2, m=3, m=4]
# dgm_star: |omega| -> [m=1, m=2, m=3, m=4]
FROZEN_DGM = {
    2: [1, 0, 0, 0],
    3: [3, 6, 12, 24],
    4: [6, 30, 150, 750],
}
FROZEN_DGM_STAR = {
    2: [1, 0, 0, 0],
    3: [0, 6, 12, 24],
    4: [0, 6, 102, 654],
}


def test_frozen_counts_match_oracle():
    for size, counts in FROZEN_DGM.items():
        omega = tuple(range(1, size + 1))
        assert [len(brute_dgm(omega, m)) for m in (1, 2, 3, 4)] == counts
    for size, counts in FROZEN_DGM_STAR.items():
        omega = tuple(range(1, size + 1))
        assert [len(brute_dgm_star(omega, m)) for m in (1, 2, 3, 4)] == counts


# ---------------------------------------------------------------------------
# package enumerators vs oracle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("size", [2, 3, 4])
@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_enumerate_dgm_matches_oracle(size, m):
    omega = tuple(range(1, size + 1))
    got = [d.pairs for d in dg.enumerate_dgm(omega, m)]
    expected = brute_dgm(omega, m)
    assert sorted(got) == sorted(expected)
    assert len(got) == FROZEN_DGM[size][m - 1]
    assert dg.count_dgm(omega, m) == len(expected)


@pytest.mark.parametrize("size", [2, 3, 4])
@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_enumerate_dgm_star_matches_oracle(size, m):
    omega = tuple(range(1, size + 1))
    got = [d.pairs for d in dg.enumerate_dgm_star(omega, m)]
    assert sorted(got) == sorted(brute_dgm_star(omega, m))
    assert len(got) == FROZEN_DGM_STAR[size][m - 1]


def test_pairs_lexicographic_and_singleton():
    assert dg.enumerate_pairs([2, 1, 3]) == [(1, 2), (1, 3), (2, 3)]
    assert dg.enumerate_pairs([7]) == []
    assert dg.enumerate_pairs([]) == []


def test_dgm_up_sizes():
    up4 = list(dg.enumerate_dgm_up(4))
    assert len(up4) == 30
    assert sorted(up4) == sorted(brute_dgm_up(4))
    assert list(dg.enumerate_dgm_up(2)) == [((1, 2),)]
    # final union sizes lie in [n+1, 2n] for n > 1
    for seq in up4:
        u = set().union(*map(set, seq))
        assert 3 <= len(u) <= 4


def test_dgm_up_rejects_odd():
    with pytest.raises(ValueError):
        list(dg.enumerate_dgm_up(3))


# ---------------------------------------------------------------------------
# diagram type invariants
# ---------------------------------------------------------------------------

def test_diagram_canonicalization_and_validation():
    d = dg.Diagram((1, 2, 3, 4), ((2, 1), (4, 3)))
    assert d.pairs == ((1, 2), (3, 4))
    assert d.covering
    with pytest.raises(ValueError):
        dg.Diagram((1, 2), ((1, 2), (1, 2)))
    with pytest.raises(ValueError):
        dg.Diagram((1, 2), ((1, 3),))
    with pytest.raises(ValueError):
        dg.Diagram((1, 2), ((1, 1),))


def test_decompose_spec_example():
    d = dg.Diagram((1, 2, 3, 4), ((1, 2), (3, 4)))
    ks, eta = dg.decompose_to_eta(d)
    assert ks == (1, 2)
    assert eta == ((1, 2), (3, 4))


def test_decompose_overlapping_growth():
    # union grows at positions 1, 2, 3; only the first two are kept
    d = dg.Diagram((1, 2, 3, 4), ((1, 2), (1, 3), (1, 4)))
    ks, eta = dg.decompose_to_eta(d)
    assert ks == (1, 2)
    assert eta == ((1, 2), (1, 3))


@pytest.mark.parametrize("m", [2, 3, 4])
def test_partition_property(m):
    """decompose_to_eta partitions the covering diagrams by eta fiber."""
    up = set(dg.enumerate_dgm_up(4))
    omega = (1, 2, 3, 4)
    fibers: dict[tuple, list] = {}
    total = 0
    for d in dg.enumerate_dgm_star(omega, m):
        ks, eta = dg.decompose_to_eta(d)
        assert eta in up
        assert ks[0] == 1
        fibers.setdefault(eta, []).append(d.pairs)
        total += 1
    # fibers are disjoint and exhaust the covering set
    assert sum(len(v) for v in fibers.values()) == total == FROZEN_DGM_STAR[4][m - 1]
    seen = set()
    for v in fibers.values():
        for pairs in v:
            assert pairs not in seen
            seen.add(pairs)


def test_enumeration_cap(monkeypatch):
    monkeypatch.setattr(dg, "ENUMERATION_CAP", 10)
    with pytest.raises(dg.EnumerationCapError):
        list(dg.enumerate_dgm((1, 2, 3, 4), 3))
