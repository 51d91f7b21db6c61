import numpy as np
import pytest

from spinvmc.errors import CapacityError
from spinvmc.hilbert import (Configuration, Lattice, Partition,
                             enumerate_configurations, join_configuration,
                             neighbor_pairs, spin_values, split_configuration,
                             swap_subsystem_bits)


def test_enumerate_one_spin():
    confs = list(enumerate_configurations(1))
    assert [c.bits for c in confs] == [0, 1]
    assert str(confs[0]) == "↓" and str(confs[1]) == "↑"


def test_enumerate_two_spins_order():
    confs = list(enumerate_configurations(2))
    assert [str(c) for c in confs] == ["↓↓", "↑↓",
                                       "↓↑", "↑↑"]
    assert [c.bits for c in confs] == [0, 1, 2, 3]


def test_enumerate_cardinality():
    assert sum(1 for _ in enumerate_configurations(10)) == 1024


@pytest.mark.parametrize("n", [1, 4, 8, 12])
def test_enumerate_unique(n):
    bits = [c.bits for c in enumerate_configurations(n)]
    assert len(bits) == 2 ** n
    assert len(set(bits)) == 2 ** n


def test_enumerate_capacity_error():
    with pytest.raises(CapacityError):
        list(enumerate_configurations(31))
    with pytest.raises(CapacityError):
        list(enumerate_configurations(0))


def test_configuration_value_semantics():
    a = Configuration(5, 4)
    b = Configuration(5, 4)
    assert a == b and hash(a) == hash(b)
    assert a != Configuration(5, 5)
    assert a.spin(0) == 1 and a.spin(1) == -1 and a.spin(2) == 1
    assert np.array_equal(a.spins(), [1.0, -1.0, 1.0, -1.0])
    assert a.flip(1).bits == 7


def test_from_spins_roundtrip():
    c = Configuration.from_spins([1, -1, -1, 1])
    assert c.bits == 0b1001
    with pytest.raises(ValueError):
        Configuration.from_spins([1, 0])


def test_chain_neighbors():
    assert neighbor_pairs(Lattice("chain", 3, True)) == [(0, 1), (1, 2), (2, 0)]
    assert neighbor_pairs(Lattice("chain", 2, False)) == [(0, 1)]
    # both bonds of the 2-ring are kept
    assert len(neighbor_pairs(Lattice("chain", 2, True))) == 2


def test_square_2x2_torus_edges():
    # hand enumeration: each of the 4 sites has a right and an up bond; on the
    # 2-torus both bonds between each adjacent pair survive -> 8 edges total
    pairs = neighbor_pairs(Lattice("square", 2, True))
    assert len(pairs) == 8
    from collections import Counter

    counts = Counter(frozenset(p) for p in pairs)
    assert all(v == 2 for v in counts.values())
    assert set(counts) == {frozenset({0, 1}), frozenset({2, 3}),
                           frozenset({0, 2}), frozenset({1, 3})}


def test_square_open_edges_and_degree():
    lat = Lattice("square", 3, False)
    pairs = neighbor_pairs(lat)
    assert len(pairs) == 12  # 2 * L * (L-1)
    lat_p = Lattice("square", 3, True)
    deg = {}
    for i, j in neighbor_pairs(lat_p):
        deg[i] = deg.get(i, 0) + 1
        deg[j] = deg.get(j, 0) + 1
    assert all(d == 4 for d in deg.values())


def test_periodic_chain_degree():
    deg = {}
    for i, j in neighbor_pairs(Lattice("chain", 5, True)):
        deg[i] = deg.get(i, 0) + 1
        deg[j] = deg.get(j, 0) + 1
    assert all(d == 2 for d in deg.values())


def test_split_simple():
    # up down up up on 4 sites, A = {0, 1}
    c = Configuration.from_spins([1, -1, 1, 1])
    part = Partition.first_k(4, 2)
    a, b = split_configuration(c, part)
    assert str(a) == "↑↓"
    assert str(b) == "↑↑"


def test_split_all_but_one():
    part = Partition.of_sites(range(3), 4)
    for bits in range(16):
        a, b = split_configuration(Configuration(bits, 4), part)
        assert b.n_sites == 1


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_split_join_bijection(n, rng):
    sites = list(range(n))
    for trial in range(5):
        k = int(rng.integers(1, n))
        subset = tuple(sorted(rng.choice(sites, size=k, replace=False).tolist()))
        part = Partition.of_sites(subset, n)
        seen = set()
        for bits in range(1 << n):
            c = Configuration(bits, n)
            a, b = split_configuration(c, part)
            assert join_configuration(a, b, part) == c
            seen.add((a.bits, b.bits))
        assert len(seen) == 1 << n


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition((0, 1), (1, 2))
    with pytest.raises(ValueError):
        Partition((), (0, 1))
    with pytest.raises(ValueError):
        Partition((0,), (2,))


def test_boundary_length():
    lat = Lattice("square", 2, True)
    assert Partition.first_k(4, 1).boundary_length(lat) == 4
    assert Partition.first_k(4, 2).boundary_length(lat) == 4


def test_swap_subsystem_bits():
    part = Partition.first_k(4, 2)
    m = part.mask_a()
    x = np.array([0b0011])
    y = np.array([0b1100])
    xs, ys = swap_subsystem_bits(x, y, m)
    assert xs[0] == 0b0000 and ys[0] == 0b1111


def test_spin_values_matrix():
    s = spin_values(np.array([0b01, 0b10]), 2)
    assert np.array_equal(s, [[1.0, -1.0], [-1.0, 1.0]])
