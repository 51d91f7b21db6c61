"""Basis-state encoding, lattice geometry, and subsystem bookkeeping.

A configuration of N spin-1/2 sites is encoded as an integer bit pattern:
bit i is site i, bit value 1 means spin up, 0 means spin down.  The spin
variable is s_i = +1 for up and -1 for down, used consistently everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .errors import CapacityError

MAX_SITES = 30
# Full enumeration (2^n vectors) is only allowed up to this size.
MAX_DENSE_SITES = 14

ARROWS = {0: "↓", 1: "↑"}


@dataclass(frozen=True)
class Configuration:
    """A basis state of ``n_sites`` spins, value-compared on (bits, n_sites)."""

    bits: int
    n_sites: int

    def __post_init__(self):
        if not 1 <= self.n_sites <= MAX_SITES:
            raise CapacityError(f"n_sites must be in [1, {MAX_SITES}], got {self.n_sites}")
        if not 0 <= self.bits < (1 << self.n_sites):
            raise ValueError(f"bits 0x{self.bits:x} out of range for {self.n_sites} sites")

    @classmethod
    def from_spins(cls, spins) -> "Configuration":
        """Build from a sequence of +-1 spin values (index = site)."""
        bits = 0
        for i, s in enumerate(spins):
            if s not in (-1, 1):
                raise ValueError(f"spin values must be +-1, got {s}")
            if s == 1:
                bits |= 1 << i
        return cls(bits, len(spins))

    def occupation(self, site: int) -> int:
        return (self.bits >> site) & 1

    def spin(self, site: int) -> int:
        return 2 * self.occupation(site) - 1

    def spins(self) -> np.ndarray:
        """Spin values s_i = +-1 as a float array of length n_sites."""
        occ = (self.bits >> np.arange(self.n_sites)) & 1
        return 2.0 * occ - 1.0

    def flip(self, site: int) -> "Configuration":
        return Configuration(self.bits ^ (1 << site), self.n_sites)

    def __str__(self) -> str:
        return "".join(ARROWS[self.occupation(i)] for i in range(self.n_sites))


def enumerate_configurations(n_sites: int) -> Iterator[Configuration]:
    """Yield all 2^n_sites configurations in ascending bit order."""
    if not 1 <= n_sites <= MAX_SITES:
        raise CapacityError(f"n_sites must be in [1, {MAX_SITES}], got {n_sites}")
    for bits in range(1 << n_sites):
        yield Configuration(bits, n_sites)


def check_dense_capacity(n_sites: int) -> None:
    if n_sites > MAX_DENSE_SITES:
        raise CapacityError(
            f"dense/full-summation paths support n_sites <= {MAX_DENSE_SITES}, got {n_sites}"
        )


def all_bits(n_sites: int) -> np.ndarray:
    """Integer bit patterns 0 .. 2^n - 1 (dense-capacity guarded)."""
    check_dense_capacity(n_sites)
    return np.arange(1 << n_sites, dtype=np.int64)


def occupations(bits: np.ndarray, n_sites: int) -> np.ndarray:
    """Bit matrix (B, n_sites) of 0/1 site occupations."""
    bits = np.asarray(bits, dtype=np.int64)
    return ((bits[:, None] >> np.arange(n_sites)) & 1).astype(np.int8)


def spin_values(bits: np.ndarray, n_sites: int) -> np.ndarray:
    """Spin matrix (B, n_sites) of +-1 values as float64."""
    return 2.0 * occupations(bits, n_sites) - 1.0


@lru_cache(maxsize=32)
def spin_table(n_sites: int) -> np.ndarray:
    """Cached (2^n, n) spin matrix over the full basis; read-only."""
    tab = spin_values(all_bits(n_sites), n_sites)
    tab.setflags(write=False)
    return tab


@dataclass(frozen=True)
class Lattice:
    """A chain (n = L) or square (n = L^2) lattice of spin-1/2 sites.

    Square-lattice sites are numbered row-major from the lower-left corner,
    site(r, c) = r * L + c.
    """

    kind: str
    side: int
    periodic: bool = True

    def __post_init__(self):
        if self.kind not in ("chain", "square"):
            raise ValueError(f"lattice kind must be 'chain' or 'square', got {self.kind!r}")
        if self.side < 1:
            raise ValueError("lattice side must be positive")
        if self.n_sites > MAX_SITES:
            raise CapacityError(f"lattice has {self.n_sites} sites, max {MAX_SITES}")

    @property
    def n_sites(self) -> int:
        return self.side if self.kind == "chain" else self.side * self.side

    def site(self, row: int, col: int) -> int:
        if self.kind != "square":
            raise ValueError("site(row, col) applies to square lattices")
        return (row % self.side) * self.side + (col % self.side)


def neighbor_pairs(lattice: Lattice) -> list[tuple[int, int]]:
    """Nearest-neighbor edges, each distinct lattice bond exactly once.

    On periodic lattices of side 2 both wrap-around bonds between the same
    site pair are kept (a 2x2 torus has 8 edges), so diagonal Ising energies
    match a direct enumeration of torus bonds.
    """
    L = lattice.side
    if L == 1:
        return []
    if lattice.kind == "chain":
        if not lattice.periodic:
            return [(i, i + 1) for i in range(L - 1)]
        # periodic: L distinct ring bonds (two between the same sites when L=2)
        return [(i, (i + 1) % L) for i in range(L)]
    pairs: list[tuple[int, int]] = []
    for r in range(L):
        for c in range(L):
            if lattice.periodic or c + 1 < L:
                pairs.append((lattice.site(r, c), lattice.site(r, c + 1)))
            if lattice.periodic or r + 1 < L:
                pairs.append((lattice.site(r, c), lattice.site(r + 1, c)))
    return pairs


@dataclass(frozen=True)
class Partition:
    """A bipartition of sites into subsystem A and its complement B."""

    subsystem_a: tuple[int, ...]
    complement_b: tuple[int, ...]

    def __post_init__(self):
        a, b = set(self.subsystem_a), set(self.complement_b)
        if not a or not b:
            raise ValueError("both subsystems must be nonempty")
        if a & b:
            raise ValueError("subsystems must be disjoint")
        n = len(a) + len(b)
        if (a | b) != set(range(n)):
            raise ValueError("subsystems must cover sites 0..n-1 exactly")

    @classmethod
    def of_sites(cls, subsystem_a, n_sites: int) -> "Partition":
        a = tuple(subsystem_a)
        b = tuple(i for i in range(n_sites) if i not in set(a))
        return cls(a, b)

    @classmethod
    def first_k(cls, n_sites: int, k: int) -> "Partition":
        """Subsystem A = the first k sites in row-major site order."""
        return cls(tuple(range(k)), tuple(range(k, n_sites)))

    @property
    def n_sites(self) -> int:
        return len(self.subsystem_a) + len(self.complement_b)

    def mask_a(self) -> int:
        m = 0
        for s in self.subsystem_a:
            m |= 1 << s
        return m

    def boundary_length(self, lattice: Lattice) -> int:
        """Number of lattice edges with exactly one endpoint in A."""
        a = set(self.subsystem_a)
        return sum(1 for (i, j) in neighbor_pairs(lattice) if (i in a) != (j in a))


def split_configuration(config: Configuration, partition: Partition):
    """Split a configuration into its (A, B) sub-configurations."""
    if partition.n_sites != config.n_sites:
        raise ValueError("partition does not cover the configuration's sites")
    a_bits = 0
    for k, s in enumerate(partition.subsystem_a):
        a_bits |= config.occupation(s) << k
    b_bits = 0
    for k, s in enumerate(partition.complement_b):
        b_bits |= config.occupation(s) << k
    return (
        Configuration(a_bits, len(partition.subsystem_a)),
        Configuration(b_bits, len(partition.complement_b)),
    )


def join_configuration(sub_a: Configuration, sub_b: Configuration, partition: Partition) -> Configuration:
    """Inverse of :func:`split_configuration`."""
    if (sub_a.n_sites, sub_b.n_sites) != (len(partition.subsystem_a), len(partition.complement_b)):
        raise ValueError("sub-configuration sizes do not match the partition")
    bits = 0
    for k, s in enumerate(partition.subsystem_a):
        bits |= sub_a.occupation(k) << s
    for k, s in enumerate(partition.complement_b):
        bits |= sub_b.occupation(k) << s
    return Configuration(bits, partition.n_sites)


def swap_subsystem_bits(x: np.ndarray, y: np.ndarray, mask_a: int):
    """Exchange the A-parts of two bit-pattern arrays; returns (x', y')."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    xa = (y & mask_a) | (x & ~mask_a)
    ya = (x & mask_a) | (y & ~mask_a)
    return xa, ya
