import numpy as np
import pytest

from spinvmc import operators as ops
from spinvmc.errors import ScheduleError
from spinvmc.hilbert import Configuration, Lattice
from spinvmc.operators import (Hamiltonian, LocalOperator, TermGroup,
                               UnitaryProduct, as_unitary_product,
                               build_adiabatic, build_projector,
                               build_single_spin_y, build_tfi,
                               connected_elements, triangular_profile)

DOWN = Configuration(0, 1)
UP = Configuration(1, 1)


def test_sigma_y_on_down():
    elems = connected_elements(ops.sigma_y(0), DOWN)
    assert elems == [(UP, 1j)]
    elems = connected_elements(ops.sigma_y(0), UP)
    assert elems == [(DOWN, -1j)]


def test_sigma_z_diagonal():
    assert connected_elements(ops.sigma_z(0), DOWN) == [(DOWN, -1.0)]
    assert connected_elements(ops.sigma_z(0), UP) == [(UP, 1.0)]


def test_tfi_connected_from_down_down():
    lat = Lattice("chain", 2, periodic=False)
    h = build_tfi(lat, 1.0, 1.0)
    elems = connected_elements(h, Configuration(0, 2))
    table = {c.bits: a for c, a in elems}
    # diagonal -J s0 s1 = -1, plus single flips with amplitude -h
    assert table == {0b00: -1.0, 0b01: -1.0, 0b10: -1.0}


def test_tfi_classical_diagonal():
    lat = Lattice("chain", 2, periodic=False)
    h = build_tfi(lat, 1.0, 0.0)
    energies = {}
    for bits in range(4):
        elems = connected_elements(h, Configuration(bits, 2))
        assert all(c.bits == bits for c, _ in elems)  # diagonal at h=0
        energies[bits] = sum(a for _, a in elems).real
    assert energies == {0b00: -1.0, 0b11: -1.0, 0b01: 1.0, 0b10: 1.0}


def test_tfi_dense_matches_manual_4x4():
    lat = Lattice("chain", 2, periodic=False)
    h = build_tfi(lat, 1.3, 0.7)
    sz = np.diag([-1.0, 1.0])
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    eye = np.eye(2)
    # site 0 is the low bit: kron(high, low)
    manual = (-1.3 * np.kron(sz, sz)
              - 0.7 * (np.kron(eye, sx) + np.kron(sx, eye)))
    assert np.allclose(h.dense(), manual, atol=1e-14)


def test_tfi_fanout_bound():
    lat = Lattice("chain", 5, periodic=True)
    h = build_tfi(lat, 1.0, 1.0)
    for bits in range(32):
        elems = connected_elements(h, Configuration(bits, 5))
        assert len(elems) <= 6  # N + 1


def test_adiabatic_schedule_values():
    gamma = triangular_profile(8.0)
    assert gamma(8.0) == 1.0
    assert gamma(16.0) == 0.0
    assert gamma(4.0) == 0.5
    assert gamma(20.0) == 0.5  # periodic continuation
    with pytest.raises(ScheduleError):
        gamma(-1.0)


def test_adiabatic_at_t0_is_minus_sum_sx():
    h = build_adiabatic(3, period=8.0)
    manual = Hamiltonian(3, [TermGroup([ops.scaled(ops.sigma_x(i), -1.0)
                                        for i in range(3)])])
    assert np.allclose(h.dense(time=0.0), manual.dense(), atol=1e-14)


def test_adiabatic_at_period_is_sum_sz():
    h = build_adiabatic(3, period=8.0)
    manual = Hamiltonian(3, [TermGroup([ops.sigma_z(i) for i in range(3)])])
    assert np.allclose(h.dense(time=8.0), manual.dense(), atol=1e-14)


def test_time_required_error():
    h = build_adiabatic(2, period=4.0)
    with pytest.raises(ScheduleError):
        connected_elements(h, Configuration(0, 2))


def test_projector_action():
    p_up = build_projector(0, "up")
    assert connected_elements(p_up, UP) == [(UP, 1.0)]
    assert connected_elements(p_up, DOWN) == []


def test_projector_completeness_and_idempotency():
    p_up = build_projector(0, "up")
    p_dn = build_projector(0, "down")
    assert np.allclose(p_up.matrix + p_dn.matrix, np.eye(2))
    for p in (p_up, p_dn):
        assert np.allclose(p.matrix @ p.matrix, p.matrix)


def test_hermitian_scan_small():
    lat = Lattice("chain", 4, periodic=True)
    h = build_tfi(lat, 0.8, 1.1)
    dense = h.dense()
    assert np.allclose(dense, dense.conj().T, atol=1e-13)
    hy = build_single_spin_y()
    dy = hy.dense()
    assert np.allclose(dy, dy.conj().T, atol=1e-14)


def test_dense_equals_sum_of_term_denses():
    lat = Lattice("square", 2, periodic=True)
    h = build_tfi(lat, 0.5, 0.25)
    total = np.zeros((16, 16), complex)
    for term in h.terms:
        total += term.dense(4)
    assert np.allclose(h.dense(), total, atol=1e-13)


def test_zero_amplitude_merging_dropped():
    # two opposite terms cancel exactly; merged elements must vanish
    h = Hamiltonian(1, [TermGroup([ops.sigma_x(0), ops.scaled(ops.sigma_x(0), -1.0)])])
    assert connected_elements(h, DOWN) == []


def test_local_operator_validation():
    with pytest.raises(ValueError):
        LocalOperator((0, 0), np.eye(4))
    with pytest.raises(ValueError):
        LocalOperator((0,), np.eye(4))
    with pytest.raises(ValueError):
        LocalOperator((0,), np.array([[0.0, 1j], [1j, 0.0]]), hermitian=True)


def test_unitary_product_row_and_adjoint(rng):
    u1 = LocalOperator((0,), _random_unitary(rng, 1))
    u2 = LocalOperator((1, 2), _random_unitary(rng, 2))
    u = UnitaryProduct([u2, u1])
    dense = u.dense(3)
    assert np.allclose(dense @ dense.conj().T, np.eye(8), atol=1e-12)
    for bits in range(8):
        row = dict(u.connected_from(bits))
        for b2 in range(8):
            assert abs(row.get(b2, 0.0) - dense[bits, b2]) < 1e-12
    assert np.allclose(u.adjoint().dense(3), dense.conj().T, atol=1e-12)


def test_as_unitary_product_coercion():
    op = ops.sigma_x(0)
    assert isinstance(as_unitary_product(op), UnitaryProduct)
    assert isinstance(as_unitary_product([op, op]), UnitaryProduct)
    with pytest.raises(TypeError):
        as_unitary_product(3.0)


def _random_unitary(rng, k):
    d = 1 << k
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, _ = np.linalg.qr(m)
    return q
