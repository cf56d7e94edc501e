import numpy as np
import pytest

from twistwold.config import override, tol
from twistwold.graded import (
    Block, DimensionError, SpaceSpec, StateVector, adjoint, apply, compose, identity,
    is_isometry_certified, power,
)
from twistwold.models import diag_symbol, fiber_unitary, mz


def test_basis_order_and_dimensions():
    sp = SpaceSpec(2, (Block(2, 1), Block(0, 3)))
    assert sp.block_dim(0) == 9 and sp.block_dim(1) == 3 and sp.total_dim == 12
    # k_1 major, then k_2, then fiber
    assert [b.k for b in sp.basis[:4]] == [(0, 0), (0, 1), (0, 2), (1, 0)]
    assert sp.basis[-1].block == 1 and sp.basis[-1].j == 2
    assert sp.index[sp.basis[5]] == 5


def test_dimension_cap():
    with pytest.raises(DimensionError):
        SpaceSpec(3, (Block(40, 1),))
    with override(dim_cap=10):
        with pytest.raises(DimensionError):
            SpaceSpec(1, (Block(20, 1),))


def test_shift_moves_monomials_up_and_truncates():
    sp = SpaceSpec(2, (Block(3, 1),))
    M1 = mz(sp, 1)
    x = StateVector.basis_vector(sp, 0, (1, 2))
    y = apply(M1, x)
    assert y.coefficients[sp.index[sp.basis[0].__class__(0, (2, 2), 0)]] == 1
    assert y.certified
    top = apply(M1, StateVector.basis_vector(sp, 0, (3, 0)))
    assert top.norm == 0 and not top.certified


def test_compose_sums_metadata_and_certifies_by_total_raise():
    sp = SpaceSpec(1, (Block(4, 1),))
    M = mz(sp, 1)
    MM = compose([M, M])
    assert (MM.raise_by, MM.word_len) == (2, 2)
    y = apply(MM, StateVector.basis_vector(sp, 0, (2,)))
    assert y.certified and abs(y.coefficients[4] - 1) < 1e-15
    assert not apply(MM, StateVector.basis_vector(sp, 0, (3,))).certified


def test_adjoint_and_power():
    sp = SpaceSpec(1, (Block(5, 2),))
    M = mz(sp, 1)
    Ms = adjoint(M)
    assert (Ms.raise_by, Ms.lower_by) == (0, 1)
    assert np.allclose(Ms.matrix, M.matrix.conj().T)
    assert adjoint(Ms).provenance == M.provenance
    assert np.allclose(power(M, 3).matrix, np.linalg.matrix_power(M.matrix, 3))
    assert identity(sp).word_len == 0
    assert (M @ M).raise_by == 2


def test_matrices_are_read_only():
    sp = SpaceSpec(1, (Block(2),))
    with pytest.raises(ValueError):
        mz(sp, 1).matrix[0, 0] = 1


def test_isometry_certificate():
    sp = SpaceSpec(2, (Block(5, 2),))
    assert is_isometry_certified(mz(sp, 2)).ok
    W = np.array([[0, 1], [1j, 0]])
    assert is_isometry_certified(fiber_unitary(sp, 0, W)).ok
    assert is_isometry_certified(diag_symbol(sp, 1, np.diag([1j, -1]))).ok
    half = compose([mz(sp, 1)])
    check = is_isometry_certified(half)
    assert check.certified_degree == {0: 4}
    # M_z* is not an isometry (kills constants)
    assert not is_isometry_certified(adjoint(mz(sp, 1))).ok


def test_diag_symbol_action():
    sp = SpaceSpec(2, (Block(3, 2),))
    U = np.diag([1j, -1])
    D1 = diag_symbol(sp, 1, U)
    x = StateVector.basis_vector(sp, 0, (2, 1), 1)
    y = apply(D1, x).coefficients
    assert abs(y[sp.index[sp.basis[0].__class__(0, (2, 1), 1)]] - 1) < 1e-15  # (-1)^2
    x = StateVector.basis_vector(sp, 0, (3, 0), 0)
    assert abs(apply(D1, x).coefficients[np.argmax(np.abs(x.coefficients))] - (1j) ** 3) < 1e-15


def test_mz_rejects_ungraded_blocks():
    from twistwold.expr import ExprError
    sp = SpaceSpec(1, (Block(3), Block(0, 2)))
    with pytest.raises(ExprError):
        mz(sp, 1)
    assert mz(sp, 1, blocks=[0]).matrix.shape == (6, 6)


def test_tolerance_override_is_scoped():
    with override(residual=1e-6):
        assert tol().residual == 1e-6
    assert tol().residual == 1e-9
    with pytest.raises(KeyError):
        with override(bogus=1.0):
            pass
