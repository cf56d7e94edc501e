import numpy as np
import pytest

from twistwold.expr import FiberUnitary, Literal, Mz, Sum
from twistwold.graded import Block, SpaceSpec
from twistwold.models import fiber_unitary, mz
from twistwold.subspace import Subspace, equal, stabilized_intersection
from twistwold.wold import (
    Kind, NotAnIsometry, NotReducing, classify_restriction, shift_projection, unitary_projection,
    wold_decompose,
)

from conftest import random_unitary


def mixed(D=6):
    sp = SpaceSpec(1, (Block(D), Block(0, 2)))
    return Sum((Mz(1, (0,)), FiberUnitary(1, np.diag([1, 1j])))).evaluate(sp)


def test_unitary_projection_of_shift_vanishes():
    sp = SpaceSpec(1, (Block(6),))
    P = unitary_projection(mz(sp, 1))
    assert np.max(np.abs(P.matrix)) == 0 and P.steps <= 7 and P.stabilized


def test_unitary_projection_of_unitary_is_identity(rng):
    W = fiber_unitary(SpaceSpec(0, (Block(0, 4),)), 0, random_unitary(4, rng))
    P = unitary_projection(W)
    assert np.allclose(P.matrix, np.eye(4), atol=1e-12) and P.steps == 1


def test_mixed_projections_are_block_diagonal():
    V = mixed()
    Pu, Ps = unitary_projection(V).matrix, shift_projection(V).matrix
    expected_u = np.diag([0] * 7 + [1, 1])
    assert np.allclose(Pu, expected_u, atol=1e-12)
    assert np.allclose(Ps, np.eye(9) - expected_u, atol=1e-12)


def test_projectors_are_idempotent_and_complete():
    V = mixed()
    mask = V.space.certified_mask(1)
    for P in (unitary_projection(V).matrix, shift_projection(V).matrix):
        assert np.max(np.abs((P @ P - P)[:, mask])) < 1e-9
        assert np.max(np.abs(P - P.conj().T)) < 1e-9


def test_wold_decompose_examples(rng):
    r = wold_decompose(mz(SpaceSpec(1, (Block(8),)), 1))
    assert r.unitary_part.dim == 0 and r.shift_part.dim == 9 and r.certified
    perm = np.eye(3)[[1, 2, 0]]
    r = wold_decompose(fiber_unitary(SpaceSpec(0, (Block(0, 3),)), 0, perm))
    assert r.unitary_part.dim == 3 and r.shift_part.dim == 0
    r = wold_decompose(mixed())
    assert r.unitary_part.dim == 2 and r.shift_part.dim == 7
    assert r.orthogonality_residual < 1e-10 and r.completeness_residual < 1e-9


def test_unitary_part_matches_stabilized_intersection():
    V = mixed()
    st = stabilized_intersection([V], Subspace.whole(V.space))
    assert equal(st.subspace, wold_decompose(V).unitary_part)


def test_classification():
    sp = SpaceSpec(1, (Block(6),))
    assert classify_restriction(mz(sp, 1), Subspace.whole(sp)) is Kind.SHIFT
    V = mixed()
    wblock = Subspace.coordinate(V.space, np.arange(9) >= 7)
    assert classify_restriction(V, wblock) is Kind.UNITARY
    assert classify_restriction(V, Subspace.whole(V.space)) is Kind.MIXED
    shift = wold_decompose(V).shift_part
    assert classify_restriction(V, shift) is Kind.SHIFT
    assert classify_restriction(V, Subspace.zero(V.space)) is Kind.SHIFT


def test_classification_requires_reducing():
    sp = SpaceSpec(1, (Block(6),))
    with pytest.raises(NotReducing):
        classify_restriction(mz(sp, 1), Subspace.coordinate(sp, np.arange(7) == 0))


def test_small_budget_is_uncertified():
    sp = SpaceSpec(1, (Block(8),))
    assert classify_restriction(mz(sp, 1), Subspace.whole(sp), budget=2) is Kind.UNCERTIFIED
    assert not wold_decompose(mz(sp, 1), m_max=3).certified


def test_non_isometry_rejected():
    sp = SpaceSpec(1, (Block(3),))
    with pytest.raises(NotAnIsometry):
        unitary_projection(Literal(2 * np.eye(4)).evaluate(sp))
