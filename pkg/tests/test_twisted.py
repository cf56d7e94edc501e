import numpy as np
import pytest

from twistwold.graded import Block, SpaceSpec, compose
from twistwold.models import IsometryTuple, TwistFamily, mz, twisted_shift_tuple
from twistwold.subspace import Subspace, contained, cross_residual, equal, image, orthonormalize, \
    stabilized_intersection
from twistwold.twisted import (
    CriterionFailed, EngineError, TwistMonomial, Wandering, WanderingViolation, block_space,
    check_doubly_twisted, check_twisted, defect_product_residual, defect_space,
    doubly_twisted_decompose, is_twisted_shift, is_twisted_weak_shift, maximality_probe, multi_power,
    orbit_summands, subsets, twist_commutation_check, twisted_decompose, vnw_criterion,
    vnw_decompose, wandering, weak_wandering,
)
from twistwold.wold import Kind

from conftest import DOUBLY_TWISTED_SCENES


def zz(D=8):
    sp = SpaceSpec(1, (Block(D),))
    return IsometryTuple(sp, (mz(sp, 1), mz(sp, 1)))


def w_block(tup):
    return Subspace.coordinate(tup.space, tup.space.block_of == 1)


# --- relations ---------------------------------------------------------------

def test_relation_checks(rotation_pair):
    assert check_twisted(rotation_pair).ok and check_doubly_twisted(rotation_pair).ok
    wrong = TwistFamily.identity(rotation_pair.space, 2)
    r = check_twisted(rotation_pair, wrong)
    assert not r.ok and abs(r.residual - abs(1j - 1)) < 1e-12


def test_zz_pair_is_twisted_but_not_doubly():
    t = zz()
    assert check_twisted(t).ok
    d = check_doubly_twisted(t)
    assert not d.ok and abs(d.residual - 1.0) < 1e-12


def test_twist_commutation_identity(rotation_pair, corpus):
    c = twist_commutation_check(rotation_pair, pairs=[(2, (3, 0))])
    assert c.residual < 1e-12
    eta = TwistMonomial.commutation(2, 2, (3, 0))
    assert dict(eta.exponents) == {(2, 1): 3}
    n3 = corpus["rotation_n3"]
    c = twist_commutation_check(n3, samples=25, seed=7)
    assert c.ok and len(c.samples) == 25


def test_commuting_case_monomials_are_identity():
    sp = SpaceSpec(2, (Block(3),))
    t = IsometryTuple(sp, (mz(sp, 1), mz(sp, 2)))
    from twistwold.twisted import derive_twist
    eta = TwistMonomial.commutation(2, 1, (0, 2)).evaluate(derive_twist(t))
    assert np.allclose(eta, np.eye(sp.total_dim))


# --- defect and wandering subspaces -------------------------------------------

def test_defect_space_examples(rotation_pair):
    assert defect_space(rotation_pair, {1, 2}).dim == 1
    assert defect_space(rotation_pair, set()).dim == rotation_pair.space.total_dim
    t = twisted_shift_tuple(SpaceSpec(2, (Block(4),)), {(2, 1): 1j})
    assert defect_space(t, {1}).dim == 5


@pytest.mark.parametrize("name", DOUBLY_TWISTED_SCENES)
def test_defect_projections_for_doubly_twisted(corpus, name):
    t = corpus[name]
    P = [defect_space(t, [i]).projector for i in range(1, t.n + 1)]
    for a in range(len(P)):
        for b in range(a + 1, len(P)):
            assert np.max(np.abs(P[a] @ P[b] - P[b] @ P[a])) < 1e-10
    for A in subsets(t.n):
        assert defect_product_residual(t, A) < 1e-9
        assert equal(weak_wandering(t, A).subspace, defect_space(t, A))


@pytest.mark.parametrize("name", ["rotation_pair", "rotation_n3", "n3_mixed"])
def test_defect_word_identity(corpus, name, rng):
    t = corpus[name]
    for A in subsets(t.n):
        if not A:
            continue
        coords = sorted(A)
        for _ in range(4):
            k = [int(x) for x in rng.integers(0, 3, size=len(coords))]
            lhs = np.eye(t.space.total_dim, dtype=complex)
            for i, ki in zip(coords, k):
                Vk = multi_power(t, [ki], [i]).matrix
                lhs = lhs @ Vk @ defect_space(t, [i]).projector @ Vk.conj().T
            VA = multi_power(t, k, coords).matrix
            rhs = VA @ defect_space(t, A).projector @ VA.conj().T
            assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_weak_wandering_of_zz_pair():
    t = zz(6)
    assert weak_wandering(t, {1}).subspace.dim == 0
    assert weak_wandering(t, {2}).subspace.dim == 0
    assert weak_wandering(t, set()).subspace.dim == 7


def test_wandering_examples(rotation_pair, mixed_tuple):
    W = wandering(rotation_pair, {1, 2})
    assert W.subspace.dim == 1 and equal(W.subspace, defect_space(rotation_pair, {1, 2}))
    W = wandering(mixed_tuple, set())
    assert W.certified and equal(W.subspace, w_block(mixed_tuple))
    for A in ({1}, {2}, {1, 2}):
        assert wandering(zz(), A).subspace.dim == 0


@pytest.mark.parametrize("name", ["rotation_pair", "mixed_rotation", "shift_times_unitary", "n3_mixed"])
def test_wandering_invariances(corpus, name):
    t = corpus[name]
    for A in subsets(t.n):
        E = weak_wandering(t, A).subspace
        for (i, j), U in t.twist.U.items():
            assert equal(image(U, E), E)
        if len(A) < t.n:
            W = wandering(t, A).subspace
            for j in set(range(1, t.n + 1)) - A:
                assert equal(image(t.op(j), W), W)
        # summands of the orbit are mutually orthogonal
        parts = [S for _, S in orbit_summands(t, A, E, budget=2)] if A else []
        for a in range(len(parts)):
            for b in range(a + 1, len(parts)):
                assert cross_residual(parts[a], parts[b]) < 1e-9


def test_block_space_examples(rotation_pair, mixed_tuple):
    assert equal(block_space(mixed_tuple, set()), w_block(mixed_tuple))
    assert block_space(rotation_pair, {1}).dim == 0
    with pytest.raises(EngineError):
        block_space(rotation_pair, {1, 2})


def test_block_space_detects_overlapping_orbits():
    sp = SpaceSpec(1, (Block(5),))
    t = IsometryTuple(sp, (mz(sp, 1),) * 3)
    constants = Subspace.coordinate(sp, np.arange(6) == 0)
    with pytest.raises(WanderingViolation):
        block_space(t, {1, 2}, Wandering(constants, True, 0))


@pytest.mark.parametrize("name", ["rotation_pair", "mixed_rotation", "rotation_n3"])
def test_full_product_matches_coordinatewise_stabilization(corpus, name):
    t = corpus[name]
    prod = compose(list(t.V))
    for S in (Subspace.whole(t.space), vnw_decompose(t).block(set()).subspace):
        a = stabilized_intersection([prod], S).subspace
        b = stabilized_intersection(list(t.V), S).subspace
        assert equal(a, b)


# --- engines -------------------------------------------------------------------

def test_vnw_criterion_examples(corpus):
    sp = SpaceSpec(2, (Block(4),))
    assert vnw_criterion(IsometryTuple(sp, (mz(sp, 1), mz(sp, 2)))).ok
    assert vnw_criterion(zz()).ok
    c = vnw_criterion(corpus["criterion_pair"])
    assert not c.ok and [w["pair"] for w in c.witnesses] == [(1, 2)]
    with pytest.raises(CriterionFailed) as exc:
        vnw_decompose(corpus["criterion_pair"])
    assert exc.value.witnesses[0]["pair"] == (1, 2)


def test_vnw_blocks(corpus, mixed_tuple):
    r = vnw_decompose(corpus["commuting_shifts"])
    assert r.ok and r.complete and r.block({1, 2}).dim == 36
    assert all(r.block(A).dim == 0 for A in (set(), {1}, {2}))
    r = vnw_decompose(mixed_tuple)
    n = mixed_tuple.space.block_dim(0)
    assert r.block({1, 2}).dim == n and equal(r.block(set()).subspace, w_block(mixed_tuple))
    assert r.block({1}).dim == r.block({2}).dim == 0
    assert r.block(set()).classifications == {1: Kind.UNITARY, 2: Kind.UNITARY}
    r = vnw_decompose(corpus["commuting_unitaries"])
    assert r.block(set()).dim == 3


def test_doubly_twisted_examples(rotation_pair, corpus):
    r = doubly_twisted_decompose(rotation_pair)
    assert r.ok and r.block({1, 2}).dim == rotation_pair.space.total_dim
    assert r.block({1, 2}).residuals["wandering_dim"] == 1
    r = doubly_twisted_decompose(corpus["shift_times_unitary"])
    assert r.block({1}).classifications == {1: Kind.SHIFT, 2: Kind.UNITARY}
    with pytest.raises(EngineError):
        doubly_twisted_decompose(zz())


def test_twisted_decompose_zz():
    r = twisted_decompose(zz())
    assert r.ok and r.complete
    assert all(r.block(A).dim == 0 for A in (set(), {1}, {2}))
    assert equal(r.block({1, 2}).subspace, Subspace.whole(zz().space))
    assert r.checks["weak_shift"]["ok"]


def test_twisted_decompose_commuting_shifts(corpus):
    r = twisted_decompose(corpus["commuting_shifts"])
    assert r.ok and r.block({1, 2}).dim == 36 and r.checks["weak_shift"]["ok"]


def test_twisted_decompose_rejects_untwisted(corpus):
    with pytest.raises(EngineError):
        twisted_decompose(corpus["criterion_pair"])


def test_twisted_decompose_zz_plus_unitary(corpus):
    r = twisted_decompose(corpus["zz_plus_unitary"])
    t = corpus["zz_plus_unitary"]
    assert r.ok and equal(r.block(set()).subspace, w_block(t))
    assert r.block({1, 2}).dim == t.space.block_dim(0)


def test_parallel_matches_serial(corpus):
    t = corpus["n3_mixed"]
    a = twisted_decompose(t, jobs=1).to_json(with_frames=True)
    b = twisted_decompose(t, jobs=3).to_json(with_frames=True)
    assert a == b


# --- classifiers -----------------------------------------------------------------

def test_twisted_shift_classifier(rotation_pair, mixed_tuple, corpus):
    v = is_twisted_shift(rotation_pair)
    assert v.ok and v.evidence["consistent"]
    assert not is_twisted_shift(mixed_tuple).ok
    assert is_twisted_shift(corpus["commuting_shifts"]).ok
    with pytest.raises(EngineError):
        is_twisted_shift(zz())


def test_weak_shift_classifier(rotation_pair, corpus):
    assert is_twisted_weak_shift(zz()).ok
    assert is_twisted_weak_shift(rotation_pair).ok
    assert not is_twisted_weak_shift(corpus["commuting_unitaries"]).ok
    ev = is_twisted_weak_shift(zz()).evidence
    assert ev["dims"]["E_{2}"] == 0 and ev["products"]["12"] is Kind.SHIFT


# --- maximality -------------------------------------------------------------------

def test_maximality_probe(corpus, mixed_tuple):
    t = corpus["shift_times_unitary"]
    H = block_space(t, {1})
    assert maximality_probe(t, {1}, H)
    # orbit of one wandering vector that is an eigenvector of V_2
    e0 = np.zeros(t.space.total_dim, complex)
    e0[0] = 1
    orbit = orthonormalize(np.stack([np.linalg.matrix_power(t.op(1).matrix, k) @ e0
                                     for k in range(7)], axis=1), t.space)
    assert orbit.dim == 7 and maximality_probe(t, {1}, orbit) and contained(orbit, H)
    assert maximality_probe(mixed_tuple, set(), w_block(mixed_tuple))
    with pytest.raises(EngineError):
        maximality_probe(t, set(), H)  # V_1 is not unitary there
