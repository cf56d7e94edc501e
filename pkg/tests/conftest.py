import numpy as np
import pytest

from twistwold.graded import Block, SpaceSpec
from twistwold.models import dsum_tuple, finite_unitary_tuple, twisted_shift_tuple
from twistwold.scene import corpus_scene

DOUBLY_TWISTED_SCENES = ["commuting_shifts", "rotation_pair", "rotation_n3", "matrix_symbol",
                         "mixed_rotation", "commuting_unitaries", "shift_times_unitary", "n3_mixed"]


def random_unitary(n, rng):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def rotation_pair():
    return twisted_shift_tuple(SpaceSpec(2, (Block(6),)), {(2, 1): 1j}, name="rotation")


@pytest.fixture(scope="session")
def mixed_tuple():
    graded = twisted_shift_tuple(SpaceSpec(2, (Block(4),)), {(2, 1): 1j})
    W = finite_unitary_tuple([np.diag([1, 1j]), np.diag([-1, 1j])], v=2)
    return dsum_tuple([graded, W], name="mixed")


@pytest.fixture(scope="session")
def corpus():
    return {name: corpus_scene(name).tuple() for name in DOUBLY_TWISTED_SCENES
            + ["zz_pair", "zz_plus_unitary", "criterion_pair"]}
