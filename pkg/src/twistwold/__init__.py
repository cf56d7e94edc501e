"""Wold-type decompositions for tuples of isometries on truncated polydisc Hardy models."""
from twistwold.config import Tolerances, override, tol
from twistwold.graded import Block, GradedOperator, SpaceSpec
from twistwold.models import IsometryTuple, TwistFamily, dsum_tuple, finite_unitary_tuple, twisted_shift_tuple
from twistwold.scene import corpus_scene, load_scene, parse_scene
from twistwold.subspace import Subspace
from twistwold.twisted import (
    derive_twist, doubly_twisted_decompose, is_twisted_shift, is_twisted_weak_shift,
    twisted_decompose, vnw_criterion, vnw_decompose,
)
from twistwold.wold import Kind, wold_decompose

__version__ = "0.1.0"
