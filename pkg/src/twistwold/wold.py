"""von Neumann-Wold decomposition of a single truncated isometry."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from twistwold.config import tol
from twistwold.graded import GradedOperator, adjoint, is_isometry_certified
from twistwold.subspace import (
    Subspace, cross_residual, equal, image, invariance_residual, kernel, orthonormalize,
    reduces, stabilized_intersection,
)


class NotAnIsometry(ValueError):
    pass


class NotReducing(ValueError):
    pass


class Kind(str, enum.Enum):
    SHIFT = "Shift"
    UNITARY = "Unitary"
    MIXED = "Mixed"
    UNCERTIFIED = "Uncertified"


def _require_isometry(V: GradedOperator) -> None:
    chk = is_isometry_certified(V)
    if not chk.ok:
        raise NotAnIsometry(f"operator is not an isometry on its certified region "
                            f"(residual {chk.residual:.3e})")


def _default_m_max(V: GradedOperator) -> int:
    # operators that feed one block into another can chain through every block
    return sum(b.D + 1 for b in V.space.blocks)


@dataclass(frozen=True, eq=False)
class Projection:
    matrix: np.ndarray
    steps: int
    stabilized: bool


def unitary_projection(V: GradedOperator, m_max: int | None = None) -> Projection:
    """Limit of ``V^m V*^m``; stops when two iterates agree or the iterate vanishes."""
    _require_isometry(V)
    m_max = _default_m_max(V) if m_max is None else m_max
    A = V.matrix
    n = A.shape[0]
    prev = np.eye(n, dtype=complex)
    power = np.eye(n, dtype=complex)
    for m in range(1, m_max + 1):
        power = A @ power
        cur = power @ power.conj().T
        if np.max(np.abs(cur - prev)) < tol().stabilize or np.max(np.abs(cur)) < tol().stabilize:
            return Projection(cur, m, True)
        prev = cur
    return Projection(prev, m_max, False)


def shift_projection(V: GradedOperator, m_max: int | None = None) -> Projection:
    """``sum_m V^m P_{ker V*} V*^m`` for ``m = 0..m_max``."""
    _require_isometry(V)
    m_max = _default_m_max(V) if m_max is None else m_max
    K = kernel(adjoint(V)).frame
    A = V.matrix
    total = np.zeros_like(A)
    cur = K
    steps = m_max
    stabilized = False
    for m in range(m_max + 1):
        total += cur @ cur.conj().T
        cur = A @ cur
        if cur.size == 0 or np.max(np.abs(cur)) < tol().stabilize:
            steps, stabilized = m + 1, True
            break
    return Projection(total, steps, stabilized)


@dataclass(frozen=True, eq=False)
class WoldResult:
    shift_part: Subspace
    unitary_part: Subspace
    stabilization_steps: int
    certified: bool
    completeness_residual: float
    orthogonality_residual: float


def _range_of_projection(P: np.ndarray, space, label: str) -> Subspace:
    # eigenvalues of a projector cluster at 0 and 1
    w, vec = np.linalg.eigh(0.5 * (P + P.conj().T))
    return orthonormalize(vec[:, w > 0.5], space, label=label)


def wold_decompose(V: GradedOperator, m_max: int | None = None) -> WoldResult:
    Pu = unitary_projection(V, m_max)
    Ps = shift_projection(V, m_max)
    space = V.space
    mask = space.certified_mask(V.raise_by)
    completeness = float(np.max(np.abs((Ps.matrix + Pu.matrix - np.eye(space.total_dim))[:, mask]))) \
        if mask.any() else 0.0
    shift = _range_of_projection(Ps.matrix, space, "shift part")
    unitary = _range_of_projection(Pu.matrix, space, "unitary part")
    orth = cross_residual(shift, unitary)
    certified = Pu.stabilized and completeness < tol().residual and orth < tol().isometry
    return WoldResult(shift, unitary, Pu.steps, certified, completeness, orth)


def classify_restriction(V: GradedOperator, S: Subspace, invariant_only: bool = False,
                         budget: int | None = None) -> Kind:
    """Shift / Unitary / Mixed type of ``V|_S``.

    ``S`` must reduce ``V``; with ``invariant_only`` it is enough that
    ``V S ⊆ S``, which is all the weak-shift conditions need.
    """
    if invariant_only:
        r = invariance_residual(V, S)
        if r >= tol().residual:
            raise NotReducing(f"subspace is not invariant (residual {r:.3e})")
    else:
        chk = reduces(V, S)
        if not chk.ok:
            raise NotReducing(f"subspace does not reduce the operator (residual {chk.residual:.3e})")
    if S.dim == 0:
        return Kind.SHIFT
    st = stabilized_intersection([V], S, budget)
    if not st.stabilized:
        return Kind.UNCERTIFIED
    if st.subspace.dim == 0:
        return Kind.SHIFT if st.certified else Kind.UNCERTIFIED
    VVs = V.matrix @ V.matrix.conj().T
    coisometric = float(np.max(np.abs((VVs - np.eye(S.ambient_dim)) @ S.frame))) < tol().residual
    if coisometric and equal(image(V, S), S):
        return Kind.UNITARY
    return Kind.MIXED
