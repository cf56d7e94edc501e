"""Subspaces as orthonormal frames, and the lattice operations on them."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from twistwold.config import tol
from twistwold.graded import GradedOperator, SpaceSpec


@dataclass(frozen=True, eq=False)
class Subspace:
    space: SpaceSpec
    frame: np.ndarray
    certified_degree: dict[int, int] = field(default_factory=dict)
    tol_rank: float = 1e-12
    label: str = ""

    def __post_init__(self):
        f = np.asarray(self.frame, dtype=complex).reshape(self.space.total_dim, -1)
        f.setflags(write=False)
        object.__setattr__(self, "frame", f)
        if not self.certified_degree:
            object.__setattr__(self, "certified_degree", self.space.certified_degree(0))

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.frame.shape[0]

    @property
    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.conj().T

    def orthonormality_residual(self) -> float:
        if self.dim == 0:
            return 0.0
        g = self.frame.conj().T @ self.frame
        return float(np.max(np.abs(g - np.eye(self.dim))))

    def labelled(self, label: str) -> Subspace:
        return replace(self, label=label)

    def block_weight(self, b: int) -> float:
        return float(np.linalg.norm(self.frame[self.space.block_slice(b)]))

    def supported_blocks(self, eps: float = 1e-8) -> list[int]:
        return [b for b in range(len(self.space.blocks)) if self.block_weight(b) > eps]

    def degree_ok(self) -> bool:
        """No support on a graded block whose certified degree went negative."""
        return all(self.certified_degree.get(b, 0) >= 0 for b in self.supported_blocks()
                   if self.space.blocks[b].graded)

    @classmethod
    def zero(cls, space: SpaceSpec, label: str = "") -> Subspace:
        return cls(space, np.zeros((space.total_dim, 0), dtype=complex), label=label)

    @classmethod
    def whole(cls, space: SpaceSpec, label: str = "") -> Subspace:
        return cls(space, np.eye(space.total_dim, dtype=complex), label=label)

    @classmethod
    def coordinate(cls, space: SpaceSpec, mask: np.ndarray, label: str = "") -> Subspace:
        return cls(space, np.eye(space.total_dim, dtype=complex)[:, np.asarray(mask, bool)], label=label)


def _min_degree(*cds: dict[int, int]) -> dict[int, int]:
    keys = set().union(*cds)
    return {b: min(cd[b] for cd in cds if b in cd) for b in sorted(keys)}


def _rank(s: np.ndarray) -> int:
    if s.size == 0:
        return 0
    t = tol()
    return int(np.sum(s > t.rank_atol + t.rank_rtol * s[0]))


def orthonormalize(columns, space: SpaceSpec, certified_degree: dict[int, int] | None = None,
                   label: str = "") -> Subspace:
    """QR, then an SVD of the triangular factor to drop numerically dependent columns."""
    a = np.asarray(columns, dtype=complex).reshape(space.total_dim, -1)
    cd = certified_degree or space.certified_degree(0)
    if a.shape[1] == 0:
        return Subspace(space, a, cd, tol().rank_atol, label)
    q, r = np.linalg.qr(a, mode="reduced")
    u, s, _ = np.linalg.svd(r)
    k = _rank(s)
    return Subspace(space, q @ u[:, :k], cd, tol().rank_atol, label)


def _null_columns(m: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ker m (as columns)."""
    n = m.shape[1]
    if m.shape[0] == 0 or n == 0:
        return np.eye(n, dtype=complex)
    _, s, vh = np.linalg.svd(m, full_matrices=True)
    k = _rank(s)
    return vh[k:].conj().T


def kernel(op: GradedOperator, within: Subspace | None = None, label: str = "") -> Subspace:
    """``ker op``, or ``ker op ∩ within`` when a starting subspace is given."""
    cd = op.space.certified_degree(op.raise_by)
    if within is None:
        frame = _null_columns(op.matrix)
    else:
        if within.dim == 0:
            return replace(within, label=label)
        frame = within.frame @ _null_columns(op.matrix @ within.frame)
        cd = _min_degree(cd, within.certified_degree)
    return Subspace(op.space, frame, cd, tol().rank_atol, label)


def image(op: GradedOperator, S: Subspace, label: str = "") -> Subspace:
    cd = {b: d - op.raise_by for b, d in S.certified_degree.items()}
    return orthonormalize(op.matrix @ S.frame, S.space, cd, label)


def intersect(S: Subspace, T: Subspace, label: str = "") -> Subspace:
    """Common directions: singular vectors of ``S* T`` with singular value >= 1 - tol."""
    cd = _min_degree(S.certified_degree, T.certified_degree)
    if S.dim == 0 or T.dim == 0:
        return Subspace(S.space, np.zeros((S.ambient_dim, 0), complex), cd, S.tol_rank, label)
    u, s, vh = np.linalg.svd(S.frame.conj().T @ T.frame)
    k = int(np.sum(s >= 1.0 - tol().intersect))
    reps = 0.5 * (S.frame @ u[:, :k] + T.frame @ vh[:k].conj().T)
    return orthonormalize(reps, S.space, cd, label)


def complement(S: Subspace, label: str = "") -> Subspace:
    frame = _null_columns(S.frame.conj().T) if S.dim else np.eye(S.ambient_dim, dtype=complex)
    return Subspace(S.space, frame, S.certified_degree, S.tol_rank, label)


def span_sum(S: Subspace, T: Subspace, label: str = "") -> Subspace:
    return orthonormalize(np.hstack([S.frame, T.frame]), S.space,
                          _min_degree(S.certified_degree, T.certified_degree), label)


def principal_angles(S: Subspace, T: Subspace) -> list[float]:
    """Principal angles in radians, ascending; empty if either subspace is zero."""
    if S.dim == 0 or T.dim == 0:
        return []
    return sorted(float(a) for a in scipy.linalg.subspace_angles(S.frame, T.frame))


def equal(S: Subspace, T: Subspace) -> bool:
    if S.dim != T.dim:
        return False
    angles = principal_angles(S, T)
    return not angles or max(angles) < tol().angle


def contained(S: Subspace, T: Subspace) -> bool:
    """``S ⊆ T`` up to the angle tolerance."""
    if S.dim == 0:
        return True
    if S.dim > T.dim:
        return False
    resid = S.frame - T.frame @ (T.frame.conj().T @ S.frame)
    return float(np.linalg.norm(resid, 2)) < tol().angle


def cross_residual(S: Subspace, T: Subspace) -> float:
    """max |<s, t>| over frame columns; zero means orthogonal."""
    if S.dim == 0 or T.dim == 0:
        return 0.0
    return float(np.max(np.abs(S.frame.conj().T @ T.frame)))


def certified_part(S: Subspace, growth: int) -> Subspace:
    """Vectors of S supported on basis vectors that tolerate ``growth`` further raises."""
    mask = S.space.certified_mask(growth)
    if S.dim == 0 or mask.all():
        return S
    # sin of the angle to the coordinate subspace; matches intersect()'s cosine cut
    limit = np.sqrt(2.0 * tol().intersect)
    _, s, vh = np.linalg.svd(S.frame[~mask], full_matrices=True)
    s = np.concatenate([s, np.zeros(S.dim - s.size)]) if s.size < S.dim else s
    keep = vh[s <= limit].conj().T
    part = S.frame @ keep
    part[~mask] = 0.0
    return orthonormalize(part, S.space, S.certified_degree, S.label)


@dataclass(frozen=True)
class ReduceCheck:
    ok: bool
    residual: float


def invariance_residual(op: GradedOperator, S: Subspace, growth: int | None = None) -> float:
    """max over certified frame columns f of |(I - P_S) op f|."""
    cols = certified_part(S, op.raise_by if growth is None else growth).frame
    if cols.shape[1] == 0:
        return 0.0
    y = op.matrix @ cols
    y = y - S.frame @ (S.frame.conj().T @ y)
    return float(np.max(np.linalg.norm(y, axis=0)))


def reduces(op: GradedOperator, S: Subspace) -> ReduceCheck:
    growth = max(op.raise_by, op.lower_by)
    r = max(invariance_residual(op, S, growth), invariance_residual(op.H, S, growth))
    return ReduceCheck(r < tol().residual, r)


@dataclass(frozen=True)
class Stabilized:
    subspace: Subspace
    certified: bool
    steps: int
    stabilized: bool
    heuristic: bool = False


class NotInvariant(ValueError):
    pass


def stabilized_intersection(ops: list[GradedOperator], S: Subspace, budget: int | None = None,
                            allow_heuristic: bool = False, label: str = "") -> Stabilized:
    """Iterate ``G <- ∩_i op_i G`` from ``G = S`` until it stops changing.

    Stops early once the iterate is ``{0}``.  When the ops do not map S into
    itself the fixed point is only a heuristic; that raises unless
    ``allow_heuristic`` is set, in which case the result is flagged.
    """
    if budget is None:
        budget = sum(b.D + 1 for b in S.space.blocks) + 1
    if budget < 1:
        raise ValueError("budget must be >= 1")
    heuristic = any(invariance_residual(op, S) >= tol().residual for op in ops)
    if heuristic and not allow_heuristic:
        raise NotInvariant("operators do not map the starting subspace into itself")
    G = S
    for step in range(1, budget + 1):
        images = [image(op, G) for op in ops]
        nxt = images[0]
        for im in images[1:]:
            nxt = intersect(nxt, im)
        done = nxt.dim == 0 or equal(nxt, G)
        G = nxt
        if done:
            return Stabilized(G.labelled(label), G.degree_ok() and not heuristic, step, True, heuristic)
    return Stabilized(G.labelled(label), False, budget, False, heuristic)
