"""Model isometries: coordinate shifts, diagonal operators, twisted shift tuples."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from twistwold.config import tol
from twistwold.expr import (
    Compose, DSum, Diag, ExprError, FiberUnitary, Mz, _check_unitary,
)
from twistwold.graded import (
    Block, GradedOperator, SpaceSpec, adjoint, is_isometry_certified,
)


def mz(space: SpaceSpec, i: int, blocks: Sequence[int] | None = None) -> GradedOperator:
    return Mz(i, None if blocks is None else tuple(blocks)).evaluate(space)


def diag_symbol(space: SpaceSpec, j: int, U, blocks: Sequence[int] | None = None) -> GradedOperator:
    return Diag(j, np.asarray(U, dtype=complex), None if blocks is None else tuple(blocks)).evaluate(space)


def fiber_unitary(space: SpaceSpec, block: int, W) -> GradedOperator:
    return FiberUnitary(block, np.asarray(W, dtype=complex)).evaluate(space)


def _max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class TwistFamily:
    """Commuting unitaries ``U[(i, j)]`` for ``i < j`` (1-based); ``U_ji = U_ij*``.

    ``exact`` records whether the matrices were obtained with a guard band
    (so they are correct on the whole truncation) rather than from the
    truncated words alone.
    """
    n: int
    U: Mapping[tuple[int, int], GradedOperator]
    derived: bool = False
    exact: bool = True

    def __post_init__(self):
        for i in range(1, self.n + 1):
            for j in range(i + 1, self.n + 1):
                if (i, j) not in self.U:
                    raise ValueError(f"twist is missing U[{i},{j}]")

    def get(self, i: int, j: int) -> GradedOperator:
        if i == j:
            raise ValueError("twist is only defined for i != j")
        return self.U[(i, j)] if i < j else adjoint(self.U[(j, i)])

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.U)

    @cached_property
    def unitarity_residual(self) -> float:
        out = 0.0
        for u in self.U.values():
            m = u.matrix
            eye = np.eye(m.shape[0])
            out = max(out, _max_abs(m.conj().T @ m - eye), _max_abs(m @ m.conj().T - eye))
        return out

    @cached_property
    def commutation_residual(self) -> float:
        mats = [self.U[p].matrix for p in self.pairs()]
        out = 0.0
        for a in range(len(mats)):
            for b in range(a + 1, len(mats)):
                out = max(out, _max_abs(mats[a] @ mats[b] - mats[b] @ mats[a]))
        return out

    @property
    def valid(self) -> bool:
        return self.unitarity_residual < tol().unitary and self.commutation_residual < tol().unitary

    @classmethod
    def identity(cls, space: SpaceSpec, n: int) -> TwistFamily:
        from twistwold.graded import identity
        e = identity(space)
        return cls(n, {(i, j): e for i in range(1, n + 1) for j in range(i + 1, n + 1)})


@dataclass(frozen=True, eq=False)
class IsometryTuple:
    space: SpaceSpec
    V: tuple[GradedOperator, ...]
    twist: TwistFamily | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "V", tuple(self.V))
        if not self.V:
            raise ValueError("tuple needs at least one operator")
        if any(op.space != self.space for op in self.V):
            raise ValueError("all operators must act on the tuple's space")
        if self.twist is not None and self.twist.n != self.n:
            raise ValueError(f"twist arity {self.twist.n} does not match tuple arity {self.n}")

    @property
    def n(self) -> int:
        return len(self.V)

    def op(self, i: int) -> GradedOperator:
        """1-based access, matching the index convention of twists."""
        return self.V[i - 1]

    @cached_property
    def isometry_residuals(self) -> list[float]:
        return [is_isometry_certified(v).residual for v in self.V]

    @property
    def all_isometries(self) -> bool:
        return all(r < tol().isometry for r in self.isometry_residuals)

    @cached_property
    def flags(self) -> dict:
        """Twisted / doubly twisted verdicts against the attached (or derived) twist."""
        from twistwold.twisted import check_doubly_twisted, check_twisted, derive_twist
        tw = self.twist or derive_twist(self)
        t = check_twisted(self, tw)
        d = check_doubly_twisted(self, tw)
        return {"twisted": t.ok, "twisted_residual": t.residual,
                "doubly_twisted": d.ok, "doubly_twisted_residual": d.residual}

    def with_twist(self, twist: TwistFamily | None) -> IsometryTuple:
        return IsometryTuple(self.space, self.V, twist, self.name)

    def rebuilt(self, space: SpaceSpec) -> IsometryTuple:
        """The same construction evaluated on another truncation; the twist is re-derived."""
        from twistwold.expr import rebuild
        from twistwold.twisted import derive_twist
        t = IsometryTuple(space, tuple(rebuild(v, space) for v in self.V), None, self.name)
        return t.with_twist(derive_twist(t)) if self.twist is not None else t


def _as_symbol(u, r: int) -> np.ndarray:
    a = np.asarray(u, dtype=complex)
    if a.ndim == 0:
        a = a * np.eye(r)
    return _check_unitary(a, "twist symbol")


def twisted_shift_tuple(space: SpaceSpec, symbols: Mapping[tuple[int, int], object],
                        name: str = "") -> IsometryTuple:
    """``V_1 = M_{z_1}``, ``V_i = M_{z_i} D_1[U_{i1}] ... D_{i-1}[U_{i,i-1}]``.

    ``symbols`` maps ``(i, l)`` with ``l < i`` to a unitary on the fiber (or a
    unimodular scalar); missing pairs default to the identity.
    """
    n = space.v
    if n < 1:
        raise ValueError("twisted shift tuple needs v >= 1")
    rs = {blk.r for blk in space.blocks}
    if len(rs) != 1:
        raise ValueError("all blocks must share one fiber dimension")
    r = rs.pop()
    if any(not blk.graded for blk in space.blocks):
        raise ValueError("twisted shift tuple needs graded blocks only")
    for (i, l) in symbols:
        if not (1 <= l < i <= n):
            raise ValueError(f"symbol index ({i}, {l}) must satisfy 1 <= l < i <= v = {n}")
    syms = {(i, l): _as_symbol(symbols.get((i, l), 1.0), r)
            for i in range(2, n + 1) for l in range(1, i)}
    mats = list(syms.values())
    for a in range(len(mats)):
        for b in range(a + 1, len(mats)):
            if _max_abs(mats[a] @ mats[b] - mats[b] @ mats[a]) >= tol().unitary:
                raise ValueError("twist symbols do not commute")
    exprs = [Mz(1)]
    for i in range(2, n + 1):
        exprs.append(Compose((Mz(i),) + tuple(Diag(l, syms[(i, l)]) for l in range(1, i))))
    from twistwold.twisted import derive_twist
    t = IsometryTuple(space, tuple(e.evaluate(space) for e in exprs), None, name)
    return t.with_twist(derive_twist(t))


def dsum_tuple(tuples: Sequence[IsometryTuple], name: str = "") -> IsometryTuple:
    """Block-diagonal direct sum; blocks are concatenated in the given order."""
    if not tuples:
        raise ValueError("need at least one summand")
    if len(tuples) == 1:
        return tuples[0]
    n = tuples[0].n
    if any(t.n != n for t in tuples):
        raise ExprError("dsum_tuple: summands have different arities")
    v = tuples[0].space.v
    if any(t.space.v != v for t in tuples):
        raise ExprError("dsum_tuple: summands have different variable counts")
    blocks: list[Block] = []
    ids = []
    for t in tuples:
        ids.append(tuple(range(len(blocks), len(blocks) + len(t.space.blocks))))
        blocks.extend(t.space.blocks)
    space = SpaceSpec(v, tuple(blocks))

    def block_diag(ops: Sequence[GradedOperator]) -> GradedOperator:
        if all(o.provenance is not None for o in ops):
            return DSum(tuple((b, o.provenance) for b, o in zip(ids, ops))).evaluate(space)
        m = np.zeros((space.total_dim,) * 2, dtype=complex)
        for b, o in zip(ids, ops):
            s = slice(space.offsets[b[0]], space.offsets[b[-1] + 1])
            m[s, s] = o.matrix
        return GradedOperator(space, m, max(o.raise_by for o in ops), max(o.lower_by for o in ops),
                              max(o.word_len for o in ops))

    V = tuple(block_diag([t.V[i] for t in tuples]) for i in range(n))
    twist = None
    if all(t.twist is not None for t in tuples):
        twist = TwistFamily(n, {p: block_diag([t.twist.U[p] for t in tuples]) for p in tuples[0].twist.pairs()},
                            derived=all(t.twist.derived for t in tuples),
                            exact=all(t.twist.exact for t in tuples))
    return IsometryTuple(space, V, twist, name)


def finite_unitary_tuple(unitaries: Sequence, v: int = 0, name: str = "") -> IsometryTuple:
    """Tuple of finite unitaries on a single ``D = 0`` block."""
    mats = [np.asarray(u, dtype=complex) for u in unitaries]
    space = SpaceSpec(v, (Block(0, mats[0].shape[0]),))
    V = tuple(fiber_unitary(space, 0, m) for m in mats)
    from twistwold.twisted import derive_twist
    t = IsometryTuple(space, V, None, name)
    return t.with_twist(derive_twist(t))


__all__ = ["mz", "diag_symbol", "fiber_unitary", "TwistFamily", "IsometryTuple",
           "twisted_shift_tuple", "dsum_tuple", "finite_unitary_tuple"]
