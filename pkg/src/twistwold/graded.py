"""Truncated graded Hilbert spaces and operators on them.

A space is a direct sum of blocks.  Each block is the box truncation
``{0..D}^v`` of the monomial basis of the Hardy space over the polydisc,
tensored with a finite fiber ``C^r``.  Blocks with ``D == 0`` hold finite
unitary summands and are never subject to truncation error.

Every operator records how far it can raise the per-block degree
(``raise_by``).  A truncated product applied to a vector whose max degree is
at most ``D_b - raise_by`` in each graded block agrees with the untruncated
operator; this guard band is what "certified" means throughout the package.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from twistwold.config import tol


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    D: int
    r: int = 1

    def __post_init__(self):
        if self.D < 0:
            raise ValueError(f"degree cap must be >= 0, got {self.D}")
        if self.r < 1:
            raise ValueError(f"fiber dimension must be >= 1, got {self.r}")

    @property
    def graded(self) -> bool:
        return self.D > 0


@dataclass(frozen=True)
class BasisIndex:
    block: int
    k: tuple[int, ...]
    j: int


@dataclass(frozen=True)
class SpaceSpec:
    v: int
    blocks: tuple[Block, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(
            b if isinstance(b, Block) else Block(**b) for b in self.blocks))
        if self.v < 0:
            raise ValueError(f"variable count must be >= 0, got {self.v}")
        if not self.blocks:
            raise ValueError("space needs at least one block")
        cap = tol().dim_cap
        if self.total_dim > cap:
            raise DimensionError(f"total dimension {self.total_dim} exceeds cap {cap}")

    def block_dim(self, b: int) -> int:
        blk = self.blocks[b]
        return (blk.D + 1) ** self.v * blk.r

    @property
    def total_dim(self) -> int:
        return sum(self.block_dim(b) for b in range(len(self.blocks)))

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for b in range(len(self.blocks)):
            out.append(out[-1] + self.block_dim(b))
        return tuple(out)

    def block_slice(self, b: int) -> slice:
        return slice(self.offsets[b], self.offsets[b + 1])

    @cached_property
    def basis(self) -> tuple[BasisIndex, ...]:
        out = []
        for b, blk in enumerate(self.blocks):
            for k in itertools.product(range(blk.D + 1), repeat=self.v):
                for j in range(blk.r):
                    out.append(BasisIndex(b, k, j))
        return tuple(out)

    @cached_property
    def index(self) -> dict[BasisIndex, int]:
        return {bi: n for n, bi in enumerate(self.basis)}

    @cached_property
    def exponents(self) -> np.ndarray:
        """``total_dim x v`` integer array of multi-indices."""
        arr = np.array([bi.k for bi in self.basis], dtype=np.int64)
        return arr.reshape(self.total_dim, self.v)

    @cached_property
    def block_of(self) -> np.ndarray:
        return np.array([bi.block for bi in self.basis], dtype=np.int64)

    @cached_property
    def degree(self) -> np.ndarray:
        """Per-basis-vector max_i k_i (0 when v == 0)."""
        if self.v == 0:
            return np.zeros(self.total_dim, dtype=np.int64)
        return self.exponents.max(axis=1)

    @cached_property
    def cap_of(self) -> np.ndarray:
        return np.array([self.blocks[b].D for b in self.block_of], dtype=np.int64)

    @cached_property
    def graded_mask(self) -> np.ndarray:
        return self.cap_of > 0

    def certified_mask(self, growth: int) -> np.ndarray:
        """Basis vectors whose degree leaves room for ``growth`` more raises."""
        return (~self.graded_mask) | (self.degree <= self.cap_of - growth)

    def certified_degree(self, growth: int) -> dict[int, int]:
        return {b: blk.D - growth for b, blk in enumerate(self.blocks) if blk.graded}

    def with_caps(self, caps: dict[int, int]) -> SpaceSpec:
        return SpaceSpec(self.v, tuple(
            Block(caps.get(b, blk.D), blk.r) for b, blk in enumerate(self.blocks)))

    def enlarged(self, guard: int) -> SpaceSpec:
        """Same space with every graded block's cap raised by ``guard``."""
        return self.with_caps({b: blk.D + guard for b, blk in enumerate(self.blocks) if blk.graded})

    def regraded(self, D: int) -> SpaceSpec:
        """Same space with every graded block's cap set to ``D``."""
        return self.with_caps({b: D for b, blk in enumerate(self.blocks) if blk.graded})

    def sub(self, block_ids: Sequence[int]) -> SpaceSpec:
        return SpaceSpec(self.v, tuple(self.blocks[b] for b in block_ids))

    def embedding(self, other: SpaceSpec) -> np.ndarray:
        """Positions of this space's basis inside ``other`` (same v, caps >= ours)."""
        if other.v != self.v or len(other.blocks) != len(self.blocks):
            raise DimensionError("spaces are not comparable")
        return np.array([other.index[bi] for bi in self.basis], dtype=np.int64)

    def to_json(self) -> dict[str, Any]:
        return {"v": self.v, "blocks": [{"D": b.D, "r": b.r} for b in self.blocks]}


def build_space(spec: SpaceSpec) -> tuple[BasisIndex, ...]:
    return spec.basis


@dataclass(frozen=True, eq=False)
class StateVector:
    space: SpaceSpec
    coefficients: np.ndarray
    certified: bool = True

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape != (self.space.total_dim,):
            raise DimensionError(f"vector of length {c.shape} on space of dim {self.space.total_dim}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def basis_vector(cls, space: SpaceSpec, block: int, k: Sequence[int], j: int = 0) -> StateVector:
        c = np.zeros(space.total_dim, dtype=complex)
        c[space.index[BasisIndex(block, tuple(k), j)]] = 1.0
        return cls(space, c)

    @cached_property
    def max_degree(self) -> dict[int, int]:
        """Per-block max degree over the support; -1 for blocks without support."""
        support = np.abs(self.coefficients) > 1e-14
        out = {}
        for b in range(len(self.space.blocks)):
            sel = support & (self.space.block_of == b)
            out[b] = int(self.space.degree[sel].max()) if sel.any() else -1
        return out

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))


@dataclass(frozen=True, eq=False)
class GradedOperator:
    space: SpaceSpec
    matrix: np.ndarray
    raise_by: int = 0
    lower_by: int = 0
    word_len: int = 1
    provenance: Any = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise DimensionError(f"matrix shape {m.shape} does not match dim {n}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def H(self) -> GradedOperator:
        return adjoint(self)

    def __matmul__(self, other: GradedOperator) -> GradedOperator:
        return compose([self, other])

    def certified_degree(self) -> dict[int, int]:
        return self.space.certified_degree(self.raise_by)


def apply(op: GradedOperator, x: StateVector) -> StateVector:
    if op.space != x.space:
        raise DimensionError("operator and vector live on different spaces")
    y = op.matrix @ x.coefficients
    ok = x.certified and all(
        d < 0 or d + op.raise_by <= op.space.blocks[b].D
        for b, d in x.max_degree.items() if op.space.blocks[b].graded)
    return StateVector(op.space, y, certified=ok)


def compose(ops: Sequence[GradedOperator]) -> GradedOperator:
    """Product in listed order: ``compose([A, B])`` is ``A @ B``."""
    if not ops:
        raise ValueError("compose needs at least one operator")
    if len(ops) == 1:
        return ops[0]
    space = ops[0].space
    if any(o.space != space for o in ops):
        raise DimensionError("compose: operators live on different spaces")
    m = ops[0].matrix
    for o in ops[1:]:
        m = m @ o.matrix
    prov = None
    if all(o.provenance is not None for o in ops):
        from twistwold.expr import Compose
        prov = Compose(tuple(o.provenance for o in ops))
    return GradedOperator(
        space, m,
        raise_by=sum(o.raise_by for o in ops),
        lower_by=sum(o.lower_by for o in ops),
        word_len=sum(o.word_len for o in ops),
        provenance=prov,
    )


def adjoint(op: GradedOperator) -> GradedOperator:
    prov = None
    if op.provenance is not None:
        from twistwold.expr import Adjoint
        prov = op.provenance.expr if isinstance(op.provenance, Adjoint) else Adjoint(op.provenance)
    return GradedOperator(op.space, op.matrix.conj().T, raise_by=op.lower_by,
                          lower_by=op.raise_by, word_len=op.word_len, provenance=prov)


def power(op: GradedOperator, m: int) -> GradedOperator:
    if m < 0:
        raise ValueError("negative power")
    if m == 0:
        return identity(op.space)
    return compose([op] * m)


def identity(space: SpaceSpec) -> GradedOperator:
    from twistwold.expr import Identity
    return GradedOperator(space, np.eye(space.total_dim), 0, 0, 0, provenance=Identity())


@dataclass(frozen=True)
class IsometryCheck:
    ok: bool
    residual: float
    certified_degree: dict[int, int] = field(default_factory=dict)


def is_isometry_certified(op: GradedOperator) -> IsometryCheck:
    """Compare ``|op x|`` with ``|x|`` over the certified basis vectors."""
    mask = op.space.certified_mask(op.raise_by)
    norms = np.linalg.norm(op.matrix[:, mask], axis=0)
    residual = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    return IsometryCheck(residual < tol().isometry, residual, op.certified_degree())
