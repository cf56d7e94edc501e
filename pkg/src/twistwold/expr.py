"""Construction language for operators on a :class:`SpaceSpec`.

Expressions are evaluated against a space, so the same tuple can be rebuilt at
a larger or smaller truncation.  Only :class:`Literal` is tied to one
particular dimension.

JSON form: every node is an object with a ``"node"`` tag; complex numbers are
``[re, im]`` pairs and matrices are lists of rows of such pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from twistwold.graded import (
    BasisIndex, DimensionError, GradedOperator, SpaceSpec, adjoint, compose,
)


class ExprError(ValueError):
    pass


class NotRebuildable(ExprError):
    """A literal matrix was asked to live on a space of a different shape."""


def _unitary_residual(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))) if u.size else 0.0


def _check_unitary(u: np.ndarray, what: str, limit: float = 1e-12) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ExprError(f"{what}: expected a square matrix, got shape {u.shape}")
    res = _unitary_residual(u)
    if res >= limit:
        raise ExprError(f"{what}: not unitary (residual {res:.3e})")
    return u


def _blocks_or_all(space: SpaceSpec, blocks) -> tuple[int, ...]:
    if blocks is None:
        return tuple(range(len(space.blocks)))
    for b in blocks:
        if not 0 <= b < len(space.blocks):
            raise ExprError(f"block id {b} out of range")
    return tuple(blocks)


class OpExpr:
    def evaluate(self, space: SpaceSpec) -> GradedOperator:
        raise NotImplementedError

    def to_json(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Identity(OpExpr):
    blocks: tuple[int, ...] | None = None

    def evaluate(self, space):
        m = np.zeros((space.total_dim,) * 2, dtype=complex)
        for b in _blocks_or_all(space, self.blocks):
            s = space.block_slice(b)
            m[s, s] = np.eye(s.stop - s.start)
        return GradedOperator(space, m, 0, 0, 0, provenance=self)

    def to_json(self):
        out = {"node": "identity"}
        if self.blocks is not None:
            out["blocks"] = list(self.blocks)
        return out


@dataclass(frozen=True, eq=False)
class Mz(OpExpr):
    """Multiplication by ``z_var`` (1-based); top-degree monomials map to 0."""
    var: int
    blocks: tuple[int, ...] | None = None

    def evaluate(self, space):
        if not 1 <= self.var <= space.v:
            raise ExprError(f"variable index {self.var} out of range 1..{space.v}")
        blocks = _blocks_or_all(space, self.blocks)
        for b in blocks:
            if not space.blocks[b].graded:
                raise ExprError(f"mz on block {b} with D=0; mask it out with 'blocks'")
        n = space.total_dim
        m = np.zeros((n, n), dtype=complex)
        i = self.var - 1
        for col, bi in enumerate(space.basis):
            if bi.block not in blocks:
                continue
            if bi.k[i] < space.blocks[bi.block].D:
                k = list(bi.k)
                k[i] += 1
                m[space.index[BasisIndex(bi.block, tuple(k), bi.j)], col] = 1.0
        return GradedOperator(space, m, 1, 0, 1, provenance=self)

    def to_json(self):
        out = {"node": "mz", "var": self.var}
        if self.blocks is not None:
            out["blocks"] = list(self.blocks)
        return out


@dataclass(frozen=True, eq=False)
class Diag(OpExpr):
    """``z^k (x) eta  ->  z^k (x) U^{k_var} eta`` on the selected blocks."""
    var: int
    unitary: np.ndarray
    blocks: tuple[int, ...] | None = None

    def evaluate(self, space):
        if not 1 <= self.var <= space.v:
            raise ExprError(f"variable index {self.var} out of range 1..{space.v}")
        u = _check_unitary(self.unitary, "diag symbol")
        n = space.total_dim
        m = np.zeros((n, n), dtype=complex)
        for b in _blocks_or_all(space, self.blocks):
            blk = space.blocks[b]
            if blk.r != u.shape[0]:
                raise ExprError(f"diag symbol is {u.shape[0]}x{u.shape[0]} but block {b} has r={blk.r}")
            powers = [np.eye(blk.r, dtype=complex)]
            for _ in range(blk.D):
                powers.append(u @ powers[-1])
            start = space.offsets[b]
            stride = blk.r
            for pos in range(0, space.block_dim(b), stride):
                kj = space.basis[start + pos].k[self.var - 1]
                s = slice(start + pos, start + pos + stride)
                m[s, s] = powers[kj]
        return GradedOperator(space, m, 0, 0, 1, provenance=self)

    def to_json(self):
        out = {"node": "diag", "var": self.var, "unitary": matrix_to_json(self.unitary)}
        if self.blocks is not None:
            out["blocks"] = list(self.blocks)
        return out


@dataclass(frozen=True, eq=False)
class FiberUnitary(OpExpr):
    """``I (x) W`` on one block and zero elsewhere."""
    block: int
    unitary: np.ndarray

    def evaluate(self, space):
        (b,) = _blocks_or_all(space, (self.block,))
        w = _check_unitary(self.unitary, "fiber unitary")
        blk = space.blocks[b]
        if w.shape[0] != blk.r:
            raise ExprError(f"fiber unitary is {w.shape[0]}x{w.shape[0]} but block {b} has r={blk.r}")
        m = np.zeros((space.total_dim,) * 2, dtype=complex)
        s = space.block_slice(b)
        m[s, s] = np.kron(np.eye((blk.D + 1) ** space.v), w)
        return GradedOperator(space, m, 0, 0, 1, provenance=self)

    def to_json(self):
        return {"node": "fiber_unitary", "block": self.block, "unitary": matrix_to_json(self.unitary)}


@dataclass(frozen=True, eq=False)
class CrossBlock(OpExpr):
    """Map the degree-0 fiber of block ``src`` into the degree-0 fiber of ``dst``."""
    src: int
    dst: int
    matrix: np.ndarray

    def evaluate(self, space):
        _blocks_or_all(space, (self.src, self.dst))
        a = np.asarray(self.matrix, dtype=complex)
        rs, rd = space.blocks[self.src].r, space.blocks[self.dst].r
        if a.shape != (rd, rs):
            raise ExprError(f"cross_block matrix must be {rd}x{rs}, got {a.shape}")
        m = np.zeros((space.total_dim,) * 2, dtype=complex)
        zero = (0,) * space.v
        for j in range(rs):
            col = space.index[BasisIndex(self.src, zero, j)]
            for jj in range(rd):
                m[space.index[BasisIndex(self.dst, zero, jj)], col] = a[jj, j]
        return GradedOperator(space, m, 0, 0, 1, provenance=self)

    def to_json(self):
        return {"node": "cross_block", "src": self.src, "dst": self.dst,
                "matrix": matrix_to_json(self.matrix)}


@dataclass(frozen=True, eq=False)
class Literal(OpExpr):
    matrix: np.ndarray
    raise_by: int = 0
    lower_by: int = 0

    def evaluate(self, space):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (space.total_dim,) * 2:
            raise NotRebuildable(f"literal of shape {m.shape} on space of dim {space.total_dim}")
        return GradedOperator(space, m, self.raise_by, self.lower_by, 1, provenance=self)

    def to_json(self):
        return {"node": "literal", "matrix": matrix_to_json(self.matrix),
                "raise": self.raise_by, "lower": self.lower_by}


@dataclass(frozen=True, eq=False)
class Compose(OpExpr):
    factors: tuple[OpExpr, ...]

    def evaluate(self, space):
        if not self.factors:
            raise ExprError("compose needs at least one factor")
        return compose([f.evaluate(space) for f in self.factors])

    def to_json(self):
        return {"node": "compose", "factors": [f.to_json() for f in self.factors]}


@dataclass(frozen=True, eq=False)
class Adjoint(OpExpr):
    expr: OpExpr

    def evaluate(self, space):
        return adjoint(self.expr.evaluate(space))

    def to_json(self):
        return {"node": "adjoint", "expr": self.expr.to_json()}


@dataclass(frozen=True, eq=False)
class Scale(OpExpr):
    scalar: complex
    expr: OpExpr

    def evaluate(self, space):
        if abs(abs(self.scalar) - 1.0) > 1e-12:
            raise ExprError(f"scale factor {self.scalar} is not unimodular")
        op = self.expr.evaluate(space)
        return GradedOperator(space, self.scalar * op.matrix, op.raise_by, op.lower_by,
                              op.word_len, provenance=self)

    def to_json(self):
        return {"node": "scale", "scalar": [self.scalar.real, self.scalar.imag],
                "expr": self.expr.to_json()}


@dataclass(frozen=True, eq=False)
class Sum(OpExpr):
    """Sum of partial operators, e.g. a masked shift plus a cross-block map."""
    terms: tuple[OpExpr, ...]

    def evaluate(self, space):
        ops = [t.evaluate(space) for t in self.terms]
        return GradedOperator(space, sum(o.matrix for o in ops),
                              max(o.raise_by for o in ops), max(o.lower_by for o in ops),
                              max(o.word_len for o in ops), provenance=self)

    def to_json(self):
        return {"node": "sum", "terms": [t.to_json() for t in self.terms]}


@dataclass(frozen=True, eq=False)
class DSum(OpExpr):
    """Block-diagonal operator; each part is evaluated on the sub-space of its blocks."""
    parts: tuple[tuple[tuple[int, ...], OpExpr], ...]

    def evaluate(self, space):
        seen: set[int] = set()
        n = space.total_dim
        m = np.zeros((n, n), dtype=complex)
        ops = []
        for blocks, expr in self.parts:
            blocks = _blocks_or_all(space, blocks)
            if seen & set(blocks):
                raise ExprError("dsum parts overlap")
            seen |= set(blocks)
            sub = space.sub(blocks)
            op = expr.evaluate(sub)
            idx = np.concatenate([np.arange(space.offsets[b], space.offsets[b + 1]) for b in blocks])
            m[np.ix_(idx, idx)] = op.matrix
            ops.append(op)
        return GradedOperator(space, m, max(o.raise_by for o in ops), max(o.lower_by for o in ops),
                              max(o.word_len for o in ops), provenance=self)

    def to_json(self):
        return {"node": "dsum", "parts": [{"blocks": list(b), "expr": e.to_json()}
                                          for b, e in self.parts]}


# --- JSON -----------------------------------------------------------------

def complex_from_json(x) -> complex:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in x):
        return complex(x[0], x[1])
    raise ExprError(f"bad complex number {x!r}; expected [re, im]")


def matrix_from_json(rows) -> np.ndarray:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ExprError("matrix must be a non-empty list of rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ExprError("ragged matrix rows")
    return np.array([[complex_from_json(x) for x in r] for r in rows], dtype=complex)


def _num(x: float) -> float:
    x = float(x)
    return 0.0 if x == 0 else x


def matrix_to_json(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[_num(z.real), _num(z.imag)] for z in row] for row in m]


_FIELDS = {
    "identity": ({"node"}, {"blocks"}),
    "mz": ({"node", "var"}, {"blocks"}),
    "diag": ({"node", "var", "unitary"}, {"blocks"}),
    "fiber_unitary": ({"node", "block", "unitary"}, set()),
    "cross_block": ({"node", "src", "dst", "matrix"}, set()),
    "literal": ({"node", "matrix"}, {"raise", "lower"}),
    "compose": ({"node", "factors"}, set()),
    "adjoint": ({"node", "expr"}, set()),
    "scale": ({"node", "scalar", "expr"}, set()),
    "sum": ({"node", "terms"}, set()),
    "dsum": ({"node", "parts"}, set()),
}


def _int(x, what):
    if not isinstance(x, int) or isinstance(x, bool):
        raise ExprError(f"{what} must be an integer, got {x!r}")
    return x


def _blocks(d):
    if "blocks" not in d:
        return None
    if not isinstance(d["blocks"], list):
        raise ExprError("blocks must be a list of block ids")
    return tuple(_int(b, "block id") for b in d["blocks"])


def from_json(d) -> OpExpr:
    if not isinstance(d, dict) or "node" not in d:
        raise ExprError(f"expression must be an object with a 'node' tag, got {d!r}")
    tag = d["node"]
    if tag not in _FIELDS:
        raise ExprError(f"unknown node type {tag!r}")
    required, optional = _FIELDS[tag]
    missing = required - d.keys()
    extra = d.keys() - required - optional
    if missing:
        raise ExprError(f"{tag}: missing fields {sorted(missing)}")
    if extra:
        raise ExprError(f"{tag}: unknown fields {sorted(extra)}")
    if tag == "identity":
        return Identity(_blocks(d))
    if tag == "mz":
        return Mz(_int(d["var"], "var"), _blocks(d))
    if tag == "diag":
        return Diag(_int(d["var"], "var"), matrix_from_json(d["unitary"]), _blocks(d))
    if tag == "fiber_unitary":
        return FiberUnitary(_int(d["block"], "block"), matrix_from_json(d["unitary"]))
    if tag == "cross_block":
        return CrossBlock(_int(d["src"], "src"), _int(d["dst"], "dst"), matrix_from_json(d["matrix"]))
    if tag == "literal":
        return Literal(matrix_from_json(d["matrix"]), _int(d.get("raise", 0), "raise"),
                       _int(d.get("lower", 0), "lower"))
    if tag == "compose":
        return Compose(tuple(from_json(f) for f in _list(d["factors"], "factors")))
    if tag == "adjoint":
        return Adjoint(from_json(d["expr"]))
    if tag == "scale":
        return Scale(complex_from_json(d["scalar"]), from_json(d["expr"]))
    if tag == "sum":
        return Sum(tuple(from_json(t) for t in _list(d["terms"], "terms")))
    parts = []
    for p in _list(d["parts"], "parts"):
        if not isinstance(p, dict) or set(p) != {"blocks", "expr"}:
            raise ExprError("dsum part must be {'blocks': [...], 'expr': {...}}")
        parts.append((_blocks(p), from_json(p["expr"])))
    return DSum(tuple(parts))


def _list(x, what) -> Sequence:
    if not isinstance(x, list) or not x:
        raise ExprError(f"{what} must be a non-empty list")
    return x


def rebuild(op: GradedOperator, space: SpaceSpec) -> GradedOperator:
    """Re-evaluate ``op``'s construction on another truncation of the same space."""
    if op.provenance is None:
        raise NotRebuildable("operator has no construction record")
    return op.provenance.evaluate(space)


__all__ = [
    "OpExpr", "Identity", "Mz", "Diag", "FiberUnitary", "CrossBlock", "Literal", "Compose",
    "Adjoint", "Scale", "Sum", "DSum", "ExprError", "NotRebuildable", "from_json",
    "matrix_from_json", "matrix_to_json", "complex_from_json", "rebuild", "DimensionError",
]
