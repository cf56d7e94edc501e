"""Tuple-level machinery: twists, defect and wandering subspaces, decompositions.

Index sets ``A ⊆ {1..n}`` are ``frozenset``s of 1-based coordinates; reports
encode them as bitmasks (bit ``i-1`` set when ``i ∈ A``).
"""
from __future__ import annotations

import contextvars
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from twistwold.config import tol
from twistwold.expr import NotRebuildable, rebuild
from twistwold.graded import GradedOperator, adjoint, compose, identity, power
from twistwold.models import IsometryTuple, TwistFamily
from twistwold.subspace import (
    Subspace, certified_part, contained, cross_residual, complement, intersect,
    invariance_residual, kernel, orthonormalize, principal_angles, reduces, span_sum,
    stabilized_intersection,
)
from twistwold.subspace import _null_columns
from twistwold.wold import Kind, WoldResult, classify_restriction, wold_decompose


class EngineError(ValueError):
    """An engine's hypothesis does not hold for the given tuple."""


class CriterionFailed(EngineError):
    def __init__(self, witnesses):
        self.witnesses = witnesses
        super().__init__(f"unitary parts do not reduce the tuple at {[w['pair'] for w in witnesses]}")


class WanderingViolation(EngineError):
    pass


class Uncertified(EngineError):
    """The budget or truncation is too small to decide."""


# --- index sets -------------------------------------------------------------

def subsets(n: int) -> list[frozenset[int]]:
    """All subsets of ``{1..n}`` in bitmask order."""
    return [frozenset(i + 1 for i in range(n) if mask >> i & 1) for mask in range(2 ** n)]


def bitmask(A: Iterable[int]) -> int:
    return sum(1 << (i - 1) for i in A)


def _complement(A: frozenset[int], n: int) -> frozenset[int]:
    return frozenset(range(1, n + 1)) - A


def _pmap(fn: Callable, items: Sequence, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    # worker threads do not inherit context variables; carry tolerance overrides over
    ctx = contextvars.copy_context()
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda x: ctx.copy().run(fn, x), items))


def _columns(V: IsometryTuple, growth: int, within: Subspace | None) -> np.ndarray:
    if within is None:
        mask = V.space.certified_mask(growth)
        return np.eye(V.space.total_dim, dtype=complex)[:, mask]
    return certified_part(within, growth).frame


def _col_residual(m: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(m, axis=0))) if m.size else 0.0


def _growth(tup: IsometryTuple) -> int:
    return max(v.raise_by for v in tup.V)


def ambient_certified(tup: IsometryTuple) -> Subspace:
    """Coordinate subspace on which every single coordinate acts without truncation."""
    return Subspace.coordinate(tup.space, tup.space.certified_mask(_growth(tup)), "certified region")


def certified_dim(tup: IsometryTuple, S: Subspace) -> int:
    return certified_part(S, _growth(tup)).dim


# --- twists -----------------------------------------------------------------

def _twist_word(Vi: GradedOperator, Vj: GradedOperator) -> GradedOperator:
    return compose([adjoint(Vi), adjoint(Vj), Vi, Vj])


def derive_twist(tup: IsometryTuple) -> TwistFamily:
    """``U_ij = V_i* V_j* V_i V_j`` for ``i < j``.

    The word is evaluated on a truncation enlarged by the word's degree growth
    and compressed back, so the result is correct on the whole box.  Tuples
    built from literal matrices cannot be enlarged; their twist comes from the
    truncated word and is marked inexact.
    """
    n = tup.n
    guard = 2 * _growth(tup)
    big = tup.space.enlarged(guard)
    try:
        Vbig = [rebuild(v, big) for v in tup.V]
        idx = tup.space.embedding(big)
        exact = True
    except NotRebuildable:
        Vbig, idx, exact = None, None, False
    U = {}
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if exact:
                W = _twist_word(Vbig[i - 1], Vbig[j - 1]).matrix[np.ix_(idx, idx)]
                U[(i, j)] = GradedOperator(tup.space, W, 0, 0, 1)
            else:
                w = _twist_word(tup.op(i), tup.op(j))
                U[(i, j)] = GradedOperator(tup.space, w.matrix, w.raise_by, w.lower_by, w.word_len)
    return TwistFamily(n, U, derived=True, exact=exact)


def twist_of(tup: IsometryTuple) -> TwistFamily:
    return tup.twist if tup.twist is not None else derive_twist(tup)


@dataclass(frozen=True)
class RelationCheck:
    ok: bool
    residual: float
    relation_residual: float
    commutant_residual: float
    twist_residual: float = 0.0


def _commutant_residual(tup: IsometryTuple, twist: TwistFamily, within: Subspace | None) -> float:
    out = 0.0
    for k in range(1, tup.n + 1):
        Vk = tup.op(k)
        cols = _columns(tup, Vk.raise_by, within)
        for p in twist.pairs():
            U = twist.U[p].matrix
            out = max(out, _col_residual(Vk.matrix @ (U @ cols) - U @ (Vk.matrix @ cols)))
    return out


def _relation_check(tup, twist, within, word) -> RelationCheck:
    rel = 0.0
    for i in range(1, tup.n + 1):
        for j in range(1, tup.n + 1):
            if i == j:
                continue
            Vi, Vj = tup.op(i), tup.op(j)
            cols = _columns(tup, Vi.raise_by + Vj.raise_by + max(Vi.lower_by, Vj.lower_by), within)
            rel = max(rel, _col_residual(word(Vi.matrix, Vj.matrix, twist.get(i, j).matrix, cols)))
    com = _commutant_residual(tup, twist, within)
    tw = max(twist.unitarity_residual, twist.commutation_residual)
    lim = tol().residual
    return RelationCheck(rel < lim and com < lim and tw < tol().twist_soft, max(rel, com), rel, com, tw)


def check_twisted(tup: IsometryTuple, twist: TwistFamily | None = None,
                  within: Subspace | None = None) -> RelationCheck:
    """Residual of ``V_i V_j = U_ij V_j V_i`` and of ``V_k U_st = U_st V_k``."""
    def word(Vi, Vj, U, x):
        return Vi @ (Vj @ x) - U @ (Vj @ (Vi @ x))
    return _relation_check(tup, twist or twist_of(tup), within, word)


def check_doubly_twisted(tup: IsometryTuple, twist: TwistFamily | None = None,
                         within: Subspace | None = None) -> RelationCheck:
    """Residual of ``V_i* V_j = U_ij* V_j V_i*`` and of the commutant condition."""
    def word(Vi, Vj, U, x):
        return Vi.conj().T @ (Vj @ x) - U.conj().T @ (Vj @ (Vi.conj().T @ x))
    return _relation_check(tup, twist or twist_of(tup), within, word)


@dataclass(frozen=True)
class TwistMonomial:
    """Product of twist powers; negative exponents are adjoint powers."""
    exponents: Mapping[tuple[int, int], int]

    @classmethod
    def commutation(cls, n: int, i: int, k: Sequence[int]) -> TwistMonomial:
        """The monomial with ``V_i V^k = V^k V_i  eta(U)``: prod over j != i of U_ij^{k_j}."""
        ex = {}
        for j in range(1, n + 1):
            if j != i and k[j - 1]:
                ex[(i, j)] = int(k[j - 1])
        return cls(ex)

    def evaluate(self, twist: TwistFamily) -> np.ndarray:
        n = twist.U[twist.pairs()[0]].space.total_dim if twist.pairs() else 0
        out = np.eye(n, dtype=complex)
        for (i, j), p in sorted(self.exponents.items()):
            if p == 0:
                continue
            U = twist.get(i, j).matrix
            base = U if p > 0 else U.conj().T
            out = out @ np.linalg.matrix_power(base, abs(p))
        return out


def multi_power(tup: IsometryTuple, k: Sequence[int], coords: Sequence[int] | None = None) -> GradedOperator:
    """``V_{m_1}^{k_1} ... V_{m_p}^{k_p}`` over ``coords`` (default all, ascending)."""
    coords = list(range(1, tup.n + 1)) if coords is None else sorted(coords)
    factors = [power(tup.op(m), kk) for m, kk in zip(coords, k) if kk]
    return compose(factors) if factors else identity(tup.space)


@dataclass(frozen=True)
class CommutationCheck:
    ok: bool
    residual: float
    samples: list


def twist_commutation_check(tup: IsometryTuple, twist: TwistFamily | None = None, samples: int = 20,
                            budget: int | None = None, seed: int = 0,
                            pairs: Sequence[tuple[int, Sequence[int]]] | None = None) -> CommutationCheck:
    """Compare ``V_i V^k`` with ``V^k V_i eta_{i,k}(U)`` on certified basis vectors."""
    twist = twist or twist_of(tup)
    graded = [b.D for b in tup.space.blocks if b.graded]
    if budget is None:
        budget = max(min(graded) - 1, 0) if graded else 3
    if pairs is None:
        rng = np.random.default_rng(seed)
        pairs = []
        while len(pairs) < samples:
            i = int(rng.integers(1, tup.n + 1))
            k = rng.integers(0, budget + 1, size=tup.n)
            if k.sum() <= budget:
                pairs.append((i, tuple(int(x) for x in k)))
    worst = 0.0
    out = []
    for i, k in pairs:
        Vk = multi_power(tup, k)
        Vi = tup.op(i)
        eta = TwistMonomial.commutation(tup.n, i, k).evaluate(twist)
        cols = _columns(tup, Vk.raise_by + Vi.raise_by, None)
        r = _col_residual(Vi.matrix @ (Vk.matrix @ cols) - Vk.matrix @ (Vi.matrix @ (eta @ cols)))
        worst = max(worst, r)
        out.append({"i": i, "k": list(k), "residual": r, "columns": int(cols.shape[1])})
    return CommutationCheck(worst < tol().residual, worst, out)


# --- defect and wandering subspaces -----------------------------------------

def _name(prefix: str, A: frozenset[int]) -> str:
    return f"{prefix}{{{','.join(map(str, sorted(A)))}}}"


def defect_space(tup: IsometryTuple, A: Iterable[int], within: Subspace | None = None) -> Subspace:
    """``N_A``: intersection of ``ker V_i*`` over ``i ∈ A``; the whole space for ``A = ∅``."""
    A = frozenset(A)
    S = within if within is not None else Subspace.whole(tup.space)
    for i in sorted(A):
        S = kernel(adjoint(tup.op(i)), within=S)
    return S.labelled(_name("N_", A))


def defect_product_residual(tup: IsometryTuple, A: Iterable[int]) -> float:
    """``|P_{N_A} - prod_{i∈A} P_{N_i}|_max``; zero for doubly twisted tuples."""
    A = sorted(A)
    if not A:
        return 0.0
    prod = np.eye(tup.space.total_dim, dtype=complex)
    for i in A:
        prod = prod @ defect_space(tup, [i]).projector
    return float(np.max(np.abs(defect_space(tup, A).projector - prod)))


@dataclass(frozen=True, eq=False)
class Wandering:
    subspace: Subspace
    certified: bool
    budget: int
    stabilized: bool = True
    heuristic: bool = False
    steps: int = 0


def exponent_budget(tup: IsometryTuple) -> int:
    graded = [b.D for b in tup.space.blocks if b.graded]
    return max(graded) if graded else 1


def stabilize_budget(tup: IsometryTuple) -> int:
    return sum(b.D + 1 for b in tup.space.blocks) + 1


def weak_wandering(tup: IsometryTuple, A: Iterable[int], budget: int | None = None,
                   within: Subspace | None = None) -> Wandering:
    """``E_A``: common kernel of ``V_i* V_B^k`` over ``i ∈ A``, ``B ⊆ {i}^c``, ``k ∈ {0..K}^|B|``.

    Words are added budget by budget; the result is certified when the last
    budget increment left the subspace unchanged.
    """
    A = frozenset(A)
    n = tup.n
    E = within if within is not None else Subspace.whole(tup.space)
    if not A:
        return Wandering(E.labelled("E_{}"), True, 0)
    K_max = exponent_budget(tup) if budget is None else budget
    powers = {j: [np.eye(tup.space.total_dim, dtype=complex)] for j in range(1, n + 1)}
    for j in powers:
        for _ in range(K_max):
            powers[j].append(tup.op(j).matrix @ powers[j][-1])
    adj = {i: tup.op(i).matrix.conj().T for i in A}
    changed_last = True
    for K in range(K_max + 1):
        before = E.dim
        for i in sorted(A):
            others = [j for j in range(1, n + 1) if j != i]
            for size in range(len(others) + 1):
                for B in itertools.combinations(others, size):
                    if not B and K > 0:
                        continue
                    for k in itertools.product(range(K + 1), repeat=len(B)):
                        if B and max(k) != K:
                            continue
                        if E.dim == 0:
                            break
                        x = E.frame
                        for m, kk in sorted(zip(B, k), reverse=True):
                            x = powers[m][kk] @ x
                        x = adj[i] @ x
                        E = Subspace(E.space, E.frame @ _null_columns(x), E.certified_degree, E.tol_rank)
        changed_last = E.dim != before
    E = orthonormalize(E.frame, tup.space, E.certified_degree, _name("E_", A))
    return Wandering(E, not changed_last or E.dim == 0, K_max, stabilized=not changed_last or E.dim == 0)


def wandering(tup: IsometryTuple, A: Iterable[int], E: Wandering | None = None,
              budget: int | None = None, within: Subspace | None = None) -> Wandering:
    """``W_A``: the part of ``E_A`` on which every ``V_j``, ``j ∉ A``, is unitary."""
    A = frozenset(A)
    E = E or weak_wandering(tup, A, budget=budget, within=within)
    rest = sorted(_complement(A, tup.n))
    if not rest:
        return Wandering(E.subspace.labelled(_name("W_", A)), E.certified, E.budget, E.stabilized)
    st = stabilized_intersection([tup.op(j) for j in rest], E.subspace,
                                 budget or stabilize_budget(tup), allow_heuristic=True,
                                 label=_name("W_", A))
    return Wandering(st.subspace, E.certified and st.certified, E.budget,
                     E.stabilized and st.stabilized, st.heuristic, st.steps)


def orbit_summands(tup: IsometryTuple, A: Iterable[int], W: Subspace,
                   budget: int | None = None) -> list[tuple[tuple[int, ...], Subspace]]:
    """Nonzero ``V_A^k W`` for ``k ∈ {0..K}^|A|``."""
    A = sorted(A)
    K = exponent_budget(tup) if budget is None else budget
    if W.dim == 0:
        return []
    level = [((), W.frame)]
    for m in reversed(A):
        Vm = tup.op(m).matrix
        nxt = []
        for k, F in level:
            G = F
            for p in range(K + 1):
                if np.max(np.abs(G)) < tol().rank_atol:
                    break
                nxt.append(((p,) + k, G))
                G = Vm @ G
        level = nxt
    out = []
    for k, F in level:
        S = orthonormalize(F, tup.space, W.certified_degree)
        if S.dim:
            out.append((k, S))
    return out


def orbit_sum(tup: IsometryTuple, A: Iterable[int], W: Subspace, budget: int | None = None,
              label: str = "") -> tuple[Subspace, float]:
    """``⊕_k V_A^k W`` and the largest inner product between distinct summands."""
    parts = orbit_summands(tup, A, W, budget)
    if not parts:
        return Subspace.zero(tup.space, label), 0.0
    frames = [S.frame for _, S in parts]
    stacked = np.hstack(frames)
    gram = np.abs(stacked.conj().T @ stacked)
    owner = np.concatenate([np.full(f.shape[1], n) for n, f in enumerate(frames)])
    off = owner[:, None] != owner[None, :]
    worst = float(gram[off].max()) if off.any() else 0.0
    return orthonormalize(stacked, tup.space, W.certified_degree, label), worst


def block_space(tup: IsometryTuple, A: Iterable[int], W: Wandering | None = None,
                budget: int | None = None) -> Subspace:
    """``H_{V,A} = ⊕_k V_A^k W_A`` for a proper ``A``; ``W_∅`` itself when ``A = ∅``."""
    A = frozenset(A)
    if len(A) == tup.n:
        raise EngineError("block_space needs a proper subset; the last block is an orthocomplement")
    W = W or wandering(tup, A)
    if not A:
        return W.subspace.labelled("H_{}")
    S, worst = orbit_sum(tup, A, W.subspace, budget, _name("H_", A))
    if worst >= tol().orthogonality and W.certified:
        raise WanderingViolation(f"orbit summands of {_name('W_', A)} are not orthogonal "
                                 f"(max inner product {worst:.3e}); is the tuple twisted?")
    return S


# --- reports ----------------------------------------------------------------

def _r(x: float) -> float:
    # rounded so reports do not depend on the last bits of BLAS reductions
    return float(f"{x:.3e}")


def frame_to_json(S: Subspace) -> list:
    return [[[_r(z.real) + 0.0, _r(z.imag) + 0.0] for z in col] for col in S.frame.T]


@dataclass(eq=False)
class BlockEntry:
    A: frozenset[int]
    subspace: Subspace
    certified: bool
    certified_dim: int
    classifications: dict[int, Kind | None]
    reducing_residual: float
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.subspace.dim

    def to_json(self, with_frames: bool = False) -> dict:
        out = {
            "A": bitmask(self.A),
            "members": sorted(self.A),
            "label": self.subspace.label,
            "dim": self.dim,
            "certified": self.certified,
            "certified_dim": self.certified_dim,
            "classifications": {str(i): (k.value if k is not None else None)
                                for i, k in sorted(self.classifications.items())},
            "residuals": {"reducing": _r(self.reducing_residual),
                          **{k: _r(v) for k, v in sorted(self.residuals.items())}},
        }
        if with_frames:
            out["certified_degree"] = {str(b): d for b, d in sorted(self.subspace.certified_degree.items())}
            out["frame"] = frame_to_json(self.subspace)
        return out


@dataclass(eq=False)
class DecompositionReport:
    mode: str
    n: int
    blocks: list[BlockEntry]
    ambient_certified_dim: int
    orthogonality: float
    checks: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    budgets: dict = field(default_factory=dict)

    def block(self, A: Iterable[int]) -> BlockEntry:
        A = frozenset(A)
        for b in self.blocks:
            if b.A == A:
                return b
        raise KeyError(sorted(A))

    @property
    def certified(self) -> bool:
        return all(b.certified for b in self.blocks)

    @property
    def certified_dim_total(self) -> int:
        return sum(b.certified_dim for b in self.blocks)

    @property
    def complete(self) -> bool:
        return self.certified_dim_total == self.ambient_certified_dim

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self, with_frames: bool = False) -> dict:
        t = tol()
        return {
            "mode": self.mode,
            "n": self.n,
            "ok": self.ok,
            "certified": self.certified,
            "failures": list(self.failures),
            "ambient_certified_dim": self.ambient_certified_dim,
            "certified_dim_total": self.certified_dim_total,
            "complete": self.complete,
            "orthogonality": _r(self.orthogonality),
            "checks": _jsonable(self.checks),
            "budgets": dict(self.budgets),
            "tolerances": {k: getattr(t, k) for k in t.__dataclass_fields__},
            "blocks": [b.to_json(with_frames) for b in self.blocks],
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Kind):
        return x.value
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        return _r(float(x))
    if isinstance(x, (int, np.integer)):
        return int(x)
    return x


def _classify_block(tup: IsometryTuple, S: Subspace, budget: int | None):
    red = 0.0
    kinds: dict[int, Kind | None] = {}
    for i in range(1, tup.n + 1):
        chk = reduces(tup.op(i), S)
        red = max(red, chk.residual)
        kinds[i] = classify_restriction(tup.op(i), S, budget=budget) if chk.ok else None
    return red, kinds


def _expected_failures(entry: BlockEntry, n: int, residual_block: bool) -> list[str]:
    name = entry.subspace.label or _name("H_", entry.A)
    out = []
    if entry.reducing_residual >= tol().residual:
        out.append(f"{name}: does not reduce the tuple (residual {entry.reducing_residual:.3e})")
    if entry.dim == 0 or residual_block:
        return out
    for i, k in entry.classifications.items():
        want = Kind.SHIFT if i in entry.A else Kind.UNITARY
        if k is not None and k is not Kind.UNCERTIFIED and k is not want:
            out.append(f"{name}: V_{i} restricted is {k.value}, expected {want.value}")
    return out


def _assemble(tup, mode, entries, checks, budgets, residual_A=None) -> DecompositionReport:
    entries = sorted(entries, key=lambda e: bitmask(e.A))
    orth = 0.0
    for a in range(len(entries)):
        for b in range(a + 1, len(entries)):
            orth = max(orth, cross_residual(entries[a].subspace, entries[b].subspace))
    failures = []
    for e in entries:
        # properties of an unstabilized block are not evidence either way
        if e.certified:
            failures += _expected_failures(e, tup.n, e.A == residual_A)
    if orth >= tol().orthogonality and all(e.certified for e in entries):
        failures.append(f"blocks are not mutually orthogonal (max inner product {orth:.3e})")
    for key, val in checks.items():
        if isinstance(val, dict) and val.get("ok") is False and val.get("certified", True):
            failures.append(f"check failed: {key}")
    rep = DecompositionReport(mode, tup.n, entries, ambient_certified(tup).dim, orth,
                              checks, failures, budgets)
    return rep


def _entry(tup, A, S, certified, budget, residuals=None) -> BlockEntry:
    red, kinds = _classify_block(tup, S, budget)
    cert = certified and all(k is not Kind.UNCERTIFIED for k in kinds.values())
    return BlockEntry(A, S, cert, certified_dim(tup, S), kinds, red, residuals or {})


def _budgets(tup, budget):
    return {"exponent": budget or exponent_budget(tup), "stabilize": budget or stabilize_budget(tup)}


# --- von Neumann-Wold criterion and decomposition ---------------------------

@dataclass(eq=False)
class CriterionResult:
    ok: bool
    verdict: str
    witnesses: list[dict]
    wold: list[WoldResult]

    def to_json(self) -> dict:
        return {"ok": self.ok, "verdict": self.verdict,
                "witnesses": [{"pair": list(w["pair"]), "residual": _r(w["residual"])}
                              for w in self.witnesses],
                "unitary_dims": [w.unitary_part.dim for w in self.wold],
                "wold_certified": [w.certified for w in self.wold]}


def vnw_criterion(tup: IsometryTuple, budget: int | None = None, jobs: int = 1) -> CriterionResult:
    """Do the unitary parts of all ``V_i`` reduce every ``V_j``?"""
    m_max = budget or stabilize_budget(tup)
    wolds = _pmap(lambda v: wold_decompose(v, m_max), list(tup.V), jobs)
    if not all(w.certified for w in wolds):
        # unstabilized parts are not the unitary parts; testing them proves nothing
        return CriterionResult(False, "Uncertified", [], wolds)
    witnesses = []
    for i, w in enumerate(wolds, start=1):
        for j in range(1, tup.n + 1):
            chk = reduces(tup.op(j), w.unitary_part)
            if not chk.ok:
                witnesses.append({"pair": (i, j), "residual": chk.residual})
    if witnesses:
        return CriterionResult(False, "Fails", witnesses, wolds)
    return CriterionResult(True, "Holds", [], wolds)


def vnw_decompose(tup: IsometryTuple, budget: int | None = None, jobs: int = 1,
                  criterion: CriterionResult | None = None) -> DecompositionReport:
    """``H_A`` = shift parts of ``V_i`` (``i ∈ A``) ∩ unitary parts of ``V_j`` (``j ∉ A``)."""
    crit = criterion or vnw_criterion(tup, budget, jobs)
    if crit.witnesses:
        raise CriterionFailed(crit.witnesses)
    if crit.verdict == "Uncertified":
        raise Uncertified("Wold decompositions did not stabilize within the budget")

    def one(A):
        S = Subspace.whole(tup.space)
        for i, w in enumerate(crit.wold, start=1):
            S = intersect(S, w.shift_part if i in A else w.unitary_part)
            if S.dim == 0:
                break
        cert = all(w.certified for w in crit.wold)
        return _entry(tup, A, S.labelled(_name("H_", A)), cert, budget)

    entries = _pmap(one, subsets(tup.n), jobs)
    return _assemble(tup, "vnw", entries, {"criterion": crit.to_json()}, _budgets(tup, budget))


# --- doubly twisted decomposition -------------------------------------------

def _angle(S: Subspace, T: Subspace) -> float:
    if S.dim != T.dim:
        return float(np.pi / 2)
    a = principal_angles(S, T)
    return max(a) if a else 0.0


def doubly_twisted_decompose(tup: IsometryTuple, twist: TwistFamily | None = None,
                             budget: int | None = None, jobs: int = 1,
                             cross_check: bool = True) -> DecompositionReport:
    """``H_A = ⊕_k V_A^k (∩_l V_{A^c}^l N_A)``, cross-checked against the Wold-part blocks."""
    twist = twist or twist_of(tup)
    dchk = check_doubly_twisted(tup, twist)
    if not dchk.ok:
        raise EngineError(f"tuple is not doubly twisted (residual {dchk.residual:.3e})")
    vnw = None
    if cross_check:
        try:
            vnw = vnw_decompose(tup, budget, jobs)
        except CriterionFailed:
            vnw = None

    def one(A):
        N = defect_space(tup, A)
        W = wandering(tup, A, Wandering(N, True, 0), budget=budget)
        if A:
            S, worst = orbit_sum(tup, A, W.subspace, budget, _name("H_", A))
            if worst >= tol().orthogonality:
                raise WanderingViolation(f"orbit summands of {_name('W_', A)} overlap ({worst:.3e})")
        else:
            S = W.subspace.labelled("H_{}")
        res = {"wandering_dim": float(W.subspace.dim)}
        if vnw is not None:
            res["vnw_angle"] = _angle(S, vnw.block(A).subspace)
        return _entry(tup, A, S, W.certified, budget, res)

    entries = _pmap(one, subsets(tup.n), jobs)
    checks = {"doubly_twisted": {"ok": dchk.ok, "residual": dchk.residual},
              "twist": {"ok": twist.valid, "unitarity": twist.unitarity_residual,
                        "commutation": twist.commutation_residual, "exact": twist.exact}}
    if vnw is not None:
        worst = max(e.residuals["vnw_angle"] for e in entries)
        checks["oracle_equivalence"] = {"ok": worst < tol().angle, "max_angle": worst}
    return _assemble(tup, "doubly", entries, checks, _budgets(tup, budget))


# --- shift classifiers ------------------------------------------------------

@dataclass(eq=False)
class ShiftVerdict:
    ok: bool
    evidence: dict
    certified: bool = True

    def to_json(self) -> dict:
        return {"ok": self.ok, "certified": self.certified, "evidence": _jsonable(self.evidence)}


def _kind_on(op: GradedOperator, S: Subspace, budget, invariant_only=True) -> Kind:
    if S.dim == 0:
        return Kind.SHIFT
    return classify_restriction(op, S, invariant_only=invariant_only, budget=budget)


def is_twisted_shift(tup: IsometryTuple, budget: int | None = None) -> ShiftVerdict:
    """Each ``V_i`` is a shift on ``N_{{i}^c}`` and every product ``V_j V_k`` is a shift.

    For comparison the evidence also classifies each ``V_i`` on the whole space;
    the two verdicts should agree.
    """
    chk = check_doubly_twisted(tup)
    if not chk.ok:
        raise EngineError(f"tuple is not doubly twisted (residual {chk.residual:.3e})")
    n = tup.n
    budget = budget or stabilize_budget(tup)
    evidence: dict = {"restricted": {}, "products": {}, "direct": {}}
    whole = Subspace.whole(tup.space)
    for i in range(1, n + 1):
        N = defect_space(tup, _complement(frozenset([i]), n))
        evidence["restricted"][str(i)] = _kind_on(tup.op(i), N, budget)
        evidence["direct"][str(i)] = _kind_on(tup.op(i), whole, budget, invariant_only=False)
    for j in range(1, n + 1):
        for k in range(1, n + 1):
            if j != k:
                evidence["products"][f"{j}{k}"] = _kind_on(tup.op(j) @ tup.op(k), whole, budget)
    kinds = list(evidence["restricted"].values()) + list(evidence["products"].values())
    ok = all(k is Kind.SHIFT for k in kinds)
    direct = all(k is Kind.SHIFT for k in evidence["direct"].values())
    evidence["consistent"] = ok == direct
    cert = all(k is not Kind.UNCERTIFIED for k in kinds)
    return ShiftVerdict(ok and cert, evidence, cert)


def is_twisted_weak_shift(tup: IsometryTuple, within: Subspace | None = None,
                          budget: int | None = None) -> ShiftVerdict:
    """``V_i`` is a shift on ``E_{{i}^c}`` and ``V_j V_k`` is a shift on ``E_{{j,k}^c}``.

    With ``within`` the weak wandering subspaces are taken inside that
    (reducing) subspace, which is how the residual block is tested.
    """
    n = tup.n
    exponent = budget or exponent_budget(tup)
    budget = budget or stabilize_budget(tup)
    evidence: dict = {"restricted": {}, "products": {}, "dims": {}}

    def kind(op, E: Wandering, name):
        S = E.subspace
        if not E.certified:
            return Kind.UNCERTIFIED
        r = invariance_residual(op, S)
        if r >= tol().residual:
            raise EngineError(f"{S.label} is not invariant under {name} (residual {r:.3e}); "
                              f"is the tuple twisted?")
        return _kind_on(op, S, budget)

    for i in range(1, n + 1):
        E = weak_wandering(tup, _complement(frozenset([i]), n), budget=exponent, within=within)
        evidence["dims"][E.subspace.label] = E.subspace.dim
        evidence["restricted"][str(i)] = kind(tup.op(i), E, f"V_{i}")
    for j in range(1, n + 1):
        for k in range(1, n + 1):
            if j == k:
                continue
            E = weak_wandering(tup, _complement(frozenset([j, k]), n), budget=exponent, within=within)
            evidence["dims"][E.subspace.label] = E.subspace.dim
            evidence["products"][f"{j}{k}"] = kind(tup.op(j) @ tup.op(k), E, f"V_{j}V_{k}")
    kinds = list(evidence["restricted"].values()) + list(evidence["products"].values())
    cert = all(k is not Kind.UNCERTIFIED for k in kinds)
    return ShiftVerdict(all(k is Kind.SHIFT for k in kinds) and cert, evidence, cert)


# --- twisted decomposition --------------------------------------------------

def twisted_decompose(tup: IsometryTuple, twist: TwistFamily | None = None,
                      budget: int | None = None, jobs: int = 1) -> DecompositionReport:
    """Blocks ``H_{V,A} = ⊕_k V_A^k W_A`` for proper ``A``; the last block is what is left.

    Every block must reduce the tuple, proper blocks must carry the
    shift/unitary pattern of ``A`` and be doubly twisted, and the leftover
    block must be a twisted weak shift.  Failures are listed in the report.
    """
    twist = twist or twist_of(tup)
    tchk = check_twisted(tup, twist)
    if not tchk.ok:
        raise EngineError(f"tuple is not twisted (residual {tchk.residual:.3e})")
    n = tup.n
    full = frozenset(range(1, n + 1))

    def one(A):
        W = wandering(tup, A, budget=budget)
        S = block_space(tup, A, W, budget)
        d = check_doubly_twisted(tup, twist, within=S)
        res = {"wandering_dim": float(W.subspace.dim), "doubly_twisted": d.residual}
        return _entry(tup, A, S, W.certified and not W.heuristic, budget, res), d

    out = _pmap(one, [A for A in subsets(n) if A != full], jobs)
    entries = [e for e, _ in out]
    failures_dt = [e.subspace.label for e, d in out if e.certified and not d.ok]
    proper = Subspace.zero(tup.space)
    for e in entries:
        proper = span_sum(proper, e.subspace)
    rest = complement(proper, _name("H_", full))
    if all(e.certified for e in entries):
        weak = is_twisted_weak_shift(tup, within=rest, budget=budget)
    else:
        # the leftover of unstabilized blocks is not the residual block
        weak = ShiftVerdict(False, {"reason": "proper blocks are uncertified"}, certified=False)
    last = _entry(tup, full, rest, all(e.certified for e in entries) and weak.certified, budget)
    checks = {"twisted": {"ok": tchk.ok, "residual": tchk.residual},
              "twist": {"ok": twist.valid, "unitarity": twist.unitarity_residual,
                        "commutation": twist.commutation_residual, "exact": twist.exact},
              "proper_blocks_doubly_twisted": {"ok": not failures_dt, "failing": failures_dt},
              "weak_shift": weak.to_json()}
    rep = _assemble(tup, "twisted", entries + [last], checks, _budgets(tup, budget), residual_A=full)
    return rep


def maximality_probe(tup: IsometryTuple, A: Iterable[int], K: Subspace,
                     budget: int | None = None) -> bool:
    """Is a candidate ``K`` with the properties of ``H_{V,A}`` contained in it?"""
    A = frozenset(A)
    if len(A) == tup.n:
        raise EngineError("maximality is stated for proper subsets only")
    problems = []
    for i in range(1, tup.n + 1):
        chk = reduces(tup.op(i), K)
        if not chk.ok:
            problems.append(f"K does not reduce V_{i} (residual {chk.residual:.3e})")
    if not problems and K.dim:
        for i in range(1, tup.n + 1):
            want = Kind.SHIFT if i in A else Kind.UNITARY
            got = classify_restriction(tup.op(i), K, budget=budget)
            if got is not want:
                problems.append(f"V_{i} on K is {got.value}, expected {want.value}")
        d = check_doubly_twisted(tup, within=K)
        if not d.ok:
            problems.append(f"restriction to K is not doubly twisted (residual {d.residual:.3e})")
    if problems:
        raise EngineError("; ".join(problems))
    return contained(K, block_space(tup, A, budget=budget))
