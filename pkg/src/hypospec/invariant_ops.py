"""Left-invariant homogeneous differential operators as enveloping-algebra words.

An operator is a finite sum of terms X_{i_1} ... X_{i_k} (x) B where the X are
basis vectors of a graded algebra and B is a constant complex matrix from
the fibre of E to the fibre of F. Words are kept free: no normal ordering is
ever applied, so composition is concatenation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .carnot import GradedNilpotentLieAlgebra, load_algebra


def _word_weight(alg: GradedNilpotentLieAlgebra, word) -> int:
    return int(sum(abs(alg.degrees[i]) for i in word))


@dataclass(frozen=True, eq=False)
class HomogeneousOperator:
    """Sum of ``(word, block)`` terms of one common Heisenberg order.

    ``shape`` is (rows, cols) of every block, i.e. (dim F, dim E) for an
    operator E -> F. ``zero_order`` fixes the order of an operator without
    terms.
    """

    alg: GradedNilpotentLieAlgebra
    terms: tuple
    shape: tuple[int, int] = (1, 1)
    zero_order: int = 0

    def __post_init__(self):
        rows, cols = (int(s) for s in self.shape)
        clean = []
        weights = set()
        for word, block in self.terms:
            word = tuple(int(i) for i in word)
            if any(i < 0 or i >= self.alg.dim for i in word):
                raise ValueError(f"word {word} uses indices outside the algebra of dimension {self.alg.dim}")
            block = np.array(block, dtype=complex).reshape(rows, cols)
            block.setflags(write=False)
            clean.append((word, block))
            weights.add(_word_weight(self.alg, word))
        if len(weights) > 1:
            raise ValueError(f"operator is not homogeneous: term weights {sorted(weights)}")
        object.__setattr__(self, "terms", tuple(clean))
        object.__setattr__(self, "shape", (rows, cols))
        if weights:
            object.__setattr__(self, "zero_order", weights.pop())
        if self.zero_order < 0:
            raise ValueError("order must be nonnegative")

    @property
    def order(self) -> int:
        return self.zero_order

    def __add__(self, other: "HomogeneousOperator") -> "HomogeneousOperator":
        _check_same_algebra(self, other)
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        if self.terms and other.terms and self.order != other.order:
            raise ValueError(f"cannot add operators of orders {self.order} and {other.order}")
        order = self.order if self.terms else other.order
        return HomogeneousOperator(self.alg, self.terms + other.terms, self.shape, order).canonical()

    def __neg__(self) -> "HomogeneousOperator":
        return self.scaled(-1.0)

    def __sub__(self, other: "HomogeneousOperator") -> "HomogeneousOperator":
        return self + (-other)

    def __matmul__(self, other: "HomogeneousOperator") -> "HomogeneousOperator":
        return compose(self, other)

    def scaled(self, c: complex) -> "HomogeneousOperator":
        return HomogeneousOperator(self.alg, tuple((w, c * b) for w, b in self.terms), self.shape, self.order)

    def canonical(self, tol: float = 0.0) -> "HomogeneousOperator":
        """Merge repeated words, drop vanishing terms and sort by (length, word)."""
        merged: dict[tuple, np.ndarray] = {}
        for word, block in self.terms:
            merged[word] = merged.get(word, 0) + block
        terms = tuple(
            (w, merged[w]) for w in sorted(merged, key=lambda w: (len(w), w)) if np.max(np.abs(merged[w])) > tol
        )
        return HomogeneousOperator(self.alg, terms, self.shape, self.order)

    def equals(self, other: "HomogeneousOperator", tol: float = 1e-12) -> bool:
        if self.shape != other.shape or not self.alg.same_as(other.alg):
            return False
        diff = (self - other).canonical(tol)
        return not diff.terms

    def to_json(self) -> dict:
        terms = []
        for word, block in self.canonical().terms:
            entry = {"coeff": [1.0, 0.0], "word": list(word), "block": block.real.tolist()}
            if np.any(block.imag != 0):
                entry["block_imag"] = block.imag.tolist()
            terms.append(entry)
        return {"shape": list(self.shape), "order": self.order, "terms": terms}


def _check_same_algebra(a: HomogeneousOperator, b: HomogeneousOperator):
    if a.alg is not b.alg and not a.alg.same_as(b.alg):
        raise ValueError("operators live on different algebras")


def heisenberg_order(op: HomogeneousOperator) -> int:
    return op.order


def generator(alg: GradedNilpotentLieAlgebra, i: int, block=None) -> HomogeneousOperator:
    block = np.eye(1) if block is None else np.atleast_2d(block)
    return HomogeneousOperator(alg, (((i,), block),), block.shape)


def identity(alg: GradedNilpotentLieAlgebra, size: int = 1) -> HomogeneousOperator:
    return HomogeneousOperator(alg, (((), np.eye(size)),), (size, size))


def zero(alg: GradedNilpotentLieAlgebra, shape=(1, 1), order: int = 0) -> HomogeneousOperator:
    return HomogeneousOperator(alg, (), shape, order)


def sublaplacian(alg: GradedNilpotentLieAlgebra) -> HomogeneousOperator:
    """-(sum of squares of the degree -1 generators)."""
    gens = alg.generators()
    if not gens:
        raise ValueError("algebra has no degree -1 generators")
    return HomogeneousOperator(alg, tuple(((i, i), -np.eye(1)) for i in gens))


def compose(b: HomogeneousOperator, a: HomogeneousOperator) -> HomogeneousOperator:
    """The operator b after a; words concatenate, blocks multiply."""
    _check_same_algebra(a, b)
    if b.shape[1] != a.shape[0]:
        raise ValueError(f"cannot compose: {b.shape} after {a.shape}")
    terms = tuple((wb + wa, bb @ ba) for wb, bb in b.terms for wa, ba in a.terms)
    shape = (b.shape[0], a.shape[1])
    return HomogeneousOperator(b.alg, terms, shape, b.order + a.order).canonical()


def formal_adjoint(op: HomogeneousOperator) -> HomogeneousOperator:
    """Adjoint for the invariant density: reverse words, X -> -X, conjugate-transpose blocks."""
    terms = tuple((word[::-1], (-1) ** len(word) * block.conj().T) for word, block in op.terms)
    return HomogeneousOperator(op.alg, terms, (op.shape[1], op.shape[0]), op.order).canonical()


def power(op: HomogeneousOperator, s: int) -> HomogeneousOperator:
    if op.shape[0] != op.shape[1]:
        raise ValueError("only square operators have powers")
    if s < 0:
        raise ValueError("exponent must be nonnegative")
    out = identity(op.alg, op.shape[0])
    for _ in range(s):
        out = compose(op, out)
    return out


def heat_extension(op: HomogeneousOperator) -> HomogeneousOperator:
    """op + d/dt on the algebra extended by a central direction of degree -r."""
    if op.shape[0] != op.shape[1]:
        raise ValueError("heat extension needs a square operator")
    r = op.order
    if r < 1:
        raise ValueError("heat extension needs positive order")
    alg = op.alg
    d = alg.dim
    c = np.zeros((d + 1, d + 1, d + 1))
    c[:d, :d, :d] = alg.structure_constants
    ext = GradedNilpotentLieAlgebra(alg.degrees + (-r,), c, name=f"{alg.name}+dt")
    terms = op.terms + (((d,), np.eye(op.shape[0])),)
    return HomogeneousOperator(ext, terms, op.shape)


@dataclass(frozen=True, eq=False)
class ModelSequence:
    """Operators A_0: E_0 -> E_1, A_1: E_1 -> E_2, ... of positive orders."""

    alg: GradedNilpotentLieAlgebra
    operators: tuple

    def __post_init__(self):
        ops = tuple(self.operators)
        object.__setattr__(self, "operators", ops)
        if not ops:
            raise ValueError("model sequence needs at least one operator")
        for k, op in enumerate(ops):
            _check_same_algebra(ops[0], op)
            if op.order < 1:
                raise ValueError(f"operator {k} has order {op.order}, need >= 1")
            if k and op.shape[1] != ops[k - 1].shape[0]:
                raise ValueError(f"operator {k} has shape {op.shape}, cannot follow {ops[k - 1].shape}")

    @property
    def orders(self) -> list[int]:
        return [op.order for op in self.operators]


def minimal_exponents(r_prev: int, r_next: int) -> tuple[int, int, int]:
    """Smallest (s_prev, s_next, kappa) with r_prev s_prev = r_next s_next = kappa."""
    kappa = r_prev * r_next // math.gcd(r_prev, r_next)
    return kappa // r_prev, kappa // r_next, kappa


def rumin_seshadri(seq: ModelSequence, i: int, s) -> HomogeneousOperator:
    """(A_{i-1} A_{i-1}^*)^{s_{i-1}} + (A_i^* A_i)^{s_i} acting on E_i.

    ``s`` holds one exponent per operator of the sequence. Summands that would
    need an operator past either end of the sequence are omitted.
    """
    ops = seq.operators
    L = len(ops)
    s = [int(v) for v in s]
    if len(s) != L:
        raise ValueError(f"need {L} exponents, got {len(s)}")
    if any(v < 1 for v in s):
        raise ValueError("exponents must be positive integers")
    if not 0 <= i <= L:
        raise ValueError(f"index {i} outside 0..{L}")
    used = [k for k in (i - 1, i) if 0 <= k < L]
    kappas = {k: ops[k].order * s[k] for k in used}
    if len(set(kappas.values())) > 1:
        pairs = ", ".join(f"(r={ops[k].order}, s={s[k]})" for k in used)
        raise ValueError(f"exponent condition r_(i-1) s_(i-1) = r_i s_i violated by {pairs}")
    out = None
    if i - 1 >= 0:
        a = ops[i - 1]
        out = power(compose(a, formal_adjoint(a)), s[i - 1])
    if i < L:
        a = ops[i]
        term = power(compose(formal_adjoint(a), a), s[i])
        out = term if out is None else out + term
    return out


def operator_from_json(doc, alg: GradedNilpotentLieAlgebra) -> HomogeneousOperator:
    """Parse ``{"terms": [{"coeff": [re, im], "word": [...], "block": [[...]]}]}`` or a built-in name."""
    if isinstance(doc, str):
        if doc == "sublaplacian":
            return sublaplacian(alg)
        if doc == "heat_extension":
            return heat_extension(sublaplacian(alg))
        path = Path(doc)
        if not path.exists():
            raise ValueError(f"unknown operator {doc!r}")
        doc = json.loads(path.read_text())
    extra = set(doc) - {"terms", "shape", "order"}
    if extra:
        raise ValueError(f"unknown operator keys: {sorted(extra)}")
    terms = []
    shape = tuple(doc.get("shape", ()))
    for t in doc["terms"]:
        extra = set(t) - {"coeff", "word", "block", "block_imag"}
        if extra:
            raise ValueError(f"unknown term keys: {sorted(extra)}")
        re, im = t.get("coeff", [1.0, 0.0])
        block = np.array(t.get("block", [[1.0]]), dtype=complex)
        if "block_imag" in t:
            block = block + 1j * np.array(t["block_imag"], dtype=float)
        block = np.atleast_2d(block)
        if not shape:
            shape = block.shape
        terms.append((tuple(t["word"]), complex(re, im) * block))
    if not shape:
        shape = (1, 1)
    return HomogeneousOperator(alg, tuple(terms), shape, int(doc.get("order", 0))).canonical()


def load_operator(doc, alg) -> HomogeneousOperator:
    return operator_from_json(doc, load_algebra(alg))
