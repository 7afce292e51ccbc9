"""Graded nilpotent Lie algebras of step at most three.

Group elements are vectors of exponential coordinates of the first kind, so
the group law is the Baker-Campbell-Hausdorff series, which terminates after
the triple brackets when every degree lies in {-1, -2, -3}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_BCH_STEP = 3


@dataclass(frozen=True, eq=False)
class GradedNilpotentLieAlgebra:
    """Basis e_0..e_{d-1} with degrees and brackets [e_i, e_j] = sum_k c[i,j,k] e_k.

    Degrees are negative integers. Construction raises ``ValueError`` if the
    structure constants fail antisymmetry, Jacobi or grading; use
    :func:`validate` with ``check=False`` instances to inspect violations.
    """

    degrees: tuple[int, ...]
    structure_constants: np.ndarray
    name: str = ""
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        degrees = tuple(int(p) for p in self.degrees)
        c = np.array(self.structure_constants, dtype=float, copy=True)
        d = len(degrees)
        if d == 0:
            raise ValueError("algebra must have positive dimension")
        if c.shape != (d, d, d):
            raise ValueError(f"structure constants must have shape {(d, d, d)}, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("structure constants must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "structure_constants", c)
        if self.check:
            problems = validate(self)
            if problems:
                raise ValueError("invalid graded Lie algebra: " + "; ".join(problems))

    @property
    def dim(self) -> int:
        return len(self.degrees)

    @property
    def step(self) -> int:
        return max(abs(p) for p in self.degrees)

    @property
    def weights(self) -> np.ndarray:
        """|degree| of each basis vector."""
        return np.abs(np.array(self.degrees))

    def bracket(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.einsum("...i,...j,ijk->...k", x, y, self.structure_constants)

    def generators(self) -> list[int]:
        """Indices of the degree -1 basis vectors."""
        return [i for i, p in enumerate(self.degrees) if p == -1]

    def to_json(self) -> dict:
        brackets = []
        c = self.structure_constants
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                out = [[k, float(c[i, j, k])] for k in range(self.dim) if c[i, j, k] != 0]
                if out:
                    brackets.append([i, j, out])
        return {"degrees": list(self.degrees), "brackets": brackets}

    def same_as(self, other: "GradedNilpotentLieAlgebra", tol: float = 1e-12) -> bool:
        return (
            self.degrees == other.degrees
            and np.max(np.abs(self.structure_constants - other.structure_constants), initial=0.0) <= tol
        )


def from_brackets(degrees, brackets, name: str = "", check: bool = True) -> GradedNilpotentLieAlgebra:
    """Build an algebra from ``[(i, j, [(k, c), ...]), ...]``; [e_j, e_i] is filled in by antisymmetry."""
    d = len(degrees)
    c = np.zeros((d, d, d))
    for i, j, targets in brackets:
        for k, coef in targets:
            c[i, j, k] += coef
            c[j, i, k] -= coef
    return GradedNilpotentLieAlgebra(tuple(degrees), c, name=name, check=check)


def from_json(doc, name: str = "") -> GradedNilpotentLieAlgebra:
    if isinstance(doc, (str, Path)) and Path(doc).exists():
        doc = json.loads(Path(doc).read_text())
    elif isinstance(doc, str):
        doc = json.loads(doc)
    if set(doc) - {"degrees", "brackets", "name"}:
        raise ValueError(f"unknown algebra keys: {sorted(set(doc) - {'degrees', 'brackets', 'name'})}")
    return from_brackets(doc["degrees"], doc.get("brackets", []), name=doc.get("name", name))


def abelian(d: int) -> GradedNilpotentLieAlgebra:
    return GradedNilpotentLieAlgebra((-1,) * d, np.zeros((d, d, d)), name=f"abelian:{d}")


def heisenberg(k: int = 1) -> GradedNilpotentLieAlgebra:
    """Heisenberg algebra of dimension 2k+1 with [e_i, e_{k+i}] = e_{2k}."""
    brackets = [(i, k + i, [(2 * k, 1.0)]) for i in range(k)]
    return from_brackets([-1] * (2 * k) + [-2], brackets, name=f"heisenberg:{k}")


def carnot_235() -> GradedNilpotentLieAlgebra:
    """Free step-3 algebra on two generators: [e0,e1]=e2, [e0,e2]=e3, [e1,e2]=e4."""
    brackets = [(0, 1, [(2, 1.0)]), (0, 2, [(3, 1.0)]), (1, 2, [(4, 1.0)])]
    return from_brackets([-1, -1, -2, -3, -3], brackets, name="carnot235")


def by_name(name: str) -> GradedNilpotentLieAlgebra:
    kind, _, arg = name.partition(":")
    if kind == "abelian" and arg:
        return abelian(int(arg))
    if kind == "heisenberg":
        return heisenberg(int(arg) if arg else 1)
    if kind == "carnot235" and not arg:
        return carnot_235()
    raise ValueError(f"unknown algebra name {name!r}")


def load_algebra(spec) -> GradedNilpotentLieAlgebra:
    """Accept an algebra, a built-in name, a JSON document or a path to one."""
    if isinstance(spec, GradedNilpotentLieAlgebra):
        return spec
    if isinstance(spec, dict):
        return from_json(spec)
    if isinstance(spec, (str, Path)) and Path(spec).suffix == ".json":
        return from_json(Path(spec))
    return by_name(str(spec))


def validate(alg: GradedNilpotentLieAlgebra, tol: float = 1e-12) -> list[str]:
    """Return a list of violated invariants; empty means valid."""
    c = alg.structure_constants
    degrees = np.array(alg.degrees)
    problems = []
    if np.any(degrees >= 0):
        problems.append(f"degrees must be negative, got {alg.degrees}")
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    asym = c + c.transpose(1, 0, 2)
    for i, j, k in zip(*np.nonzero(np.abs(asym) > tol * scale)):
        if i <= j:
            problems.append(f"antisymmetry: c[{i}][{j}][{k}] + c[{j}][{i}][{k}] = {asym[i, j, k]:g}")
    # Jacobi: [e_i,[e_j,e_l]] + [e_j,[e_l,e_i]] + [e_l,[e_i,e_j]] = 0
    inner = np.einsum("jlm,imk->ijlk", c, c)
    jac = inner + inner.transpose(1, 2, 0, 3) + inner.transpose(2, 0, 1, 3)
    bad = np.argwhere(np.abs(jac) > tol * scale * scale)
    seen = set()
    for i, j, l, k in bad:
        key = tuple(sorted((int(i), int(j), int(l))))
        if key not in seen:
            seen.add(key)
            problems.append(f"jacobi: basis triple {key} gives {jac[i, j, l, k]:g} on e_{k}")
    flagged = set()
    for i, j, k in zip(*np.nonzero(c)):
        key = (min(i, j), max(i, j), k)
        if key not in flagged and degrees[k] != degrees[i] + degrees[j]:
            flagged.add(key)
            i, j = key[:2]
            problems.append(
                f"grading: [e_{i}, e_{j}] has e_{k} component but degrees "
                f"{degrees[i]} + {degrees[j]} != {degrees[k]}"
            )
    return problems


def homogeneous_dimension(alg: GradedNilpotentLieAlgebra) -> int:
    return int(sum(abs(p) for p in alg.degrees))


def bch_multiply(alg: GradedNilpotentLieAlgebra, g, h) -> np.ndarray:
    """Product of exp(g) exp(h) in exponential coordinates.

    Broadcasts over leading axes.
    """
    if alg.step > MAX_BCH_STEP:
        raise ValueError(f"exact BCH needs step <= {MAX_BCH_STEP}, algebra has step {alg.step}")
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    gh = alg.bracket(g, h)
    z = g + h + 0.5 * gh
    if alg.step >= 3:
        z = z + (alg.bracket(g, gh) - alg.bracket(h, gh)) / 12.0
    return z


def inverse(alg: GradedNilpotentLieAlgebra, g) -> np.ndarray:
    return -np.asarray(g, dtype=float)


def dilation_factors(alg: GradedNilpotentLieAlgebra, lam: float) -> np.ndarray:
    if lam == 0:
        raise ValueError("dilation parameter must be nonzero")
    return float(lam) ** alg.weights


def dilate(alg: GradedNilpotentLieAlgebra, lam: float, g) -> np.ndarray:
    return dilation_factors(alg, lam) * np.asarray(g, dtype=float)


def dilation_jacobian(alg: GradedNilpotentLieAlgebra, lam: float) -> float:
    """Jacobian determinant of the coordinate map of dilate(lam)."""
    return float(np.prod(dilation_factors(alg, lam)))
