"""Finite-difference discretization on flat tori and the Heisenberg nilmanifold.

The Heisenberg group uses the law

    (x, y, z)(x', y', z') = (x + x', y + y', z + z' + (x y' - y x') / 2)

and the lattice of points (a, b, c) with a, b integers and c - ab/2 an
integer, so [0, 1)^3 is a fundamental domain of volume 1. Left-invariant
functions on the quotient satisfy f(x+1, y, z+y/2) = f(x, y+1, z-x/2) = f.
The left-invariant fields are X = dx - (y/2) dz, Y = dy + (x/2) dz, Z = dz.

Each generator is discretized along its own flow p -> p exp(sX): a centered
second difference for every pair of repeated letters in a word and a
centered first difference for an unpaired letter. On the Heisenberg grid the
flow of X moves z by -y h/2 (and the lattice identification adds -y/2 when
x wraps), which is applied exactly with a spectral shift in z. Fourier modes
exp(2 pi i m z) decouple, giving one magnetic fibre per frequency m.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .carnot import abelian, heisenberg
from .invariant_ops import HomogeneousOperator, sublaplacian

TRUST_FRACTION = 0.1
DEFECT_LIMIT = 1e-6


@dataclass(frozen=True)
class QuotientGrid:
    """Uniform grid on a fundamental domain.

    ``manifold`` is "torus", "heisenberg" (full 3D grid, spectral in z) or
    "heisenberg_fiber" (2D grid for a single centre frequency ``frequency``).
    """

    manifold: str
    resolution: tuple[int, ...]
    spacing: tuple[float, ...]
    frequency: float = 0.0

    def __post_init__(self):
        if self.manifold not in ("torus", "heisenberg", "heisenberg_fiber"):
            raise ValueError(f"unknown manifold {self.manifold!r}")
        if len(self.resolution) != len(self.spacing):
            raise ValueError("resolution and spacing must have equal length")
        fd_dirs = self.resolution[:2] if self.manifold == "heisenberg" else self.resolution
        if any(n < 4 for n in fd_dirs):
            raise ValueError(f"resolution must be >= 4 per finite-difference direction, got {self.resolution}")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("spacing must be positive")

    @classmethod
    def torus(cls, d: int, N: int) -> "QuotientGrid":
        if d not in (1, 2, 3):
            raise ValueError("torus dimension must be 1, 2 or 3")
        return cls("torus", (N,) * d, (1.0 / N,) * d)

    @classmethod
    def heisenberg(cls, N: int, m_max: int) -> "QuotientGrid":
        Nz = 2 * m_max + 1
        return cls("heisenberg", (N, N, Nz), (1.0 / N, 1.0 / N, 1.0 / Nz))

    @classmethod
    def heisenberg_fiber(cls, N: int, m: float) -> "QuotientGrid":
        return cls("heisenberg_fiber", (N, N), (1.0 / N, 1.0 / N), float(m))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def volume_weight(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod([n * h for n, h in zip(self.resolution, self.spacing)]))

    @property
    def h(self) -> float:
        return self.spacing[0]

    def trust_cutoff(self) -> float:
        """Eigenvalues above this are excluded from fits.

        Lattice dispersion limits the grid to 0.1/h^2; a fibered Heisenberg
        spectrum truncated at |m| <= m_max is also incomplete above the
        bottom 2 pi (m_max + 1) of the first missing fibre.
        """
        cut = TRUST_FRACTION / self.h**2
        if self.manifold == "heisenberg":
            m_max = (self.resolution[2] - 1) // 2
            cut = min(cut, 2 * math.pi * (m_max + 1))
        return cut

    def to_json(self) -> dict:
        return {
            "manifold": self.manifold,
            "resolution": list(self.resolution),
            "spacing": list(self.spacing),
            "frequency": self.frequency,
            "volume_weight": self.volume_weight,
            "volume": self.volume,
        }


@dataclass(eq=False)
class DiscretizedOperator:
    matrix: sp.csr_matrix
    grid: QuotientGrid
    continuum_order: int
    label: str
    block_size: int = 1
    symmetrization_defect: float = 0.0
    flux_defect: float = 0.0
    reliable: bool = True
    notes: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermitian_defect(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(abs(diff).max()) if diff.nnz else 0.0

    def norm_max(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def constant_defect(self) -> float:
        """||M 1|| / (||M||_max sqrt(dim)), which vanishes when constants are in the kernel."""
        ones = np.ones(self.matrix.shape[1])
        return float(np.linalg.norm(self.matrix @ ones) / (max(self.norm_max(), 1e-300) * math.sqrt(len(ones))))

    def export_coo(self, path) -> Path:
        """Write ``row col re im`` lines (0-based) plus a JSON grid sidecar."""
        path = Path(path)
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with path.open("w") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for k in order:
                v = complex(coo.data[k])
                fh.write(f"{coo.row[k]} {coo.col[k]} {v.real!r} {v.imag!r}\n")
        sidecar = path.with_suffix(path.suffix + ".json")
        meta = {
            "grid": self.grid.to_json(),
            "label": self.label,
            "continuum_order": self.continuum_order,
            "block_size": self.block_size,
            "symmetrization_defect": self.symmetrization_defect,
            "flux_defect": self.flux_defect,
        }
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path


def load_coo(path) -> sp.csr_matrix:
    """Read a matrix written by :meth:`DiscretizedOperator.export_coo`."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].lstrip("#").split()
    rows, cols = int(header[0]), int(header[1])
    data = np.loadtxt(lines[1:], ndmin=2) if len(lines) > 1 else np.zeros((0, 4))
    return sp.csr_matrix(
        (data[:, 2] + 1j * data[:, 3], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(rows, cols)
    )


# flows -------------------------------------------------------------------


def _cyclic_shift(N: int) -> sp.csr_matrix:
    """(S f)_i = f_{i+1} with periodic wrap."""
    i = np.arange(N)
    return sp.csr_matrix((np.ones(N), (i, (i + 1) % N)), shape=(N, N))


def _kron_axis(mats_1d, axis: int, op) -> sp.csr_matrix:
    out = sp.identity(1, format="csr")
    for k, n in enumerate(mats_1d):
        out = sp.kron(out, op if k == axis else sp.identity(n, format="csr"), format="csr")
    return out


def z_shift_matrix(Nz: int, delta: float) -> np.ndarray:
    """Spectral translation g(z) -> g(z + delta) on Nz points of [0, 1), Nz odd."""
    M = (Nz - 1) // 2
    m = np.arange(-M, M + 1)
    z = np.arange(Nz) / Nz
    F = np.exp(-2j * np.pi * np.outer(m, z)) / math.sqrt(Nz)
    return F.conj().T @ (np.exp(2j * np.pi * m * delta)[:, None] * F)


def z_derivative_matrix(Nz: int) -> np.ndarray:
    M = (Nz - 1) // 2
    m = np.arange(-M, M + 1)
    z = np.arange(Nz) / Nz
    F = np.exp(-2j * np.pi * np.outer(m, z)) / math.sqrt(Nz)
    return F.conj().T @ ((2j * np.pi * m)[:, None] * F)


def _torus_flow(grid: QuotientGrid, k: int) -> sp.csr_matrix:
    return _kron_axis(grid.resolution, k, _cyclic_shift(grid.resolution[k])).astype(complex)


def _fiber_flow(grid: QuotientGrid, k: int) -> sp.csr_matrix:
    N = grid.resolution[0]
    h = grid.h
    m = grid.frequency
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    i, j = i.ravel(), j.ravel()
    x, y = i * h, j * h
    if k == 0:
        phase = -np.pi * m * y * h - np.pi * m * y * (i == N - 1)
        target = ((i + 1) % N) * N + j
    elif k == 1:
        phase = np.pi * m * x * h + np.pi * m * x * (j == N - 1)
        target = i * N + (j + 1) % N
    else:
        raise ValueError("fibre flows exist only for the generators X, Y")
    return sp.csr_matrix((np.exp(1j * phase), (i * N + j, target)), shape=(N * N, N * N))


def _heisenberg_flow(grid: QuotientGrid, k: int) -> sp.csr_matrix:
    N, _, Nz = grid.resolution
    h = grid.h
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    i, j = i.ravel(), j.ravel()
    x, y = i * h, j * h
    if k == 0:
        deltas = -y * h / 2 - (y / 2) * (i == N - 1)
        targets = ((i + 1) % N) * N + j
    elif k == 1:
        deltas = x * h / 2 + (x / 2) * (j == N - 1)
        targets = i * N + (j + 1) % N
    else:
        raise ValueError("grid flows exist only for the generators X, Y")
    a, b = np.meshgrid(np.arange(Nz), np.arange(Nz), indexing="ij")
    rows, cols, vals = [], [], []
    for p, q, d in zip(i * N + j, targets, deltas):
        T = z_shift_matrix(Nz, d)
        rows.append(p * Nz + a.ravel())
        cols.append(q * Nz + b.ravel())
        vals.append(T.ravel())
    n = N * N * Nz
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _check_model(op: HomogeneousOperator, grid: QuotientGrid):
    if grid.manifold == "torus":
        expected = abelian(len(grid.resolution))
    else:
        expected = heisenberg(1)
    if not op.alg.same_as(expected):
        raise ValueError(f"operator algebra {op.alg.name or op.alg.degrees} does not model a {grid.manifold} grid")


class _Stencils:
    """Cached first and second differences along each generator flow."""

    def __init__(self, grid: QuotientGrid):
        self.grid = grid
        self._cache = {}

    def _flow(self, k):
        g = self.grid
        if g.manifold == "torus":
            return _torus_flow(g, k)
        if g.manifold == "heisenberg_fiber":
            return _fiber_flow(g, k)
        return _heisenberg_flow(g, k)

    def get(self, k: int, power: int) -> sp.csr_matrix:
        key = (k, power)
        if key in self._cache:
            return self._cache[key]
        g = self.grid
        n = g.npoints
        if k == 2 and g.manifold != "torus":
            # centre direction: exact multiplication by 2 pi i m (spectral in z)
            if g.manifold == "heisenberg_fiber":
                D = sp.identity(n, dtype=complex, format="csr") * (2j * np.pi * g.frequency)
            else:
                N = g.resolution[0]
                D = sp.kron(sp.identity(N * N), z_derivative_matrix(g.resolution[2]), format="csr")
            mat = D if power == 1 else D @ D
        else:
            S = self._flow(k)
            Sm = S.getH().tocsr()
            h = g.h
            if power == 1:
                mat = (S - Sm) / (2 * h)
            else:
                mat = (S + Sm - 2 * sp.identity(n, dtype=complex, format="csr")) / h**2
        mat = mat.tocsr()
        self._cache[key] = mat
        return mat


def _word_matrix(word, stencils: _Stencils, n: int) -> sp.csr_matrix:
    out = sp.identity(n, dtype=complex, format="csr")
    pos = 0
    while pos < len(word):
        k = word[pos]
        run = 1
        while pos + run < len(word) and word[pos + run] == k:
            run += 1
        for _ in range(run // 2):
            out = out @ stencils.get(k, 2)
        if run % 2:
            out = out @ stencils.get(k, 1)
        pos += run
    return out.tocsr()


def assemble(op: HomogeneousOperator, grid: QuotientGrid, hermitian: bool | None = None, label: str = "") -> DiscretizedOperator:
    """Discretize ``op`` on ``grid``; square operators are symmetrized by default."""
    _check_model(op, grid)
    n = grid.npoints
    stencils = _Stencils(grid)
    rows, cols = op.shape
    M = sp.csr_matrix((n * rows, n * cols), dtype=complex)
    for word, block in op.terms:
        M = M + sp.kron(_word_matrix(word, stencils, n), sp.csr_matrix(block), format="csr")
    if hermitian is None:
        hermitian = rows == cols
    defect = 0.0
    if hermitian:
        if rows != cols:
            raise ValueError("a hermitian matrix needs a square operator")
        Mh = M.getH().tocsr()
        scale = abs(M).max() if M.nnz else 0.0
        diff = M - Mh
        defect = float(abs(diff).max() / scale) if (scale and diff.nnz) else 0.0
        M = ((M + Mh) * 0.5).tocsr()
    M.eliminate_zeros()
    out = DiscretizedOperator(
        M,
        grid,
        op.order,
        label or f"assemble(order {op.order}) on {grid.manifold}{list(grid.resolution)}",
        block_size=rows,
        symmetrization_defect=defect,
        reliable=defect <= DEFECT_LIMIT,
    )
    if not out.reliable:
        out.notes.append(f"symmetrization defect {defect:.3g} exceeds {DEFECT_LIMIT:g}")
    return out


def torus_laplacian(d: int, N: int) -> DiscretizedOperator:
    """Standard (2d+1)-point Laplacian on the unit torus with spacing 1/N."""
    grid = QuotientGrid.torus(d, N)
    h = grid.h
    L1 = (2 * sp.identity(N, format="csr") - _cyclic_shift(N) - _cyclic_shift(N).T) / h**2
    M = sp.csr_matrix((grid.npoints, grid.npoints))
    for k in range(d):
        M = M + _kron_axis(grid.resolution, k, L1)
    return DiscretizedOperator(M.astype(complex).tocsr(), grid, 2, f"torus_laplacian(d={d}, N={N})")


def plaquette_defect(op: DiscretizedOperator) -> float:
    """Largest deviation of a plaquette holonomy from the uniform flux exp(2 pi i m h^2)."""
    grid = op.grid
    N = grid.resolution[0]
    h = grid.h
    A = op.matrix.tocsr()
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    p = i * N + j
    px = ((i + 1) % N) * N + j
    py = i * N + (j + 1) % N
    pxy = ((i + 1) % N) * N + (j + 1) % N

    def hop(a, b):
        return -(h**2) * np.asarray(A[a.ravel(), b.ravel()]).ravel()

    hol = hop(p, px) * hop(px, pxy) * hop(pxy, py) * hop(py, p)
    return float(np.max(np.abs(hol - np.exp(2j * np.pi * grid.frequency * h**2))))


def heisenberg_fiber(N: int, m: float) -> DiscretizedOperator:
    """Sub-Laplacian on the centre-frequency-m fibre, an N x N magnetic lattice."""
    grid = QuotientGrid.heisenberg_fiber(N, m)
    op = assemble(sublaplacian(heisenberg(1)), grid, label=f"heisenberg_fiber(N={N}, m={m:g})")
    op.flux_defect = plaquette_defect(op)
    if op.flux_defect > 1e-9:
        op.reliable = False
        op.notes.append(f"boundary phases violate flux quantization (defect {op.flux_defect:.3g})")
    return op


def heisenberg_sublaplacian(N: int, m_max: int, workers: int = 1) -> list[DiscretizedOperator]:
    """One fibre operator per centre frequency m = -m_max..m_max, in that order."""
    if N < 8:
        raise ValueError("Heisenberg fibres need N >= 8")
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    ms = list(range(-m_max, m_max + 1))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda m: heisenberg_fiber(N, m), ms))
    return [heisenberg_fiber(N, m) for m in ms]


def heisenberg_3d(N: int, m_max: int) -> DiscretizedOperator:
    """Direct twisted-boundary assembly of the sub-Laplacian on the 3D grid."""
    return assemble(sublaplacian(heisenberg(1)), QuotientGrid.heisenberg(N, m_max), label=f"heisenberg_3d(N={N}, m_max={m_max})")
