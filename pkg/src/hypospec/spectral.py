"""Spectra with multiplicities, counting functions and Weyl-law fits."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma

from .lanczos import block_lanczos
from .nilmanifold import DiscretizedOperator

MERGE_TOL = 1e-8
ZERO_TOL = 1e-9
DENSE_LIMIT = 4096


@dataclass(eq=False)
class Spectrum:
    """Distinct sorted eigenvalues with multiplicities.

    Values below ``zero_threshold`` (default 1e-9 times the largest value)
    are stored as exact zeros and make up the kernel.
    """

    values: np.ndarray
    multiplicities: np.ndarray
    source: str = "synthetic"
    trust_cutoff: float = math.inf
    zero_threshold: float | None = None
    partial: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        mult = np.asarray(self.multiplicities, dtype=np.int64)
        if v.shape != mult.shape or v.ndim != 1:
            raise ValueError("values and multiplicities must be matching 1-d arrays")
        if np.any(mult < 1):
            raise ValueError("multiplicities must be positive")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be sorted")
        top = float(np.max(np.abs(v), initial=0.0))
        if self.zero_threshold is None:
            self.zero_threshold = ZERO_TOL * top
        if v.size and v[0] < -max(self.zero_threshold, ZERO_TOL * top):
            raise ValueError(f"negative eigenvalue {v[0]:g} below tolerance")
        v = np.where(np.abs(v) <= self.zero_threshold, 0.0, v)
        self.values = v
        self.multiplicities = mult

    @classmethod
    def from_eigenvalues(cls, eigs, merge_tol: float = MERGE_TOL, **kw) -> "Spectrum":
        return cls.from_pairs(np.asarray(eigs, dtype=float), np.ones(len(eigs), dtype=np.int64), merge_tol, **kw)

    @classmethod
    def from_pairs(cls, values, mults, merge_tol: float = MERGE_TOL, **kw) -> "Spectrum":
        """Sort and merge values closer than ``merge_tol`` relative to their size."""
        values = np.asarray(values, dtype=float)
        mults = np.asarray(mults, dtype=np.int64)
        order = np.argsort(values, kind="stable")
        values, mults = values[order], mults[order]
        if values.size == 0:
            return cls(values, mults, **kw)
        floor = ZERO_TOL * float(np.max(np.abs(values)))
        gaps = np.diff(values)
        new = gaps > merge_tol * np.maximum(np.abs(values[1:]), np.abs(values[:-1])) + floor
        labels = np.concatenate([[0], np.cumsum(new)])
        count = np.bincount(labels, weights=mults).astype(np.int64)
        mean = np.bincount(labels, weights=values * mults) / count
        return cls(mean, count, **kw)

    @property
    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues repeated by multiplicity."""
        return np.repeat(self.values, self.multiplicities)

    @property
    def kernel_dim(self) -> int:
        return int(self.multiplicities[self.values == 0].sum())

    @property
    def count(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def max_value(self) -> float:
        return float(self.values[-1]) if self.values.size else 0.0

    def trusted(self) -> "Spectrum":
        keep = self.values <= self.trust_cutoff
        return Spectrum(self.values[keep], self.multiplicities[keep], self.source, self.trust_cutoff, self.zero_threshold)

    def map(self, fn, source_suffix: str = "") -> "Spectrum":
        """Apply a monotone increasing function to every eigenvalue (e.g. squaring)."""
        cut = fn(self.trust_cutoff) if math.isfinite(self.trust_cutoff) else math.inf
        return Spectrum.from_pairs(fn(self.values), self.multiplicities, source=self.source + source_suffix, trust_cutoff=cut)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eigenvalue", "multiplicity"])
            for v, m in zip(self.values, self.multiplicities):
                w.writerow([repr(float(v)), int(m)])
        return path

    @classmethod
    def from_csv(cls, path, **kw) -> "Spectrum":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_pairs([float(r["eigenvalue"]) for r in rows], [int(r["multiplicity"]) for r in rows], **kw)


def union(spectra, source: str | None = None) -> Spectrum:
    """Spectrum of a direct sum."""
    spectra = list(spectra)
    values = np.concatenate([s.values for s in spectra])
    mults = np.concatenate([s.multiplicities for s in spectra])
    cut = min(s.trust_cutoff for s in spectra)
    out = Spectrum.from_pairs(values, mults, source=source or spectra[0].source, trust_cutoff=cut)
    out.partial = any(s.partial for s in spectra)
    return out


def eigenvalues(op: DiscretizedOperator, k: int | None = None, method: str = "auto", merge_tol: float = MERGE_TOL, **lanczos_kw) -> Spectrum:
    """The k smallest eigenvalues of a Hermitian discretized operator (all if k is None)."""
    n = op.dim
    if op.hermitian_defect() > 1e-12 * max(op.norm_max(), 1.0):
        raise ValueError(f"operator {op.label} is not Hermitian")
    if method == "auto":
        method = "dense" if (n <= DENSE_LIMIT or k is None) else "lanczos"
    cut = op.grid.trust_cutoff()
    notes = []
    partial = False
    if method == "dense":
        ev = np.linalg.eigvalsh(op.matrix.toarray())
        if k is not None:
            ev = ev[:k]
    elif method == "lanczos":
        if k is None:
            raise ValueError("lanczos needs a finite count k")
        shift = lanczos_kw.pop("shift", -1e-3 * max(op.norm_max(), 1.0))
        res = block_lanczos(op.matrix, k, shift=shift, **lanczos_kw)
        ev = res.values
        if not res.converged:
            partial = True
            notes.append(f"lanczos not converged: max residual {res.residuals.max():.3g} with basis {res.basis_size}")
    else:
        raise ValueError(f"unknown method {method!r}")
    if k is not None and k < n:
        # the top computed cluster may be cut; trust only what lies below it
        cut = min(cut, float(ev[-1]) * (1 - 10 * merge_tol))
    out = Spectrum.from_eigenvalues(ev, merge_tol, source=f"discretized({op.label})", trust_cutoff=cut)
    out.partial = partial
    out.notes.extend(notes + list(op.notes))
    return out


def fibered_spectrum(ops, k: int | None = None, workers: int = 1, **kw) -> Spectrum:
    """Union of the spectra of independent fibres, merged in fibre order."""
    ops = list(ops)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda o: eigenvalues(o, k, **kw), ops))
    else:
        parts = [eigenvalues(o, k, **kw) for o in ops]
    out = union(parts, source="discretized(fibered)")
    if ops and ops[0].grid.manifold == "heisenberg_fiber":
        m_max = max(abs(o.grid.frequency) for o in ops)
        out.trust_cutoff = min(out.trust_cutoff, 2 * math.pi * (m_max + 1))
    return out


def counting_function(spec: Spectrum, lam):
    """Number of eigenvalues <= lam, with multiplicity; vectorized in lam."""
    cum = np.concatenate([[0], np.cumsum(spec.multiplicities)])
    idx = np.searchsorted(spec.values, lam, side="right")
    out = cum[idx]
    return int(out) if np.ndim(out) == 0 else out


# analytic spectra ----------------------------------------------------------


def _lattice_norms(d: int, R2: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct values of |k|^2 <= R2 over k in Z^d, with their representation counts."""
    R = int(math.isqrt(R2))
    axis = np.arange(-R, R + 1) ** 2
    sq = np.zeros(1, dtype=np.int64)
    for _ in range(d):
        sq = (sq[:, None] + axis[None, :]).ravel()
        sq = sq[sq <= R2]
    vals, counts = np.unique(sq, return_counts=True)
    return vals, counts


def torus_spectrum(d: int, count: int | None = None, lam_max: float | None = None) -> Spectrum:
    """Flat unit torus: 4 pi^2 |k|^2 over k in Z^d, complete up to the last shell."""
    c = 4 * math.pi**2
    if lam_max is not None:
        R2 = int(math.floor(lam_max / c))
    elif count is not None:
        R2 = max(1, int(math.ceil((count * math.gamma(1 + d / 2) / math.pi ** (d / 2)) ** (2 / d))))
        while True:
            vals, counts = _lattice_norms(d, R2)
            if counts.sum() >= count:
                csum = np.cumsum(counts)
                R2 = int(vals[np.searchsorted(csum, count)])
                break
            R2 = int(R2 * 1.2) + 1
    else:
        raise ValueError("give count or lam_max")
    vals, counts = _lattice_norms(d, R2)
    return Spectrum(c * vals.astype(float), counts, source=f"analytic(torus{d})", trust_cutoff=c * R2)


def heisenberg_spectrum(lam_max: float) -> Spectrum:
    """Sub-Laplacian on the Heisenberg nilmanifold, all eigenvalues <= lam_max.

    Frequency 0 gives the flat torus 4 pi^2 (j^2 + k^2); each frequency m != 0
    gives Landau levels 2 pi |m| (2k + 1), each of multiplicity |m|.
    """
    torus = torus_spectrum(2, lam_max=lam_max)
    values = [torus.values]
    mults = [torus.multiplicities]
    m = 1
    while 2 * math.pi * m <= lam_max:
        kmax = int((lam_max / (2 * math.pi * m) - 1) // 2)
        levels = 2 * math.pi * m * (2 * np.arange(kmax + 1) + 1)
        values.append(levels)
        mults.append(np.full(levels.size, 2 * m))
        m += 1
    return Spectrum.from_pairs(
        np.concatenate(values), np.concatenate(mults), source="analytic(heisenberg)", trust_cutoff=lam_max
    )


# Weyl fit ------------------------------------------------------------------


@dataclass
class WeylFit:
    exponent_est: float
    constant_est: float
    residual: float
    window: tuple[float, float]
    n_samples: int
    theory_exponent: float | None = None
    theory_constant: float | None = None
    implied_a0: float | None = None

    @property
    def exponent_deviation(self) -> float | None:
        if self.theory_exponent is None:
            return None
        return self.exponent_est / self.theory_exponent - 1

    def to_json(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        out["exponent_deviation"] = self.exponent_deviation
        return out


def weyl_fit(
    spec: Spectrum,
    n: int | None = None,
    r: int | None = None,
    window: tuple[float, float] | None = None,
    a0: float | None = None,
    max_samples: int = 400,
    min_count: int = 30,
) -> WeylFit:
    """Fit log N(lam) = alpha log lam + beta on the window.

    N is sampled at geometric means of consecutive jump points (the staircase
    midpoints), thinned to at most ``max_samples`` log-spaced points.
    """
    hi_default = spec.trust_cutoff if math.isfinite(spec.trust_cutoff) else spec.max_value
    lo, hi = window if window is not None else (hi_default / 30, hi_default)
    if not 0 < lo < hi:
        raise ValueError(f"bad window [{lo:g}, {hi:g}]")
    if hi > spec.trust_cutoff * (1 + 1e-12):
        raise ValueError(f"window top {hi:g} lies above the trust cutoff {spec.trust_cutoff:g}")
    if hi / lo < math.sqrt(10):
        raise ValueError(f"window [{lo:g}, {hi:g}] spans less than half a decade")
    inside = (spec.values > lo) & (spec.values <= hi)
    if spec.multiplicities[inside].sum() < min_count:
        raise ValueError(f"only {spec.multiplicities[inside].sum()} eigenvalues inside [{lo:g}, {hi:g}], need {min_count}")
    jumps = spec.values[(spec.values >= lo) & (spec.values <= hi) & (spec.values > 0)]
    if jumps.size < 3:
        raise ValueError("too few distinct eigenvalues in the window")
    mids = np.sqrt(jumps[:-1] * jumps[1:])
    if mids.size > max_samples:
        targets = np.geomspace(mids[0], mids[-1], max_samples)
        idx = np.unique(np.clip(np.searchsorted(mids, targets), 0, mids.size - 1))
        mids = mids[idx]
    counts = counting_function(spec, mids).astype(float)
    X = np.log(mids)
    Y = np.log(counts)
    (alpha, beta), *_ = np.linalg.lstsq(np.column_stack([X, np.ones_like(X)]), Y, rcond=None)
    resid = float(np.sqrt(np.mean((Y - alpha * X - beta) ** 2)))
    fit = WeylFit(float(alpha), float(math.exp(beta)), resid, (float(lo), float(hi)), int(mids.size))
    if n is not None and r is not None:
        fit.theory_exponent = n / r
        fit.implied_a0 = fit.constant_est * float(gamma(1 + n / r))
        if a0 is not None:
            fit.theory_constant = a0 / float(gamma(1 + n / r))
    return fit
