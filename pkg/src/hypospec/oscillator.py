"""One-dimensional Schroedinger operators -k d^2/dx^2 + V(x) with even polynomial V.

Two independent eigen-solvers:

* ``hermite``: Rayleigh-Ritz in scaled Hermite functions. Position and
  derivative act tridiagonally, so x^p and d^2/dx^2 are exact band matrices
  (computed in a slightly larger basis and truncated). The scale is matched
  to the classical turning point so that the basis covers the phase-space
  region below the reference energy.
* ``grid``: second-order centered differences on [-L, L] with Dirichlet
  walls, a symmetric tridiagonal problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eig_banded, eigh_tridiagonal

MAX_HERMITE = 6000


@dataclass(frozen=True)
class PolynomialOscillator:
    """H = -kinetic d^2/dx^2 + sum_p potential[p] x^p, with V even and bounded below."""

    kinetic: float
    potential: tuple

    def __post_init__(self):
        pot = tuple(float(c) for c in self.potential)
        object.__setattr__(self, "potential", pot)
        if self.kinetic <= 0:
            raise ValueError("kinetic coefficient must be positive")
        if len(pot) < 3 or pot[-1] <= 0 or (len(pot) - 1) % 2:
            raise ValueError("potential must have even degree >= 2 with positive leading coefficient")
        if any(c != 0 for c in pot[1::2]):
            raise ValueError("potential must be even")

    def V(self, x):
        return np.polynomial.polynomial.polyval(x, self.potential)

    def turning_point(self, E: float) -> float:
        """Outermost x >= 0 with V(x) = E (0 if E lies below V everywhere)."""
        coef = np.array(self.potential, dtype=float)
        coef[0] -= E
        roots = np.polynomial.polynomial.polyroots(coef)
        real = roots[np.abs(roots.imag) <= 1e-9 * (1 + np.abs(roots.real))].real
        real = real[real >= 0]
        return float(real.max()) if real.size else 0.0

    def min_potential(self) -> float:
        d = np.polynomial.polynomial.polyder(self.potential)
        crit = np.polynomial.polynomial.polyroots(d)
        crit = crit[np.abs(crit.imag) <= 1e-9 * (1 + np.abs(crit.real))].real
        return float(min(self.V(np.concatenate([crit, [0.0]]))))


@dataclass(frozen=True)
class QuarticHamiltonian:
    """H = -(1/m) d^2/dθ^2 + (m^2 θ^2 + ν)^2 / (4m) with m = λ^2 + μ^2."""

    lam: float
    mu: float
    nu: float

    def __post_init__(self):
        if self.lam == 0 and self.mu == 0:
            raise ValueError("(lambda, mu) must not vanish")

    @property
    def m(self) -> float:
        return self.lam**2 + self.mu**2

    def oscillator(self) -> PolynomialOscillator:
        m, nu = self.m, self.nu
        return PolynomialOscillator(1.0 / m, (nu * nu / (4 * m), 0.0, m * nu / 2, 0.0, m**3 / 4))


def reduced_quartic(b: float) -> PolynomialOscillator:
    """K(b) = -d^2/dφ^2 + (φ^2 + b)^2 / 4."""
    return PolynomialOscillator(1.0, (b * b / 4, 0.0, b / 2, 0.0, 0.25))


def harmonic(a: float = 1.0) -> PolynomialOscillator:
    """-d^2/dθ^2 + a^2 θ^2, eigenvalues |a| (2k + 1)."""
    return PolynomialOscillator(1.0, (0.0, 0.0, a * a))


@dataclass(frozen=True)
class OscillatorDiscretization:
    """``hermite``: ``size`` is the minimum basis size K (raised automatically to
    cover the turning region); ``grid``: ``size`` is the number of interior
    points N and ``half_width`` the wall position L (automatic if None)."""

    method: str = "hermite"
    size: int = 100
    half_width: float | None = None
    wall_factor: float = 4.0

    def __post_init__(self):
        if self.method == "hermite" and self.size < 50:
            raise ValueError("hermite basis needs K >= 50")
        if self.method == "grid" and self.size < 200:
            raise ValueError("grid needs N >= 200")
        if self.method not in ("hermite", "grid"):
            raise ValueError(f"unknown method {self.method!r}")

    def refined(self) -> "OscillatorDiscretization":
        return OscillatorDiscretization(self.method, 2 * self.size, self.half_width, self.wall_factor)


def hermite_scale(osc: PolynomialOscillator, E: float) -> tuple[float, float]:
    """Scale ell = sqrt(x_t / p_t) and phase-space box x_t p_t at energy E."""
    xt = max(osc.turning_point(E), 1e-300)
    pt = math.sqrt(max(E, 1e-300) / osc.kinetic)
    return math.sqrt(xt / pt), xt * pt


def hermite_matrix(osc: PolynomialOscillator, K: int, ell: float) -> np.ndarray:
    """Lower band storage of H in the first K Hermite functions of scale ell."""
    deg = len(osc.potential) - 1
    M = K + deg + 2
    n = np.arange(M - 1)
    off = np.sqrt((n + 1) / 2.0)
    X = np.zeros((M, M))
    X[n, n + 1] = off
    X[n + 1, n] = off
    D = np.zeros((M, M))
    D[n, n + 1] = off
    D[n + 1, n] = -off
    H = -(osc.kinetic / ell**2) * (D @ D)
    P = np.eye(M)
    Xs = ell * X
    for p, c in enumerate(osc.potential):
        if p:
            P = P @ Xs
        if c:
            H += c * P
    H = H[:K, :K]
    band = np.zeros((deg + 1, K))
    for d in range(deg + 1):
        band[d, : K - d] = np.diagonal(H, -d)
    return band


def hermite_eigenvalues(osc: PolynomialOscillator, E_ref: float, K_min: int = 50, count: int | None = None):
    """Eigenvalues from a Hermite basis sized for energies up to E_ref.

    Returns (eigenvalues, K used). The basis size is max(K_min, 1.3 x_t p_t + 40).
    """
    ell, box = hermite_scale(osc, E_ref)
    K = max(int(K_min), int(math.ceil(1.3 * box + 40)))
    if K > MAX_HERMITE:
        raise ValueError(f"Hermite basis of size {K} needed for E_ref = {E_ref:g}; limit {MAX_HERMITE}")
    band = hermite_matrix(osc, K, ell)
    if count is None:
        ev = eig_banded(band, lower=True, eigvals_only=True)
    else:
        ev = eig_banded(band, lower=True, eigvals_only=True, select="i", select_range=(0, min(count, K) - 1))
    return ev, K


def grid_eigenvalues(osc: PolynomialOscillator, N: int, E_ref: float, L: float | None = None, wall_factor: float = 4.0):
    """Eigenvalues <= E_ref from N interior points on [-L, L] with Dirichlet walls.

    Returns (eigenvalues, L). By default the wall sits at the turning point of
    wall_factor * E_ref + 50 so that V(L) exceeds both E_ref and 50.
    """
    if L is None:
        L = osc.turning_point(wall_factor * max(E_ref, 0.0) + 50.0)
    h = 2 * L / (N + 1)
    x = -L + h * np.arange(1, N + 1)
    diag = 2 * osc.kinetic / h**2 + osc.V(x)
    off = np.full(N - 1, -osc.kinetic / h**2)
    ev = eigh_tridiagonal(diag, off, eigvals_only=True, select="v", select_range=(-np.inf, E_ref))
    return ev, L


def oscillator_eigenvalues(osc: PolynomialOscillator, disc: OscillatorDiscretization, E_ref: float):
    """Eigenvalues of ``osc``; all those <= E_ref are resolved by the discretization."""
    if disc.method == "hermite":
        ev, _ = hermite_eigenvalues(osc, E_ref, disc.size)
        return ev
    ev, _ = grid_eigenvalues(osc, disc.size, E_ref, disc.half_width, disc.wall_factor)
    return ev


@dataclass
class TraceResult:
    value: float
    convergence: float
    n_eigenvalues: int


def oscillator_trace(osc: PolynomialOscillator, t: float, disc: OscillatorDiscretization, tol: float | None = None) -> TraceResult:
    """sum_k e^{-t e_k}, with the difference to a twice finer discretization as convergence estimate."""
    if t <= 0:
        raise ValueError("t must be positive")
    E_ref = osc.min_potential() + 40.0 / t
    ev = oscillator_eigenvalues(osc, disc, E_ref)
    value = float(np.exp(-t * ev).sum())
    ev2 = oscillator_eigenvalues(osc, disc.refined(), E_ref)
    conv = abs(float(np.exp(-t * ev2).sum()) - value)
    if tol is not None and conv > tol * value:
        raise ValueError(f"trace not converged: refinement changes it by {conv:.3g} (value {value:.6g})")
    return TraceResult(value, conv, int(ev.size))


def quartic_trace(h: QuarticHamiltonian, t: float, disc: OscillatorDiscretization, tol: float | None = None) -> TraceResult:
    return oscillator_trace(h.oscillator(), t, disc, tol)
