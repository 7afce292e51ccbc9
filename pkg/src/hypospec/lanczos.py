"""Block Lanczos with full reorthogonalization for the low end of a Hermitian spectrum.

The Krylov space is grown in blocks so that degenerate eigenvalues (up to the
block size) are resolved, every new block is orthogonalized twice against
the whole basis, and Ritz values come from an explicit Rayleigh-Ritz
projection of the original matrix. With ``shift`` the Krylov space is built
from (A - shift)^-1, which pulls the smallest eigenvalues to the top of the
transformed spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


@dataclass
class LanczosResult:
    values: np.ndarray
    residuals: np.ndarray
    converged: bool
    basis_size: int
    matvecs: int


def _orthonormalize(W: np.ndarray, Q: np.ndarray | None, rng, tol: float = 1e-10) -> np.ndarray:
    """Orthonormalize W against Q (twice) and itself, refilling collapsed columns at random."""
    for _ in range(2):
        if Q is not None and Q.shape[1]:
            W = W - Q @ (Q.conj().T @ W)
    V, R = np.linalg.qr(W)
    weak = np.abs(np.diag(R)) < tol * max(1.0, np.abs(R).max(initial=0.0))
    if np.any(weak):
        fresh = rng.standard_normal((W.shape[0], int(weak.sum()))) + 0j
        basis = V[:, ~weak] if Q is None else np.hstack([Q, V[:, ~weak]])
        for _ in range(2):
            fresh = fresh - basis @ (basis.conj().T @ fresh)
        fresh, _ = np.linalg.qr(fresh)
        V = np.hstack([V[:, ~weak], fresh])
    return V


def block_lanczos(
    A,
    k: int,
    block_size: int = 8,
    shift: float | None = None,
    tol: float = 1e-10,
    max_basis: int | None = None,
    seed: int = 0,
) -> LanczosResult:
    """The k smallest eigenvalues of the sparse Hermitian matrix A."""
    A = sp.csr_matrix(A, dtype=complex)
    n = A.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= {n}")
    b = min(block_size, n)
    max_basis = min(n, max_basis or max(4 * k + 4 * b, 120))
    rng = np.random.default_rng(seed)
    if shift is not None:
        lu = splu((A - shift * sp.identity(n, format="csr")).tocsc())

        def apply(V):
            return lu.solve(V)

    else:

        def apply(V):
            return A @ V

    scale = float(abs(A).max()) or 1.0
    Q = np.zeros((n, 0), dtype=complex)
    AQ = np.zeros((n, 0), dtype=complex)
    V = _orthonormalize(rng.standard_normal((n, b)) + 1j * rng.standard_normal((n, b)), None, rng)
    matvecs = 0
    theta = np.zeros(0)
    res = np.full(k, np.inf)
    converged = False
    while True:
        Q = np.hstack([Q, V])
        AQ = np.hstack([AQ, A @ V])
        matvecs += V.shape[1]
        m = Q.shape[1]
        if m >= min(k + b, n):
            H = Q.conj().T @ AQ
            H = 0.5 * (H + H.conj().T)
            w, Y = np.linalg.eigh(H)
            theta = w[:k]
            Yk = Y[:, :k]
            R = AQ @ Yk - (Q @ Yk) * theta
            res = np.linalg.norm(R, axis=0)
            if np.all(res <= tol * np.maximum(np.abs(theta), scale * 1e-3)) or m >= n:
                converged = bool(np.all(res <= tol * np.maximum(np.abs(theta), scale * 1e-3))) or m >= n
                break
        if m + b > max_basis:
            break
        W = apply(V)
        V = _orthonormalize(W, Q, rng)
        V = V[:, : min(b, n - m)]
        if V.shape[1] == 0:
            break
    return LanczosResult(np.sort(theta), res, converged, Q.shape[1], matvecs)
