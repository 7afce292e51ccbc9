import math

import numpy as np
import pytest
import scipy.sparse as sp

from hypospec.lanczos import block_lanczos
from hypospec.nilmanifold import QuotientGrid, DiscretizedOperator, heisenberg_sublaplacian, torus_laplacian
from hypospec.spectral import (
    Spectrum,
    counting_function,
    eigenvalues,
    fibered_spectrum,
    heisenberg_spectrum,
    torus_spectrum,
    union,
    weyl_fit,
)


def gauss_circle_count(R2: int) -> int:
    """#{(j, k): j^2 + k^2 <= R2} by direct row sums."""
    R = math.isqrt(R2)
    return sum(2 * math.isqrt(R2 - j * j) + 1 for j in range(-R, R + 1))


def _as_operator(M):
    grid = QuotientGrid.torus(1, max(4, M.shape[0]))
    return DiscretizedOperator(sp.csr_matrix(M, dtype=complex), grid, 2, "test")


def test_small_examples():
    s = eigenvalues(_as_operator(np.diag([0.0, 5.0])))
    assert s.eigenvalues.tolist() == [0.0, 5.0] and s.kernel_dim == 1
    t = eigenvalues(torus_laplacian(1, 4))
    assert np.allclose(t.eigenvalues, [0, 32, 32, 64])
    assert counting_function(t, 32) == 3
    assert counting_function(t, 0) == t.kernel_dim


def test_counting_inverts_squares():
    s = Spectrum.from_eigenvalues(np.arange(1, 200) ** 2.0)
    lam = np.array([1, 2, 50, 399.9, 1000])
    assert counting_function(s, lam).tolist() == np.floor(np.sqrt(lam)).astype(int).tolist()


def test_torus_spectrum_matches_circle_count():
    s = torus_spectrum(2, lam_max=4 * math.pi**2 * 500)
    for R2 in (1, 10, 77, 500):
        assert counting_function(s, 4 * math.pi**2 * R2 * (1 + 1e-12)) == gauss_circle_count(R2)


def test_heisenberg_spectrum_multiplicities():
    s = heisenberg_spectrum(60.0)
    # Landau level 2 pi (m = 1) has multiplicity 2 (m = +-1) times |m| = 1
    idx = np.argmin(np.abs(s.values - 2 * math.pi))
    assert s.multiplicities[idx] == 2
    assert s.kernel_dim == 1


def test_weyl_fit_exact_power_law():
    s = Spectrum.from_eigenvalues(np.sqrt(np.arange(1, 40001)))
    fit = weyl_fit(s, window=(10, 200))
    assert abs(fit.exponent_est - 2) < 0.01
    assert abs(fit.constant_est - 1) < 0.02


def test_weyl_fit_exact_power_law_solver_tolerance():
    # stated invariant: exponent and constant to 1e-6 on an exact power law
    s = Spectrum.from_eigenvalues(np.sqrt(np.arange(1, 4_000_001)))
    fit = weyl_fit(s, window=(600, 1990))
    assert abs(fit.exponent_est - 2) < 1e-6
    assert abs(fit.constant_est - 1) < 1e-6


def test_weyl_fit_torus_against_circle_oracle():
    s = torus_spectrum(2, count=10_000)
    fit = weyl_fit(s, 2, 2, a0=1 / (4 * math.pi))
    assert abs(fit.exponent_est - 1) < 0.03
    assert abs(fit.constant_est * 4 * math.pi - 1) < 0.03


def test_weyl_fit_refusals():
    s = torus_spectrum(2, count=200)
    with pytest.raises(ValueError, match="half a decade"):
        weyl_fit(s, window=(100, 200))
    with pytest.raises(ValueError, match="trust cutoff"):
        weyl_fit(s, window=(100, 10 * s.trust_cutoff))


def test_lanczos_matches_dense_on_fibres():
    for op in heisenberg_sublaplacian(16, 1):
        dense = eigenvalues(op, method="dense").eigenvalues[:50]
        res = block_lanczos(op.matrix, 50, shift=-1e-3 * op.norm_max())
        assert res.converged
        assert np.max(np.abs(res.values - dense)) < 1e-8 * max(1.0, dense.max())


def test_lanczos_resolves_degenerate_levels():
    A = sp.diags(np.repeat(np.arange(1.0, 40.0), 4))
    res = block_lanczos(A, 12, block_size=6, shift=0.5)
    assert np.allclose(res.values, np.repeat([1.0, 2.0, 3.0], 4), atol=1e-10)


def test_partial_spectrum_trust_and_union():
    op = heisenberg_sublaplacian(16, 1)[0]
    part = eigenvalues(op, k=30, method="lanczos")
    assert part.trust_cutoff < part.max_value
    full = fibered_spectrum(heisenberg_sublaplacian(8, 1))
    assert full.count == 3 * 64
    u = union([Spectrum.from_eigenvalues([0.0, 1.0]), Spectrum.from_eigenvalues([1.0, 2.0])])
    assert u.multiplicities.tolist() == [1, 2, 1]


def test_csv_round_trip(tmp_path):
    s = heisenberg_spectrum(100.0)
    back = Spectrum.from_csv(s.to_csv(tmp_path / "s.csv"))
    assert np.array_equal(back.values, s.values)
    assert np.array_equal(back.multiplicities, s.multiplicities)


def test_negative_eigenvalues_rejected():
    with pytest.raises(ValueError):
        Spectrum.from_eigenvalues([-1.0, 2.0])
