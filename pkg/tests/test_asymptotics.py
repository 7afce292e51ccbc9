import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypospec.asymptotics import (
    HeatTraceSamples,
    IllConditionedFit,
    NumericalRefusal,
    PoleProximityError,
    fit_heat_coefficients,
    fit_window,
    heat_trace,
    log_times,
    mckean_singer,
    ncr_value,
    zeta_mellin,
    zeta_residue,
    zeta_spectral,
)
from hypospec.spectral import Spectrum, heisenberg_spectrum, torus_spectrum


def poisson_theta(t, terms=50):
    """sum_k exp(-4 pi^2 k^2 t) via the dual sum (4 pi t)^{-1/2} sum_n exp(-n^2 / 4t)."""
    n = np.arange(-terms, terms + 1)
    return float(np.exp(-(n**2) / (4 * t)).sum() / math.sqrt(4 * math.pi * t))


@pytest.fixture(scope="module")
def torus2():
    s = torus_spectrum(2, count=10_000)
    w = fit_window(s, 2, 2)
    samples = heat_trace(s, log_times(w.t_min, 5.0, 40))
    return s, w, samples, fit_heat_coefficients(samples, 2, 2, 2, w)


def test_heat_trace_examples():
    assert heat_trace(Spectrum.from_eigenvalues([1.0]), [1.0]).values[0] == pytest.approx(math.exp(-1))
    two = heat_trace(Spectrum.from_eigenvalues([0.0, 0.0]), [0.3, 7.0])
    assert two.values.tolist() == [2.0, 2.0]


def test_heat_trace_torus1_against_poisson():
    s = torus_spectrum(1, lam_max=4 * math.pi**2 * 400**2)
    for t in (1e-4, 1e-3, 1e-2, 0.1, 1.0):
        v = heat_trace(s, [t]).values[0]
        assert v == pytest.approx(poisson_theta(t), rel=1e-12)
    small = heat_trace(s, [1e-5]).values[0] * math.sqrt(4 * math.pi * 1e-5)
    assert small == pytest.approx(1.0, abs=1e-10)


def test_fit_pure_leading_term():
    t = log_times(1e-4, 1e-1, 40)
    samples = HeatTraceSamples(t, t**-2.0, 0, t**-2.0)
    fit = fit_heat_coefficients(samples, 4, 2, 2, (1e-4, 1e-1))
    assert abs(fit.a0 - 1) < 1e-6
    assert np.all(np.abs(fit.coefficients[1:]) < 1e-6)


def test_fit_torus2(torus2):
    _, _, _, fit = torus2
    assert fit.a0 == pytest.approx(1 / (4 * math.pi), rel=0.02)
    assert fit.odd_ratios()[1] <= 0.05
    assert fit.parity_alarms == []
    assert np.all(np.diff(fit.exponents) > 0)


def test_fit_window_shrink_idempotent(torus2):
    _, w, samples, fit = torus2
    inner = samples.restrict(w.t_min, w.t_max)
    shrunk = fit_heat_coefficients(inner, 2, 2, 2, (inner.times[1], inner.times[-2]))
    assert np.all(np.abs(shrunk.coefficients - fit.coefficients) < fit.std_errors)


def test_fit_refusals():
    t = log_times(1e-3, 1e-2, 40)
    s = HeatTraceSamples(t, 1 / t, 0, 1 / t)
    with pytest.raises(NumericalRefusal, match="decades"):
        fit_heat_coefficients(s, 2, 2, 2, (1e-3, 1e-2))
    t = log_times(1e-3, 1e-1, 40)
    s = HeatTraceSamples(t, 1 / t, 0, 1 / t)
    with pytest.raises(IllConditionedFit):
        fit_heat_coefficients(s, 2, 2, 12, (1e-3, 1e-1), min_decades=1.0, cond_limit=1e3)


def test_heisenberg_parity():
    s = heisenberg_spectrum(1e4)
    w = fit_window(s, 4, 2)
    fit = fit_heat_coefficients(heat_trace(s, log_times(w.t_min, 5.0, 40)), 4, 2, 2, w)
    assert fit.a0 == pytest.approx(1 / 16, rel=0.01)
    assert fit.parity_alarms == []


def test_zeta_spectral_examples():
    assert zeta_spectral(Spectrum.from_eigenvalues([1.0, 1.0]), 3).value == pytest.approx(2.0)
    assert zeta_spectral(Spectrum.from_eigenvalues([0.0, 4.0]), 1).value == pytest.approx(0.25)


def test_zeta_spectral_basel():
    s = Spectrum.from_eigenvalues(np.arange(1.0, 2001.0))
    z = zeta_spectral(s, 2, n=1, r=1)
    # Euler-Maclaurin tail of sum_{j > 2000} j^-2 is 1/2000 - 1/(2 * 2000^2) + ...
    head = float(np.sum(1.0 / np.arange(1.0, 2001.0) ** 2))
    assert head + 1 / 2000 - 1 / (2 * 2000**2) == pytest.approx(math.pi**2 / 6, abs=1e-10)
    assert abs(z.value.real - math.pi**2 / 6) <= z.error


def test_zeta_methods_agree_torus(torus2):
    s, _, samples, fit = torus2
    for z in (2.0, 2.5, 3.0, 2.0 + 1.0j):
        a = zeta_spectral(s, z, 2, 2)
        b = zeta_mellin(samples, s.kernel_dim, 2, 2, z, fit)
        assert abs(a.value - b.value) <= a.error + b.error


def test_zeta_residue_and_special_value(torus2):
    s, _, samples, fit = torus2
    res = zeta_residue(fit, 0, s.kernel_dim)
    assert res.value == pytest.approx(1 / (4 * math.pi), rel=0.02)
    with pytest.raises(PoleProximityError):
        zeta_mellin(samples, s.kernel_dim, 2, 2, 1.0 + 1e-5, fit)
    # pure leading term, no kernel: zeta(0) = a_4' = 0
    t = log_times(1e-4, 30.0, 40)
    pure = HeatTraceSamples(t, t**-2.0, 0, t**-2.0)
    f = fit_heat_coefficients(pure, 4, 2, 4, (1e-4, 1e-1))
    assert abs(zeta_mellin(pure, 0, 4, 2, 0.0, f).value) < 1e-6


def test_ncr_torus_and_square(torus2):
    s, _, samples, fit = torus2
    v = ncr_value(samples, s.kernel_dim, 2, 2, fit)
    assert v.tau == pytest.approx(1 / (2 * math.pi), rel=0.02)
    sq = s.map(lambda x: x * x)
    w2 = fit_window(sq, 2, 4)
    s2 = heat_trace(sq, log_times(w2.t_min, 5.0, 40))
    v2 = ncr_value(s2, sq.kernel_dim, 2, 4, fit_heat_coefficients(s2, 2, 4, 2, w2))
    assert v2.tau == pytest.approx(v.tau, rel=0.02)


def test_ncr_vanishes_without_leading_term():
    # finite spectrum: zeta is entire, so there is no pole at n/r
    spec = Spectrum.from_eigenvalues([1.0, 2.0, 3.0])
    t = log_times(1e-6, 30.0, 40)
    samples = heat_trace(spec, t)
    fit = fit_heat_coefficients(samples, 2, 2, 2, (1e-6, 1e-3))
    assert abs(fit.a0) < 1e-5 * fit.coefficients[2]
    assert abs(ncr_value(samples, 0, 2, 2, fit).tau) < 1e-3


def test_mckean_singer_examples():
    rep = mckean_singer(np.array([[1.0, 0.0]]))
    assert rep.index == 1 and rep.supertraces == pytest.approx([1.0, 1.0, 1.0], abs=1e-14)
    rng = np.random.default_rng(3)
    sq = mckean_singer(rng.standard_normal((6, 6)))
    assert sq.index == 0 and sq.equals_index
    rect = mckean_singer(rng.standard_normal((30, 20)) / math.sqrt(20))
    assert rect.dim_ker_D == 0 and rect.dim_ker_Dstar == 10 and rect.index == -10
    assert rect.constant and rect.equals_index


def test_mckean_singer_matches_svd_rank():
    rng = np.random.default_rng(4)
    for rows, cols, rank in [(40, 25, 10), (12, 50, 12), (33, 33, 0)]:
        D = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols)) / math.sqrt(cols)
        rep = mckean_singer(D)
        svd_rank = int(np.sum(np.linalg.svd(D, compute_uv=False) > 1e-8))
        assert rep.index == (cols - svd_rank) - (rows - svd_rank)
        assert rep.equals_index and rep.constant


@settings(max_examples=200, deadline=None)
# lambda t stays below 500 so the trace does not underflow
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 5)), st.floats(-3, 0))
def test_heat_trace_log_convex(eigs, logt0):
    spec = Spectrum.from_eigenvalues(np.sort(eigs))
    samples = heat_trace(spec, np.geomspace(10**logt0, 10 ** (logt0 + 2), 25))
    assert np.all(np.diff(samples.values) <= 1e-12 * samples.values[:-1])
    assert samples.log_convexity_defect() <= 1e-12
