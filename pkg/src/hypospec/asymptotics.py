"""Heat traces, small-time coefficient fits, zeta functions and the heat supertrace.

The small-time expansion tr e^{-tA} ~ sum_j a_j t^{(j-n)/r} is fitted by
linear least squares. The zeta function is continued through the split
Mellin integral

    Gamma(z) zeta(z) = int_1^inf t^{z-1} (tr - k) dt - k/z
                       + int_0^1 t^{z-1} (tr - sum_j a_j t^{(j-n)/r}) dt
                       + sum_j a_j / (z - (n-j)/r),

where k is the kernel dimension.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import gamma, gammainccinv

from .spectral import Spectrum


class NumericalRefusal(ValueError):
    """A computation declined because its numerical quality cannot be guaranteed."""


class IllConditionedFit(NumericalRefusal):
    pass


class PoleProximityError(NumericalRefusal):
    pass


@dataclass(eq=False)
class HeatTraceSamples:
    """tr e^{-tA} at log-spaced times; ``excess`` is the nonzero-eigenvalue part tr - k."""

    times: np.ndarray
    values: np.ndarray
    kernel_dim: int
    excess: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.excess = np.asarray(self.excess, dtype=float)
        if np.any(self.times <= 0) or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be positive and increasing")
        if np.any(self.values <= 0):
            raise ValueError("heat trace values must be positive")

    def restrict(self, lo: float, hi: float) -> "HeatTraceSamples":
        keep = (self.times >= lo * (1 - 1e-12)) & (self.times <= hi * (1 + 1e-12))
        return HeatTraceSamples(self.times[keep], self.values[keep], self.kernel_dim, self.excess[keep], self.source)

    def log_convexity_defect(self) -> float:
        """Largest violation of log-convexity over consecutive triples (<= 0 means convex)."""
        t, lv = self.times, np.log(self.values)
        if t.size < 3:
            return -math.inf
        w = (t[1:-1] - t[:-2]) / (t[2:] - t[:-2])
        chord = (1 - w) * lv[:-2] + w * lv[2:]
        return float(np.max(lv[1:-1] - chord))


def heat_trace(spec: Spectrum, times) -> HeatTraceSamples:
    """Exact sum of e^{-t lambda} over the spectrum, with multiplicity."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    nz = spec.values > 0
    vals, mult = spec.values[nz], spec.multiplicities[nz].astype(float)
    excess = np.empty_like(times)
    for i0 in range(0, times.size, 64):
        chunk = times[i0 : i0 + 64]
        excess[i0 : i0 + 64] = np.exp(-np.outer(chunk, vals)) @ mult
    k = spec.kernel_dim
    return HeatTraceSamples(times, excess + k, k, excess, spec.source)


def log_times(lo: float, hi: float, per_decade: int = 40) -> np.ndarray:
    n = max(3, int(math.ceil(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, n)


@dataclass
class FitWindow:
    t_min: float
    t_max: float
    floor_rule: str
    top_rule: str

    @property
    def decades(self) -> float:
        return math.log10(self.t_max / self.t_min)


def fit_window(
    spec: Spectrum,
    n: int,
    r: int,
    floor_tol: float = 1e-4,
    gap_factor: float = 0.25,
    saturation: float = 10.0,
) -> FitWindow:
    """Choose [t_min, t_max] for small-time fits of a (possibly truncated) spectrum.

    t_min: a spectrum with Weyl density cut at lambda_c misses a fraction
    Q(n/r, t lambda_c) of its heat trace (regularized upper incomplete
    gamma); t_min is where this fraction equals ``floor_tol``.
    t_max: the smaller of ``gap_factor / lambda_1`` (before the lowest
    eigenvalue dominates) and the last t with tr - k > saturation max(k, 1).
    """
    trusted = spec.trusted()
    lam_c = trusted.trust_cutoff if math.isfinite(trusted.trust_cutoff) else trusted.max_value
    t_min = float(gammainccinv(n / r, floor_tol)) / lam_c
    nonzero = trusted.values[trusted.values > 0]
    if nonzero.size == 0:
        raise NumericalRefusal("spectrum has no nonzero eigenvalues")
    t_gap = gap_factor / nonzero[0]
    k = trusted.kernel_dim
    target = saturation * max(k, 1)
    excess = lambda t: float(np.exp(-t * nonzero) @ trusted.multiplicities[trusted.values > 0]) - target
    if excess(t_min) <= 0:
        raise NumericalRefusal("heat trace is saturated by the kernel already at the discretization floor")
    t_sat = t_gap if excess(t_gap) > 0 else brentq(excess, t_min, t_gap, xtol=1e-14 * t_gap)
    top, rule = (t_gap, "gap") if t_gap <= t_sat else (t_sat, "kernel saturation")
    if top <= t_min:
        raise NumericalRefusal(f"empty fit window: t_min {t_min:g} >= t_max {top:g}")
    return FitWindow(t_min, float(top), f"Q(n/r, t lambda_c) = {floor_tol:g}", rule)


@dataclass
class AsymptoticFit:
    n: int
    r: int
    coefficients: np.ndarray
    exponents: np.ndarray
    fit_window: tuple[float, float]
    residual: float
    condition_number: float
    std_errors: np.ndarray
    n_samples: int
    parity_alarms: list = field(default_factory=list)

    @property
    def a0(self) -> float:
        return float(self.coefficients[0])

    def odd_ratios(self) -> dict:
        return {j: abs(float(self.coefficients[j])) / abs(self.a0) for j in range(1, len(self.coefficients), 2)}

    def to_json(self) -> dict:
        out = asdict(self)
        for key in ("coefficients", "exponents", "std_errors"):
            out[key] = [float(v) for v in out[key]]
        out["fit_window"] = list(self.fit_window)
        out["odd_ratios"] = {str(j): v for j, v in self.odd_ratios().items()}
        return out


def fit_heat_coefficients(
    samples: HeatTraceSamples,
    n: int,
    r: int,
    J: int,
    window: tuple[float, float] | FitWindow | None = None,
    min_decades: float = 1.5,
    cond_limit: float = 1e8,
    parity_tol: float = 0.05,
) -> AsymptoticFit:
    """Least squares for a_0..a_J in tr ~ sum_j a_j t^{(j-n)/r}.

    Residuals are weighted by 1/tr (relative error) and basis columns are
    scaled to unit norm before the condition number is checked.
    """
    if isinstance(window, FitWindow):
        window = (window.t_min, window.t_max)
    s = samples.restrict(*window) if window is not None else samples
    t, y = s.times, s.values
    if t.size < J + 2:
        raise NumericalRefusal(f"{t.size} samples cannot determine {J + 1} coefficients")
    decades = math.log10(t[-1] / t[0])
    if decades < min_decades - 1e-9:
        raise NumericalRefusal(f"fit window covers {decades:.2f} decades, need {min_decades}")
    exps = (np.arange(J + 1) - n) / r
    B = t[:, None] ** exps[None, :] / y[:, None]
    colnorm = np.linalg.norm(B, axis=0)
    Bs = B / colnorm
    cond = float(np.linalg.cond(Bs))
    if not cond <= cond_limit:
        raise IllConditionedFit(f"basis condition number {cond:.3g} exceeds {cond_limit:g}")
    sol, *_ = np.linalg.lstsq(Bs, np.ones_like(y), rcond=None)
    coef = sol / colnorm
    res = np.ones_like(y) - Bs @ sol
    # residuals of a truncated expansion are smooth, not independent, so the
    # standard errors use the Newey-West (Bartlett kernel) covariance
    lag = int(t.size ** (1 / 3))
    X = Bs * res[:, None]
    S = X.T @ X
    for l in range(1, lag + 1):
        G = X[l:].T @ X[:-l]
        S += (1 - l / (lag + 1)) * (G + G.T)
    Binv = np.linalg.inv(Bs.T @ Bs)
    cov = Binv @ S @ Binv * t.size / max(t.size - (J + 1), 1)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0)) / colnorm
    fit = AsymptoticFit(
        n, r, coef, exps, (float(t[0]), float(t[-1])), float(np.sqrt(np.mean(res**2))), cond, se, int(t.size)
    )
    fit.parity_alarms = [j for j in range(1, J + 1, 2) if abs(coef[j]) > parity_tol * abs(coef[0])]
    return fit


# zeta ----------------------------------------------------------------------


@dataclass
class ZetaValue:
    z: complex
    value: complex
    method: str
    error: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "z": [self.z.real, self.z.imag],
            "value": [self.value.real, self.value.imag],
            "method": self.method,
            "error": self.error,
            "diagnostics": {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.diagnostics.items()},
        }


def zeta_spectral(spec: Spectrum, z, n: int | None = None, r: int | None = None) -> ZetaValue:
    """Sum of lambda^{-z} over nonzero eigenvalues, with an integral-comparison tail bound.

    The tail beyond the largest listed eigenvalue L is estimated from a
    power-law count N(lam) ~ N(L) (lam/L)^d, d = n/r when given and fitted
    from the top quarter of the spectrum otherwise.
    """
    z = complex(z)
    nz = spec.values > 0
    vals, mult = spec.values[nz], spec.multiplicities[nz]
    value = complex(np.sum(mult * np.exp(-z * np.log(vals))))
    diag = {}
    if vals.size == 0:
        return ZetaValue(z, 0j, "spectral_sum", 0.0, diag)
    top = vals[-1]
    n_top = float(mult.sum())
    if n is not None and r is not None:
        d = n / r
    else:
        lo = top / 4
        n_lo = float(mult[vals <= lo].sum())
        d = math.log(n_top / n_lo) / math.log(4) if n_lo > 0 else 1.0
    diag["tail_exponent"] = d
    if z.real > d:
        tail = n_top * d * top ** (-z.real) / (z.real - d)
    else:
        tail = math.inf
        diag["warning"] = f"Re z = {z.real:g} <= {d:g}: truncated sum does not converge"
    diag["tail_estimate"] = tail
    return ZetaValue(z, value, "spectral_sum", tail, diag)


def _pole_check(z: complex, n: int, r: int, J: int, tol: float):
    for j in range(J + 1):
        p = (n - j) / r
        if p <= 0 and abs(p - round(p)) < 1e-12:
            continue  # cancelled by the pole of Gamma
        if abs(z - p) < tol:
            raise PoleProximityError(f"z = {z} lies within {tol:g} of the pole {p:g}; use zeta_residue")


def _quad_complex(f, a, b):
    with warnings.catch_warnings():
        # roundoff warnings are reflected in the returned error estimate
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re, ea = integrate.quad(lambda u: f(u).real, a, b, limit=400, epsabs=1e-14, epsrel=1e-11)
        im, eb = integrate.quad(lambda u: f(u).imag, a, b, limit=400, epsabs=1e-14, epsrel=1e-11)
    return complex(re, im), ea + eb


def _mellin_parts(t, values, excess, kernel_dim, n, r, z, coef):
    """Both split integrals from samples at times t (must straddle t = 1)."""
    exps = (np.arange(len(coef)) - n) / r
    asym = lambda s: sum(c * s**e for c, e in zip(coef, exps))
    # large t: excess interpolated in log-log, exponential tail past the last sample
    big = t >= 1.0
    ug = np.log(t[big])
    pos = excess[big] > 1e-300
    if pos.sum() < 4:
        # tr - k has underflowed by t = 1; bound the integral by the first value
        I_big, e_big = 0j, 0.0
        tail_big = float(excess[big][0]) * max(1.0, float(t[big][-1]) ** z.real)
    else:
        spline_big = CubicSpline(ug[pos], np.log(excess[big][pos]))
        hi_u = ug[pos][-1]
        f_big = lambda u: np.exp(z * u + spline_big(u))
        I_big, e_big = _quad_complex(f_big, 0.0, hi_u)
        slope = float(spline_big(hi_u, 1)) / math.exp(hi_u)  # d log(excess)/dt at the end
        last = math.exp(float(spline_big(hi_u)))
        T = math.exp(hi_u)
        tail_big = last * T ** (z.real - 1) / max(-slope, 1e-300)
    # small t: trace interpolated in log-log minus the fitted expansion
    small = t <= 1.0
    us = np.log(t[small])
    spline_small = CubicSpline(us, np.log(values[small]))
    f_small = lambda u: np.exp(z * u) * (np.exp(spline_small(u)) - asym(np.exp(u)))
    I_small, e_small = _quad_complex(f_small, us[0], 0.0)
    return I_big, I_small, e_big + e_small + abs(tail_big), us[0], f_small


def zeta_mellin(
    samples: HeatTraceSamples,
    kernel_dim: int,
    n: int,
    r: int,
    z,
    fit: AsymptoticFit,
    pole_tol: float = 1e-3,
) -> ZetaValue:
    """zeta(z) from sampled heat traces and fitted coefficients via the split Mellin integral.

    Samples must run from the fit floor t_min past t = 1 into the regime
    where tr - k has decayed. Below the first sample the remainder
    tr - sum a_j t^{(j-n)/r} is taken as zero; its size is estimated from
    the first sample and included in the error.
    """
    z = complex(z)
    coef = np.asarray(fit.coefficients, dtype=float)
    J = len(coef) - 1
    t, v, ex = samples.times, samples.values, samples.excess
    if t[0] >= 1.0 or t[-1] <= 1.0:
        raise NumericalRefusal("samples must straddle t = 1")
    # Gamma has poles at 0, -1, -2, ...; there zeta(-l) = (-1)^l l! a'_{n + r l}
    if abs(z.real - round(z.real)) < 1e-12 and round(z.real) <= 0 and abs(z.imag) < 1e-12:
        l = -int(round(z.real))
        j = n + r * l
        a = coef[j] if j <= J else 0.0
        if l == 0:
            a -= kernel_dim
        err = float(fit.std_errors[j]) * math.factorial(l) if j <= J else 0.0
        return ZetaValue(z, complex((-1) ** l * math.factorial(l) * a), "mellin_split", err, {"special_value": True})
    _pole_check(z, n, r, J, pole_tol)
    I_big, I_small, err, u0, f_small = _mellin_parts(t, v, ex, kernel_dim, n, r, z, coef)
    exps = (np.arange(J + 1) - n) / r
    poles = sum(c / (z + e) for c, e in zip(coef, exps))
    total = I_big - kernel_dim / z + I_small + poles
    # interpolation error: same integrals from every other sample
    half = np.unique(np.concatenate([np.arange(0, t.size, 2), [int(np.argmin(np.abs(t - 1.0))), t.size - 1]]))
    try:
        Ib2, Is2, *_ = _mellin_parts(t[half], v[half], ex[half], kernel_dim, n, r, z, coef)
        interp_err = abs((Ib2 + Is2) - (I_big + I_small))
    except ValueError:
        interp_err = math.inf
    # remainder below the first sample, modelled as R(t0) (t/t0)^p with p = (J+1-n)/r
    t0 = math.exp(u0)
    p = (J + 1 - n) / r
    trunc = abs(f_small(u0)) / abs(z + p) if z.real + p > 0 else math.inf
    # coefficient uncertainty
    coef_err = sum(
        float(se) * abs(t0 ** (z + e) / (z + e)) for se, e in zip(fit.std_errors, exps) if abs(z + e) > 0
    )
    g = complex(gamma(z))
    value = total / g
    error = (err + interp_err + trunc + coef_err) / abs(g)
    diag = {
        "large_t_integral": abs(I_big),
        "small_t_integral": abs(I_small),
        "quadrature_error": err / abs(g),
        "interpolation_error": interp_err / abs(g),
        "floor_truncation": trunc / abs(g),
        "coefficient_error": coef_err / abs(g),
    }
    return ZetaValue(z, value, "mellin_split", float(error), diag)


@dataclass
class Residue:
    pole: float
    value: float
    error: float


def zeta_residue(fit: AsymptoticFit, j: int = 0, kernel_dim: int = 0) -> Residue:
    """Residue of zeta at (n-j)/r read off the split representation: a'_j / Gamma((n-j)/r)."""
    n, r = fit.n, fit.r
    p = (n - j) / r
    if p <= 0 and abs(p - round(p)) < 1e-12:
        return Residue(p, 0.0, 0.0)
    a = float(fit.coefficients[j]) - (kernel_dim if j == n else 0)
    g = float(gamma(p))
    return Residue(p, a / g, float(fit.std_errors[j]) / abs(g))


def residue_by_limit(samples, kernel_dim, n, r, fit, j: int = 0, delta: float = 1e-2) -> Residue:
    """(z - p) zeta(z) averaged over z = p +- delta, from the Mellin continuation."""
    p = (n - j) / r
    plus = zeta_mellin(samples, kernel_dim, n, r, p + delta, fit)
    minus = zeta_mellin(samples, kernel_dim, n, r, p - delta, fit)
    val = 0.5 * (delta * plus.value - delta * minus.value)
    return Residue(p, float(val.real), float(delta * (plus.error + minus.error) / 2))


@dataclass
class NCRValue:
    tau: float
    tau_predicted: float
    error: float
    residue_method: str


def ncr_value(samples: HeatTraceSamples, kernel_dim: int, n: int, r: int, fit: AsymptoticFit, delta: float = 1e-2) -> NCRValue:
    """tau(D^{-n/r}) = r Res_{z=n/r} zeta; the residue is extracted numerically from the
    continued zeta and compared with the prediction r a_0 / Gamma(n/r)."""
    res = residue_by_limit(samples, kernel_dim, n, r, fit, 0, delta)
    predicted = r * zeta_residue(fit, 0).value
    return NCRValue(r * res.value, predicted, r * res.error, "symmetric limit of (z - n/r) zeta(z)")


# index ---------------------------------------------------------------------


@dataclass
class IndexReport:
    times: list
    supertraces: list
    dim_ker_D: int
    dim_ker_Dstar: int
    index: int
    drift: float
    max_deviation: float
    constant: bool
    equals_index: bool
    ill_posed: bool

    def to_json(self) -> dict:
        return asdict(self)


def mckean_singer(D, times=(0.1, 1.0, 10.0), threshold: float = 1e-10, rtol: float = 1e-10) -> IndexReport:
    """s(t) = tr e^{-t D*D} - tr e^{-t DD*} from the eigenvalues of both Gram matrices.

    Kernel dimensions come from singular values below ``threshold`` times the
    largest; singular values within a factor 100 of the threshold make the
    kernel dimension ill posed. Drift and deviation are relative to
    max(1, |index|).
    """
    D = np.atleast_2d(np.asarray(D, dtype=complex))
    rows, cols = D.shape
    ev_DsD = np.clip(np.linalg.eigvalsh(D.conj().T @ D), 0.0, None)
    ev_DDs = np.clip(np.linalg.eigvalsh(D @ D.conj().T), 0.0, None)
    s = []
    for t in times:
        s.append(float(np.exp(-t * ev_DsD).sum() - np.exp(-t * ev_DDs).sum()))
    sv = np.linalg.svd(D, compute_uv=False)
    top = float(sv[0]) if sv.size else 0.0
    rank = int(np.sum(sv > threshold * top)) if top > 0 else 0
    ill = bool(top > 0 and np.any((sv > threshold * top / 100) & (sv < threshold * top * 100)))
    ker_d, ker_ds = cols - rank, rows - rank
    index = ker_d - ker_ds
    scale = max(1.0, abs(index))
    drift = (max(s) - min(s)) / scale
    dev = max(abs(v - index) for v in s) / scale
    return IndexReport(
        list(map(float, times)), s, ker_d, ker_ds, index, float(drift), float(dev), drift <= rtol, dev <= rtol, ill
    )
