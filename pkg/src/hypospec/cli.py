"""Command-line runner: one subcommand per pipeline, JSON config in, JSON/CSV reports out.

Exit status is 0 when every assertion holds, 1 when one fails, 2 for a bad
configuration and 3 when a lower layer refuses on numerical grounds.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
from scipy.special import gamma

from . import __version__
from .asymptotics import (
    NumericalRefusal,
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
from .carnot import homogeneous_dimension, load_algebra, validate
from .nilmanifold import heisenberg_sublaplacian, torus_laplacian
from .oscillator import OscillatorDiscretization
from .plancherel235 import PlancherelQuadrature, alpha0_estimate
from .spectral import (
    counting_function,
    eigenvalues,
    fibered_spectrum,
    heisenberg_spectrum,
    torus_spectrum,
    weyl_fit,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# configuration -------------------------------------------------------------

SPECTRUM_KEYS = {
    "manifold": "torus2",
    "source": "analytic",
    "N": 32,
    "m_max": 8,
    "eigen_count": 10000,
    "lam_max": None,
    "workers": 1,
}

DEFAULTS = {
    "spectrum": dict(SPECTRUM_KEYS),
    "weyl": dict(SPECTRUM_KEYS, window=None, exponent_tol=0.05, constant_tol=0.05),
    "heat": dict(SPECTRUM_KEYS, J=2, floor_tol=1e-4, parity_tol=0.05),
    "zeta": dict(SPECTRUM_KEYS, J=2, floor_tol=1e-4, z=[2.0, 2.5, 3.0], residue_tol=0.02),
    "ncr": dict(SPECTRUM_KEYS, J=2, floor_tol=1e-4, ncr_tol=0.02),
    "index": {"matrix": None, "random": 20, "max_size": 500, "seed": 0, "times": [0.1, 1.0, 10.0], "rtol": 1e-10, "threshold": 1e-10},
    "alpha235": {
        "level": 1,
        "order": 8,
        "hermite_K": 100,
        "grid_N": 40000,
        "direct_level": 0,
        "homogeneity_times": [0.5, 1.0, 2.0],
        "refine_tol": 5e-4,
        "direct_tol": 5e-3,
        "homogeneity_tol": 1e-2,
        "workers": 1,
    },
    "validate": {"algebra": "carnot235", "tol": 1e-12},
}
TOLERANCE_KEYS = {"exponent_tol", "constant_tol", "parity_tol", "residue_tol", "ncr_tol", "rtol", "threshold", "floor_tol", "tol", "refine_tol", "direct_tol", "homogeneity_tol"}


def build_config(command: str, file_cfg: dict | None, overrides: dict) -> dict:
    """Defaults, then the config file, then command-line flags; unknown keys are rejected."""
    cfg = dict(DEFAULTS[command])
    for source in (file_cfg or {}, overrides):
        unknown = sorted(set(source) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
        cfg.update({k: v for k, v in source.items() if v is not None})
    for key in TOLERANCE_KEYS & set(cfg):
        if not (isinstance(cfg[key], (int, float)) and cfg[key] > 0):
            raise ConfigError(f"{key} must be a positive number")
    if "manifold" in cfg:
        _manifold(cfg["manifold"])
        if cfg["source"] not in ("analytic", "discrete"):
            raise ConfigError("source must be 'analytic' or 'discrete'")
    return cfg


def _manifold(name: str) -> tuple[str, int, int, int]:
    """(kind, d, n, r) for 'torus<d>' or 'heisenberg'."""
    if name == "heisenberg":
        return "heisenberg", 3, 4, 2
    if name.startswith("torus") and name[5:].isdigit() and int(name[5:]) >= 1:
        d = int(name[5:])
        return "torus", d, d, 2
    raise ConfigError(f"unknown manifold {name!r}")


# pipelines -----------------------------------------------------------------


class Run:
    """Collects results, data tables and assertions for one report."""

    def __init__(self):
        self.results: dict = {}
        self.assertions: list = []
        self.tables: dict = {}

    def check(self, name: str, value: float, tolerance: float, passed: bool, relation: str):
        self.assertions.append(
            {"name": name, "value": _clean(value), "tolerance": tolerance, "relation": relation, "passed": bool(passed)}
        )


def _theory(kind: str, d: int, n: int, r: int) -> float:
    """Leading heat coefficient a_0 on the unit-volume manifold."""
    if kind == "torus":
        return (4 * math.pi) ** (-d / 2)
    return 1.0 / 16.0


def _spectrum(cfg: dict):
    kind, d, n, r = _manifold(cfg["manifold"])
    if kind == "torus":
        if cfg["source"] == "analytic":
            spec = torus_spectrum(d, count=None if cfg["lam_max"] else cfg["eigen_count"], lam_max=cfg["lam_max"])
        else:
            op = torus_laplacian(d, cfg["N"])
            spec = eigenvalues(op, k=min(cfg["eigen_count"], op.dim))
    else:
        if cfg["source"] == "analytic":
            spec = heisenberg_spectrum(cfg["lam_max"] or 1e4)
        else:
            ops = heisenberg_sublaplacian(cfg["N"], cfg["m_max"], cfg["workers"])
            dim = ops[0].dim
            spec = fibered_spectrum(ops, min(cfg["eigen_count"], dim) if dim > 4096 else None, cfg["workers"])
    return spec, kind, d, n, r


def _spectrum_summary(spec) -> dict:
    return {
        "count": spec.count,
        "distinct": int(spec.values.size),
        "kernel_dim": spec.kernel_dim,
        "min_nonzero": float(spec.values[spec.values > 0][0]) if np.any(spec.values > 0) else None,
        "max": spec.max_value,
        "trust_cutoff": spec.trust_cutoff,
        "source": spec.source,
        "partial": spec.partial,
    }


def run_spectrum(cfg, run: Run):
    spec, kind, *_ = _spectrum(cfg)
    run.results["spectrum"] = _spectrum_summary(spec)
    run.tables["spectrum"] = (["value", "multiplicity"], list(zip(spec.values.tolist(), spec.multiplicities.tolist())))
    run.check("kernel is the constants", spec.kernel_dim, 1, spec.kernel_dim == 1, "kernel dimension ==")
    return spec


def run_weyl(cfg, run: Run):
    spec, kind, d, n, r = _spectrum(cfg)
    a0 = _theory(kind, d, n, r)
    fit = weyl_fit(spec, n, r, tuple(cfg["window"]) if cfg["window"] else None, a0)
    run.results["spectrum"] = _spectrum_summary(spec)
    run.results["weyl"] = fit.to_json()
    dev = abs(fit.exponent_deviation)
    run.check("counting exponent vs n/r", dev, cfg["exponent_tol"], dev <= cfg["exponent_tol"], "relative deviation <=")
    run.check("implied a0 positive", fit.implied_a0, 0, fit.implied_a0 > 0, ">")
    if kind == "torus":
        cdev = abs(fit.constant_est / fit.theory_constant - 1)
        run.check("Weyl constant vs vol(ball)/(2pi)^d", cdev, cfg["constant_tol"], cdev <= cfg["constant_tol"], "relative deviation <=")
    lam = np.geomspace(*fit.window, 60)
    run.tables["counting"] = (["lambda", "N", "fit"], [[float(l), int(c), fit.constant_est * l**fit.exponent_est] for l, c in zip(lam, counting_function(spec, lam))])


def _heat(cfg, run: Run):
    spec, kind, d, n, r = _spectrum(cfg)
    w = fit_window(spec, n, r, floor_tol=cfg["floor_tol"])
    samples = heat_trace(spec, log_times(w.t_min, max(5.0, 20 * w.t_max), 40))
    fit = fit_heat_coefficients(samples, n, r, cfg["J"], w)
    run.results["spectrum"] = _spectrum_summary(spec)
    run.results["window"] = {"t_min": w.t_min, "t_max": w.t_max, "decades": w.decades, "floor_rule": w.floor_rule, "top_rule": w.top_rule}
    run.results["fit"] = fit.to_json()
    run.results["a0_theory"] = _theory(kind, d, n, r)
    run.tables["heat_trace"] = (["t", "trace", "excess"], [[float(a), float(b), float(c)] for a, b, c in zip(samples.times, samples.values, samples.excess)])
    return spec, samples, fit, n, r


def run_heat(cfg, run: Run):
    _, _, fit, _, _ = _heat(cfg, run)
    run.check("a0 positive", fit.a0, 0, fit.a0 > 0, ">")
    for j, ratio in fit.odd_ratios().items():
        run.check(f"|a_{j}| / a_0 (odd)", ratio, cfg["parity_tol"], ratio <= cfg["parity_tol"], "<=")


def run_zeta(cfg, run: Run):
    spec, samples, fit, n, r = _heat(cfg, run)
    k = spec.kernel_dim
    rows = []
    for z in cfg["z"]:
        zs = zeta_spectral(spec, z, n, r)
        zm = zeta_mellin(samples, k, n, r, z, fit)
        diff = abs(zs.value - zm.value)
        bar = zs.error + zm.error
        rows.append([float(z), zs.value.real, zs.error, zm.value.real, zm.error, diff])
        if z >= n / r + 1:
            run.check(f"spectral vs Mellin at z={z:g}", diff, bar, diff <= bar, "|difference| <= combined error")
    run.tables["zeta"] = (["z", "spectral", "spectral_error", "mellin", "mellin_error", "difference"], rows)
    res = zeta_residue(fit, 0, k)
    pred = fit.a0 / float(gamma(n / r))
    kind, d, *_ = _manifold(cfg["manifold"])
    exact = _theory(kind, d, n, r) / float(gamma(n / r))
    run.results["residue"] = {"pole": res.pole, "value": res.value, "error": res.error, "a0_over_gamma": pred, "theory": exact}
    dev = abs(res.value / exact - 1)
    run.check("residue at n/r vs a0/Gamma(n/r)", dev, cfg["residue_tol"], dev <= cfg["residue_tol"], "relative deviation <=")


def run_ncr(cfg, run: Run):
    spec, samples, fit, n, r = _heat(cfg, run)
    k = spec.kernel_dim
    v = ncr_value(samples, k, n, r, fit)
    kind, d, *_ = _manifold(cfg["manifold"])
    theory = r * _theory(kind, d, n, r) / float(gamma(n / r))
    dev = abs(v.tau / theory - 1)
    run.results["ncr"] = {"tau": v.tau, "error": v.error, "predicted_from_fit": v.tau_predicted, "theory": theory, "method": v.residue_method}
    run.check("tau(D^{-n/r}) vs r a0/Gamma(n/r)", dev, cfg["ncr_tol"], dev <= cfg["ncr_tol"], "relative deviation <=")
    # D -> D^2 doubles the order, so tau of (D^2)^{-n/2r} must be unchanged
    sq = spec.map(lambda x: x * x, "^2")
    w2 = fit_window(sq, n, 2 * r, floor_tol=cfg["floor_tol"])
    s2 = heat_trace(sq, log_times(w2.t_min, max(5.0, 20 * w2.t_max), 40))
    f2 = fit_heat_coefficients(s2, n, 2 * r, cfg["J"], w2)
    v2 = ncr_value(s2, k, n, 2 * r, f2)
    dev2 = abs(v2.tau / v.tau - 1)
    run.results["ncr_squared"] = {"tau": v2.tau, "error": v2.error, "predicted_from_fit": v2.tau_predicted}
    run.check("tau invariant under D -> D^2", dev2, cfg["ncr_tol"], dev2 <= cfg["ncr_tol"], "relative deviation <=")


def _read_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[complex(x.strip().replace("i", "j")) for x in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
    M = np.array(rows)
    return M.real if np.all(M.imag == 0) else M


def random_operators(count: int, max_size: int, seed: int):
    """Random rectangular matrices, some with planted rank deficiency, scaled by 1/sqrt(columns)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        rows, cols = (int(v) for v in rng.integers(1, max_size + 1, 2))
        if i == 0:
            rows, cols = max_size, max_size - 7
        if i % 3 == 2:
            rank = int(rng.integers(0, min(rows, cols) + 1))
            M = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
        else:
            M = rng.standard_normal((rows, cols))
        out.append(M / math.sqrt(cols))
    return out


def run_index(cfg, run: Run):
    mats = [_read_matrix(cfg["matrix"])] if cfg["matrix"] else random_operators(cfg["random"], cfg["max_size"], cfg["seed"])
    rows = []
    reports = []
    for i, D in enumerate(mats):
        rep = mckean_singer(D, cfg["times"], cfg["threshold"], cfg["rtol"])
        reports.append(rep.to_json() | {"shape": list(D.shape)})
        rows.append([i, D.shape[0], D.shape[1], rep.index] + list(rep.supertraces))
        run.check(f"operator {i}: s(t) constant", rep.drift, cfg["rtol"], rep.constant, "relative drift <=")
        run.check(f"operator {i}: s(t) = index", rep.max_deviation, cfg["rtol"], rep.equals_index, "relative deviation <=")
    run.results["operators"] = reports
    run.tables["supertrace"] = (["operator", "rows", "cols", "index"] + [f"s({t:g})" for t in cfg["times"]], rows)


def run_alpha235(cfg, run: Run):
    quad = PlancherelQuadrature(level=cfg["level"], order=cfg["order"])
    res = alpha0_estimate(
        quad,
        OscillatorDiscretization("hermite", cfg["hermite_K"]),
        OscillatorDiscretization("grid", cfg["grid_N"]),
        PlancherelQuadrature(level=cfg["direct_level"], order=cfg["order"]),
        cfg["homogeneity_times"],
        cfg["workers"],
        refine_tol=cfg["refine_tol"],
        direct_tol=cfg["direct_tol"],
        homogeneity_tol=cfg["homogeneity_tol"],
    )
    doc = res.to_json()
    doc["diagnostics"].pop("seconds", None)
    run.results["alpha235"] = doc
    cc = res.cross_checks
    run.check("two refinement levels agree to 3 digits", cc["refinement_relative_change"], cfg["refine_tol"], cc["refinement_agree_3_digits"], "relative change <=")
    run.check("reduced vs direct", cc["reduced_vs_direct_relative"], cfg["direct_tol"], cc["reduced_vs_direct_relative"] <= cfg["direct_tol"], "relative deviation <=")
    run.check("hermite vs grid", cc["hermite_vs_grid_difference"], cc["hermite_vs_grid_error_bar"], cc["hermite_vs_grid_within_error"], "|difference| <= combined error")
    run.check("k_t t^5 constant", cc["homogeneity_max_deviation"], cfg["homogeneity_tol"], cc["homogeneity_max_deviation"] <= cfg["homogeneity_tol"], "max relative deviation <=")
    run.tables["reduced_integrand"] = (["b", "zeta_K(b)(5)"], [[float(b), float(z)] for b, z in zip(res.reduced_nodes, res.reduced_integrand)])


def run_validate(cfg, run: Run):
    alg = load_algebra(cfg["algebra"])
    problems = validate(alg, cfg["tol"])
    run.results["algebra"] = alg.to_json()
    run.results["homogeneous_dimension"] = homogeneous_dimension(alg)
    run.results["violations"] = problems
    run.check("structure constants valid", len(problems), 0, not problems, "violations ==")


PIPELINES = {
    "spectrum": run_spectrum,
    "weyl": run_weyl,
    "heat": run_heat,
    "zeta": run_zeta,
    "ncr": run_ncr,
    "index": run_index,
    "alpha235": run_alpha235,
    "validate": run_validate,
}


# reports -------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars and arrays to Python, complex to [re, im], non-finite to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(float(x.real)), _clean(float(x.imag))] if x.imag else _clean(float(x.real))
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def run(command: str, cfg: dict) -> tuple[dict, dict]:
    """Execute a pipeline; returns (report, tables)."""
    r = Run()
    start = time.perf_counter()
    PIPELINES[command](cfg, r)
    report = {
        "command": command,
        "config": _clean(cfg),
        "version": __version__,
        "results": _clean(r.results),
        "assertions": r.assertions,
        "passed": all(a["passed"] for a in r.assertions),
        "metadata": {"wall_time_s": time.perf_counter() - start, "python": platform.python_version(), "platform": platform.platform()},
    }
    return report, r.tables


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _walk(prefix: str, obj, lines: list):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _walk(f"{prefix}.{k}" if prefix else k, obj[k], lines)
    elif isinstance(obj, list) and obj and isinstance(obj[0], dict):
        for i, v in enumerate(obj):
            _walk(f"{prefix}[{i}]", v, lines)
    else:
        lines.append(f"  {prefix} = {_fmt(obj)}")


def report_render(report: dict) -> str:
    """Deterministic text summary: wall-clock metadata is left out, floats use 6 significant digits."""
    lines = [f"hypospec {report['version']} :: {report['command']}", "config:"]
    _walk("", report["config"], lines)
    lines.append("results:")
    _walk("", report["results"], lines)
    lines.append("assertions:")
    for a in report["assertions"]:
        tag = "PASS" if a["passed"] else "FAIL"
        lines.append(f"  {tag} {a['name']}: {_fmt(a['value'])} ({a['relation']} {_fmt(a['tolerance'])})")
    lines.append("summary: " + ("PASS" if report["passed"] else "FAIL"))
    return "\n".join(lines) + "\n"


def write_outputs(out: Path, report: dict, tables: dict):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(report_render(report))
    if tables:
        data = out / "data"
        data.mkdir(exist_ok=True)
        for name, (header, rows) in sorted(tables.items()):
            with open(data / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


# argument parsing ------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _add_spectrum_flags(p):
    p.add_argument("--manifold", help="torus<d> or heisenberg")
    p.add_argument("--source", choices=["analytic", "discrete"])
    p.add_argument("--N", type=int, help="grid points per direction")
    p.add_argument("--m-max", dest="m_max", type=int, help="largest central frequency")
    p.add_argument("--eigen-count", dest="eigen_count", type=int)
    p.add_argument("--lam-max", dest="lam_max", type=float)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypospec", description="Spectral experiments for hypoelliptic operators on nilmanifolds")
    parser.add_argument("--version", action="version", version=f"hypospec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name) for name in PIPELINES}
    for name, p in parsers.items():
        p.add_argument("--config", type=Path, help="JSON file with subcommand keys")
        p.add_argument("--out", type=Path, help="directory for report.json and data/*.csv")
        p.add_argument("--quiet", action="store_true", help="do not print the text report")
    for name in ("spectrum", "weyl", "heat", "zeta", "ncr"):
        _add_spectrum_flags(parsers[name])
    parsers["weyl"].add_argument("--window", type=_floats, help="lo,hi")
    parsers["weyl"].add_argument("--exponent-tol", dest="exponent_tol", type=float)
    parsers["weyl"].add_argument("--constant-tol", dest="constant_tol", type=float)
    for name in ("heat", "zeta", "ncr"):
        parsers[name].add_argument("--J", type=int, help="highest fitted coefficient index")
        parsers[name].add_argument("--floor-tol", dest="floor_tol", type=float)
    parsers["heat"].add_argument("--parity-tol", dest="parity_tol", type=float)
    parsers["zeta"].add_argument("--z", type=_floats, help="comma-separated real points")
    parsers["zeta"].add_argument("--residue-tol", dest="residue_tol", type=float)
    parsers["ncr"].add_argument("--ncr-tol", dest="ncr_tol", type=float)
    p = parsers["index"]
    p.add_argument("--matrix", help="CSV file with the matrix D")
    p.add_argument("--random", type=int, help="number of random operators")
    p.add_argument("--max-size", dest="max_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--times", type=_floats)
    p.add_argument("--rtol", type=float)
    p.add_argument("--threshold", type=float)
    p = parsers["alpha235"]
    p.add_argument("--level", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--hermite-K", dest="hermite_K", type=int)
    p.add_argument("--grid-N", dest="grid_N", type=int)
    p.add_argument("--direct-level", dest="direct_level", type=int)
    p.add_argument("--homogeneity-times", dest="homogeneity_times", type=_floats)
    p.add_argument("--refine-tol", dest="refine_tol", type=float)
    p.add_argument("--direct-tol", dest="direct_tol", type=float)
    p.add_argument("--homogeneity-tol", dest="homogeneity_tol", type=float)
    p.add_argument("--workers", type=int)
    p = parsers["validate"]
    p.add_argument("--algebra", help="abelian:<d>, heisenberg:<k>, carnot235 or a JSON file")
    p.add_argument("--tol", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out", "quiet") and v is not None}
    try:
        file_cfg = json.loads(args.config.read_text()) if args.config else None
        if file_cfg is not None and not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = build_config(args.command, file_cfg, flags)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, tables = run(args.command, cfg)
    except (NumericalRefusal, ValueError) as exc:
        report = {
            "command": args.command,
            "config": _clean(cfg),
            "version": __version__,
            "results": {"refusal": f"{type(exc).__name__}: {exc}"},
            "assertions": [],
            "passed": False,
            "metadata": {},
        }
        if args.out is not None:
            write_outputs(args.out, report, {})
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    if args.out is not None:
        write_outputs(args.out, report, tables)
    if not args.quiet:
        sys.stdout.write(report_render(report))
    return EXIT_OK if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
