"""Scenario runner: ``corrlab run | list | validate``.

A scenario is one JSON file.  ``run`` validates it, executes the scenario
deterministically and writes ``manifest.json``, CSV plot data and
``report.json`` (one entry per check) into the output directory.

Exit codes: 0 ok, 1 runtime error, 2 validation error, 3 failed check
under ``--strict``.
"""
import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .correlation_lab import (cross_branch_correlation, derivative_green_identity,
                              empirical_correlation, ergodic_convergence, exact_scalar_formula,
                              pick_travel_time, symmetric_lags, theoretical_correlation,
                              white_noise_closed_form, white_noise_closed_form_derivative,
                              green_without_zero_mode)
from .propagation import (FirstOrderModel, SecondOrderModel, TwoComponentModel,
                          simulate_stations)
from .spectral_core import DiscreteDomain, build_laplacian
from .stochastic_source import (NoiseSpec, bump_multiplier, covariance_kernel,
                                exclusion_window)
from .waveguide_dispersion import (VelocityProfile, dispersion_table, square_well_eigenvalues,
                                   sturm_liouville_eigs)

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_CHECK = 0, 1, 2, 3

SCENARIOS = {
    "white_noise_green": "derivative of the white-noise correlation equals -G/(4a)",
    "exact_scalar": "operator covariance formula against the scalar closed form",
    "banded_noise_semiclassical": "ergodic estimate of band-limited correlations",
    "two_component_suppression": "cross-branch correlations vanish as eps -> 0",
    "waveguide_dispersion": "trapped spectrum of a layered waveguide",
    "ray_traveltime": "travel time recovered from the correlation peak",
    "ergodic_convergence": "O(1/T) variance decay of the time average",
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_STATIONS = {"type": "array", "items": {"type": "integer", "minimum": 0},
             "minItems": 2, "maxItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "corrlab scenario",
    "type": "object",
    "required": ["scenario", "seed"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["domain"],
            "additionalProperties": False,
            "properties": {
                "domain": {
                    "type": "object",
                    "required": ["kind", "counts"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["circle_1d", "torus_2d", "interval_neumann_1d"]},
                        "counts": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                   "minItems": 1, "maxItems": 2},
                        "modes": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                  "minItems": 1, "maxItems": 2},
                        "extent": {"type": "array", "items": _POS, "minItems": 1, "maxItems": 2},
                    },
                },
                "variant": {"enum": ["second_order", "first_order", "two_component"]},
                "a": _POS,
                "eps": _POS,
                "h0": {"enum": ["quadratic", "abs"]},
                "h1": {"type": "number", "exclusiveMaximum": 0},
                "speed": _POS,
            },
        },
        "noise": {
            "type": "object",
            "required": ["dt"],
            "additionalProperties": False,
            "properties": {
                "dt": _POS,
                "band": {"type": "array", "prefixItems": [_NUM, {"type": ["number", "null"]}],
                         "minItems": 2, "maxItems": 2},
                "taps": {"type": "array", "items": _NUM, "minItems": 1},
                "real": {"type": "boolean"},
                "bump": {"type": "array", "items": {"type": "number", "minimum": 0},
                         "minItems": 2, "maxItems": 2},
                "exclusion": {
                    "type": "object",
                    "required": ["radius", "ramp"],
                    "additionalProperties": False,
                    "properties": {"radius": _POS, "ramp": _POS},
                },
            },
        },
        "stations": _STATIONS,
        "lags": {
            "type": "object",
            "required": ["max", "spacing"],
            "additionalProperties": False,
            "properties": {"max": _POS, "spacing": _POS, "probe": _NUM},
        },
        "T": _POS,
        "T_list": {"type": "array", "items": _POS, "minItems": 3},
        "realizations": {"type": "integer", "minimum": 2},
        "eps_list": {"type": "array", "items": _POS, "minItems": 2},
        "pick": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "band": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "derivative_order": {"type": "integer", "minimum": 1, "maximum": 2},
            },
        },
        "waveguide": {
            "type": "object",
            "required": ["N0", "N_inf", "Z0", "xi"],
            "additionalProperties": False,
            "properties": {
                "N0": _POS,
                "N_inf": _POS,
                "Z0": {"type": "number", "exclusiveMaximum": 0},
                "xi": {"type": "array", "items": _POS, "minItems": 3, "maxItems": 3},
                "per_layer": {"type": "integer", "minimum": 10},
                "oracle_xi": _POS,
                "oracle_per_layer": {"type": "integer", "minimum": 10},
            },
        },
        "tolerances": {"type": "object", "additionalProperties": _NUM},
    },
    "allOf": [
        {"if": {"properties": {"scenario": {"const": s}}},
         "then": {"required": req}}
        for s, req in [
            ("white_noise_green", ["model", "stations", "lags"]),
            ("exact_scalar", ["model", "noise", "stations", "lags"]),
            ("banded_noise_semiclassical",
             ["model", "noise", "stations", "lags", "T", "realizations"]),
            ("two_component_suppression", ["model", "noise", "stations", "lags", "eps_list"]),
            ("waveguide_dispersion", ["waveguide"]),
            ("ray_traveltime", ["model", "noise", "stations", "lags", "T", "realizations"]),
            ("ergodic_convergence",
             ["model", "noise", "stations", "lags", "T_list", "realizations"]),
        ]
    ],
}

DEFAULT_TOL = {
    "derivative_residual": 1e-10,
    "fd_order": 1.9,
    "evenness": 1e-14,
    "formula_agreement": 1e-8,
    "hermitian": 1e-10,
    "within_3sigma": 0.95,
    "suppression_ratio": 0.1,
    "oracle_relative": 1e-6,
    "slope_band": 0.15,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Read a scenario file; a manifest is accepted and its ``config`` used."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if isinstance(data, dict) and "config" in data and "config_sha256" in data:
        data = data["config"]
    return data


def validate_config(cfg) -> dict:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _domain(m: dict) -> DiscreteDomain:
    d = m["domain"]
    return DiscreteDomain(d["kind"], tuple(d["counts"]),
                          None if "extent" not in d else tuple(d["extent"]),
                          None if "modes" not in d else tuple(d["modes"]))


def build_model(m: dict, eps=None):
    dec = build_laplacian(_domain(m))
    variant = m.get("variant", "second_order")
    eps = m.get("eps", 1.0) if eps is None else eps
    if variant == "first_order":
        h0 = m.get("h0", "quadratic")
        if h0 == "quadratic":
            def fn(xi):
                return np.sum(xi ** 2, axis=1)
        else:
            def fn(xi):
                return np.sqrt(np.sum(xi ** 2, axis=1))
        return FirstOrderModel(dec, fn, m.get("h1", -1.0), eps)
    if variant == "two_component":
        return TwoComponentModel(dec, m.get("a", 0.5), eps)
    return SecondOrderModel(dec, m.get("a", 0.5), eps)


def build_noise(n: dict, domain: DiscreteDomain, seed: int, eps: float = 1.0,
                exclude=None) -> NoiseSpec:
    band = None
    if "band" in n:
        lo, hi = n["band"]
        band = (lo, np.inf if hi is None else hi)
    window = None
    if "exclusion" in n and exclude is not None:
        ex = n["exclusion"]
        window = exclusion_window(domain, exclude, ex["radius"], ex["ramp"])
    return NoiseSpec(domain, n["dt"], band=band,
                     taps=None if "taps" not in n else np.asarray(n["taps"], float),
                     multiplier=None if "bump" not in n else bump_multiplier(*n["bump"]),
                     window_table=window, eps=eps, seed=seed, real=n.get("real", False))


def _tol(cfg, key):
    return float(cfg.get("tolerances", {}).get(key, DEFAULT_TOL[key]))


def _check(name, value, tolerance, passed) -> dict:
    return {"check": name, "value": float(value), "tolerance": float(tolerance),
            "pass": bool(passed)}


# ---------------------------------------------------------------------------
# output


class Output:
    """Writes confined to one directory; CSV floats use ``repr`` for bit-stability."""

    def __init__(self, root: Path):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if self.root not in p.parents:
            raise ValueError(f"refusing to write outside {self.root}: {name}")
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) for v in r])
        self.files.append(name)
        return p

    def json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True))
        return p


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# simulation (picklable entry point for workers)


def _simulate_one(args):
    mcfg, ncfg, seed, steps, stations, r = args
    model = build_model(mcfg)
    spec = build_noise(ncfg, model.dec.domain, seed, model.eps)
    return simulate_stations(model, spec, steps, stations, realization_index=r)


def _simulate(cfg, steps, workers):
    jobs = [(cfg["model"], cfg["noise"], cfg["seed"], steps, list(cfg["stations"]), r)
            for r in range(cfg["realizations"])]
    if workers <= 1:
        return [_simulate_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_one, jobs))


# ---------------------------------------------------------------------------
# scenarios


def run_white_noise_green(cfg, out, workers):
    model = build_model(cfg["model"])
    A, B = cfg["stations"]
    lag = cfg["lags"]
    tau = np.arange(1, int(round(lag["max"] / lag["spacing"])) + 1) * lag["spacing"]
    rep = derivative_green_identity(model, tau, A, B)
    even = white_noise_closed_form(model, np.concatenate([-tau, tau]), A, B)
    ev = float(np.max(np.abs(even[:tau.size] - even[tau.size:])))
    c = white_noise_closed_form(model, tau, A, B)
    dc = white_noise_closed_form_derivative(model, tau, A, B)
    g = green_without_zero_mode(model, tau, A, B)
    out.csv("white_noise_green.csv", ["tau", "C", "dC_dtau", "minus_G_over_4a"],
            zip(tau, c.real, dc.real, -g.real / (4 * model.a)))
    return [
        _check("derivative_residual", rep["analytic_residual"], _tol(cfg, "derivative_residual"),
               rep["analytic_residual"] < _tol(cfg, "derivative_residual")),
        _check("fd_order", rep["order"], _tol(cfg, "fd_order"),
               rep["order"] >= _tol(cfg, "fd_order")),
        _check("evenness", ev, _tol(cfg, "evenness"), ev <= _tol(cfg, "evenness")),
    ]


def run_exact_scalar(cfg, out, workers):
    m = dict(cfg["model"], variant="first_order")
    model = build_model(m)
    spec = build_noise(cfg["noise"], model.dec.domain, cfg["seed"], model.eps)
    A, B = cfg["stations"]
    lag = cfg["lags"]
    tau = symmetric_lags(lag["max"], lag["spacing"])
    ck = covariance_kernel(spec, model.dec)
    th = theoretical_correlation(model, ck, tau, [(A, B), (B, A)])
    late = tau > spec.t0 + 1e-12
    ex = exact_scalar_formula(model, spec, tau[late], [(A, B)])
    scale = np.max(np.abs(ex.values))
    agree = float(np.max(np.abs(ex.values[0] - th.values[0][late])) / scale)
    herm = float(np.max(np.abs(th.values[0] - th.values[1][::-1].conj())) / scale)
    exv = np.full(tau.size, np.nan, complex)
    exv[late] = ex.values[0]
    out.csv("exact_scalar.csv", ["tau", "theory_re", "theory_im", "closed_re", "closed_im"],
            zip(tau, th.values[0].real, th.values[0].imag, exv.real, exv.imag))
    return [
        _check("formula_agreement", agree, _tol(cfg, "formula_agreement"),
               agree <= _tol(cfg, "formula_agreement")),
        _check("hermitian", herm, _tol(cfg, "hermitian"), herm <= _tol(cfg, "hermitian")),
    ]


def _empirical_vs_theory(cfg, out, workers, name):
    model = build_model(cfg["model"])
    spec = build_noise(cfg["noise"], model.dec.domain, cfg["seed"], model.eps)
    A, B = cfg["stations"]
    steps = int(round(cfg["T"] / spec.dt)) + 1
    trajs = _simulate(cfg, steps, workers)
    stride = max(1, int(round(cfg["lags"]["spacing"] / spec.dt)))
    emp = empirical_correlation(trajs, [(A, B)], cfg["lags"]["max"], lag_stride=stride)
    th = theoretical_correlation(model, covariance_kernel(spec, model.dec), emp.tau, [(A, B)])
    out.csv(f"{name}.csv", ["tau", "emp_re", "emp_im", "sigma", "theory_re", "theory_im"],
            zip(emp.tau, emp.values[0].real, emp.values[0].imag, emp.sigma[0],
                th.values[0].real, th.values[0].imag))
    return model, spec, emp, th


def run_banded_noise(cfg, out, workers):
    _, _, emp, th = _empirical_vs_theory(cfg, out, workers, "banded_noise")
    z = np.abs(emp.values[0] - th.values[0]) / emp.sigma[0]
    frac = float(np.mean(z <= 3))
    return [_check("within_3sigma", frac, _tol(cfg, "within_3sigma"),
                   frac >= _tol(cfg, "within_3sigma"))]


def run_ray_traveltime(cfg, out, workers):
    model, spec, emp, th = _empirical_vs_theory(cfg, out, workers, "traveltime_correlation")
    A, B = cfg["stations"]
    pts = model.dec.domain.points()
    d = np.abs(pts[A] - pts[B])
    if model.dec.domain.fourier:
        d = np.minimum(d, np.asarray(model.dec.domain.extent) - d)
    expected = float(np.sqrt(np.sum(d ** 2))) / cfg["model"].get("speed", 1.0)
    pk = cfg.get("pick", {})
    band = None if "band" not in pk else tuple(pk["band"])
    order = pk.get("derivative_order", 2)
    pick = pick_travel_time(emp, (A, B), band, order)
    pick_th = pick_travel_time(th, (A, B), band, order)
    out.csv("traveltime_pick.csv", ["expected", "picked_empirical", "picked_theory", "snr"],
            [(expected, pick["tau"], pick_th["tau"], pick["snr"])])
    err = abs(pick["tau"] - expected)
    return [
        _check("traveltime_empirical", err, emp.lag_spacing, err <= emp.lag_spacing + 1e-12),
        _check("traveltime_theory", abs(pick_th["tau"] - expected), emp.lag_spacing,
               abs(pick_th["tau"] - expected) <= emp.lag_spacing + 1e-12),
    ]


def run_ergodic(cfg, out, workers):
    dt = cfg["noise"]["dt"]
    steps = int(round(max(cfg["T_list"]) / dt)) + 1
    trajs = _simulate(cfg, steps, workers)
    lag = cfg["lags"].get("probe", 0.0)
    res = ergodic_convergence(trajs, tuple(cfg["stations"]), lag, cfg["T_list"])
    out.csv("ergodic_convergence.csv", ["T", "variance"], zip(res["T"], res["variance"]))
    band = _tol(cfg, "slope_band")
    return [_check("variance_slope", res["slope"], band, abs(res["slope"] + 1) <= band)]


def run_two_component(cfg, out, workers):
    A, B = cfg["stations"]
    lag = cfg["lags"]
    tau = symmetric_lags(lag["max"], lag["spacing"])
    rows = []
    for eps in sorted(cfg["eps_list"], reverse=True):
        model = build_model(dict(cfg["model"], variant="two_component"), eps=eps)
        spec = build_noise(cfg["noise"], model.dec.domain, cfg["seed"], eps, exclude=B)
        radius = cfg["noise"].get("exclusion", {}).get("radius")
        r = cross_branch_correlation(model, spec, tau, A, B, exclusion_radius=radius)
        rows.append((eps, r["ratio"], r["ratio_all_lags"], r["max_pp"], r["max_pm"]))
    out.csv("two_component_suppression.csv",
            ["eps", "ratio", "ratio_all_lags", "max_pp", "max_pm"], rows)
    ratios = [r[1] for r in rows]
    mono = all(b < a for a, b in zip(ratios, ratios[1:]))
    return [
        _check("monotone_decrease", float(mono), 1.0, mono),
        _check("suppression_ratio", ratios[-1], _tol(cfg, "suppression_ratio"),
               ratios[-1] < _tol(cfg, "suppression_ratio")),
    ]


def run_waveguide(cfg, out, workers):
    w = cfg["waveguide"]
    prof = VelocityProfile.square_well(w["N0"], w["N_inf"], w["Z0"])
    lo, hi, n = w["xi"]
    xi = np.linspace(lo, hi, int(n))
    table = dispersion_table(prof, 0.0, xi, per_layer=w.get("per_layer", 200))
    table.to_csv(out.path("dispersion.csv"))
    out.files.append("dispersion.csv")
    lam = table.eigenvalues[0]
    xi2 = xi[:, None] ** 2
    finite = np.isfinite(lam)
    inside = bool(np.all((lam[finite] > (w["N0"] * xi2 * np.ones_like(lam))[finite])
                         & (lam[finite] < (w["N_inf"] * xi2 * np.ones_like(lam))[finite])))
    counts = table.mode_counts()[0]
    mono = bool(np.all(np.diff(counts) >= 0))
    xo = w.get("oracle_xi", float(hi))
    res = sturm_liouville_eigs(prof, 0.0, xo, per_layer=w.get("oracle_per_layer", 3200))
    orc = square_well_eigenvalues(w["N0"], w["N_inf"], abs(w["Z0"]), xo)
    k = min(orc.size, res.eigenvalues.size)
    rel = float(np.max(np.abs(res.eigenvalues[:k] - orc[:k]) / orc[:k])) if k else np.inf
    same = orc.size == res.eigenvalues.size
    return [
        _check("eigenvalues_in_band", float(inside), 1.0, inside),
        _check("mode_count_nondecreasing", float(mono), 1.0, mono),
        _check("oracle_relative", rel, _tol(cfg, "oracle_relative"),
               same and rel <= _tol(cfg, "oracle_relative")),
    ]


RUNNERS = {
    "white_noise_green": run_white_noise_green,
    "exact_scalar": run_exact_scalar,
    "banded_noise_semiclassical": run_banded_noise,
    "two_component_suppression": run_two_component,
    "waveguide_dispersion": run_waveguide,
    "ray_traveltime": run_ray_traveltime,
    "ergodic_convergence": run_ergodic,
}


def run(cfg: dict, out_dir=None, workers: int = 1) -> dict:
    """Validate and execute one scenario; returns the report dictionary."""
    cfg = json.loads(json.dumps(cfg))
    if os.environ.get("CORRLAB_SEED"):
        try:
            cfg["seed"] = int(os.environ["CORRLAB_SEED"])
        except ValueError as exc:
            raise ConfigError("CORRLAB_SEED must be an integer") from exc
    validate_config(cfg)
    root = out_dir or cfg.get("output_dir") or os.path.join("corrlab_out", cfg["scenario"])
    out = Output(root)
    checks = RUNNERS[cfg["scenario"]](cfg, out, workers)
    report = {"scenario": cfg["scenario"], "checks": checks,
              "pass": all(c["pass"] for c in checks)}
    out.json("report.json", report)
    manifest = {
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "workers": workers,
        "versions": {"corrlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "files": {name: sha256_file(out.path(name)) for name in sorted(out.files)},
    }
    out.json("manifest.json", manifest)
    return report


def list_scenarios() -> list:
    return [(name, desc) for name, desc in SCENARIOS.items()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="corrlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("config")
    p_run.add_argument("--strict", action="store_true", help="exit 3 if any check fails")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--out", default=None)
    sub.add_parser("list", help="list scenarios")
    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    if args.command == "list":
        width = max(len(n) for n in SCENARIOS)
        for name, desc in list_scenarios():
            print(f"{name:<{width}}  {desc}")
        return EXIT_OK
    try:
        cfg = validate_config(load_config(args.config))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(f"{args.config}: valid ({cfg['scenario']})")
        return EXIT_OK
    if args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = run(cfg, args.out, args.workers)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for c in report["checks"]:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"{status}  {c['check']}: {c['value']:.3e} (tolerance {c['tolerance']:.3e})")
    if args.strict and not report["pass"]:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
