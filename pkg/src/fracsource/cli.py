"""Command-line front end: spectrum | synth | invert | verify | plotdata.

Exit codes: 0 success, 2 validation failure, 3 numerical failure. All output
files go through atomic writes and are byte-identical across reruns with the
same config and seed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from ._parallel import map_maybe_parallel
from .config import (
    ExperimentConfig,
    RunManifest,
    build_inversion_config,
    build_source_model,
    dump_config,
    load_config,
    trace_from_csv,
    trace_to_csv,
    trace_to_json,
    write_atomic,
)
from .disc_spectrum import build_spectrum, eigenfunction_eval, project_function, spectrum_to_json
from .errors import AccuracyError, ConditioningError, FracsourceError, ValidationError
from .forward_model import FluxTrace, flux_trace, verify_measurement_identity
from .inversion import predicted_flux, reconstruct, result_to_json
from .laplace_model import LaplacePoint, LaplaceSamples, laplace_flux_model, numeric_laplace
from .specfun import mittag_leffler_neg_real


def _info(args, msg):
    if not args.quiet:
        print(msg)


def _out_dir(cfg: ExperimentConfig, args) -> str:
    return args.out or cfg.output["directory"]


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.raw["noise"]["seed"] = int(args.seed)
    return cfg


def _emit(manifest: RunManifest, directory: str, name: str, data: str):
    path = os.path.join(directory, name)
    write_atomic(path, data)
    manifest.add(path, data)


def _finish(manifest: RunManifest, directory: str):
    write_atomic(os.path.join(directory, "manifest.json"), manifest.to_json())


def cmd_spectrum(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    directory = _out_dir(cfg, args)
    spectrum = build_spectrum(float(cfg.spectrum["lambda_max"]))
    manifest = RunManifest.for_config(cfg)
    _emit(manifest, directory, "spectrum.json", spectrum_to_json(spectrum))
    _finish(manifest, directory)
    _info(args, f"spectrum: {len(spectrum)} modes -> {directory}/spectrum.json")
    return 0


def cmd_synth(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    directory = _out_dir(cfg, args)
    spectrum = build_spectrum(float(cfg.spectrum["lambda_max"]))
    model = build_source_model(cfg, spectrum)
    sensors = cfg.sensor_config()
    sensors.validate_margin(spectrum, float(cfg.inversion["margin_min"]))
    times = cfg.times()
    traces = map_maybe_parallel(
        lambda th: flux_trace(model, th, times), sensors.angles)
    manifest = RunManifest.for_config(cfg)
    _emit(manifest, directory, "config.json", dump_config(cfg))
    _emit(manifest, directory, "spectrum.json", spectrum_to_json(spectrum))
    formats = cfg.output["formats"]
    for i, tr in enumerate(traces, start=1):
        if "csv" in formats:
            _emit(manifest, directory, f"flux_sensor{i}.csv",
                  trace_to_csv(tr.times, tr.values))
        if "json" in formats:
            _emit(manifest, directory, f"flux_sensor{i}.json",
                  trace_to_json(tr.sensor_angle, tr.times, tr.values))
    level = float(cfg.noise["level"])
    if level > 0:
        rng = np.random.default_rng(int(cfg.noise["seed"]))
        for i, tr in enumerate(traces, start=1):
            sigma = level * float(np.max(np.abs(tr.values)))
            noisy = tr.values + rng.normal(0.0, sigma, size=len(tr.values))
            _emit(manifest, directory, f"flux_sensor{i}_noisy.csv",
                  trace_to_csv(tr.times, noisy))
    s_list = [float(s) for s in cfg.output.get("laplace_s", [])]
    if s_list:
        horizon_ok = math.exp(-min(s_list) * times[-1]) <= 1e-10
        for i, (tr, th) in enumerate(zip(traces, sensors.angles), start=1):
            pts = [LaplacePoint(s) for s in s_list]
            vals = [laplace_flux_model(model, th, p) for p in pts]
            _emit(manifest, directory, f"laplace_sensor{i}.csv",
                  LaplaceSamples(points=tuple(pts), values=np.array(vals)).to_csv())
        if not horizon_ok:
            _info(args, "note: laplace samples computed from the closed form "
                        "(trace horizon too short for quadrature)")
    _finish(manifest, directory)
    _info(args, f"synth: {len(times)} samples x {len(traces)} sensors -> {directory}")
    return 0


def cmd_invert(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    directory = _out_dir(cfg, args)
    if len(args.traces) != 2:
        raise ValidationError("invert requires exactly two trace files",
                              clause="sensor-count")
    spectrum = build_spectrum(float(cfg.spectrum["lambda_max"]))
    sensors = cfg.sensor_config()
    traces = []
    for path, theta in zip(args.traces, sensors.angles):
        with open(path) as fh:
            t, v = trace_from_csv(fh.read())
        traces.append(FluxTrace(sensor_angle=theta, times=t, values=v))
    inv_cfg = build_inversion_config(cfg)
    result = reconstruct(tuple(traces), spectrum, inv_cfg)
    manifest = RunManifest.for_config(cfg)
    _emit(manifest, directory, "reconstruction.json",
          result_to_json(result, spectrum))
    model_flux = predicted_flux(result, spectrum, traces[0].times, sensors.angles)
    lines = ["t,residual_sensor1,residual_sensor2"]
    for i, t in enumerate(traces[0].times):
        r1 = model_flux[0][i] - traces[0].values[i]
        r2 = model_flux[1][i] - traces[1].values[i]
        lines.append(f"{float(t)!r},{float(r1)!r},{float(r2)!r}")
    _emit(manifest, directory, "residual_curve.csv", "\n".join(lines) + "\n")
    _finish(manifest, directory)
    _info(args, f"invert: alpha_hat={result.alpha_hat:.6f} "
                f"cuts={['%.4f' % c for c in result.cuts_hat]} K={result.K_hat}")
    return 0


def _verify_checks(cfg: ExperimentConfig):
    """Cross-module identity suite; returns a list of check dicts."""
    checks = []

    def add(name, measured, tolerance):
        checks.append({"name": name, "measured": float(measured),
                       "tolerance": float(tolerance),
                       "pass": bool(measured <= tolerance)})

    spectrum = build_spectrum(float(cfg.spectrum["lambda_max"]))

    # Laplace pair: quadrature of e^(-st) t^(a-1) E_{a,a}(-lam t^a) vs 1/(s^a+lam)
    from scipy.integrate import quad
    worst = 0.0
    for alpha in (0.6, 0.8):
        for (s, lam) in ((1.0, 1.0), (2.0, 5.783185962946785),
                         (5.0, 1.0), (10.0, 5.783185962946785)):
            def integrand(v):
                t = v ** (1.0 / alpha)
                e = mittag_leffler_neg_real(alpha, alpha, np.array([lam * v]))[0]
                return math.exp(-s * t) * e / alpha
            val, _ = quad(integrand, 0.0, 200.0, limit=400)
            worst = max(worst, abs(val - 1.0 / (s ** alpha + lam)))
    add("laplace_pair", worst, 1e-6)

    # L1 unit mass via the exact antiderivative identity
    alpha, lam = 0.75, 5.783185962946785
    big_t = (2.75e5 / lam) ** (1.0 / alpha)
    tail = float(mittag_leffler_neg_real(alpha, 1.0, np.array([lam * big_t ** alpha]))[0])
    def mass_integrand(v):
        e = mittag_leffler_neg_real(alpha, alpha, np.array([lam * v]))[0]
        return lam * e / alpha
    mass, _ = quad(mass_integrand, 0.0, big_t ** alpha, limit=800)
    add("ml_unit_mass", abs(mass - (1.0 - tail)), 1e-5)

    # measurement identity on the configured model
    model = build_source_model(cfg, spectrum)
    times = cfg.times()
    sensors = cfg.sensor_config()
    add("measurement_identity",
        verify_measurement_identity(model, sensors.theta1, times), 5e-4)

    # closed-form transform vs numeric transform on a long grid
    t_long = np.linspace(0.0, max(30.0, float(times[-1])), 30001)
    tr = flux_trace(model, sensors.theta1, t_long)
    worst = 0.0
    for s in (1.0, 2.0, 5.0, 10.0, 20.0):
        gm = laplace_flux_model(model, sensors.theta1, LaplacePoint(s))
        gn = numeric_laplace(tr, LaplacePoint(s))
        worst = max(worst, abs(gm - gn))
    add("laplace_model_agreement", worst, 1e-4)

    # orthonormality of the leading modes
    sp_g = spectrum if len(spectrum) >= 12 else build_spectrum(60.0)
    n = min(12, len(sp_g))
    gram_err = 0.0
    for i in range(n):
        mo = sp_g.modes[i]
        coeffs = project_function(
            lambda r, th, mo=mo: eigenfunction_eval(mo, r, th), sp_g)
        row = coeffs.values[:n].copy()
        row[i] -= 1.0
        gram_err = max(gram_err, float(np.max(np.abs(row))))
    add("orthonormality", gram_err, 1e-8)

    # normalizer closed form (fault-injection hook scales omega)
    from .specfun import bessel_j
    fault = float(cfg.verify.get("fault_omega_scale", 1.0))
    worst = 0.0
    for mo in spectrum.modes:
        omega = mo.omega * fault
        resid = abs(abs(omega * math.sqrt(math.pi)
                        * bessel_j(abs(mo.m) + 1, math.sqrt(mo.lam))) - 1.0)
        worst = max(worst, resid)
    add("normalizer_identity", worst, 1e-10)
    return checks


def cmd_verify(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    directory = _out_dir(cfg, args)
    checks = _verify_checks(cfg)
    all_pass = all(c["pass"] for c in checks)
    report = json.dumps({"all_pass": all_pass, "checks": checks}, indent=1)
    manifest = RunManifest.for_config(cfg)
    _emit(manifest, directory, "verification.json", report)
    _finish(manifest, directory)
    for c in checks:
        _info(args, f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: "
                    f"{c['measured']:.3e} (tol {c['tolerance']:.0e})")
    return 0 if all_pass else 3


def cmd_plotdata(args) -> int:
    run_dir = args.run
    recon_path = os.path.join(run_dir, "reconstruction.json")
    config_path = os.path.join(run_dir, "config.json")
    if not os.path.isdir(run_dir) or not os.path.exists(recon_path):
        raise ValidationError(f"{run_dir} is not a completed run directory",
                              clause="plotdata-input")
    with open(recon_path) as fh:
        recon = json.load(fh)
    cfg = load_config(config_path) if os.path.exists(config_path) else None

    outputs = []
    # tidy flux curves
    lines = ["t,sensor,flux"]
    for i in (1, 2):
        trace_path = os.path.join(run_dir, f"flux_sensor{i}.csv")
        if os.path.exists(trace_path):
            with open(trace_path) as fh:
                t, v = trace_from_csv(fh.read())
            for tt, vv in zip(t, v):
                lines.append(f"{tt!r},{i},{vv!r}")
    write_atomic(os.path.join(run_dir, "plot_flux_vs_t.csv"),
                 "\n".join(lines) + "\n")
    outputs.append("plot_flux_vs_t.csv")

    # log|G| against log s with the fitted alpha line
    alpha_hat = float(recon["alpha_hat"])
    c0 = float(recon["cuts_hat"][0])
    window = (cfg.inversion["alpha_fit_window"] if cfg else [20.0, 200.0])
    npts = int(cfg.inversion["alpha_fit_points"]) if cfg else 40
    s = np.geomspace(float(window[0]), float(window[1]), npts)
    trace_path = os.path.join(run_dir, "flux_sensor1.csv")
    lines = ["log_s,log_G,fit,slope"]
    if os.path.exists(trace_path):
        with open(trace_path) as fh:
            t, v = trace_from_csv(fh.read())
        delta = min(0.2, (t[-1] - c0) / 4)
        from .inversion import _window_transform
        gv = np.abs(_window_transform(t, -v, c0, delta, s))
        gv = np.maximum(gv, 1e-300)
        slope = -(1.0 + alpha_hat)
        intercept = float(np.mean(np.log(gv) - slope * np.log(s)))
        for si, gi in zip(s, gv):
            fit = slope * math.log(si) + intercept
            lines.append(f"{math.log(si)!r},{math.log(gi)!r},{fit!r},{slope!r}")
    write_atomic(os.path.join(run_dir, "plot_alpha_fit.csv"),
                 "\n".join(lines) + "\n")
    outputs.append("plot_alpha_fit.csv")

    # reconstructed vs configured cuts
    lines = ["kind,index,time"]
    if cfg is not None:
        for i, c in enumerate(cfg.model["cuts"]):
            if c != "inf" and c is not None and np.isfinite(float(c)):
                lines.append(f"true,{i},{float(c)!r}")
    for i, c in enumerate(recon["cuts_hat"]):
        lines.append(f"reconstructed,{i},{float(c)!r}")
    write_atomic(os.path.join(run_dir, "plot_cuts_compare.csv"),
                 "\n".join(lines) + "\n")
    outputs.append("plot_cuts_compare.csv")
    _info(args, f"plotdata: wrote {', '.join(outputs)} in {run_dir}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracsource",
        description="Forward synthesis and inverse reconstruction for "
                    "time-fractional diffusion on the unit disc.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="noise seed override")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("spectrum", help="export the eigensystem table")
    common(p)
    p.set_defaults(fn=cmd_spectrum)
    p = sub.add_parser("synth", help="synthesize two-sensor flux traces")
    common(p)
    p.set_defaults(fn=cmd_synth)
    p = sub.add_parser("invert", help="reconstruct the source from traces")
    common(p)
    p.add_argument("traces", nargs="*", help="two trace CSV files")
    p.set_defaults(fn=cmd_invert)
    p = sub.add_parser("verify", help="run the cross-module identity suite")
    common(p)
    p.set_defaults(fn=cmd_verify)
    p = sub.add_parser("plotdata", help="emit plot-ready CSVs from a run")
    p.add_argument("run", help="completed run directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError,) as exc:
        clause = getattr(exc, "clause", None)
        suffix = f" [clause: {clause}]" if clause else ""
        print(f"validation error: {exc}{suffix}", file=sys.stderr)
        return 2
    except (AccuracyError, ConditioningError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FracsourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
