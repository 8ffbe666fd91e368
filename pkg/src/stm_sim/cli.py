"""Command-line entry point.

One flat INI-style configuration file per run (sections [run], [profile],
[geometry], [wave], [solver], [band], [isofreq], [fdtd], [sweep]); every
command writes its artifacts plus a JSON manifest that echoes the fully
resolved configuration.  A manifest is itself a valid --config input, and
re-running from it reproduces all outputs bitwise.

Exit codes: 0 success, 1 configuration error, 2 solver error.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, dispersion, fdtd, output, scattering
from .medium import (DERIVED_CONFIG_LABEL, DERIVED_DELTA, DERIVED_EPS_AVG,
                     DERIVED_KAPPA_S, DERIVED_MU_AVG, DERIVED_OMEGA_0,
                     DERIVED_THETA_FORWARD, DERIVED_THICKNESS_LAMBDA0,
                     ValidationError, is_derived_config, make_geometry,
                     make_profile, make_wave)

COMMANDS = ("band", "isofreq", "scatter", "fdtd", "nonrecip", "sweep")

SOLVER_ERRORS = (dispersion.EigenSolverError, scattering.BoundaryMatchError,
                 fdtd.FDTDError, np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    pass


# every key the configuration file may set: section -> key -> (cast, default)
SCHEMA = {
    "run": {
        "command": (str, ""),
        "out": (str, "out"),
        "jobs": (int, 1),
        "seed": (int, 0),
    },
    "profile": {
        "eps_avg": (float, DERIVED_EPS_AVG),
        "mu_avg": (float, DERIVED_MU_AVG),
        "delta_e": (float, DERIVED_DELTA),
        "delta_m": (float, DERIVED_DELTA),
        "omega_s": (float, 1.0),
        "kappa_s": (float, DERIVED_KAPPA_S),
        "phi": (float, 0.0),
    },
    "geometry": {
        "thickness_lambda0": (float, DERIVED_THICKNESS_LAMBDA0),
        "exterior_eps": (float, 1.0),
        "exterior_mu": (float, 1.0),
    },
    "wave": {
        "omega_0": (float, DERIVED_OMEGA_0),
        "theta_deg": (float, DERIVED_THETA_FORWARD),
        "amplitude": (float, 1.0),
    },
    "solver": {
        "n_harmonics": (int, 24),
    },
    "band": {
        "omega_min": (float, 0.1),
        "omega_max": (float, 3.0),
        "n_omega": (int, 121),
        "k_x": (float, 0.0),
        "n_floquet": (int, 0),
        "n_harm_export": (int, 2),
    },
    "isofreq": {
        "omega": (float, 1.0),
        "k_x_min": (float, 0.0),
        "k_x_max": (float, 1.4),
        "n_kx": (int, 61),
        "n_floquet": (int, 0),
        "n_harm_export": (int, 2),
    },
    "fdtd": {
        "cells_per_wavelength": (int, 40),
        "courant": (float, 0.5),
        "waist": (float, 4.0),
        "ramp_cycles": (float, 5.0),
        "total_cycles": (float, 60.0),
        "n_harm": (int, 2),
        "pml_cells": (int, 10),
        "capture_frames": (int, 4),
        "domain_x": (float, 0.0),
        "domain_z": (float, 0.0),
        "probes": (str, ""),
        "precision": (str, "f64"),
        "backend": (str, "auto"),
    },
    "sweep": {
        "command": (str, ""),
        "parameter": (str, ""),
        "start": (float, 0.0),
        "stop": (float, 0.0),
        "steps": (int, 0),
    },
}


def _cast(section: str, key: str, raw) -> object:
    caster, _ = SCHEMA[section][key]
    text = str(raw).strip()
    try:
        if caster is int:
            return int(text)
        if caster is float:
            return float(text)
        return text
    except ValueError:
        kind = "integer" if caster is int else "number"
        raise ConfigError(
            f"key {section}.{key}: expected {kind}, got {raw!r}") from None


def _defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()}
            for sec, keys in SCHEMA.items()}


def _apply(cfg: dict, section: str, key: str, raw) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key}")
    cfg[section][key] = _cast(section, key, raw)


def parse_config(path: str | None) -> tuple[str, dict]:
    """Resolve a config file (INI or a manifest JSON) against the schema.

    Returns (command, cfg) where command is "" unless the file names one;
    cfg carries every schema key with defaults filled in.
    """
    cfg = _defaults()
    if path is None:
        return "", cfg
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid manifest JSON: {exc}") from None
        for section, keys in doc.get("config", {}).items():
            if not isinstance(keys, dict):
                raise ConfigError(f"manifest config section [{section}] "
                                  f"must be an object")
            for key, raw in keys.items():
                _apply(cfg, section, key, raw)
        if "seed" in doc:
            cfg["run"]["seed"] = _cast("run", "seed", doc["seed"])
        return str(doc.get("command", "")), cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config file: {exc}") from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            _apply(cfg, section, key, raw)
    return cfg["run"]["command"], cfg


# ---------------------------------------------------------------------------
# configured object construction


def build_objects(cfg: dict):
    p = cfg["profile"]
    profile = make_profile(eps_avg=p["eps_avg"], mu_avg=p["mu_avg"],
                           delta_e=p["delta_e"], delta_m=p["delta_m"],
                           omega_s=p["omega_s"], kappa_s=p["kappa_s"],
                           phi=p["phi"])
    w = cfg["wave"]
    wave = make_wave(omega_0=w["omega_0"], theta_deg=w["theta_deg"],
                     amplitude=w["amplitude"])
    g = cfg["geometry"]
    lam0 = 2.0 * math.pi / wave.omega_0
    geometry = make_geometry(thickness=g["thickness_lambda0"] * lam0,
                             exterior_eps=g["exterior_eps"],
                             exterior_mu=g["exterior_mu"])
    return profile, geometry, wave


def _config_echo(cfg: dict) -> dict:
    return {sec: dict(keys) for sec, keys in cfg.items() if sec != "run"}


def _write_manifest(out_dir: str, command: str, cfg: dict, warnings,
                    extras: dict, outputs) -> None:
    profile, geometry, wave = build_objects(cfg)
    doc = {
        "tool": "stm-sim",
        "version": __version__,
        "command": command,
        "seed": cfg["run"]["seed"],
        "config": _config_echo(cfg),
        "config_label": (DERIVED_CONFIG_LABEL
                         if is_derived_config(profile, geometry, wave)
                         else "custom"),
        "warnings": [str(w) for w in warnings],
        "outputs": sorted(outputs),
    }
    doc.update(extras)
    output.atomic_write_text(os.path.join(out_dir, "manifest.json"),
                             output.json_text(doc))


# ---------------------------------------------------------------------------
# commands


def cmd_band(cfg: dict, out_dir: str) -> dict:
    profile, _, _ = build_objects(cfg)
    b = cfg["band"]
    if b["n_omega"] < 2:
        raise ConfigError("key band.n_omega: need at least 2 grid points")
    grid = np.linspace(b["omega_min"], b["omega_max"], b["n_omega"])
    diag = dispersion.band_structure(profile, grid, k_x=b["k_x"],
                                     N=b["n_floquet"] or None)
    rows = output.band_rows(diag, max(0, b["n_harm_export"]))
    output.atomic_write_text(os.path.join(out_dir, "band.csv"),
                             output.csv_text(output.BAND_CSV_HEADER, rows))
    ks = profile.kappa_s if profile.kappa_s > 0 else 1.0
    ws = profile.omega_s if profile.omega_s > 0 else 1.0
    series = []
    for tr in diag.branches:
        kap = np.asarray(tr.kappa)
        w = np.asarray(tr.param)
        re = np.where(np.abs(kap.imag) > 1e-9 * np.maximum(np.abs(kap.real),
                                                           1.0),
                      np.nan, kap.real)
        series.append((re / ks, w / ws, None))
    svg = output.svg_line_plot("Floquet band diagram", "kappa / kappa_s",
                               "omega / omega_s", series)
    output.atomic_write_text(os.path.join(out_dir, "band.svg"), svg)
    extras = {"n_floquet_resolved": diag.N,
              "failed_points": [float(v) for v in diag.failed_points]}
    _write_manifest(out_dir, "band", cfg, diag.warnings, extras,
                    ["band.csv", "band.svg"])
    return {"n_branches": len(diag.branches),
            "n_failed": len(diag.failed_points)}


def cmd_isofreq(cfg: dict, out_dir: str) -> dict:
    profile, _, _ = build_objects(cfg)
    s = cfg["isofreq"]
    if s["n_kx"] < 3:
        raise ConfigError("key isofreq.n_kx: need at least 3 grid points")
    grid = np.linspace(s["k_x_min"], s["k_x_max"], s["n_kx"])
    iso = dispersion.isofrequency(profile, s["omega"], grid,
                                  N=s["n_floquet"] or None)
    rows = output.isofreq_rows(iso, max(0, s["n_harm_export"]))
    output.atomic_write_text(os.path.join(out_dir, "isofreq.csv"),
                             output.csv_text(output.ISOFREQ_CSV_HEADER, rows))
    ks = profile.kappa_s if profile.kappa_s > 0 else 1.0
    series = []
    for tr in iso.branches:
        kap = np.asarray(tr.kappa)
        kx = np.asarray(tr.param)
        re = np.where(np.abs(kap.imag) > 1e-9 * np.maximum(np.abs(kap.real),
                                                           1.0),
                      np.nan, kap.real)
        series.append((kx / ks, re / ks, None))
    svg = output.svg_line_plot(
        f"Isofrequency contours at omega = {s['omega']:g}",
        "k_x / kappa_s", "kappa / kappa_s", series)
    output.atomic_write_text(os.path.join(out_dir, "isofreq.svg"), svg)
    extras = {"n_floquet_resolved": iso.N,
              "failed_points": [float(v) for v in iso.failed_points]}
    _write_manifest(out_dir, "isofreq", cfg, iso.warnings, extras,
                    ["isofreq.csv", "isofreq.svg"])
    return {"n_branches": len(iso.branches),
            "n_failed": len(iso.failed_points)}


def cmd_scatter(cfg: dict, out_dir: str) -> dict:
    profile, geometry, wave = build_objects(cfg)
    result = scattering.solve_slab(profile, geometry, wave,
                                   cfg["solver"]["n_harmonics"])
    output.atomic_write_text(os.path.join(out_dir, "scatter.json"),
                             output.json_text(output.scattering_json(result)))
    output.atomic_write_text(
        os.path.join(out_dir, "powers.csv"),
        output.csv_text(output.POWER_CSV_HEADER, output.power_rows(result)))
    extras = {"condition_number": float(result.condition_number),
              "residual": float(result.residual)}
    _write_manifest(out_dir, "scatter", cfg, result.warnings, extras,
                    ["scatter.json", "powers.csv"])
    P = result.P_inc
    return {"T_total": result.P_trans_total / P,
            "R_total": result.P_refl_total / P,
            "absorption": float(result.absorption),
            "condition_number": float(result.condition_number)}


def cmd_nonrecip(cfg: dict, out_dir: str) -> dict:
    profile, geometry, wave = build_objects(cfg)
    report = scattering.nonreciprocity(profile, geometry, wave.omega_0,
                                       wave.theta_deg,
                                       cfg["solver"]["n_harmonics"],
                                       amplitude=wave.amplitude)
    doc = output.nonreciprocity_json(report, _config_echo(cfg))
    output.atomic_write_text(os.path.join(out_dir, "nonrecip.json"),
                             output.json_text(doc))
    for label, res in (("forward", report.forward),
                       ("backward", report.backward)):
        output.atomic_write_text(
            os.path.join(out_dir, f"powers_{label}.csv"),
            output.csv_text(output.POWER_CSV_HEADER, output.power_rows(res)))
    svg = output.svg_bar_chart(
        f"Absorption contrast at theta = {report.theta:g} deg",
        ["A_forward", "A_backward"],
        [report.A_forward, report.A_backward],
        ylabel="power deficit A")
    output.atomic_write_text(os.path.join(out_dir, "nonrecip.svg"), svg)
    warnings = list(report.forward.warnings) + list(report.backward.warnings)
    extras = {
        "condition_number_forward": float(report.forward.condition_number),
        "condition_number_backward": float(report.backward.condition_number),
        "contrast": float(report.contrast),
    }
    _write_manifest(out_dir, "nonrecip", cfg, warnings, extras,
                    ["nonrecip.json", "nonrecip.svg", "powers_forward.csv",
                     "powers_backward.csv"])
    return {"T_forward": float(report.T_forward),
            "T_backward": float(report.T_backward),
            "A_forward": float(report.A_forward),
            "A_backward": float(report.A_backward),
            "contrast": float(report.contrast)}


def _parse_probes(text: str) -> tuple:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise ConfigError(
                f"key fdtd.probes: expected comma-separated numbers, "
                f"got {tok!r}") from None
    return tuple(out)


def cmd_fdtd(cfg: dict, out_dir: str) -> dict:
    profile, geometry, wave = build_objects(cfg)
    f = cfg["fdtd"]
    sim_cfg = fdtd.make_sim_config(
        omega_0=wave.omega_0, theta_deg=wave.theta_deg,
        amplitude=wave.amplitude,
        cells_per_wavelength=f["cells_per_wavelength"],
        courant=f["courant"], waist=f["waist"],
        ramp_cycles=f["ramp_cycles"], total_cycles=f["total_cycles"],
        n_harm=f["n_harm"], pml_cells=f["pml_cells"],
        capture_frames=f["capture_frames"],
        domain_x=f["domain_x"] or None, domain_z=f["domain_z"] or None,
        probes=_parse_probes(f["probes"]),
        precision=f["precision"], backend=f["backend"])
    state = fdtd.build_sim(profile, geometry, sim_cfg)
    record = fdtd.run(state)

    n_probes = record.ey_center.shape[0]
    output.atomic_write_text(
        os.path.join(out_dir, "probes.csv"),
        output.csv_text(output.probe_series_header(n_probes),
                        output.probe_series_rows(record)))
    output.atomic_write_text(
        os.path.join(out_dir, "spectra.csv"),
        output.csv_text(output.SPECTRA_CSV_HEADER,
                        output.spectra_rows(record)))
    amp = 0.0
    for _, frame in record.frames:
        amp = max(amp, float(np.max(np.abs(frame))))
    if amp <= 0.0:
        amp = 1.0
    frame_files = []
    for k, (t, frame) in enumerate(record.frames):
        name = f"frame_{k:03d}.pgm"
        output.atomic_write_bytes(os.path.join(out_dir, name),
                                  output.pgm16_bytes(frame, amp))
        frame_files.append(name)
    extras = {
        "grid": record.meta,
        "flux": {"probe_x": [float(v) for v in record.probe_x],
                 "flux_total": [float(v) for v in record.flux_total]},
        "frame_times": [float(t) for t, _ in record.frames],
        "pgm_amplitude": amp,
        "pgm_rule": output.PGM_RULE,
        "semi_implicit_delta_threshold": fdtd.SEMI_IMPLICIT_DELTA,
    }
    _write_manifest(out_dir, "fdtd", cfg, record.warnings, extras,
                    ["probes.csv", "spectra.csv"] + frame_files)
    flux_refl = float(record.flux_total[0])
    flux_trans = float(record.flux_total[1])
    return {"flux_refl": flux_refl, "flux_trans": flux_trans}


SWEEP_SUMMARY_COLUMNS = {
    "band": ("n_branches", "n_failed"),
    "isofreq": ("n_branches", "n_failed"),
    "scatter": ("T_total", "R_total", "absorption", "condition_number"),
    "nonrecip": ("T_forward", "T_backward", "A_forward", "A_backward",
                 "contrast"),
    "fdtd": ("flux_refl", "flux_trans"),
}

DISPATCH = {
    "band": cmd_band,
    "isofreq": cmd_isofreq,
    "scatter": cmd_scatter,
    "nonrecip": cmd_nonrecip,
    "fdtd": cmd_fdtd,
}


def _sweep_child(payload):
    """Run one sweep point in a worker process; never raises."""
    index, inner, cfg, child_dir = payload
    try:
        summary = DISPATCH[inner](cfg, child_dir)
        return index, "ok", summary
    except (ConfigError, ValidationError) as exc:
        return index, f"config error: {exc}", {}
    except SOLVER_ERRORS as exc:
        return index, f"solver error: {exc}", {}


def cmd_sweep(cfg: dict, out_dir: str) -> dict:
    s = cfg["sweep"]
    inner = s["command"]
    if inner not in DISPATCH:
        raise ConfigError(
            f"key sweep.command: must be one of {sorted(DISPATCH)}, "
            f"got {inner!r}")
    param = s["parameter"]
    if "." not in param:
        raise ConfigError(
            "key sweep.parameter: expected section.key, e.g. wave.theta_deg")
    section, key = param.split(".", 1)
    if section not in SCHEMA or key not in SCHEMA.get(section, {}):
        raise ConfigError(f"key sweep.parameter: unknown key {param}")
    caster, _ = SCHEMA[section][key]
    if caster is str:
        raise ConfigError(f"key sweep.parameter: {param} is not numeric")
    if s["steps"] < 1:
        raise ConfigError("key sweep.steps: need at least 1 step")
    values = np.linspace(s["start"], s["stop"], s["steps"]) \
        if s["steps"] > 1 else np.array([s["start"]])

    jobs = max(1, cfg["run"]["jobs"])
    payloads = []
    for i, v in enumerate(values):
        child = copy.deepcopy(cfg)
        child[section][key] = int(round(v)) if caster is int else float(v)
        child["run"]["jobs"] = 1
        child_dir = os.path.join(out_dir, f"sweep_{i:03d}")
        payloads.append((i, inner, child, child_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_child, payloads))
    else:
        results = [_sweep_child(p) for p in payloads]
    results.sort(key=lambda r: r[0])

    cols = SWEEP_SUMMARY_COLUMNS[inner]
    header = "index,parameter,value,status," + ",".join(cols)
    rows = []
    n_failed = 0
    for (i, status, summary), v in zip(results, values):
        ok = status == "ok"
        n_failed += 0 if ok else 1
        rows.append((i, param, float(v), "ok" if ok else "error")
                    + tuple(summary.get(c, math.nan) for c in cols))
    output.atomic_write_text(os.path.join(out_dir, "combined.csv"),
                             output.csv_text(header, rows))
    warnings = [f"sweep point {i} failed: {status}"
                for i, status, _ in results if status != "ok"]
    extras = {"sweep_values": [float(v) for v in values],
              "children": [f"sweep_{i:03d}" for i, _, _ in results]}
    _write_manifest(out_dir, "sweep", cfg, warnings, extras,
                    ["combined.csv"])
    if n_failed:
        raise scattering.BoundaryMatchError(
            f"{n_failed} of {len(values)} sweep points failed; "
            f"see combined.csv and the manifest warnings")
    return {"n_points": len(values)}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def main(argv=None) -> int:
    parser = _Parser(prog="stm-sim", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI config file or a manifest "
                                         "JSON from a previous run")
    parser.add_argument("--out", help="output directory (default: [run] out "
                                      "or $STM_SIM_OUT)")
    parser.add_argument("--jobs", type=int, help="sweep concurrency cap")
    parser.add_argument("--seed", type=int, help="recorded in the manifest")
    try:
        args = parser.parse_args(argv)
        named, cfg = parse_config(args.config)
        if named and named != args.command:
            raise ConfigError(
                f"config file names command={named} but {args.command} "
                f"was requested")
        if args.jobs is not None:
            cfg["run"]["jobs"] = args.jobs
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        out_dir = args.out or os.environ.get("STM_SIM_OUT") \
            or cfg["run"]["out"]
        if args.command == "sweep":
            runner = cmd_sweep
        else:
            runner = DISPATCH[args.command]
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        summary = runner(cfg, out_dir)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    for k, v in summary.items():
        print(f"{k} = {v}")
    print(f"artifacts written to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
