"""Artifact serialization: CSV tables, JSON documents, SVG plots, PGM frames.

Everything here is pure formatting plus atomic file writes; solvers never
touch the filesystem themselves.  Floats are rendered with repr (shortest
round-trip), so identical inputs produce bitwise-identical files.
"""

from __future__ import annotations

import json
import math
import os
import tempfile

import numpy as np

BAND_CSV_HEADER = ("omega_over_omega_s,kappa_over_kappa_s,branch_id,"
                   "harmonic_n,im_kappa,vg_x,vg_z")
# the isofrequency table needs the sweep variable as well; the shared
# column core stays identical to the band schema
ISOFREQ_CSV_HEADER = "k_x_over_kappa_s," + BAND_CSV_HEADER
POWER_CSV_HEADER = "n,omega_n,k_z_n,propagating,P_refl_n,P_trans_n"

SVG_W, SVG_H = 720, 540
SVG_COLORS = ("#1b6ca8", "#cc4c02", "#2a9d5c", "#7b3fa0", "#c02942",
              "#6b6b6b", "#0f8b8d", "#b8860b")


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_text(path: str, text: str) -> None:
    """Write-temp-then-rename so readers never observe partial files."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# CSV


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        return "nan" if math.isnan(x) else repr(x)
    return str(v)


def csv_text(header: str, rows) -> str:
    lines = [header]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def band_rows(diagram, n_harm_export: int):
    """Flatten a BandDiagram into spec-schema rows, one per ladder rung."""
    ws = diagram.profile.omega_s
    ks = diagram.profile.kappa_s
    ks_div = ks if ks > 0.0 else 1.0
    ws_div = ws if ws > 0.0 else 1.0
    rungs = range(-n_harm_export, n_harm_export + 1)
    rows = []
    for tr in diagram.branches:
        for w, kap, vgx, vgz in zip(tr.param, tr.kappa, tr.vg_x, tr.vg_z):
            for n in rungs:
                rows.append((w / ws_div, (kap.real + n * ks) / ks_div,
                             tr.branch_id, n, kap.imag,
                             float(vgx), float(vgz)))
    return rows


def isofreq_rows(contours, n_harm_export: int):
    ws = contours.profile.omega_s
    ks = contours.profile.kappa_s
    ks_div = ks if ks > 0.0 else 1.0
    ws_div = ws if ws > 0.0 else 1.0
    rungs = range(-n_harm_export, n_harm_export + 1)
    rows = []
    for tr in contours.branches:
        for kx, kap, vgx, vgz in zip(tr.param, tr.kappa, tr.vg_x, tr.vg_z):
            for n in rungs:
                rows.append((kx / ks_div, contours.omega_0 / ws_div,
                             (kap.real + n * ks) / ks_div,
                             tr.branch_id, n, kap.imag,
                             float(vgx), float(vgz)))
    return rows


def power_rows(result):
    lat = result.lattice
    return [(int(n), float(w), float(kz), bool(p), float(pr), float(pt))
            for n, w, kz, p, pr, pt in zip(lat.n, lat.omega_n, lat.k_z_n,
                                           lat.propagating,
                                           result.P_refl_n,
                                           result.P_trans_n)]


def probe_series_header(n_probes: int) -> str:
    cols = ["step", "t"]
    for p in range(n_probes):
        cols += [f"ey_{p}", f"hz_{p}"]
    return ",".join(cols)


def probe_series_rows(record):
    n_probes = record.ey_center.shape[0]
    for k in range(record.n_steps):
        row = [k, (k + 1) * record.dt]
        for p in range(n_probes):
            row += [float(record.ey_center[p, k]),
                    float(record.hz_center[p, k])]
        yield tuple(row)


SPECTRA_CSV_HEADER = ("probe,harmonic_n,omega_n,flux_n,"
                      "e_center_re,e_center_im")


def spectra_rows(record):
    jc = record.e_line.shape[2] // 2
    rows = []
    for p in range(record.e_line.shape[0]):
        hflux = 0.5 * np.real(record.e_line[p]
                              * np.conj(record.h_line[p])).sum(axis=1) \
            * record.dx
        for i, n in enumerate(record.ladder_n):
            amp = record.e_line[p, i, jc]
            rows.append((p, int(n), float(record.ladder_omega[i]),
                         float(hflux[i]), float(amp.real), float(amp.imag)))
    return rows


# ---------------------------------------------------------------------------
# JSON documents


def _complex_pair(z) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def scattering_json(result) -> dict:
    lat = result.lattice
    return {
        "n": [int(v) for v in lat.n],
        "omega_n": [float(v) for v in lat.omega_n],
        "k_z_n": [float(v) for v in lat.k_z_n],
        "propagating": [bool(v) for v in lat.propagating],
        "R_n": [_complex_pair(z) for z in result.R_n],
        "T_n": [_complex_pair(z) for z in result.T_n],
        "P_refl_n": [float(v) for v in result.P_refl_n],
        "P_trans_n": [float(v) for v in result.P_trans_n],
        "P_inc": float(result.P_inc),
        "P_refl_total": result.P_refl_total,
        "P_trans_total": result.P_trans_total,
        "absorption": float(result.absorption),
        "condition_number": float(result.condition_number),
        "residual": float(result.residual),
        "truncation_N": int(result.N),
        "warnings": list(result.warnings),
    }


def nonreciprocity_json(report, config_echo: dict) -> dict:
    return {
        "theta_deg": float(report.theta),
        "omega_0": float(report.omega_0),
        "truncation_N": int(report.N),
        "T_forward": float(report.T_forward),
        "T_backward": float(report.T_backward),
        "R_forward": float(report.R_forward),
        "R_backward": float(report.R_backward),
        "A_forward": float(report.A_forward),
        "A_backward": float(report.A_backward),
        "contrast": float(report.contrast),
        "forward": scattering_json(report.forward),
        "backward": scattering_json(report.backward),
        "config": config_echo,
    }


def json_text(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# SVG line plots (self-contained, no external references)


def _ticks(lo: float, hi: float, want: int = 5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / want
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    t0 = math.ceil(lo / step) * step
    out = []
    t = t0
    while t <= hi + 1e-12 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return out


def _esc(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def svg_line_plot(title: str, xlabel: str, ylabel: str, series) -> str:
    """series: iterable of (x_array, y_array, label_or_None).

    Points with non-finite coordinates split the polyline; styling is a
    fixed color cycle so the output is deterministic.
    """
    ml, mr, mt, mb = 64, 16, 34, 46
    pw, ph = SVG_W - ml - mr, SVG_H - mt - mb
    finite = []
    for xs, ys, _ in series:
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        m = np.isfinite(xs) & np.isfinite(ys)
        if m.any():
            finite.append((xs[m], ys[m]))
    if finite:
        x_lo = min(float(x.min()) for x, _ in finite)
        x_hi = max(float(x.max()) for x, _ in finite)
        y_lo = min(float(y.min()) for _, y in finite)
        y_hi = max(float(y.max()) for _, y in finite)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi - x_lo < 1e-300:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi - y_lo < 1e-300:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_x = 0.03 * (x_hi - x_lo)
    pad_y = 0.05 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - pad_x, x_hi + pad_x
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    def px(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return mt + (y_hi - y) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" '
        f'height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">',
        f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>',
        f'<text x="{SVG_W / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{_esc(title)}</text>',
    ]
    for t in _ticks(x_lo + pad_x, x_hi - pad_x):
        x = px(t)
        parts.append(f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" '
                     f'y2="{mt + ph}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{t:.6g}</text>')
    for t in _ticks(y_lo + pad_y, y_hi - pad_y):
        y = py(t)
        parts.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" '
                     f'y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{t:.6g}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="#333333"/>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{SVG_H - 10}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{_esc(xlabel)}</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {mt + ph / 2:.1f})">'
                 f'{_esc(ylabel)}</text>')
    legend_y = mt + 14
    for i, (xs, ys, label) in enumerate(series):
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        color = SVG_COLORS[i % len(SVG_COLORS)]
        pts = []
        segs = []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                pts.append(f"{px(x):.2f},{py(y):.2f}")
            elif pts:
                segs.append(pts)
                pts = []
        if pts:
            segs.append(pts)
        for seg in segs:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                parts.append(f'<circle cx="{cx}" cy="{cy}" r="1.6" '
                             f'fill="{color}"/>')
            else:
                parts.append(f'<polyline points="{" ".join(seg)}" '
                             f'fill="none" stroke="{color}" '
                             f'stroke-width="1.4"/>')
        if label:
            parts.append(f'<line x1="{ml + pw - 130}" y1="{legend_y - 4}" '
                         f'x2="{ml + pw - 106}" y2="{legend_y - 4}" '
                         f'stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{ml + pw - 100}" y="{legend_y}" '
                         f'font-family="sans-serif" font-size="11">'
                         f'{_esc(str(label))}</text>')
            legend_y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_bar_chart(title: str, labels, values, ylabel: str = "") -> str:
    ml, mr, mt, mb = 64, 16, 34, 46
    pw, ph = SVG_W - ml - mr, SVG_H - mt - mb
    vals = [float(v) for v in values]
    lo = min(0.0, min(vals))
    hi = max(0.0, max(vals))
    if hi - lo < 1e-300:
        hi = lo + 1.0
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def py(y):
        return mt + (hi - y) / (hi - lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" '
        f'height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">',
        f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>',
        f'<text x="{SVG_W / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{_esc(title)}</text>',
    ]
    for t in _ticks(lo + pad, hi - pad):
        y = py(t)
        parts.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" '
                     f'y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{t:.6g}</text>')
    n = len(vals)
    slot = pw / max(n, 1)
    for i, (lab, v) in enumerate(zip(labels, vals)):
        x0 = ml + slot * (i + 0.2)
        w = slot * 0.6
        y_top = py(max(v, 0.0))
        h = abs(py(0.0) - py(v))
        color = SVG_COLORS[i % len(SVG_COLORS)]
        parts.append(f'<rect x="{x0:.2f}" y="{y_top:.2f}" width="{w:.2f}" '
                     f'height="{h:.2f}" fill="{color}"/>')
        parts.append(f'<text x="{x0 + w / 2:.2f}" y="{mt + ph + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12">{_esc(str(lab))}</text>')
        parts.append(f'<text x="{x0 + w / 2:.2f}" y="{y_top - 5:.2f}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{v:.4g}</text>')
    y0 = py(0.0)
    parts.append(f'<line x1="{ml}" y1="{y0:.2f}" x2="{ml + pw}" '
                 f'y2="{y0:.2f}" stroke="#333333"/>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 f'fill="none" stroke="#333333"/>')
    if ylabel:
        parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12" transform="rotate(-90 16 '
                     f'{mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# PGM frames

PGM_RULE = "pixel = clamp(round(32768 + 32767*value/pgm_amplitude), 0, 65535)"


def pgm16_bytes(frame: np.ndarray, amplitude: float) -> bytes:
    """P5 16-bit grayscale, row-major, signed-linear mapping (PGM_RULE)."""
    if amplitude <= 0.0 or not math.isfinite(amplitude):
        amplitude = 1.0
    v = np.asarray(frame, np.float64)
    pix = np.clip(np.rint(32768.0 + 32767.0 * v / amplitude), 0, 65535)
    data = pix.astype(">u2").tobytes()
    h, w = v.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + data
