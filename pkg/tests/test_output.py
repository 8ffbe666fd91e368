"""Serialization layer: CSV/JSON determinism, SVG well-formedness, PGM."""

import json
import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from stm_sim import dispersion, output
from stm_sim.medium import make_geometry, make_profile, make_wave
from stm_sim.scattering import solve_slab


def test_atomic_write_text(tmp_path):
    p = tmp_path / "a.txt"
    output.atomic_write_text(str(p), "hello\n")
    assert p.read_text() == "hello\n"
    output.atomic_write_text(str(p), "swapped\n")
    assert p.read_text() == "swapped\n"
    assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")] == []


def test_atomic_write_cleans_up_on_failure(tmp_path):
    p = tmp_path / "b.txt"
    with pytest.raises(TypeError):
        output.atomic_write_text(str(p), 12345)  # not a str
    assert not p.exists()
    assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")] == []


def test_csv_cell_formatting():
    text = output.csv_text("a,b,c,d,e",
                           [(True, 3, 0.1, float("nan"), "x"),
                            (False, -2, 1.0, 2.5e-300, "y")])
    lines = text.splitlines()
    assert lines[0] == "a,b,c,d,e"
    assert lines[1] == "1,3,0.1,nan,x"
    assert lines[2] == "0,-2,1.0,2.5e-300,y"
    assert text.endswith("\n")


def test_csv_floats_roundtrip_exactly():
    rng = np.random.default_rng(0x51a6)
    vals = rng.standard_normal(200) * 10.0 ** rng.integers(-12, 12, 200)
    text = output.csv_text("v", [(float(v),) for v in vals])
    back = [float(s) for s in text.splitlines()[1:]]
    assert all(a == b for a, b in zip(back, vals))


@pytest.fixture(scope="module")
def small_diagram():
    profile = make_profile(2.0, 2.0, 0.1, 0.1, omega_s=1.0, kappa_s=3.0)
    grid = np.linspace(0.4, 0.9, 5)
    return dispersion.band_structure(profile, grid, N=6)


def test_band_rows_unfold_ladder(small_diagram):
    rows = output.band_rows(small_diagram, 1)
    n_cols = len(output.BAND_CSV_HEADER.split(","))
    assert all(len(r) == n_cols for r in rows)
    per_point = 3  # n in {-1, 0, +1}
    n_points = sum(len(tr.param) for tr in small_diagram.branches)
    assert len(rows) == per_point * n_points
    # consecutive rungs of one point differ by exactly kappa_s/kappa_s = 1
    for j in range(0, len(rows), per_point):
        trip = rows[j:j + per_point]
        assert trip[1][1] - trip[0][1] == pytest.approx(1.0, abs=1e-12)
        assert len({r[0] for r in trip}) == 1
        assert [r[3] for r in trip] == [-1, 0, 1]


def test_isofreq_rows_prepend_kx(small_diagram):
    profile = small_diagram.profile
    iso = dispersion.isofrequency(profile, 0.8, np.linspace(0.0, 0.5, 4),
                                  N=6)
    rows = output.isofreq_rows(iso, 0)
    n_cols = len(output.ISOFREQ_CSV_HEADER.split(","))
    assert all(len(r) == n_cols for r in rows)
    ks = profile.kappa_s
    kxs = {round(r[0] * ks, 9) for r in rows}
    assert kxs <= {0.0, round(0.5 / 3, 9), round(1.0 / 3, 9), 0.5}
    assert all(r[1] == 0.8 for r in rows)


@pytest.fixture(scope="module")
def small_result():
    profile = make_profile(2.0, 2.0, 0.1, 0.1, omega_s=1.0, kappa_s=3.0)
    geometry = make_geometry(thickness=2.0)
    wave = make_wave(1.0, 40.0)
    return solve_slab(profile, geometry, wave, 6)


def test_power_rows_schema(small_result):
    rows = output.power_rows(small_result)
    assert len(rows) == 2 * small_result.N + 1
    n0 = [r for r in rows if r[0] == 0]
    assert len(n0) == 1 and n0[0][3] == 1  # carrier propagates
    assert sum(r[4] for r in rows) == pytest.approx(
        small_result.P_refl_total, rel=1e-12)
    assert sum(r[5] for r in rows) == pytest.approx(
        small_result.P_trans_total, rel=1e-12)


def test_scattering_json_structure(small_result):
    doc = output.scattering_json(small_result)
    text = output.json_text(doc)
    back = json.loads(text)
    M = 2 * small_result.N + 1
    assert len(back["R_n"]) == M and len(back["T_n"]) == M
    assert all(len(pair) == 2 for pair in back["R_n"])
    i0 = back["n"].index(0)
    r0 = back["R_n"][i0][0] + 1j * back["R_n"][i0][1]
    assert r0 == pytest.approx(complex(small_result.R_n[small_result.N]),
                               abs=1e-15)
    assert back["truncation_N"] == small_result.N
    assert {"P_inc", "absorption", "condition_number",
            "residual"} <= set(back)


def test_json_text_key_order_invariant():
    a = output.json_text({"b": 1, "a": [1.5, {"z": 2, "y": 3}]})
    b = output.json_text({"a": [1.5, {"y": 3, "z": 2}], "b": 1})
    assert a == b
    assert a.endswith("\n")


def test_svg_line_plot_wellformed_and_splits():
    x = np.linspace(0.0, 1.0, 11)
    y = x ** 2
    y_gap = y.copy()
    y_gap[5] = np.nan
    svg = output.svg_line_plot("tit<le&", "x", "y",
                               [(x, y, "full"), (x, y_gap, "gapped"),
                                (np.array([0.5]), np.array([0.3]), None)])
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    polys = root.findall(f"{ns}polyline")
    # one segment for the full series, two around the NaN
    assert len(polys) == 3
    assert len(root.findall(f"{ns}circle")) == 1
    texts = [t.text for t in root.findall(f"{ns}text")]
    assert "tit<le&" in texts  # escaped on write, restored by the parser


def test_svg_line_plot_empty_series():
    svg = output.svg_line_plot("t", "x", "y",
                               [(np.array([]), np.array([]), None)])
    ET.fromstring(svg)


def test_svg_line_plot_deterministic():
    rng = np.random.default_rng(0xb0b)
    x = np.sort(rng.uniform(-3, 3, 40))
    y = rng.standard_normal(40)
    a = output.svg_line_plot("t", "x", "y", [(x, y, "s")])
    b = output.svg_line_plot("t", "x", "y", [(x.copy(), y.copy(), "s")])
    assert a == b


def test_svg_bar_chart_wellformed():
    svg = output.svg_bar_chart("bars", ["A_f", "A_b"], [0.0, -0.185],
                               ylabel="A")
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    rects = root.findall(f"{ns}rect")
    assert len(rects) >= 4  # background + frame + two bars
    labels = [t.text for t in root.findall(f"{ns}text")]
    assert "A_f" in labels and "A_b" in labels


def test_pgm_header_and_mapping():
    a = 0.25
    frame = np.array([[-a, 0.0], [a / 2, a]])
    data = output.pgm16_bytes(frame, a)
    header = b"P5\n2 2\n65535\n"
    assert data.startswith(header)
    pix = np.frombuffer(data[len(header):], dtype=">u2").reshape(2, 2)
    assert pix[0, 0] == 1          # -amplitude
    assert pix[0, 1] == 32768      # zero
    assert pix[1, 0] == 49152      # +amplitude/2
    assert pix[1, 1] == 65535      # +amplitude


def test_pgm_clips_out_of_range():
    frame = np.array([[-5.0, 5.0]])
    pix = np.frombuffer(output.pgm16_bytes(frame, 1.0)[-4:], dtype=">u2")
    assert pix[0] == 0 and pix[1] == 65535


def test_pgm_degenerate_amplitude():
    frame = np.zeros((3, 4), np.float32)
    for amp in (0.0, -1.0, math.inf, math.nan):
        data = output.pgm16_bytes(frame, amp)
        pix = np.frombuffer(data[len(b"P5\n4 3\n65535\n"):], dtype=">u2")
        assert (pix == 32768).all()


def test_pgm_mapping_is_monotone():
    rng = np.random.default_rng(0x9c7)
    frame = rng.uniform(-1.0, 1.0, (6, 7))
    data = output.pgm16_bytes(frame, 1.0)
    pix = np.frombuffer(data[len(b"P5\n7 6\n65535\n"):],
                        dtype=">u2").astype(int).reshape(6, 7)
    order = np.argsort(frame.ravel())
    assert (np.diff(pix.ravel()[order]) >= 0).all()
