import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfinterp.beamform import (
    BModeImage, RxSLCube, das_beamform, envelope_and_log, load_pgm, pixel_coordinates, save_pgm,
    scan_convert, synthesize_scan_lines,
)
from rfinterp.simcore import ProbeConfig, RFCube, arc_centre, convex_probe, element_positions, xmit_axis_elements

from oracles import point_cube


@pytest.fixture(scope="module")
def probe():
    return ProbeConfig()


def test_scan_line_counts(probe):
    cube = RFCube(np.zeros((512, 64, 96)), probe)
    assert synthesize_scan_lines(cube, 4).num_lines == 384
    assert synthesize_scan_lines(cube, 8, xmits=np.arange(0, 96, 2)).num_lines == 384
    assert synthesize_scan_lines(cube, 1).num_lines == 96
    with pytest.raises(ValueError):
        synthesize_scan_lines(cube, 3)
    with pytest.raises(ValueError):
        synthesize_scan_lines(cube, 4, xmits=[0, 1, 3])


def test_mla_offsets_tile_uniformly(probe):
    cube = RFCube(np.zeros((512, 64, 96)), probe)
    four = synthesize_scan_lines(cube, 4)
    np.testing.assert_allclose(np.diff(four.sl_eta), 0.5)
    np.testing.assert_allclose(four.sl_eta[:4], [0.25, 0.75, 1.25, 1.75])
    eight = synthesize_scan_lines(cube, 8, xmits=np.arange(0, 96, 2))
    np.testing.assert_allclose(np.diff(eight.sl_eta), 0.5)
    assert eight.source_xmit.tolist() == np.repeat(np.arange(0, 96, 2), 8).tolist()


def test_explicit_positions_use_nearest_transmit(probe):
    cube = RFCube(np.zeros((512, 64, 96)), probe)
    lines = synthesize_scan_lines(cube, 4, sl_positions=[1.0, 2.6, 5.2])
    assert lines.source_xmit.tolist() == [0, 1, 2]


def test_zero_cube_zero_image(probe):
    lines = synthesize_scan_lines(RFCube(np.zeros((512, 64, 96)), probe), 4)
    assert not das_beamform(lines).any()


@pytest.mark.parametrize("xmit,depth", [(48, 4e-3), (30, 6.5e-3)])
def test_point_localization(probe, xmit, depth):
    lines = synthesize_scan_lines(point_cube(probe, xmit, depth), 4)
    env = np.abs(das_beamform(lines))
    i, j = np.unravel_index(np.argmax(env), env.shape)
    assert abs(i - depth / probe.sample_depth) <= 1
    axis = xmit_axis_elements(probe)[xmit]
    nearest = np.argsort(np.abs(lines.sl_eta - axis))[:2]
    assert min(abs(j - n) for n in nearest) <= 1


def test_sla_peak_on_transmit_line(probe):
    lines = synthesize_scan_lines(point_cube(probe, 40, 5e-3), 1)
    env = envelope_and_log(das_beamform(lines)).pixels
    assert np.unravel_index(np.argmax(env), env.shape)[1] == 40


def test_coherent_gain(probe):
    cube = point_cube(probe, 48, 5e-3)
    lines = synthesize_scan_lines(cube, 4)
    bf = das_beamform(lines)
    single = np.abs(cube.data).max()
    assert 20 * np.log10(np.abs(bf).max() / single) >= 20


def test_two_scatterers_resolved(probe):
    p = probe.replace(tx_beam_width=3e-3)
    a = point_cube(p, 40, 5e-3, lateral=-1.5e-3)
    b = point_cube(p, 40, 5e-3, lateral=1.5e-3)
    cube = RFCube(a.data + b.data, p)
    env = np.abs(das_beamform(synthesize_scan_lines(cube, 4)))
    row = env[int(round(5e-3 / p.sample_depth)) - 3:int(round(5e-3 / p.sample_depth)) + 4].max(0)
    x = pixel_coordinates(p, synthesize_scan_lines(cube, 4).sl_eta, 1)[0, :, 0]
    x0 = element_positions(p)[xmit_axis_elements(p)[40], 0]
    left = row[np.argmin(np.abs(x - (x0 - 1.5e-3)))]
    right = row[np.argmin(np.abs(x - (x0 + 1.5e-3)))]
    mid = row[np.argmin(np.abs(x - x0))]
    assert mid < 0.5 * min(left, right)


def test_das_linearity(probe):
    r = np.random.default_rng(0)
    a = r.standard_normal((512, 64, 96)).astype(np.float32)
    b = r.standard_normal((512, 64, 96)).astype(np.float32)
    la = synthesize_scan_lines(RFCube(a, probe), 1)
    la = la.with_data(la.data.astype(np.float64))
    lb = la.with_data(b[:, :, la.source_xmit].astype(np.float64))
    lab = la.with_data(2 * la.data - 3 * lb.data)
    np.testing.assert_allclose(das_beamform(lab), 2 * das_beamform(la) - 3 * das_beamform(lb),
                               atol=1e-9)


def test_nearest_mode_close_to_linear(probe):
    lines = synthesize_scan_lines(point_cube(probe, 48, 5e-3), 4)
    lin = das_beamform(lines)
    near = das_beamform(lines, interpolation="nearest")
    assert np.abs(lin - near).max() < 0.35 * np.abs(lin).max()
    with pytest.raises(ValueError):
        das_beamform(lines, interpolation="cubic")


def test_apodization_scales(probe):
    lines = synthesize_scan_lines(point_cube(probe, 48, 5e-3), 1)
    np.testing.assert_allclose(das_beamform(lines, apodization=np.full(64, 0.5)),
                               0.5 * das_beamform(lines))


def _hand_envelope(x):
    """Analytic signal by zeroing negative frequencies (even length)."""
    n = len(x)
    spec = np.fft.fft(x)
    h = np.zeros(n)
    h[0] = h[n // 2] = 1
    h[1:n // 2] = 2
    return np.abs(np.fft.ifft(spec * h))


def test_sinusoid_envelope_constant():
    n = np.arange(64)
    col = 3.0 * np.cos(2 * np.pi * 8 * n / 64 + 0.3)
    env = _hand_envelope(col)
    assert np.abs(env[8:-8] / 3.0 - 1).max() < 0.01
    img = envelope_and_log(np.column_stack([col, col]))
    assert img.pixels[8:-8].min() > 20 * np.log10(0.99)


def test_envelope_matches_quadrature_oracle(rng):
    x = rng.standard_normal((64, 3))
    img = envelope_and_log(x, dynamic_range=200)
    env = np.column_stack([_hand_envelope(c) for c in x.T])
    np.testing.assert_allclose(img.pixels, 20 * np.log10(env / env.max()), atol=1e-9)


def test_log_normalization(rng):
    x = rng.standard_normal((128, 8))
    a, b = envelope_and_log(x), envelope_and_log(10 * x)
    np.testing.assert_allclose(a.pixels, b.pixels, atol=1e-12)
    assert a.pixels.max() == 0.0 and a.pixels.min() >= -60.0
    zero = envelope_and_log(np.zeros((16, 4)), dynamic_range=40)
    assert zero.degenerate and np.all(zero.pixels == -40)


def test_rx_sl_cube_validation(probe):
    with pytest.raises(ValueError):
        RxSLCube(np.zeros((8, 4, 3)), 1, [0, 1], [0.0, 1.0], probe)


def test_scan_convert_convex_and_linear():
    p = convex_probe(depth_samples=256)
    lines = synthesize_scan_lines(RFCube(np.zeros((256, 64, 96)), p), 4)
    img = BModeImage(np.full((256, 384), -10.0))
    conv, extent = scan_convert(img, p, lines.sl_eta)
    assert conv.scan_converted and conv.geometry == "convex"
    inside = np.isclose(conv.pixels, -10.0, atol=1e-9)
    assert np.all(inside | (conv.pixels == -60.0)) and inside.mean() > 0.3
    assert extent[0] < 0 < extent[1]
    lin, _ = scan_convert(img, ProbeConfig(depth_samples=256), lines.sl_eta)
    np.testing.assert_array_equal(lin.pixels, img.pixels)


def test_pixel_coordinates_convex_radial():
    p = convex_probe(depth_samples=16)
    xz = pixel_coordinates(p, [10.0, 100.0])
    cx, cz = arc_centre(p)
    r = np.hypot(xz[..., 0] - cx, xz[..., 1] - cz) - p.radius
    np.testing.assert_allclose(r, np.arange(16)[:, None] * p.sample_depth * np.ones(2), atol=1e-12)


def test_pgm_round_trip(tmp_path):
    pixels = np.linspace(-60, 0, 40 * 30).reshape(40, 30)
    img = BModeImage(pixels, meta={"scheme": "rx_x4"})
    save_pgm(img, tmp_path / "b.pgm", png=True)
    back = load_pgm(tmp_path / "b.pgm")
    np.testing.assert_array_equal(back, img.to_uint8())
    meta = json.loads((tmp_path / "b.pgm.json").read_text())
    assert meta["dynamic_range_db"] == 60 and meta["scheme"] == "rx_x4"
    assert (tmp_path / "b.png").exists()


def test_pgm_whitespace_pixel_values(tmp_path):
    # pixel bytes equal to whitespace characters must survive the header parse
    db = (np.array([[9, 10, 32, 13], [11, 12, 0, 255]]) / 255.0 - 1) * 60
    img = BModeImage(db)
    save_pgm(img, tmp_path / "w.pgm")
    np.testing.assert_array_equal(load_pgm(tmp_path / "w.pgm"), img.to_uint8())


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 1e4), st.integers(0, 2**32 - 1))
def test_log_image_bounds_property(scale, seed):
    x = np.random.default_rng(seed).standard_normal((32, 4)) * scale
    img = envelope_and_log(x)
    assert img.pixels.max() == 0.0
    assert img.pixels.min() >= -60.0
