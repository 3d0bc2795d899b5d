import math

import numpy as np
import pytest
from scipy import integrate

from wdmcap import coeffs
from wdmcap.coeffs import (CoefficientTable, GridError, QuadratureError, compute_S,
                           compute_coefficient_table, compute_s_batch, propagate_dispersion,
                           rrc_leakage, rrc_pulse, rrc_shape, rrc_waveform, two_pulse_collisions,
                           z_weights)
from wdmcap.config import SystemConfig

# c[1][2][0] (1/W) for the reference link from the same quadrature at
# z_steps = 4096, i.e. four halvings finer than the default grid.
C120_REFERENCE = 1.30932037


def test_pulse_unit_energy(link):
    assert rrc_pulse(link).energy() == pytest.approx(1.0, abs=1e-9)


def test_pulse_spectrum_flat_and_bandlimited(link):
    g = rrc_pulse(link)
    spec = np.abs(np.fft.fft(g.samples) * g.dt) ** 2 * link.symbol_rate
    f = np.abs(np.fft.fftfreq(g.samples.size, g.dt))
    rs = link.symbol_rate
    assert np.allclose(spec[f <= 0.9 * rs / 2], 1.0, atol=1e-3)
    assert spec[f >= 1.1 * rs / 2 + 2 / (g.samples.size * g.dt)].max() < 1e-3


def test_sinc_zero_crossings():
    g = rrc_waveform(0.0, 32e9, 2, 2**18)
    center = g.samples.size // 2
    lags = center + 2 * np.array([k for k in range(-50, 51) if k != 0])
    peak = abs(g.samples[center])
    assert np.max(np.abs(g.samples[lags])) / peak < 1e-6


@pytest.mark.parametrize("rolloff,nsym", [(0.5, 16), (0.1, 32), (1.0, 8)])
def test_leakage_matches_tail_integral(rolloff, nsym):
    # independent oracle: adaptive quadrature of h^2 beyond both window edges
    f = lambda x: rrc_shape(np.array([x]), rolloff)[0] ** 2
    edges = np.arange(nsym / 2, 4000.0, 1.0)
    tail = sum(integrate.quad(f, a, a + 1.0, limit=200, epsabs=1e-16)[0] for a in edges)
    assert rrc_leakage(rolloff, 8, nsym) == pytest.approx(2 * tail, rel=1e-2)


def test_rrc_special_points_continuous():
    for b in (0.1, 0.25, 0.5, 1.0):
        xs = 1 / (4 * b)
        near = rrc_shape(np.array([xs - 1e-6, xs + 1e-6, 1e-7]), b)
        exact = rrc_shape(np.array([xs, xs, 0.0]), b)
        assert np.allclose(near, exact, atol=1e-5)


def test_dispersion_identity_at_zero(link):
    g = rrc_pulse(link)
    out = propagate_dispersion(g, 0.0, link)
    assert np.array_equal(out.samples, g.samples)


@pytest.mark.parametrize("z", [1.0, 50.0, 250.0])
def test_dispersion_conserves_energy(link, z):
    g = rrc_pulse(link)
    assert propagate_dispersion(g, z, link).energy() == pytest.approx(g.energy(), abs=1e-9)


def _rms_width(w):
    p = np.abs(w.samples) ** 2
    t = w.t
    mean = np.sum(t * p) / p.sum()
    return math.sqrt(np.sum((t - mean) ** 2 * p) / p.sum())


def test_rms_broadening_matches_direct_dft():
    cfg = SystemConfig(samples_per_symbol=4, time_window_symbols=512)
    g = rrc_pulse(cfg)
    n = g.samples.size
    out = propagate_dispersion(g, 250.0, cfg)
    # oracle: explicit O(N^2) DFT matrices, no FFT
    idx = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    omega = 2 * np.pi * np.where(idx < n // 2, idx, idx - n) / (n * g.dt)
    spec = F @ g.samples
    direct = (F.conj() @ (spec * np.exp(-0.5j * cfg.beta2 * omega**2 * 250.0))) / n
    ref = coeffs.SampledWaveform(direct, g.dt, g.t0)
    assert _rms_width(out) == pytest.approx(_rms_width(ref), rel=1e-6)
    assert _rms_width(out) > 5 * _rms_width(g)


def test_dispersion_rejects_negative_z(link):
    with pytest.raises(ValueError):
        propagate_dispersion(rrc_pulse(link), -1.0, link)


def test_dispersion_edge_check():
    cfg = SystemConfig(samples_per_symbol=2, time_window_symbols=128, rolloff=1.0)
    with pytest.raises(GridError):
        propagate_dispersion(rrc_pulse(cfg), 5000.0, cfg)


@pytest.mark.parametrize("alpha", [0.0, 1e-3, 0.05, 10.0, 1e4])
def test_z_weights_integrate_exponential_exactly(alpha):
    z, w = z_weights(250.0, 100, alpha)
    exact = 250.0 if alpha == 0 else -math.expm1(-alpha * 250.0) / alpha
    assert w.sum() == pytest.approx(exact, rel=1e-10)
    # linear functions are also exact against the exponential weight
    exact_lin = (250.0**2 / 2 if alpha == 0 else
                 (1 - math.exp(-alpha * 250) * (1 + alpha * 250)) / alpha**2)
    assert np.dot(w, z) == pytest.approx(exact_lin, rel=1e-9, abs=1e-300)


def _direct_s(cfg, spacing, p, l, m):
    """Independent evaluation of S by explicit DFT interpolation and trapezoid in z."""
    g0 = rrc_pulse(cfg)
    n = g0.samples.size
    T = cfg.symbol_period
    idx = np.arange(n)
    t = g0.t0 + g0.dt * idx
    omega = 2 * np.pi * np.where(idx < n // 2, idx, idx - n) / (n * g0.dt)
    spec0 = np.exp(-2j * np.pi * np.outer(idx, idx) / n) @ g0.samples

    def g_at(z, shift):
        phase = np.exp(1j * np.outer(t - g0.t0 - shift, omega))
        return phase @ (spec0 * np.exp(-0.5j * cfg.beta2 * omega**2 * z)) / n

    walk = cfg.beta2 * cfg.channel_spacing * spacing
    zs = np.linspace(0, cfg.span_length, cfg.z_steps + 1)
    vals = []
    for z in zs:
        d = walk * z
        integrand = (np.conj(g_at(z, 0)) * g_at(z, p * T) * np.conj(g_at(z, m * T + d))
                     * g_at(z, l * T + d))
        vals.append(np.exp(-cfg.alpha * z) * integrand.sum() * g0.dt * T)
    return np.trapezoid(vals, zs)


@pytest.mark.parametrize("spacing,triple", [
    (1, (0, 0, 0)), (1, (0, 1, 1)), (1, (0, -2, -2)), (2, (1, 1, 1)),
    (1, (1, 0, 1)), (2, (2, -1, 1)),
])
def test_fft_path_matches_direct_dft(spacing, triple):
    # 8 samples/symbol keeps every pulse product alias-free, so both routes
    # approximate the same continuous integral on N = 256 points; the short span
    # keeps lag plus walk-off inside a quarter window
    cfg = SystemConfig(samples_per_symbol=8, time_window_symbols=32, rolloff=1.0,
                       span_length=6.0, alpha_db=0.0, memory=2, z_steps=8)
    fast = compute_s_batch(cfg, spacing, [triple])[0]
    ref = _direct_s(cfg, spacing, *triple)
    assert abs(fast - ref) <= 1e-9 * max(abs(ref), 1e-300) + 1e-15


def test_compute_s_rejects_same_user(small_config):
    with pytest.raises(ValueError):
        compute_S(2, 2, 0, 0, 0, small_config)


def test_two_pulse_fast_path_equals_general_path(small_config):
    lags = [-2, -1, 0, 1, 2]
    fast = two_pulse_collisions(small_config, 1, lags)
    general = compute_s_batch(small_config, 1, [(0, m, m) for m in lags])
    assert np.allclose(fast, general, rtol=1e-12, atol=0)


def test_compute_s_single_entry_consistent(small_config):
    direct = compute_S(1, 3, 0, 1, 1, small_config)
    batch = compute_s_batch(small_config, 2, [(0, 1, 1)])[0]
    assert direct == pytest.approx(batch, rel=1e-12)


def test_huge_loss_kills_coefficient(small_config):
    # S -> R(0) T / alpha for alpha L >> 1; tiny once alpha is absurdly large
    g = rrc_pulse(small_config)
    r0t = np.sum(np.abs(g.samples) ** 4) * g.dt * small_config.symbol_period
    cfg = small_config.replace(alpha_db=1e6)
    s = two_pulse_collisions(cfg, 1, [0])[0]
    assert (s * cfg.alpha).real == pytest.approx(r0t, rel=1e-3)
    s_inf = two_pulse_collisions(small_config.replace(alpha_db=1e14), 1, [0, 1])
    assert np.all(np.abs(s_inf) < 1e-12)


def test_walkoff_beyond_window_raises():
    cfg = SystemConfig(samples_per_symbol=2, time_window_symbols=128, rolloff=1.0,
                       span_length=250.0, memory=2)
    with pytest.raises(GridError):
        two_pulse_collisions(cfg, 1, [0])


def test_z_steps_halving_converges(link):
    coarse = two_pulse_collisions(link, 1, [0])[0].real
    fine = two_pulse_collisions(link.replace(z_steps=2 * link.z_steps), 1, [0])[0].real
    assert abs(coarse - fine) / abs(fine) < 1e-3


def test_c120_regression(link_table):
    assert link_table.coeff(1, 2, 0) == pytest.approx(C120_REFERENCE, rel=1e-3)


def test_table_nonnegative_and_real(link_table):
    assert np.all(link_table.c >= 0)
    off = ~np.eye(3, dtype=bool)
    raw = link_table.raw[off]
    assert np.all(np.abs(raw.imag) <= 1e-3 * np.abs(raw))


def test_table_shift_invariance(link_table):
    c = link_table.c
    assert np.array_equal(c[0, 1], c[1, 2])
    assert np.array_equal(c[0, 1], c[1, 0])
    assert np.array_equal(c[0, 2], c[2, 0])


def test_closer_channels_couple_more(link_table):
    assert np.all(link_table.c[0, 1] >= link_table.c[0, 2])


def test_table_sum_close_to_effective_length(link, link_table):
    # summing over all lags and the whole frame gives gamma * L_eff (times R
    # integrated over all shifts = 1/T); the +/-M window captures most of it
    l_eff = -math.expm1(-link.alpha * link.span_length) / link.alpha
    total = link_table.c[0, 1].sum()
    assert 0.5 * link.gamma * l_eff < total <= link.gamma * l_eff * (1 + 1e-6)


def test_zero_walkoff_gives_symmetric_lags(small_config):
    cfg = small_config.replace(beta2=0.0)
    c = compute_coefficient_table(cfg).c[0, 1]
    assert np.allclose(c, c[::-1], rtol=1e-6, atol=0)


def test_gamma_zero_gives_zero_table(small_config):
    table = compute_coefficient_table(small_config.replace(gamma=0.0))
    assert not np.any(table.c)


def test_table_depends_only_on_spacing(small_config):
    table = compute_coefficient_table(small_config.replace(num_users=4))
    c = table.c
    assert np.array_equal(c[0, 1], c[2, 3])
    assert np.array_equal(c[0, 2], c[1, 3])
    assert table.c.shape == (4, 4, 5)


def test_realness_violation_raises(small_config, monkeypatch):
    monkeypatch.setattr(coeffs, "two_pulse_collisions",
                        lambda cfg, d, lags: np.full(len(list(lags)), 1.0 + 0.01j))
    with pytest.raises(QuadratureError, match="not real"):
        compute_coefficient_table(small_config)


def test_negative_coefficient_raises(small_config, monkeypatch):
    monkeypatch.setattr(coeffs, "two_pulse_collisions",
                        lambda cfg, d, lags: np.full(len(list(lags)), -1e-3 + 0j))
    with pytest.raises(QuadratureError, match="negative"):
        compute_coefficient_table(small_config)


def test_tiny_negative_clamped(small_config, monkeypatch):
    monkeypatch.setattr(coeffs, "two_pulse_collisions",
                        lambda cfg, d, lags: np.full(len(list(lags)), -1e-14 + 0j))
    assert np.all(compute_coefficient_table(small_config).c == 0)


def test_csv_roundtrip(tmp_path, link_table):
    path = tmp_path / "c.csv"
    link_table.to_csv(path)
    back = CoefficientTable.from_csv(path, link_table.gamma)
    assert np.array_equal(back.c, link_table.c)
    assert np.array_equal(back.raw, link_table.raw)
    header = path.read_text().splitlines()[0]
    assert header == "k,w,m,c_real,S_raw_re,S_raw_im"
