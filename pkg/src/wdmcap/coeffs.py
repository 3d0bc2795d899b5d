"""Dispersed pulse waveforms and the perturbative XPM coupling coefficients.

The time integral inside S is evaluated in symbol-normalized time (the
unit-energy pulse is rescaled by sqrt(T)), so S comes out in km and
``gamma * S`` in 1/W, matching symbols whose squared magnitude is a power in W.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from pathlib import Path

import numpy as np

from .config import MAX_LEAKAGE, SystemConfig

logger = logging.getLogger(__name__)

# fraction of the window (per side) treated as "edge" by the aliasing checks
EDGE_FRACTION = 1.0 / 16.0
REALNESS_TOL = 1e-3
NEGATIVE_CLAMP = -1e-12


class GridError(ValueError):
    """The numerical grid cannot represent the requested waveform or shift."""


class QuadratureError(ArithmeticError):
    """Coefficient quadrature produced a value violating a known property."""


@dataclasses.dataclass(frozen=True)
class SampledWaveform:
    samples: np.ndarray
    dt: float
    t0: float

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.dt)


def rrc_shape(x, rolloff: float) -> np.ndarray:
    """Root-raised-cosine impulse response in symbol-normalized time.

    ``x = t/T``; normalized so that the integral of h(x)^2 dx is 1.
    """
    x = np.asarray(x, dtype=float)
    b = rolloff
    if b == 0.0:
        return np.sinc(x)
    out = np.empty_like(x)
    at_zero = np.abs(x) < 1e-12
    at_sing = np.abs(np.abs(x) - 1.0 / (4.0 * b)) < 1e-9
    regular = ~(at_zero | at_sing)
    xr = x[regular]
    num = np.sin(np.pi * xr * (1 - b)) + 4 * b * xr * np.cos(np.pi * xr * (1 + b))
    den = np.pi * xr * (1 - (4 * b * xr) ** 2)
    out[regular] = num / den
    out[at_zero] = 1 - b + 4 * b / np.pi
    out[at_sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return out


def _window_x(samples_per_symbol: int, nsym: int) -> np.ndarray:
    n = samples_per_symbol * nsym
    return (np.arange(n) - n // 2) / samples_per_symbol


def rrc_leakage(rolloff: float, samples_per_symbol: int, nsym: int) -> float:
    """Fraction of the pulse energy falling outside a window of ``nsym`` symbols.

    The sampled sum of h^2 is exact for the untruncated pulse (h^2 is band
    limited below the sampling rate), so the shortfall is the leakage.
    """
    h = rrc_shape(_window_x(samples_per_symbol, nsym), rolloff)
    inside = math.fsum(h * h) / samples_per_symbol
    return max(0.0, 1.0 - inside)


def rrc_pulse(config: SystemConfig) -> SampledWaveform:
    """Unit-energy RRC pulse g(0, t) on the configured grid (centered window)."""
    return rrc_waveform(config.rolloff, config.symbol_rate, config.samples_per_symbol,
                        config.time_window_symbols)


def rrc_waveform(rolloff: float, symbol_rate: float, samples_per_symbol: int,
                 nsym: int) -> SampledWaveform:
    leak = rrc_leakage(rolloff, samples_per_symbol, nsym)
    if leak > MAX_LEAKAGE:
        raise GridError(f"window of {nsym} symbols leaks {leak:.2e} of the pulse energy")
    T = 1.0 / symbol_rate
    dt = T / samples_per_symbol
    x = _window_x(samples_per_symbol, nsym)
    g = rrc_shape(x, rolloff).astype(complex)
    g /= math.sqrt(np.sum(np.abs(g) ** 2) * dt)
    return SampledWaveform(g, dt, float(x[0] * T))


def angular_frequencies(n: int, dt: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n, dt)


def dispersion_filter(omega: np.ndarray, beta2: float, z: float) -> np.ndarray:
    """All-pass dispersion transfer function for numpy's e^{+jwt} convention."""
    return np.exp(-0.5j * beta2 * omega**2 * z)


def edge_energy_fraction(samples: np.ndarray) -> float:
    n = samples.size
    edge = max(1, int(n * EDGE_FRACTION))
    p = np.abs(samples) ** 2
    total = p.sum()
    if total == 0:
        return 0.0
    return float((p[:edge].sum() + p[-edge:].sum()) / total)


def propagate_dispersion(pulse: SampledWaveform, z: float, config: SystemConfig,
                         check: bool = True) -> SampledWaveform:
    """Linear (dispersion-only) evolution of a waveform over ``z`` km."""
    if z < 0:
        raise ValueError("z must be >= 0")
    if z == 0:
        return SampledWaveform(pulse.samples.copy(), pulse.dt, pulse.t0)
    omega = angular_frequencies(pulse.samples.size, pulse.dt)
    out = np.fft.ifft(np.fft.fft(pulse.samples) * dispersion_filter(omega, config.beta2, z))
    if check:
        frac = edge_energy_fraction(out)
        if frac > MAX_LEAKAGE:
            raise GridError(f"dispersed pulse puts {frac:.2e} of its energy at the window edge")
    return SampledWaveform(out, pulse.dt, pulse.t0)


def z_weights(length: float, intervals: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for integral_0^L e^{-alpha z} f(z) dz.

    Composite trapezoid in which the exponential is integrated exactly
    against the piecewise-linear interpolant of f.  Reduces to the plain
    trapezoid rule as alpha*h -> 0 and stays exact when alpha*h is large.
    """
    if intervals < 1:
        raise ValueError("need at least one z interval (two nodes)")
    z = np.linspace(0.0, length, intervals + 1)
    h = length / intervals
    x = alpha * h
    if x < 1e-4:
        w_left = h * (0.5 - x / 6 + x * x / 24)
        w_right = h * (0.5 - x / 3 + x * x / 8)
    else:
        e0 = -math.expm1(-x) / alpha
        e1h = (1.0 - math.exp(-x) * (1.0 + x)) / (alpha * x)
        w_left = e0 - e1h
        w_right = e1h
    decay = np.exp(-alpha * z[:-1])
    w = np.zeros(z.size)
    w[:-1] += decay * w_left
    w[1:] += decay * w_right
    return z, w


def _band_mask(omega: np.ndarray, config: SystemConfig) -> np.ndarray:
    # products of two pulses occupy |f| <= (1 + rolloff) Rs; keep a margin
    fmax = 1.25 * (1.0 + config.rolloff) * config.symbol_rate
    return np.abs(omega) <= 2 * np.pi * fmax


def _check_shift(max_shift: float, config: SystemConfig):
    window = config.time_window_symbols * config.symbol_period
    if max_shift > window / 4:
        raise GridError(
            f"time shift of {max_shift / config.symbol_period:.1f} symbols is too large "
            f"for a {config.time_window_symbols}-symbol window"
        )


def compute_s_batch(config: SystemConfig, spacing: int, triples) -> np.ndarray:
    """S^{p,l,m} for user pairs ``spacing`` channels apart, one value per triple.

    Shared per-z work (dispersing the pulse, the FFTs of the pulse products)
    is done once for the whole batch.  Returns complex values in km.
    """
    triples = [tuple(int(v) for v in t) for t in triples]
    if spacing < 1:
        raise ValueError("spacing must be >= 1 (k != w)")
    T = config.symbol_period
    sps = config.samples_per_symbol
    walk = config.beta2 * config.channel_spacing * spacing  # s/km
    lag_extent = max(abs(v) for t in triples for v in t) if triples else 0
    _check_shift(lag_extent * T + abs(walk) * config.span_length, config)

    pulse = rrc_pulse(config)
    n = pulse.samples.size
    dt = pulse.dt
    omega = angular_frequencies(n, dt)
    mask = _band_mask(omega, config)
    om = omega[mask]
    G0 = np.fft.fft(pulse.samples)
    z, wz = z_weights(config.span_length, config.z_steps, config.alpha)

    ps = sorted({t[0] for t in triples})
    qs = sorted({t[1] - t[2] for t in triples})
    ms = sorted({t[2] for t in triples})
    mshift = {m: np.exp(-1j * om * m * T) for m in ms}
    acc = np.zeros(len(triples), dtype=complex)
    for zi, wi in zip(z, wz):
        if wi == 0.0:
            continue
        g = np.fft.ifft(G0 * dispersion_filter(omega, config.beta2, zi))
        if zi == z[-1]:
            frac = edge_energy_fraction(g)
            if frac > MAX_LEAKAGE:
                raise GridError(f"dispersed pulse puts {frac:.2e} of its energy at the window edge")
        gc = np.conj(g)
        conj_spec = {p: np.conj(np.fft.fft(g * np.roll(gc, p * sps))[mask]) for p in ps}
        spec = {q: np.fft.fft(gc * np.roll(g, q * sps))[mask] for q in qs}
        walk_phase = np.exp(-1j * om * walk * zi)
        for j, (p, l, m) in enumerate(triples):
            integrand = spec[l - m] * conj_spec[p] * walk_phase * mshift[m]
            acc[j] += wi * integrand.sum()
    # Parseval (dt/N) and symbol-normalized time (x T)
    return acc * (dt / n) * T


def compute_S(k: int, w: int, p: int, l: int, m: int, config: SystemConfig) -> complex:
    """Single coefficient S_{k,w}^{p,l,m} in km (users are 1-based)."""
    if k == w:
        raise ValueError("S is only defined for k != w")
    return complex(compute_s_batch(config, abs(k - w), [(p, l, m)])[0])


def two_pulse_collisions(config: SystemConfig, spacing: int, lags) -> np.ndarray:
    """Fast path for S^{0,m,m}: autocorrelation of |g(z,t)|^2 at shift mT + walk-off."""
    lags = np.asarray(list(lags), dtype=int)
    T = config.symbol_period
    walk = config.beta2 * config.channel_spacing * spacing
    _check_shift(np.abs(lags).max() * T + abs(walk) * config.span_length, config)
    pulse = rrc_pulse(config)
    n = pulse.samples.size
    omega = angular_frequencies(n, pulse.dt)
    mask = _band_mask(omega, config)
    om = omega[mask]
    G0 = np.fft.fft(pulse.samples)
    shifts = np.exp(-1j * np.outer(lags * T, om))
    z, wz = z_weights(config.span_length, config.z_steps, config.alpha)
    acc = np.zeros(lags.size, dtype=complex)
    for zi, wi in zip(z, wz):
        g = np.fft.ifft(G0 * dispersion_filter(omega, config.beta2, zi))
        if zi == z[-1]:
            frac = edge_energy_fraction(g)
            if frac > MAX_LEAKAGE:
                raise GridError(f"dispersed pulse puts {frac:.2e} of its energy at the window edge")
        power_spec = np.abs(np.fft.fft(np.abs(g) ** 2)[mask]) ** 2
        acc += wi * (shifts @ (power_spec * np.exp(-1j * om * walk * zi)))
    return acc * (pulse.dt / n) * T


@dataclasses.dataclass(frozen=True)
class CoefficientTable:
    """XPM coefficients c[k][w][m] in 1/W, stored 0-based as ``c[k-1, w-1, m+M]``.

    ``raw`` holds the complex S^{0,m,m} values (km) before the real part was
    taken and scaled by gamma; the diagonal k == w is zero in both.
    """

    c: np.ndarray
    raw: np.ndarray
    memory: int
    gamma: float

    @property
    def num_users(self) -> int:
        return self.c.shape[0]

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.memory, self.memory + 1)

    def coeff(self, k: int, w: int, m: int) -> float:
        return float(self.c[k - 1, w - 1, m + self.memory])

    def row_sums(self) -> np.ndarray:
        """sum_m c[k][w][m] as a (K, K) matrix."""
        return self.c.sum(axis=2)

    def scaled(self, factor: float) -> "CoefficientTable":
        return CoefficientTable(self.c * factor, self.raw, self.memory, self.gamma * factor)

    @classmethod
    def from_spacing_profiles(cls, profiles: dict, num_users: int, memory: int,
                              gamma: float, raw_profiles: dict | None = None):
        """Build a table whose entries depend only on |k - w|."""
        size = 2 * memory + 1
        c = np.zeros((num_users, num_users, size))
        raw = np.zeros((num_users, num_users, size), dtype=complex)
        for k in range(num_users):
            for w in range(num_users):
                if k != w:
                    c[k, w] = profiles[abs(k - w)]
                    if raw_profiles is not None:
                        raw[k, w] = raw_profiles[abs(k - w)]
        return cls(c, raw, memory, gamma)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "w", "m", "c_real", "S_raw_re", "S_raw_im"])
            for k in range(self.num_users):
                for w in range(self.num_users):
                    if k == w:
                        continue
                    for j, m in enumerate(self.lags):
                        s = self.raw[k, w, j]
                        writer.writerow([k + 1, w + 1, int(m), repr(float(self.c[k, w, j])),
                                         repr(float(s.real)), repr(float(s.imag))])

    @classmethod
    def from_csv(cls, path, gamma: float) -> "CoefficientTable":
        rows = list(csv.DictReader(Path(path).open()))
        num_users = max(int(r["k"]) for r in rows)
        memory = max(abs(int(r["m"])) for r in rows)
        size = 2 * memory + 1
        c = np.zeros((num_users, num_users, size))
        raw = np.zeros((num_users, num_users, size), dtype=complex)
        for r in rows:
            k, w, m = int(r["k"]) - 1, int(r["w"]) - 1, int(r["m"]) + memory
            c[k, w, m] = float(r["c_real"])
            raw[k, w, m] = complex(float(r["S_raw_re"]), float(r["S_raw_im"]))
        return cls(c, raw, memory, gamma)


def compute_coefficient_table(config: SystemConfig) -> CoefficientTable:
    """c[k][w][m] = gamma * Re S^{0,m,m}_{k,w} for all pairs and lags -M..M."""
    lags = np.arange(-config.memory, config.memory + 1)
    profiles, raw_profiles = {}, {}
    for spacing in range(1, config.num_users):
        s = two_pulse_collisions(config, spacing, lags)
        mag = np.abs(s)
        nz = mag > 0
        rel_imag = np.zeros_like(mag)
        rel_imag[nz] = np.abs(s.imag[nz]) / mag[nz]
        if np.any(rel_imag > REALNESS_TOL):
            worst = int(lags[np.argmax(rel_imag)])
            raise QuadratureError(
                f"S^(0,m,m) for spacing {spacing} is not real (lag {worst}, "
                f"|Im|/|S| = {rel_imag.max():.2e})"
            )
        c = config.gamma * s.real
        if np.any(c < NEGATIVE_CLAMP):
            raise QuadratureError(f"negative coefficient {c.min():.3e} for spacing {spacing}")
        profiles[spacing] = np.clip(c, 0.0, None)
        raw_profiles[spacing] = s
        logger.debug("spacing %d: sum_m c = %.6g 1/W", spacing, profiles[spacing].sum())
    return CoefficientTable.from_spacing_profiles(
        profiles, config.num_users, config.memory, config.gamma, raw_profiles
    )


# (p, l, m) families compared in the two-pulse-collision dominance check
COLLISION_FAMILIES = {
    "S0mm": lambda m: (0, m, m),
    "S1mm": lambda m: (1, m, m),
    "S2mm": lambda m: (2, m, m),
    "S1m(m+1)": lambda m: (1, m, m + 1),
}


def collision_diagnostics(config: SystemConfig, spacing: int = 1, lags=None) -> dict:
    """|gamma S| for the four index families, over lags 0..M by default."""
    if lags is None:
        lags = range(config.memory + 1)
    lags = list(lags)
    triples = [fam(m) for fam in COLLISION_FAMILIES.values() for m in lags]
    s = compute_s_batch(config, spacing, triples)
    out = {"lags": np.array(lags)}
    for i, name in enumerate(COLLISION_FAMILIES):
        out[name] = config.gamma * np.abs(s[i * len(lags):(i + 1) * len(lags)])
    return out
