"""Split-step Fourier simulation of the WDM link and the receiver DSP chain.

The field envelope is sampled over the aggregate WDM band.  Its power
|A|^2 is in W and follows numpy's FFT convention (e^{+j w t}), for which
the linear part of the NLSE is the transfer function
exp(-j beta2 w^2 dz / 2 - alpha dz / 2).
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numba
import numpy as np
from scipy import fft as sfft

from . import mi
from .channel import SymbolFrame, ase_variance, random_frame
from .config import SystemConfig, dbm_to_watt

logger = logging.getLogger(__name__)

GUARD_BAND_HZ = 50e9
SPECTRAL_EDGE_FRACTION = 1.0 / 16.0
MAX_EDGE_ENERGY = 1e-6
RX_SAMPLES_PER_SYMBOL = 4
DEMUX_PASSBAND_HZ = 50e9  # demux filter taper ends here (neighbours start near 82 GHz)
SCENARIOS = ("tin", "lower-bound")


class AliasingError(RuntimeError):
    pass


@numba.njit(cache=True)
def _nonlinear_phase(a, coef):
    # a <- a * exp(j coef |a|^2), in place
    for i in range(a.size):
        re = a[i].real
        im = a[i].imag
        ph = coef * (re * re + im * im)
        c = math.cos(ph)
        s = math.sin(ph)
        a[i] = complex(re * c - im * s, re * s + im * c)


def rrc_spectrum(f, symbol_rate: float, rolloff: float) -> np.ndarray:
    """sqrt of the raised-cosine spectrum, in [0, 1] (1 on the flat part)."""
    f = np.abs(np.asarray(f, dtype=float))
    f1 = (1 - rolloff) * symbol_rate / 2
    f2 = (1 + rolloff) * symbol_rate / 2
    out = np.zeros_like(f)
    out[f <= f1] = 1.0
    band = (f > f1) & (f < f2)
    if rolloff > 0:
        out[band] = np.cos(np.pi / (2 * rolloff * symbol_rate) * (f[band] - f1))
    return out


@dataclasses.dataclass
class FieldGrid:
    envelope: np.ndarray
    dt: float
    center_frequency_offsets: np.ndarray  # Hz, one per user
    symbol_rate: float
    rolloff: float

    def __post_init__(self):
        self.envelope = np.asarray(self.envelope, dtype=np.complex128)
        self.center_frequency_offsets = np.asarray(self.center_frequency_offsets, dtype=float)
        offs = self.center_frequency_offsets
        needed = (np.ptp(offs) if offs.size > 1 else 0.0) + (1 + self.rolloff) * self.symbol_rate
        if 1.0 / self.dt < needed + GUARD_BAND_HZ:
            raise AliasingError(
                f"grid bandwidth {1 / self.dt / 1e9:.0f} GHz cannot hold the WDM band "
                f"({needed / 1e9:.0f} GHz) plus the {GUARD_BAND_HZ / 1e9:.0f} GHz guard"
            )
        if not np.all(np.isfinite(self.envelope)):
            raise ValueError("field contains non-finite samples")

    @property
    def num_samples(self) -> int:
        return self.envelope.size

    @property
    def samples_per_symbol(self) -> int:
        return int(round(1.0 / (self.dt * self.symbol_rate)))

    @property
    def num_symbols(self) -> int:
        return self.num_samples // self.samples_per_symbol

    def energy(self) -> float:
        return float(np.sum(np.abs(self.envelope) ** 2) * self.dt)

    def copy(self, envelope=None) -> "FieldGrid":
        return FieldGrid(self.envelope.copy() if envelope is None else envelope, self.dt,
                         self.center_frequency_offsets.copy(), self.symbol_rate, self.rolloff)


@dataclasses.dataclass(frozen=True)
class SsfmPlan:
    step_size: float  # km
    span_length: float  # km
    alpha: float  # 1/km, power
    beta2: float  # s^2/km
    gamma: float  # 1/(W km)
    gain: float  # linear power gain applied at the span end
    sigma_sq: float  # ASE, W per real dimension in the symbol bandwidth (0: noiseless)

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.span_length > 0:
            ratio = self.span_length / self.step_size
            if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
                raise ValueError(
                    f"step {self.step_size} km does not divide the {self.span_length} km span"
                )

    @property
    def num_steps(self) -> int:
        return int(round(self.span_length / self.step_size))

    @classmethod
    def from_config(cls, config: SystemConfig, step_size: float = 0.01, noise: bool = True,
                    **overrides) -> "SsfmPlan":
        kw = dict(
            step_size=step_size,
            span_length=config.span_length,
            alpha=config.alpha,
            beta2=config.beta2,
            gamma=config.gamma,
            gain=config.span_gain,
            sigma_sq=ase_variance(config) if noise else 0.0,
        )
        kw.update(overrides)
        return cls(**kw)


def channel_offsets(config: SystemConfig) -> np.ndarray:
    K = config.num_users
    return (np.arange(1, K + 1) - (K + 1) / 2) * config.spacing_hz


def _bin_shift(offset_hz: float, n: int, dt: float) -> int:
    bins = offset_hz * n * dt
    if abs(bins - round(bins)) > 1e-6:
        raise ValueError(
            f"channel offset {offset_hz / 1e9:g} GHz is not on the FFT grid; "
            "choose a symbol count that makes it an integer number of bins"
        )
    return int(round(bins))


def shape_symbols(symbols: np.ndarray, sps: int, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Spectrum (numpy order) of sqrt(T) sum_i x_i g(t - iT) on an sps grid, periodic."""
    n = symbols.size
    train = np.zeros(n * sps, dtype=complex)
    train[::sps] = symbols
    f = np.fft.fftfreq(n * sps, 1.0 / (sps * symbol_rate))
    return sfft.fft(train) * (sps * rrc_spectrum(f, symbol_rate, rolloff))


def wdm_mux(frame: SymbolFrame, config: SystemConfig, samples_per_symbol: int = 16,
            offsets=None) -> FieldGrid:
    """RRC-shape each user's symbols and place user k at its channel offset."""
    if offsets is None:
        offsets = channel_offsets(config)
    offsets = np.asarray(offsets, dtype=float)
    n = frame.n
    N = n * samples_per_symbol
    dt = 1.0 / (samples_per_symbol * config.symbol_rate)
    spec = np.zeros(N, dtype=complex)
    for k in range(frame.num_users):
        s = shape_symbols(frame.symbols[k], samples_per_symbol, config.symbol_rate, config.rolloff)
        spec += np.roll(s, _bin_shift(offsets[k], N, dt))
    return FieldGrid(sfft.ifft(spec), dt, offsets, config.symbol_rate, config.rolloff)


def spectral_edge_fraction(envelope: np.ndarray) -> float:
    spec = np.abs(np.fft.fftshift(sfft.fft(envelope))) ** 2
    edge = max(1, int(spec.size * SPECTRAL_EDGE_FRACTION))
    total = spec.sum()
    return float((spec[:edge].sum() + spec[-edge:].sum()) / total) if total > 0 else 0.0


def _split_step(a: np.ndarray, dt: float, steps: int, dz: float, alpha: float, beta2: float,
                gamma: float) -> np.ndarray:
    """Symmetric split-step with the linear half steps merged between steps."""
    omega = 2 * np.pi * np.fft.fftfreq(a.size, dt)
    lin = -0.5j * beta2 * omega**2 - 0.5 * alpha
    half = np.exp(lin * dz / 2)
    full = half * half
    a = np.array(a, dtype=np.complex128, copy=True)
    if steps == 0:
        return a
    spec = sfft.fft(a) * half
    coef = -gamma * dz
    for i in range(steps):
        a = sfft.ifft(spec, overwrite_x=True)
        _nonlinear_phase(a, coef)
        spec = sfft.fft(a, overwrite_x=True)
        spec *= full if i < steps - 1 else half
    return sfft.ifft(spec, overwrite_x=True)


def ssfm_propagate(field: FieldGrid, plan: SsfmPlan, seed: int = 0,
                   check_aliasing: bool = True) -> FieldGrid:
    """Propagate over one span, then amplify by G and add ASE (if sigma_sq > 0)."""
    a = _split_step(field.envelope, field.dt, plan.num_steps, plan.step_size, plan.alpha,
                    plan.beta2, plan.gamma)
    if check_aliasing:
        frac = spectral_edge_fraction(a)
        if frac > MAX_EDGE_ENERGY:
            raise AliasingError(f"{frac:.2e} of the field energy reached the grid edge")
    a *= math.sqrt(plan.gain)
    if plan.sigma_sq > 0:
        # white over the grid; sigma_sq per real dimension after the matched filter
        var = plan.sigma_sq / (field.dt * field.symbol_rate)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA5E]))
        a += math.sqrt(var) * (rng.standard_normal(a.size) + 1j * rng.standard_normal(a.size))
    return field.copy(a)


def demux_filter(f, symbol_rate: float, rolloff: float,
                 passband_edge: float = DEMUX_PASSBAND_HZ) -> np.ndarray:
    """Flat over the channel band, cosine taper out to ``passband_edge``."""
    f = np.abs(np.asarray(f, dtype=float))
    f1 = (1 + rolloff) * symbol_rate / 2
    out = np.zeros_like(f)
    out[f <= f1] = 1.0
    band = (f > f1) & (f < passband_edge)
    out[band] = 0.5 * (1 + np.cos(np.pi * (f[band] - f1) / (passband_edge - f1)))
    return out


def receiver_chain(field: FieldGrid, k: int, config: SystemConfig, plan: SsfmPlan | None = None,
                   dbp: bool = True) -> np.ndarray:
    """Demux user k, back-propagate it alone, matched-filter and sample.

    Returns n complex symbols.  ``plan`` supplies the DBP step size and link
    parameters; with ``dbp`` false (or no plan) only the span gain is undone
    and DBP is skipped.
    """
    N = field.num_samples
    n = field.num_symbols
    rs = field.symbol_rate
    spec = sfft.fft(field.envelope)
    spec = np.roll(spec, -_bin_shift(field.center_frequency_offsets[k - 1], N, field.dt))
    # resample to RX_SAMPLES_PER_SYMBOL by keeping the central bins
    n_rx = n * RX_SAMPLES_PER_SYMBOL
    if n_rx > N:
        raise ValueError("field is sampled below the receiver rate")
    keep = np.concatenate([spec[: n_rx // 2], spec[N - n_rx // 2:]]) * (n_rx / N)
    dt_rx = 1.0 / (RX_SAMPLES_PER_SYMBOL * rs)
    f = np.fft.fftfreq(n_rx, dt_rx)
    keep *= demux_filter(f, rs, field.rolloff, min(DEMUX_PASSBAND_HZ, 0.95 * RX_SAMPLES_PER_SYMBOL * rs / 2))
    a = sfft.ifft(keep)
    if plan is not None:
        a = a / math.sqrt(plan.gain)
        if dbp:
            a = _split_step(a, dt_rx, plan.num_steps, plan.step_size, -plan.alpha, -plan.beta2,
                            -plan.gamma)
    y = sfft.ifft(sfft.fft(a) * rrc_spectrum(f, rs, field.rolloff))
    return y[::RX_SAMPLES_PER_SYMBOL]


def estimate_mi(x, y, estimator: str = "gaussian-auxiliary", law: str = "disk",
                power: float | None = None, psk_order: int = 16, bins: int = 12) -> mi.MiEstimate:
    """Per-symbol memoryless MI estimate; the estimator name is kept in the result."""
    if np.asarray(x).size < 10**4:
        logger.warning("MI estimate from fewer than 1e4 symbols is not reportable")
    return mi.estimate(x, y, estimator, law, power, psk_order, bins)


@dataclasses.dataclass(frozen=True)
class Fig8Point:
    power_dbm: float
    user: int
    scenario: str
    mi_bits: float
    stderr: float
    estimator: str
    seed: int
    n: int
    snr_db: float  # P / E|y - x|^2

    def as_row(self) -> dict:
        return dataclasses.asdict(self)


def scenario_laws(scenario: str, num_users: int, focus: int) -> list[str]:
    if scenario == "tin":
        return ["disk"] * num_users
    if scenario == "lower-bound":
        laws = ["psk"] * num_users
        laws[focus - 1] = "disk"
        return laws
    raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def fig8_point(config: SystemConfig, power_dbm: float, scenario: str, seed: int = 0,
               n_symbols: int = 2**14, step_size: float = 0.01, focus: int = 2,
               psk_order: int = 16, samples_per_symbol: int = 16,
               estimator: str = "gaussian-auxiliary", noise: bool = True) -> Fig8Point:
    """One SSFM power point: transmit, propagate, receive user ``focus``, estimate MI.

    Symbols and noise depend only on (seed, scenario), so points on a power
    grid share random numbers and any point can be recomputed on its own.
    """
    laws = scenario_laws(scenario, config.num_users, focus)
    p = dbm_to_watt(power_dbm)
    powers = np.full(config.num_users, p)
    scen_id = SCENARIOS.index(scenario)
    frame = random_frame(laws, powers, n_symbols, seed=[seed, scen_id],
                         psk_order=psk_order)
    plan = SsfmPlan.from_config(config, step_size=step_size, noise=noise)
    field = wdm_mux(frame, config, samples_per_symbol)
    out = ssfm_propagate(field, plan, seed=seed * 2 + scen_id)
    y = receiver_chain(out, focus, config, plan)
    x = frame.symbols[focus - 1]
    est = estimate_mi(x, y, estimator, laws[focus - 1], p, psk_order)
    err = float(np.mean(np.abs(y - x) ** 2))
    snr_db = 10 * math.log10(p / err) if err > 0 else float("inf")
    logger.info("ssfm %s %.2f dBm: %.4f bit/sym (SNR %.2f dB)", scenario, power_dbm, est.bits, snr_db)
    return Fig8Point(float(power_dbm), focus, scenario, est.bits, est.stderr, est.estimator,
                     seed, n_symbols, snr_db)


def fig8_experiment(config: SystemConfig, power_dbm, scenario: str, seeds=(0,),
                    **kwargs) -> list[Fig8Point]:
    """SSFM achievable-rate curve for one scenario over a power grid and seeds."""
    scenario_laws(scenario, config.num_users, kwargs.get("focus", 2))
    return [fig8_point(config, float(pw), scenario, seed, **kwargs)
            for seed in seeds for pw in power_dbm]
