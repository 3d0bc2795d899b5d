"""Discrete-time perturbative channel models and ASE noise.

Symbol magnitudes squared are powers in W.  Noise variance ``sigma_sq`` is
per real dimension: the complex noise sample has E|N|^2 = 2 sigma_sq, so the
AWGN signal-to-noise ratio of a symbol with power P is P / (2 sigma_sq).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import struct
from pathlib import Path

import numpy as np
from scipy import constants

from .coeffs import CoefficientTable, compute_s_batch
from .config import SystemConfig

logger = logging.getLogger(__name__)

PEAK_SLACK = 1e-12
INPUT_LAWS = ("disk", "ring", "psk")


class PeakPowerError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SymbolFrame:
    """K x n complex symbols plus the per-user peak powers (W).

    Frames built from channel *outputs* carry the input peak powers but are
    not expected to respect them; call :meth:`check_peak` on inputs.
    """

    symbols: np.ndarray
    peak_power: np.ndarray

    def __post_init__(self):
        sym = np.atleast_2d(np.asarray(self.symbols, dtype=complex))
        pk = np.asarray(self.peak_power, dtype=float).reshape(-1)
        if pk.size != sym.shape[0]:
            raise ValueError("need one peak power per user")
        object.__setattr__(self, "symbols", sym)
        object.__setattr__(self, "peak_power", pk)

    @property
    def num_users(self) -> int:
        return self.symbols.shape[0]

    @property
    def n(self) -> int:
        return self.symbols.shape[1]

    def check_peak(self):
        excess = np.abs(self.symbols) ** 2 - self.peak_power[:, None] * (1 + PEAK_SLACK)
        if np.any(excess > 0):
            k, i = np.unravel_index(np.argmax(excess), excess.shape)
            raise PeakPowerError(
                f"user {k + 1} symbol {i + 1} has power {abs(self.symbols[k, i]) ** 2:.4g} W "
                f"above its peak {self.peak_power[k]:.4g} W"
            )

    def lagged(self, k: int, lag: int) -> np.ndarray:
        """X_k[i - lag] for i = 1..n, zero outside the frame (1-based k)."""
        return shift_zero(self.symbols[k - 1], lag)

    def with_symbols(self, symbols) -> "SymbolFrame":
        return SymbolFrame(symbols, self.peak_power)


def shift_zero(x: np.ndarray, lag: int) -> np.ndarray:
    """out[i] = x[i - lag] with zeros where i - lag falls outside the array."""
    out = np.zeros_like(x)
    n = x.shape[-1]
    if abs(lag) >= n:
        return out
    if lag >= 0:
        out[..., lag:] = x[..., : n - lag]
    else:
        out[..., :lag] = x[..., -lag:]
    return out


@dataclasses.dataclass(frozen=True)
class NoiseModel:
    sigma_sq: np.ndarray  # W per real dimension, one per user
    rng_seed: int = 0

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_sq, dtype=float))
        if np.any(s <= 0):
            raise ValueError("sigma_sq must be > 0")
        object.__setattr__(self, "sigma_sq", s)

    @classmethod
    def uniform(cls, sigma_sq: float, num_users: int, rng_seed: int = 0) -> "NoiseModel":
        return cls(np.full(num_users, sigma_sq), rng_seed)

    def draw(self, num_users: int, n: int) -> np.ndarray:
        """(K, n) noise; user k uses its own substream of the seed."""
        if self.sigma_sq.size not in (1, num_users):
            raise ValueError("sigma_sq length does not match the number of users")
        sig = np.broadcast_to(self.sigma_sq, (num_users,))
        streams = np.random.SeedSequence(self.rng_seed).spawn(num_users)
        out = np.empty((num_users, n), dtype=complex)
        for k, ss in enumerate(streams):
            rng = np.random.default_rng(ss)
            out[k] = np.sqrt(sig[k]) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        return out


def ase_variance(config: SystemConfig) -> float:
    """ASE variance per real dimension in W for one lumped amplifier.

    0.5 * n_sp * (G - 1) * h * nu * Rs with the gain G undoing the span loss.
    """
    n_sp = 10.0 ** (config.noise_figure_db / 10.0) / 2.0
    gain = config.span_gain
    return 0.5 * n_sp * (gain - 1.0) * constants.h * config.carrier_frequency * config.symbol_rate


def draw_symbols(law: str, power: float, n: int, rng: np.random.Generator,
                 psk_order: int = 16) -> np.ndarray:
    """i.i.d. symbols with peak power ``power`` under one of the input laws.

    disk: amplitude pdf 2r/P on [0, sqrt(P)] with uniform phase (uniform on
    the disk); ring: constant amplitude with uniform phase; psk: uniform
    M-PSK at amplitude sqrt(P).
    """
    if law == "disk":
        r = np.sqrt(power * rng.random(n))
        return r * np.exp(2j * np.pi * rng.random(n))
    if law == "ring":
        return np.sqrt(power) * np.exp(2j * np.pi * rng.random(n))
    if law == "psk":
        if psk_order < 2:
            raise ValueError("psk_order must be >= 2")
        idx = rng.integers(0, psk_order, n)
        return np.sqrt(power) * np.exp(2j * np.pi * idx / psk_order)
    raise ValueError(f"unknown input law {law!r}; expected one of {INPUT_LAWS}")


def draw_power(law: str, power: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """|X|^2 for i.i.d. symbols of a law, without drawing phases."""
    if law == "disk":
        return power * rng.random(n)
    if law in ("ring", "psk"):
        return np.full(n, float(power))
    raise ValueError(f"unknown input law {law!r}; expected one of {INPUT_LAWS}")


def law_moments(law: str, power: float) -> tuple[float, float]:
    """(E|X|^2, E|X|^4) for the input laws."""
    if law == "disk":
        return power / 2.0, power**2 / 3.0
    if law in ("ring", "psk"):
        return power, power**2
    raise ValueError(f"unknown input law {law!r}; expected one of {INPUT_LAWS}")


def random_frame(laws, powers, n: int, seed: int, psk_order: int = 16) -> SymbolFrame:
    """Frame with user k drawn from ``laws[k]`` at peak power ``powers[k]``."""
    powers = np.asarray(powers, dtype=float)
    if isinstance(laws, str):
        laws = [laws] * powers.size
    streams = np.random.SeedSequence(seed).spawn(powers.size)
    rows = [draw_symbols(law, p, n, np.random.default_rng(ss), psk_order)
            for law, p, ss in zip(laws, powers, streams)]
    return SymbolFrame(np.array(rows), powers)


def interference_sum(frame: SymbolFrame, table: CoefficientTable) -> np.ndarray:
    """(K, n) real array of sum_w sum_m c[k][w][m] |X_w[i-m]|^2."""
    K, n = frame.symbols.shape
    if table.num_users != K:
        raise ValueError(f"table has {table.num_users} users, frame has {K}")
    M = table.memory
    power = np.abs(frame.symbols) ** 2
    out = np.zeros((K, n))
    for k in range(K):
        for w in range(K):
            if w == k:
                continue
            # full convolution index j corresponds to i = j - M
            out[k] += np.convolve(power[w], table.c[k, w])[M:M + n]
    return out


def simulate_simplified(frame: SymbolFrame, table: CoefficientTable,
                        noise: NoiseModel | None = None) -> SymbolFrame:
    """Y_k[i] = X_k[i] (1 + j sum_w sum_m c |X_w[i-m]|^2) + N_k[i]."""
    frame.check_peak()
    y = frame.symbols * (1.0 + 1j * interference_sum(frame, table))
    if noise is not None:
        y = y + noise.draw(frame.num_users, frame.n)
    return frame.with_symbols(y)


@dataclasses.dataclass(frozen=True)
class FirstOrderTable:
    """Complex S^{p,l,m} (km) for |p|, |l|, |m| <= truncation, per spacing |k-w|.

    ``values[d]`` has shape (2t+1, 2t+1, 2t+1) indexed [p+t, l+t, m+t].
    """

    values: dict
    truncation: int
    gamma: float

    @classmethod
    def from_coefficients(cls, table: CoefficientTable, truncation: int) -> "FirstOrderTable":
        """Table that is zero off the p = 0, l = m diagonal (two-pulse terms only)."""
        if truncation > table.memory:
            raise ValueError("truncation exceeds the coefficient memory")
        t = truncation
        values = {}
        for d in range(1, table.num_users):
            s = np.zeros((2 * t + 1,) * 3, dtype=complex)
            prof = table.c[0, d] if table.gamma == 0 else table.c[0, d] / table.gamma
            for m in range(-t, t + 1):
                s[t, m + t, m + t] = prof[m + table.memory]
            values[d] = s
        return cls(values, t, table.gamma)


def compute_first_order_table(config: SystemConfig, truncation: int = 2) -> FirstOrderTable:
    t = truncation
    rng = range(-t, t + 1)
    triples = [(p, l, m) for p in rng for l in rng for m in rng]
    values = {}
    for d in range(1, config.num_users):
        s = compute_s_batch(config, d, triples)
        values[d] = s.reshape((2 * t + 1,) * 3)
        logger.info("first-order S table for spacing %d done", d)
    return FirstOrderTable(values, t, config.gamma)


def simulate_first_order(frame: SymbolFrame, config: SystemConfig, truncation: int = 2,
                         noise: NoiseModel | None = None,
                         s_table: FirstOrderTable | None = None) -> SymbolFrame:
    """Truncated triple-sum perturbative model with complex S^{p,l,m}.

    Y_k[i] = X_k[i] + j gamma sum_w sum_{p,l,m} S X_k[i-p] X_w[i-l] X_w*[i-m] + N_k[i].
    """
    frame.check_peak()
    if s_table is None:
        s_table = compute_first_order_table(config, truncation)
    if truncation > s_table.truncation:
        raise ValueError(
            f"truncation {truncation} exceeds the available table ({s_table.truncation})"
        )
    t, ts = truncation, s_table.truncation
    x = frame.symbols
    K = frame.num_users
    lags = range(-t, t + 1)
    shifted = {lag: shift_zero(x, lag) for lag in lags}
    y = x.copy()
    for k in range(K):
        nli = np.zeros(frame.n, dtype=complex)
        for w in range(K):
            if w == k:
                continue
            s = s_table.values[abs(k - w)]
            for l in lags:
                for m in lags:
                    pair = shifted[l][w] * np.conj(shifted[m][w])
                    inner = np.zeros(frame.n, dtype=complex)
                    for p in lags:
                        coef = s[p + ts, l + ts, m + ts]
                        if coef != 0:
                            inner += coef * shifted[p][k]
                    nli += inner * pair
        y[k] += 1j * s_table.gamma * nli
    if noise is not None:
        y = y + noise.draw(K, frame.n)
    return frame.with_symbols(y)


# --- frame I/O ---------------------------------------------------------------

FRAME_MAGIC = b"WDMF"
FRAME_VERSION = 1


def write_frame(path, frame: SymbolFrame):
    """Binary frame: magic, version, K, n, K peak powers, then interleaved (re, im)."""
    K, n = frame.symbols.shape
    inter = np.empty((K, n, 2), dtype="<f8")
    inter[..., 0] = frame.symbols.real
    inter[..., 1] = frame.symbols.imag
    with Path(path).open("wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<IIQ", FRAME_VERSION, K, n))
        fh.write(np.asarray(frame.peak_power, dtype="<f8").tobytes())
        fh.write(inter.tobytes())


def read_frame(path) -> SymbolFrame:
    data = Path(path).read_bytes()
    if data[:4] != FRAME_MAGIC:
        raise ValueError(f"{path}: not a frame file")
    version, K, n = struct.unpack_from("<IIQ", data, 4)
    if version != FRAME_VERSION:
        raise ValueError(f"{path}: unsupported frame version {version}")
    off = 4 + struct.calcsize("<IIQ")
    peak = np.frombuffer(data, "<f8", K, off)
    off += 8 * K
    inter = np.frombuffer(data, "<f8", 2 * K * n, off).reshape(K, n, 2)
    return SymbolFrame(inter[..., 0] + 1j * inter[..., 1], peak.copy())


def write_frame_csv(path, frame: SymbolFrame):
    with Path(path).open("w", newline="") as fh:
        fh.write("# peak_power_w: " + " ".join(repr(float(p)) for p in frame.peak_power) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["k", "i", "re", "im"])
        for k in range(frame.num_users):
            for i, s in enumerate(frame.symbols[k]):
                writer.writerow([k + 1, i + 1, repr(float(s.real)), repr(float(s.imag))])


def read_frame_csv(path) -> SymbolFrame:
    with Path(path).open() as fh:
        first = fh.readline()
        if not first.startswith("# peak_power_w:"):
            raise ValueError(f"{path}: missing peak power header")
        peak = np.array([float(v) for v in first.split(":", 1)[1].split()])
        rows = list(csv.DictReader(fh))
    n = max(int(r["i"]) for r in rows)
    sym = np.zeros((peak.size, n), dtype=complex)
    for r in rows:
        sym[int(r["k"]) - 1, int(r["i"]) - 1] = complex(float(r["re"]), float(r["im"]))
    return SymbolFrame(sym, peak)
