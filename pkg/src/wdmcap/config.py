"""Link and numerical-grid configuration.

Config files are flat YAML mappings whose keys carry their units, e.g.::

    span_length_km: 250
    beta2_ps2_per_km: -21.7
    channel_spacing_ghz: 100

Everything is converted once, here, into the internal units used by the
numerical code: distances in km, time in seconds, ``beta2`` in s^2/km,
``alpha`` in 1/km (power attenuation), channel spacing in rad/s.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path

import yaml

DB_PER_NEPER = 10.0 * math.log10(math.e)

# file key -> (field name, scale applied on load)
_FILE_KEYS = {
    "num_users": ("num_users", 1),
    "span_length_km": ("span_length", 1.0),
    "gamma_per_w_km": ("gamma", 1.0),
    "symbol_rate_gbaud": ("symbol_rate", 1e9),
    "symbol_rate_baud": ("symbol_rate", 1.0),
    "alpha_db_per_km": ("alpha_db", 1.0),
    "beta2_ps2_per_km": ("beta2", -24),  # int < 0: divide by 10^|n|
    "rolloff": ("rolloff", 1.0),
    "channel_spacing_ghz": ("channel_spacing", 2e9 * math.pi),
    "noise_figure_db": ("noise_figure_db", 1.0),
    "carrier_frequency_thz": ("carrier_frequency", 1e12),
    "memory": ("memory", 1),
    "samples_per_symbol": ("samples_per_symbol", 1),
    "time_window_symbols": ("time_window_symbols", 1),
    "z_steps": ("z_steps", 1),
}

# Fields that change the value of the coupling coefficients.
PHYSICS_FIELDS = (
    "num_users",
    "span_length",
    "gamma",
    "symbol_rate",
    "alpha_db",
    "beta2",
    "rolloff",
    "channel_spacing",
    "memory",
    "samples_per_symbol",
    "time_window_symbols",
    "z_steps",
)

MAX_LEAKAGE = 1e-6


class ConfigError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclasses.dataclass(frozen=True)
class SystemConfig:
    """Single-span WDM link plus the numerical grid used to evaluate it.

    ``channel_spacing`` is angular (rad/s); use :meth:`from_dict` or
    :func:`load_config` to build from GHz.  ``carrier_frequency`` only enters
    the ASE noise sizing and defaults to 1550 nm.
    """

    num_users: int = 3
    span_length: float = 250.0  # km
    gamma: float = 1.2  # 1/(W km)
    symbol_rate: float = 32e9  # baud
    alpha_db: float = 0.2  # dB/km
    beta2: float = -21.7e-24  # s^2/km
    rolloff: float = 0.1
    channel_spacing: float = 2 * math.pi * 100e9  # rad/s
    noise_figure_db: float = 3.0
    carrier_frequency: float = 193.414e12  # Hz
    memory: int = 11
    samples_per_symbol: int = 16
    time_window_symbols: int = 4096
    z_steps: int = 1000

    def __post_init__(self):
        if self.num_users < 2:
            raise ConfigError("num_users must be >= 2")
        if self.span_length < 0:
            raise ConfigError("span_length must be >= 0")
        if self.symbol_rate <= 0:
            raise ConfigError("symbol_rate must be > 0")
        if self.memory < 0:
            raise ConfigError("memory must be >= 0")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ConfigError("rolloff must lie in [0, 1]")
        if self.samples_per_symbol < 2 or not _is_pow2(self.samples_per_symbol):
            raise ConfigError("samples_per_symbol must be a power of two >= 2")
        if self.time_window_symbols < 2 * self.memory + 2:
            raise ConfigError("time_window_symbols too small for the channel memory")
        if self.z_steps < 1:
            raise ConfigError("z_steps must be >= 1")
        if self.alpha_db < 0:
            raise ConfigError("alpha_db must be >= 0")
        # imported late: coeffs depends on this module
        from .coeffs import rrc_leakage

        leak = rrc_leakage(self.rolloff, self.samples_per_symbol, self.time_window_symbols)
        if leak > MAX_LEAKAGE:
            raise ConfigError(
                f"time window of {self.time_window_symbols} symbols leaks {leak:.2e} of the "
                f"pulse energy for rolloff {self.rolloff} (limit {MAX_LEAKAGE:g})"
            )

    @property
    def alpha(self) -> float:
        """Power attenuation in 1/km."""
        return self.alpha_db / DB_PER_NEPER

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.symbol_rate

    @property
    def dt(self) -> float:
        return self.symbol_period / self.samples_per_symbol

    @property
    def num_samples(self) -> int:
        return self.samples_per_symbol * self.time_window_symbols

    @property
    def spacing_hz(self) -> float:
        return self.channel_spacing / (2 * math.pi)

    @property
    def span_gain(self) -> float:
        """Linear amplifier gain that exactly compensates the span loss."""
        return 10.0 ** (self.alpha_db * self.span_length / 10.0)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def physics_hash(self) -> str:
        """Content hash over the fields that determine the coefficient table."""
        payload = {f: getattr(self, f) for f in PHYSICS_FIELDS}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def full_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        kwargs = {}
        for key, value in data.items():
            if key not in _FILE_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            name, scale = _FILE_KEYS[key]
            if name in kwargs:
                raise ConfigError(f"config key {key!r} duplicates {name!r}")
            if isinstance(scale, int) and scale < 0:
                kwargs[name] = float(value) / 10.0**-scale
            elif isinstance(scale, int):
                kwargs[name] = int(value)
            else:
                kwargs[name] = float(value) * scale
        return cls(**kwargs)

    def to_dict(self) -> dict:
        """Inverse of :meth:`from_dict` (file units)."""
        return {
            "num_users": self.num_users,
            "span_length_km": self.span_length,
            "gamma_per_w_km": self.gamma,
            "symbol_rate_gbaud": self.symbol_rate / 1e9,
            "alpha_db_per_km": self.alpha_db,
            "beta2_ps2_per_km": self.beta2 * 1e24,
            "rolloff": self.rolloff,
            "channel_spacing_ghz": self.spacing_hz / 1e9,
            "noise_figure_db": self.noise_figure_db,
            "carrier_frequency_thz": self.carrier_frequency / 1e12,
            "memory": self.memory,
            "samples_per_symbol": self.samples_per_symbol,
            "time_window_symbols": self.time_window_symbols,
            "z_steps": self.z_steps,
        }


def reference_link() -> SystemConfig:
    """The reference 3-user, 250 km single-span link."""
    return SystemConfig()


def load_config(path) -> SystemConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key/value mapping")
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{path}: key {key!r} must be a scalar")
    return SystemConfig.from_dict(data)


def dbm_to_watt(p_dbm):
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * math.log10(p_w / 1e-3)
