"""Single-user rate bounds for the simplified XPM interference channel.

Powers are in W here; dBm appears only at the interface of :func:`bound_curve`
and in exported data.  Rates are in bits per symbol.  ``sigma_sq`` is the
ASE variance per real dimension (see :mod:`wdmcap.channel`).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import mi
from .channel import NoiseModel, draw_power, draw_symbols, law_moments, random_frame, simulate_simplified
from .coeffs import CoefficientTable
from .config import dbm_to_watt

logger = logging.getLogger(__name__)

LOG2E = math.log2(math.e)
DEFAULT_NLI_SAMPLES = 10**6
_NLI_CHUNK = 50_000


def _log2_1p(x):
    return np.log1p(x) / math.log(2.0)


def _powers(powers) -> np.ndarray:
    p = np.asarray(powers, dtype=float).reshape(-1)
    if np.any(p < 0):
        raise ValueError("powers must be >= 0")
    return p


def aggregate_gain(k: int, powers, table: CoefficientTable) -> float:
    """A_k = sum_{w != k} P_w sum_m c[k][w][m], the largest value the weighted
    interferer power sum can take under the peak constraints."""
    p = _powers(powers)
    sums = table.row_sums()[k - 1]
    return float(sum(p[w] * sums[w] for w in range(p.size) if w != k - 1))


def weighted_interference(k: int, interferers: np.ndarray, table: CoefficientTable) -> np.ndarray:
    """sum_w sum_m c[k][w][m] |x_w[m]|^2 for a batch of interferer windows.

    ``interferers`` has shape (..., K, 2M+1): one length-(2M+1) window of
    symbols per user (index j <-> lag m = j - M).  The k-th row is ignored.
    """
    x2 = np.abs(np.asarray(interferers)) ** 2
    c = table.c[k - 1].copy()
    c[k - 1] = 0.0
    return np.einsum("...wm,wm->...", x2, c)


def outer_bound(k: int, powers, table: CoefficientTable, sigma_sq: float) -> float:
    """U_k = log2(1 + P_k/(2 sigma^2) (1 + A_k^2))."""
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be > 0")
    p = _powers(powers)
    a = aggregate_gain(k, p, table)
    return float(_log2_1p(p[k - 1] / (2 * sigma_sq) * (1 + a * a)))


def inner_bound(k: int, powers, table: CoefficientTable, sigma_sq: float) -> float:
    """L_k = log2(1 + P_k/(2 sigma^2 e) (1 + A_k^2)).

    Achieved with constant-amplitude interferers and user k drawing its
    amplitude from 2r/P_k on [0, sqrt(P_k)] (uniform on the disk).
    """
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be > 0")
    p = _powers(powers)
    a = aggregate_gain(k, p, table)
    return float(_log2_1p(p[k - 1] / (2 * sigma_sq * math.e) * (1 + a * a)))


def awgn_rate(power: float, sigma_sq: float) -> float:
    """log2(1 + P/(2 sigma^2)): the outer bound with the NLI switched off."""
    return float(_log2_1p(power / (2 * sigma_sq)))


@dataclasses.dataclass(frozen=True)
class NliVariance:
    value: float  # W, total over both real dimensions
    stderr: float
    closed_form: float
    samples: int
    seed: int
    input_law: str


def nli_moment_variance(k: int, powers, table: CoefficientTable, input_law: str = "disk") -> float:
    """E|X_k|^2 E[S^2] with S = sum_w sum_m c |X_w[i-m]|^2, from the law moments."""
    p = _powers(powers)
    m2_k, _ = law_moments(input_law, p[k - 1])
    mean_s, var_s = 0.0, 0.0
    for w in range(p.size):
        if w == k - 1:
            continue
        m2, m4 = law_moments(input_law, p[w])
        c = table.c[k - 1, w]
        mean_s += c.sum() * m2
        var_s += np.sum(c * c) * (m4 - m2 * m2)
    return float(m2_k * (mean_s**2 + var_s))


def nli_variance(k: int, powers, table: CoefficientTable, input_law: str = "disk",
                 mc_samples: int = DEFAULT_NLI_SAMPLES, seed: int = 0) -> NliVariance:
    """Monte-Carlo variance of j X_k sum_w sum_m c |X_w[i-m]|^2 with i.i.d. inputs.

    Returns the total variance (both real dimensions) with its standard
    error, alongside the closed-form moment value.
    """
    if mc_samples < 10**4:
        raise ValueError("mc_samples must be >= 1e4")
    if input_law not in ("disk", "ring", "psk"):
        raise ValueError(f"unknown input law {input_law!r}")
    p = _powers(powers)
    K = p.size
    width = 2 * table.memory + 1
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    total = 0.0
    total_sq = 0.0
    mean_acc = 0.0 + 0.0j
    done = 0
    while done < mc_samples:
        b = min(_NLI_CHUNK, mc_samples - done)
        xk = draw_symbols(input_law, p[k - 1], b, rng)
        # only |X_w|^2 enters the interference sum
        s = np.zeros(b)
        for w in range(K):
            if w != k - 1:
                x2 = draw_power(input_law, p[w], b * width, rng).reshape(b, width)
                s += x2 @ table.c[k - 1, w]
        nli = 1j * xk * s
        mag2 = np.abs(nli) ** 2
        total += mag2.sum()
        total_sq += np.sum(mag2 * mag2)
        mean_acc += nli.sum()
        done += b
    second = total / done
    mean = mean_acc / done
    value = second - abs(mean) ** 2
    var_mag2 = max(total_sq / done - second**2, 0.0)
    stderr = math.sqrt(var_mag2 / done)
    closed = nli_moment_variance(k, p, table, input_law)
    return NliVariance(float(value), stderr, closed, done, seed, input_law)


def tin_bound(k: int, p_k: float, sigma_sq: float, sigma_nli_sq: float) -> float:
    """L_k^TIN = log2(1 + P_k / (2 (sigma^2 + sigma_NLI^2) e))."""
    if sigma_sq <= 0 or sigma_nli_sq < 0:
        raise ValueError("variances must be positive")
    return float(_log2_1p(p_k / (2 * (sigma_sq + sigma_nli_sq) * math.e)))


@dataclasses.dataclass(frozen=True)
class PskRate:
    bits: float
    stderr: float
    samples: int
    seed: int


def psk_interferer_rate(k: int, focus: int, powers, table: CoefficientTable, sigma_sq: float,
                        psk_order: int = 16, mc_samples: int = 10**5, seed: int = 0) -> PskRate:
    """Achievable rate of user k sending uniform PSK while ``focus`` uses the disk law.

    All other users send PSK at amplitude sqrt(P).  The output is generated
    by the simplified model with memory and noise, and the rate is the GMI of
    a memoryless Gaussian auxiliary channel, which treats the NLI as noise.
    """
    if psk_order < 2:
        raise ValueError("psk_order must be >= 2")
    if k == focus:
        raise ValueError("k must differ from the focus user")
    p = _powers(powers)
    if mc_samples < 10**4:
        logger.warning("psk_interferer_rate with only %d samples; rate error may be large",
                       mc_samples)
    laws = ["psk"] * p.size
    laws[focus - 1] = "disk"
    frame = random_frame(laws, p, mc_samples, seed, psk_order)
    noise = NoiseModel.uniform(sigma_sq, p.size, rng_seed=seed + 1)
    out = simulate_simplified(frame, table, noise)
    est = mi.gaussian_auxiliary_mi(frame.symbols[k - 1], out.symbols[k - 1], "psk",
                                   p[k - 1], psk_order)
    return PskRate(est.bits, est.stderr, mc_samples, seed)


@dataclasses.dataclass
class BoundCurve:
    user: int
    power_dbm: np.ndarray
    tin: np.ndarray
    inner: np.ndarray
    outer: np.ndarray
    awgn: np.ndarray  # log2(1 + P/(2 sigma^2)), the NLI-free reference
    sigma_nli_sq: np.ndarray
    sigma_sq: float
    metadata: dict = dataclasses.field(default_factory=dict)

    def check(self):
        if np.any(self.outer < self.inner - 1e-12):
            raise AssertionError("outer bound below inner bound")
        if np.any(self.outer - self.inner > LOG2E + 1e-9):
            raise AssertionError("outer/inner gap exceeds log2(e)")

    def peak(self) -> tuple[float, float]:
        i = int(np.argmax(self.tin))
        return float(self.power_dbm[i]), float(self.tin[i])

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["power_dBm", "tin", "inner", "outer", "sigma_nli", "awgn"])
            for row in zip(self.power_dbm, self.tin, self.inner, self.outer,
                           self.sigma_nli_sq, self.awgn):
                writer.writerow([repr(float(v)) for v in row])

    def to_json(self, path):
        payload = {
            "user": self.user,
            "sigma_sq_w": self.sigma_sq,
            "power_dBm": self.power_dbm.tolist(),
            "tin": self.tin.tolist(),
            "inner": self.inner.tolist(),
            "outer": self.outer.tolist(),
            "awgn": self.awgn.tolist(),
            "sigma_nli_sq_w": self.sigma_nli_sq.tolist(),
            "metadata": self.metadata,
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def bound_curve(k: int, power_dbm, table: CoefficientTable, sigma_sq: float,
                mc_samples: int = DEFAULT_NLI_SAMPLES, seed: int = 0,
                input_law: str = "disk", metadata: dict | None = None) -> BoundCurve:
    """TIN, inner and outer bounds for user k with all users at equal power.

    Every power point reuses the same seed, so the NLI samples differ only
    by the deterministic power scaling.
    """
    grid = np.asarray(power_dbm, dtype=float)
    K = table.num_users
    # With equal powers every sample scales as P^3 under a fixed seed, so one
    # estimate at 1 W reproduces the per-point estimates exactly.
    unit = nli_variance(k, np.ones(K), table, input_law, mc_samples, seed)
    tin, inner, outer, awgn, nli = [], [], [], [], []
    for dbm in grid:
        p = np.full(K, dbm_to_watt(dbm))
        nli.append(unit.value * p[0] ** 3)
        tin.append(tin_bound(k, p[k - 1], sigma_sq, nli[-1]))
        inner.append(inner_bound(k, p, table, sigma_sq))
        outer.append(outer_bound(k, p, table, sigma_sq))
        awgn.append(awgn_rate(p[k - 1], sigma_sq))
    meta = {"nli_samples": mc_samples, "nli_seed": seed, "nli_input_law": input_law}
    meta.update(metadata or {})
    curve = BoundCurve(k, grid, np.array(tin), np.array(inner), np.array(outer),
                       np.array(awgn), np.array(nli), sigma_sq, meta)
    curve.check()
    return curve
