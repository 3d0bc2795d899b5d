"""Per-symbol mutual information estimators.

The main estimator is a mismatched-decoding (generalized mutual information)
bound with a memoryless Gaussian auxiliary channel y = h x + z fitted to the
data.  Any auxiliary channel gives an achievable rate, so the estimate is a
lower bound on the true per-symbol MI up to Monte-Carlo error.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import i0e, logsumexp

LOG2E = math.log2(math.e)
DEFAULT_SNR_CAP_DB = 60.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


@dataclasses.dataclass(frozen=True)
class MiEstimate:
    bits: float
    stderr: float
    estimator: str
    n: int
    gain: complex = 1.0
    residual_var: float = float("nan")  # E|y - h x|^2 of the auxiliary channel


def fit_gaussian_channel(x, y, snr_cap_db: float = DEFAULT_SNR_CAP_DB):
    """Least-squares gain h and residual variance s2 = E|y - h x|^2 (floored)."""
    px = np.vdot(x, x).real
    h = np.vdot(x, y) / px
    s2 = float(np.mean(np.abs(y - h * x) ** 2))
    floor = abs(h) ** 2 * (px / x.size) * 10.0 ** (-snr_cap_db / 10.0)
    return complex(h), max(s2, floor)


def _log_q_out_disk(y_abs, habs, s2, power):
    """log integral_0^sqrt(P) (2r/P) exp(-(|y| - |h| r)^2/s2) i0e(2|h||y|r/s2) dr."""
    rmax = math.sqrt(power)
    width = 8.0 * math.sqrt(s2) / habs
    center = np.clip(y_abs / habs, 0.0, rmax)
    lo = np.maximum(0.0, center - width)
    hi = np.minimum(rmax, center + width)
    half = 0.5 * (hi - lo)
    r = (lo + hi)[:, None] * 0.5 + half[:, None] * _GL_NODES[None, :]
    r = np.maximum(r, 1e-300)
    yy = y_abs[:, None]
    z = 2.0 * habs * yy * r / s2
    f = np.log(2.0 * r / power) - (yy - habs * r) ** 2 / s2 + np.log(i0e(z))
    return logsumexp(f, axis=1, b=_GL_WEIGHTS[None, :]) + np.log(half)


def gaussian_auxiliary_mi(x, y, law: str, power: float, psk_order: int = 16,
                          snr_cap_db: float = DEFAULT_SNR_CAP_DB) -> MiEstimate:
    """GMI with the fitted Gaussian auxiliary channel q(y|x) = CN(h x, s2).

    The output law q(y) averages q(y|x') over the *nominal* input law
    (``disk``, ``ring`` or ``psk`` at peak power ``power``).
    """
    x = np.asarray(x, dtype=complex).ravel()
    y = np.asarray(y, dtype=complex).ravel()
    h, s2 = fit_gaussian_channel(x, y, snr_cap_db)
    habs = abs(h)
    # both log q(y|x) and log q(y) carry -log(pi s2); it cancels
    log_q_cond = -np.abs(y - h * x) ** 2 / s2
    y_abs = np.abs(y)
    if law == "psk":
        pts = math.sqrt(power) * np.exp(2j * np.pi * np.arange(psk_order) / psk_order)
        d2 = np.abs(y[:, None] - h * pts[None, :]) ** 2
        log_q_out = logsumexp(-d2 / s2, axis=1) - math.log(psk_order)
    elif law == "ring":
        a = habs * math.sqrt(power)
        z = 2.0 * a * y_abs / s2
        log_q_out = -(y_abs - a) ** 2 / s2 + np.log(i0e(z))
    elif law == "disk":
        log_q_out = _log_q_out_disk(y_abs, habs, s2, power)
    else:
        raise ValueError(f"unknown input law {law!r}")
    terms = (log_q_cond - log_q_out) * LOG2E
    n = terms.size
    return MiEstimate(float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(n)),
                      "gaussian-auxiliary", n, h, s2)


def histogram_mi(x, y, bins: int = 12) -> MiEstimate:
    """Plug-in MI between quantized x and quantized y (Miller-Madow corrected).

    Rough diagnostic only: each complex value is quantized on a bins x bins
    grid spanning its own range, so this underestimates the MI at high SNR
    and has bias that grows with the number of occupied cells.
    """
    x = np.asarray(x, dtype=complex).ravel()
    y = np.asarray(y, dtype=complex).ravel()
    n = x.size

    def cells(v):
        def q(u):
            lo, hi = u.min(), u.max()
            if hi == lo:
                return np.zeros(u.size, dtype=np.int64)
            return np.minimum(((u - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)

        return q(v.real) * bins + q(v.imag)

    cx, cy = cells(x), cells(y)
    joint = cx * bins * bins + cy

    def entropy(labels):
        _, counts = np.unique(labels, return_counts=True)
        p = counts / n
        return -np.sum(p * np.log(p)) + (counts.size - 1) / (2 * n)

    mi = (entropy(cx) + entropy(cy) - entropy(joint)) * LOG2E
    return MiEstimate(float(max(mi, 0.0)), float("nan"), "histogram", n)


def estimate(x, y, estimator: str = "gaussian-auxiliary", law: str = "disk",
             power: float | None = None, psk_order: int = 16, bins: int = 12) -> MiEstimate:
    if estimator == "gaussian-auxiliary":
        if power is None:
            power = float(np.max(np.abs(x) ** 2))
        return gaussian_auxiliary_mi(x, y, law, power, psk_order)
    if estimator == "histogram":
        return histogram_mi(x, y, bins)
    raise ValueError(f"unknown estimator {estimator!r}")

