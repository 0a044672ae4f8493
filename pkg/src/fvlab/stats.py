"""Autocorrelation-aware error bars for correlated Monte Carlo output."""
from __future__ import annotations

import numpy as np


def autocorrelation(x) -> np.ndarray:
    """Normalised autocorrelation function via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acf[0] == 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acf / acf[0]


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Sokal's self-consistent window estimate of ``tau = 1 + 2 sum_t rho(t)``.

    Returns 1 for constant or too-short series.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 4 or np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(taus.shape[0]) >= c * taus
    m = int(np.argmax(window)) if window.any() else taus.shape[0] - 1
    return float(max(1.0, taus[m]))


def effective_sample_size(x) -> float:
    x = np.asarray(x, dtype=float)
    return x.shape[0] / integrated_autocorr_time(x)


def mean_with_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(np.sqrt(x.var(ddof=1) / effective_sample_size(x)))


def jackknife(x, stat, blocks: int = 50) -> tuple[float, float]:
    """Delete-one-block jackknife estimate and standard error of ``stat(x)``.

    Contiguous blocks absorb short-range autocorrelation.
    """
    x = np.asarray(x)
    n = x.shape[0]
    blocks = int(min(blocks, n))
    if blocks < 2:
        return float(stat(x)), float("nan")
    edges = np.linspace(0, n, blocks + 1).astype(int)
    full = stat(x)
    loo = np.array([stat(np.concatenate([x[: edges[b]], x[edges[b + 1]:]])) for b in range(blocks)])
    se = np.sqrt((blocks - 1) / blocks * np.sum((loo - loo.mean()) ** 2))
    return float(full), float(se)


def variance_with_jackknife(x, blocks: int = 50) -> tuple[float, float]:
    return jackknife(x, lambda v: np.var(v, ddof=1), blocks)
