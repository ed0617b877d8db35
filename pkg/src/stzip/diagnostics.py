"""Chain diagnostics reported alongside fits (never used to stop a chain)."""

import numpy as np


def autocorrelation(x):
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    if acov[0] <= 0:
        return np.ones(1)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS via Geyer's initial positive sequence of paired autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1.0 / n))


def block_ess(columns: dict) -> dict:
    """Minimum ESS over the scalar columns of each parameter block."""
    out = {}
    for name, col in columns.items():
        block = name.split("[", 1)[0]
        ess = effective_sample_size(col)
        out[block] = min(out.get(block, np.inf), ess)
    return {k: float(v) for k, v in out.items()}
