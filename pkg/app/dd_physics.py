"""Local carrier physics: recombination, mobility, impact ionization and the
Bernoulli function used by the exponentially fitted edge fluxes.

All functions accept numpy arrays and broadcast. Densities are in cm^-3,
fields in V/cm and times in s.
"""

from typing import Tuple

import numpy as np

DENOMINATOR_FLOOR = 1e-30
SERIES_THRESHOLD = 1e-3


def srh_rate(n, p, n_i, tau_n, tau_p):
    """Shockley-Read-Hall net recombination through a midgap trap.

    Args:
        n: Electron density
        p: Hole density
        n_i: Intrinsic density
        tau_n: Electron lifetime
        tau_p: Hole lifetime

    Returns:
        R = (np - n_i^2) / (tau_p (n + n_i) + tau_n (p + n_i)) in cm^-3 s^-1.
    """
    n, p = np.asarray(n, dtype=float), np.asarray(p, dtype=float)
    denominator = np.maximum(tau_p * (n + n_i) + tau_n * (p + n_i), DENOMINATOR_FLOOR)
    return (n * p - n_i**2) / denominator


def auger_rate(n, p, n_i, c_n, c_p):
    """Band-to-band Auger recombination (C_n n + C_p p)(np - n_i^2)."""
    n, p = np.asarray(n, dtype=float), np.asarray(p, dtype=float)
    return (c_n * n + c_p * p) * (n * p - n_i**2)


def highfield_mobility(mu0, e_parallel, v_sat, beta):
    """Velocity-saturated mobility mu0 / (1 + (mu0 E / v_sat)^beta)^(1/beta)."""
    ratio = mu0 * np.abs(np.asarray(e_parallel, dtype=float)) / v_sat
    return mu0 / (1.0 + ratio**beta) ** (1.0 / beta)


def highfield_mobility_derivative(mu0, e_parallel, v_sat, beta):
    """d(mu)/dE of ``highfield_mobility`` for E >= 0."""
    e = np.abs(np.asarray(e_parallel, dtype=float))
    ratio = mu0 * e / v_sat
    base = 1.0 + ratio**beta
    with np.errstate(divide="ignore", invalid="ignore"):
        d_ratio = np.where(e > 0, ratio ** (beta - 1.0) * mu0 / v_sat, 0.0)
    return -mu0 * base ** (-1.0 / beta - 1.0) * d_ratio


def chynoweth_alpha(field, a, b) -> Tuple[np.ndarray, np.ndarray]:
    """Impact ionization coefficient a exp(-b/|E|) and its derivative in |E|.

    Returns:
        (alpha in 1/cm, d alpha / d|E| in 1/V)
    """
    e = np.abs(np.asarray(field, dtype=float))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        alpha = np.where(e > 0, a * np.exp(-b / e), 0.0)
        d_alpha = np.where(e > 0, alpha * b / e**2, 0.0)
    return alpha, d_alpha


def bernoulli(x):
    """B(x) = x / (exp(x) - 1), evaluated by series near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        direct = safe / np.expm1(safe)
    series = 1.0 - x / 2.0 + x**2 / 12.0
    return np.where(small, series, direct)


def bernoulli_derivative(x):
    """dB/dx = (B - B^2) / x - B, evaluated by series near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    b = bernoulli(safe)
    direct = (b - b**2) / safe - b
    series = -0.5 + x / 6.0
    return np.where(small, series, direct)
