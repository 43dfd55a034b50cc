"""Figures of merit: ergodic rate, its upper bound, SNR boost, CDFs, scaling fits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelModelParams, draw_channels, expected_channel_power
from .phases import PhaseConfig

# draws per Monte Carlo chunk, keeps memory flat for large N
_RATE_CHUNK = 1 << 16


@dataclass(frozen=True)
class RateEstimate:
    mean_rate: float
    std_error: float
    trials: int


def ergodic_rate(params: ChannelModelParams, theta: PhaseConfig, transmit_power: float,
                 noise_power: float, trials: int, rng) -> RateEstimate:
    """Monte Carlo estimate of E[log2(1 + P |h(theta)|^2 / sigma^2)].

    Draws are taken in fixed-size chunks so the result depends only on the
    generator state, not on memory settings.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    snr = transmit_power / noise_power
    if params.is_static:
        # no randomness: the rate is the closed form with zero spread
        return RateEstimate(rate_upper_bound(params, theta, transmit_power, noise_power), 0.0, trials)
    rates = np.empty(trials)
    rot = theta.phasors
    for s in range(0, trials, _RATE_CHUNK):
        b = min(_RATE_CHUNK, trials - s)
        h0, h = draw_channels(params, rng, b)
        rates[s:s + b] = np.log2(1.0 + snr * np.abs(h0 + h @ rot) ** 2)
    std = float(rates.std(ddof=1)) if trials > 1 else 0.0
    return RateEstimate(float(rates.mean()), std / math.sqrt(trials), trials)


def rate_upper_bound(params: ChannelModelParams, theta: PhaseConfig, transmit_power: float,
                     noise_power: float) -> float:
    """log2(1 + P E|h(theta)|^2 / sigma^2), an upper bound on the ergodic rate by Jensen."""
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    return float(np.log2(1.0 + transmit_power / noise_power * expected_channel_power(params, theta)))


def snr_boost(params: ChannelModelParams, theta: PhaseConfig, reference: str = "no_is") -> float:
    """Expected channel power gain over the direct path alone, in dB."""
    if reference != "no_is":
        raise ValueError(f"unknown boost reference {reference!r}")
    if not params.gamma_direct > 0:
        raise ValueError("boost is undefined without a direct path (gamma_direct = 0)")
    return float(10.0 * np.log10(expected_channel_power(params, theta) / params.gamma_direct))


def db(x):
    return 10.0 * np.log10(x)


def cdf(values):
    """Empirical CDF as sorted (value, fraction of samples <= value) pairs."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise ValueError("cdf of an empty array")
    # right-continuous: repeated values all get the fraction at their last copy
    frac = np.searchsorted(v, v, side="right") / v.size
    return list(zip(v.tolist(), frac.tolist()))


def fit_scaling(ns, boosts_linear) -> float:
    """Least-squares slope of log(boost) against log(N)."""
    n = np.asarray(ns, dtype=float)
    b = np.asarray(boosts_linear, dtype=float)
    if n.size < 3 or n.shape != b.shape:
        raise ValueError("need at least 3 (N, boost) pairs")
    if np.any(np.diff(n) <= 0):
        raise ValueError("ns must be strictly increasing")
    if np.any(n <= 0) or np.any(b <= 0):
        raise ValueError("ns and boosts must be positive")
    slope, _ = np.polyfit(np.log(n), np.log(b), 1)
    return float(slope)


def min_user_rate(users, theta: PhaseConfig, transmit_power: float, noise_powers, trials: int,
                  rng) -> RateEstimate:
    """Monte Carlo E[log2(1 + min_m P |h^m(theta)|^2 / sigma_m^2)] over independent fading.

    With one user this is :func:`ergodic_rate`.
    """
    users = list(users)
    s = np.broadcast_to(np.asarray(noise_powers, dtype=float), (len(users),))
    if len(users) == 1:
        return ergodic_rate(users[0], theta, transmit_power, float(s[0]), trials, rng)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if np.any(s <= 0):
        raise ValueError("noise powers must be positive")
    rot = theta.phasors
    rates = np.empty(trials)
    for start in range(0, trials, _RATE_CHUNK):
        b = min(_RATE_CHUNK, trials - start)
        snr = np.full(b, np.inf)
        for u, sig in zip(users, s):
            h0, h = draw_channels(u, rng, b)
            snr = np.minimum(snr, transmit_power / sig * np.abs(h0 + h @ rot) ** 2)
        rates[start:start + b] = np.log2(1.0 + snr)
    std = float(rates.std(ddof=1)) if trials > 1 else 0.0
    return RateEstimate(float(rates.mean()), std / math.sqrt(trials), trials)
