"""Max-min SNR utility for a broadcast network.

The blind solvers take a scalar reading per probe. For M receivers the
reading becomes U = min_m |Y^m|^2 / sigma_m^2 and everything else is unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measurement import MeasurementSession, collect_random_samples, conditional_means
from .solvers import SolverReport, csm, gcsm


@dataclass(frozen=True)
class UtilityReading:
    per_user_power: np.ndarray
    noise: np.ndarray

    @property
    def value(self) -> float:
        return utility(self.per_user_power, self.noise)


def utility(powers, noises) -> float:
    """Worst per-user power-to-noise ratio.

    Args:
        powers: received powers, one per user.
        noises: noise powers sigma_m^2, same length, all positive.
    """
    p = np.asarray(powers, dtype=float).reshape(-1)
    s = np.asarray(noises, dtype=float).reshape(-1)
    if p.size == 0 or p.shape != s.shape:
        raise ValueError("powers and noises must be non-empty and of equal length")
    if np.any(s <= 0):
        raise ValueError("noise powers must be strictly positive")
    return float(np.min(p / s))


def utility_reading_fn(noises):
    """Vectorized utility over a (T, M) block of per-user readings."""
    s = np.asarray(noises, dtype=float).reshape(-1)
    if s.size == 0 or np.any(s <= 0):
        raise ValueError("noise powers must be strictly positive")

    def fn(user_readings: np.ndarray) -> np.ndarray:
        if user_readings.shape[1] != s.size:
            raise ValueError("reading block does not match the number of users")
        return np.min(user_readings / s[None, :], axis=1)

    return fn


def _noises(session: MeasurementSession, noises):
    return session.noise_power + session.interference_power if noises is None else noises


def utility_csm(session: MeasurementSession, T: int, noises=None, rng=None) -> SolverReport:
    """CSM over all elements with the max-min utility as the reading.

    ``noises`` defaults to the session's noise plus interference per user.
    """
    fn = utility_reading_fn(_noises(session, noises))
    samples = collect_random_samples(session, T, reading_fn=fn, rng=rng)
    rep = csm(conditional_means(samples))
    rep.algorithm = "utility-csm"
    return rep


def utility_gcsm(session: MeasurementSession, T1: int, T2: int, split_ratio: float = 0.5,
                 rng=None, noises=None, **kwargs) -> SolverReport:
    """Grouped CSM with the max-min utility as the reading."""
    fn = utility_reading_fn(_noises(session, noises))
    rep = gcsm(session, T1, T2, split_ratio, rng, reading_fn=fn, **kwargs)
    rep.algorithm = "utility-gcsm"
    return rep


def min_expected_snr(session: MeasurementSession, theta, transmit_power=None, noises=None) -> float:
    """min_m P * E|h^m(theta)|^2 / sigma_m^2 from ground-truth statistics."""
    p = session.transmit_power if transmit_power is None else transmit_power
    s = np.asarray(_noises(session, noises), dtype=float)
    powers = [p * session.objective(theta, m) for m in range(session.n_users)]
    return utility(powers, s)
