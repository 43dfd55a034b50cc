"""Rician channel model for a single-antenna link assisted by an intelligent surface.

Every path (direct, transmitter->element, element->receiver) is Rician:

    h = sqrt(gamma) * (sqrt(delta/(1+delta)) * los + sqrt(1/(1+delta)) * CN(0, 1))

and the reflected channel of element n is the product of its two segments.
Closed-form first and second moments are provided so that solvers and tests
can be checked against exact expectations instead of sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .phases import PhaseConfig, as_config, grid_angles

SPEED_OF_LIGHT = 299_792_458.0
CARRIER_HZ = 2.6e9
DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / CARRIER_HZ

# -10*log10(gamma) = a + b*log10(d)
PATHLOSS_COEFFS = {
    "direct": (32.6, 36.7),
    "segment": (30.0, 22.0),
}

_PHASOR_TOL = 1e-12


def pathloss(distance_m, kind: str = "direct"):
    """Linear power attenuation of a path of length ``distance_m`` meters.

    Args:
        distance_m: path length in meters, scalar or array, strictly positive.
        kind: ``"direct"`` for the transmitter-receiver link or ``"segment"``
            for either hop through the surface.

    Returns:
        Attenuation ``10**(-loss_dB/10)`` with the same shape as the input.
    """
    if kind not in PATHLOSS_COEFFS:
        raise ValueError(f"unknown pathloss kind {kind!r}")
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be strictly positive")
    a, b = PATHLOSS_COEFFS[kind]
    gamma = 10.0 ** (-(a + b * np.log10(d)) / 10.0)
    return float(gamma) if gamma.ndim == 0 else gamma


def los_phasor(distance_m, wavelength_m):
    """Unit-modulus line-of-sight component exp(-j*2*pi*d/lambda)."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)) or not wavelength_m > 0:
        raise ValueError("distance and wavelength must be strictly positive")
    # reduce the phase modulo one wavelength first to keep exp() accurate
    frac = np.mod(d / wavelength_m, 1.0)
    ph = np.exp(-2j * np.pi * frac)
    return complex(ph) if ph.ndim == 0 else ph


def _los_weight(delta):
    d = np.asarray(delta, dtype=float)
    with np.errstate(invalid="ignore"):
        w = d / (1.0 + d)
    return np.where(np.isinf(d), 1.0, w)


def _nlos_weight(delta):
    return 1.0 / (1.0 + np.asarray(delta, dtype=float))


@dataclass(frozen=True)
class Geometry:
    """Positions (meters) of transmitter, receivers and reflective elements."""

    tx_position: np.ndarray
    rx_positions: np.ndarray
    re_positions: np.ndarray
    wavelength: float = DEFAULT_WAVELENGTH

    def __post_init__(self):
        tx = np.asarray(self.tx_position, dtype=float).reshape(3)
        rx = np.asarray(self.rx_positions, dtype=float).reshape(-1, 3)
        re = np.asarray(self.re_positions, dtype=float).reshape(-1, 3)
        if rx.shape[0] < 1:
            raise ValueError("at least one receiver is required")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        object.__setattr__(self, "tx_position", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "re_positions", re)
        for name, d in (("direct", self.direct_distances),
                        ("tx-element", self.tx_re_distances),
                        ("element-rx", self.re_rx_distances)):
            if np.any(~(d > 0)):
                raise ValueError(f"{name} distances must be strictly positive")

    @classmethod
    def ula(cls, tx_position, rx_positions, surface_origin, n_elements: int,
            wavelength: float = DEFAULT_WAVELENGTH, axis=(1.0, 0.0, 0.0)) -> "Geometry":
        """Half-wavelength spaced uniform linear array starting at ``surface_origin``."""
        if n_elements < 0:
            raise ValueError("n_elements must be >= 0")
        u = np.asarray(axis, dtype=float)
        u = u / np.linalg.norm(u)
        steps = np.arange(n_elements)[:, None] * (wavelength / 2.0)
        re = np.asarray(surface_origin, dtype=float)[None, :] + steps * u[None, :]
        return cls(tx_position, rx_positions, re, wavelength)

    @property
    def n_elements(self) -> int:
        return self.re_positions.shape[0]

    @property
    def n_users(self) -> int:
        return self.rx_positions.shape[0]

    @property
    def direct_distances(self) -> np.ndarray:
        return np.linalg.norm(self.rx_positions - self.tx_position, axis=1)

    @property
    def tx_re_distances(self) -> np.ndarray:
        return np.linalg.norm(self.re_positions - self.tx_position, axis=1)

    @property
    def re_rx_distances(self) -> np.ndarray:
        """Shape (M, N)."""
        diff = self.rx_positions[:, None, :] - self.re_positions[None, :, :]
        return np.linalg.norm(diff, axis=2)


@dataclass(frozen=True)
class RicianFactors:
    direct: float = 10.0
    tx_re: float = 10.0
    re_rx: float = 10.0

    PRESETS = {"los": (10.0, 10.0, 10.0), "nlos": (0.0, 10.0, 10.0)}

    @classmethod
    def preset(cls, name: str) -> "RicianFactors":
        try:
            return cls(*cls.PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown Rician preset {name!r}") from None


def _ro(a, dtype):
    a = np.array(a, dtype=dtype).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChannelModelParams:
    """Deterministic statistics of one user's channels.

    ``gamma_*`` are linear power attenuations, ``rician_*`` the Rician factors
    (``np.inf`` means a purely deterministic path) and ``los_*`` unit phasors.
    Per-element fields have length N.
    """

    gamma_direct: float
    gamma_tx_re: np.ndarray
    gamma_re_rx: np.ndarray
    rician_direct: float
    rician_tx_re: np.ndarray
    rician_re_rx: np.ndarray
    los_direct: complex
    los_tx_re: np.ndarray
    los_re_rx: np.ndarray
    # scratch for cached derived arrays
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma_direct", float(self.gamma_direct))
        object.__setattr__(self, "rician_direct", float(self.rician_direct))
        object.__setattr__(self, "los_direct", complex(self.los_direct))
        for name in ("gamma_tx_re", "gamma_re_rx", "rician_tx_re", "rician_re_rx"):
            object.__setattr__(self, name, _ro(getattr(self, name), float))
        for name in ("los_tx_re", "los_re_rx"):
            object.__setattr__(self, name, _ro(getattr(self, name), complex))

        n = self.gamma_tx_re.size
        for name in ("gamma_re_rx", "rician_tx_re", "rician_re_rx", "los_tx_re", "los_re_rx"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} has length {getattr(self, name).size}, expected {n}")
        gammas = np.concatenate([[self.gamma_direct], self.gamma_tx_re, self.gamma_re_rx])
        if np.any((gammas < 0) | (gammas > 1)) or np.any(np.isnan(gammas)):
            raise ValueError("attenuations must lie in [0, 1]")
        ricians = np.concatenate([[self.rician_direct], self.rician_tx_re, self.rician_re_rx])
        if np.any(~(ricians >= 0)):
            raise ValueError("Rician factors must be >= 0")
        mods = np.abs(np.concatenate([[self.los_direct], self.los_tx_re, self.los_re_rx]))
        if np.any(np.abs(mods - 1.0) > _PHASOR_TOL):
            raise ValueError("line-of-sight phasors must have unit modulus")

    @classmethod
    def from_static(cls, h_direct: complex, h_reflected) -> "ChannelModelParams":
        """Deterministic (infinite Rician factor) channels with the given values.

        A zero channel gets the reference phasor 1; its weight is zero anyway.
        """
        h0 = complex(h_direct)
        h = np.asarray(h_reflected, dtype=complex).reshape(-1)
        if abs(h0) ** 2 > 1 or np.any(np.abs(h) ** 2 > 1):
            raise ValueError("static channel gains must not exceed unit power")

        def unit(z):
            mag = np.abs(z)
            return np.where(mag > 0, z / np.where(mag > 0, mag, 1.0), 1.0 + 0j)

        n = h.size
        return cls(
            gamma_direct=abs(h0) ** 2,
            gamma_tx_re=np.abs(h) ** 2,
            gamma_re_rx=np.ones(n),
            rician_direct=np.inf,
            rician_tx_re=np.full(n, np.inf),
            rician_re_rx=np.full(n, np.inf),
            los_direct=complex(unit(np.asarray(h0))),
            los_tx_re=unit(h),
            los_re_rx=np.ones(n, dtype=complex),
        )

    @property
    def n_elements(self) -> int:
        return self.gamma_tx_re.size

    @property
    def is_static(self) -> bool:
        return bool(np.isinf(self.rician_direct) and np.all(np.isinf(self.rician_tx_re))
                    and np.all(np.isinf(self.rician_re_rx)))

    @property
    def los_reflected(self) -> np.ndarray:
        """Composite LoS phasor of each reflected path (unit modulus)."""
        return self.los_tx_re * self.los_re_rx

    @property
    def power_reflected(self) -> np.ndarray:
        """E|h_n|^2 = gamma_0n * gamma_n0."""
        return self.gamma_tx_re * self.gamma_re_rx

    @property
    def mean_direct(self) -> complex:
        """E[h_0]."""
        return complex(np.sqrt(self.gamma_direct * _los_weight(self.rician_direct)) * self.los_direct)

    @property
    def mean_reflected(self) -> np.ndarray:
        """E[h_n] for every element."""
        if "mean_reflected" not in self._cache:
            amp = np.sqrt(self.power_reflected * _los_weight(self.rician_tx_re)
                          * _los_weight(self.rician_re_rx))
            self._cache["mean_reflected"] = amp * self.los_reflected
        return self._cache["mean_reflected"]

    @property
    def var_direct(self) -> float:
        return float(self.gamma_direct * _nlos_weight(self.rician_direct))

    @property
    def var_reflected(self) -> np.ndarray:
        """Var[h_n] = gamma_0n*gamma_n0*(delta_0n+delta_n0+1)/((1+delta_0n)(1+delta_n0))."""
        sa = _nlos_weight(self.rician_tx_re)
        sb = _nlos_weight(self.rician_re_rx)
        return self.power_reflected * (sa + sb - sa * sb)

    @property
    def phase_offsets(self) -> np.ndarray:
        """Principal argument of los_direct * conj(los_reflected), one per element."""
        return np.angle(self.los_direct * np.conj(self.los_reflected))

    def total_variance(self) -> float:
        return self.var_direct + float(np.sum(self.var_reflected))

    def average_power(self) -> float:
        """E|h_0|^2 + sum_n E|h_n|^2: the expected power under uniformly random phases."""
        return self.gamma_direct + float(np.sum(self.power_reflected))

    def subset(self, members) -> "ChannelModelParams":
        """Params restricted to the given elements (same direct path)."""
        m = np.asarray(members, dtype=np.int64)
        return ChannelModelParams(
            self.gamma_direct, self.gamma_tx_re[m], self.gamma_re_rx[m],
            self.rician_direct, self.rician_tx_re[m], self.rician_re_rx[m],
            self.los_direct, self.los_tx_re[m], self.los_re_rx[m],
        )

    def with_direct(self, gamma=None, rician=None) -> "ChannelModelParams":
        return ChannelModelParams(
            self.gamma_direct if gamma is None else gamma,
            self.gamma_tx_re, self.gamma_re_rx,
            self.rician_direct if rician is None else rician,
            self.rician_tx_re, self.rician_re_rx,
            self.los_direct, self.los_tx_re, self.los_re_rx,
        )


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of the direct channel and the N reflected channels."""

    h_direct: complex
    h_reflected: np.ndarray

    def total(self, theta: PhaseConfig) -> complex:
        return complex(self.h_direct + np.sum(self.h_reflected * theta.phasors))

    def as_params(self) -> ChannelModelParams:
        return ChannelModelParams.from_static(self.h_direct, self.h_reflected)


def build_params(geometry: Geometry, rician: RicianFactors | str = "los",
                 user: int = 0, direct_gamma: float | None = None) -> ChannelModelParams:
    """Channel statistics of receiver ``user`` from pathloss and LoS phases.

    ``direct_gamma`` overrides the direct attenuation, e.g. 0 to remove the
    direct path entirely.
    """
    if isinstance(rician, str):
        rician = RicianFactors.preset(rician)
    n = geometry.n_elements
    d00 = geometry.direct_distances[user]
    d0n = geometry.tx_re_distances
    dn0 = geometry.re_rx_distances[user]
    lam = geometry.wavelength
    return ChannelModelParams(
        gamma_direct=pathloss(d00, "direct") if direct_gamma is None else direct_gamma,
        gamma_tx_re=pathloss(d0n, "segment") if n else np.zeros(0),
        gamma_re_rx=pathloss(dn0, "segment") if n else np.zeros(0),
        rician_direct=rician.direct,
        rician_tx_re=np.full(n, rician.tx_re),
        rician_re_rx=np.full(n, rician.re_rx),
        los_direct=los_phasor(d00, lam),
        los_tx_re=los_phasor(d0n, lam) if n else np.zeros(0, complex),
        los_re_rx=los_phasor(dn0, lam) if n else np.zeros(0, complex),
    )


def build_user_params(geometry: Geometry, rician: RicianFactors | str = "los",
                      direct_gamma: float | None = None) -> list[ChannelModelParams]:
    return [build_params(geometry, rician, m, direct_gamma) for m in range(geometry.n_users)]


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples CN(0, 1)."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def draw_channels(params: ChannelModelParams, rng: np.random.Generator, size: int):
    """Draw ``size`` independent realizations at once.

    Returns:
        (h_direct of shape (size,), h_reflected of shape (size, N)).
    """
    n = params.n_elements
    h0_fade = complex_normal(rng, size)
    f_fade = complex_normal(rng, (size, n))
    g_fade = complex_normal(rng, (size, n))

    h0 = np.sqrt(params.gamma_direct) * (
        np.sqrt(_los_weight(params.rician_direct)) * params.los_direct
        + np.sqrt(_nlos_weight(params.rician_direct)) * h0_fade)
    f = np.sqrt(params.gamma_tx_re) * (
        np.sqrt(_los_weight(params.rician_tx_re)) * params.los_tx_re
        + np.sqrt(_nlos_weight(params.rician_tx_re)) * f_fade)
    g = np.sqrt(params.gamma_re_rx) * (
        np.sqrt(_los_weight(params.rician_re_rx)) * params.los_re_rx
        + np.sqrt(_nlos_weight(params.rician_re_rx)) * g_fade)
    return h0, f * g


def draw_realization(params: ChannelModelParams, rng: np.random.Generator) -> ChannelRealization:
    h0, h = draw_channels(params, rng, 1)
    return ChannelRealization(complex(h0[0]), h[0].copy())


def expected_channel_power(params: ChannelModelParams, theta) -> float:
    """E|h_0 + sum_n h_n e^{j theta_n}|^2 in closed form.

    Mean part |E[h_0] + sum E[h_n] e^{j theta_n}|^2 plus the variances of all
    paths, which do not depend on the phases.
    """
    if not isinstance(theta, PhaseConfig):
        raise TypeError("theta must be a PhaseConfig")
    if theta.n != params.n_elements:
        raise ValueError(f"theta has {theta.n} entries for {params.n_elements} elements")
    coherent = params.mean_direct + np.sum(params.mean_reflected * theta.phasors)
    return float(abs(coherent) ** 2 + params.total_variance())


def expected_channel_power_batch(params: ChannelModelParams, indices: np.ndarray, K: int) -> np.ndarray:
    """Vectorized expected_channel_power for a (B, N) array of phase indices."""
    idx = np.asarray(indices, dtype=np.int64)
    rot = np.exp(1j * grid_angles(K))[idx]
    coherent = params.mean_direct + rot @ params.mean_reflected
    return np.abs(coherent) ** 2 + params.total_variance()


def virtual_direct(params: ChannelModelParams, theta: PhaseConfig, members) -> complex:
    """E[h_0] plus the mean reflected channels of ``members`` rotated by ``theta``."""
    m = np.asarray(list(members), dtype=np.int64)
    if m.size == 0:
        return params.mean_direct
    return complex(params.mean_direct
                   + np.sum(params.mean_reflected[m] * theta.phasors[m]))


def conditional_power_table(params: ChannelModelParams, K: int, transmit_power: float,
                            noise_power: float, free_set=None, base: PhaseConfig | None = None,
                            interference_power: float = 0.0) -> np.ndarray:
    """Exact E[|Y|^2 | theta_n = k*omega] for every free element n and every k.

    Elements in ``free_set`` are drawn uniformly from the grid; all others
    hold the phases in ``base``. Defaults: every element free.

    Returns:
        Array of shape (len(free_set), K).
    """
    n_el = params.n_elements
    free = np.arange(n_el) if free_set is None else np.asarray(sorted(free_set), dtype=np.int64)
    if free.size and (free.min() < 0 or free.max() >= n_el):
        raise ValueError("element index out of range")
    base = PhaseConfig.zeros(n_el, K) if base is None else as_config(base, K)
    fixed_mask = np.ones(n_el, dtype=bool)
    fixed_mask[free] = False
    v = virtual_direct(params, base, np.flatnonzero(fixed_mask))
    # uniformly random grid phases kill every cross term that involves a free element
    const = (abs(v) ** 2 + params.var_direct
             + float(np.sum(params.var_reflected[fixed_mask]))
             + float(np.sum(params.power_reflected[~fixed_mask])))
    rot = np.exp(-1j * grid_angles(K))
    cross = 2.0 * np.real((v * np.conj(params.mean_reflected[free]))[:, None] * rot[None, :])
    return transmit_power * (const + cross) + noise_power + interference_power


def conditional_power_expectation(params: ChannelModelParams, n: int, k: int, K: int,
                                  transmit_power: float, noise_power: float) -> float:
    """E[|Y|^2 | theta_n = k*omega] with every other element uniformly random."""
    if not 0 <= n < params.n_elements:
        raise ValueError(f"element index {n} out of range")
    if not 0 <= k < K:
        raise ValueError(f"phase index {k} out of range for K={K}")
    if transmit_power <= 0 or noise_power < 0:
        raise ValueError("transmit power must be > 0 and noise power >= 0")
    return float(conditional_power_table(params, K, transmit_power, noise_power)[n, k])


def direct_coupling(params: ChannelModelParams) -> np.ndarray:
    """|E[h_0]| * |E[h_n]|: the coefficient of the cosine in the conditional mean."""
    return abs(params.mean_direct) * np.abs(params.mean_reflected)
