"""The blind boundary: power readings for chosen phase configurations.

A :class:`MeasurementSession` plays the role of the physical link. Solvers
only see the readings |Y|^2 it returns; the channel parameters stay inside the
session and are used for ground-truth evaluation by the benchmark code only.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import (ChannelModelParams, ChannelRealization, complex_normal, draw_channels,
                      draw_realization, expected_channel_power)
from .phases import PhaseConfig, as_config, grid_angles

logger = logging.getLogger(__name__)

MODES = ("static", "fading")
PILOTS = ("deterministic", "random")

# rows of (B, N) complex scratch per measurement chunk
_CHUNK_ELEMENTS = 1 << 20

ReadingFn = Callable[[np.ndarray], np.ndarray]


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class MeasurementSession:
    """A link that returns received power for a requested phase configuration.

    Args:
        params: channel statistics of one user, or a sequence for a broadcast
            network with one entry per receiver.
        K: number of phase levels per element.
        transmit_power: P in watts.
        noise_power: sigma^2 in watts, scalar or one value per user.
        mode: ``"fading"`` draws fresh fading for every query, ``"static"``
            freezes one realization at construction.
        pilot: ``"deterministic"`` sends X = sqrt(P); ``"random"`` draws
            X ~ CN(0, P) per query. Both have the same conditional means.
        noise_enabled: add receiver noise (and interference) to Y.
        interference_power: received power of an independent Gaussian
            interferer per user, added on top of the noise.
        averaging: number of symbols averaged into one reading.
        rng: seed or Generator driving every random draw of the session.
        static_channels: explicit realizations (one per user) for static mode.
    """

    def __init__(self, params, K: int, transmit_power: float, noise_power, *,
                 mode: str = "fading", pilot: str = "deterministic", noise_enabled: bool = True,
                 interference_power=0.0, averaging: int = 1, rng=None,
                 static_channels: Sequence[ChannelRealization] | None = None):
        users = (params,) if isinstance(params, ChannelModelParams) else tuple(params)
        if not users:
            raise ValueError("at least one user is required")
        n = users[0].n_elements
        if any(u.n_elements != n for u in users):
            raise ValueError("all users must see the same number of elements")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if pilot not in PILOTS:
            raise ValueError(f"pilot must be one of {PILOTS}")
        if K < 2:
            raise ValueError("K must be >= 2")
        if not transmit_power > 0:
            raise ValueError("transmit power must be positive")
        if averaging < 1:
            raise ValueError("averaging must be >= 1")

        self.users = users
        self.K = int(K)
        self.transmit_power = float(transmit_power)
        self.noise_power = np.broadcast_to(np.asarray(noise_power, dtype=float), (len(users),)).copy()
        self.interference_power = np.broadcast_to(
            np.asarray(interference_power, dtype=float), (len(users),)).copy()
        if np.any(self.noise_power < 0) or np.any(self.interference_power < 0):
            raise ValueError("noise and interference powers must be >= 0")
        self.mode = mode
        self.pilot = pilot
        self.noise_enabled = bool(noise_enabled)
        self.averaging = int(averaging)
        self.rng = make_rng(rng)
        self.query_count = 0
        self._rot = np.exp(1j * grid_angles(self.K))

        self.realizations: tuple[ChannelRealization, ...] | None = None
        if static_channels is not None:
            if mode != "static":
                raise ValueError("explicit channels require static mode")
            if len(static_channels) != len(users):
                raise ValueError("need one static realization per user")
            self.realizations = tuple(static_channels)
        elif mode == "static":
            self.realizations = tuple(draw_realization(u, self.rng) for u in users)

    @classmethod
    def from_channels(cls, h_direct, h_reflected, K: int, transmit_power: float = 1.0,
                      noise_power: float = 0.0, **kwargs) -> "MeasurementSession":
        """Static single-user session over known channel values."""
        params = ChannelModelParams.from_static(h_direct, h_reflected)
        real = ChannelRealization(complex(h_direct), np.asarray(h_reflected, dtype=complex))
        kwargs.setdefault("noise_enabled", noise_power > 0)
        return cls(params, K, transmit_power, noise_power, mode="static",
                   static_channels=[real], **kwargs)

    @property
    def n_elements(self) -> int:
        return self.users[0].n_elements

    @property
    def n_users(self) -> int:
        return len(self.users)

    def true_params(self, user: int = 0) -> ChannelModelParams:
        """Ground-truth statistics of the objective (static mode: the frozen channels)."""
        if self.realizations is not None:
            return self.realizations[user].as_params()
        return self.users[user]

    def objective(self, theta: PhaseConfig, user: int = 0) -> float:
        """Ground-truth expected channel power; for evaluation only, never for decisions."""
        return expected_channel_power(self.true_params(user), theta)

    def measure_batch(self, indices) -> np.ndarray:
        """Readings for a (B, N) array of phase indices; returns shape (B, M)."""
        idx = np.asarray(indices, dtype=np.int64)
        n = self.n_elements
        if idx.ndim != 2 or idx.shape[1] != n:
            raise ValueError(f"expected phase indices of shape (B, {n}), got {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.K):
            raise ValueError(f"phase indices must lie in [0, {self.K})")
        b = idx.shape[0]
        rot = self._rot[idx]

        eff = np.empty((b, self.n_users), dtype=complex)
        for m, user in enumerate(self.users):
            if self.realizations is not None:
                real = self.realizations[m]
                eff[:, m] = real.h_direct + rot @ real.h_reflected
            else:
                h0, h = draw_channels(user, self.rng, b)
                eff[:, m] = h0 + np.sum(h * rot, axis=1)

        noise_var = self.interference_power + (self.noise_power if self.noise_enabled else 0.0)
        out = np.zeros((b, self.n_users))
        for _ in range(self.averaging):
            if self.pilot == "deterministic":
                y = eff * np.sqrt(self.transmit_power)
            else:
                x = np.sqrt(self.transmit_power) * complex_normal(self.rng, b)
                y = eff * x[:, None]
            if np.any(noise_var > 0):
                y = y + np.sqrt(noise_var)[None, :] * complex_normal(self.rng, (b, self.n_users))
            out += np.abs(y) ** 2
        if self.averaging > 1:
            out /= self.averaging
        self.query_count += b
        return out

    def measure_multi(self, theta) -> np.ndarray:
        """Per-user readings |Y^m|^2 for one configuration, shape (M,)."""
        cfg = as_config(theta, self.K)
        if cfg.n != self.n_elements:
            raise ValueError(f"theta has {cfg.n} entries for {self.n_elements} elements")
        return self.measure_batch(cfg.indices[None, :])[0]

    def measure(self, theta) -> float:
        """Received power |Y|^2 of a single-user session."""
        if self.n_users != 1:
            raise ValueError("measure() needs a single-user session; use measure_multi()")
        return float(self.measure_multi(theta)[0])


def power_reading(user_readings: np.ndarray) -> np.ndarray:
    if user_readings.shape[1] != 1:
        raise ValueError("multi-user samples need a scalar reading function such as the utility")
    return user_readings[:, 0]


@dataclass(frozen=True, eq=False)
class SampleSet:
    """T probed configurations with their scalar readings.

    ``thetas`` has shape (T, N); every column outside ``free_set`` equals the
    corresponding entry of ``base``. ``user_readings`` keeps the per-user
    powers when the scalar reading is a multi-user utility.
    """

    thetas: np.ndarray
    readings: np.ndarray
    K: int
    free_set: tuple
    base: PhaseConfig
    mode: str = "static"
    user_readings: np.ndarray | None = None

    def __post_init__(self):
        th = np.asarray(self.thetas, dtype=np.int64)
        if th.ndim != 2:
            raise ValueError("thetas must be a (T, N) array")
        rd = np.asarray(self.readings, dtype=float).reshape(-1)
        if rd.size != th.shape[0]:
            raise ValueError("one reading per configuration is required")
        free = tuple(sorted(int(i) for i in self.free_set))
        base = as_config(self.base, self.K)
        if base.n != th.shape[1]:
            raise ValueError("base assignment length does not match N")
        fixed = np.ones(th.shape[1], dtype=bool)
        fixed[list(free)] = False
        if th.size and (th.min() < 0 or th.max() >= self.K):
            raise ValueError(f"phase indices must lie in [0, {self.K})")
        if not np.all(th[:, fixed] == base.indices[fixed][None, :]):
            raise ValueError("fixed elements must hold their base assignment in every record")
        th.setflags(write=False)
        rd.setflags(write=False)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "readings", rd)
        object.__setattr__(self, "free_set", free)
        object.__setattr__(self, "base", base)

    @classmethod
    def from_records(cls, configs, readings, K: int, mode: str = "static") -> "SampleSet":
        """All elements free; convenient for hand-written data such as a toy table."""
        th = np.asarray(configs, dtype=np.int64)
        return cls(th, readings, K, tuple(range(th.shape[1])), PhaseConfig.zeros(th.shape[1], K), mode)

    @property
    def T(self) -> int:
        return self.thetas.shape[0]

    @property
    def N(self) -> int:
        return self.thetas.shape[1]

    def config(self, t: int) -> PhaseConfig:
        return PhaseConfig(self.thetas[t], self.K)

    def to_csv(self, dest) -> None:
        """Write ``t, theta_0..theta_{N-1}, reading`` (or per-user columns plus utility)."""
        own = isinstance(dest, (str, os.PathLike))
        fh = open(dest, "w", newline="") if own else dest
        try:
            fh.write(f"# N={self.N},K={self.K},mode={self.mode}\n")
            w = csv.writer(fh, lineterminator="\n")
            cols = ["t"] + [f"theta_{n}" for n in range(self.N)]
            if self.user_readings is None:
                cols.append("reading")
            else:
                cols += [f"reading_{m}" for m in range(self.user_readings.shape[1])] + ["utility"]
            w.writerow(cols)
            for t in range(self.T):
                row = [t] + self.thetas[t].tolist()
                if self.user_readings is not None:
                    row += [repr(float(v)) for v in self.user_readings[t]]
                row.append(repr(float(self.readings[t])))
                w.writerow(row)
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, src) -> "SampleSet":
        """Inverse of :meth:`to_csv`; free set is every element that varies."""
        if isinstance(src, (str, os.PathLike)):
            with open(src, newline="") as fh:
                text = fh.read()
        else:
            text = src.read()
        lines = text.splitlines()
        meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split(","))
        n, K = int(meta["N"]), int(meta["K"])
        rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
        header, body = rows[0], rows[1:]
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        thetas = arr[:, 1:1 + n].astype(np.int64)
        user = None
        if header[-1] == "utility":
            user = arr[:, 1 + n:-1]
        varying = [i for i in range(n) if np.unique(thetas[:, i]).size > 1]
        base = thetas[0].copy() if len(thetas) else np.zeros(n, dtype=np.int64)
        base[varying] = 0
        return cls(thetas, arr[:, -1], K, tuple(varying), PhaseConfig(base, K),
                   meta.get("mode", "static"), user)


def collect_random_samples(session: MeasurementSession, T: int, free_set=None,
                           fixed_assignment=None, reading_fn: ReadingFn | None = None,
                           rng=None) -> SampleSet:
    """Probe T configurations with the free elements drawn uniformly from the grid.

    Args:
        session: the link to query; its query counter grows by exactly T.
        T: number of probes.
        free_set: elements to randomize (default: all).
        fixed_assignment: phase indices held by the remaining elements, given
            as a full-length index array or PhaseConfig (default: zeros).
        reading_fn: maps per-user powers of shape (T, M) to one scalar per
            probe; default is the single-user received power.
        rng: generator for the random phases (default: the session's).
    """
    if T < 1:
        raise ValueError("T must be a positive integer")
    n, K = session.n_elements, session.K
    free = tuple(range(n)) if free_set is None else tuple(sorted(int(i) for i in free_set))
    if len(set(free)) != len(free) or any(i < 0 or i >= n for i in free):
        raise ValueError("free_set must hold distinct element indices")
    base = PhaseConfig.zeros(n, K) if fixed_assignment is None else as_config(fixed_assignment, K)
    if base.n != n:
        raise ValueError("fixed assignment length does not match N")
    gen = session.rng if rng is None else make_rng(rng)

    thetas = np.tile(base.indices, (T, 1))
    if free:
        thetas[:, list(free)] = gen.integers(0, K, size=(T, len(free)))
    chunk = max(1, _CHUNK_ELEMENTS // max(n, 1))
    user = np.concatenate([session.measure_batch(thetas[s:s + chunk])
                           for s in range(0, T, chunk)])
    fn = power_reading if reading_fn is None else reading_fn
    readings = np.asarray(fn(user), dtype=float)
    keep_users = user if session.n_users > 1 or reading_fn is not None else None
    return SampleSet(thetas, readings, K, free, base, session.mode, keep_users)


@dataclass(frozen=True, eq=False)
class ConditionalMeanTable:
    """Conditional averages of the reading given theta_n = k for each free element.

    Sample-based tables carry sums, sums of squares and counts; exact tables
    (built from closed-form expectations) carry ``exact`` and no counts.
    Row order follows ``free_set``.
    """

    free_set: tuple
    K: int
    base: PhaseConfig
    T: int = 0
    sums: np.ndarray | None = None
    sumsq: np.ndarray | None = None
    counts: np.ndarray | None = None
    exact: np.ndarray | None = None

    @classmethod
    def from_exact(cls, free_set, means, base: PhaseConfig) -> "ConditionalMeanTable":
        m = np.asarray(means, dtype=float)
        free = tuple(sorted(int(i) for i in free_set))
        if m.shape != (len(free), base.K):
            raise ValueError("exact means must have shape (len(free_set), K)")
        return cls(free, base.K, base, exact=m)

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    @property
    def means(self) -> np.ndarray:
        if self.exact is not None:
            return self.exact
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)

    @property
    def undefined(self) -> np.ndarray:
        """Mask of cells with no samples."""
        if self.counts is None:
            return np.zeros((len(self.free_set), self.K), dtype=bool)
        return self.counts == 0

    def row(self, n: int) -> np.ndarray:
        return self.means[self.free_set.index(n)]

    def spread(self) -> np.ndarray:
        """max_k - min_k of each row, ignoring undefined cells."""
        m = self.means
        return np.nanmax(m, axis=1) - np.nanmin(m, axis=1)

    def pooled_std(self) -> np.ndarray:
        """Within-cell pooled sample standard deviation of the readings, per row."""
        if self.counts is None:
            raise ValueError("exact tables have no sample spread")
        within = self.sumsq - np.where(self.counts > 0, self.sums ** 2 / np.maximum(self.counts, 1), 0.0)
        dof = np.maximum(self.counts.sum(axis=1) - (self.counts > 0).sum(axis=1), 1)
        return np.sqrt(np.maximum(within.sum(axis=1), 0.0) / dof)


def conditional_means(samples: SampleSet) -> ConditionalMeanTable:
    """Empirical E[reading | theta_n = k] for every free element and phase level."""
    if samples.T == 0:
        raise ValueError("empty sample set")
    free = list(samples.free_set)
    K = samples.K
    f = len(free)
    if f == 0:
        empty = np.zeros((0, K))
        return ConditionalMeanTable((), K, samples.base, samples.T, empty, empty.copy(),
                                    np.zeros((0, K), dtype=np.int64))
    cells = (np.arange(f)[None, :] * K + samples.thetas[:, free]).ravel()
    r = np.repeat(samples.readings, f)
    sums = np.bincount(cells, weights=r, minlength=f * K).reshape(f, K)
    sumsq = np.bincount(cells, weights=r * r, minlength=f * K).reshape(f, K)
    counts = np.bincount(cells, minlength=f * K).reshape(f, K)
    if np.any(counts == 0):
        logger.warning("%d conditional cells have no samples; they rank below every defined cell",
                       int(np.sum(counts == 0)))
    return ConditionalMeanTable(tuple(free), K, samples.base, samples.T, sums, sumsq, counts)
