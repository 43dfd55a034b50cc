"""Scenario presets and the experiment runner.

A :class:`Scenario` is a flat YAML-serializable document. ``run_scenario``
produces one row per (trial, algorithm); every trial draws its receiver
positions and every algorithm its probes from random streams keyed by
``(master_seed, trial, algorithm)``, so results do not depend on the thread
count or on which other algorithms are in the list.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import (DEFAULT_WAVELENGTH, ChannelModelParams, ChannelRealization, Geometry,
                      RicianFactors, build_user_params, draw_realization, expected_channel_power,
                      pathloss)
from .measurement import MODES, PILOTS, MeasurementSession, collect_random_samples, conditional_means
from .metrics import fit_scaling, min_user_rate, snr_boost
from .multiuser import utility_csm, utility_gcsm, utility_reading_fn
from .phases import PhaseConfig
from .solvers import (SolverReport, alternating_csm, alternating_csm_oracle, beam_training, cpp,
                      csm, csm_oracle, exhaustive, gcsm, gcsm_oracle, zps)

logger = logging.getLogger(__name__)

# stable stream ids; never renumber, or old seeds stop reproducing
ALGORITHM_IDS = {
    "zps": 1, "random": 2, "beam-training": 3, "csm": 4, "gcsm": 5, "alternating-csm": 6,
    "cpp": 7, "csm-oracle": 8, "gcsm-oracle": 9, "alternating-csm-oracle": 10, "exhaustive": 11,
}
ALGORITHMS = tuple(ALGORITHM_IDS)
SWEEP_AXES = ("N", "T", "K", "groups")

ROW_FIELDS = ("scenario", "trial", "algorithm", "N", "K", "T", "groups", "users", "queries",
              "config", "expected_power", "random_power", "boost_db", "min_snr_db", "upper_rate",
              "mean_rate", "std_error", "cpp_agreement")

FIG2_CHANNELS = [
    [1.7646e-5, 2.1012e-5], [0.2792e-5, -1.6644e-5], [0.7178e-5, 3.1842e-5], [0.6117e-5, -2.2282e-5],
]


class ScenarioError(ValueError):
    """Malformed or unknown scenario input."""


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


@dataclass
class Scenario:
    """Everything needed to reproduce one experiment.

    Receivers are drawn uniformly from ``rx_box`` (two opposite corners) per
    trial unless ``rx_fixed`` lists explicit positions. The surface is a
    half-wavelength uniform linear array starting at ``surface_origin``.
    ``reflected_gamma`` pins gamma_0n * gamma_n0 of every element, and
    ``T_scale`` ties the budget to the surface size as T = T_scale * K * N^2.
    """

    name: str = "custom"
    N: int = 100
    K: int = 4
    P_dBm: float = 20.0
    noise_dBm: float = -90.0
    T: int = 1000
    T1: int | None = None
    T2: int | None = None
    T_scale: float | None = None
    algorithms: list = field(default_factory=lambda: ["zps", "beam-training", "csm", "gcsm"])
    trials: int = 20
    master_seed: int = 0
    rician: object = "los"
    mode: str = "fading"
    pilot: str = "deterministic"
    averaging: int = 1
    tx: list = field(default_factory=lambda: [0.0, 60.0, 10.0])
    surface_origin: list = field(default_factory=lambda: [3.0, 4.5, 3.0])
    surface_axis: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    rx_box: list = field(default_factory=lambda: [[0.0, 1.0, 1.5], [6.0, 3.0, 1.5]])
    rx_fixed: list | None = None
    users: int = 1
    wavelength: float = DEFAULT_WAVELENGTH
    direct_gamma: float | None = None
    reflected_gamma: float | None = None
    interference: bool = False
    interferer: list = field(default_factory=lambda: [150.0, -200.0, 20.0])
    interferer_dBm: float = 20.0
    static_channels: dict | None = None
    split_ratio: float = 0.5
    groups: int = 3
    s1: list | None = None
    initial: list | None = None
    alternating_groups: list | None = None
    alternating_rounds: int = 4
    rate_trials: int = 0
    sweep_axis: str | None = None
    sweep_values: list | None = None

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise ScenarioError("a scenario document must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(doc or {})

    @classmethod
    def preset(cls, name: str) -> "Scenario":
        if name not in PRESETS:
            raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        return cls.from_dict(dict(PRESETS[name], name=name))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_overrides(self, overrides) -> "Scenario":
        """Apply ``key=value`` strings; values are parsed as YAML scalars or lists."""
        doc = self.to_dict()
        for item in overrides or ():
            key, sep, raw = item.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ScenarioError(f"override {item!r} is not of the form key=value")
            if key not in doc:
                raise ScenarioError(f"unknown scenario key {key!r}")
            try:
                doc[key] = yaml.safe_load(raw)
            except yaml.YAMLError as exc:
                raise ScenarioError(f"cannot parse value of {key!r}: {exc}") from None
        return Scenario.from_dict(doc)

    def replace(self, **changes) -> "Scenario":
        return Scenario.from_dict({**self.to_dict(), **changes})

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ScenarioError(msg)

        for key in ("N", "K", "T", "trials", "users", "groups", "averaging", "alternating_rounds",
                    "rate_trials", "master_seed"):
            need(isinstance(getattr(self, key), int) and not isinstance(getattr(self, key), bool),
                 f"{key} must be an integer")
        need(self.N >= 0, "N must be >= 0")
        need(self.K >= 2, "K must be >= 2")
        need(self.trials >= 1, "trials must be >= 1")
        need(self.users >= 1, "users must be >= 1")
        need(self.groups >= 3, "groups must be >= 3")
        need(self.averaging >= 1, "averaging must be >= 1")
        need(self.master_seed >= 0, "master_seed must be >= 0")
        need(self.rate_trials >= 0, "rate_trials must be >= 0")
        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(self.pilot in PILOTS, f"pilot must be one of {PILOTS}")
        need(0 < self.split_ratio < 1, "split_ratio must lie in (0, 1)")
        need(isinstance(self.algorithms, list) and self.algorithms, "algorithms must be a non-empty list")
        bad = [a for a in self.algorithms if a not in ALGORITHM_IDS]
        need(not bad, f"unknown algorithms: {', '.join(map(str, bad))}")
        if isinstance(self.rician, str):
            need(self.rician in RicianFactors.PRESETS, f"unknown Rician preset {self.rician!r}")
        else:
            need(isinstance(self.rician, list) and len(self.rician) == 3,
                 "rician must be a preset name or [direct, tx_re, re_rx]")
        if self.T_scale is not None:
            need(self.T_scale > 0, "T_scale must be positive")
        need(self.budget() >= 1, "T must be >= 1")
        t1, t2 = self.stage_budgets()
        need(t1 >= 1 and t2 >= 1, "T1 and T2 must be >= 1")
        if self.sweep_axis is not None:
            need(self.sweep_axis in SWEEP_AXES, f"sweep_axis must be one of {SWEEP_AXES}")
            need(isinstance(self.sweep_values, list) and self.sweep_values,
                 "sweep_values must be a non-empty list")
        if self.static_channels is not None:
            need(self.users == 1, "explicit static channels support a single user")
            need(len(self.static_channels.get("h_reflected", [])) == self.N,
                 "static_channels.h_reflected must have N entries")
        if self.rx_fixed is not None:
            need(len(self.rx_fixed) == self.users, "rx_fixed needs one position per user")

    def budget(self) -> int:
        if self.T_scale is not None:
            return int(round(self.T_scale * self.K * self.N ** 2))
        return self.T

    def stage_budgets(self) -> tuple[int, int]:
        T = self.budget()
        if self.T_scale is None and self.T1 is not None and self.T2 is not None:
            return self.T1, self.T2
        return T // 2, T - T // 2

    def rician_factors(self) -> RicianFactors:
        if isinstance(self.rician, str):
            return RicianFactors.preset(self.rician)
        return RicianFactors(*map(float, self.rician))


_LOS = {"rician": "los"}
PRESETS = {
    "los-default": dict(_LOS),
    "nlos": {"rician": "nlos"},
    "interference": {"rician": "los", "interference": True},
    "multiuser": {"rician": "nlos", "users": 3, "algorithms": ["zps", "csm", "gcsm"]},
    "fig2-counterexample": {
        "N": 4, "K": 4, "trials": 1, "mode": "static",
        "static_channels": {"h_direct": [0.0, 0.0], "h_reflected": FIG2_CHANNELS},
        "algorithms": ["exhaustive", "cpp", "alternating-csm-oracle", "gcsm-oracle"],
        "s1": [0, 3], "alternating_groups": [[0, 3], [1, 2]], "initial": [0, 1, 3, 1],
        "alternating_rounds": 4,
    },
    "scaling": {
        "rician": "los", "rx_fixed": [[3.0, 2.0, 1.5]], "reflected_gamma": 1.3e-11,
        "T_scale": 1.0, "trials": 6, "algorithms": ["beam-training", "csm", "gcsm"],
        "sweep_axis": "N", "sweep_values": [16, 32, 64, 128],
    },
}


def trial_stream(seed: int, trial: int, slot: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, slot, sub)))


@dataclass
class TrialEnvironment:
    users: list
    realizations: list | None
    truths: list
    interference: np.ndarray


def build_trial(sc: Scenario, trial: int) -> TrialEnvironment:
    """Channel statistics (and frozen channels in static mode) of one trial."""
    rng = trial_stream(sc.master_seed, trial, 0)
    interference = np.zeros(sc.users)
    if sc.static_channels is not None:
        h0 = complex(*sc.static_channels.get("h_direct", [0.0, 0.0]))
        h = np.array([complex(*z) for z in sc.static_channels["h_reflected"]], dtype=complex)
        real = ChannelRealization(h0, h)
        users = [real.as_params()]
        return TrialEnvironment(users, [real], users, interference)

    if sc.rx_fixed is not None:
        rx = np.asarray(sc.rx_fixed, dtype=float).reshape(-1, 3)
    else:
        lo, hi = (np.asarray(c, dtype=float) for c in sc.rx_box)
        rx = rng.uniform(lo, hi, size=(sc.users, 3))
    geometry = Geometry.ula(sc.tx, rx, sc.surface_origin, sc.N, sc.wavelength, sc.surface_axis)
    users = build_user_params(geometry, sc.rician_factors(), sc.direct_gamma)
    if sc.reflected_gamma is not None:
        g = math.sqrt(sc.reflected_gamma)
        users = [ChannelModelParams(u.gamma_direct, np.full(sc.N, g), np.full(sc.N, g),
                                    u.rician_direct, u.rician_tx_re, u.rician_re_rx,
                                    u.los_direct, u.los_tx_re, u.los_re_rx) for u in users]
    if sc.interference:
        d = np.linalg.norm(rx - np.asarray(sc.interferer, dtype=float), axis=1)
        interference = float(dbm_to_watts(sc.interferer_dBm)) * pathloss(d, "direct")
    realizations = None
    truths = users
    if sc.mode == "static":
        realizations = [draw_realization(u, rng) for u in users]
        truths = [r.as_params() for r in realizations]
    return TrialEnvironment(users, realizations, truths, np.asarray(interference, dtype=float))


def _halves(n: int, ratio: float, rng) -> list:
    size = min(max(math.ceil(n * ratio), 1), max(n - 1, 1))
    first = sorted(int(i) for i in rng.choice(n, size=size, replace=False)) if n else []
    return [first, [i for i in range(n) if i not in set(first)]]


def run_algorithm(sc: Scenario, env: TrialEnvironment, name: str, rng) -> SolverReport:
    """Run one algorithm on a fresh session whose randomness comes from ``rng``."""
    P = float(dbm_to_watts(sc.P_dBm))
    noise = float(dbm_to_watts(sc.noise_dBm))
    n, K = sc.N, sc.K
    T = sc.budget()
    T1, T2 = sc.stage_budgets()
    multi = sc.users > 1
    truth = env.truths[0]

    def session():
        return MeasurementSession(env.users, K, P, noise, mode=sc.mode, pilot=sc.pilot,
                                  interference_power=env.interference, averaging=sc.averaging,
                                  rng=rng, static_channels=env.realizations)

    reading_fn = utility_reading_fn(noise + env.interference) if multi else None
    alt_groups = sc.alternating_groups
    if name in ("alternating-csm", "alternating-csm-oracle") and alt_groups is None:
        alt_groups = _halves(n, sc.split_ratio, rng)

    if name == "zps":
        return SolverReport("zps", zps(n, K))
    if name == "random":
        return SolverReport("random", PhaseConfig.random(n, K, rng))
    if name == "beam-training":
        return beam_training(collect_random_samples(session(), T, reading_fn=reading_fn))
    if name == "csm":
        s = session()
        if multi:
            return utility_csm(s, T)
        rep = csm(conditional_means(collect_random_samples(s, T)))
        return rep
    if name == "gcsm":
        kw = dict(groups=sc.groups, s1=sc.s1, initial=sc.initial)
        if multi:
            return utility_gcsm(session(), T1, T2, sc.split_ratio, **kw)
        return gcsm(session(), T1, T2, sc.split_ratio, **kw)
    if name == "alternating-csm":
        rounds = sc.alternating_rounds
        return alternating_csm(session(), alt_groups, rounds, max(T // max(rounds, 1), 1),
                               sc.initial, reading_fn)
    if name == "cpp":
        return SolverReport("cpp", cpp(truth, K))
    if name == "csm-oracle":
        return csm_oracle(truth, K, P, noise)
    if name == "gcsm-oracle":
        return gcsm_oracle(truth, K, P, noise, sc.split_ratio, rng, groups=sc.groups, s1=sc.s1,
                           initial=sc.initial)
    if name == "alternating-csm-oracle":
        return alternating_csm_oracle(truth, K, alt_groups, sc.alternating_rounds, sc.initial, P, noise)
    if name == "exhaustive":
        cfg, f_star = exhaustive(truth, K)
        return SolverReport("exhaustive", cfg, 0, {"f_star": f_star})
    raise ScenarioError(f"unknown algorithm {name!r}")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def evaluate(sc: Scenario, env: TrialEnvironment, trial: int, name: str, rep: SolverReport) -> dict:
    """Ground-truth figures of merit of a solver's configuration."""
    P = float(dbm_to_watts(sc.P_dBm))
    sig = float(dbm_to_watts(sc.noise_dBm)) + env.interference
    cfg = rep.config
    truth = env.truths[0]
    powers = np.array([expected_channel_power(t, cfg) for t in env.truths])
    min_snr = float(np.min(P * powers / sig))
    boost = snr_boost(truth, cfg) if truth.gamma_direct > 0 else float("nan")
    row = {
        "scenario": sc.name, "trial": trial, "algorithm": name, "N": sc.N, "K": sc.K,
        "T": sc.budget(), "groups": sc.groups, "users": sc.users, "queries": rep.queries_used,
        "config": "-".join(map(str, cfg.indices.tolist())),
        "expected_power": float(powers[0]),
        "random_power": truth.average_power(),
        "boost_db": boost,
        "min_snr_db": float(10 * np.log10(min_snr)) if min_snr > 0 else float("-inf"),
        "upper_rate": float(np.log2(1.0 + min_snr)),
        "mean_rate": float("nan"), "std_error": float("nan"),
        "cpp_agreement": float(np.mean(cfg.indices == cpp(truth, sc.K).indices)) if sc.N else 1.0,
    }
    if sc.rate_trials:
        rng = trial_stream(sc.master_seed, trial, ALGORITHM_IDS[name], 1)
        est = min_user_rate(env.truths, cfg, P, sig, sc.rate_trials, rng)
        row["mean_rate"], row["std_error"] = est.mean_rate, est.std_error
    return row


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("BLINDBEAM_THREADS", "0") or 0) or min(4, os.cpu_count() or 1)
    return max(1, int(threads))


def _run_trial(sc: Scenario, trial: int) -> list[dict]:
    env = build_trial(sc, trial)
    rows = []
    for name in sc.algorithms:
        rep = run_algorithm(sc, env, name, trial_stream(sc.master_seed, trial, ALGORITHM_IDS[name]))
        rows.append(evaluate(sc, env, trial, name, rep))
    return rows


def run_scenario(sc: Scenario, threads: int | None = None) -> list[dict]:
    """One row per (trial, algorithm), in trial order then algorithm order."""
    sc.validate()
    n = _threads(threads)
    if n == 1 or sc.trials == 1:
        per_trial = [_run_trial(sc, t) for t in range(sc.trials)]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            per_trial = list(pool.map(lambda t: _run_trial(sc, t), range(sc.trials)))
    return [row for rows in per_trial for row in rows]


def sweep(sc: Scenario, axis: str, values, threads: int | None = None) -> list[dict]:
    """Rerun the scenario for every value of one parameter with the same master seed."""
    if axis not in SWEEP_AXES:
        raise ScenarioError(f"cannot sweep over {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ScenarioError("sweep needs at least one value")
    rows = []
    for v in values:
        changes = {axis: v, "sweep_axis": None, "sweep_values": None}
        if axis == "T":
            changes.update(T_scale=None, T1=None, T2=None)
        if axis == "N" and sc.static_channels is not None:
            raise ScenarioError("explicit static channels fix N")
        rows += run_scenario(sc.replace(**changes), threads)
    return rows


def run(sc: Scenario, threads: int | None = None) -> list[dict]:
    """Run a scenario, expanding its sweep if one is declared."""
    if sc.sweep_axis is not None:
        return sweep(sc, sc.sweep_axis, sc.sweep_values, threads)
    return run_scenario(sc, threads)


def scaling_slopes(rows) -> dict:
    """Log-log slope of the median linear boost against N, per algorithm."""
    out = {}
    for alg in dict.fromkeys(r["algorithm"] for r in rows):
        by_n = {}
        for r in rows:
            if r["algorithm"] == alg and math.isfinite(r["boost_db"]):
                by_n.setdefault(r["N"], []).append(10 ** (r["boost_db"] / 10))
        ns = sorted(by_n)
        if len(ns) >= 3:
            out[alg] = fit_scaling(ns, [float(np.median(by_n[k])) for k in ns])
    return out


def write_csv(rows, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in ROW_FIELDS])


def read_csv(src) -> list[dict]:
    ints = {"trial", "N", "K", "T", "groups", "users", "queries"}
    strs = {"scenario", "algorithm", "config"}
    with open(src, newline="") as fh:
        return [{k: (v if k in strs else int(v) if k in ints else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


def write_outputs(sc: Scenario, rows, out_dir, elapsed_s: float | None = None,
                  threads: int | None = None) -> dict:
    """Write ``results.csv`` and ``manifest.json`` into ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "results.csv")
    from . import __version__
    manifest = {
        "scenario": sc.to_dict(),
        "master_seed": sc.master_seed,
        "rows": len(rows),
        "results": "results.csv",
        "versions": {"blindbeam": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "threads": _threads(threads),
        "timings": {"elapsed_s": elapsed_s},
    }
    slopes = scaling_slopes(rows) if sc.sweep_axis == "N" else {}
    if slopes:
        manifest["scaling_slopes"] = slopes
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest


def timed_run(sc: Scenario, threads: int | None = None):
    start = time.perf_counter()
    rows = run(sc, threads)
    return rows, time.perf_counter() - start
