"""Phase-shift selection algorithms.

Blind solvers (zero phases, beam training, CSM, grouped CSM, alternating CSM)
see only conditional-mean tables built from power readings. Known-CSI oracles
(closest point projection, exhaustive search) read channel statistics
directly and serve as references.

Grouped CSM and alternating CSM take their tables from a *table source*:
:class:`SampledTables` probes a measurement session, :class:`ExactTables`
returns closed-form conditional expectations (the infinite-sample limit).
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .channel import (ChannelModelParams, conditional_power_table, expected_channel_power,
                      virtual_direct)
from .measurement import (ConditionalMeanTable, MeasurementSession, SampleSet,
                          collect_random_samples, conditional_means, make_rng)
from .phases import PhaseConfig, as_config, grid_angles, wrap_angle

logger = logging.getLogger(__name__)

EXHAUSTIVE_BUDGET = 1 << 24


@dataclass
class SolverReport:
    algorithm: str
    config: PhaseConfig
    queries_used: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "K": self.config.K,
            "config": self.config.indices.tolist(),
            "queries_used": self.queries_used,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, PhaseConfig):
        return obj.indices.tolist()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------- table sources

class SampledTables:
    """Estimate each requested table from fresh random probes of a session."""

    def __init__(self, session: MeasurementSession, reading_fn=None, rng=None):
        self.session = session
        self.reading_fn = reading_fn
        self.rng = rng
        self.queries = 0

    @property
    def K(self) -> int:
        return self.session.K

    @property
    def n_elements(self) -> int:
        return self.session.n_elements

    def __call__(self, free_set, base: PhaseConfig, T: int) -> ConditionalMeanTable:
        samples = collect_random_samples(self.session, T, free_set, base, self.reading_fn, self.rng)
        self.queries += T
        return conditional_means(samples)


class ExactTables:
    """Closed-form conditional expectations; the T -> infinity limit of CSM."""

    def __init__(self, params: ChannelModelParams, K: int, transmit_power: float = 1.0,
                 noise_power: float = 0.0):
        self.params = params
        self.K = int(K)
        self.transmit_power = transmit_power
        self.noise_power = noise_power
        self.queries = 0

    @property
    def n_elements(self) -> int:
        return self.params.n_elements

    def __call__(self, free_set, base: PhaseConfig, T: int = 0) -> ConditionalMeanTable:
        free = sorted(int(i) for i in free_set)
        means = conditional_power_table(self.params, self.K, self.transmit_power,
                                        self.noise_power, free, base)
        return ConditionalMeanTable.from_exact(free, means, base)


# ---------------------------------------------------------------- simple baselines

def zps(N: int, K: int) -> PhaseConfig:
    """All phase shifts zero."""
    if N < 0:
        raise ValueError("N must be >= 0")
    return PhaseConfig.zeros(N, K)


def beam_training(samples: SampleSet) -> SolverReport:
    """Keep the probed configuration with the highest reading (first one on ties)."""
    if samples.T == 0:
        raise ValueError("beam training needs at least one sample")
    t = int(np.argmax(samples.readings))
    return SolverReport("beam-training", samples.config(t), samples.T,
                        {"best_t": t, "best_reading": float(samples.readings[t])})


# ---------------------------------------------------------------- known-CSI oracles

def cpp(params: ChannelModelParams, K: int) -> PhaseConfig:
    """Closest point projection: rotate each reflected LoS phasor nearest to the direct one.

    Ties at an angular distance of exactly omega/2 go to the smaller index.
    """
    dist = np.abs(wrap_angle(grid_angles(K)[None, :] - params.phase_offsets[:, None]))
    return PhaseConfig(np.argmin(dist, axis=1), K)


def exhaustive(params: ChannelModelParams, K: int, budget: int = EXHAUSTIVE_BUDGET):
    """Global maximum of the expected channel power over all K**N configurations.

    Returns:
        (maximizer, f_star). Among equal maxima the lexicographically smallest
        configuration wins.
    """
    n = params.n_elements
    if K ** n > budget:
        raise ValueError(f"K**N = {K}**{n} exceeds the exhaustive-search budget {budget}")
    rot = np.exp(1j * grid_angles(K))
    mr = params.mean_reflected
    n_low = min(n, int(math.log(1 << 16) // math.log(K)))
    n_high = n - n_low
    low_idx = np.indices((K,) * n_low).reshape(n_low, -1).T
    low_sum = rot[low_idx] @ mr[n_high:] if n_low else np.zeros(1, dtype=complex)

    best_val, best_cfg = -np.inf, None
    for high in itertools.product(range(K), repeat=n_high):
        s = params.mean_direct + (rot[list(high)] @ mr[:n_high] if n_high else 0.0)
        vals = np.abs(s + low_sum) ** 2
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_cfg = np.concatenate([np.array(high, dtype=np.int64), low_idx[j]]) if n_low \
                else np.array(high, dtype=np.int64)
    cfg = PhaseConfig(best_cfg, K)
    return cfg, best_val + params.total_variance()


# ---------------------------------------------------------------- CSM family

def _masked_means(table: ConditionalMeanTable) -> np.ndarray:
    m = table.means
    return np.where(np.isnan(m), -np.inf, m)


def csm(table: ConditionalMeanTable) -> SolverReport:
    """Pick, for every free element, the phase with the largest conditional mean.

    Fixed elements keep their base assignment. Ties go to the smallest phase
    index and are listed in the diagnostics.
    """
    m = _masked_means(table)
    free = list(table.free_set)
    if free:
        choice = np.argmax(m, axis=1)
        tied = (m == m.max(axis=1, keepdims=True)).sum(axis=1) > 1
        spread = np.where(table.undefined.all(axis=1), 0.0, table.spread())
    else:
        choice = np.zeros(0, dtype=np.int64)
        tied = np.zeros(0, dtype=bool)
        spread = np.zeros(0)
    ties = [free[i] for i in np.flatnonzero(tied)]
    if ties:
        logger.debug("csm: ties broken toward index 0 on elements %s", ties)
    config = table.base.with_values(free, choice) if free else table.base
    diagnostics = {
        "spread": spread.tolist(),
        "ties": ties,
        "degenerate": bool(free) and bool(np.all(spread == 0)),
        "undefined_cells": int(table.undefined.sum()),
    }
    return SolverReport("csm", config, table.T, diagnostics)


def csm_oracle(params: ChannelModelParams, K: int, transmit_power: float = 1.0,
               noise_power: float = 0.0) -> SolverReport:
    """CSM driven by exact conditional expectations."""
    source = ExactTables(params, K, transmit_power, noise_power)
    rep = csm(source(range(params.n_elements), PhaseConfig.zeros(params.n_elements, K)))
    rep.algorithm = "csm-oracle"
    rep.queries_used = 0
    return rep


def split_groups(table: ConditionalMeanTable, phi, K: int, rng=None):
    """Split the free elements of a stage-1 table by the side they sit on.

    Element n joins the second group when the conditional mean one step below
    its chosen phase is at least the mean one step above (ties included);
    otherwise it joins the third group. For K = 2 both neighbours coincide,
    so membership is drawn uniformly at random from ``rng``.

    Returns:
        (second_group, third_group) as sorted tuples of element indices.
    """
    phi_idx = phi.indices if isinstance(phi, PhaseConfig) else np.asarray(phi, dtype=np.int64)
    free = list(table.free_set)
    if K == 2:
        if rng is None:
            raise ValueError("K = 2 makes the split rule degenerate; pass rng for the random split")
        logger.info("split_groups: K = 2, assigning %d elements at random", len(free))
        coin = make_rng(rng).random(len(free)) < 0.5
        s2 = tuple(n for n, c in zip(free, coin) if c)
        s3 = tuple(n for n, c in zip(free, coin) if not c)
        return s2, s3
    m = _masked_means(table)
    s2, s3 = [], []
    for i, n in enumerate(free):
        k = int(phi_idx[n])
        below, above = m[i, (k - 1) % K], m[i, (k + 1) % K]
        (s2 if below >= above else s3).append(n)
    return tuple(s2), tuple(s3)


def _check_source_budget(T: int, name: str):
    if T < 1:
        raise ValueError(f"{name} must be >= 1")


def _run_gcsm(source, K: int, T1: int, T2: int, split_ratio: float, rng, groups: int,
              s1, initial: PhaseConfig | None) -> SolverReport:
    n = source.n_elements
    initial = PhaseConfig.zeros(n, K) if initial is None else as_config(initial, K)
    if n < 2:
        logger.warning("gcsm: N = %d is too small to group; running plain CSM", n)
        rep = csm(source(range(n), initial, T1 + T2))
        rep.algorithm = "gcsm"
        rep.diagnostics["fallback"] = True
        rep.queries_used = source.queries
        return rep

    if s1 is None:
        size = min(max(math.ceil(n * split_ratio), 1), n - 1)
        s1 = np.sort(rng.choice(n, size=size, replace=False))
    s1 = tuple(sorted(int(i) for i in s1))
    if not s1 or len(s1) >= n:
        raise ValueError("the first group must be a non-empty proper subset")
    s1c = tuple(i for i in range(n) if i not in set(s1))

    table1 = source(s1c, initial, T1)
    stage1 = csm(table1).config
    s2, s3 = split_groups(table1, stage1, K, rng)

    blocks = [s1] if groups == 3 else [
        tuple(sorted(int(i) for i in b)) for b in np.array_split(rng.permutation(s1), groups - 2)]
    budgets = [T2 // len(blocks) + (1 if i < T2 % len(blocks) else 0) for i in range(len(blocks))]
    config = stage1
    ties = []
    for block, t in zip(blocks, budgets):
        rep = csm(source(sorted(set(block) | set(s3)), config, t))
        ties += rep.diagnostics["ties"]
        config = rep.config

    diagnostics = {
        "groups": groups,
        "s1": list(s1), "s2": list(s2), "s3": list(s3),
        "stage1_config": stage1,
        "stage2_ties": ties,
        "fallback": False,
    }
    return SolverReport("gcsm", config, source.queries, diagnostics)


def gcsm(session: MeasurementSession, T1: int, T2: int, split_ratio: float = 0.5, rng=None, *,
         groups: int = 3, reading_fn=None, s1=None, initial=None) -> SolverReport:
    """Grouped conditional sample mean with T1 + T2 probes.

    Stage 1 holds a random first group at ``initial`` (zeros by default) and
    runs CSM on the rest; those elements are then split into a second and a
    third group. Stage 2 holds the second group and runs CSM on the first and
    third groups together.

    ``groups > 3`` is an experimental generalization: the first group is cut
    into ``groups - 2`` random blocks optimized one after another (together
    with the third group), each with an equal share of T2.
    """
    _check_source_budget(T1, "T1")
    _check_source_budget(T2, "T2")
    if not 0 < split_ratio < 1:
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    if groups < 3:
        raise ValueError("grouped CSM needs at least 3 groups")
    if T2 < groups - 2:
        raise ValueError("T2 is too small for the requested number of groups")
    gen = session.rng if rng is None else make_rng(rng)
    source = SampledTables(session, reading_fn)
    return _run_gcsm(source, session.K, T1, T2, split_ratio, gen, groups, s1, initial)


def gcsm_oracle(params: ChannelModelParams, K: int, transmit_power: float = 1.0,
                noise_power: float = 0.0, split_ratio: float = 0.5, rng=None, *,
                groups: int = 3, s1=None, initial=None) -> SolverReport:
    """Grouped CSM with exact conditional expectations in both stages.

    Diagnostics additionally hold the stage virtual direct phasors, which only
    a known-CSI run can report.
    """
    if not 0 < split_ratio < 1:
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    source = ExactTables(params, K, transmit_power, noise_power)
    rep = _run_gcsm(source, K, 1, max(groups - 2, 1), split_ratio, make_rng(rng), groups, s1,
                    initial)
    rep.algorithm = "gcsm-oracle"
    if not rep.diagnostics.get("fallback"):
        init = PhaseConfig.zeros(params.n_elements, K) if initial is None else as_config(initial, K)
        rep.diagnostics["virtual_stage1"] = virtual_direct(params, init, rep.diagnostics["s1"])
        rep.diagnostics["virtual_stage2"] = virtual_direct(
            params, rep.diagnostics["stage1_config"], rep.diagnostics["s2"])
    return rep


def _run_alternating(source, K: int, groups, rounds: int, T: int, initial, evaluate) -> SolverReport:
    n = source.n_elements
    a, b = (tuple(sorted(int(i) for i in g)) for g in groups)
    if set(a) & set(b) or set(a) | set(b) != set(range(n)):
        raise ValueError("groups must partition the elements")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    config = PhaseConfig.zeros(n, K) if initial is None else as_config(initial, K)
    trajectory = [evaluate(config)]
    for r in range(rounds):
        # round 1 holds the first group and optimizes the second
        target = b if r % 2 == 0 else a
        if target:
            config = csm(source(target, config, T)).config
        trajectory.append(evaluate(config))
    steps = np.diff(trajectory)
    diagnostics = {
        "trajectory": trajectory,
        "monotone": bool(np.all(steps >= -1e-12 * max(abs(x) for x in trajectory))) if rounds else True,
    }
    return SolverReport("alternating-csm", config, source.queries, diagnostics)


def alternating_csm(session: MeasurementSession, groups, rounds: int, T_per_round: int,
                    initial=None, reading_fn=None) -> SolverReport:
    """CSM on two groups in turn, each round holding the other group fixed.

    The trajectory of ground-truth expected powers is recorded for analysis.
    """
    if rounds and T_per_round < 1:
        raise ValueError("T_per_round must be >= 1")
    source = SampledTables(session, reading_fn)
    return _run_alternating(source, session.K, groups, rounds, T_per_round, initial,
                            session.objective)


def alternating_csm_oracle(params: ChannelModelParams, K: int, groups, rounds: int,
                           initial=None, transmit_power: float = 1.0,
                           noise_power: float = 0.0) -> SolverReport:
    source = ExactTables(params, K, transmit_power, noise_power)
    rep = _run_alternating(source, K, groups, rounds, 0, initial,
                           lambda c: expected_channel_power(params, c))
    rep.algorithm = "alternating-csm-oracle"
    return rep


# ---------------------------------------------------------------- LoS / NLoS diagnostic

class LosVerdict(NamedTuple):
    status: str
    statistic: float


def detect_los(table: ConditionalMeanTable, threshold: float = 3.0,
               min_samples: int | None = None) -> LosVerdict:
    """Classify the direct path from how much the conditional means differ.

    The statistic is the median over elements of the row range divided by the
    standard error of one cell mean; flat rows mean NLoS.
    """
    if table.is_exact:
        raise ValueError("detection needs a sample-based table")
    K = table.K
    need = 64 * K if min_samples is None else min_samples
    if table.T < need:
        raise ValueError(f"detection needs at least {need} samples, got {table.T}")
    spread = table.spread()
    se = table.pooled_std() * math.sqrt(K / table.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(se > 0, spread / np.where(se > 0, se, 1.0), np.where(spread > 0, np.inf, 0.0))
    stat = float(np.median(z)) if z.size else 0.0
    return LosVerdict("NLoS" if stat < threshold else "LoS", stat)
