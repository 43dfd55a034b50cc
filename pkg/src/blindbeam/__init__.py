"""Blind discrete phase-shift selection for intelligent reflecting surfaces."""

__version__ = "0.1.0"

from .channel import (ChannelModelParams, ChannelRealization, Geometry, RicianFactors,
                      build_params, conditional_power_expectation, draw_realization,
                      expected_channel_power, los_phasor, pathloss)
from .measurement import (ConditionalMeanTable, MeasurementSession, SampleSet,
                          collect_random_samples, conditional_means)
from .phases import PhaseConfig
from .solvers import (SolverReport, alternating_csm, beam_training, cpp, csm, csm_oracle,
                      detect_los, exhaustive, gcsm, gcsm_oracle, split_groups, zps)

__all__ = [
    "ChannelModelParams", "ChannelRealization", "Geometry", "RicianFactors", "build_params",
    "conditional_power_expectation", "draw_realization", "expected_channel_power", "los_phasor",
    "pathloss", "ConditionalMeanTable", "MeasurementSession", "SampleSet",
    "collect_random_samples", "conditional_means", "PhaseConfig", "SolverReport",
    "alternating_csm", "beam_training", "cpp", "csm", "csm_oracle", "detect_los", "exhaustive",
    "gcsm", "gcsm_oracle", "split_groups", "zps",
]
