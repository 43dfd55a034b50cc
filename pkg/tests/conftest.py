import numpy as np
import pytest

from blindbeam.channel import ChannelModelParams
from blindbeam.measurement import SampleSet

FIG2_H = np.array([1.7646 + 2.1012j, 0.2792 - 1.6644j, 0.7178 + 3.1842j, 0.6117 - 2.2282j]) * 1e-5

TOY_CONFIGS = [[0, 1, 0, 0], [0, 0, 0, 0], [1, 1, 1, 0], [1, 0, 1, 1], [1, 1, 0, 1], [0, 0, 1, 1]]
TOY_READINGS = [2.8, 1.0, 1.5, 3.3, 0.3, 0.4]


def random_params(rng, n, direct_rician=10.0, gamma_scale=1e-3):
    """Fading params with random attenuations, Rician factors and LoS phases."""
    def phasor(size=None):
        return np.exp(1j * rng.uniform(-np.pi, np.pi, size))

    return ChannelModelParams(
        gamma_direct=gamma_scale * rng.uniform(0.1, 1.0),
        gamma_tx_re=np.sqrt(gamma_scale) * rng.uniform(0.1, 1.0, n),
        gamma_re_rx=np.sqrt(gamma_scale) * rng.uniform(0.1, 1.0, n),
        rician_direct=direct_rician,
        rician_tx_re=rng.uniform(0.5, 20.0, n),
        rician_re_rx=rng.uniform(0.5, 20.0, n),
        los_direct=complex(phasor()),
        los_tx_re=phasor(n),
        los_re_rx=phasor(n),
    )


def complex_gaussian(rng, n, scale=1.0):
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


@pytest.fixture
def fig2_params():
    return ChannelModelParams.from_static(0.0, FIG2_H)


@pytest.fixture
def toy_samples():
    return SampleSet.from_records(TOY_CONFIGS, TOY_READINGS, 2)
