"""Shared builders for the test suite."""

import math
import warnings

import numpy as np
import pytest

from mecopt.model import ChannelSet, ModelAssumptionWarning, SystemParams, TaskSpec

# reference setup used throughout: two users, 25 MHz, -174 dBm/Hz noise,
# 1 W budget, 2 GHz CPU cap, eta 1e-32, 5 MB task at 200 cycles/bit
NOISE_W_PER_HZ = 10.0 ** (-20.4)
EPS2 = NOISE_W_PER_HZ * 25e6


@pytest.fixture(autouse=True)
def _quiet_antenna_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelAssumptionWarning)
        yield


def make_params(n_users=2, n_tx=2, n_rx=4, bandwidth_hz=25e6,
                noise_density_w_per_hz=NOISE_W_PER_HZ, p_max_w=1.0,
                f_max_hz=2e9, eta=1e-32):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelAssumptionWarning)
        return SystemParams(n_users=n_users, n_tx=n_tx, n_rx=n_rx,
                            bandwidth_hz=bandwidth_hz,
                            noise_density_w_per_hz=noise_density_w_per_hz,
                            p_max_w=p_max_w, f_max_hz=f_max_hz, eta=eta)


def make_task(data_bits=4e7, cycles_per_bit=200, deadline_s=0.5):
    return TaskSpec(data_bits=data_bits, cycles_per_bit=cycles_per_bit,
                    deadline_s=deadline_s)


def draw_channels(rng, n_users, n_rx, n_tx, variance):
    mats = tuple(
        (rng.standard_normal((n_rx, n_tx)) + 1j * rng.standard_normal((n_rx, n_tx)))
        * math.sqrt(variance / 2.0)
        for _ in range(n_users))
    return ChannelSet(channels=mats, decoding_order=tuple(range(n_users)))


def random_psd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (a @ a.conj().T) / n
