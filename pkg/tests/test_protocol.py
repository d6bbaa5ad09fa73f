from __future__ import annotations

import numpy as np
import pytest

from conftest import REFERENCE_PARAMS
from threebody.errors import SingularDesign
from threebody.protocol import ProtocolConfig, run_protocol


def test_noiseless_protocol_recovers_truth():
    rep = run_protocol(REFERENCE_PARAMS, ProtocolConfig.noiseless())
    assert np.abs(rep.deltas).max() < 1e-6
    assert all(f.error is None for f in rep.fits)


def test_protocol_is_seed_deterministic():
    a = run_protocol(REFERENCE_PARAMS, seed=5).to_dict()
    b = run_protocol(REFERENCE_PARAMS, seed=5).to_dict()
    assert a == b and a["seed"] == 5
    assert run_protocol(REFERENCE_PARAMS, seed=6).to_dict() != a


def test_protocol_pulls_are_reasonable():
    pulls = np.array([run_protocol(REFERENCE_PARAMS, seed=s).pulls for s in range(30)])
    assert np.all(np.abs(pulls).std(axis=0) < 2.0)
    assert np.mean(np.all(np.abs(pulls) < 3, axis=1)) >= 0.9


def test_failed_fits_are_recorded_and_block_estimation():
    # 0.5 MHz detuning over 600 ns is less than one fringe period: every fit fails
    with pytest.raises(SingularDesign):
        run_protocol(REFERENCE_PARAMS, ProtocolConfig(detuning_mhz=0.5))


def test_config_dict():
    cfg = ProtocolConfig.from_dict({"detuning_mhz": 20, "noise_sigma": 0.01})
    assert cfg.detuning_mhz == 20.0 and ProtocolConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(KeyError):
        ProtocolConfig.from_dict({"detune": 1})
