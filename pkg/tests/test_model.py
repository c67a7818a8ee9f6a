from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsbath.hilbert import SIGMA_X, SIGMA_Z
from tlsbath.model import (
    SQUARE_COSINE_RAMP,
    TWO_PI,
    DriveProtocol,
    EnsembleSpec,
    PulseSpec,
    TlsParams,
    drive_field,
    hamiltonian_at,
    polarization_operator,
    sample_random_ensemble,
    single_pulse,
    static_hamiltonian,
    two_pulse,
)


def test_static_hamiltonian_two_sites_by_hand():
    ens = EnsembleSpec.from_frequencies([3.0, 4.0], 0.05)
    eye = np.eye(2)
    expected = (0.5 * TWO_PI * 3.0 * np.kron(SIGMA_Z, eye) + 0.5 * TWO_PI * 4.0 * np.kron(eye, SIGMA_Z)
                + TWO_PI * 0.05 * np.kron(SIGMA_X, SIGMA_X))
    assert np.allclose(static_hamiltonian(ens).entries, expected)


def test_uncoupled_spectrum_is_sum_of_site_energies():
    ens = EnsembleSpec.from_frequencies([3.0, 4.0, 4.5], 0.0)
    ev = np.sort(np.linalg.eigvalsh(static_hamiltonian(ens).entries)) / TWO_PI
    signs = np.array([[a, b, c] for a in (1, -1) for b in (1, -1) for c in (1, -1)])
    expected = np.sort(0.5 * signs @ np.array([3.0, 4.0, 4.5]))
    assert np.allclose(ev, expected)


def test_tls_parametrization():
    q = TlsParams(0.3, 0.4)
    assert math.isclose(q.energy, 0.5)
    pol = polarization_operator(EnsembleSpec((q,), np.zeros((1, 1)))).entries
    assert np.allclose(pol, 0.6 * SIGMA_Z + 0.8 * SIGMA_X)
    assert np.allclose(polarization_operator(EnsembleSpec.from_frequencies([4.0])).entries, SIGMA_X)
    with pytest.raises(ValueError):
        TlsParams(0.0, 0.0)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        EnsembleSpec.from_frequencies([3.0, 4.0], [[0.0, 0.1], [0.2, 0.0]])
    with pytest.raises(ValueError):
        EnsembleSpec.from_frequencies([3.0, 4.0], [[0.1, 0.1], [0.1, 0.0]])
    with pytest.raises(ValueError):
        EnsembleSpec.from_frequencies([3.0], 0.0, gamma=-1.0)


def test_pulse_envelope_and_field():
    p = PulseSpec(0.1, 4.0, 100.0, 10.0, envelope=SQUARE_COSINE_RAMP, ramp_fraction=0.1)
    env = p.envelope_at(np.array([5.0, 10.0, 15.0, 60.0, 105.0, 110.0]))
    assert env[0] == 0.0 and env[-1] == 0.0
    assert env[1] == 0.0 and math.isclose(env[2], 0.5)
    assert env[3] == 1.0
    proto = single_pulse(4.0, 0.1, 100.0, 200.0)
    assert math.isclose(drive_field(proto, 0.0), TWO_PI * 0.1)
    assert drive_field(proto, 150.0) == 0.0


def test_phase_is_reduced_mod_two_pi():
    a = PulseSpec(0.1, 4.0, 10.0, carrier_phase=0.0)
    b = PulseSpec(0.1, 4.0, 10.0, carrier_phase=TWO_PI)
    assert a == b


def test_protocol_validation():
    p1 = PulseSpec(0.1, 4.0, 10.0, 0.0)
    p2 = PulseSpec(0.1, 4.0, 10.0, 5.0)
    with pytest.raises(ValueError):
        DriveProtocol((p1, p2), 50.0)
    with pytest.raises(ValueError):
        DriveProtocol((p1,), 5.0)
    tp = two_pulse(4.0, 0.1, 0.2, 50.0, 30.0, 100.0)
    assert tp.pulses[1].start == 80.0 and tp.t_end == 230.0


def test_hamiltonian_at_subtracts_drive():
    ens = EnsembleSpec.from_frequencies([4.0], 0.0)
    proto = single_pulse(4.0, 0.1, 100.0, 200.0)
    h = hamiltonian_at(ens, proto, 0.0).entries
    assert np.allclose(h, 0.5 * TWO_PI * 4.0 * SIGMA_Z - TWO_PI * 0.1 * SIGMA_X)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_random_ensemble_is_seeded_and_in_range(n, seed):
    a = sample_random_ensemble(n, (3.0, 5.0), (-0.05, 0.05), 0.002, seed)
    b = sample_random_ensemble(n, (3.0, 5.0), (-0.05, 0.05), 0.002, seed)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.coupling, b.coupling)
    assert np.all((a.frequencies >= 3.0) & (a.frequencies <= 5.0))
    assert np.all(np.abs(a.coupling) <= 0.05)
    assert np.array_equal(a.coupling, a.coupling.T)
