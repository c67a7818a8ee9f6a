from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsbath.evolve import TimeSeries
from tlsbath.model import TWO_PI
from tlsbath.signal import (
    HANN,
    NONE,
    PER_COLUMN_MAX,
    AliasingError,
    EmitterSet,
    Slice,
    TimeGrid,
    amp_phase,
    average_slices,
    build_map,
    demodulate,
    detect_peaks,
    phase_fft,
    pulse_response_weight,
    relative_phase,
    spectral_density,
    synth_emitters,
    synth_field,
    wrap_phase,
    zero_frequency_slice,
    zero_time_slice,
)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_wrap_phase_range(xs):
    w = wrap_phase(np.array(xs))
    assert np.all((w >= 0.0) & (w < TWO_PI))
    assert np.allclose(np.cos(w), np.cos(xs), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(3.5, 4.5), st.floats(-0.5, 0.5), st.floats(0.0, 6.0), st.floats(0.0, 0.01))
def test_demodulating_a_synthetic_field_matches_baseband_synthesis(f, det, lo_phase, decay):
    lo = f - det
    em = EmitterSet.from_arrays([0.7 - 0.2j], [f], [decay])
    field = synth_field(em, 0.0, 0.1, 400)
    z = demodulate(field, lo, lo_phase, lowpass_cutoff=0.0).z
    ref = synth_emitters(em, lo, lo_phase, 0.0, 0.1, 400).z
    assert np.allclose(z, ref, atol=1e-10)


def test_real_field_demodulates_like_complex_one():
    t = np.arange(4000) * 0.02
    f, lo = 4.05, 4.0
    real = TimeSeries(0.0, 0.02, np.cos(TWO_PI * f * t))
    cplx = TimeSeries(0.0, 0.02, np.exp(-1j * TWO_PI * f * t))
    a = demodulate(real, lo, 0.0, lowpass_cutoff=0.5).z
    b = demodulate(cplx, lo, 0.0, lowpass_cutoff=0.5).z
    mid = slice(500, 3500)
    assert np.allclose(a[mid], b[mid], atol=1e-2)


def test_aliasing_rejected():
    em = EmitterSet.from_arrays([1.0], [4.0])
    with pytest.raises(AliasingError):
        synth_emitters(em, 0.0, 0.0, 0.0, 0.25, 10)
    with pytest.raises(AliasingError):
        demodulate(TimeSeries(0.0, 0.25, np.ones(10)), 4.0)


def test_phase_fft_of_sawtooth_peaks_at_detuning():
    em = EmitterSet.from_arrays([1.0], [4.02])
    tr = synth_emitters(em, 4.0, 0.0, 0.0, 0.25, 1600)
    _, phase = amp_phase(tr)
    bins, mags = phase_fft(phase, HANN, 4)
    k = int(np.argmax(mags[1:])) + 1
    assert abs(bins[k] - 20.0) <= bins[1] - bins[0]


def test_constant_phase_has_empty_spectrum():
    _, mags = phase_fft(TimeSeries(0.0, 0.25, np.full(64, 1.3)))
    assert np.max(mags) < 1e-12
    with pytest.raises(ValueError):
        phase_fft(TimeSeries(0.0, 0.25, np.zeros(8)), window="box")


def test_relative_phase_masks_vanishing_reference():
    a = TimeSeries(0.0, 1.0, np.array([1j, 1.0, 1.0]))
    b = TimeSeries(0.0, 1.0, np.array([1.0, 0.0, 1.0]))
    phi, mask = relative_phase(a, b, return_mask=True)
    assert np.allclose(phi.samples, [np.pi / 2, 0.0, 0.0])
    assert mask.tolist() == [False, True, False]


def test_build_map_and_dc_slice():
    axis = np.arange(5.0)
    m = build_map([(1.0, (axis, np.array([2.0, 1, 0, 0, 0]))),
                   (2.0, (axis, np.array([4.0, 4, 0, 0, 0])))], PER_COLUMN_MAX)
    assert np.allclose(m.magnitudes.max(axis=1), 1.0)
    raw = build_map([(1.0, (axis, np.array([2.0, 1, 0, 0, 0])))], NONE)
    sl = zero_frequency_slice(raw, 1.0)
    assert np.allclose(sl.values, [1.5])
    with pytest.raises(ValueError):
        build_map([(1.0, (axis, np.zeros(5))), (2.0, (axis + 1, np.zeros(5)))])


def test_zero_time_slice_picks_first_post_pulse_sample():
    g = TimeGrid("x", [1.0, 2.0], np.arange(5.0), np.arange(10.0).reshape(2, 5))
    sl = zero_time_slice(g, [1.5, 3.0])
    assert sl.values.tolist() == [2.0, 8.0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=3, max_size=80), st.floats(0.01, 0.3))
def test_detected_peaks_respect_threshold_and_separation(vals, sep):
    axis = np.linspace(4.0, 5.0, len(vals))
    pk = detect_peaks(Slice("f", axis, vals), 1.0, sep)
    assert np.all(pk.magnitudes > 1.0)
    assert np.all(np.diff(pk.frequencies) >= sep - 1e-12)
    assert np.all(np.diff(pk.frequencies) > 0)


def test_spectral_density_counts_in_span():
    pk = detect_peaks(Slice("f", np.linspace(0, 1, 11), [0, 5, 0, 5, 0, 0, 0, 5, 0, 0, 0]), 1.0, 0.05,
                      span=(0.0, 0.5))
    assert len(pk) == 3
    assert spectral_density(pk) == 4.0


def test_average_slices_requires_same_axis():
    a = Slice("f", [1.0, 2.0], [1.0, 3.0])
    assert np.allclose(average_slices([a, a]).values, [1.0, 3.0])
    with pytest.raises(ValueError):
        average_slices([a, Slice("f", [1.0, 2.5], [0.0, 0.0])])


def test_pulse_response_weight_resonant_limit():
    w = pulse_response_weight(np.array([4.0, 4.0 + 1e-13]), 4.0, 100.0)
    assert np.allclose(np.abs(w), 100.0)
    off = pulse_response_weight(4.1, 4.0, 100.0)
    assert abs(off) < 100.0


def test_parseval_for_rect_window_without_padding():
    rng = np.random.default_rng(3)
    for n in (64, 65):
        x = rng.normal(size=n)
        _, mags = phase_fft(TimeSeries(0.0, 0.25, x), "rect", 1)
        x0 = x - x.mean()
        w = np.full(mags.size, 2.0)
        w[0] = 1.0
        if n % 2 == 0:
            w[-1] = 1.0
        assert abs(np.sum(w * mags**2) / n - np.sum(x0**2)) <= 1e-8 * np.sum(x0**2)


def test_amp_phase_quadrant_examples():
    from tlsbath.signal import QuadratureTrace

    tr = QuadratureTrace(0.0, 1.0, [1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0], 4.0)
    amp, ph = amp_phase(tr)
    assert np.allclose(amp.samples, 1.0)
    assert np.allclose(ph.samples, [0.0, np.pi / 2, np.pi, 3 * np.pi / 2])


@settings(max_examples=20, deadline=None)
@given(st.floats(3.5, 4.5), st.complex_numbers(min_magnitude=0.1, max_magnitude=5.0), st.floats(0.0, 6.0))
def test_resonant_emitter_has_constant_amplitude_and_phase(f, c, lo_phase):
    em = EmitterSet.from_arrays([c], [f])
    amp, ph = amp_phase(synth_emitters(em, f, lo_phase, 0.0, 0.25, 200))
    assert np.ptp(amp.samples) < 1e-12
    assert np.allclose(np.cos(ph.samples), np.cos(ph.samples[0]), atol=1e-12)
    assert np.allclose(np.sin(ph.samples), np.sin(ph.samples[0]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=3, max_size=60), st.floats(1e-3, 1e3))
def test_peak_detection_is_scale_covariant(vals, c):
    axis = np.linspace(4.0, 5.0, len(vals))
    a = detect_peaks(Slice("f", axis, vals), 1.0, 0.02)
    b = detect_peaks(Slice("f", axis, c * np.asarray(vals)), c * 1.0, 0.02)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.allclose(b.magnitudes, c * a.magnitudes)


def test_per_column_normalization_keeps_peak_locations():
    rng = np.random.default_rng(0)
    axis = np.arange(16.0)
    rows = [(float(k), (axis, rng.uniform(0.1, 5.0, 16))) for k in range(6)]
    raw = build_map(rows, NONE)
    norm = build_map(rows, PER_COLUMN_MAX)
    assert np.array_equal(raw.magnitudes.argmax(axis=1), norm.magnitudes.argmax(axis=1))


@pytest.mark.parametrize("weight", [1.0, 0.3j, -2.0 + 1.0j])
def test_v_apex_sits_at_emitter_frequency(weight):
    f0 = 4.05
    los = np.round(np.arange(3.95, 4.151, 0.01), 10)
    beat = []
    for lo in los:
        em = EmitterSet.from_arrays([weight], [f0])
        _, ph = amp_phase(synth_emitters(em, lo, 0.0, 0.0, 0.25, 1600))
        bins, mags = phase_fft(ph, HANN, 4)
        beat.append(bins[int(np.argmax(mags[1:])) + 1] if np.max(mags) > 1e-9 else 0.0)
    beat = np.array(beat)
    assert los[int(np.argmin(beat))] == pytest.approx(f0)
    # arms of the V are symmetric about the apex
    k = int(np.argmin(beat))
    m = min(k, los.size - 1 - k)
    assert np.allclose(beat[k - m:k][::-1], beat[k + 1:k + 1 + m], atol=bins[1] - bins[0])
