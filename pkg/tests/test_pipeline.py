from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from usbench.data import SynthConfig, synth_generate
from usbench.errors import ConfigError, DegenerateInputError
from usbench.pipeline import (
    GUARD_SAMPLES,
    BandpassSpec,
    Modality,
    PreprocConfig,
    RFRecording,
    apply_tgc,
    bandpass,
    envelope,
    exponential_tgc,
    fir_bandpass_taps,
    log_compress,
    preprocess,
    preprocess_block,
)

FS = 20e6
FC = 5e6

finite_vectors = arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e3, 1e3, allow_nan=False))


def tone(n, f, fs, amp=1.0):
    return amp * np.sin(2 * np.pi * f * np.arange(n) / fs)


class TestTGC:
    def test_unit_gain_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 50))
        np.testing.assert_array_equal(apply_tgc(x, np.ones(50)), x)

    def test_elementwise(self):
        np.testing.assert_array_equal(apply_tgc([1.0, 1.0, 1.0], [1.0, 2.0, 4.0]), [1.0, 2.0, 4.0])

    def test_exponential_curve_against_reference(self):
        rng = np.random.Generator(np.random.Philox(4))
        x = rng.normal(size=(2, 200))
        expected = np.array([[v * np.exp(0.001 * i) for i, v in enumerate(row)] for row in x])
        np.testing.assert_allclose(apply_tgc(x, exponential_tgc(200, 0.001)), expected, rtol=1e-15)

    def test_length_mismatch_names_lengths(self):
        with pytest.raises(ConfigError, match="3.*5"):
            apply_tgc(np.ones(5), np.ones(3))

    def test_nonpositive_gain_rejected(self):
        with pytest.raises(ConfigError):
            apply_tgc(np.ones(3), [1.0, 0.0, 1.0])


class TestBandpass:
    def test_taps_match_scipy_firwin(self):
        ours = fir_bandpass_taps(0.5 * FC, 1.5 * FC, FS, 64)
        ref = signal.firwin(65, [0.5 * FC, 1.5 * FC], window="hamming", pass_zero=False, fs=FS)
        np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-14)

    def test_matches_centred_convolution(self):
        x = np.random.default_rng(1).normal(size=300)
        taps = signal.firwin(65, [2.5e6, 7.5e6], window="hamming", pass_zero=False, fs=FS)
        ref = np.convolve(x, taps, mode="same")
        np.testing.assert_allclose(bandpass(x, BandpassSpec.around(FC), FS), ref, atol=1e-12)

    def test_tone_amplitude_preserved(self):
        x = tone(1000, FC, FS)
        y = bandpass(x, BandpassSpec.around(FC), FS)
        edge = 32
        ratio = np.max(np.abs(y[edge:-edge])) / np.max(np.abs(x[edge:-edge]))
        assert abs(ratio - 1) < 0.05

    def test_dc_rejected(self):
        y = bandpass(np.full(1000, 2.0), BandpassSpec.around(FC), FS)
        assert np.max(np.abs(y[32:-32])) < 0.01 * 2.0

    def test_zero_in_zero_out(self):
        np.testing.assert_array_equal(bandpass(np.zeros(100), BandpassSpec.around(FC), FS), 0.0)

    def test_length_preserved(self):
        assert bandpass(np.ones((4, 77)), BandpassSpec.around(FC), FS).shape == (4, 77)

    @pytest.mark.parametrize("low,high", [(0.0, 5e6), (3e6, 2e6), (1e6, 10e6), (-1.0, 1e6)])
    def test_bad_cutoffs(self, low, high):
        with pytest.raises(ConfigError):
            bandpass(np.ones(100), BandpassSpec(low, high), FS)


class TestEnvelope:
    def test_tone_amplitude(self):
        x = tone(1000, FC, FS, amp=3.0)
        env = envelope(x)
        np.testing.assert_allclose(env[GUARD_SAMPLES:-GUARD_SAMPLES], 3.0, rtol=0.01)

    @pytest.mark.parametrize("n", [2, 3, 64, 101, 1000])
    def test_matches_scipy_hilbert(self, n):
        x = np.random.default_rng(n).normal(size=n)
        np.testing.assert_allclose(envelope(x), np.abs(signal.hilbert(x)), rtol=1e-12, atol=1e-12)

    def test_zero(self):
        np.testing.assert_array_equal(envelope(np.zeros(10)), 0.0)

    def test_short_input_rejected(self):
        with pytest.raises(ConfigError):
            envelope(np.ones(1))

    @settings(max_examples=200, deadline=None)
    @given(finite_vectors)
    def test_dominance(self, v):
        assert np.all(envelope(v) >= np.abs(v) - 1e-9 * (1 + np.abs(v)))

    @settings(max_examples=100, deadline=None)
    @given(finite_vectors, st.floats(1e-3, 1e3))
    def test_scale_equivariance(self, v, alpha):
        np.testing.assert_allclose(envelope(alpha * v), alpha * envelope(v), rtol=1e-9, atol=1e-9 * alpha)


class TestLogCompress:
    def test_constant(self):
        np.testing.assert_array_equal(log_compress([10.0, 10.0, 10.0]), [1.0, 1.0, 1.0])

    def test_minus_20_db(self):
        np.testing.assert_array_equal(log_compress([1.0, 10.0], 40.0), [0.5, 1.0])

    def test_zero_clamps_to_floor(self):
        out = log_compress([0.0, 1.0, 0.5], 60.0)
        assert out[0] == 0.0 and out[1] == 1.0

    def test_all_zero_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            log_compress(np.zeros(5))

    def test_bad_range(self):
        with pytest.raises(ConfigError):
            log_compress([1.0], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 20, elements=st.floats(0, 1)), arrays(np.float64, 20, elements=st.floats(0, 1)))
    def test_monotone(self, a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        lo[0] = hi[0] = 2.0  # shared maximum
        assert np.all(log_compress(lo) <= log_compress(hi))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 1e6)).filter(lambda e: e.max() > 0))
    def test_range(self, env):
        out = log_compress(env)
        assert out.min() >= 0 and out.max() == 1.0


def _recording(channels=8, frames=4, n=1000, seed=0):
    rng = np.random.Generator(np.random.Philox(seed))
    return RFRecording(rng.normal(size=(channels, frames, n)), FS, FC, labels=np.zeros(frames, dtype=int))


class TestPreprocess:
    @pytest.mark.parametrize("modality", list(Modality))
    def test_shape(self, modality):
        inputs = preprocess(_recording(), PreprocConfig(modality=modality))
        assert len(inputs) == 4
        assert all(x.data.shape == (8, 996) for x in inputs)
        assert inputs[2].provenance[2] == 2

    @pytest.mark.parametrize("trim", [0, 1, 5])
    def test_shape_law(self, trim):
        block = preprocess_block(_recording(channels=3, n=100), PreprocConfig(trim=trim))
        assert block.shape == (4, 3, 100 - 2 * trim)

    def test_amode_range_and_envelope_sign(self):
        rec = _recording()
        a = preprocess_block(rec, PreprocConfig(modality=Modality.AMODE_US))
        e = preprocess_block(rec, PreprocConfig(modality=Modality.ENVELOPE_RF))
        assert a.min() >= 0 and a.max() <= 1
        assert e.min() >= 0
        assert a.shape == e.shape

    def test_envelope_rf_is_trimmed_raw_envelope(self):
        rec = _recording(channels=2, frames=3, n=64)
        out = preprocess_block(rec, PreprocConfig(modality=Modality.ENVELOPE_RF))
        ref = np.abs(signal.hilbert(rec.samples, axis=-1))[..., 2:-2].transpose(1, 0, 2)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_amode_stage_order(self):
        rec = _recording(channels=2, frames=2, n=128)
        cfg = PreprocConfig(tgc_alpha=0.002)
        out = preprocess_block(rec, cfg)
        x = rec.samples * np.exp(0.002 * np.arange(128))
        taps = signal.firwin(65, [2.5e6, 7.5e6], window="hamming", pass_zero=False, fs=FS)
        x = np.apply_along_axis(lambda r: np.convolve(r, taps, mode="same"), -1, x)
        env = np.abs(signal.hilbert(x, axis=-1))
        db = np.maximum(20 * np.log10(env / env.max(axis=-1, keepdims=True)), -60)
        ref = (1 + db / 60)[..., 2:-2].transpose(1, 0, 2)
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_deterministic(self):
        rec = _recording()
        cfg = PreprocConfig()
        np.testing.assert_array_equal(preprocess_block(rec, cfg), preprocess_block(rec, cfg))

    def test_dead_channel_annotated(self):
        rec = _recording(channels=3, frames=2, n=64)
        rec.samples[1, 1] = 0.0
        with pytest.raises(DegenerateInputError, match="channel 1 frame 1"):
            preprocess_block(rec, PreprocConfig())

    def test_single_reflector_peak(self):
        depth = 400.0
        cfg = SynthConfig(channels=2, classes=2, frames_per_class=2, reflectors_per_channel=1, noise_std=0.0,
                          amplitude_jitter=0.0, rotation_shift_samples=0.0,
                          reflector_depths=np.array([[[depth], [depth]], [[300.0], [500.0]]]))
        rec = synth_generate(cfg)
        env = preprocess_block(rec, PreprocConfig(modality=Modality.ENVELOPE_RF))
        for row in env[0]:
            peaks, _ = signal.find_peaks(row, height=0.5 * row.max())
            assert len(peaks) == 1
            assert abs(peaks[0] + 2 - depth) <= 1

    def test_invalid_config_lists_problems(self):
        cfg = PreprocConfig(dynamic_range_db=-1, trim=-2, bandpass=BandpassSpec(1e6, 20e6))
        problems = cfg.problems(_recording())
        assert len(problems) == 3
        with pytest.raises(ConfigError):
            preprocess_block(_recording(), cfg)


class TestRecording:
    def test_nyquist(self):
        with pytest.raises(ConfigError, match="twice"):
            RFRecording(np.zeros((1, 1, 16)), 8e6, 5e6, labels=np.zeros(1, dtype=int))

    def test_too_short(self):
        with pytest.raises(ConfigError, match="< 8"):
            RFRecording(np.zeros((1, 1, 4)), FS, FC, labels=np.zeros(1, dtype=int))

    def test_label_count(self):
        with pytest.raises(ConfigError, match="2 labels for 3 frames"):
            RFRecording(np.zeros((1, 3, 16)), FS, FC, labels=np.zeros(2, dtype=int))
