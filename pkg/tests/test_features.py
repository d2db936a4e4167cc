import numpy as np
import pytest

from affectline.audio_io import AudioClip
from affectline.errors import ConfigError
from affectline.features import (DEFAULT_T_FIXED, FEATURE_ROW_LABELS,
                                 FrameConfig, MfccConfig,
                                 assemble_features, compute_normalization,
                                 delta, frame_signal, mfcc, rms, zcr)
from conftest import sine


def clip_of(samples, rate=16000):
    return AudioClip(samples=np.asarray(samples, dtype=np.float64),
                     sample_rate_hz=rate, source_path="<test>")


# ---------------------------------------------------------------------------
# Independent oracle: direct O(n^2) DFT, hand-built filterbank and DCT sums.
# Written first; frozen reference for the production chain.
# ---------------------------------------------------------------------------

def oracle_mfcc(signal, sample_rate=16000, frame_len=400, hop=160, n_fft=512,
                n_mels=26, n_coeffs=13, fmin=0.0, fmax=None, log_floor=1e-10):
    if fmax is None:
        fmax = sample_rate / 2.0
    n = np.arange(frame_len)
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (frame_len - 1))

    def direct_power_spectrum(frame):
        padded = np.zeros(n_fft)
        padded[:frame_len] = frame * window
        k = np.arange(n_fft // 2 + 1)
        m = np.arange(n_fft)
        basis = np.exp(-2j * np.pi * np.outer(k, m) / n_fft)  # full DFT matrix
        spec = basis @ padded
        return spec.real ** 2 + spec.imag ** 2

    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    points = np.linspace(mel(fmin), mel(fmax), n_mels + 2)
    fbank = np.zeros((n_mels, n_fft // 2 + 1))
    for j in range(n_mels):
        for i, bm in enumerate(mel(bin_hz)):
            rising = (bm - points[j]) / (points[j + 1] - points[j])
            falling = (points[j + 2] - bm) / (points[j + 2] - points[j + 1])
            fbank[j, i] = max(0.0, min(rising, falling))

    def dct_ortho(vec):
        m = len(vec)
        out = np.zeros(n_coeffs)
        for k in range(n_coeffs):
            s = sum(vec[i] * np.cos(np.pi * (i + 0.5) * k / m) for i in range(m))
            out[k] = s * np.sqrt((1.0 if k == 0 else 2.0) / m)
        return out

    n_frames = (len(signal) - frame_len) // hop + 1
    coeffs = np.zeros((n_coeffs, n_frames))
    for t in range(n_frames):
        power = direct_power_spectrum(signal[t * hop:t * hop + frame_len])
        log_e = np.log(np.maximum(fbank @ power, log_floor))
        coeffs[:, t] = dct_ortho(log_e)
    return coeffs


class TestFraming:
    @pytest.mark.parametrize("n,expected", [(16000, 98), (300, 1), (400, 1), (560, 2)])
    def test_frame_counts(self, n, expected):
        frames = frame_signal(clip_of(np.zeros(n)))
        assert frames.shape == (expected, 400)

    def test_short_clip_zero_padded(self):
        frames = frame_signal(clip_of(np.ones(300)))
        assert frames.shape == (1, 400)
        assert np.all(frames[0, :300] == 1.0)
        assert np.all(frames[0, 300:] == 0.0)

    def test_no_window_applied(self):
        frames = frame_signal(clip_of(np.ones(400)))
        np.testing.assert_array_equal(frames[0], np.ones(400))


class TestMfcc:
    def test_silence_matches_constant_dct(self):
        frames = frame_signal(clip_of(np.zeros(16000)))
        coeffs = mfcc(frames, 16000)
        # every column identical; c0 is the DCT of a constant log-floor vector
        assert np.allclose(coeffs, coeffs[:, :1])
        assert coeffs[0, 0] == pytest.approx(np.sqrt(26) * np.log(1e-10), rel=1e-12)
        assert np.allclose(coeffs[1:, 0], 0.0, atol=1e-10)

    def test_matches_naive_dft_oracle_on_sine(self):
        x = sine(440, 0.12)
        coeffs = mfcc(frame_signal(clip_of(x)), 16000)
        expected = oracle_mfcc(x)
        scale = np.abs(expected).max()
        np.testing.assert_allclose(coeffs, expected, rtol=1e-6, atol=1e-6 * scale)

    def test_matches_oracle_on_randomized_signals(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(400, 1400))
            x = np.clip(rng.uniform(0.05, 0.8) * rng.standard_normal(n), -1, 1)
            coeffs = mfcc(frame_signal(clip_of(x)), 16000)
            expected = oracle_mfcc(x)
            scale = np.abs(expected).max()
            np.testing.assert_allclose(coeffs, expected, rtol=1e-6, atol=1e-6 * scale)

    def test_amplitude_scaling_shifts_only_c0(self):
        # doubling amplitude lifts every log mel energy by log(4): the DCT
        # maps that constant onto coefficient 0 alone
        rng = np.random.default_rng(3)
        x = np.clip(0.3 * rng.standard_normal(1200), -0.45, 0.45)
        base = mfcc(frame_signal(clip_of(x)), 16000)
        scaled = mfcc(frame_signal(clip_of(2 * x)), 16000)
        np.testing.assert_allclose(scaled[0] - base[0],
                                   np.sqrt(26) * np.log(4.0), rtol=1e-9)
        np.testing.assert_allclose(scaled[1:], base[1:], atol=1e-9)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MfccConfig(n_fft=500)
        with pytest.raises(ConfigError):
            MfccConfig(n_coeffs=30, n_mels=26)
        with pytest.raises(ConfigError):
            mfcc(np.zeros((1, 600)), 16000, MfccConfig(n_fft=512))


class TestDelta:
    def test_constant_rows_zero(self):
        np.testing.assert_array_equal(delta(np.full((3, 8), 2.5)), np.zeros((3, 8)))

    def test_ramp_slope_recovered_exactly(self):
        a = 1.7
        ramp = a * np.arange(12.0)[None, :]
        d = delta(ramp, 2)
        np.testing.assert_array_equal(d[0, 2:-2], np.full(8, a))

    def test_single_frame_zeros(self):
        np.testing.assert_array_equal(delta(np.ones((4, 1))), np.zeros((4, 1)))

    def test_linearity(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((5, 20))
        b = rng.standard_normal((5, 20))
        lhs = delta(2.0 * a + 3.0 * b)
        rhs = 2.0 * delta(a) + 3.0 * delta(b)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestZcrRms:
    def test_zcr_constant_positive(self):
        assert zcr(np.full((1, 400), 0.3))[0] == 0.0

    def test_zcr_alternating_is_one(self):
        frame = np.tile([1.0, -1.0], 200)[None, :]
        assert zcr(frame)[0] == 1.0

    def test_zcr_440hz_sine(self):
        frames = frame_signal(clip_of(sine(440, 1.0)))
        # analytic crossing count 2*440*0.025 = 22 over a 25 ms frame
        assert abs(zcr(frames)[0] - 22 / 399) <= (1 / 399) * (1 + 1e-9)

    def test_zeros_counted_positive(self):
        frame = np.array([[0.0, 1.0, 0.0, -1.0]])
        assert zcr(frame)[0] == pytest.approx(1 / 3)

    def test_rms_cases(self):
        assert rms(np.zeros((1, 400)))[0] == 0.0
        assert rms(np.full((1, 400), 0.5))[0] == pytest.approx(0.5)
        frames = frame_signal(clip_of(sine(440, 1.0)))  # 11 cycles per frame
        assert abs(rms(frames)[0] - 1 / np.sqrt(2)) < 1e-3


class TestAssemble:
    def test_three_second_clip_shape(self):
        fm = assemble_features(clip_of(np.random.default_rng(0).standard_normal(48000) * 0.1))
        assert fm.values.shape == (41, 300)
        assert fm.n_valid_frames == 298
        assert np.all(fm.values[:, 298:] == 0.0)

    def test_six_second_clip_truncated(self):
        fm = assemble_features(clip_of(np.random.default_rng(1).standard_normal(96000) * 0.1))
        assert fm.values.shape == (41, 300)
        assert fm.n_valid_frames == 300

    def test_silence_zcr_rms_rows_zero(self):
        fm = assemble_features(clip_of(np.zeros(16000)))
        assert np.all(fm.values[39] == 0.0)  # zcr row
        assert np.all(fm.values[40] == 0.0)  # rms row

    def test_row_label_layout(self):
        assert len(FEATURE_ROW_LABELS) == 41
        assert FEATURE_ROW_LABELS[0] == "mfcc_00"
        assert FEATURE_ROW_LABELS[13] == "delta_00"
        assert FEATURE_ROW_LABELS[26] == "delta2_00"
        assert FEATURE_ROW_LABELS[39:] == ("zcr", "rms")

    @pytest.mark.parametrize("n_samples", [150, 4000, 48000, 96000, 120000])
    def test_shape_fixed_for_any_length(self, n_samples):
        fm = assemble_features(clip_of(np.ones(n_samples) * 0.1))
        assert fm.values.shape == (41, DEFAULT_T_FIXED)

    def test_time_shift_by_one_hop_shifts_columns(self):
        rng = np.random.default_rng(5)
        x = 0.4 * rng.standard_normal(8000)
        full = assemble_features(clip_of(x))
        shifted = assemble_features(clip_of(x[160:]))
        t2 = shifted.n_valid_frames
        # interior columns: away from delta edge replication on both sides
        np.testing.assert_allclose(shifted.values[:, 4:t2 - 4],
                                   full.values[:, 5:t2 + 1 - 4], atol=1e-9)

    def test_normalization_applies_to_valid_columns_only(self):
        rng = np.random.default_rng(9)
        mats = [assemble_features(clip_of(0.3 * rng.standard_normal(16000)))
                for _ in range(4)]
        profile = compute_normalization(mats)
        fm = assemble_features(clip_of(0.3 * rng.standard_normal(16000)), profile=profile)
        assert fm.n_valid_frames == 98
        assert np.all(fm.values[:, 98:] == 0.0)
        assert not np.allclose(fm.values[:, :98].mean(), 10.0)  # sanity: standardized

    def test_profile_zero_std_rows_safe(self):
        mats = [assemble_features(clip_of(np.zeros(16000))) for _ in range(2)]
        profile = compute_normalization(mats)
        fm = assemble_features(clip_of(np.zeros(16000)), profile=profile)
        assert np.all(np.isfinite(fm.values))


def test_frame_config_validation():
    with pytest.raises(ConfigError):
        FrameConfig(frame_len_samples=100, hop_samples=200)
    with pytest.raises(ConfigError):
        FrameConfig(window="hann")
