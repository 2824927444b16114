import numpy as np
import pytest

from driftbeam.stft import SpectralFrameTensor, StftConfig, analyze, synthesize


def residual_db(reference, reconstructed, guard):
    ref = reference[guard:-guard]
    err = reconstructed[guard:len(reference) - guard] - ref
    return 10.0 * np.log10(np.sum(err ** 2) / np.sum(ref ** 2))


def speech_like(samples, rate, seed=0):
    """Harmonic tone with vibrato and an amplitude envelope, vaguely vowel-ish."""
    rng = np.random.default_rng(seed)
    t = np.arange(samples) / rate
    pitch = 140.0 + 20.0 * np.sin(2.0 * np.pi * 0.7 * t)
    phase = 2.0 * np.pi * np.cumsum(pitch) / rate
    tone = sum(np.sin(k * phase) / k for k in range(1, 9))
    envelope = 0.4 + 0.6 * np.abs(np.sin(2.0 * np.pi * 1.3 * t))
    return envelope * tone + 0.01 * rng.standard_normal(samples)


class TestConfig:
    def test_default_is_valid(self):
        cfg = StftConfig()
        assert cfg.bin_count == 513

    @pytest.mark.parametrize("window,fft_size,hop", [
        ("sqrt_hann", 1024, 512),
        ("sqrt_hann", 512, 256),
        ("hann", 1024, 512),
        ("rect", 1024, 1024),
    ])
    def test_supported_pairs_satisfy_overlap_add(self, window, fft_size, hop):
        cfg = StftConfig(fft_size=fft_size, hop=hop, window=window)
        assert np.abs(cfg.overlap_add_weight() - 1.0).max() < 1e-10

    def test_non_reconstructing_pair_rejected(self):
        with pytest.raises(ValueError, match="overlap-add"):
            StftConfig(fft_size=1024, hop=512, window="rect")

    def test_unknown_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            StftConfig(window="blackman")


class TestAnalyze:
    def test_zero_input_gives_zero_tensor(self):
        cfg = StftConfig()
        tensor = analyze(np.zeros(8192), cfg)
        assert not tensor.frames.any()

    def test_frame_count(self):
        cfg = StftConfig(fft_size=512, hop=256)
        tensor = analyze(np.zeros(5000), cfg)
        assert tensor.frame_count == (5000 - 512) // 256 + 1

    def test_short_signal_rejected(self):
        with pytest.raises(ValueError, match="shorter"):
            analyze(np.zeros(100), StftConfig())

    def test_impulse_rect_window_flat_magnitude(self):
        cfg = StftConfig(fft_size=256, hop=256, window="rect")
        x = np.zeros(1024)
        x[128] = 1.0
        tensor = analyze(x, cfg)
        mags = np.abs(tensor.frames[0, :, 0])
        np.testing.assert_allclose(mags, 1.0, atol=1e-12)

    def test_sinusoid_rect_window_single_bin(self):
        cfg = StftConfig(fft_size=256, hop=256, window="rect")
        k0 = 32
        n = np.arange(2048)
        x = np.cos(2.0 * np.pi * k0 * n / 256)
        tensor = analyze(x, cfg)
        mags = np.abs(tensor.frames[:, :, 0])
        np.testing.assert_allclose(mags[:, k0], 128.0, atol=1e-9)
        others = np.delete(mags, k0, axis=1)
        assert others.max() < 1e-9

    def test_sinusoid_hann_window_three_bins(self):
        # Periodic Hann spreads an exact-bin cosine over k0 and k0 +- 1 with
        # magnitudes L/4 and L/8.
        cfg = StftConfig(fft_size=256, hop=128, window="hann")
        k0 = 40
        n = np.arange(2048)
        x = np.cos(2.0 * np.pi * k0 * n / 256)
        tensor = analyze(x, cfg)
        mags = np.abs(tensor.frames[0, :, 0])
        assert mags[k0] == pytest.approx(64.0, abs=1e-9)
        assert mags[k0 - 1] == pytest.approx(32.0, abs=1e-9)
        assert mags[k0 + 1] == pytest.approx(32.0, abs=1e-9)
        rest = np.delete(mags, [k0 - 1, k0, k0 + 1])
        assert rest.max() < 1e-9

    def test_linearity(self):
        cfg = StftConfig()
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((2, 8192))
        lhs = analyze(0.7 * x - 1.3 * y, cfg).frames
        rhs = 0.7 * analyze(x, cfg).frames - 1.3 * analyze(y, cfg).frames
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_energy_matches_window_weighted_signal_energy(self):
        # Per-frame Parseval plus the overlap-add of the squared analysis
        # window ties the tensor energy to the weighted signal energy.
        cfg = StftConfig()
        rng = np.random.default_rng(2)
        x = rng.standard_normal(16000)
        tensor = analyze(x, cfg)
        sided = np.full(cfg.bin_count, 2.0)
        sided[0] = sided[-1] = 1.0
        tensor_energy = np.sum(sided[None, :, None] * np.abs(tensor.frames) ** 2) / cfg.fft_size
        weight = np.zeros(len(x))
        for t in range(tensor.frame_count):
            start = t * cfg.hop
            weight[start:start + cfg.fft_size] += cfg.analysis_window ** 2
        assert tensor_energy == pytest.approx(np.sum(weight * x ** 2), rel=1e-6)


class TestRoundTrip:
    @pytest.mark.parametrize("window,fft_size,hop", [
        ("sqrt_hann", 1024, 512),
        ("sqrt_hann", 512, 256),
        ("hann", 1024, 512),
        ("rect", 1024, 1024),
    ])
    def test_white_noise_reconstruction(self, window, fft_size, hop):
        cfg = StftConfig(fft_size=fft_size, hop=hop, window=window)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((160000, 2))
        y = synthesize(analyze(x, cfg), cfg)
        for ch in range(2):
            assert residual_db(x[:, ch], y[:, ch], fft_size) < -100.0

    def test_speech_like_reconstruction(self):
        cfg = StftConfig()
        x = speech_like(160000, 16000)
        y = synthesize(analyze(x, cfg), cfg)[:, 0]
        assert residual_db(x, y, cfg.fft_size) < -100.0

    def test_interior_relative_error_tight(self):
        cfg = StftConfig()
        rng = np.random.default_rng(4)
        x = rng.standard_normal(32768)
        y = synthesize(analyze(x, cfg), cfg)[:, 0]
        guard = cfg.fft_size
        err = np.abs(y[guard:len(x) - guard] - x[guard:-guard]).max()
        assert err < 1e-10 * np.abs(x).max()

    def test_zeroed_bins_give_silence(self):
        cfg = StftConfig()
        rng = np.random.default_rng(5)
        tensor = analyze(rng.standard_normal(8192), cfg)
        silent = SpectralFrameTensor(np.zeros_like(tensor.frames), tensor.sample_rate,
                                     tensor.fft_size, tensor.hop)
        assert not synthesize(silent, cfg).any()

    def test_config_mismatch_rejected(self):
        tensor = analyze(np.zeros(8192), StftConfig())
        with pytest.raises(ValueError, match="fft_size"):
            synthesize(tensor, StftConfig(fft_size=512, hop=256))


class TestTensor:
    def test_bin_grid(self):
        tensor = analyze(np.zeros(4096), StftConfig(), sample_rate=16000)
        assert tensor.bin_hz[0] == 0.0
        assert tensor.bin_hz[-1] == pytest.approx(8000.0)
        np.testing.assert_allclose(tensor.bin_omega, 2.0 * np.pi * tensor.bin_hz)

    def test_bin_count_must_match_fft_size(self):
        with pytest.raises(ValueError, match="bin count"):
            SpectralFrameTensor(np.zeros((4, 100, 2), complex), 16000, 1024, 512)
