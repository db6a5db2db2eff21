import numpy as np
import pytest

from oodgate import (
    ConfigError,
    SesConfig,
    channel_energy,
    default_top_k,
    frequency_weighting_ratio,
    laplacian_frequency_weights,
    laplacian_response,
    power_spectrum,
    ses_score,
    spectral_contrast_gain,
    top_k_channels,
)
from oodgate.ses import LAPLACIAN_4


def impulse_map(channel_means, h=8, w=8):
    """(C, h, w) tensor whose per-channel mean Laplacian response is prescribed.

    A centered impulse of amplitude a yields total absolute response 8a
    (|-4a| at the center plus |a| at the 4 neighbors), so the spatial mean
    is 8a / (h*w).
    """
    c = len(channel_means)
    t = np.zeros((c, h, w), dtype=np.float32)
    for i, mean in enumerate(channel_means):
        t[i, h // 2, w // 2] = mean * h * w / 8.0
    return t


class TestLaplacianResponse:
    def test_constant_annihilated(self):
        assert np.allclose(laplacian_response(np.full((3, 6, 6), 2.5, np.float32)), 0.0)

    def test_checkerboard_interior_response_is_eight(self):
        yy, xx = np.mgrid[0:8, 0:8]
        board = np.where((yy + xx) % 2 == 0, 1.0, -1.0).astype(np.float32)
        resp = laplacian_response(board[None])
        # interior site: center +-1 with four opposite-sign neighbors
        assert np.allclose(resp[0, 1:-1, 1:-1], 8.0, atol=1e-5)

    def test_linear_ramp_interior_zero(self):
        ramp = np.tile(np.arange(8, dtype=np.float32), (8, 1))
        resp = laplacian_response(ramp[None])
        assert np.allclose(resp[0, 1:-1, 1:-1], 0.0, atol=1e-5)

    def test_nonnegative(self, rng):
        resp = laplacian_response(rng.standard_normal((4, 9, 9)).astype(np.float32))
        assert resp.min() >= 0.0


class TestChannelEnergy:
    def test_zero_channel_hits_epsilon_floor(self):
        e = channel_energy(np.zeros((1, 4, 4), np.float32), epsilon=1e-6)
        assert e[0] == pytest.approx(np.log(1e-6), abs=1e-9)

    def test_unit_response_near_zero(self):
        e = channel_energy(np.ones((1, 4, 4), np.float32), epsilon=1e-6)
        assert e[0] == pytest.approx(0.0, abs=1e-5)

    def test_doubling_adds_log_two(self, rng):
        resp = (rng.random((3, 8, 8)) + 1.0).astype(np.float32)
        base = channel_energy(resp, epsilon=1e-6)
        doubled = channel_energy((2.0 * resp).astype(np.float32), epsilon=1e-6)
        assert np.allclose(doubled - base, np.log(2.0), atol=1e-5)


class TestSesScore:
    def test_top1_selects_max(self):
        t = impulse_map([np.e**-1, np.e**-5, np.e**-3])
        cfg = SesConfig(top_k=1)
        assert ses_score(t, cfg) == pytest.approx(-1.0, abs=1e-3)

    def test_top3_is_mean(self):
        t = impulse_map([np.e**-1, np.e**-5, np.e**-3])
        cfg = SesConfig(top_k=3)
        assert ses_score(t, cfg) == pytest.approx(-3.0, abs=1e-3)

    def test_full_k_equals_mean_channel_energy(self, rng):
        z1 = rng.random((6, 8, 8)).astype(np.float32)
        cfg = SesConfig(top_k=6)
        expected = channel_energy(laplacian_response(z1), cfg.epsilon).mean()
        assert ses_score(z1, cfg) == pytest.approx(float(expected), abs=1e-6)

    def test_tie_break_prefers_lower_index(self):
        energies = np.array([2.0, 5.0, 5.0, 1.0])
        assert top_k_channels(energies, 2).tolist() == [1, 2]
        energies = np.array([5.0, 5.0, 5.0])
        assert top_k_channels(energies, 2).tolist() == [0, 1]

    def test_top_k_exceeding_channels_rejected(self):
        with pytest.raises(ConfigError):
            ses_score(np.zeros((2, 8, 8), np.float32), SesConfig(top_k=3))

    def test_pinned_omega_overrides_selection(self):
        t = impulse_map([np.e**-1, np.e**-5, np.e**-3])
        cfg = SesConfig(top_k=1)
        assert ses_score(t, cfg, omega=[1]) == pytest.approx(-5.0, abs=1e-3)

    def test_default_top_k(self):
        assert default_top_k(16) == 2
        assert default_top_k(3) == 1

    def test_shift_covariance_periodic(self, rng):
        z1 = rng.random((4, 8, 8)).astype(np.float32)
        cfg = SesConfig(top_k=2)
        base = ses_score(z1, cfg, padding="periodic")
        rolled = np.roll(z1, shift=(3, 5), axis=(1, 2))
        assert ses_score(rolled, cfg, padding="periodic") == pytest.approx(base, abs=1e-5)

    def test_monotone_in_noise_amplitude(self, rng):
        base = np.tile(np.linspace(0, 1, 16, dtype=np.float32), (8, 16, 1))
        noise = rng.standard_normal(base.shape).astype(np.float32)
        cfg = SesConfig(top_k=2)
        scores = [
            ses_score((base + amp * noise).astype(np.float32), cfg)
            for amp in (0.1, 0.2, 0.4, 0.7, 1.0)
        ]
        assert all(a < b for a, b in zip(scores, scores[1:]))


class TestSpectralContrastGain:
    def test_identical_channels_give_one(self, rng):
        ch = rng.random((8, 8)).astype(np.float32)
        t = np.stack([ch] * 5)
        assert spectral_contrast_gain(t, SesConfig(top_k=1)) == pytest.approx(1.0, abs=1e-9)

    def test_hot_channel_example(self):
        # one channel with mean response 10 among three dead channels -> ~4.0
        t = impulse_map([10.0, 0.0, 0.0, 0.0])
        g = spectral_contrast_gain(t, SesConfig(top_k=1, epsilon=1e-6))
        assert g == pytest.approx(4.0, abs=1e-4)

    def test_permutation_invariant(self, rng):
        t = rng.random((5, 8, 8)).astype(np.float32)
        g = spectral_contrast_gain(t, SesConfig(top_k=1))
        perm = t[np.array([3, 0, 4, 1, 2])]
        assert spectral_contrast_gain(perm, SesConfig(top_k=1)) == pytest.approx(g, rel=1e-9)

    def test_at_least_one(self, rng):
        for _ in range(10):
            t = rng.random((4, 8, 8)).astype(np.float32)
            assert spectral_contrast_gain(t, SesConfig(top_k=1)) >= 1.0


def replicate_weight_sumsq(h, w, kernel):
    """Enumerate effective per-pixel weights of replicate-padding convolution.

    For i.i.d. inputs the expected mean-square response is the input variance
    times the mean over pixels of the summed squared effective weights
    (duplicated clamped taps merge onto one source pixel).
    """
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    total = 0.0
    for y in range(h):
        for x in range(w):
            weights = {}
            for dy in range(-ph, ph + 1):
                for dx in range(-pw, pw + 1):
                    src = (min(max(y - dy, 0), h - 1), min(max(x - dx, 0), w - 1))
                    weights[src] = weights.get(src, 0.0) + float(kernel[dy + ph, dx + pw])
            total += sum(v * v for v in weights.values())
    return total / (h * w)


class TestFrequencyIdentity:
    def test_exact_under_periodic_convolution(self, rng):
        for _ in range(10):
            ratio = frequency_weighting_ratio(rng.random((16, 16)).astype(np.float32))
            assert 0.999 <= ratio <= 1.001

    def test_dc_only_returns_one(self):
        assert frequency_weighting_ratio(np.full((8, 8), 3.0, np.float32)) == 1.0

    def test_weights_are_laplacian_eigenvalues(self):
        w = laplacian_frequency_weights(8, 8)
        assert w[0, 0] == pytest.approx(0.0)
        assert w[4, 4] == pytest.approx(8.0)  # Nyquist in both axes
        u, v = 3, 5
        expected = (2 - 2 * np.cos(2 * np.pi * u / 8)) + (2 - 2 * np.cos(2 * np.pi * v / 8))
        assert w[u, v] == pytest.approx(expected)

    def test_replicate_padding_proportionality_within_5pct(self, rng):
        # enumeration oracle: expected ratio of replicate to periodic
        # mean-square response for i.i.d. fields
        periodic_sumsq = float((LAPLACIAN_4.astype(np.float64) ** 2).sum())
        expected = replicate_weight_sumsq(16, 16, LAPLACIAN_4) / periodic_sumsq
        ratios = []
        for _ in range(40):
            x = rng.random((16, 16)).astype(np.float32)
            lap = laplacian_response(x[None], padding="replicate")[0].astype(np.float64)
            num = float((lap**2).mean())
            weights = laplacian_frequency_weights(16, 16)
            spectral = float(
                (weights**2 * power_spectrum(x).astype(np.float64)).sum() / (16 * 16) ** 2
            )
            ratios.append(num / spectral)
        assert np.mean(ratios) == pytest.approx(expected, rel=0.05)

    def test_white_noise_outweighs_lowpass(self, rng):
        white = rng.standard_normal((16, 16))
        smooth = np.cumsum(np.cumsum(white, axis=0), axis=1)  # strongly low-pass
        weights = laplacian_frequency_weights(16, 16)

        def weighted_energy(x):
            x = (x - x.mean()) / x.std()
            return float((weights * power_spectrum(x.astype(np.float32))).sum())

        assert weighted_energy(white) > weighted_energy(smooth)
