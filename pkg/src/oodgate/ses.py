"""Structural energy sieve: a shallow, training-free gate that scores
high-frequency structural energy in a feature map.

The score is the mean of the top-K per-channel log energies of the
absolute Laplacian response. Natural inputs concentrate spectral power at
low frequencies, so their response is moderate; noise-like inputs push it
up and flat inputs collapse it, which is what makes a two-sided interval
over this score an effective first gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SizeError
from .tensor import as_tensor, depthwise_conv2d, power_spectrum

# 4-neighbor Laplacian; its periodic-boundary eigenvalues are the discrete
# frequency weights used by frequency_weighting_ratio.
LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]], dtype=np.float32)

DEFAULT_EPSILON = 1e-6


def default_top_k(channels: int) -> int:
    """Default channel budget: 10% of the channels, at least one."""
    return max(1, math.ceil(0.1 * channels))


@dataclass(frozen=True)
class SesConfig:
    """Knobs of the sieve: channel budget ``top_k`` and log stabilizer ``epsilon``."""

    top_k: int
    epsilon: float = DEFAULT_EPSILON
    kernel: np.ndarray = field(default_factory=lambda: LAPLACIAN_4, repr=False)

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def for_channels(cls, channels: int, **kwargs) -> "SesConfig":
        return cls(top_k=default_top_k(channels), **kwargs)


def laplacian_response(z1, kernel=None, padding: str = "replicate") -> np.ndarray:
    """Element-wise absolute value of the depth-wise Laplacian convolution.

    Nonnegative by construction; constant and linear-ramp channels map to
    zero in the interior.
    """
    k = LAPLACIAN_4 if kernel is None else kernel
    return np.abs(depthwise_conv2d(z1, k, padding=padding))


def channel_energy(response, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Per-channel log energy ``log(spatial_mean + epsilon)`` of a response map.

    Returns a float64 vector of length C; monotone in the spatial mean, and
    epsilon keeps it finite on dead channels.
    """
    r = as_tensor(response)
    if r.ndim != 3:
        raise SizeError(f"expected a (C, H, W) response, got shape {r.shape}")
    means = r.astype(np.float64).mean(axis=(1, 2))
    return np.log(means + epsilon)


def _spatial_means(z1, cfg: SesConfig, padding: str) -> np.ndarray:
    resp = laplacian_response(z1, cfg.kernel, padding=padding)
    return resp.astype(np.float64).mean(axis=(1, 2))


def top_k_channels(energies: np.ndarray, k: int) -> np.ndarray:
    """Indices of the K largest entries, ties broken toward lower index."""
    c = energies.shape[0]
    if k > c:
        raise ConfigError(f"top_k={k} exceeds channel count {c}")
    order = np.lexsort((np.arange(c), -energies))
    return np.sort(order[:k])


def ses_score(z1, cfg: SesConfig, omega=None, padding: str = "replicate") -> float:
    """Structural energy score: mean of the K largest channel log energies.

    ``omega`` optionally pins the channel subset (the global-selection
    variant); by default the top-K channels are picked per sample. With
    K equal to the channel count this reduces to the plain mean log energy.
    """
    resp = laplacian_response(z1, cfg.kernel, padding=padding)
    energies = channel_energy(resp, cfg.epsilon)
    if omega is not None:
        idx = np.asarray(omega, dtype=np.intp)
        if idx.ndim != 1 or idx.size != cfg.top_k:
            raise ConfigError(f"omega must hold exactly top_k={cfg.top_k} channel indices")
        if idx.min() < 0 or idx.max() >= energies.shape[0]:
            raise ConfigError(f"omega indices out of range for {energies.shape[0]} channels")
    else:
        idx = top_k_channels(energies, cfg.top_k)
    return float(energies[idx].mean())


def spectral_contrast_gain(z1, cfg: SesConfig, padding: str = "replicate") -> float:
    """Ratio of the strongest channel's exponentiated energy to the
    channel-ensemble mean; always >= 1, equal to 1 when all channels match.

    Since ``exp(log(m + eps)) == m + eps``, this is computed directly from
    the stabilized spatial means.
    """
    means = _spatial_means(z1, cfg, padding) + cfg.epsilon
    return float(means.max() / means.mean())


def laplacian_frequency_weights(h: int, w: int) -> np.ndarray:
    """Magnitude of the periodic 4-neighbor Laplacian's frequency response.

    Entry ``(u, v)`` is ``(2 - 2cos(2*pi*u/H)) + (2 - 2cos(2*pi*v/W))``,
    the discrete analogue of the squared spatial frequency.
    """
    u = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(h) / h)
    v = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(w) / w)
    return u[:, None] + v[None, :]


def frequency_weighting_ratio(channel) -> float:
    """Check the sieve's spectral identity on one channel.

    Returns the mean squared periodic-padding Laplacian response divided by
    the spectrally computed value: the power spectrum weighted by the squared
    frequency response of the discrete operator. For periodic convolution the
    two sides agree exactly, so the ratio is 1 up to float rounding. A
    DC-only channel makes both sides zero; that 0/0 returns 1 by convention.
    """
    x = as_tensor(channel)
    if x.ndim != 2:
        raise SizeError(f"expected an (H, W) channel, got shape {x.shape}")
    h, w = x.shape
    if h < 8 or w < 8:
        raise SizeError(f"channel must be at least 8x8, got {h}x{w}")
    lap = depthwise_conv2d(x[None, :, :], LAPLACIAN_4, padding="periodic")[0]
    mean_sq_response = float(np.mean(lap.astype(np.float64) ** 2))
    weights = laplacian_frequency_weights(h, w)
    spectrum = power_spectrum(x).astype(np.float64)
    spectral_side = float((weights**2 * spectrum).sum() / (h * w) ** 2)
    # 0/0 guard for DC-only channels, at float-noise resolution
    degenerate = 1e-10 * (1.0 + float(spectrum.sum()) / (h * w) ** 2)
    if spectral_side < degenerate and mean_sq_response < degenerate:
        return 1.0
    return mean_sq_response / spectral_side
