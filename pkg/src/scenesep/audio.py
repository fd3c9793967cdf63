"""STFT / iSTFT, spectrogram masking, mixing, and the ideal binary mask.

Analysis constants follow the separation setup: 11025 Hz audio, periodic
Hann window of 1022 samples, hop 256.  The one-sided transform of a
1022-sample frame has exactly 512 bins (DC through Nyquist); the mask
domain halves that to 256 bins by averaging adjacent bin pairs, and masks
are lifted back by duplicating rows.  The default clip length of 66302
samples yields exactly 256 frames.
"""

from __future__ import annotations

import numpy as np

from .tensorio import AudioClip

RATE = 11025
WINDOW = 1022
HOP = 256
FULL_BINS = WINDOW // 2 + 1
POOLED_BINS = FULL_BINS // 2
DEFAULT_FRAMES = 256
DEFAULT_SAMPLES = WINDOW + (DEFAULT_FRAMES - 1) * HOP

_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)


def frame_count(num_samples: int) -> int:
    """Number of full analysis frames for a signal of the given length."""
    if num_samples < WINDOW:
        raise ValueError(f"clip too short: {num_samples} < {WINDOW} samples")
    return 1 + (num_samples - WINDOW) // HOP


def stft(clip: AudioClip) -> np.ndarray:
    """Complex spectrogram (FULL_BINS x T) of a clip.

    Frames start at sample 0 and advance by HOP with no padding; each is
    multiplied by the periodic Hann window before the one-sided FFT.
    """
    x = clip.samples
    t = frame_count(len(x))
    starts = np.arange(t) * HOP
    frames = x[starts[:, None] + np.arange(WINDOW)[None, :]] * _WINDOW
    return np.fft.rfft(frames, axis=1).T


def istft(spec: np.ndarray) -> AudioClip:
    """Weighted overlap-add inverse of stft.

    Uses the analysis window for synthesis and divides by the summed
    squared window, which makes istft(stft(x)) exact on the interior
    (samples where the window sum is well-conditioned); positions with
    zero window sum decode to zero.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != FULL_BINS:
        raise ValueError(f"spectrogram must be ({FULL_BINS}, T), got {spec.shape}")
    t = spec.shape[1]
    frames = np.fft.irfft(spec.T, n=WINDOW, axis=1)
    total = (t - 1) * HOP + WINDOW
    out = np.zeros(total)
    wsum = np.zeros(total)
    for i in range(t):
        start = i * HOP
        out[start : start + WINDOW] += frames[i] * _WINDOW
        wsum[start : start + WINDOW] += _WINDOW**2
    np.divide(out, wsum, out=out, where=wsum > 0)
    return AudioClip(out, RATE)


def pool_frequency(magnitude: np.ndarray) -> np.ndarray:
    """Halve the frequency axis by averaging adjacent bin pairs."""
    magnitude = np.asarray(magnitude, dtype=float)
    bins = magnitude.shape[0]
    if bins % 2 != 0:
        raise ValueError(f"cannot pair-pool an odd bin count ({bins})")
    return magnitude.reshape(bins // 2, 2, -1).mean(axis=1)


def unpool_mask(mask: np.ndarray) -> np.ndarray:
    """Duplicate every mask row so pooled-domain masks apply to full spectrograms."""
    return np.repeat(np.asarray(mask, dtype=float), 2, axis=0)


def mix(clips) -> AudioClip:
    """Sample-wise sum of clips (no renormalization)."""
    clips = list(clips)
    if not clips:
        raise ValueError("mix requires at least one clip")
    length, rate = len(clips[0]), clips[0].rate
    for clip in clips[1:]:
        if len(clip) != length:
            raise ValueError(f"clip length mismatch: {len(clip)} != {length}")
        if clip.rate != rate:
            raise ValueError(f"clip rate mismatch: {clip.rate} != {rate}")
    return AudioClip(np.sum([c.samples for c in clips], axis=0), rate)


def ibm(target: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Ideal binary mask: 1 where the target magnitude strictly dominates."""
    target = np.asarray(target, dtype=float)
    other = np.asarray(other, dtype=float)
    if target.shape != other.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {other.shape}")
    return (target > other).astype(float)


def apply_mask(mask: np.ndarray, magnitude: np.ndarray) -> np.ndarray:
    """Element-wise product of a mask and a magnitude spectrogram."""
    mask = np.asarray(mask, dtype=float)
    magnitude = np.asarray(magnitude, dtype=float)
    if mask.shape != magnitude.shape:
        raise ValueError(f"shape mismatch: {mask.shape} vs {magnitude.shape}")
    return mask * magnitude


def reconstruct(estimate: np.ndarray, phase_source: np.ndarray) -> AudioClip:
    """Time-domain signal for a pooled-domain magnitude estimate.

    The estimate (POOLED_BINS x T) is converted to a ratio against the
    pooled mixture magnitude, lifted to full resolution by row
    duplication, and applied to the mixture's complex spectrogram before
    the inverse transform.  An estimate equal to the pooled mixture
    magnitude therefore reconstructs the mixture itself, and a masked
    estimate M * pool(|X|) reconstructs with the unpooled mask.
    """
    estimate = np.asarray(estimate, dtype=float)
    phase_source = np.asarray(phase_source)
    if phase_source.shape[0] != FULL_BINS:
        raise ValueError(f"phase source must have {FULL_BINS} bins")
    if estimate.shape != (POOLED_BINS, phase_source.shape[1]):
        raise ValueError(
            f"estimate shape {estimate.shape} does not match phase source "
            f"{phase_source.shape}"
        )
    if estimate.min() < 0:
        raise ValueError("magnitude estimate must be nonnegative")
    full_mag = np.abs(phase_source)
    pooled = pool_frequency(full_mag)
    ratio = np.divide(estimate, pooled, out=np.zeros_like(estimate), where=pooled > 0)
    return istft(unpool_mask(ratio) * phase_source)


def fit_length(clip: AudioClip, num_samples: int = DEFAULT_SAMPLES) -> AudioClip:
    """Center-crop or zero-pad a clip to an exact sample count."""
    n = len(clip)
    if n == num_samples:
        return clip
    if n > num_samples:
        start = (n - num_samples) // 2
        return AudioClip(clip.samples[start : start + num_samples], clip.rate)
    pad = num_samples - n
    left = pad // 2
    return AudioClip(np.pad(clip.samples, (left, pad - left)), clip.rate)
