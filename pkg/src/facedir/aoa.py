"""GCC-PHAT angle-of-arrival estimation on circular microphone arrays.

Works blindly on raw voice signals or on chirp-deconvolved channel
estimates. Candidate angles are sampled on a 1-degree grid: each angle maps
to an expected fractional lag per diagonal mic pair, the whitened
correlation curve is read off at that lag, and the per-pair curves are
averaged before taking the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .dsp import ImpulseResponse, Signal
from .scene import DevicePose
from .simulate import SPEED_OF_SOUND


@dataclass
class AoAEstimate:
    """Estimated device-frame arrival angle with its peak correlation."""

    angle: float  # radians, [0, 2*pi), integer degree before smoothing
    confidence: float
    per_pair_curves: np.ndarray | None = None  # (M/2, 360) sampled curves


def gcc_phat(a: Signal, b: Signal, max_lag: int | None = None, nfft: int | None = None):
    """Phase-transform cross-correlation of two signals.

    Whitens the cross-spectrum to unit magnitude so the peak location
    depends only on relative phase (delay), not on amplitudes. Returns
    (lags, values) with the same lag convention as dsp.cross_correlate.
    nfft overrides the transform size (must cover the longer input); the
    default avoids circular wrap entirely.
    """
    if a.sample_rate != b.sample_rate:
        raise ValueError("sample-rate mismatch")
    if nfft is None:
        n = next_fast_len(len(a) + len(b))
    else:
        if nfft < max(len(a), len(b)):
            raise ValueError("nfft must cover the longer input")
        n = nfft
    A = rfft(a.samples, n)
    B = rfft(b.samples, n)
    R = A * np.conj(B)
    mag = np.abs(R)
    peak = mag.max()
    if peak == 0.0:
        raise ValueError("zero-energy input")
    cc = irfft(R / np.maximum(mag, 1e-15 * peak), n)
    if max_lag is None:
        max_lag = min(len(a), len(b)) - 1
    max_lag = min(max_lag, n // 2 - 1)
    lags = np.arange(-max_lag, max_lag + 1)
    values = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]]) if max_lag > 0 else cc[:1]
    return lags, values


def steering_delays(device: DevicePose, angle: float, sample_rate: int) -> np.ndarray:
    """Per-mic delays (samples) that align a far-field arrival from angle.

    The angle is in the device frame. Applying these delays with
    dsp.delay_sum_aoa sums the line-of-sight component coherently.
    """
    m = device.mic_count
    mic_angles = 2 * np.pi * np.arange(m) / m  # device frame
    u = np.array([np.cos(angle), np.sin(angle)])
    r = device.array_radius * np.stack([np.cos(mic_angles), np.sin(mic_angles)], axis=1)
    return sample_rate * (r @ u) / SPEED_OF_SOUND


def _sample_curve(lags: np.ndarray, values: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Read the correlation curve at fractional lags (3-point parabola)."""
    k = np.rint(tau).astype(int)
    d = tau - k
    i = k - int(lags[0])
    ym = values[i - 1]
    y0 = values[i]
    yp = values[i + 1]
    return y0 + d * (yp - ym) / 2.0 + d * d * (yp - 2.0 * y0 + ym) / 2.0


def _estimate_from_arrays(arrays: list[np.ndarray], sample_rate: int, device: DevicePose) -> AoAEstimate:
    m = device.mic_count
    if m % 2 != 0:
        raise ValueError(f"unsupported layout: need an even mic count, got {m}")
    if m < 4:
        raise ValueError(f"need at least 4 microphones, got {m}")
    if len(arrays) != m:
        raise ValueError(f"expected {m} signals, got {len(arrays)}")

    fs = sample_rate
    mic_angles = 2 * np.pi * np.arange(m) / m
    offsets = device.array_radius * np.stack([np.cos(mic_angles), np.sin(mic_angles)], axis=1)
    geo_lag = fs * 2.0 * device.array_radius / SPEED_OF_SOUND
    max_lag = int(np.ceil(geo_lag)) + 3

    theta = np.radians(np.arange(360.0))
    u = np.stack([np.cos(theta), np.sin(theta)], axis=1)  # (360, 2)

    # only |lag| <= max_lag matters, so a transform barely longer than the
    # inputs is enough (the wrapped tail only touches far-out lags)
    nfft = next_fast_len(max(len(x) for x in arrays) + 2 * (max_lag + 1))
    curves = np.zeros((m // 2, 360))
    for p in range(m // 2):
        j, k = p, p + m // 2
        a = Signal(arrays[j], fs)
        b = Signal(arrays[k], fs)
        lags, values = gcc_phat(a, b, max_lag=max_lag, nfft=nfft)
        tau = fs * (u @ (offsets[k] - offsets[j])) / SPEED_OF_SOUND
        curves[p] = _sample_curve(lags, values, tau)

    # Degenerate inputs (all mics identical) leave each pair's curve peaked
    # at its broadside; the argmax then lands on the smallest broadside
    # angle with visibly low confidence, so callers can filter.
    avg = np.abs(curves.mean(axis=0))
    deg = int(np.argmax(avg))  # ties resolved toward the smallest angle
    return AoAEstimate(angle=np.radians(deg), confidence=float(avg[deg]), per_pair_curves=curves)


def estimate_aoa(mics: list[Signal], device: DevicePose) -> AoAEstimate:
    """Blind AoA of the dominant source from one device's raw mic signals.

    Uses the M/2 diagonally opposite mic pairs; mic order must match
    scene.mic_positions(device).
    """
    if not mics:
        raise ValueError("no signals given")
    fs = mics[0].sample_rate
    for s in mics:
        if s.sample_rate != fs:
            raise ValueError("all signals must share one sample rate")
    return _estimate_from_arrays([s.samples for s in mics], fs, device)


def estimate_aoa_from_channels(channels: list[ImpulseResponse], device: DevicePose) -> AoAEstimate:
    """AoA from per-mic channel estimates (e.g. deconvolved known chirps)."""
    if not channels:
        raise ValueError("no channels given")
    fs = channels[0].sample_rate
    for h in channels:
        if h.sample_rate != fs:
            raise ValueError("all channels must share one sample rate")
    return _estimate_from_arrays([h.taps for h in channels], fs, device)
