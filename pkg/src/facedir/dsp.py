"""Signal-processing primitives shared by the whole pipeline.

Convolution, regularized spectral deconvolution, cross-correlation,
fractional-delay alignment and correlation-based alignment sums. All
functions are pure; none of them mutates its inputs, so they are safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps
from scipy.fft import irfft, next_fast_len, rfft

#: Half-width of the windowed-sinc interpolation kernel (31 taps total).
KERNEL_HALF = 15


@dataclass
class Signal:
    """Uniformly sampled real-valued waveform."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be a 1-D sequence")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class ImpulseResponse:
    """Finite tap vector modeling an air channel (gain per sample delay)."""

    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1 or len(self.taps) < 1:
            raise ValueError("taps must be a non-empty 1-D sequence")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps contain NaN or Inf")

    def __len__(self) -> int:
        return len(self.taps)


def shift_samples(x: np.ndarray, n: int) -> np.ndarray:
    """Integer shift with zero fill: out[t] = x[t - n], same length as x."""
    x = np.asarray(x)
    out = np.zeros_like(x)
    if n >= len(x) or -n >= len(x):
        return out
    if n >= 0:
        out[n:] = x[: len(x) - n]
    else:
        out[: len(x) + n] = x[-n:]
    return out


def fractional_delay(x: np.ndarray, delay: float, kernel_half: int = KERNEL_HALF) -> np.ndarray:
    """Delay x by a (possibly fractional) number of samples.

    Band-limited interpolation with a Hann-windowed sinc kernel; the output
    has the same length as the input, zero-filled at the edges. A positive
    delay moves content toward later times.
    """
    n = int(np.round(delay))
    f = float(delay) - n
    k = kernel_half
    if f == 0.0:
        return shift_samples(x, n)
    m = np.arange(-k, k + 1)
    off = m - f
    # Hann window centered on the interpolation point, not the tap grid
    window = np.where(np.abs(off) <= k, 0.5 + 0.5 * np.cos(np.pi * off / k), 0.0)
    kern = np.sinc(off) * window
    full = np.convolve(x, kern)
    out = np.zeros(len(x), dtype=np.float64)
    # out[t] = full[t + k - n] wherever that index is valid
    t0 = max(0, n - k)
    t1 = min(len(x), len(full) - k + n)
    if t1 > t0:
        out[t0:t1] = full[t0 + k - n : t1 + k - n]
    return out


def convolve(v: Signal, h: ImpulseResponse) -> Signal:
    """Linear convolution of a source with a channel (FFT-based).

    Output length is len(v) + len(h) - 1.
    """
    if v.sample_rate != h.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: signal {v.sample_rate} Hz vs channel {h.sample_rate} Hz"
        )
    out = sps.fftconvolve(v.samples, h.taps)
    return Signal(out, v.sample_rate)


def spectral_divide(x: np.ndarray, ref: np.ndarray, out_len: int, reg: float = 1e-3) -> np.ndarray:
    """Regularized frequency-domain quotient of x by ref.

    Returns the first out_len taps of
    irfft( X .* conj(R) / (|R|^2 + reg * max|R|^2) ),
    computed on an FFT grid long enough that linear and circular
    deconvolution coincide for causal quotients.
    """
    if reg < 0:
        raise ValueError(f"reg must be >= 0, got {reg}")
    n = next_fast_len(len(x) + len(ref))
    X = rfft(x, n)
    R = rfft(ref, n)
    power = np.abs(R) ** 2
    peak = power.max()
    if peak == 0.0:
        raise ValueError("reference is all zeros (degenerate input)")
    q = irfft(X * np.conj(R) / (power + reg * peak), n)
    return q[:out_len]


def deconvolve(x: Signal, v: Signal, channel_len: int | None = None, reg: float = 1e-3) -> ImpulseResponse:
    """Estimate the channel h such that x ~= v * h.

    Tikhonov-regularized spectral inversion; reg scales the spectral floor
    relative to max|V|^2. The default channel length is 0.1 s, long enough
    for the dominant early reflections at room scale.
    """
    if x.sample_rate != v.sample_rate:
        raise ValueError("sample-rate mismatch between observation and reference")
    if channel_len is None:
        channel_len = int(0.1 * x.sample_rate)
    if channel_len < 1:
        raise ValueError(f"channel_len must be >= 1, got {channel_len}")
    if len(v) < channel_len:
        raise ValueError(
            f"reference too short: len(v)={len(v)} < channel_len={channel_len}"
        )
    taps = spectral_divide(x.samples, v.samples, channel_len, reg)
    return ImpulseResponse(taps, x.sample_rate)


def cross_correlate(a: Signal, b: Signal, max_lag: int | None = None):
    """Cross-correlation values[l] = sum_t a(t) * b(t - l) for |l| <= max_lag.

    Returns (lags, values). The argmax lag is the shift to apply to b so it
    best aligns with a. Default max_lag is half the shorter input.
    """
    if a.sample_rate != b.sample_rate:
        raise ValueError("sample-rate mismatch")
    shortest = min(len(a), len(b))
    if max_lag is None:
        max_lag = shortest // 2
    if max_lag >= shortest:
        raise ValueError(f"max_lag={max_lag} must be < min input length {shortest}")
    full = sps.correlate(a.samples, b.samples, mode="full", method="fft")
    # full[k] corresponds to lag l = k - (len(b) - 1)
    center = len(b) - 1
    lags = np.arange(-max_lag, max_lag + 1)
    return lags, full[center - max_lag : center + max_lag + 1]


def delay_sum_aoa(mics: list[Signal], delays) -> Signal:
    """Shift each microphone signal by its fractional delay and sum.

    delays are in samples; one per microphone. Used to coherently align the
    line-of-sight component given steering delays for an arrival angle.
    """
    if len(mics) == 0:
        raise ValueError("need at least one signal")
    delays = np.asarray(delays, dtype=np.float64)
    if len(delays) != len(mics):
        raise ValueError(f"got {len(mics)} signals but {len(delays)} delays")
    n = len(mics[0])
    sr = mics[0].sample_rate
    for s in mics:
        if len(s) != n:
            raise ValueError("all signals must have equal length")
        if s.sample_rate != sr:
            raise ValueError("all signals must share one sample rate")
    acc = np.zeros(n, dtype=np.float64)
    for s, d in zip(mics, delays):
        acc += fractional_delay(s.samples, d)
    return Signal(acc, sr)


def align_correlate(signals: list[Signal]) -> Signal:
    """Align every signal to signals[0] by correlation argmax and sum.

    The per-signal lag is the cross-correlation argmax against signals[0]
    (zero for the reference itself). Output length equals the reference.
    """
    if len(signals) < 2:
        raise ValueError(f"need at least 2 signals, got {len(signals)}")
    ref = signals[0]
    sr = ref.sample_rate
    acc = np.array(ref.samples, copy=True)
    for s in signals[1:]:
        if s.sample_rate != sr:
            raise ValueError("all signals must share one sample rate")
        lags, vals = cross_correlate(ref, s, max_lag=min(len(ref), len(s)) // 2)
        delta = int(lags[np.argmax(vals)])
        shifted = shift_samples(s.samples, delta)
        n = min(len(acc), len(shifted))
        acc[:n] += shifted[:n]
    return Signal(acc, sr)
