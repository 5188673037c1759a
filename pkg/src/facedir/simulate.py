"""Synthetic scene rendering: ground-truth channels and mic observations.

Sources (gaussian / speech-like / chirp), 2-D image-source room channels
with a directional talker, per-mic noise injection, and WAV/JSON export of
the rendered observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .dsp import KERNEL_HALF, ImpulseResponse, Signal, convolve
from .scene import (
    Scene,
    bearing,
    builtin_pattern,
    dumps_canonical,
    mic_positions,
    pattern_gain,
    wrap_angle,
)

SPEED_OF_SOUND = 343.0
#: Floor on propagation distance, avoids the 1/d singularity.
MIN_DISTANCE = 0.1
#: Seconds of silence prepended to every observation (pre-onset noise window).
DEFAULT_LEAD_IN = 0.15


@dataclass
class GroundTruth:
    """Everything the simulator knows that the pipeline must not see."""

    source: Signal
    channels: list[list[ImpulseResponse]]  # [device][mic]
    los_amplitudes: np.ndarray  # per device, at the array center
    aoas: np.ndarray  # device-frame arrival angle of the user, per device
    distances: np.ndarray  # user -> device center, meters
    onset_sample: int  # index where the source starts in the observations
    snr_tilde_db: float  # measured (signal+noise)/noise, pooled over mics


def make_source(kind: str, duration: float, sample_rate: int, seed: int) -> Signal:
    """Deterministic test source of the given kind.

    gaussian: white noise. speech_like: drifting-pitch harmonic series with
    a slow onset, syllabic amplitude modulation and interleaved noise
    bursts. chirp: linear 1-7 kHz sweep.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng([seed, 0x5EED])
    t = np.arange(n) / sample_rate

    if kind == "gaussian":
        out = rng.standard_normal(n)
    elif kind == "chirp":
        out = sps.chirp(t, f0=1000.0, t1=duration, f1=7000.0)
        out *= sps.windows.tukey(n, alpha=0.05)
    elif kind == "speech_like":
        # pitch drifting inside 100-250 Hz
        f0 = 175.0 + 60.0 * np.sin(2 * np.pi * 1.1 * t + rng.uniform(0, 2 * np.pi))
        f0 += 15.0 * np.sin(2 * np.pi * 0.37 * t + rng.uniform(0, 2 * np.pi))
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        voiced = np.zeros(n)
        for k in range(1, 7):
            voiced += np.sin(k * phase) / k
        # syllabic modulation plus consonant-like noise bursts in the gaps
        syl = 0.5 + 0.5 * np.sin(2 * np.pi * 3.3 * t + rng.uniform(0, 2 * np.pi))
        am = 0.3 + 0.7 * syl
        bursts = 0.35 * rng.standard_normal(n) * np.clip(0.45 - syl, 0.0, None) / 0.45
        out = am * voiced + bursts
        # human voices ramp up slowly: quarter-second raised-cosine attack
        attack = int(0.25 * sample_rate)
        env = np.ones(n)
        m = min(attack, n)
        env[:m] = 0.5 - 0.5 * np.cos(np.pi * np.arange(m) / attack)
        out *= env
    else:
        raise ValueError(f"unknown source kind {kind!r}")

    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak
    return Signal(out, sample_rate)


def _place_tap(buf: np.ndarray, pos: float, amp: float, k: int = KERNEL_HALF) -> None:
    """Add a band-limited tap of the given amplitude at fractional delay pos."""
    lo = int(np.floor(pos)) - k
    hi = lo + 2 * k + 1
    idx = np.arange(max(lo, 0), min(hi, len(buf)))
    off = idx - pos
    window = np.where(np.abs(off) <= k, 0.5 + 0.5 * np.cos(np.pi * off / k), 0.0)
    buf[idx] += amp * np.sinc(off) * window


def _mirror_images(coord: float, extent: float, order: int):
    """1-D mirror images of a coordinate with their bounce counts."""
    out = []
    for p in range(-order, order + 1):
        for flip in (False, True):
            bounces = abs(2 * p) if not flip else abs(2 * p - 1)
            if bounces <= order:
                out.append((2 * p * extent + (-coord if flip else coord), bounces))
    return out


def synth_channel(scene: Scene, device: int, mic: int, reflection_order: int = 2) -> ImpulseResponse:
    """Ground-truth channel from the talker's mouth to one microphone.

    Image-source construction for a rectangular room: the microphone is
    mirrored across the walls, so each image path's departure angle at the
    talker is physically correct and the directional source gain applies
    per path. Tap amplitude is G(departure) * (1-absorption)^bounces /
    max(path, MIN_DISTANCE); taps are placed with fractional-delay
    interpolation.
    """
    if not 0 <= reflection_order <= 3:
        raise ValueError(f"reflection_order must be in [0, 3], got {reflection_order}")
    if not 0 <= device < len(scene.devices):
        raise IndexError(f"device index {device} out of range")
    pose = scene.devices[device]
    if not 0 <= mic < pose.mic_count:
        raise IndexError(f"mic index {mic} out of range for device {device}")

    pattern = builtin_pattern(scene.pattern)
    mx, my = mic_positions(pose)[mic]
    ux, uy = scene.user.position
    rho = 1.0 - scene.room.absorption
    fs = scene.sample_rate

    taps_spec = []
    for ix, bx in _mirror_images(mx, scene.room.width, reflection_order):
        for iy, by in _mirror_images(my, scene.room.height, reflection_order):
            bounces = bx + by
            if bounces > reflection_order:
                continue
            if bounces > 0 and rho == 0.0:
                continue
            dx, dy = ix - ux, iy - uy
            dist = float(np.hypot(dx, dy))
            dep = np.arctan2(dy, dx) - scene.user.facing
            amp = pattern_gain(pattern, dep) * rho**bounces / max(dist, MIN_DISTANCE)
            taps_spec.append((dist / SPEED_OF_SOUND * fs, amp))

    length = int(np.ceil(max(pos for pos, _ in taps_spec))) + KERNEL_HALF + 2
    buf = np.zeros(length)
    for pos, amp in taps_spec:
        _place_tap(buf, pos, amp)
    return ImpulseResponse(buf, fs)


def true_aoas(scene: Scene) -> np.ndarray:
    """Device-frame arrival angle of the user at each device."""
    return np.array([
        wrap_angle(bearing(d.position, scene.user.position) - d.orientation)
        for d in scene.devices
    ])


def true_distances(scene: Scene) -> np.ndarray:
    u = np.asarray(scene.user.position)
    return np.array([float(np.hypot(*(u - np.asarray(d.position)))) for d in scene.devices])


def _los_amplitudes(scene: Scene) -> np.ndarray:
    pattern = builtin_pattern(scene.pattern)
    out = np.zeros(len(scene.devices))
    for i, d in enumerate(scene.devices):
        dep = bearing(scene.user.position, d.position) - scene.user.facing
        dist = float(np.hypot(d.position[0] - scene.user.position[0],
                              d.position[1] - scene.user.position[1]))
        out[i] = pattern_gain(pattern, dep) / max(dist, MIN_DISTANCE)
    return out


def measure_snr_tilde(observations, onset: int, duration_samples: int) -> float:
    """Measured (signal+noise)/noise in dB, pooled over all microphones.

    Noise power comes from a 100 ms window right before the onset; the
    voiced window is the bulk of the source span.
    """
    fs = observations[0][0].sample_rate
    pre_lo = max(0, onset - int(0.1 * fs))
    v_lo = onset + int(0.1 * duration_samples)
    v_hi = onset + int(0.9 * duration_samples)
    pre_acc, v_acc = [], []
    for device in observations:
        for s in device:
            pre_acc.append(np.mean(s.samples[pre_lo:onset] ** 2))
            v_acc.append(np.mean(s.samples[v_lo:v_hi] ** 2))
    noise = float(np.mean(pre_acc))
    voiced = float(np.mean(v_acc))
    if noise == 0.0:
        return float("inf")
    return 10.0 * np.log10(voiced / noise)


def record(
    scene: Scene,
    reflection_order: int = 2,
    lead_in: float = DEFAULT_LEAD_IN,
    target_snr_db: float | None = None,
):
    """Render all N x M microphone observations plus the ground truth.

    x_ij = v * h_ij shifted by the lead-in, plus white Gaussian noise. The
    noise level comes from scene.noise_floor (dB, 20*log10 of the per-sample
    std; None = noiseless) unless target_snr_db is given, in which case the
    noise is calibrated so the pooled measured SNR~ hits the target. Noise
    streams are seeded per (device, mic), so results do not depend on
    evaluation order.
    """
    fs = scene.sample_rate
    v = make_source(scene.source, scene.duration, fs, scene.seed)
    amp = 10.0 ** (scene.user.loudness / 20.0)
    src = Signal(v.samples * amp, fs)

    channels = [
        [synth_channel(scene, i, j, reflection_order) for j in range(d.mic_count)]
        for i, d in enumerate(scene.devices)
    ]
    lead = int(round(lead_in * fs))
    h_max = max(len(h) for dev in channels for h in dev)
    total = lead + len(src) + h_max - 1

    clean = []
    for i, dev in enumerate(channels):
        row = []
        for j, h in enumerate(dev):
            x = np.zeros(total)
            y = convolve(src, h).samples
            x[lead : lead + len(y)] = y
            row.append(x)
        clean.append(row)

    dur_n = len(src)
    if target_snr_db is not None:
        v_lo = lead + int(0.1 * dur_n)
        v_hi = lead + int(0.9 * dur_n)
        p_clean = float(np.mean([np.mean(x[v_lo:v_hi] ** 2) for row in clean for x in row]))
        ratio = 10.0 ** (target_snr_db / 10.0)
        if ratio <= 1.0:
            raise ValueError("target SNR~ must exceed 0 dB: (signal+noise)/noise > 1")
        sigma = float(np.sqrt(p_clean / (ratio - 1.0)))
    elif scene.noise_floor is not None:
        sigma = 10.0 ** (scene.noise_floor / 20.0)
    else:
        sigma = 0.0

    observations = []
    for i, row in enumerate(clean):
        out_row = []
        for j, x in enumerate(row):
            if sigma > 0.0:
                rng = np.random.default_rng([scene.seed, 0x0153, i, j])
                x = x + sigma * rng.standard_normal(total)
            out_row.append(Signal(x, fs))
        observations.append(out_row)

    snr = measure_snr_tilde(observations, lead, dur_n) if sigma > 0.0 else float("inf")
    truth = GroundTruth(
        source=src,
        channels=channels,
        los_amplitudes=_los_amplitudes(scene),
        aoas=true_aoas(scene),
        distances=true_distances(scene),
        onset_sample=lead,
        snr_tilde_db=snr,
    )
    return observations, truth


def sparse_channels(
    n_devices: int,
    sample_rate: int,
    seed: int,
    n_echoes: tuple[int, int] = (3, 6),
    los_range: tuple[float, float] = (0.3, 1.5),
    echo_rel: tuple[float, float] = (0.25, 0.8),
    delay_range: tuple[int, int] = (40, 250),
    spread: int = 700,
):
    """Random sparse multipath channels for convergence studies.

    Each device gets one line-of-sight tap (fractional delay, amplitude
    drawn from los_range) followed by a few weaker echoes. Returns the
    channels and the true LoS amplitude vector.
    """
    rng = np.random.default_rng([seed, 0xC4A2])
    channels, los = [], np.zeros(n_devices)
    for i in range(n_devices):
        d0 = rng.uniform(*delay_range)
        a0 = rng.uniform(*los_range)
        length = int(delay_range[1] + spread) + 2 * KERNEL_HALF + 2
        buf = np.zeros(length)
        _place_tap(buf, d0, a0)
        for _ in range(rng.integers(n_echoes[0], n_echoes[1] + 1)):
            _place_tap(buf, d0 + rng.uniform(20, spread), a0 * rng.uniform(*echo_rel))
        channels.append(ImpulseResponse(buf, sample_rate))
        los[i] = a0
    return channels, los


# --- export ------------------------------------------------------------------


def export_observations(observations, out_dir) -> list[Path]:
    """Write one float32 WAV per microphone: device{i:02d}_mic{j:02d}.wav."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, row in enumerate(observations):
        for j, s in enumerate(row):
            p = out / f"device{i:02d}_mic{j:02d}.wav"
            wavfile.write(p, s.sample_rate, s.samples.astype(np.float32))
            written.append(p)
    return written


def truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "schema": "facedir-truth/1",
        "sample_rate": truth.source.sample_rate,
        "onset_sample": truth.onset_sample,
        "snr_tilde_db": None if np.isinf(truth.snr_tilde_db) else truth.snr_tilde_db,
        "los_amplitudes": truth.los_amplitudes.tolist(),
        "aoas_rad": truth.aoas.tolist(),
        "distances_m": truth.distances.tolist(),
        "source": truth.source.samples.tolist(),
        "channels": [[h.taps.tolist() for h in dev] for dev in truth.channels],
    }


def export_truth(truth: GroundTruth, path) -> None:
    Path(path).write_text(dumps_canonical(truth_to_dict(truth)))


def load_observations(obs_dir, n_devices: int, mic_counts) -> list[list[Signal]]:
    """Read back the WAV grid written by export_observations.

    Raises FileNotFoundError listing every missing file at once.
    """
    obs_dir = Path(obs_dir)
    missing = []
    observations = []
    for i in range(n_devices):
        row = []
        for j in range(mic_counts[i]):
            p = obs_dir / f"device{i:02d}_mic{j:02d}.wav"
            if not p.exists():
                missing.append(str(p))
                continue
            try:
                sr, data = wavfile.read(p)
            except ValueError as e:
                raise ValueError(f"unreadable observation file {p}: {e}") from None
            row.append(Signal(np.asarray(data, dtype=np.float64), sr))
        observations.append(row)
    if missing:
        raise FileNotFoundError("missing observation file(s): " + ", ".join(missing))
    return observations
