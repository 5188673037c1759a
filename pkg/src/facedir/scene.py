"""Scene geometry and configuration.

Rooms, device/user poses, circular microphone layouts, voice radiation
patterns, and the JSON scenario config format. All types are plain value
objects; validation happens at construction and at config load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi

#: Default hardware-like geometry: 6-mic circular array, 4.6 cm radius, 16 kHz.
DEFAULT_MIC_COUNT = 6
DEFAULT_ARRAY_RADIUS = 0.046
DEFAULT_SAMPLE_RATE = 16000

SOURCE_KINDS = ("gaussian", "speech_like", "chirp")
PATTERN_NAMES = ("cardioid", "sharp", "average", "distorted")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario configs."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to [0, 2*pi)."""
    return float(np.mod(a, TWO_PI))


def wrap_pi(a):
    """Wrap angle(s) to [-pi, pi)."""
    return np.mod(np.asarray(a, dtype=np.float64) + np.pi, TWO_PI) - np.pi


def bearing(src, dst) -> float:
    """Global-frame angle of the ray src -> dst, in [0, 2*pi)."""
    dx = dst[0] - src[0]
    dy = dst[1] - src[1]
    return wrap_angle(np.arctan2(dy, dx))


@dataclass
class RadiationPattern:
    """Per-degree linear amplitude gain of a voice source.

    Index 0 is the facing direction; the frontal lobe must dominate, i.e.
    the maximum gain sits within +-30 degrees of the facing direction.
    """

    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.shape != (360,):
            raise ValueError(f"pattern needs 360 per-degree gains, got {self.gains.shape}")
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains <= 0):
            raise ValueError("pattern gains must be finite and > 0")
        peak = int(np.argmax(self.gains))
        if not (peak <= 30 or peak >= 330):
            raise ValueError(f"frontal lobe must dominate; max gain at {peak} deg")


def pattern_gain(p: RadiationPattern, departure_angle: float) -> float:
    """Linear gain at an arbitrary departure angle (radians).

    Linearly interpolates between the two nearest degree bins; periodic in
    2*pi.
    """
    if not np.isfinite(departure_angle):
        raise ValueError("departure angle must be finite")
    deg = np.mod(np.degrees(departure_angle), 360.0)
    i0 = int(np.floor(deg)) % 360
    frac = deg - np.floor(deg)
    i1 = (i0 + 1) % 360
    return float((1.0 - frac) * p.gains[i0] + frac * p.gains[i1])


def _degrees_axis() -> np.ndarray:
    return np.radians(np.arange(360, dtype=np.float64))


def cardioid_pattern() -> RadiationPattern:
    """Default pattern g(theta) = 0.6 + 0.4*cos(theta)."""
    th = _degrees_axis()
    return RadiationPattern(0.6 + 0.4 * np.cos(th))


def sharp_pattern() -> RadiationPattern:
    """Sharper frontal lobe, weaker back lobe."""
    th = _degrees_axis()
    return RadiationPattern(0.25 + 0.75 * ((1.0 + np.cos(th)) / 2.0) ** 2)


def average_pattern() -> RadiationPattern:
    """Pointwise mean of the cardioid and sharp patterns."""
    a = cardioid_pattern().gains
    b = sharp_pattern().gains
    return RadiationPattern((a + b) / 2.0)


def distorted_pattern() -> RadiationPattern:
    """Deliberately distorted cardioid: inflated rear lobe, dented side."""
    th = _degrees_axis()
    g = cardioid_pattern().gains.copy()
    g += 0.30 * np.exp(-(wrap_pi(th - np.radians(160.0)) ** 2) / (2 * np.radians(35.0) ** 2))
    g -= 0.15 * np.exp(-(wrap_pi(th - np.radians(60.0)) ** 2) / (2 * np.radians(25.0) ** 2))
    return RadiationPattern(g)


def builtin_patterns() -> list[RadiationPattern]:
    """The four built-in radiation patterns (see PATTERN_NAMES for ids)."""
    return [cardioid_pattern(), sharp_pattern(), average_pattern(), distorted_pattern()]


def builtin_pattern(name: str) -> RadiationPattern:
    try:
        return builtin_patterns()[PATTERN_NAMES.index(name)]
    except ValueError:
        raise ConfigError(f"unknown pattern {name!r}; choose from {PATTERN_NAMES}") from None


@dataclass
class DevicePose:
    """A device's placement: array center, heading of mic 0, and geometry."""

    position: tuple[float, float]
    orientation: float
    mic_count: int = DEFAULT_MIC_COUNT
    array_radius: float = DEFAULT_ARRAY_RADIUS

    def __post_init__(self):
        self.position = (float(self.position[0]), float(self.position[1]))
        self.orientation = float(self.orientation)
        if self.mic_count < 4:
            raise ValueError(f"need at least 4 microphones, got {self.mic_count}")
        if self.array_radius <= 0:
            raise ValueError(f"array_radius must be > 0, got {self.array_radius}")


@dataclass
class UserPose:
    """Talker position, global-frame facing direction, and loudness (dB)."""

    position: tuple[float, float]
    facing: float
    loudness: float = 0.0

    def __post_init__(self):
        self.position = (float(self.position[0]), float(self.position[1]))
        self.facing = wrap_angle(float(self.facing))
        self.loudness = float(self.loudness)


@dataclass
class Room:
    """Rectangular room [0, width] x [0, height] with uniform wall absorption."""

    width: float
    height: float
    absorption: float = 0.5

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("room extents must be positive")
        if not 0.0 <= self.absorption <= 1.0:
            raise ValueError(f"absorption must be in [0, 1], got {self.absorption}")

    def contains(self, p) -> bool:
        return 0.0 < p[0] < self.width and 0.0 < p[1] < self.height


@dataclass
class Scene:
    """A full synthetic scenario: room, devices, user, source, and noise."""

    room: Room
    devices: list[DevicePose]
    user: UserPose
    noise_floor: float | None = None
    source: str = "gaussian"
    sample_rate: int = DEFAULT_SAMPLE_RATE
    duration: float = 1.0
    seed: int = 0
    pattern: str = "cardioid"

    def __post_init__(self):
        if len(self.devices) < 2:
            raise ValueError(f"need at least 2 devices, got {len(self.devices)}")
        if self.source not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source!r}")
        if self.pattern not in PATTERN_NAMES:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for i, d in enumerate(self.devices):
            if not self.room.contains(d.position):
                raise ValueError(f"devices[{i}].position {d.position} outside room")
        if not self.room.contains(self.user.position):
            raise ValueError(f"user.position {self.user.position} outside room")


def mic_positions(d: DevicePose) -> np.ndarray:
    """Global (x, y) of each microphone: evenly spaced on the array circle.

    Mic 0 sits at the device orientation angle; returns an (M, 2) array.
    """
    angles = d.orientation + TWO_PI * np.arange(d.mic_count) / d.mic_count
    return np.stack(
        [
            d.position[0] + d.array_radius * np.cos(angles),
            d.position[1] + d.array_radius * np.sin(angles),
        ],
        axis=1,
    )


# --- scenario config (JSON) -------------------------------------------------
#
# Schema (units in comments; see README for the full description):
# {
#   "room":    {"width": m, "height": m, "absorption": 0..1},
#   "devices": [{"position": [x, y], "orientation": rad,
#                "mic_count": int, "array_radius": m}, ...],
#   "user":    {"position": [x, y], "facing": rad, "loudness": dB},
#   "noise_floor": dB or null (null = noiseless),
#   "source": "gaussian" | "speech_like" | "chirp",
#   "sample_rate": Hz, "duration": s, "seed": int, "pattern": name
# }
# Unknown keys are rejected.


def _require_keys(obj: dict, required: set, optional: set, where: str):
    unknown = set(obj) - required - optional
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing key(s) {sorted(missing)}")


def _as_xy(v, where: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{where} must be a [x, y] pair")
    return (float(v[0]), float(v[1]))


def scene_from_dict(cfg: dict) -> Scene:
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    _require_keys(
        cfg,
        {"room", "devices", "user", "source", "sample_rate", "seed"},
        {"noise_floor", "duration", "pattern"},
        "config",
    )
    room_cfg = cfg["room"]
    _require_keys(room_cfg, {"width", "height"}, {"absorption"}, "room")
    room = Room(float(room_cfg["width"]), float(room_cfg["height"]),
                float(room_cfg.get("absorption", 0.5)))
    devices = []
    for i, d in enumerate(cfg["devices"]):
        where = f"devices[{i}]"
        _require_keys(d, {"position", "orientation"}, {"mic_count", "array_radius"}, where)
        try:
            devices.append(DevicePose(
                _as_xy(d["position"], f"{where}.position"),
                float(d["orientation"]),
                int(d.get("mic_count", DEFAULT_MIC_COUNT)),
                float(d.get("array_radius", DEFAULT_ARRAY_RADIUS)),
            ))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
    u = cfg["user"]
    _require_keys(u, {"position", "facing"}, {"loudness"}, "user")
    user = UserPose(_as_xy(u["position"], "user.position"), float(u["facing"]),
                    float(u.get("loudness", 0.0)))
    nf = cfg.get("noise_floor")
    try:
        return Scene(
            room=room,
            devices=devices,
            user=user,
            noise_floor=None if nf is None else float(nf),
            source=str(cfg["source"]),
            sample_rate=int(cfg["sample_rate"]),
            duration=float(cfg.get("duration", 1.0)),
            seed=int(cfg["seed"]),
            pattern=str(cfg.get("pattern", "cardioid")),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def scene_to_dict(s: Scene) -> dict:
    return {
        "room": {"width": s.room.width, "height": s.room.height,
                 "absorption": s.room.absorption},
        "devices": [
            {"position": list(d.position), "orientation": d.orientation,
             "mic_count": d.mic_count, "array_radius": d.array_radius}
            for d in s.devices
        ],
        "user": {"position": list(s.user.position), "facing": s.user.facing,
                 "loudness": s.user.loudness},
        "noise_floor": s.noise_floor,
        "source": s.source,
        "sample_rate": s.sample_rate,
        "duration": s.duration,
        "seed": s.seed,
        "pattern": s.pattern,
    }


def dumps_canonical(obj: dict) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_scene(s: Scene, path) -> None:
    Path(path).write_text(dumps_canonical(scene_to_dict(s)))


def load_scene(path) -> Scene:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return scene_from_dict(cfg)
