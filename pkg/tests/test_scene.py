"""Geometry, radiation patterns, and config round-trip tests."""

import json

import numpy as np
import pytest

from facedir.scene import (
    ConfigError,
    DevicePose,
    RadiationPattern,
    Room,
    Scene,
    UserPose,
    builtin_pattern,
    builtin_patterns,
    cardioid_pattern,
    dumps_canonical,
    load_scene,
    mic_positions,
    pattern_gain,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)


def make_scene(**kw):
    args = dict(
        room=Room(5.0, 4.0, 0.5),
        devices=[
            DevicePose((1.0, 1.0), 0.3),
            DevicePose((4.0, 3.0), 1.1),
        ],
        user=UserPose((2.5, 2.0), 0.7),
        noise_floor=-40.0,
        source="gaussian",
        sample_rate=16000,
        duration=1.0,
        seed=7,
    )
    args.update(kw)
    return Scene(**args)


class TestMicPositions:
    def test_square_array(self):
        d = DevicePose((0.0, 0.0), 0.0, mic_count=4, array_radius=1.0)
        pos = mic_positions(d)
        assert np.allclose(pos, [(1, 0), (0, 1), (-1, 0), (0, -1)], atol=1e-12)

    def test_hexagon_spacing(self):
        d = DevicePose((2.0, 3.0), 0.5, mic_count=6, array_radius=0.046)
        pos = mic_positions(d)
        angles = np.arctan2(pos[:, 1] - 3.0, pos[:, 0] - 2.0)
        gaps = np.diff(np.unwrap(angles))
        assert np.allclose(np.degrees(gaps), 60.0, atol=1e-9)

    def test_rotation_equivariance(self):
        base = DevicePose((1.0, -2.0), 0.2, mic_count=5, array_radius=0.3)
        rot = DevicePose((1.0, -2.0), 0.2 + np.pi, mic_count=5, array_radius=0.3)
        p0 = mic_positions(base) - np.array([1.0, -2.0])
        p1 = mic_positions(rot) - np.array([1.0, -2.0])
        assert np.allclose(p1, -p0, atol=1e-12)

    def test_radius_invariant(self):
        d = DevicePose((0.3, 0.4), 1.234, mic_count=6, array_radius=0.046)
        r = np.linalg.norm(mic_positions(d) - np.array([0.3, 0.4]), axis=1)
        assert np.allclose(r, 0.046, atol=1e-12)


class TestRadiationPatterns:
    def test_gain_at_zero(self):
        p = cardioid_pattern()
        assert pattern_gain(p, 0.0) == p.gains[0]

    def test_periodicity(self):
        p = cardioid_pattern()
        for x in (0.1, 1.7, 4.0):
            assert pattern_gain(p, x + 2 * np.pi) == pytest.approx(pattern_gain(p, x))

    def test_cardioid_back_lobe(self):
        # closed form: 0.6 + 0.4*cos(pi) = 0.2
        assert pattern_gain(cardioid_pattern(), np.pi) == pytest.approx(0.2, abs=1e-6)

    def test_builtins_satisfy_invariants(self):
        pats = builtin_patterns()
        assert len(pats) >= 4
        for p in pats:
            assert np.all(p.gains > 0)
            peak = int(np.argmax(p.gains))
            assert peak <= 30 or peak >= 330

    def test_average_is_pointwise_mean(self):
        pats = builtin_patterns()
        assert np.allclose(pats[2].gains, (pats[0].gains + pats[1].gains) / 2)

    def test_distorted_differs_but_keeps_frontal_max(self):
        default = builtin_pattern("cardioid")
        distorted = builtin_pattern("distorted")
        rel = np.abs(distorted.gains - default.gains) / default.gains
        assert rel.max() >= 0.2
        peak = int(np.argmax(distorted.gains))
        assert peak <= 30 or peak >= 330

    def test_frontal_dominance_enforced(self):
        gains = np.ones(360)
        gains[180] = 2.0  # rear-dominant
        with pytest.raises(ValueError, match="frontal"):
            RadiationPattern(gains)


class TestSceneValidation:
    def test_device_outside_room_rejected(self):
        with pytest.raises(ValueError, match=r"devices\[1\]"):
            make_scene(devices=[DevicePose((1, 1), 0.0), DevicePose((9.0, 1.0), 0.0)])

    def test_single_device_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            make_scene(devices=[DevicePose((1, 1), 0.0)])

    def test_mic_count_minimum(self):
        with pytest.raises(ValueError, match="4 microphones"):
            DevicePose((0, 0), 0.0, mic_count=3)

    def test_facing_normalized(self):
        u = UserPose((1, 1), 2 * np.pi + 0.5)
        assert u.facing == pytest.approx(0.5)


class TestConfigRoundTrip:
    def test_scene_roundtrip_identity(self):
        s = make_scene()
        assert scene_from_dict(scene_to_dict(s)) == s

    def test_canonical_text_roundtrip(self, tmp_path):
        s = make_scene()
        p = tmp_path / "scene.json"
        save_scene(s, p)
        text = p.read_text()
        s2 = load_scene(p)
        save_scene(s2, p)
        assert p.read_text() == text

    def test_unknown_key_rejected(self):
        cfg = scene_to_dict(make_scene())
        cfg["rooom"] = {}
        with pytest.raises(ConfigError, match="rooom"):
            scene_from_dict(cfg)

    def test_nested_unknown_key_rejected(self):
        cfg = scene_to_dict(make_scene())
        cfg["devices"][0]["colour"] = "red"
        with pytest.raises(ConfigError, match=r"devices\[0\].*colour"):
            scene_from_dict(cfg)

    def test_missing_key_rejected(self):
        cfg = scene_to_dict(make_scene())
        del cfg["user"]
        with pytest.raises(ConfigError, match="user"):
            scene_from_dict(cfg)

    def test_out_of_room_names_field(self):
        cfg = scene_to_dict(make_scene())
        cfg["devices"][1]["position"] = [99.0, 1.0]
        with pytest.raises(ConfigError, match=r"devices\[1\]\.position"):
            scene_from_dict(cfg)

    def test_invalid_json_points_at_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "room": }\n')
        with pytest.raises(ConfigError, match="line 2"):
            load_scene(p)

    def test_null_noise_floor_means_disabled(self):
        cfg = scene_to_dict(make_scene(noise_floor=None))
        text = dumps_canonical(cfg)
        assert scene_from_dict(json.loads(text)).noise_floor is None
