"""Metrics and Monte-Carlo studies: benchmark runner, convergence study,
pattern robustness, and the facing-error metrics (FDE / FIE).

Trials are independent and seeded individually, so the runner can execute
them in any order or in parallel and still produce identical output; rows
are emitted in canonical scene_id order.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dsp import Signal, convolve
from .facing import (
    PipelineParams,
    estimate_channels,
    extract_los_power,
    first_peak_amplitude,
    infer,
    match_pattern,
)
from .locate import LocalizationError, layout_from_scene
from .scene import (
    PATTERN_NAMES,
    DevicePose,
    Room,
    Scene,
    UserPose,
    bearing,
    builtin_pattern,
    wrap_pi,
)
from .simulate import make_source, record, sparse_channels

CSV_SCHEMA_VERSION = "facedir-trials/1"

TRIAL_COLUMNS = [
    "scene_id",
    "room_w",
    "room_h",
    "absorption",
    "n_devices",
    "snr_db",
    "seed",
    "true_k",
    "chosen_k",
    "fde_deg",
    "fie",
    "loc_err_m",
    "snr_tilde_db",
    "iterations",
    "sep_deg",
    "status",
]


# --- metrics ------------------------------------------------------------------


def fde(layout, user, true_k: int, chosen_k: int) -> float:
    """Facing direction error: angle at the user between the bearings to the
    true and the chosen device, in degrees, wrapped to [0, 180]."""
    bt = bearing(user, layout.positions[true_k])
    bc = bearing(user, layout.positions[chosen_k])
    return float(abs(np.degrees(wrap_pi(bc - bt))))


def fie(layout, user, true_k: int, chosen_k: int) -> int:
    """Facing integer error: 0 for a correct pick, otherwise 1 plus the
    number of devices whose user-bearing lies strictly between the true and
    chosen bearings along the shorter arc (bearing ties count as outside)."""
    if true_k == chosen_k:
        return 0
    bt = bearing(user, layout.positions[true_k])
    bc = bearing(user, layout.positions[chosen_k])
    span = float(wrap_pi(bc - bt))
    between = 0
    for k in range(layout.n_devices):
        if k in (true_k, chosen_k):
            continue
        a = float(wrap_pi(bearing(user, layout.positions[k]) - bt))
        if span > 0 and 0 < a < span:
            between += 1
        elif span < 0 and span < a < 0:
            between += 1
    return 1 + between


def bearing_separation_deg(layout, user, true_k: int) -> float:
    """Angle at the user between the true device and its nearest neighbor."""
    bt = bearing(user, layout.positions[true_k])
    gaps = [
        abs(float(np.degrees(wrap_pi(bearing(user, layout.positions[k]) - bt))))
        for k in range(layout.n_devices)
        if k != true_k
    ]
    return min(gaps)


# --- scene sampling -------------------------------------------------------------


def random_scene(
    seed: int,
    n_devices: int = 4,
    room: Room = Room(5.0, 5.0, 0.5),
    min_separation_deg: float = 0.0,
    source: str = "gaussian",
    duration: float = 1.0,
    mic_count: int = 6,
    sample_rate: int = 16000,
) -> tuple[Scene, int]:
    """Random benchmark scene; the user exactly faces a random device.

    Devices keep 0.4 m wall margins and 0.5 m pairwise spacing; the user
    stays at least 0.8 m from every device. Returns (scene, true_k).
    """
    rng = np.random.default_rng([seed, 0x5CE0])
    w, h = room.width, room.height
    for _ in range(1000):
        dev_xy = rng.uniform([0.4, 0.4], [w - 0.4, h - 0.4], size=(n_devices, 2))
        if n_devices > 1:
            d = np.linalg.norm(dev_xy[:, None] - dev_xy[None, :], axis=2)
            if np.min(d[np.triu_indices(n_devices, 1)]) < 0.5:
                continue
        user_xy = rng.uniform([0.6, 0.6], [w - 0.6, h - 0.6])
        if np.min(np.linalg.norm(dev_xy - user_xy, axis=1)) < 0.8:
            continue
        bearings = np.array([bearing(user_xy, p) for p in dev_xy])
        if min_separation_deg > 0 and n_devices > 1:
            ok = True
            for i in range(n_devices):
                others = np.delete(bearings, i)
                gap = np.min(np.abs(np.degrees(wrap_pi(others - bearings[i]))))
                if gap < min_separation_deg:
                    ok = False
                    break
            if not ok:
                continue
        true_k = int(rng.integers(n_devices))
        devices = [
            DevicePose((float(x), float(y)), float(rng.uniform(0, 2 * np.pi)), mic_count)
            for x, y in dev_xy
        ]
        user = UserPose((float(user_xy[0]), float(user_xy[1])), float(bearings[true_k]))
        scene = Scene(room, devices, user, source=source, sample_rate=sample_rate,
                      duration=duration, seed=seed)
        return scene, true_k
    raise RuntimeError("could not sample a scene satisfying the constraints")


# --- benchmark runner -----------------------------------------------------------


@dataclass
class SuiteConfig:
    """One benchmark sweep: rooms x device counts x SNR grid x trials."""

    rooms: list[tuple[float, float]] = field(default_factory=lambda: [(5.0, 5.0)])
    absorption: float = 0.5
    reflection_order: int = 2
    device_counts: list[int] = field(default_factory=lambda: [4])
    snr_grid: list[float] = field(default_factory=lambda: [30.0])
    trials: int = 200
    seed: int = 2024
    min_separation_deg: float = 0.0
    source: str = "gaussian"
    duration: float = 1.0
    pattern: str = "cardioid"
    params: PipelineParams = field(default_factory=PipelineParams)


def standard_suite(trials: int = 200) -> SuiteConfig:
    """The standard multipath suite: 5x5 m, order-2 reflections,
    absorption 0.5, 4 devices, SNR~ 30 dB."""
    return SuiteConfig(trials=trials)


@dataclass
class TrialResult:
    scene_id: str
    room_w: float
    room_h: float
    absorption: float
    n_devices: int
    snr_db: float
    seed: int
    true_k: int
    chosen_k: int
    fde_deg: float
    fie: int
    loc_err_m: float
    snr_tilde_db: float
    iterations: int
    sep_deg: float
    status: str
    runtime_ms: float = 0.0

    def __post_init__(self):
        if self.fie < 0 or self.fde_deg < 0:
            raise ValueError("fde/fie must be non-negative")
        if self.status == "ok" and (self.fie == 0) != (self.chosen_k == self.true_k):
            raise ValueError("fie must be zero exactly for correct picks")


def _trial_spec_list(suite: SuiteConfig):
    specs = []
    idx = 0
    for room_wh in suite.rooms:
        for n in suite.device_counts:
            for snr in suite.snr_grid:
                for t in range(suite.trials):
                    specs.append((idx, room_wh, n, snr, suite))
                    idx += 1
    return specs


def _run_trial(spec) -> tuple[TrialResult, dict | None]:
    """One benchmark trial; also reports the FDE under every builtin
    pattern (the pipeline runs once, only the final correlation swaps)."""
    idx, (w, h), n, snr, suite = spec
    trial_seed = suite.seed * 1_000_003 + idx
    scene, true_k = random_scene(
        trial_seed,
        n_devices=n,
        room=Room(w, h, suite.absorption),
        min_separation_deg=suite.min_separation_deg,
        source=suite.source,
        duration=suite.duration,
    )
    t0 = time.perf_counter()
    obs, truth = record(scene, reflection_order=suite.reflection_order,
                        target_snr_db=snr if np.isfinite(snr) else None)
    layout = layout_from_scene(scene)
    base = dict(
        scene_id=f"t{idx:06d}",
        room_w=w,
        room_h=h,
        absorption=suite.absorption,
        n_devices=n,
        snr_db=snr,
        seed=trial_seed,
        true_k=true_k,
        sep_deg=round(bearing_separation_deg(layout, scene.user.position, true_k), 3),
        snr_tilde_db=round(truth.snr_tilde_db, 3) if np.isfinite(truth.snr_tilde_db) else float("inf"),
    )
    try:
        decision = infer(obs, layout, builtin_pattern(suite.pattern), suite.params)
    except LocalizationError:
        row = TrialResult(chosen_k=-1, fde_deg=0.0, fie=0, loc_err_m=float("nan"),
                          iterations=0, status="triangulation_failed",
                          runtime_ms=(time.perf_counter() - t0) * 1e3, **base)
        return row, None
    loc_err = float(np.hypot(decision.user_location[0] - scene.user.position[0],
                             decision.user_location[1] - scene.user.position[1]))
    pattern_fdes = {}
    for name in PATTERN_NAMES:
        d = match_pattern(decision.equalized_powers, layout, decision.user_location,
                          builtin_pattern(name))
        pattern_fdes[name] = fde(layout, scene.user.position, true_k, d.device_index)
    row = TrialResult(
        chosen_k=decision.device_index,
        fde_deg=round(fde(layout, scene.user.position, true_k, decision.device_index), 3),
        fie=fie(layout, scene.user.position, true_k, decision.device_index),
        loc_err_m=round(loc_err, 4),
        iterations=decision.iterations_used,
        status="ok",
        runtime_ms=(time.perf_counter() - t0) * 1e3,
        **base,
    )
    return row, pattern_fdes


def run_study(suite: SuiteConfig, jobs: int | None = 1):
    """Run the sweep, returning (rows, per-trial pattern FDE dicts).

    Deterministic per (suite, seed) regardless of jobs.
    """
    specs = _trial_spec_list(suite)
    if jobs is not None and jobs == 1:
        results = [_run_trial(s) for s in specs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, specs, chunksize=4))
    results.sort(key=lambda pair: pair[0].scene_id)
    rows = [r for r, _ in results]
    pattern_fdes = [p for _, p in results if p is not None]
    return rows, pattern_fdes


def run_benchmark(suite: SuiteConfig, jobs: int | None = 1) -> list[TrialResult]:
    """Run the sweep; deterministic per (suite, seed) regardless of jobs."""
    return run_study(suite, jobs)[0]


def trials_to_csv(rows: list[TrialResult], include_runtime: bool = False) -> str:
    """Render per-trial rows as CSV text (schema facedir-trials/1).

    Wall-clock runtime is excluded by default so the artifact is
    byte-deterministic for a fixed seed.
    """
    cols = TRIAL_COLUMNS + (["runtime_ms"] if include_runtime else [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([getattr(r, c) for c in cols])
    return buf.getvalue()


def summarize(rows: list[TrialResult]) -> dict:
    """Aggregate statistics, recomputable exactly from the emitted rows."""
    ok = [r for r in rows if r.status == "ok"]
    n_ok = len(ok)
    correct = sum(1 for r in ok if r.chosen_k == r.true_k)
    fie_hist: dict[str, int] = {}
    for r in ok:
        fie_hist[str(r.fie)] = fie_hist.get(str(r.fie), 0) + 1
    buckets = {}
    for lo, hi, name in [(0, 20, "0-20"), (20, 40, "20-40"), (40, 60, "40-60"),
                         (60, 1e9, ">=60")]:
        members = [r for r in ok if lo <= r.sep_deg < hi]
        if members:
            buckets[name] = {
                "trials": len(members),
                "accuracy": sum(1 for r in members if r.chosen_k == r.true_k) / len(members),
            }
    return {
        "schema": CSV_SCHEMA_VERSION,
        "n_trials": len(rows),
        "n_ok": n_ok,
        "accuracy": correct / n_ok if n_ok else float("nan"),
        "median_fde_deg": float(np.median([r.fde_deg for r in ok])) if ok else float("nan"),
        "median_loc_err_m": float(np.median([r.loc_err_m for r in ok])) if ok else float("nan"),
        "fie_histogram": fie_hist,
        "separation_buckets": buckets,
    }


# --- convergence study ----------------------------------------------------------


def converge_trajectories(
    snr_db: float,
    source: str,
    n_scenes: int = 100,
    n_devices: int = 4,
    sample_rate: int = 16000,
    duration: float = 0.6,
    max_iters: int = 12,
    seed: int = 0,
) -> np.ndarray:
    """Per-scene first-tap correlation per iteration, shape (scenes, iters).

    Each scene draws random sparse multipath channels; the per-device
    signals are the source through those channels plus white noise at the
    given (true) SNR. Scenes that stop early carry their last value
    forward.
    """
    out = np.zeros((n_scenes, max_iters))
    for s in range(n_scenes):
        chans, los = sparse_channels(n_devices, sample_rate, seed=seed * 7919 + s)
        v = make_source(source, duration, sample_rate, seed=seed * 7919 + s)
        rng = np.random.default_rng([seed, 0xC0DE, s])
        X = []
        for hh in chans:
            x = convolve(v, hh).samples
            sigma = float(np.sqrt(np.mean(x**2) / 10 ** (snr_db / 10)))
            X.append(Signal(x + sigma * rng.standard_normal(len(x)), sample_rate))
        tr = estimate_channels(X, max_iters=max_iters)
        traj = []
        for per_dev in tr.channels:
            amp = np.array(
                [
                    first_peak_amplitude(
                        np.maximum(hh.taps, 0.0), 0.3,
                        tr.guard + int(0.02 * sample_rate), refine="upsample",
                    )
                    for hh in per_dev
                ]
            )
            a = amp - amp.mean()
            b = los - los.mean()
            denom = float(np.linalg.norm(a) * np.linalg.norm(b))
            traj.append(float(a @ b / denom) if denom > 0 else 0.0)
        traj += [traj[-1]] * (max_iters - len(traj))
        out[s] = traj
    return out


def converge_study(
    snr_grid=(30.0, 20.0, 10.0),
    sources=("gaussian", "speech_like"),
    n_scenes: int = 100,
    n_devices: int = 4,
    max_iters: int = 12,
    seed: int = 0,
) -> list[dict]:
    """Mean first-tap correlation per (snr, source, iteration)."""
    rows = []
    for snr in snr_grid:
        for src in sources:
            m = converge_trajectories(snr, src, n_scenes=n_scenes,
                                      n_devices=n_devices, max_iters=max_iters,
                                      seed=seed)
            for it in range(m.shape[1]):
                rows.append({
                    "snr_db": snr,
                    "source": src,
                    "iteration": it,
                    "correlation": round(float(m[:, it].mean()), 6),
                })
    return rows


def converge_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["snr_db", "source", "iteration", "correlation"],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# --- pattern robustness study -----------------------------------------------------


def pattern_robustness_study(suite: SuiteConfig, jobs: int | None = 1) -> dict[str, float]:
    """Median FDE per builtin pattern on one suite."""
    _, pattern_fdes = run_study(suite, jobs)
    return {
        name: float(np.median([p[name] for p in pattern_fdes])) for name in PATTERN_NAMES
    }
