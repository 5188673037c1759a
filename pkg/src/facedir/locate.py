"""Device self-localization from pairwise chirp AoAs and user triangulation.

P2P localization solves a bearing-only least-squares problem over device
positions and (unknown) orientations, with the gauge pinned by anchor
poses. User triangulation intersects the per-device voice AoA rays and
picks the densest intersection cluster (DBSCAN).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .aoa import AoAEstimate
from .scene import bearing, wrap_angle, wrap_pi

#: Default reciprocity tolerance for filter_reliable (10 degrees).
DEFAULT_RECIPROCITY_TOL = np.radians(10.0)
#: DBSCAN parameters realizing a ~1 m maximum cluster diameter.
DBSCAN_EPS = 0.5
DBSCAN_MIN_PTS = 2


class LocalizationError(RuntimeError):
    """Raised when a localization problem is underdetermined or degenerate."""


@dataclass
class PairwiseAoas:
    """Map (i, j) -> AoA at device i of device j's chirp, device-i frame."""

    entries: dict[tuple[int, int], float]
    n_devices: int

    def __post_init__(self):
        clean = {}
        for (i, j), theta in self.entries.items():
            if i == j:
                raise ValueError(f"self-pair ({i}, {j}) not allowed")
            if not (0 <= i < self.n_devices and 0 <= j < self.n_devices):
                raise ValueError(f"pair ({i}, {j}) out of range for n={self.n_devices}")
            clean[(i, j)] = wrap_angle(theta)
        self.entries = clean


@dataclass
class DeviceLayout:
    """Device positions/orientations in a fixed (gauge-anchored) frame."""

    positions: np.ndarray  # (N, 2) meters
    orientations: np.ndarray  # (N,) radians
    gauge: str = "unspecified"
    residual_rms: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.orientations = np.asarray(self.orientations, dtype=np.float64).reshape(-1)
        if len(self.positions) != len(self.orientations):
            raise ValueError("positions and orientations must have equal length")

    @property
    def n_devices(self) -> int:
        return len(self.positions)


@dataclass
class UserLocation:
    position: tuple[float, float]
    cluster_size: int
    intersection_points: list[tuple[float, float]] = field(default_factory=list)


def layout_from_scene(scene) -> DeviceLayout:
    return DeviceLayout(
        positions=np.array([d.position for d in scene.devices]),
        orientations=np.array([d.orientation for d in scene.devices]),
        gauge="scene ground truth",
    )


def layout_to_dict(layout: DeviceLayout) -> dict:
    return {
        "devices": [
            {"position": list(map(float, p)), "orientation": float(o)}
            for p, o in zip(layout.positions, layout.orientations)
        ],
        "gauge": layout.gauge,
    }


def layout_from_dict(cfg: dict) -> DeviceLayout:
    devs = cfg["devices"]
    return DeviceLayout(
        positions=np.array([d["position"] for d in devs], dtype=np.float64),
        orientations=np.array([d["orientation"] for d in devs], dtype=np.float64),
        gauge=str(cfg.get("gauge", "unspecified")),
    )


def synth_pairwise_aoas(layout: DeviceLayout, noise_deg: float = 0.0, seed: int = 0) -> PairwiseAoas:
    """Ideal (optionally noise-perturbed) pairwise AoAs from a known layout."""
    rng = np.random.default_rng([seed, 0xA0A5])
    entries = {}
    n = layout.n_devices
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            theta = bearing(layout.positions[i], layout.positions[j]) - layout.orientations[i]
            if noise_deg > 0.0:
                theta += np.radians(noise_deg) * rng.standard_normal()
            entries[(i, j)] = wrap_angle(theta)
    return PairwiseAoas(entries, n)


def filter_reliable(
    p: PairwiseAoas,
    tol: float = DEFAULT_RECIPROCITY_TOL,
    orientations=None,
) -> PairwiseAoas:
    """Drop AoA pairs whose two directions are not mutually reciprocal.

    In the global frame (using the given orientation estimates, zeros by
    default) the bearing i->j must sit 180 degrees from the bearing j->i;
    pairs whose residual is >= tol, or that lack the reverse measurement,
    are removed. The result is symmetric by construction.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    psi = np.zeros(p.n_devices) if orientations is None else np.asarray(orientations, dtype=np.float64)
    kept = {}
    for (i, j), theta in p.entries.items():
        rev = p.entries.get((j, i))
        if rev is None:
            continue
        resid = wrap_pi((theta + psi[i]) - (rev + psi[j]) - np.pi)
        if abs(float(resid)) < tol:
            kept[(i, j)] = theta
    return PairwiseAoas(kept, p.n_devices)


def _connected_to_anchors(entries, n: int, anchor_ids) -> list[int]:
    """Devices unreachable from the anchor set over the constraint graph."""
    adj = [set() for _ in range(n)]
    for (i, j) in entries:
        adj[i].add(j)
        adj[j].add(i)
    seen = set(anchor_ids)
    stack = list(anchor_ids)
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return sorted(set(range(n)) - seen)


def p2p_localize(
    p: PairwiseAoas,
    anchors: dict[int, tuple[tuple[float, float], float]],
    scale: tuple[tuple[int, int], float] | None = None,
    restarts: int = 10,
    seed: int = 0,
) -> DeviceLayout:
    """Jointly optimize device positions and orientations from pairwise AoAs.

    anchors maps device index -> (position, orientation) for the devices
    whose pose is known (at least one, Assumption-style gauge fixing).
    Bearings carry no scale, so either provide >= 2 anchors or a known
    inter-device distance via scale=((i, j), meters); otherwise the result
    is normalized to unit RMS distance from the first anchor.

    The squared wrapped-angle objective is solved with a damped
    Gauss-Newton trust-region method from a geometry-seeded start plus
    random restarts; the lowest-cost solution wins.
    """
    n = p.n_devices
    if not anchors:
        raise LocalizationError("need at least one anchor pose")
    if n < 3:
        raise LocalizationError(
            f"P2P localization needs >= 3 devices (got {n}): with 2 devices the pair "
            "geometry is direction-only"
        )
    pairs = sorted(p.entries)
    if not pairs:
        raise LocalizationError("no pairwise AoA constraints")
    unreachable = _connected_to_anchors(pairs, n, anchors.keys())
    if unreachable:
        raise LocalizationError(
            f"constraint graph disconnected: device(s) {unreachable} unreachable from anchors"
        )

    free = [i for i in range(n) if i not in anchors]
    pos = np.zeros((n, 2))
    psi = np.zeros(n)
    for i, (xy, o) in anchors.items():
        pos[i] = xy
        psi[i] = o

    anchor_ids = sorted(anchors)
    a0 = anchor_ids[0]
    scale_guess = scale[1] if scale is not None else 1.0
    if len(anchor_ids) > 1:
        scale_guess = max(
            scale_guess,
            float(np.linalg.norm(pos[anchor_ids[1]] - pos[a0])),
        )

    theta = dict(p.entries)
    src_idx = np.array([i for i, _ in pairs])
    dst_idx = np.array([j for _, j in pairs])
    theta_arr = np.array([theta[k] for k in pairs])

    def pack(positions, headings):
        return np.concatenate([positions[free].ravel(), headings[free]])

    def unpack(x):
        positions = pos.copy()
        headings = psi.copy()
        if free:
            positions[free] = x[: 2 * len(free)].reshape(-1, 2)
            headings[free] = x[2 * len(free) :]
        return positions, headings

    def residuals(x):
        positions, headings = unpack(x)
        d = positions[dst_idx] - positions[src_idx]
        res = wrap_pi(np.arctan2(d[:, 1], d[:, 0]) - headings[src_idx] - theta_arr)
        if scale is not None:
            (si, sj), dist = scale
            res = np.append(res, np.linalg.norm(positions[sj] - positions[si]) - dist)
        return res

    def seeded_start(rng=None):
        positions = pos.copy()
        headings = psi.copy()
        placed = set(anchor_ids)
        # breadth-first placement along measured bearings from placed devices
        changed = True
        while changed:
            changed = False
            for (i, j) in pairs:
                if i in placed and j not in placed:
                    g = theta[(i, j)] + headings[i]
                    positions[j] = positions[i] + scale_guess * np.array([np.cos(g), np.sin(g)])
                    rev = theta.get((j, i))
                    headings[j] = wrap_angle(g + np.pi - rev) if rev is not None else 0.0
                    placed.add(j)
                    changed = True
        for i in free:
            if i not in placed:
                if rng is None:
                    positions[i] = pos[a0] + [scale_guess, 0.0]
                else:
                    positions[i] = pos[a0] + scale_guess * rng.uniform(-2, 2, 2)
                    headings[i] = rng.uniform(0, 2 * np.pi)
        if rng is not None:
            positions[free] += 0.3 * scale_guess * rng.standard_normal((len(free), 2))
            headings[free] = rng.uniform(0, 2 * np.pi, len(free))
        return pack(positions, headings)

    rng = np.random.default_rng([seed, 0xBEA2])
    starts = [seeded_start()] + [seeded_start(rng) for _ in range(max(0, restarts - 1))]

    best = None
    for x0 in starts:
        try:
            sol = least_squares(residuals, x0, xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=400)
        except Exception:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise LocalizationError("optimization failed from every start")

    positions, headings = unpack(best.x)
    gauge = f"anchored by device(s) {anchor_ids}"
    if scale is None and len(anchor_ids) < 2:
        d = np.linalg.norm(positions - positions[a0], axis=1)
        rms = float(np.sqrt(np.mean(d[d > 0] ** 2))) if np.any(d > 0) else 1.0
        positions = positions[a0] + (positions - positions[a0]) / rms
        gauge += "; scale-free, normalized to unit RMS anchor distance"
    elif scale is not None:
        gauge += f"; scale from pair {scale[0]}"

    res = residuals(pack(positions, headings))
    return DeviceLayout(
        positions=positions,
        orientations=np.mod(headings, 2 * np.pi),
        gauge=gauge,
        residual_rms=float(np.sqrt(np.mean(res**2))),
    )


def align_similarity(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Best similarity transform (rotation/translation/scale) of est onto truth."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    me, mt = est.mean(axis=0), truth.mean(axis=0)
    e, t = est - me, truth - mt
    cov = t.T @ e
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, d]) @ vt
    var = np.sum(e**2)
    sc = (s[0] + d * s[1]) / var if var > 0 else 1.0
    return (sc * (rot @ e.T)).T + mt


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Classic DBSCAN labels: -1 for noise, clusters numbered from 0."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    neighbors = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    labels = np.full(n, -2)  # -2 = unvisited
    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(neighbors[i]) < min_pts:
            labels[i] = -1
            continue
        labels[i] = cluster
        stack = list(neighbors[i])
        while stack:
            q = stack.pop()
            if labels[q] == -1:
                labels[q] = cluster
            if labels[q] != -2:
                continue
            labels[q] = cluster
            if len(neighbors[q]) >= min_pts:
                stack.extend(neighbors[q])
        cluster += 1
    return labels


def _ray_intersections(origins: np.ndarray, angles: np.ndarray) -> list[tuple[float, float]]:
    """All pairwise intersections with strictly positive ray parameters."""
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = []
    n = len(origins)
    for i in range(n):
        for j in range(i + 1, n):
            det = dirs[i, 0] * -dirs[j, 1] - (-dirs[j, 0]) * dirs[i, 1]
            if abs(det) < 1e-12:
                continue
            rhs = origins[j] - origins[i]
            t = (rhs[0] * -dirs[j, 1] - (-dirs[j, 0]) * rhs[1]) / det
            s = (dirs[i, 0] * rhs[1] - dirs[i, 1] * rhs[0]) / det
            if t > 1e-9 and s > 1e-9:
                x, y = origins[i] + t * dirs[i]
                pts.append((float(x), float(y)))
    return pts


def triangulate(layout: DeviceLayout, aoas: list[AoAEstimate]) -> UserLocation:
    """Locate the talker from per-device AoA rays.

    Casts a global-frame ray from every device, collects all forward
    pairwise intersections, clusters them with DBSCAN (eps 0.5 m, min 2
    points) and returns the centroid of the largest cluster. If no cluster
    forms, falls back to the centroid of all intersections with
    cluster_size = 0.
    """
    if len(aoas) != layout.n_devices:
        raise ValueError(f"expected {layout.n_devices} AoAs, got {len(aoas)}")
    if layout.n_devices < 2:
        raise ValueError("need at least 2 devices to triangulate")
    angles = layout.orientations + np.array([a.angle for a in aoas])
    pts = _ray_intersections(layout.positions, angles)
    if not pts:
        raise LocalizationError("AoA rays do not intersect (parallel or diverging)")
    arr = np.asarray(pts)
    labels = dbscan(arr, DBSCAN_EPS, DBSCAN_MIN_PTS)
    valid = labels[labels >= 0]
    if valid.size:
        counts = np.bincount(valid)
        best = int(np.argmax(counts))  # ties -> first-formed cluster
        members = arr[labels == best]
        centroid = members.mean(axis=0)
        return UserLocation((float(centroid[0]), float(centroid[1])), int(counts[best]), pts)
    centroid = arr.mean(axis=0)
    return UserLocation((float(centroid[0]), float(centroid[1])), 0, pts)
