"""P2P device localization and user triangulation tests."""

import numpy as np
import pytest

from facedir.aoa import AoAEstimate
from facedir.locate import (
    DeviceLayout,
    LocalizationError,
    PairwiseAoas,
    align_similarity,
    dbscan,
    filter_reliable,
    p2p_localize,
    synth_pairwise_aoas,
    triangulate,
)
from facedir.scene import bearing, wrap_angle


def square_layout(side=4.0):
    return DeviceLayout(
        positions=np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]]),
        orientations=np.array([0.1, 1.3, 2.9, 4.2]),
        gauge="test fixture",
    )


def random_layout(rng, n, span=5.0):
    while True:
        pos = rng.uniform(0.3, span - 0.3, size=(n, 2))
        d = np.linalg.norm(pos[:, None] - pos[None, :], axis=2)
        if np.min(d[np.triu_indices(n, 1)]) > 0.7:
            return DeviceLayout(pos, rng.uniform(0, 2 * np.pi, n), gauge="random")


def aoa_list(layout, user, noise_deg=0.0, rng=None):
    out = []
    for p, o in zip(layout.positions, layout.orientations):
        th = bearing(p, user) - o
        if noise_deg and rng is not None:
            th += np.radians(noise_deg) * rng.standard_normal()
        out.append(AoAEstimate(angle=wrap_angle(th), confidence=1.0))
    return out


class TestFilterReliable:
    def test_reciprocal_pairs_survive(self):
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        kept = filter_reliable(p, np.radians(10), layout.orientations)
        assert kept.entries == p.entries

    def test_corrupted_pair_removed(self):
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        p.entries[(0, 2)] = wrap_angle(p.entries[(0, 2)] + np.pi / 2)
        kept = filter_reliable(p, np.radians(10), layout.orientations)
        assert (0, 2) not in kept.entries
        assert (2, 0) not in kept.entries
        for key in p.entries:
            if key not in {(0, 2), (2, 0)}:
                assert key in kept.entries

    def test_vacuous_threshold_keeps_all(self):
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        p.entries[(0, 2)] = wrap_angle(p.entries[(0, 2)] + np.pi / 2)
        kept = filter_reliable(p, np.pi, layout.orientations)
        assert set(kept.entries) == set(p.entries)

    def test_symmetric_output(self):
        rng = np.random.default_rng(0)
        layout = random_layout(rng, 5)
        p = synth_pairwise_aoas(layout, noise_deg=8.0, seed=1)
        kept = filter_reliable(p, np.radians(10), layout.orientations)
        for (i, j) in kept.entries:
            assert (j, i) in kept.entries

    def test_never_removes_exactly_reciprocal(self):
        rng = np.random.default_rng(2)
        for seed in range(20):
            layout = random_layout(rng, 4)
            p = synth_pairwise_aoas(layout)
            kept = filter_reliable(p, np.radians(1e-6), layout.orientations)
            assert set(kept.entries) == set(p.entries)


class TestP2PLocalize:
    def test_noiseless_exact_recovery(self):
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        est = p2p_localize(
            p,
            anchors={0: (tuple(layout.positions[0]), float(layout.orientations[0]))},
            scale=((0, 1), float(np.linalg.norm(layout.positions[1] - layout.positions[0]))),
        )
        aligned = align_similarity(est.positions, layout.positions)
        assert np.max(np.linalg.norm(aligned - layout.positions, axis=1)) < 1e-6
        assert est.residual_rms < 1e-8

    def test_noisy_median_error(self):
        """sigma = 2 deg, 6 devices in 5x5 m: median error < 0.5 m (200 trials)."""
        rng = np.random.default_rng(3)
        errs = []
        for trial in range(200):
            layout = random_layout(rng, 6)
            p = synth_pairwise_aoas(layout, noise_deg=2.0, seed=trial)
            est = p2p_localize(
                p,
                anchors={0: (tuple(layout.positions[0]), float(layout.orientations[0]))},
                scale=((0, 1), float(np.linalg.norm(layout.positions[1] - layout.positions[0]))),
                restarts=4,
                seed=trial,
            )
            aligned = align_similarity(est.positions, layout.positions)
            errs.append(np.median(np.linalg.norm(aligned - layout.positions, axis=1)))
        assert np.median(errs) < 0.5

    def test_two_devices_fail(self):
        p = PairwiseAoas({(0, 1): 0.3, (1, 0): 0.7}, n_devices=2)
        with pytest.raises(LocalizationError, match="2 devices|3 devices"):
            p2p_localize(p, anchors={0: ((0.0, 0.0), 0.0)})

    def test_disconnected_graph_fails(self):
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        entries = {k: v for k, v in p.entries.items() if 3 not in k}
        with pytest.raises(LocalizationError, match=r"\[3\]"):
            p2p_localize(PairwiseAoas(entries, 4), anchors={0: ((0.0, 0.0), 0.1)})

    def test_multi_start_consistency(self):
        """Different init randomness converges to the same layout (post-align)."""
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        anchors = {0: (tuple(layout.positions[0]), float(layout.orientations[0]))}
        scale = ((0, 1), float(np.linalg.norm(layout.positions[1] - layout.positions[0])))
        results = []
        for seed in range(10):
            est = p2p_localize(p, anchors=anchors, scale=scale, seed=seed)
            results.append(align_similarity(est.positions, layout.positions))
        for r in results[1:]:
            assert np.max(np.linalg.norm(r - results[0], axis=1)) < 1e-3

    def test_unknown_orientations_recovered(self):
        layout = square_layout()
        p = synth_pairwise_aoas(layout)
        est = p2p_localize(
            p,
            anchors={0: (tuple(layout.positions[0]), float(layout.orientations[0]))},
            scale=((0, 1), float(np.linalg.norm(layout.positions[1] - layout.positions[0]))),
        )
        for i in range(4):
            diff = abs(float(np.mod(est.orientations[i] - layout.orientations[i] + np.pi,
                                    2 * np.pi) - np.pi))
            assert diff < 1e-6


class TestDbscan:
    def test_two_blobs_and_noise(self):
        pts = np.array(
            [[0, 0], [0.1, 0], [0, 0.1], [5, 5], [5.1, 5], [20, 20]], dtype=float
        )
        labels = dbscan(pts, eps=0.5, min_pts=2)
        assert labels[5] == -1
        assert labels[0] == labels[1] == labels[2]
        assert labels[3] == labels[4] != labels[0]

    def test_all_noise(self):
        pts = np.array([[0, 0], [10, 0], [0, 10]], dtype=float)
        assert np.all(dbscan(pts, eps=0.5, min_pts=2) == -1)


class TestTriangulate:
    def test_exact_rays(self):
        layout = square_layout()
        user = np.array([1.5, 2.2])  # off both diagonals: no collinear ray pair
        loc = triangulate(layout, aoa_list(layout, user))
        assert np.hypot(loc.position[0] - 1.5, loc.position[1] - 2.2) < 1e-9
        # all 6 pairwise intersections agree
        assert loc.cluster_size == 6

    def test_noisy_scaling_and_accuracy(self):
        """2 deg AoA noise, 5x5 m: 6-device median < 0.5 m and < 2-device median."""
        rng = np.random.default_rng(4)
        med = {}
        for n in (2, 6):
            errs = []
            for trial in range(500):
                layout = random_layout(rng, n)
                user = rng.uniform(0.8, 4.2, size=2)
                if np.min(np.linalg.norm(layout.positions - user, axis=1)) < 0.5:
                    continue
                try:
                    loc = triangulate(layout, aoa_list(layout, user, 2.0, rng))
                except LocalizationError:
                    continue
                errs.append(np.hypot(loc.position[0] - user[0], loc.position[1] - user[1]))
            med[n] = np.median(errs)
        assert med[6] < 0.5
        assert med[6] < med[2]

    def test_flipped_aoa_rejected_by_clustering(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for trial in range(50):
            layout = random_layout(rng, 6)
            user = rng.uniform(1.0, 4.0, size=2)
            if np.min(np.linalg.norm(layout.positions - user, axis=1)) < 0.6:
                continue
            clean = aoa_list(layout, user, 0.5, rng)
            base = triangulate(layout, clean)
            base_err = np.hypot(base.position[0] - user[0], base.position[1] - user[1])
            flipped = list(clean)
            flipped[2] = AoAEstimate(wrap_angle(clean[2].angle + np.pi), 1.0)
            loc = triangulate(layout, flipped)
            err = np.hypot(loc.position[0] - user[0], loc.position[1] - user[1])
            worst = max(worst, err - 2 * max(base_err, 0.05))
        assert worst <= 0.0

    def test_parallel_rays_fail(self):
        layout = DeviceLayout(
            positions=np.array([[0.0, 0.0], [1.0, 0.0]]),
            orientations=np.zeros(2),
        )
        aoas = [AoAEstimate(np.pi / 2, 1.0), AoAEstimate(np.pi / 2, 1.0)]
        with pytest.raises(LocalizationError, match="intersect"):
            triangulate(layout, aoas)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        layout = random_layout(rng, 5)
        user = np.array([2.2, 2.8])
        aoas = aoa_list(layout, user, 1.0, rng)
        loc1 = triangulate(layout, aoas)
        perm = [3, 0, 4, 2, 1]
        layout2 = DeviceLayout(layout.positions[perm], layout.orientations[perm])
        loc2 = triangulate(layout2, [aoas[i] for i in perm])
        assert np.allclose(loc1.position, loc2.position, atol=1e-9)
        assert loc1.cluster_size == loc2.cluster_size

    def test_two_devices_single_intersection(self):
        layout = DeviceLayout(
            positions=np.array([[0.0, 0.0], [4.0, 0.0]]),
            orientations=np.zeros(2),
        )
        user = np.array([2.0, 2.0])
        loc = triangulate(layout, aoa_list(layout, user))
        assert np.allclose(loc.position, user, atol=1e-9)
        assert loc.cluster_size == 0  # a single point forms no cluster
