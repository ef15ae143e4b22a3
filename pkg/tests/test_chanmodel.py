import numpy as np
import pytest

from rankcs import chanmodel, linalg
from rankcs.chanmodel import ChannelConfig, PathCluster, Ray


def single_path_cluster(aoa, aod, gain=1.0 + 0j):
    return PathCluster(mean_aoa=aoa, mean_aod=aod, cluster_delay=0.0,
                       rays=[Ray(gain=gain, aoa_offset=0.0, aod_offset=0.0, ray_delay=0.0)])


class TestSteeringVector:
    def test_broadside(self):
        assert np.allclose(chanmodel.steering_vector(0.0, 4), np.full(4, 0.5))

    def test_endfire(self):
        v = chanmodel.steering_vector(np.pi / 2, 2, 0.5)
        assert np.allclose(v, np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-12)

    def test_thirty_degrees(self):
        v = chanmodel.steering_vector(np.pi / 6, 2, 0.5)
        assert np.allclose(v, np.array([1.0, 1j]) / np.sqrt(2), atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_unit_norm(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.uniform(-np.pi / 2, np.pi / 2)
        n = rng.integers(1, 40)
        assert abs(np.linalg.norm(chanmodel.steering_vector(theta, n)) - 1.0) <= 1e-12

    def test_zero_antennas(self):
        with pytest.raises(ValueError):
            chanmodel.steering_vector(0.0, 0)


class TestDictionary:
    def test_two_columns(self):
        cfg = ChannelConfig(n_bs=4, n_ms=2)
        dic = chanmodel.build_dictionary(cfg, 2, 2)
        assert dic.theta_ms.shape == (2, 2)
        assert not np.allclose(dic.theta_ms[:, 0], dic.theta_ms[:, 1])

    def test_dft_like_when_square(self):
        cfg = ChannelConfig(n_bs=8, n_ms=8)
        dic = chanmodel.build_dictionary(cfg, 8, 8)
        gram = dic.theta_ms.conj().T @ dic.theta_ms
        assert np.allclose(gram, np.eye(8), atol=1e-10)

    def test_mutual_coherence(self):
        cfg = ChannelConfig(n_bs=8, n_ms=8)
        dic = chanmodel.build_dictionary(cfg, 16, 16)
        gram = np.abs(dic.theta_ms.conj().T @ dic.theta_ms)
        np.fill_diagonal(gram, 0.0)
        assert gram.max() < 1.0

    def test_grid_sorted_and_bounded(self):
        cfg = ChannelConfig()
        dic = chanmodel.build_dictionary(cfg, 13, 9)
        for grid in (dic.grid_aoas, dic.grid_aods):
            assert (np.diff(grid) > 0).all()
            assert grid[0] > -np.pi / 2 and grid[-1] < np.pi / 2
        norms = np.linalg.norm(dic.theta_ms, axis=0)
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            chanmodel.build_dictionary(ChannelConfig(), 1, 4)


class TestRaisedCosine:
    def test_center(self):
        assert chanmodel.raised_cosine(0.0, 1e-7, 0.25) == pytest.approx(1.0)

    def test_integer_zeros(self):
        for d in (1, 2, 3):
            assert chanmodel.raised_cosine(d * 1e-7, 1e-7, 0.25) == pytest.approx(0.0, abs=1e-12)

    def test_removable_singularity(self):
        beta = 0.25
        ts = 1e-7
        x = ts / (2 * beta)
        val = chanmodel.raised_cosine(x, ts, beta)
        near = chanmodel.raised_cosine(x * (1 + 1e-9), ts, beta)
        assert np.isfinite(val)
        assert val == pytest.approx(near, rel=1e-5)


class TestGenerateChannel:
    def test_single_path_outer_product(self):
        cfg = ChannelConfig(n_bs=8, n_ms=4, n_clusters=1)
        dic = chanmodel.build_dictionary(cfg, 16, 16)
        aoa, aod = dic.grid_aoas[3], dic.grid_aods[10]
        real = chanmodel.assemble_channel([single_path_cluster(aoa, aod)], cfg, dic)
        expected = np.sqrt(8 * 4) * np.outer(
            chanmodel.steering_vector(aoa, 4), chanmodel.steering_vector(aod, 8).conj()
        )
        assert np.allclose(real.h, expected, atol=1e-10)
        assert real.true_rank == 1
        assert linalg.numerical_rank(real.h) == 1

    def test_three_clusters_rank_three(self):
        cfg = ChannelConfig(n_bs=8, n_ms=8, n_clusters=3)
        dic = chanmodel.build_dictionary(cfg, 16, 16)
        real = chanmodel.generate_channel(cfg, dic, 0, 7)
        s = np.linalg.svd(real.h, compute_uv=False)
        assert real.true_rank == 3
        assert (s[:3] > 1e-8 * s[0]).all() and s[3] <= 1e-8 * s[0]

    def test_determinism(self):
        cfg = ChannelConfig(n_bs=4, n_ms=4, n_clusters=2)
        dic = chanmodel.build_dictionary(cfg, 8, 8)
        a = chanmodel.generate_channel(cfg, dic, 0, 99)
        b = chanmodel.generate_channel(cfg, dic, 0, 99)
        assert np.array_equal(a.h, b.h)

    def test_tap_sum(self):
        cfg = ChannelConfig(n_bs=4, n_ms=4, n_clusters=2, delay_taps=4)
        dic = chanmodel.build_dictionary(cfg, 8, 8)
        real = chanmodel.generate_channel(cfg, dic, 0, 5)
        assert np.allclose(real.h, np.sum(real.taps, axis=0), atol=1e-10)
        assert len(real.taps) == 4

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_rank_equals_grid_pairs(self, k):
        cfg = ChannelConfig(n_bs=8, n_ms=8, n_clusters=k)
        dic = chanmodel.build_dictionary(cfg, 16, 16)
        real = chanmodel.generate_channel(cfg, dic, 0, 100 + k)
        s = np.linalg.svd(real.h, compute_uv=False)
        assert real.true_rank == k
        assert int(np.count_nonzero(s > 1e-8 * s[0])) == k

    def test_on_grid_support_in_dictionary_span(self):
        cfg = ChannelConfig(n_bs=8, n_ms=8, n_clusters=2)
        dic = chanmodel.build_dictionary(cfg, 16, 16)
        real = chanmodel.generate_channel(cfg, dic, 0, 11)
        cols = []
        for c in real.clusters:
            i = chanmodel.snap_to_grid(c.mean_aoa, dic.grid_aoas)
            j = chanmodel.snap_to_grid(c.mean_aod, dic.grid_aods)
            cols.append(j * dic.n_aoa + i)
        a = dic.sensing_matrix()[:, sorted(cols)]
        v = linalg.vec(real.h)
        proj = a @ np.linalg.lstsq(a, v, rcond=None)[0]
        assert np.linalg.norm(v - proj) <= 1e-8 * np.linalg.norm(v)


class TestEvolveChannel:
    def make(self, k=3, **kw):
        cfg = ChannelConfig(n_bs=4, n_ms=4, n_clusters=k, **kw)
        dic = chanmodel.build_dictionary(cfg, 8, 8)
        return cfg, dic, chanmodel.generate_channel(cfg, dic, 0, 1)

    def test_static_evolution_redraws_gains_only(self):
        cfg, dic, prev = self.make(drift_std_rad=0.0)
        nxt = chanmodel.evolve_channel(prev, cfg, dic, 2)
        assert nxt.time_index == 1
        assert len(nxt.clusters) == len(prev.clusters)
        assert nxt.true_rank == prev.true_rank
        for a, b in zip(prev.clusters, nxt.clusters):
            assert a.mean_aoa == b.mean_aoa and a.mean_aod == b.mean_aod
            assert all(ra.gain != rb.gain for ra, rb in zip(a.rays, b.rays))

    def test_forced_death(self):
        cfg, dic, prev = self.make(k=3, death_prob=1.0, drift_std_rad=0.0)
        nxt = chanmodel.evolve_channel(prev, cfg, dic, 3)
        assert len(nxt.clusters) == 2
        assert nxt.true_rank == prev.true_rank - 1

    def test_death_floors_at_one_cluster(self):
        cfg, dic, prev = self.make(k=1, death_prob=1.0, drift_std_rad=0.0)
        nxt = chanmodel.evolve_channel(prev, cfg, dic, 4)
        assert len(nxt.clusters) == 1

    def test_forced_birth(self):
        cfg, dic, prev = self.make(k=2, birth_prob=1.0, drift_std_rad=0.0)
        nxt = chanmodel.evolve_channel(prev, cfg, dic, 5)
        assert len(nxt.clusters) == 3

    def test_drift_random_walk_statistic(self):
        # Monte-Carlo oracle: per-step |Gaussian| has mean sigma*sqrt(2/pi),
        # so the summed absolute drift over 100 steps concentrates around
        # 100*sigma*sqrt(2/pi) with std sqrt(100)*sigma*sqrt(1-2/pi).
        sigma, steps, trials = 0.01, 100, 1000
        cfg = ChannelConfig(n_bs=2, n_ms=2, n_clusters=1, drift_std_rad=sigma)
        dic = chanmodel.build_dictionary(cfg, 4, 4)
        start = chanmodel.assemble_channel([single_path_cluster(0.0, 0.0)], cfg, dic)
        total = np.empty(trials)
        for t in range(trials):
            real = start
            acc = 0.0
            for s in range(steps):
                nxt = chanmodel.evolve_channel(real, cfg, dic, 10_000 + t * steps + s)
                acc += abs(nxt.clusters[0].mean_aoa - real.clusters[0].mean_aoa)
                real = nxt
            total[t] = acc
        expected = steps * sigma * np.sqrt(2 / np.pi)
        se = np.sqrt(steps) * sigma * np.sqrt(1 - 2 / np.pi) / np.sqrt(trials)
        assert abs(total.mean() - expected) <= 3 * se


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(spacing_ratio=0.0)
    with pytest.raises(ValueError):
        ChannelConfig(delay_taps=0)
    with pytest.raises(ValueError):
        ChannelConfig(rolloff=1.5)
    with pytest.raises(ValueError):
        PathCluster(mean_aoa=0.0, mean_aod=0.0, cluster_delay=0.0, rays=[])
