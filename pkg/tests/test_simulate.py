import numpy as np
import pytest

from survnetmix.exceptions import CensoringCalibrationError
from survnetmix.simulate import (
    SETTING_SHARED,
    SimDesign,
    balanced_sizes,
    default_beta_vectors,
    generate_dataset,
    generate_networks,
    imbalanced_sizes,
)


def small_design(**kw):
    base = dict(K=2, p=30, group_sizes=(40, 40), topology="power-law",
                shared_subnets=3, seed=0)
    base.update(kw)
    return SimDesign(**base).validate()


class TestSimDesign:
    def test_setting_map(self):
        assert SETTING_SHARED == {"S1": 3, "S2": 5, "S3": 7}
        assert SimDesign.from_setting("S3", K=2, p=30, group_sizes=(10, 10)).shared_subnets == 7

    def test_rejects_indivisible_p(self):
        with pytest.raises(ValueError):
            small_design(p=31)

    def test_rejects_unknown_topology(self):
        with pytest.raises(ValueError):
            small_design(topology="lattice")

    def test_size_helpers(self):
        assert balanced_sizes(3) == (150, 150, 150)
        assert imbalanced_sizes(2) == (100, 200)
        assert imbalanced_sizes(3) == (100, 150, 200)

    def test_default_betas(self):
        beta = default_beta_vectors(3, 10)
        np.testing.assert_array_equal(beta[0, :5], 2.0)
        np.testing.assert_array_equal(beta[1, :5], -2.0)
        np.testing.assert_array_equal(beta[2, 2:7], 1.0)
        assert not beta[:, 7:].any()


class TestGenerateNetworks:
    def test_full_sharing_gives_identical_adjacency(self):
        design = small_design(shared_subnets=10)
        _, adj = generate_networks(design)
        np.testing.assert_array_equal(adj[0], adj[1])

    def test_er_zero_prob_gives_diagonal(self):
        design = small_design(topology="erdos-renyi", er_prob=0.0)
        nets, adj = generate_networks(design)
        assert not adj.any()
        for k in range(2):
            np.testing.assert_array_equal(nets[k], np.diag(np.diag(nets[k])))

    @pytest.mark.parametrize("topology", ["power-law", "nearest-neighbor", "erdos-renyi"])
    def test_always_positive_definite(self, topology):
        for seed in range(60):
            design = small_design(topology=topology, seed=seed)
            nets, _ = generate_networks(design)
            for k in range(design.K):
                assert np.linalg.eigvalsh(nets[k]).min() > 0

    def test_shared_blocks_share_pattern_and_sign(self):
        design = small_design(shared_subnets=3, seed=4)
        nets, adj = generate_networks(design)
        b = design.block_size
        for blk in range(3):
            lo = blk * b
            sl = slice(lo, lo + b)
            np.testing.assert_array_equal(adj[0][sl, sl], adj[1][sl, sl])
            np.testing.assert_array_equal(
                np.sign(nets[0][sl, sl]) * (adj[0][sl, sl]),
                np.sign(nets[1][sl, sl]) * (adj[1][sl, sl]),
            )

    def test_edge_weights_within_band(self):
        design = small_design(seed=9)
        nets, adj = generate_networks(design)
        off = np.abs(nets[adj])
        assert off.min() >= 0.4 and off.max() <= 0.8

    def test_same_seed_bit_identical(self):
        design = small_design(seed=123)
        n1, a1 = generate_networks(design)
        n2, a2 = generate_networks(design)
        np.testing.assert_array_equal(n1, n2)
        np.testing.assert_array_equal(a1, a2)


class TestGenerateDataset:
    def test_zero_target_rate_keeps_all_events(self):
        design = small_design(censoring_rate=0.0)
        nets, _ = generate_networks(design)
        d, labels, truth = generate_dataset(design, nets)
        assert d.delta.min() == 1.0
        np.testing.assert_array_equal(d.t, d.t)  # t equals the latent outcome

    def test_group_sizes_and_labels(self):
        design = small_design(group_sizes=(25, 55))
        nets, _ = generate_networks(design)
        d, labels, truth = generate_dataset(design, nets)
        assert d.n == 80
        assert (labels == 1).sum() == 25 and (labels == 2).sum() == 55
        np.testing.assert_allclose(truth.pi, [25 / 80, 55 / 80])

    def test_truth_params_rescaling(self):
        design = small_design(noise_sd=0.01)
        nets, _ = generate_networks(design)
        _, _, truth = generate_dataset(design, nets)
        np.testing.assert_allclose(truth.tau, 100.0)
        np.testing.assert_allclose(truth.beta[0, :5], 200.0)
        assert not truth.mu.any()

    def test_realized_censoring_near_target(self):
        # default-scale design, many seeds: average rate close to 20% and
        # every realization within sampling slack of the target
        rates = []
        for seed in range(100):
            design = SimDesign(K=2, p=100, group_sizes=(150, 150), seed=seed).validate()
            nets, _ = generate_networks(design)
            d, _, _ = generate_dataset(design, nets)
            rates.append(1.0 - d.delta.mean())
        rates = np.array(rates)
        assert 0.15 <= rates.mean() <= 0.25
        assert rates.min() >= 0.10 and rates.max() <= 0.30

    def test_subgroup_sample_means_near_zero(self):
        design = small_design(group_sizes=(200, 200), seed=3)
        nets, _ = generate_networks(design)
        d, labels, truth = generate_dataset(design, nets)
        for k in (1, 2):
            Xk = d.X[labels == k]
            sd = Xk.std(axis=0)
            bound = 4.0 * sd / np.sqrt(len(Xk))
            assert (np.abs(Xk.mean(axis=0)) < np.maximum(bound, 0.2)).all()

    def test_same_seed_bit_identical(self):
        design = small_design(seed=42)
        nets, _ = generate_networks(design)
        d1, l1, t1 = generate_dataset(design, nets)
        d2, l2, t2 = generate_dataset(design, nets)
        np.testing.assert_array_equal(d1.X, d2.X)
        np.testing.assert_array_equal(d1.t, d2.t)
        np.testing.assert_array_equal(l1, l2)

    def test_extreme_rate_still_calibrates(self):
        design = small_design(censoring_rate=0.95, group_sizes=(200, 200))
        nets, _ = generate_networks(design)
        d, _, _ = generate_dataset(design, nets)
        assert 1.0 - d.delta.mean() > 0.85

    def test_unbracketable_target_raises(self):
        from survnetmix.simulate import _calibrate_censoring_scale

        with pytest.raises(CensoringCalibrationError):
            _calibrate_censoring_scale(
                np.array([1.0]), np.array([1.0]), 1.5, np.random.default_rng(0)
            )
