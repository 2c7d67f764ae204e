"""Architecture conformance: parameter counts, group isolation, length
preservation, determinism, and checkpoint round-trips."""

import numpy as np
import pytest

from skillcam import data, model, nn
from skillcam.errors import ConfigError, ShapeError
from skillcam.model import ChannelGrouping, Cluster, SubCluster


@pytest.fixture(scope="module")
def grouping():
    return data.canonical_grouping()


@pytest.fixture(scope="module")
def net(grouping):
    return model.build_model(grouping, seed=42)


def perturbed_grouping(swap_to: int):
    """Canonical grouping with channel 0 replaced by ``swap_to``."""
    base = data.canonical_grouping().to_dict()
    base["ML"]["cartesian"][0] = swap_to
    return base


class TestChannelGrouping:
    def test_canonical_structure(self, grouping):
        assert [c.name for c in grouping.clusters] == ["ML", "MR", "SL", "SR"]
        for cluster in grouping.clusters:
            assert tuple(len(sc.channels) for sc in cluster.subclusters) == (
                3,
                3,
                3,
                9,
                1,
            )
        flat = sorted(c for cl in grouping.clusters for c in cl.channels)
        assert flat == list(range(76))

    def test_repeated_channel_rejected(self):
        with pytest.raises(ConfigError):
            ChannelGrouping.from_dict(perturbed_grouping(swap_to=1))

    def test_wrong_cluster_count_rejected(self):
        good = data.canonical_grouping()
        with pytest.raises(ConfigError):
            ChannelGrouping(good.clusters[:3])

    def test_wrong_subcluster_sizes_rejected(self):
        clusters = list(data.canonical_grouping().clusters)
        subs = list(clusters[0].subclusters)
        subs[0] = SubCluster("cartesian", subs[0].channels[:2])
        clusters[0] = Cluster("ML", tuple(subs))
        with pytest.raises(ConfigError):
            ChannelGrouping(tuple(clusters))

    def test_dict_round_trip(self, grouping):
        assert ChannelGrouping.from_dict(grouping.to_dict()) == grouping


class TestBuildModel:
    def test_parameter_count_is_16003(self, net):
        # per-layer oracle: layer1 4x(3*(3*3*8+8) + (9*3*8+8) + (1*3*8+8)),
        # layer2 4x(40*3*16+16), layer3 64*3*32+32, head 32*3+3
        layer1 = 4 * (3 * (3 * 3 * 8 + 8) + (9 * 3 * 8 + 8) + (1 * 3 * 8 + 8))
        layer2 = 4 * (40 * 3 * 16 + 16)
        layer3 = 64 * 3 * 32 + 32
        head = 32 * 3 + 3
        assert layer1 == 1984 and layer2 == 7744 and layer3 == 6176 and head == 99
        assert net.parameter_count() == layer1 + layer2 + layer3 + head == 16003

    def test_same_seed_bit_identical(self, grouping):
        a = model.build_model(grouping, seed=7)
        b = model.build_model(grouping, seed=7)
        for (name_a, t_a), (name_b, t_b) in zip(a.named_tensors(), b.named_tensors()):
            assert name_a == name_b
            np.testing.assert_array_equal(t_a, t_b)

    def test_biases_start_zero(self, net):
        for name, tensor in net.named_tensors():
            if name.endswith("biases"):
                assert not tensor.any()

    def test_invalid_grouping_rejected(self):
        with pytest.raises(ConfigError):
            data.canonical_grouping(
                {"ML": {}, "MR": {}, "SL": {}, "SR": {}}
            )


class TestForward:
    def test_zero_input_gives_uniform_probs(self, net):
        logits, probs, a3 = model.forward(net, np.zeros((76, 5), dtype=np.float32))
        np.testing.assert_allclose(logits, 0.0)
        np.testing.assert_allclose(probs, 1 / 3, atol=1e-7)
        assert not a3.any()

    @pytest.mark.parametrize("length", [1, 37, 517])
    def test_a3_preserves_length(self, net, length):
        x = np.random.default_rng(length).normal(size=(76, length)).astype(np.float32)
        _, _, a3 = model.forward(net, x)
        assert a3.shape == (32, length)

    def test_wrong_channel_count_rejected(self, net):
        with pytest.raises(ShapeError):
            model.forward(net, np.zeros((75, 10), dtype=np.float32))

    def test_perturbing_mr_channel_isolates_other_clusters(self, net, grouping):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(76, 20)).astype(np.float32)
        mr_channel = grouping.clusters[1].subclusters[0].channels[0]
        x2 = x.copy()
        x2[mr_channel] += 1.0
        c1 = model.forward_cached(net, x)
        c2 = model.forward_cached(net, x2)
        for ci, name in enumerate(c.name for c in grouping.clusters):
            same = np.array_equal(c1.act2[ci], c2.act2[ci])
            assert same == (name != "MR"), name

    def test_group_isolation_all_20_subclusters(self, net, grouping):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(76, 12)).astype(np.float32)
        base = model.forward_cached(net, x)
        for si, (cluster_name, sc) in enumerate(grouping.subcluster_list()):
            x2 = x.copy()
            x2[sc.channels[0]] += 0.5
            other = model.forward_cached(net, x2)
            for sj in range(len(grouping.subcluster_list())):
                same = np.array_equal(base.pre1[sj], other.pre1[sj])
                assert same == (sj != si), (si, sj)

    def test_cluster_concatenation_order_fixed(self, net):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(76, 9)).astype(np.float32)
        cache = model.forward_cached(net, x)
        np.testing.assert_array_equal(cache.a2[:16], cache.act2[0])
        np.testing.assert_array_equal(cache.a2[48:], cache.act2[3])

    def test_logit_cam_identity(self, grouping):
        # bias-free logit equals the frame-mean of the class-weighted a3
        rng = np.random.default_rng(3)
        for seed in range(5):
            net = model.build_model(grouping, seed=seed)
            net.head.biases[:] = rng.normal(size=3).astype(np.float32)
            x = rng.normal(size=(76, int(rng.integers(2, 80)))).astype(np.float32)
            logits, _, a3 = model.forward(net, x)
            cam_values = net.head.weights @ a3
            lhs = cam_values.mean(axis=1)
            rhs = logits - net.head.biases
            denom = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-8)
            assert np.max(np.abs(lhs - rhs) / denom) < 1e-4


class TestPredict:
    def test_argmax(self, net):
        assert int(np.argmax([0.2, 0.5, 0.3])) == 1

    def test_tie_breaks_to_lowest_index(self, net):
        probs = np.array([1 / 3, 1 / 3, 1 / 3])
        assert int(np.argmax(probs)) == 0
        assert model.predict(net, np.zeros((76, 4), dtype=np.float32)) == 0

    def test_agrees_with_probs_argmax(self, net):
        rng = np.random.default_rng(4)
        for _ in range(100):
            x = rng.normal(size=(76, 10)).astype(np.float32)
            _, probs, _ = model.forward(net, x)
            assert model.predict(net, x) == int(np.argmax(probs))


class TestCheckpoint:
    def test_round_trip_bit_identical_predictions(self, net, tmp_path):
        net = net.copy()
        net.norm_stats = (
            np.linspace(-1, 1, 76, dtype=np.float32),
            np.linspace(0.5, 2, 76, dtype=np.float32),
        )
        path = tmp_path / "ckpt.json"
        model.save_checkpoint(net, path)
        loaded = model.load_checkpoint(path)
        for (_, a), (_, b) in zip(net.named_tensors(), loaded.named_tensors()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(net.norm_stats[0], loaded.norm_stats[0])
        np.testing.assert_array_equal(net.norm_stats[1], loaded.norm_stats[1])
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.normal(size=(76, 30)).astype(np.float32)
            a = model.forward(model_with_stats_applied(net), x)
            b = model.forward(model_with_stats_applied(loaded), x)
            np.testing.assert_array_equal(a[0], b[0])
            np.testing.assert_array_equal(a[1], b[1])

    def test_rejects_unknown_version(self, net, tmp_path):
        path = tmp_path / "ckpt.json"
        model.save_checkpoint(net, path)
        doc = path.read_text().replace('"format_version": 1', '"format_version": 9')
        path.write_text(doc)
        with pytest.raises(ConfigError):
            model.load_checkpoint(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            model.load_checkpoint(path)


def model_with_stats_applied(net):
    # helper so both round-trip sides go through the identical code path
    return net


class TestGradcheckFullModel:
    def test_assembled_gradients_match_fd(self, grouping):
        from skillcam import gradcheck

        net = model.build_model(grouping, seed=11, dtype=np.float64)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(76, 10))
        report = gradcheck.check_model(net, x, label=2, samples_per_tensor=4, rng=rng)
        assert report.passed, "\n".join(report.lines())

    def test_corrupted_gradient_names_the_layer(self, grouping):
        from skillcam import gradcheck

        net = model.build_model(grouping, seed=12, dtype=np.float64)
        rng = np.random.default_rng(12)
        x = rng.normal(size=(76, 8))
        report = gradcheck.check_model(
            net, x, label=0, samples_per_tensor=4, rng=rng,
            corrupt="layer2.1.kernels",
        )
        assert not report.passed
        failing = [c.name for c in report.checks if not c.passed]
        assert failing == ["layer2.1.kernels"]
