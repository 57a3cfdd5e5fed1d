"""Implicit occupancy / segmentation / color fields."""

import numpy as np
import pytest

from jcr.errors import EmptyCloud, InputError, SingleClass
from jcr.fields import (
    FieldModel,
    PositionalEncoding,
    TrainConfig,
    gradient_check,
    query,
    train_color,
    train_occupancy,
    train_segmentation,
)
FAST = TrainConfig(epochs=60, hidden_size=64, seed=0)
# The MSE head needs a larger step size than the classification heads.
COLOR = TrainConfig(epochs=400, hidden_size=64, seed=0, learning_rate=0.05)


class _Cloud:
    """Minimal duck-typed stand-in for a labeled point cloud."""

    def __init__(self, points, colors=None, segmentation=None):
        self.points = np.asarray(points, dtype=float)
        self.colors = colors if colors is None else np.asarray(colors, float)
        self.segmentation = segmentation

    def __len__(self):
        return len(self.points)


class TestPositionalEncoding:
    def test_origin_single_frequency(self):
        enc = PositionalEncoding(num_frequencies=1, include_raw=True)
        got = enc.encode(np.zeros(3))[0]
        assert np.allclose(got, [0, 0, 0, 0, 0, 0, 1, 1, 1])

    def test_output_length(self):
        for L in (1, 4, 6):
            enc = PositionalEncoding(num_frequencies=L)
            assert enc.output_dim == 3 + 6 * L
            x = np.random.default_rng(0).uniform(-1, 1, size=(5, 3))
            assert enc.encode(x).shape == (5, 3 + 6 * L)

    def test_matches_scalar_evaluation(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, size=3)
        enc = PositionalEncoding(num_frequencies=3)
        got = enc.encode(x)[0]
        expect = list(x)
        for k in range(3):
            expect += list(np.sin(2.0**k * np.pi * x))
            expect += list(np.cos(2.0**k * np.pi * x))
        assert np.allclose(got, expect)


class TestGradientCheck:
    @pytest.mark.parametrize("head", ["occupancy", "segmentation", "color"])
    def test_backprop_matches_finite_differences(self, head):
        assert gradient_check(head, seed=0) < 1e-4


def _box_surface(rng, n=1500, center=(0.0, 0.0, 0.0), size=0.2):
    pts = rng.uniform(-size / 2, size / 2, size=(n, 3))
    axes = rng.integers(0, 3, n)
    signs = rng.choice([-1.0, 1.0], n)
    pts[np.arange(n), axes] = signs * size / 2
    return pts + np.asarray(center)


@pytest.fixture(scope="module")
def box_model():
    """Occupancy field trained on a box surface, shared across tests."""
    rng = np.random.default_rng(2)
    pts = _box_surface(rng, 2000)
    cfg = TrainConfig(epochs=200, hidden_size=128, seed=0)
    return train_occupancy(_Cloud(pts[:1600]), cfg), pts


class TestOccupancy:
    def test_box_surface_accuracy(self, box_model):
        model, pts = box_model
        rng = np.random.default_rng(20)
        held = pts[1600:]
        far = rng.uniform(0.3, 0.5, size=(400, 3)) * rng.choice(
            [-1.0, 1.0], size=(400, 3)
        )
        pos = query(model, held) > 0.5
        neg = query(model, far) <= 0.5
        acc = (pos.sum() + neg.sum()) / (len(held) + len(far))
        assert acc >= 0.95

    def test_single_point_loss_decreases(self):
        cfg = TrainConfig(epochs=30, hidden_size=8, seed=0)
        model = train_occupancy(_Cloud(np.array([[0.1, 0.2, 0.3]])), cfg)
        assert model.final_loss <= model.initial_loss

    def test_seeded_determinism(self):
        rng = np.random.default_rng(3)
        pts = _box_surface(rng, 300)
        cfg = TrainConfig(epochs=10, hidden_size=16, seed=5)
        a = train_occupancy(_Cloud(pts), cfg)
        b = train_occupancy(_Cloud(pts), cfg)
        assert np.array_equal(a.W1, b.W1)
        assert np.array_equal(a.W2, b.W2)

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            train_occupancy(_Cloud(np.zeros((0, 3))), FAST)

    def test_query_far_outside_bounds_is_free(self, box_model):
        model, _ = box_model
        far = np.array([[2.0, 2.0, 2.0], [-3.0, 0.0, 0.0]])
        assert (query(model, far) < 0.5).all()

    def test_query_at_training_positive_is_occupied(self, box_model):
        model, pts = box_model
        probs = query(model, pts[:200])
        assert (probs > 0.5).mean() >= 0.95


class TestSegmentation:
    def _two_clusters(self, rng, n=800):
        a = rng.normal(0.0, 0.03, size=(n // 2, 3))
        b = rng.normal(0.0, 0.03, size=(n // 2, 3)) + [0.5, 0.0, 0.0]
        pts = np.vstack([a, b])
        labels = np.concatenate([np.zeros(n // 2, int), np.ones(n // 2, int)])
        return pts, labels

    def test_two_clusters_accuracy(self):
        rng = np.random.default_rng(6)
        pts, labels = self._two_clusters(rng)
        perm = rng.permutation(len(pts))
        tr, he = perm[:600], perm[600:]
        model = train_segmentation(_Cloud(pts[tr], segmentation=labels[tr]), FAST)
        pred = np.argmax(query(model, pts[he]), axis=1)
        assert (model.class_values[pred] == labels[he]).mean() >= 0.98

    def test_single_class_rejected(self):
        with pytest.raises(SingleClass):
            train_segmentation(
                _Cloud(np.zeros((10, 3)), segmentation=np.ones(10, int)), FAST
            )

    def test_three_class_confusion_diagonal(self):
        rng = np.random.default_rng(7)
        centers = np.array([[0, 0, 0], [0.4, 0, 0], [0, 0.4, 0]], float)
        pts = np.vstack(
            [rng.normal(c, 0.02, size=(200, 3)) for c in centers]
        )
        labels = np.repeat([3, 7, 9], 200)  # non-contiguous class ids
        model = train_segmentation(_Cloud(pts, segmentation=labels), FAST)
        pred = model.class_values[np.argmax(query(model, pts), axis=1)]
        classes = [3, 7, 9]
        conf = np.zeros((3, 3))
        for t, p in zip(labels, pred):
            conf[classes.index(t), classes.index(p)] += 1
        for i in range(3):
            assert conf[i, i] > conf[i].sum() / 2

    def test_order_invariance_within_tolerance(self):
        rng = np.random.default_rng(8)
        pts, labels = self._two_clusters(rng)
        model_a = train_segmentation(_Cloud(pts, segmentation=labels), FAST)
        perm = rng.permutation(len(pts))
        model_b = train_segmentation(
            _Cloud(pts[perm], segmentation=labels[perm]), FAST
        )
        acc_a = (model_a.class_values[
            np.argmax(query(model_a, pts), axis=1)
        ] == labels).mean()
        acc_b = (model_b.class_values[
            np.argmax(query(model_b, pts), axis=1)
        ] == labels).mean()
        assert abs(acc_a - acc_b) <= 0.01


class TestColor:
    def test_constant_color(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(-0.1, 0.1, size=(500, 3))
        colors = np.tile([0.3, 0.6, 0.9], (500, 1))
        model = train_color(_Cloud(pts, colors=colors), COLOR)
        pred = query(model, pts)
        assert np.abs(pred - colors).max() < 0.02

    def test_out_of_range_colors_rejected(self):
        pts = np.zeros((4, 3))
        with pytest.raises(InputError):
            train_color(_Cloud(pts, colors=np.full((4, 3), 1.5)), FAST)

    def test_two_color_scene_mae(self):
        rng = np.random.default_rng(10)
        a = rng.normal(0, 0.03, size=(400, 3))
        b = rng.normal(0, 0.03, size=(400, 3)) + [0.5, 0, 0]
        pts = np.vstack([a, b])
        colors = np.vstack(
            [np.tile([0.9, 0.1, 0.1], (400, 1)), np.tile([0.1, 0.1, 0.9], (400, 1))]
        )
        perm = rng.permutation(800)
        tr, he = perm[:600], perm[600:]
        model = train_color(_Cloud(pts[tr], colors=colors[tr]), COLOR)
        mae = np.abs(query(model, pts[he]) - colors[he]).mean()
        assert mae <= 0.05

    def test_missing_colors_rejected(self):
        with pytest.raises(EmptyCloud):
            train_color(_Cloud(np.zeros((4, 3))), FAST)


class TestQueryAndSerialization:
    def test_empty_query(self):
        rng = np.random.default_rng(11)
        model = train_occupancy(
            _Cloud(_box_surface(rng, 200)),
            TrainConfig(epochs=5, hidden_size=8),
        )
        assert query(model, np.zeros((0, 3))).shape == (0,)

    def test_round_trip_preserves_predictions(self):
        rng = np.random.default_rng(12)
        pts, labels = rng.uniform(-0.2, 0.2, (300, 3)), None
        labels = (pts[:, 0] > 0).astype(int)
        model = train_segmentation(
            _Cloud(pts, segmentation=labels),
            TrainConfig(epochs=15, hidden_size=16),
        )
        back = FieldModel.from_dict(model.to_dict())
        q = rng.uniform(-0.2, 0.2, size=(50, 3))
        # Weights are serialized as float32, so predictions match loosely.
        assert np.abs(query(model, q) - query(back, q)).max() < 1e-5
        assert back.head == model.head
        assert np.array_equal(back.class_values, model.class_values)

    def test_round_trip_through_json(self):
        import json

        rng = np.random.default_rng(13)
        model = train_occupancy(
            _Cloud(_box_surface(rng, 200)),
            TrainConfig(epochs=5, hidden_size=8),
        )
        back = FieldModel.from_dict(json.loads(json.dumps(model.to_dict())))
        q = rng.uniform(-0.2, 0.2, size=(20, 3))
        assert np.abs(query(model, q) - query(back, q)).max() < 1e-5
