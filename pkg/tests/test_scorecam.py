import numpy as np
import pytest

from sdmnet import scorecam as S
from sdmnet import tensor as T
from sdmnet.imageio import read_png, read_planar
from sdmnet.model import ModelConfig, build_model

SMALL = ModelConfig(stem_width=8, stages=[(8, 1, 2), (16, 1, 2)], expansion=2, head_hidden=8, seed=2)


class LinearToy:
    """Stand-in network whose class-1 logit is sum(v * x) and class-0 logit is zero."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=np.float64)
        size = self.v.shape[-1]
        self.cfg = ModelConfig(in_channels=1, image_size=size)
        self.training = False

    def eval(self):
        self.training = False

    def train(self, mode=True):
        self.training = mode

    def __call__(self, x):
        z = np.tensordot(x.numpy(), self.v, axes=([1, 2, 3], [0, 1, 2]))
        return T.Tensor(np.stack([np.zeros_like(z), z], axis=1))


@pytest.fixture(scope="module")
def model():
    m = build_model(SMALL)
    m.eval()
    return m


@pytest.fixture
def image(rng):
    return rng.random((1, 64, 64)).astype(np.float32)


class TestWeights:
    def test_singleton_map_weight_is_one(self, model, image, rng):
        stack = S.ActivationStack(rng.random((1, 4, 4)), "stage2")
        np.testing.assert_allclose(S.cic_scores(model, image, stack), [1.0])

    def test_identical_maps_uniform(self, model, image, rng):
        a = rng.random((4, 4))
        stack = S.ActivationStack(np.stack([a] * 5), "stage2")
        np.testing.assert_allclose(S.cic_scores(model, image, stack), np.full(5, 0.2), atol=1e-12)

    def test_toy_softmax_of_masked_scores(self, rng):
        v = rng.normal(size=(1, 4, 4))
        toy = LinearToy(v)
        x = rng.random((1, 4, 4))
        maps = rng.random((2, 4, 4))
        stack = S.ActivationStack(maps, "toy")
        got = S.cic_scores(toy, x, stack)
        scores = []
        for a in maps:
            m = (a - a.min()) / (a.max() - a.min())
            scores.append(np.sum(v * x * m))
        e = np.exp(np.array(scores))
        np.testing.assert_allclose(got, e / e.sum(), atol=1e-6)

    def test_batching_does_not_change_weights(self, model, image, rng):
        stack = S.ActivationStack(rng.random((7, 4, 4)), "stage2")
        np.testing.assert_allclose(S.cic_scores(model, image, stack, batch_size=2),
                                   S.cic_scores(model, image, stack, batch_size=16), rtol=1e-6)


class TestCompose:
    def test_two_map_hand_formula(self):
        a = np.array([[0.0, 1.0], [2.0, 3.0]])
        b = np.array([[4.0, 0.0], [1.0, 0.0]])
        w = np.array([0.25, 0.75])
        # 0.25 a + 0.75 b = [[3, 0.25], [1.25, 0.75]] -> min 0.25, max 3
        want = (np.array([[3.0, 0.25], [1.25, 0.75]]) - 0.25) / 2.75
        got = S.compose_cam(S.ActivationStack(np.stack([a, b]), "toy"), w)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_negative_sum_rectified(self):
        a = np.array([[1.0, -2.0], [0.5, -1.0]])
        got = S.compose_cam(S.ActivationStack(a[None], "toy"), [1.0])
        np.testing.assert_allclose(got, [[1.0, 0.0], [0.5, 0.0]], atol=1e-12)

    def test_permutation_invariant(self, rng):
        maps, w = rng.normal(size=(6, 5, 5)), rng.random(6)
        perm = rng.permutation(6)
        a = S.compose_cam(S.ActivationStack(maps, "x"), w)
        b = S.compose_cam(S.ActivationStack(maps[perm], "x"), w[perm])
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_weight_count_checked(self, rng):
        with pytest.raises(ValueError):
            S.compose_cam(S.ActivationStack(rng.random((3, 2, 2)), "x"), [0.5, 0.5])

    def test_normalize_constant_is_zero(self):
        np.testing.assert_array_equal(S.normalize_map(np.full((3, 3), 4.0)), np.zeros((3, 3)))

    def test_empty_stack_rejected(self):
        with pytest.raises(ValueError):
            S.ActivationStack(np.zeros((0, 2, 2)), "x")


class TestScoreCam:
    def test_cam_range_and_shape(self, model, image):
        res = S.score_cam(model, image)
        assert res.cam.shape == (64, 64)
        assert res.cam.min() >= 0.0 and res.cam.max() <= 1.0
        assert res.layer == "stage2"
        assert res.weights.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("layer", ["stem", "stage1"])
    def test_every_layer(self, model, image, layer):
        res = S.score_cam(model, image, layer=layer)
        assert len(res.weights) == S.extract_activations(model, image, layer).maps.shape[0]
        assert 0.0 <= res.cam.min() and res.cam.max() <= 1.0

    def test_unknown_layer(self, model, image):
        with pytest.raises(KeyError):
            S.extract_activations(model, image, "stage9")

    def test_wrong_image_size(self, model):
        with pytest.raises(T.DimensionError):
            S.score_cam(model, np.zeros((32, 32), np.float32))

    def test_training_mode_restored(self, model, image):
        model.train()
        S.extract_activations(model, image)
        assert model.training
        model.eval()


class TestExport:
    def test_overlay_png(self, tmp_path, rng):
        img = rng.integers(0, 256, (64, 64)).astype(np.uint8)
        cam = rng.random((64, 64))
        rgb = S.overlay_export(img, cam, tmp_path / "o.png")
        back = read_png(tmp_path / "o.png")
        assert back.shape == (64, 64, 3)
        np.testing.assert_array_equal(back, rgb)

    def test_overlay_blend_zero_alpha_is_gray(self, rng):
        img = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        rgb = S.overlay_rgb(img, rng.random((8, 8)), alpha=0.0)
        np.testing.assert_array_equal(rgb[..., 0], img)

    def test_overlay_size_mismatch(self):
        with pytest.raises(ValueError):
            S.overlay_rgb(np.zeros((8, 8)), np.zeros((4, 4)))

    def test_raw_round_trip(self, tmp_path, rng):
        cam = rng.random((16, 16)).astype(np.float32)
        S.export_raw(cam, tmp_path / "c.cam")
        np.testing.assert_array_equal(read_planar(tmp_path / "c.cam", b"CAM1")[0], cam)
