import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbgnn.errors import ParameterError, ShapeError
from mbgnn.model import CombineMode, EncoderSpec, LayerSpec, ModelSpec, init_model
from mbgnn.rng import SeededRng
from mbgnn.robustness import (
    AttenuationVariant,
    Corruption,
    corrupt,
    gaussian_blur,
    gaussian_kernel_2d,
    model_encoder,
    robustness_curve,
    verify_attenuation,
)
from mbgnn.training import accuracy_transductive

from oracles import direct_blur


def attenuation_setup(seed, k, b=16, dim=8, width=8):
    r = SeededRng(seed)
    spec = ModelSpec(EncoderSpec("mlp", dim, (width,)), (LayerSpec(width, CombineMode.weighted_add(1.0)),), k, 4)
    model = init_model(spec, r.stream("init"))
    return model_encoder(model), r.normal((width, 4)), r.normal((b, dim)), r


@pytest.mark.parametrize("k", [1, 3, 7, 15])
def test_gcn_attenuation_is_one_over_k_plus_one(k):
    enc, w, batch, r = attenuation_setup(k, k)
    rep = verify_attenuation(enc, w, batch, k, r.normal(8, 1e-3), AttenuationVariant("gcn_self_loop"))
    assert rep.expected == 1.0 / (k + 1)
    assert rep.relative_error <= 1e-9


def test_k3_ratio_is_a_quarter():
    enc, w, batch, r = attenuation_setup(0, 3)
    rep = verify_attenuation(enc, w, batch, 3, r.normal(8, 0.01), AttenuationVariant("gcn_self_loop"))
    assert abs(rep.ratio - 0.25) <= 1e-9


@pytest.mark.parametrize("variant", [AttenuationVariant("weighted_add", 0.7), AttenuationVariant("dropfeat_eval", 0.4)])
def test_weighted_and_dropfeat_ratios(variant):
    enc, w, batch, r = attenuation_setup(1, 5)
    rep = verify_attenuation(enc, w, batch, 5, r.normal(8, 1e-2), variant)
    assert abs(rep.ratio - variant.value) <= 1e-9 * variant.value


def test_ratio_independent_of_perturbation_direction_and_size():
    enc, w, batch, r = attenuation_setup(2, 3)
    ratios = []
    for i in range(10):
        delta = r.normal(8, 10.0 ** -(i % 5 + 1))
        ratios.append(verify_attenuation(enc, w, batch, 3, delta, AttenuationVariant("gcn_self_loop"), node=i).ratio)
    assert max(abs(x - 0.25) for x in ratios) <= 1e-9


def test_attenuation_report_descriptive_fields():
    enc, w, batch, r = attenuation_setup(3, 3)
    rep = verify_attenuation(enc, w, batch, 3, r.normal(8, 5.0), AttenuationVariant("gcn_self_loop"))
    assert rep.delta_sup_norm > 0 and rep.delta_mbgnn_norm > 0
    assert isinstance(rep.neighbors_changed, bool)
    with pytest.raises(ParameterError):
        AttenuationVariant("gat")


def test_blur_of_delta_matches_direct_convolution():
    image = np.zeros((2, 9, 9))
    image[0, 4, 4] = 1.0
    image[1, 0, 2] = 1.0
    for sigma in (0.5, 1.0, 1.3):
        k = gaussian_kernel_2d(sigma)
        np.testing.assert_allclose(gaussian_blur(image, sigma), direct_blur(image, k), atol=1e-10, rtol=0)


def test_blur_random_image_matches_direct_convolution():
    image = SeededRng(4).normal((3, 8, 8))
    np.testing.assert_allclose(gaussian_blur(image, 0.8), direct_blur(image, gaussian_kernel_2d(0.8)), atol=1e-10, rtol=0)


def test_blur_preserves_constant_images_and_sigma_zero():
    image = np.full((1, 6, 6), 3.0)
    np.testing.assert_allclose(gaussian_blur(image, 1.0), image, atol=1e-12)
    x = SeededRng(5).normal((1, 4, 4))
    assert np.array_equal(gaussian_blur(x, 0), x)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63), st.floats(0.0, 3.0))
def test_corrupt_is_reproducible(seed, sigma):
    x = SeededRng(6).normal(16)
    for kind in ("noise", "blur"):
        c = Corruption(kind, sigma)
        a = corrupt(x, c, SeededRng(seed), (1, 4, 4))
        b = corrupt(x, c, SeededRng(seed), (1, 4, 4))
        assert a.tobytes() == b.tobytes()


def test_corrupt_errors():
    with pytest.raises(ShapeError):
        corrupt(np.zeros(16), Corruption("blur", 1.0), SeededRng(0))
    with pytest.raises(ShapeError):
        corrupt(np.zeros(15), Corruption("blur", 1.0), SeededRng(0), (1, 4, 4))
    with pytest.raises(ParameterError):
        Corruption("noise", -1.0)
    with pytest.raises(ParameterError):
        Corruption("jpeg", 1.0)


def test_robustness_curve_severity_zero_is_clean_accuracy(make_model):
    from mbgnn.data import synthetic_blobs
    from mbgnn.training import Adam, train

    ds = synthetic_blobs(3, 6, 0.4, 260, SeededRng(7), center_scale=1.5)
    model = make_model(CombineMode.weighted_add(0.5), seed=8, classes=3)
    train(model, ds.features[:200], ds.labels[:200], Adam(1e-2), 10, 20, SeededRng(9))
    x, y, pool = ds.features[200:], ds.labels[200:], ds.features[:200]
    rng = SeededRng(10)
    curve = robustness_curve(model, x, y, pool, "noise", [0.0, 1.0, 4.0], rng, 20)
    clean = accuracy_transductive(model, x, y, pool, 20, rng.stream("context"))
    assert curve[0] == (0.0, clean)
    assert curve[-1][1] <= curve[0][1]
