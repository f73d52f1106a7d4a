import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mbgnn.model import CombineMode, EncoderSpec, LayerSpec, ModelSpec, init_model  # noqa: E402
from mbgnn.rng import SeededRng  # noqa: E402


def randomize_biases(model, rng, scale=0.3):
    """Zero-initialised biases leave exact ReLU kinks; finite differences need them moved."""
    for name, value in model.params.items():
        if name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
            model.params[name] = rng.normal(value.shape, scale)
    return model


def small_spec(mode, encoder="mlp", heads=0, k=3, classes=3, dim=6, layers=1, width=5):
    if encoder == "tinyconv":
        enc = EncoderSpec("tinyconv", 1 * 4 * 4, image_shape=(1, 4, 4), channels=(2, 3))
    elif encoder == "identity":
        enc = EncoderSpec("identity", dim)
    else:
        enc = EncoderSpec("mlp", dim, (7,))
    return ModelSpec(enc, tuple(LayerSpec(width, mode) for _ in range(layers)), k, classes, heads=heads, attention_dim=4)


@pytest.fixture
def make_model():
    def build(mode=None, seed=0, **kw):
        spec = small_spec(mode or CombineMode.weighted_add(0.5), **kw)
        rng = SeededRng(seed)
        return randomize_biases(init_model(spec, rng.stream("init")), rng.stream("bias"))

    return build


ALL_MODES = [CombineMode.concat(), CombineMode.weighted_add(0.3), CombineMode.dropfeat(0.6)]


@pytest.fixture
def rng():
    return SeededRng(1234)


def assert_close(a, b, tol):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape
    err = float(np.max(np.abs(a - b))) if a.size else 0.0
    assert err <= tol, f"max abs error {err:.3e} > {tol:.1e}"


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
