import numpy as np
import pytest

from tacoformer.model import (ModelConfig, Prediction, accuracy, batch_loss,
                              cross_entropy, forward, init_model_params)
from tacoformer.tensor import Tensor

TINY = ModelConfig(d=8, heads=2, layers=1, timestamps=8, grid=(3, 3),
                   pps_channels=2)


def _sample(seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((3, 3, 8)), rng.standard_normal((2, 8))


def test_zero_classifier_gives_uniform_probabilities():
    params = init_model_params(TINY, seed=0)
    xe, xp = _sample()
    pred = forward(xe, xp, params, TINY, "taco")
    assert np.allclose(pred.probabilities.data, [0.5, 0.5])
    assert abs(pred.probabilities.data.sum() - 1.0) <= 1e-9


def test_forward_deterministic():
    params = init_model_params(TINY, seed=1)
    xe, xp = _sample(1)
    a = forward(xe, xp, params, TINY, "taco")
    b = forward(xe, xp, params, TINY, "taco")
    assert np.array_equal(a.logits.data, b.logits.data)


def test_forward_deap_shapes():
    cfg = ModelConfig(d=64, heads=4, layers=1, timestamps=128, grid=(9, 9),
                      pps_channels=8)
    params = init_model_params(cfg, seed=2)
    rng = np.random.default_rng(2)
    from tacoformer.model import forward_batch
    logits, fused = forward_batch(Tensor(rng.standard_normal((1, 9, 9, 128))),
                                  Tensor(rng.standard_normal((1, 8, 128))),
                                  params, cfg, "taco")
    assert logits.shape == (1, 2)
    assert fused.shape == (1, 129, 64)


def test_forward_all_modes_give_valid_predictions():
    params = init_model_params(TINY, seed=3)
    # train the classifier a bit so probabilities move off 0.5
    params.cls_w.data[:] = np.random.default_rng(3).standard_normal((8, 2))
    xe, xp = _sample(3)
    for mode in ("taco", "tca", "cca", "concat"):
        pred = forward(xe, xp, params, TINY, mode)
        assert isinstance(pred, Prediction)
        assert abs(pred.probabilities.data.sum() - 1.0) <= 1e-9
        assert pred.class_id == int(np.argmax(pred.probabilities.data))
        assert pred.class_id == int(np.argmax(pred.logits.data))


def test_forward_unknown_mode():
    params = init_model_params(TINY, seed=4)
    xe, xp = _sample(4)
    with pytest.raises(ValueError):
        forward(xe, xp, params, TINY, "sum")


def test_cross_entropy_perfect_prediction():
    assert float(cross_entropy(Tensor([1.0, 0.0]), 0).data) == 0.0


def test_cross_entropy_uniform():
    loss = cross_entropy(Tensor([0.5, 0.5]), 1)
    assert abs(float(loss.data) - np.log(2.0)) <= 1e-12


def test_cross_entropy_closed_form():
    loss = cross_entropy(Tensor([0.9, 0.1]), 1)
    assert abs(float(loss.data) - 2.302585092994046) <= 1e-12


def test_cross_entropy_clamps_zero_probability():
    loss = float(cross_entropy(Tensor([1.0, 0.0]), 1).data)
    assert np.isfinite(loss)
    assert abs(loss - -np.log(1e-12)) <= 1e-9


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        cross_entropy(Tensor([0.5, 0.5]), 2)
    with pytest.raises(ValueError):
        cross_entropy(Tensor([0.5, 0.5]), -1)


def test_cross_entropy_nonnegative_random():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = rng.dirichlet([1.0, 1.0])
        assert float(cross_entropy(Tensor(p), int(rng.integers(2))).data) >= 0.0


def test_batch_loss_single_equals_cross_entropy():
    params = init_model_params(TINY, seed=6)
    params.cls_w.data[:] = np.random.default_rng(6).standard_normal((8, 2))
    xe, xp = _sample(6)
    pred = forward(xe, xp, params, TINY, "taco")
    single = cross_entropy(pred.probabilities, 1)
    batched = batch_loss(xe[None], xp[None], [1], params, TINY, "taco")
    assert np.allclose(float(batched.data), float(single.data), rtol=0, atol=1e-12)


def test_batch_loss_duplication_invariant():
    params = init_model_params(TINY, seed=7)
    rng = np.random.default_rng(7)
    xe = rng.standard_normal((2, 3, 3, 8))
    xp = rng.standard_normal((2, 2, 8))
    y = np.array([0, 1])
    once = float(batch_loss(xe, xp, y, params, TINY, "taco").data)
    twice = float(batch_loss(np.concatenate([xe, xe]), np.concatenate([xp, xp]),
                             np.concatenate([y, y]), params, TINY, "taco").data)
    assert abs(once - twice) <= 1e-12


def test_batch_loss_matches_hand_mean():
    params = init_model_params(TINY, seed=8)
    params.cls_w.data[:] = np.random.default_rng(8).standard_normal((8, 2))
    rng = np.random.default_rng(9)
    xe = rng.standard_normal((3, 3, 3, 8))
    xp = rng.standard_normal((3, 2, 8))
    y = [0, 1, 1]
    per_sample = [float(cross_entropy(
        forward(xe[i], xp[i], params, TINY, "taco").probabilities, y[i]).data)
        for i in range(3)]
    batched = float(batch_loss(xe, xp, y, params, TINY, "taco").data)
    assert abs(batched - sum(per_sample) / 3.0) <= 1e-12


def test_batch_loss_empty_batch():
    params = init_model_params(TINY, seed=10)
    with pytest.raises(ValueError):
        batch_loss(np.zeros((0, 3, 3, 8)), np.zeros((0, 2, 8)), [], params, TINY)


def test_accuracy_basic():
    assert accuracy([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0
    assert accuracy([1, 0], [0, 1]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75


def test_accuracy_accepts_predictions():
    preds = [Prediction(Tensor([0.0, 1.0]), Tensor([0.3, 0.7]), 1)]
    assert accuracy(preds, [1]) == 1.0


def test_accuracy_errors():
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])
