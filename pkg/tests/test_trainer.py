import json

import numpy as np
import pytest

from tacoformer.model import ModelConfig, init_model_params
from tacoformer.synth import synth_generate
from tacoformer.trainer import (AdamState, TrainConfig, adam_step, evaluate,
                                load_checkpoint, model_config_for, run_ablation,
                                save_checkpoint, split, split_by_subject, train)

TINY_MODEL = dict(d=8, heads=2, layers=1)


def tiny_dataset(n=40, seed=0, noise=0.3):
    return synth_generate(n, coupling="both", noise_std=noise, seed=seed)


def tiny_config(**kw):
    base = dict(learning_rate=0.001, batch_size=8, epochs=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# ------------------------------------------------------------------- adam


def _scalar_params(value=0.0):
    cfg = ModelConfig(d=8, heads=2, layers=0, timestamps=8, grid=(3, 3),
                      pps_channels=2)
    params = init_model_params(cfg, seed=0)
    return params


def test_adam_first_step_is_minus_lr():
    params = _scalar_params()
    state = AdamState.for_params(params)
    cfg = tiny_config(learning_rate=0.01)
    before = {name: t.data.copy() for name, t in params.named()}
    grads = {name: np.ones_like(t.data) for name, t in params.named()}
    adam_step(params, grads, state, cfg)
    for name, t in params.named():
        delta = t.data - before[name]
        # bias-corrected first step with g=1: m_hat = v_hat = 1
        assert np.allclose(delta, -cfg.learning_rate / (1.0 + cfg.adam_eps),
                           rtol=1e-9)
    assert state.step == 1


def test_adam_zero_gradients_identity():
    params = _scalar_params()
    state = AdamState.for_params(params)
    cfg = tiny_config()
    before = {name: t.data.copy() for name, t in params.named()}
    grads = {name: np.zeros_like(t.data) for name, t in params.named()}
    adam_step(params, grads, state, cfg)
    for name, t in params.named():
        assert np.array_equal(t.data, before[name])
    assert state.step == 1


def test_adam_nan_gradient_aborts_with_name():
    params = _scalar_params()
    state = AdamState.for_params(params)
    grads = {name: np.zeros_like(t.data) for name, t in params.named()}
    grads["head.cls_w"] = np.full_like(grads["head.cls_w"], np.nan)
    with pytest.raises(FloatingPointError) as err:
        adam_step(params, grads, state, tiny_config())
    assert "head.cls_w" in str(err.value)


def test_adam_scalar_recursion_converges():
    # 100 steps on f(theta) = theta^2 from theta=1 at lr 0.1
    theta = np.array([1.0])
    m = np.zeros(1)
    v = np.zeros(1)
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    from tacoformer import kernels
    for t in range(1, 101):
        g = 2.0 * theta
        kernels.adam_update(theta, g, m, v, lr, b1, b2, eps,
                            1.0 - b1 ** t, 1.0 - b2 ** t)
    assert abs(theta[0]) < 0.05


# ------------------------------------------------------------------ split


def test_split_sizes():
    ds = tiny_dataset(100)
    train_set, test_set = split(ds, 0.8, seed=1)
    assert len(train_set) == 80 and len(test_set) == 20


def test_split_deterministic_and_exhaustive():
    ds = tiny_dataset(50)
    a1, b1 = split(ds, 0.8, seed=2)
    a2, b2 = split(ds, 0.8, seed=2)
    assert np.array_equal(a1.trials, a2.trials)
    combined = np.sort(np.concatenate([a1.trials, b1.trials]))
    assert np.array_equal(combined, np.sort(ds.trials))


def test_split_empty_rejected():
    ds = tiny_dataset(10).subset(np.array([], dtype=np.intp))
    with pytest.raises(ValueError):
        split(ds, 0.8, seed=0)


def test_split_by_subject_keeps_subjects_whole():
    ds = tiny_dataset(40)
    ds.subjects[:] = np.repeat(np.arange(8), 5)
    train_set, test_set = split_by_subject(ds, 0.75, seed=3)
    assert set(train_set.subjects) & set(test_set.subjects) == set()
    assert len(train_set) + len(test_set) == 40


# ------------------------------------------------------------------ train


def test_train_zero_epochs_returns_init():
    ds = tiny_dataset()
    cfg = tiny_config(epochs=0)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, log = train(ds, cfg, mc)
    assert log == []
    fresh = init_model_params(mc, seed=cfg.seed)
    for (_, a), (_, b) in zip(params.named(), fresh.named()):
        assert np.array_equal(a.data, b.data)


def test_initial_loss_is_ln2_with_zero_classifier():
    ds = tiny_dataset(24)
    cfg = tiny_config(epochs=0)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, _ = train(ds, cfg, mc)
    metrics = evaluate(params, ds, mc, "taco")
    assert abs(metrics["mean_loss"] - np.log(2.0)) <= 1e-6


def test_single_step_decreases_loss_at_small_lr():
    ds = tiny_dataset(8, seed=4)
    cfg = tiny_config(learning_rate=1e-4, batch_size=8, epochs=1, seed=4)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    before_params = init_model_params(mc, seed=cfg.seed)
    # loss on the full set before and after one epoch of training on it
    before = evaluate(before_params, ds, mc, cfg.fusion_mode)["mean_loss"]
    params, _ = train(ds, TrainConfig(**{**cfg.__dict__, "split_ratio": 0.9}), mc)
    after = evaluate(params, ds, mc, cfg.fusion_mode)["mean_loss"]
    assert after < before


def test_train_reproducible():
    ds = tiny_dataset(32, seed=5)
    cfg = tiny_config(epochs=2, seed=9)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    _, log1 = train(ds, cfg, mc)
    _, log2 = train(ds, cfg, mc)
    assert log1 == log2


def test_train_writes_log_and_checkpoint(tmp_path):
    ds = tiny_dataset(24, seed=6)
    cfg = tiny_config(epochs=2, seed=6)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    ckpt = tmp_path / "model.pstb"
    log_path = tmp_path / "log.jsonl"
    params, log = train(ds, cfg, mc, checkpoint_path=ckpt, log_path=log_path)
    lines = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert lines == log
    loaded, loaded_cfg = load_checkpoint(ckpt)
    assert loaded_cfg == mc
    for (_, a), (_, b) in zip(loaded.named(), params.named()):
        assert np.array_equal(a.data, b.data)


# --------------------------------------------------------------- evaluate


def test_evaluate_deterministic_and_confusion_sums():
    ds = tiny_dataset(30, seed=7)
    cfg = tiny_config(epochs=1, seed=7)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, _ = train(ds, cfg, mc)
    m1 = evaluate(params, ds, mc, "taco")
    m2 = evaluate(params, ds, mc, "taco")
    assert m1["accuracy"] == m2["accuracy"]
    assert m1["mean_loss"] == m2["mean_loss"]
    assert m1["confusion"].sum() == 30
    correct = m1["confusion"][0, 0] + m1["confusion"][1, 1]
    assert m1["accuracy"] == correct / 30


def test_evaluate_does_not_mutate_params():
    ds = tiny_dataset(12, seed=8)
    cfg = tiny_config(epochs=0, seed=8)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, _ = train(ds, cfg, mc)
    before = {name: t.data.copy() for name, t in params.named()}
    evaluate(params, ds, mc, "cca")
    for name, t in params.named():
        assert np.array_equal(t.data, before[name])


def test_evaluate_empty_rejected():
    ds = tiny_dataset(10)
    cfg = tiny_config()
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, _ = train(ds, TrainConfig(**{**cfg.__dict__, "epochs": 0}), mc)
    with pytest.raises(ValueError):
        evaluate(params, ds.subset(np.array([], dtype=np.intp)), mc, "taco")


# --------------------------------------------------------------- ablation


def test_run_ablation_structure_and_determinism():
    ds = tiny_dataset(40, seed=9)
    cfg = tiny_config(epochs=1, seed=0)
    res = run_ablation(ds, cfg, seeds=[0, 1], model_kwargs=TINY_MODEL)
    assert [row[0] for row in res.fusion_rows] == ["taco", "tca", "cca", "concat"]
    assert [row[0] for row in res.posenc_rows] == ["1d", "2d"]
    # shared cell: the taco fusion row and the 2d posenc row are the same runs
    assert res.mean("fusion", "taco") == res.mean("posenc", "2d")
    res2 = run_ablation(ds, cfg, seeds=[0, 1], model_kwargs=TINY_MODEL)
    assert res.fusion_rows == res2.fusion_rows
    csv = res.to_csv()
    assert csv.startswith("table,row,mean_accuracy")
    assert len(csv.strip().splitlines()) == 1 + 4 + 2


def test_run_ablation_needs_seeds():
    ds = tiny_dataset(20)
    with pytest.raises(ValueError):
        run_ablation(ds, tiny_config(), seeds=[])


# ------------------------------------------------------------- checkpoint


def test_checkpoint_reload_reproduces_metrics(tmp_path):
    ds = tiny_dataset(30, seed=11)
    cfg = tiny_config(epochs=2, seed=11)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, _ = train(ds, cfg, mc)
    path = tmp_path / "ck.pstb"
    save_checkpoint(params, mc, path)
    loaded, loaded_mc = load_checkpoint(path)
    a = evaluate(params, ds, mc, cfg.fusion_mode)
    b = evaluate(loaded, ds, loaded_mc, cfg.fusion_mode)
    assert a["accuracy"] == b["accuracy"]
    assert a["mean_loss"] == b["mean_loss"]
    assert np.array_equal(a["confusion"], b["confusion"])


def test_checkpoint_mismatch_detected(tmp_path):
    ds = tiny_dataset(10, seed=12)
    cfg = tiny_config(epochs=0, seed=12)
    mc = model_config_for(ds, cfg, **TINY_MODEL)
    params, _ = train(ds, cfg, mc)
    path = tmp_path / "ck.pstb"
    save_checkpoint(params, mc, path)
    # rewrite the sidecar with a different width
    sidecar = json.loads((tmp_path / "ck.pstb.json").read_text())
    sidecar["model"]["d"] = 16
    (tmp_path / "ck.pstb.json").write_text(json.dumps(sidecar))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.5)
    with pytest.raises(ValueError):
        TrainConfig(fusion_mode="blend")
    with pytest.raises(ValueError):
        TrainConfig(posenc="3d")
