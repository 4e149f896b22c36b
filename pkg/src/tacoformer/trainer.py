"""Adam training loop, dataset splitting, checkpoints, ablation runner."""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kernels
from .encoder import encode_prepared_batch, prepare_inputs
from .fusion import FUSION_MODES
from .model import (ModelConfig, ModelParams, batch_cross_entropy,
                    head_logits, init_model_params)
from .preprocess import InstanceSet
from .pstb import read_pstb, write_pstb
from .tensor import GradTape, Tensor, backward, zero_grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 120
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fusion_mode: str = "taco"
    posenc: str = "2d"
    task: str = "valence"
    split_ratio: float = 0.8
    split_by_subject: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.posenc not in ("2d", "1d"):
            raise ValueError(f"posenc must be '2d' or '1d', got {self.posenc!r}")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split ratio must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(m={name: np.zeros_like(t.data) for name, t in params.named()},
                   v={name: np.zeros_like(t.data) for name, t in params.named()})


def adam_step(params: ModelParams, grads: dict, state: AdamState,
              config: TrainConfig):
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.step += 1
    bc1 = 1.0 - config.beta1 ** state.step
    bc2 = 1.0 - config.beta2 ** state.step
    for name, t in params.named():
        g = grads.get(name)
        if g is None:
            continue  # never touched by the loss; moments are still zero
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        kernels.adam_update(t.data, g, state.m[name], state.v[name],
                            config.learning_rate, config.beta1, config.beta2,
                            config.adam_eps, bc1, bc2)
    return params, state


def split(dataset: InstanceSet, ratio: float = 0.8, seed: int = 0):
    """Seeded disjoint split into (train, test) with ceil(ratio*N) train rows."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_train = math.ceil(ratio * n)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


def split_by_subject(dataset: InstanceSet, ratio: float = 0.8, seed: int = 0):
    """Subject-held-out split: whole subjects go to one side or the other."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    subjects = np.unique(dataset.subjects)
    order = np.random.default_rng(seed).permutation(subjects)
    train_subjects = set()
    covered = 0
    for s in order:
        if covered >= ratio * n:
            break
        train_subjects.add(int(s))
        covered += int(np.sum(dataset.subjects == s))
    mask = np.isin(dataset.subjects, sorted(train_subjects))
    return dataset.subset(np.where(mask)[0]), dataset.subset(np.where(~mask)[0])


def model_config_for(dataset: InstanceSet, config: TrainConfig,
                     d: int = 64, heads: int = 4, layers: int = 2,
                     ffn_hidden: int = 0) -> ModelConfig:
    _, gh, gw, t = dataset.eeg.shape
    k = dataset.pps.shape[1]
    return ModelConfig(d=d, heads=heads, layers=layers, timestamps=t,
                       grid=(gh, gw), pps_channels=k, posenc=config.posenc,
                       ffn_hidden=ffn_hidden)


def _prepare(dataset: InstanceSet, model_config: ModelConfig):
    """Hoist the parameter-free input transforms out of the step loop."""
    return (prepare_inputs(dataset.eeg, model_config.eeg()),
            prepare_inputs(dataset.pps, model_config.pps()))


def _prepared_logits(xe_flat, xp_flat, params, model_config, mode):
    e = encode_prepared_batch(Tensor(xe_flat), params.eeg_encoder, model_config.eeg())
    p = encode_prepared_batch(Tensor(xp_flat), params.pps_encoder, model_config.pps())
    logits, _ = head_logits(e, p, params, model_config, mode)
    return logits


def _evaluate_prepared(params, xe_flat, xp_flat, labels, model_config, mode,
                       batch_size=50) -> dict:
    n = len(labels)
    total_loss = 0.0
    confusion = np.zeros((2, 2), dtype=np.int64)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        y = labels[start:stop]
        logits = _prepared_logits(xe_flat[start:stop], xp_flat[start:stop],
                                  params, model_config, mode)
        loss = batch_cross_entropy(logits, y)
        total_loss += float(loss.data) * (stop - start)
        pred = np.argmax(logits.data, axis=-1)
        for yt, yp in zip(y, pred):
            confusion[int(yt), int(yp)] += 1
    correct = int(confusion[0, 0] + confusion[1, 1])
    return {"accuracy": correct / n, "mean_loss": total_loss / n,
            "confusion": confusion}


def evaluate(params: ModelParams, dataset: InstanceSet, model_config: ModelConfig,
             mode: str, batch_size: int = 50) -> dict:
    """Accuracy, mean loss and 2x2 confusion counts; no parameter mutation."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    xe_flat, xp_flat = _prepare(dataset, model_config)
    return _evaluate_prepared(params, xe_flat, xp_flat, dataset.labels,
                              model_config, mode, batch_size)


def save_checkpoint(params: ModelParams, model_config: ModelConfig, path) -> None:
    write_pstb(path, {name: t.data for name, t in params.named()})
    Path(str(path) + ".json").write_text(
        json.dumps({"model": model_config.to_dict()}, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path):
    entries = read_pstb(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    model_config = ModelConfig.from_dict(sidecar["model"])
    params = init_model_params(model_config, seed=0)
    names = [name for name, _ in params.named()]
    missing = [n for n in names if n not in entries]
    extra = [n for n in entries if n not in names]
    if missing or extra:
        raise ValueError(f"checkpoint {path} does not match the model: "
                         f"missing {missing}, unexpected {extra}")
    for name, t in params.named():
        if entries[name].shape != t.data.shape:
            raise ValueError(f"checkpoint tensor {name} has shape "
                             f"{entries[name].shape}, expected {t.data.shape}")
        t.data = entries[name]
    return params, model_config


def train(dataset: InstanceSet, config: TrainConfig,
          model_config: ModelConfig | None = None,
          checkpoint_path=None, log_path=None):
    """Split, run epochs of batched Adam steps, log per-epoch metrics.

    Returns (params, log) where log holds one record per epoch with the
    running train loss/accuracy and the end-of-epoch test accuracy.
    """
    if model_config is None:
        model_config = model_config_for(dataset, config)
    splitter = split_by_subject if config.split_by_subject else split
    train_set, test_set = splitter(dataset, config.split_ratio, config.seed)
    train_eeg, train_pps = _prepare(train_set, model_config)
    train_labels = train_set.labels
    test_prepared = _prepare(test_set, model_config) if len(test_set) else None
    params = init_model_params(model_config, seed=config.seed)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    log = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(len(train_set))
            xe = train_eeg[perm]
            xp = train_pps[perm]
            ys = train_labels[perm]
            loss_sum = 0.0
            correct = 0
            for start in range(0, len(train_set), config.batch_size):
                stop = min(start + config.batch_size, len(train_set))
                y = ys[start:stop]
                with GradTape() as tape:
                    logits = _prepared_logits(xe[start:stop], xp[start:stop],
                                              params, model_config, config.fusion_mode)
                    loss = batch_cross_entropy(logits, y)
                backward(loss, tape)
                grads = {name: t.grad for name, t in params.named()
                         if t.grad is not None}
                adam_step(params, grads, state, config)
                zero_grads(params.tensors())
                loss_sum += float(loss.data) * (stop - start)
                correct += int(np.sum(np.argmax(logits.data, axis=-1) == y))
            if test_prepared is not None:
                test_metrics = _evaluate_prepared(
                    params, test_prepared[0], test_prepared[1], test_set.labels,
                    model_config, config.fusion_mode)
            else:
                test_metrics = {"accuracy": float("nan")}
            record = {"epoch": epoch,
                      "train_loss": loss_sum / len(train_set),
                      "train_acc": correct / len(train_set),
                      "test_acc": test_metrics["accuracy"]}
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(params, model_config, checkpoint_path)
    return params, log


# --------------------------------------------------------------- ablation ----


@dataclass
class AblationResult:
    fusion_rows: list = field(default_factory=list)   # (mode, mean, std, accs)
    posenc_rows: list = field(default_factory=list)   # (posenc, mean, std, accs)

    def to_csv(self) -> str:
        lines = ["table,row,mean_accuracy,std_accuracy,n_seeds,accuracies"]
        for table, rows in (("fusion", self.fusion_rows), ("posenc", self.posenc_rows)):
            for name, mean, std, accs in rows:
                accs_s = ";".join(f"{a:.6f}" for a in accs)
                lines.append(f"{table},{name},{mean:.6f},{std:.6f},{len(accs)},{accs_s}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        out = []
        for title, rows in (("fusion mode", self.fusion_rows),
                            ("position encoding", self.posenc_rows)):
            out.append(f"{title:<20s} {'mean acc':>10s} {'std':>8s}")
            for name, mean, std, _ in rows:
                out.append(f"{name:<20s} {mean:>10.4f} {std:>8.4f}")
            out.append("")
        return "\n".join(out)

    def mean(self, table: str, row: str) -> float:
        rows = self.fusion_rows if table == "fusion" else self.posenc_rows
        for name, mean, _, _ in rows:
            if name == row:
                return mean
        raise KeyError(f"no {table} row {row!r}")


_WORKER_DATASET = None


def _run_cell(args):
    fusion_mode, posenc, seed, config, model_kwargs = args
    cfg = replace(config, fusion_mode=fusion_mode, posenc=posenc, seed=seed)
    mc = model_config_for(_WORKER_DATASET, cfg, **model_kwargs)
    _, log = train(_WORKER_DATASET, cfg, mc)
    return (fusion_mode, posenc, seed), log[-1]["test_acc"] if log else float("nan")


def run_ablation(dataset: InstanceSet, config: TrainConfig, seeds,
                 fusion_modes=FUSION_MODES, posenc_modes=("1d", "2d"),
                 model_kwargs=None, workers: int = 1,
                 progress=None) -> AblationResult:
    """Train one model per (mode, seed) cell on identical data/split/init seeds.

    The fusion table varies the fusion mode at the base position encoding;
    the posenc table varies the encoding at the base fusion mode. Shared
    cells are trained once.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_ablation needs at least one seed")
    model_kwargs = model_kwargs or {}
    cells = []
    for mode in fusion_modes:
        cells.append((mode, config.posenc))
    for penc in posenc_modes:
        if (config.fusion_mode, penc) not in cells:
            cells.append((config.fusion_mode, penc))
    jobs = [(mode, penc, seed, config, model_kwargs)
            for mode, penc in cells for seed in seeds]

    global _WORKER_DATASET
    _WORKER_DATASET = dataset
    results = {}
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for key, acc in pool.map(_run_cell, jobs):
                    results[key] = acc
                    if progress:
                        progress(key, acc)
        else:
            for job in jobs:
                key, acc = _run_cell(job)
                results[key] = acc
                if progress:
                    progress(key, acc)
    finally:
        _WORKER_DATASET = None

    def summarize(keys):
        rows = []
        for name, cell in keys:
            accs = [results[(cell[0], cell[1], s)] for s in seeds]
            rows.append((name, float(np.mean(accs)), float(np.std(accs)), accs))
        return rows

    out = AblationResult()
    out.fusion_rows = summarize([(m, (m, config.posenc)) for m in fusion_modes])
    out.posenc_rows = summarize([(p, (config.fusion_mode, p)) for p in posenc_modes])
    return out
