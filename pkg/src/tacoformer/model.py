"""End-to-end model: two modality encoders, fusion block, class-token head.

forward() maps one (EEG grid, PPS channels) pair to a two-class
Prediction; batch_loss() runs the same computation with a leading batch
axis and returns the mean cross-entropy. Both go through identical ops,
so a batch of one reproduces the single-sample numbers exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import (EncoderConfig, EncoderParams, encode_batch,
                      init_encoder_params)
from .fusion import FusionParams, fusion_block, init_fusion_params
from .tensor import Tensor

N_CLASSES = 2
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    heads: int = 4
    layers: int = 2
    timestamps: int = 128
    grid: tuple = (9, 9)
    pps_channels: int = 8
    posenc: str = "2d"              # EEG branch encoding; PPS always uses 1d
    ffn_hidden: int = 0

    def eeg(self) -> EncoderConfig:
        return EncoderConfig(d=self.d, heads=self.heads, layers=self.layers,
                             timestamps=self.timestamps, input_kind="grid",
                             grid=self.grid, posenc=self.posenc,
                             ffn_hidden=self.ffn_hidden)

    def pps(self) -> EncoderConfig:
        return EncoderConfig(d=self.d, heads=self.heads, layers=self.layers,
                             timestamps=self.timestamps, input_kind="channels",
                             channels=self.pps_channels, posenc="1d",
                             ffn_hidden=self.ffn_hidden)

    def to_dict(self):
        return {"d": self.d, "heads": self.heads, "layers": self.layers,
                "timestamps": self.timestamps, "grid": list(self.grid),
                "pps_channels": self.pps_channels, "posenc": self.posenc,
                "ffn_hidden": self.ffn_hidden}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["grid"] = tuple(data.get("grid", (9, 9)))
        return cls(**data)


@dataclass
class ModelParams:
    eeg_encoder: EncoderParams
    pps_encoder: EncoderParams
    fusion: FusionParams
    cls_w: Tensor               # (d, 2)
    cls_b: Tensor               # (2,)

    def named(self):
        yield from self.eeg_encoder.named("eeg")
        yield from self.pps_encoder.named("pps")
        yield from self.fusion.named("fusion")
        yield "head.cls_w", self.cls_w
        yield "head.cls_b", self.cls_b

    def tensors(self):
        return [t for _, t in self.named()]


@dataclass
class Prediction:
    logits: Tensor              # (2,)
    probabilities: Tensor       # (2,), sums to 1
    class_id: int


def init_model_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded init; classifier starts at zero so initial predictions are uniform."""
    rng = np.random.default_rng(seed)
    return ModelParams(
        eeg_encoder=init_encoder_params(config.eeg(), rng),
        pps_encoder=init_encoder_params(config.pps(), rng),
        fusion=init_fusion_params(config.d, rng),
        cls_w=Tensor(np.zeros((config.d, N_CLASSES)), requires_grad=True),
        cls_b=Tensor(np.zeros(N_CLASSES), requires_grad=True),
    )


def head_logits(e: Tensor, p: Tensor, params: ModelParams, config: ModelConfig,
                mode: str):
    """Fuse encoded sequences and classify the class token."""
    fused = fusion_block(e, p, params.fusion, mode)
    cls_tok = T.reshape(T.narrow(fused, -2, 0, 1), (fused.shape[0], config.d))
    logits = T.linear(cls_tok, params.cls_w, params.cls_b)
    return logits, fused


def forward_batch(x_eeg: Tensor, x_pps: Tensor, params: ModelParams,
                  config: ModelConfig, mode: str):
    """(B,H,W,T) x (B,K,T) -> (logits (B,2), fused sequence (B,T+1,d))."""
    e = encode_batch(x_eeg, params.eeg_encoder, config.eeg())
    p = encode_batch(x_pps, params.pps_encoder, config.pps())
    return head_logits(e, p, params, config, mode)


def forward(x_eeg, x_pps, params: ModelParams, config: ModelConfig,
            mode: str = "taco") -> Prediction:
    """Classify one sample: EEG (H,W,T) plus PPS (K,T)."""
    xe = Tensor(np.asarray(x_eeg, dtype=np.float64)[None])
    xp = Tensor(np.asarray(x_pps, dtype=np.float64)[None])
    logits, _ = forward_batch(xe, xp, params, config, mode)
    logits = T.reshape(logits, (N_CLASSES,))
    probs = T.softmax_rows(logits)
    return Prediction(logits=logits, probabilities=probs,
                      class_id=int(np.argmax(probs.data)))


def cross_entropy(probabilities: Tensor, label: int) -> Tensor:
    """-log(P[label]) with the probability clamped below at 1e-12."""
    if not 0 <= label < probabilities.shape[-1]:
        raise ValueError(f"label {label} out of range for {probabilities.shape[-1]} classes")
    pick = T.narrow(probabilities, -1, int(label), 1)
    return T.sum_all(T.scalar_mul(T.log(T.clamp_min(pick, PROB_FLOOR)), -1.0))


def batch_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log(softmax(logits)[label])."""
    probs = T.softmax_rows(logits)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = T.sum_last(T.mul(probs, Tensor(onehot)))
    return T.mean_all(T.scalar_mul(T.log(T.clamp_min(picked, PROB_FLOOR)), -1.0))


def batch_loss(x_eeg, x_pps, labels, params: ModelParams, config: ModelConfig,
               mode: str = "taco") -> Tensor:
    """Mean cross-entropy over a batch of samples."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("batch_loss needs a non-empty batch")
    xe = Tensor(np.asarray(x_eeg, dtype=np.float64))
    xp = Tensor(np.asarray(x_pps, dtype=np.float64))
    if xe.data.ndim == 3:  # single sample promoted to a batch of one
        xe, xp = Tensor(xe.data[None]), Tensor(xp.data[None])
    logits, _ = forward_batch(xe, xp, params, config, mode)
    return batch_cross_entropy(logits, labels.astype(np.int64).reshape(-1))


def accuracy(predictions, labels) -> float:
    """Fraction of predicted class ids equal to the labels."""
    pred_ids = [p.class_id if isinstance(p, Prediction) else int(p) for p in predictions]
    labels = list(labels)
    if len(pred_ids) != len(labels):
        raise ValueError(f"length mismatch: {len(pred_ids)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("accuracy of an empty set is undefined")
    return sum(int(p == int(y)) for p, y in zip(pred_ids, labels)) / len(labels)
