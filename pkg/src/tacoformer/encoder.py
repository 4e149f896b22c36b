"""Per-modality transformer encoder.

Embedding (time-major transpose, position encoding, flatten, linear
projection, learnable class token, LayerNorm) followed by L identical
layers of multi-head scaled dot-product self-attention with residual and
a token-wise feed-forward branch:

    Res = Z + Attn(Z)
    out = Res + FFN(LayerNorm(Res))

All forward functions are pure given (input, params); batched inputs carry
one extra leading axis and single samples are promoted internally.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .encoding import apply_posenc, posenc_1d, posenc_2d
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    d: int
    heads: int
    layers: int
    timestamps: int
    input_kind: str                 # "grid" (EEG) or "channels" (PPS)
    grid: tuple = (9, 9)
    channels: int = 8
    posenc: str = "2d"              # "2d" | "1d" | "none"
    ffn_hidden: int = 0             # 0 = single linear layer, >0 = two-layer MLP

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.layers < 0 or self.timestamps < 1:
            raise ValueError("encoder extents must be positive (layers may be 0)")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.input_kind not in ("grid", "channels"):
            raise ValueError(f"unknown input_kind {self.input_kind!r}")
        if self.posenc not in ("2d", "1d", "none"):
            raise ValueError(f"unknown posenc mode {self.posenc!r}")
        if self.input_kind == "channels" and self.posenc == "2d":
            raise ValueError("2d position encoding needs a grid input")

    @property
    def flat_width(self):
        if self.input_kind == "grid":
            return self.grid[0] * self.grid[1]
        return self.channels


@dataclass
class EncoderLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ffn_w: Tensor
    ffn_b: Tensor
    ffn_w2: Tensor | None
    ffn_b2: Tensor | None
    ln_g: Tensor
    ln_b: Tensor

    def named(self, prefix):
        for name in ("wq", "wk", "wv", "wo", "ffn_w", "ffn_b"):
            yield f"{prefix}.{name}", getattr(self, name)
        if self.ffn_w2 is not None:
            yield f"{prefix}.ffn_w2", self.ffn_w2
            yield f"{prefix}.ffn_b2", self.ffn_b2
        yield f"{prefix}.ln_g", self.ln_g
        yield f"{prefix}.ln_b", self.ln_b


@dataclass
class EncoderParams:
    proj_w: Tensor
    proj_b: Tensor
    cls: Tensor
    ln0_g: Tensor
    ln0_b: Tensor
    layers: list = field(default_factory=list)

    def named(self, prefix):
        for name in ("proj_w", "proj_b", "cls", "ln0_g", "ln0_b"):
            yield f"{prefix}.{name}", getattr(self, name)
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.layers.{i}")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _param(value):
    return Tensor(value, requires_grad=True)


def init_encoder_params(config: EncoderConfig, rng) -> EncoderParams:
    d = config.d
    params = EncoderParams(
        proj_w=_uniform(rng, config.flat_width, (config.flat_width, d)),
        proj_b=_param(np.zeros(d)),
        cls=_param(np.zeros((1, d))),
        ln0_g=_param(np.ones(d)),
        ln0_b=_param(np.zeros(d)),
    )
    for _ in range(config.layers):
        hidden = config.ffn_hidden
        params.layers.append(EncoderLayerParams(
            wq=_uniform(rng, d, (d, d)),
            wk=_uniform(rng, d, (d, d)),
            wv=_uniform(rng, d, (d, d)),
            wo=_uniform(rng, d, (d, d)),
            ffn_w=_uniform(rng, d, (d, hidden)) if hidden else _uniform(rng, d, (d, d)),
            ffn_b=_param(np.zeros(hidden if hidden else d)),
            ffn_w2=_uniform(rng, hidden, (hidden, d)) if hidden else None,
            ffn_b2=_param(np.zeros(d)) if hidden else None,
            ln_g=_param(np.ones(d)),
            ln_b=_param(np.zeros(d)),
        ))
    return params


@lru_cache(maxsize=None)
def _enc2d(timestamps, height, width):
    return posenc_2d(timestamps, height, width)


@lru_cache(maxsize=None)
def _enc1d(timestamps, dim):
    return posenc_1d(timestamps, dim)


def _promote(x, config):
    """Return (batched ndarray, was_single) for a modality input."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    base = 3 if config.input_kind == "grid" else 2
    if data.ndim == base:
        return data[None], True
    if data.ndim == base + 1:
        return data, False
    raise T.ShapeError(f"expected a {base}- or {base + 1}-axis input, got {data.shape}")


def _check_shape(data, config):
    if config.input_kind == "grid":
        want = config.grid + (config.timestamps,)
    else:
        want = (config.channels, config.timestamps)
    if data.shape[1:] != want:
        raise T.ShapeError(f"input shape {data.shape[1:]} does not match config {want}")


def _embed_tail(z: Tensor, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Project time-major flattened input, add 1d encoding, prepend CLS, LN."""
    batch = z.shape[0]
    z = T.linear(z, params.proj_w, params.proj_b)
    if config.posenc == "1d":
        z = apply_posenc(z, _enc1d(config.timestamps, config.d))
    cls = T.expand_leading(params.cls, batch)  # (B,1,d)
    z = T.concat((cls, z), axis=1)
    return T.layer_norm(z, params.ln0_g, params.ln0_b)


def embed_batch(x: Tensor, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """(B, H, W, T) or (B, K, T) -> (B, T+1, d)."""
    _check_shape(x.data, config)
    batch = x.shape[0]
    if config.input_kind == "grid":
        # (B,H,W,T) -> time-major (B,T,H,W)
        z = T.transpose(x, (0, 3, 1, 2))
        if config.posenc == "2d":
            z = apply_posenc(z, _enc2d(config.timestamps, *config.grid))
        z = T.reshape(z, (batch, config.timestamps, config.flat_width))
    else:
        z = T.transpose(x, (0, 2, 1))  # (B,K,T) -> (B,T,K)
    return _embed_tail(z, params, config)


def prepare_inputs(x: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """Pre-apply the parameter-free input transforms for a whole dataset.

    Returns the time-major flattened view (N, T, flat_width) with the 2d
    encoding already added where applicable, so the per-step work starts
    at the learned projection (see encode_prepared_batch).
    """
    x = np.asarray(x, dtype=np.float64)
    _check_shape(x, config)
    if config.input_kind == "grid":
        z = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        if config.posenc == "2d":
            z += _enc2d(config.timestamps, *config.grid).table.data
        return z.reshape(x.shape[0], config.timestamps, config.flat_width)
    return np.ascontiguousarray(x.transpose(0, 2, 1))


def embed(x, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Single-sample embedding: (H,W,T) or (K,T) -> (T+1, d)."""
    data, single = _promote(x, config)
    out = embed_batch(Tensor(data), params, config)
    return T.reshape(out, out.shape[1:]) if single else out


def attention_batch(z: Tensor, layer: EncoderLayerParams, config: EncoderConfig):
    """Multi-head self-attention on (B, n, d); returns (output, weights)."""
    b, n, d = z.shape
    h = config.heads
    hw = d // h
    # Eq. 8's printed scale uses the full embedding width even per head.
    scale = 1.0 / math.sqrt(config.d)
    assert hw * h == config.d
    q = T.matmul(z, layer.wq)
    k = T.matmul(z, layer.wk)
    v = T.matmul(z, layer.wv)
    if h > 1:
        q = T.transpose(T.reshape(q, (b, n, h, hw)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(k, (b, n, h, hw)), (0, 2, 1, 3))
        v = T.transpose(T.reshape(v, (b, n, h, hw)), (0, 2, 1, 3))
    m = T.softmax_rows(T.matmul(q, T.transpose(k), scale=scale))
    attn = T.matmul(m, v)
    if h > 1:
        attn = T.reshape(T.transpose(attn, (0, 2, 1, 3)), (b, n, d))
    return T.matmul(attn, layer.wo), m


def attention(z, layer: EncoderLayerParams, config: EncoderConfig,
              return_matrix: bool = False):
    """Self-attention on a single (n, d) sequence (or batched (B, n, d))."""
    single = z.data.ndim == 2 if isinstance(z, Tensor) else np.ndim(z) == 2
    zt = z if isinstance(z, Tensor) else Tensor(z)
    if single:
        zt = T.reshape(zt, (1,) + zt.shape)
    out, m = attention_batch(zt, layer, config)
    if single:
        out = T.reshape(out, out.shape[1:])
    return (out, m) if return_matrix else out


def _ffn(x: Tensor, layer: EncoderLayerParams) -> Tensor:
    y = T.linear(x, layer.ffn_w, layer.ffn_b)
    if layer.ffn_w2 is not None:
        y = T.linear(T.relu(y), layer.ffn_w2, layer.ffn_b2)
    return y


def encoder_layer_batch(z: Tensor, layer: EncoderLayerParams,
                        config: EncoderConfig) -> Tensor:
    attn, _ = attention_batch(z, layer, config)
    res = T.add(z, attn)
    return T.add(res, _ffn(T.layer_norm(res, layer.ln_g, layer.ln_b), layer))


def encoder_layer(z, layer: EncoderLayerParams, config: EncoderConfig) -> Tensor:
    single = (z.data if isinstance(z, Tensor) else np.asarray(z)).ndim == 2
    zt = z if isinstance(z, Tensor) else Tensor(z)
    if single:
        zt = T.reshape(zt, (1,) + zt.shape)
    out = encoder_layer_batch(zt, layer, config)
    return T.reshape(out, out.shape[1:]) if single else out


def encode_batch(x: Tensor, params: EncoderParams, config: EncoderConfig) -> Tensor:
    z = embed_batch(x, params, config)
    for layer in params.layers:
        z = encoder_layer_batch(z, layer, config)
    return z


def encode_prepared_batch(flat: Tensor, params: EncoderParams,
                          config: EncoderConfig) -> Tensor:
    """encode_batch, starting from prepare_inputs() output."""
    z = _embed_tail(flat, params, config)
    for layer in params.layers:
        z = encoder_layer_batch(z, layer, config)
    return z


def encode(x, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Embed then run L encoder layers; (H,W,T)/(K,T) -> (T+1, d)."""
    data, single = _promote(x, config)
    out = encode_batch(Tensor(data), params, config)
    return T.reshape(out, out.shape[1:]) if single else out
