"""Cross-modal fusion operators and the residual fusion block.

The compound operator multiplies a token-level attention matrix (rows,
built from the PPS query against EEG keys) and a channel-level attention
matrix (columns, built from the transposed EEG query against PPS keys)
around the EEG value matrix:

    compound = softmax_rows(Q_P K_E^T / sqrt(d)) @ V_E @ softmax_cols(Q_E^T K_P / sqrt(n))

Its left factor alone is token-wise cross attention (tca), its right
factor alone is channel-wise cross attention (cca). There is deliberately
no value projection for the PPS side; the parameter inventory below is
the complete set. A concatenation baseline shares the same residual block
so the fusion operator is the only varying factor.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

FUSION_MODES = ("taco", "tca", "cca", "concat")


@dataclass
class FusionParams:
    wq_e: Tensor
    wk_e: Tensor
    wv_e: Tensor
    wq_p: Tensor
    wk_p: Tensor
    concat_w: Tensor        # (2d, d), used by the concat baseline only
    ffn_w: Tensor
    ffn_b: Tensor
    ln_g: Tensor
    ln_b: Tensor

    FIELDS = ("wq_e", "wk_e", "wv_e", "wq_p", "wk_p",
              "concat_w", "ffn_w", "ffn_b", "ln_g", "ln_b")

    def named(self, prefix):
        for name in self.FIELDS:
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class FusionReport:
    """Per-sample attention matrices captured for visualization."""
    token_attention: np.ndarray     # (n, n), rows sum to 1
    channel_attention: np.ndarray   # (d, d), columns sum to 1
    fused_output: np.ndarray        # (n, d)
    mode: str = "taco"
    label: int | None = None


def init_fusion_params(d: int, rng) -> FusionParams:
    def u(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    return FusionParams(
        wq_e=u(d, (d, d)),
        wk_e=u(d, (d, d)),
        wv_e=u(d, (d, d)),
        wq_p=u(d, (d, d)),
        wk_p=u(d, (d, d)),
        concat_w=u(2 * d, (2 * d, d)),
        ffn_w=u(d, (d, d)),
        ffn_b=Tensor(np.zeros(d), requires_grad=True),
        ln_g=Tensor(np.ones(d), requires_grad=True),
        ln_b=Tensor(np.zeros(d), requires_grad=True),
    )


def _check_pair(e: Tensor, p: Tensor):
    if e.shape != p.shape:
        raise T.ShapeError(f"modality shapes differ: {e.shape} vs {p.shape}")
    if e.data.ndim < 2:
        raise T.ShapeError(f"fusion needs (n, d) sequences, got {e.shape}")


def token_matrix(e: Tensor, p: Tensor, params: FusionParams) -> Tensor:
    """Row-stochastic (n, n) token attention: softmax_rows(Q_P K_E^T / sqrt(d))."""
    _check_pair(e, p)
    d = e.shape[-1]
    q_p = T.matmul(p, params.wq_p)
    k_e = T.matmul(e, params.wk_e)
    logits = T.matmul(q_p, T.transpose(k_e), scale=1.0 / math.sqrt(d))
    return T.softmax_rows(logits)


def channel_matrix(e: Tensor, p: Tensor, params: FusionParams) -> Tensor:
    """Column-stochastic (d, d) channel attention: softmax_cols(Q_E^T K_P / sqrt(n))."""
    _check_pair(e, p)
    n = e.shape[-2]  # full sequence length, class token included
    q_e = T.matmul(e, params.wq_e)
    k_p = T.matmul(p, params.wk_p)
    logits = T.matmul(T.transpose(q_e), k_p, scale=1.0 / math.sqrt(n))
    return T.softmax_cols(logits)


def tca(e: Tensor, p: Tensor, params: FusionParams) -> Tensor:
    """Token-wise cross attention: token_matrix @ V_E."""
    return T.matmul(token_matrix(e, p, params), T.matmul(e, params.wv_e))


def cca(e: Tensor, p: Tensor, params: FusionParams) -> Tensor:
    """Channel-wise cross attention: V_E @ channel_matrix."""
    return T.matmul(T.matmul(e, params.wv_e), channel_matrix(e, p, params))


def taco(e: Tensor, p: Tensor, params: FusionParams):
    """Compound cross attention; returns (output, FusionReport)."""
    tm = token_matrix(e, p, params)
    cm = channel_matrix(e, p, params)
    v_e = T.matmul(e, params.wv_e)
    out = T.matmul(T.matmul(tm, v_e), cm)
    report = FusionReport(token_attention=tm.data, channel_attention=cm.data,
                          fused_output=out.data, mode="taco")
    return out, report


def concat_fusion(e: Tensor, p: Tensor, params: FusionParams) -> Tensor:
    """Width-axis concatenation projected back to d."""
    _check_pair(e, p)
    return T.matmul(T.concat((e, p), axis=-1), params.concat_w)


def fuse(e: Tensor, p: Tensor, params: FusionParams, mode: str) -> Tensor:
    if mode == "taco":
        return taco(e, p, params)[0]
    if mode == "tca":
        return tca(e, p, params)
    if mode == "cca":
        return cca(e, p, params)
    if mode == "concat":
        return concat_fusion(e, p, params)
    raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")


def fusion_block(e: Tensor, p: Tensor, params: FusionParams, mode: str) -> Tensor:
    """Residual fusion block: out = Res + FFN(LayerNorm(Res)), Res = fusion + E."""
    res = T.add(fuse(e, p, params, mode), e)
    ffn = T.linear(T.layer_norm(res, params.ln_g, params.ln_b),
                   params.ffn_w, params.ffn_b)
    return T.add(res, ffn)


def build_fusion_report(e: Tensor, p: Tensor, params: FusionParams,
                        mode: str, label: int | None = None) -> FusionReport:
    """Capture both attention matrices plus the mode's raw fusion output."""
    tm = token_matrix(e, p, params)
    cm = channel_matrix(e, p, params)
    fused = fuse(e, p, params, mode)
    return FusionReport(token_attention=tm.data, channel_attention=cm.data,
                        fused_output=fused.data, mode=mode, label=label)


# ---------------------------------------------------------------- export ----


def write_csv_matrix(matrix: np.ndarray, path) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def read_csv_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)


def write_pgm(matrix: np.ndarray, path) -> None:
    """8-bit binary graymap, min-max scaled; constant matrices map to 0."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lo = matrix.min()
    hi = matrix.max()
    if hi - lo < 1e-300:
        pixels = np.zeros(matrix.shape, dtype=np.uint8)
    else:
        pixels = np.rint((matrix - lo) / (hi - lo) * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary graymap")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=w * h)
    return pixels.reshape(h, w)


def export_attention(report: FusionReport, out_dir) -> list:
    """Write token/channel/fused matrices as CSV and PGM.

    Filenames follow attn_{mode}_{matrix}_{V0|V1}.{csv|pgm}; V1 marks the
    high-valence class. Returns the written paths.
    """
    import os

    if report.label is None:
        raise ValueError("report has no class label; set one before exporting")
    tag = "V1" if report.label else "V0"
    matrices = (("token", report.token_attention),
                ("channel", report.channel_attention),
                ("fused", report.fused_output))
    written = []
    for name, matrix in matrices:
        if matrix is None:
            continue
        base = os.path.join(out_dir, f"attn_{report.mode}_{name}_{tag}")
        try:
            write_csv_matrix(matrix, base + ".csv")
            write_pgm(matrix, base + ".pgm")
        except OSError as exc:
            raise OSError(f"failed writing attention export to {base}: {exc}") from exc
        written.extend([base + ".csv", base + ".pgm"])
    return written
