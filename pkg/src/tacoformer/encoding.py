"""Sinusoidal position encodings.

Two tables: the 2D spatial-temporal encoding for grid-shaped EEG inputs
(sin/cos products selected by the parity of the two grid coordinates), and
the classic interleaved 1D encoding used for the PPS branch and as the
ablation baseline. Both are deterministic pure functions of their extents,
with every entry in [-1, 1].
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add


@dataclass(frozen=True)
class PosEnc2D:
    timestamps: int
    height: int
    width: int
    table: Tensor  # (T, H, W)


@dataclass(frozen=True)
class PosEnc1D:
    timestamps: int
    dim: int
    table: Tensor  # (T, d)


def posenc_2d(timestamps: int, height: int, width: int) -> PosEnc2D:
    """Build the T x H x W table.

    Entry (t, x, y) with i = x//2, j = y//2 is the product of an x-factor
    sin(t / 10000^(2i/W)) (cos for odd x) and a y-factor
    cos(t / 10000^(2j/H)) (sin for odd y).
    """
    if timestamps < 1 or height < 1 or width < 1:
        raise ValueError(f"extents must be >= 1, got T={timestamps} H={height} W={width}")
    t = np.arange(timestamps, dtype=np.float64)[:, None, None]
    x = np.arange(height)[None, :, None]
    y = np.arange(width)[None, None, :]
    xfreq = np.power(10000.0, 2.0 * (x // 2) / width)
    yfreq = np.power(10000.0, 2.0 * (y // 2) / height)
    xarg = t / xfreq
    yarg = t / yfreq
    xfac = np.where(x % 2 == 0, np.sin(xarg), np.cos(xarg))
    yfac = np.where(y % 2 == 0, np.cos(yarg), np.sin(yarg))
    return PosEnc2D(timestamps, height, width, Tensor(xfac * yfac))


def posenc_1d(timestamps: int, dim: int) -> PosEnc1D:
    """Standard interleaved table: (t, 2i) = sin, (t, 2i+1) = cos."""
    if timestamps < 1 or dim < 1:
        raise ValueError(f"extents must be >= 1, got T={timestamps} d={dim}")
    if dim % 2 != 0:
        raise ValueError(f"1D encoding needs an even dimension, got {dim}")
    t = np.arange(timestamps, dtype=np.float64)[:, None]
    i2 = np.arange(0, dim, 2, dtype=np.float64)
    arg = t / np.power(10000.0, i2 / dim)
    table = np.empty((timestamps, dim))
    table[:, 0::2] = np.sin(arg)
    table[:, 1::2] = np.cos(arg)
    return PosEnc1D(timestamps, dim, Tensor(table))


def apply_posenc(x: Tensor, enc) -> Tensor:
    """Point-wise add an encoding table; leading batch axes broadcast."""
    tshape = enc.table.shape
    if x.shape[-len(tshape):] != tshape:
        raise ValueError(f"input trailing shape {x.shape} does not match table {tshape}")
    return add(x, enc.table)
