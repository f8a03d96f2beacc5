"""Absmax 8-bit quantization and the integer scoring kernel.

A vector is scaled by 127 / max|component| and rounded to int8; matrices are
quantized column by column. In mixed-precision mode the first component of a
vector (and the first row of a matrix) stays in float32 and only the tail is
quantized, so the scale is computed over the tail alone.

The integer vector-matrix product is computed through the unsigned-offset
identity: the stored codes are shifted by +128 into unsigned range and the
product is corrected by 128 * sum(x). Accumulation is exact int32 arithmetic,
bit-identical to a direct signed multiply-accumulate loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

F32 = np.float32

# 127 * 255 * 2^15 stays below 2^31, so int32 accumulation cannot overflow.
MAX_GEMV_ROWS = 1 << 15


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantizedVector:
    values: np.ndarray  # int8, quantized tail (full vector when head is None)
    scale: float
    head: float | None = None


@dataclass(frozen=True)
class QuantizedMatrix:
    """Column-quantized int8 matrix.

    ``rows``/``cols`` are the source shape. With mixed precision on, ``values``
    holds the quantized tail rows (rows-1 x cols) and ``head_row`` the
    unquantized first row; otherwise ``values`` is rows x cols and ``head_row``
    is zero (kept so downstream arithmetic is branch-free).
    """

    rows: int
    cols: int
    values: np.ndarray  # int8
    col_scales: np.ndarray  # float32, length cols
    head_row: np.ndarray  # float32, length cols
    mixed: bool

    @property
    def tail_rows(self) -> int:
        return self.values.shape[0]


def quantize_vector(x, mixed_precision: bool = False) -> QuantizedVector:
    """Absmax-quantize a vector; ties round half away from zero.

    The zero vector (or zero tail) gets scale 1 and all-zero codes.
    """
    x = np.ascontiguousarray(x, dtype=F32).ravel()
    if x.size == 0:
        raise ShapeError("quantize_vector: empty vector")
    head = float(x[0]) if mixed_precision else None
    tail = x[1:] if mixed_precision else x
    absmax = float(np.max(np.abs(tail))) if tail.size else 0.0
    if absmax == 0.0:
        return QuantizedVector(np.zeros(tail.size, dtype=np.int8), 1.0, head)
    scale = 127.0 / absmax
    codes = _round_half_away(tail.astype(np.float64) * np.float64(F32(scale)))
    codes = np.clip(codes, -127, 127).astype(np.int8)
    return QuantizedVector(codes, float(F32(scale)), head)


def quantize_matrix_columns(m, mixed_precision: bool = False) -> QuantizedMatrix:
    """Quantize each column independently with its own absmax scale."""
    m = np.ascontiguousarray(m, dtype=F32)
    if m.ndim != 2:
        raise ShapeError(f"quantize_matrix_columns: expected 2-D, got ndim={m.ndim}")
    rows, cols = m.shape
    if mixed_precision:
        if rows < 1:
            raise ShapeError("quantize_matrix_columns: mixed precision needs >= 1 row")
        head_row = m[0].copy()
        tail = m[1:]
    else:
        head_row = np.zeros(cols, dtype=F32)
        tail = m
    absmax = np.abs(tail).max(axis=0) if tail.shape[0] else np.zeros(cols, dtype=F32)
    safe = np.where(absmax > 0, absmax.astype(np.float64), 1.0)
    scales = np.where(absmax > 0, 127.0 / safe, 1.0).astype(F32)
    codes = _round_half_away(tail.astype(np.float64) * scales.astype(np.float64))
    codes = np.clip(codes, -127, 127).astype(np.int8)
    return QuantizedMatrix(
        rows=rows,
        cols=cols,
        values=np.ascontiguousarray(codes),
        col_scales=scales,
        head_row=head_row,
        mixed=mixed_precision,
    )


def int8_gemv(x: QuantizedVector, m: QuantizedMatrix) -> np.ndarray:
    """Exact int32 dot products of the quantized tails: x_i8^T M_i8 per column.

    Uses the unsigned-offset form (M + 128 as uint8, corrected by
    128 * sum(x)); the result is bit-identical to the naive signed loop.
    """
    if x.values.shape[0] != m.tail_rows:
        raise ShapeError(
            f"int8_gemv: vector length {x.values.shape[0]} != matrix rows {m.tail_rows}"
        )
    if m.tail_rows > MAX_GEMV_ROWS:
        raise ParameterError(f"int8_gemv: rows {m.tail_rows} exceed cap {MAX_GEMV_ROWS}")
    if m.tail_rows == 0:
        return np.zeros(m.cols, dtype=np.int32)
    xi = x.values.astype(np.int32)
    unsigned = (m.values.astype(np.int16) + 128).astype(np.uint8)
    raw = xi @ unsigned.astype(np.int32)
    return (raw - np.int32(128) * xi.sum(dtype=np.int32)).astype(np.int32)


def dequantize_product(raw, x_scale: float, col_scales, head_contrib) -> np.ndarray:
    """Recover the float32 product: raw / (x_scale * col_scales) + head_contrib."""
    raw = np.asarray(raw)
    col_scales = np.asarray(col_scales, dtype=F32)
    head_contrib = np.asarray(head_contrib, dtype=F32)
    if not (raw.shape == col_scales.shape == head_contrib.shape):
        raise ShapeError("dequantize_product: length mismatch")
    return (raw.astype(F32) / (F32(x_scale) * col_scales) + head_contrib).astype(F32)


def quantized_vecmat(x, m: QuantizedMatrix, qx: QuantizedVector | None = None) -> np.ndarray:
    """Full quantized path for x^T M: quantize x, integer product, dequantize.

    x's mixed-precision handling follows the matrix: the head component is
    multiplied against the unquantized head row in float32. A caller scoring
    the same vector against many matrices can quantize once and pass ``qx``.
    """
    x = np.ascontiguousarray(x, dtype=F32).ravel()
    if x.size != m.rows:
        raise ShapeError(f"quantized_vecmat: vector length {x.size} != matrix rows {m.rows}")
    if qx is None:
        qx = quantize_vector(x, mixed_precision=m.mixed)
    raw = int8_gemv(qx, m)
    if m.mixed:
        head_contrib = F32(qx.head) * m.head_row
    else:
        head_contrib = np.zeros(m.cols, dtype=F32)
    return dequantize_product(raw, qx.scale, m.col_scales, head_contrib)
