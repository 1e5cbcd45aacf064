"""Correlation cost matrices and activation-strength scores.

Costs are dissimilarities 1 - rho with rho the Pearson correlation between a
target activation channel and a source activation channel, computed over the
shared calibration samples. All entries live in [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySequenceError, InsufficientSamplesError, ValidationError
from .tensor_store import ActivationMatrix


@dataclass(frozen=True)
class ActivationScore:
    """Per-neuron mean absolute activation for one (layer, module)."""

    layer: int
    module: str
    scores: np.ndarray


def _as_matrix(x) -> np.ndarray:
    m = x.matrix if isinstance(x, ActivationMatrix) else x
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"expected a T x n activation matrix, got shape {m.shape}")
    return m


def _center(m: np.ndarray):
    """Two-pass standardization pieces: centered columns and their raw
    sum-of-squares (single-pass variance is inaccurate for large means)."""
    centered = m - m.mean(axis=0)
    sumsq = np.einsum("ij,ij->j", centered, centered)
    return centered, sumsq


def pearson_cost(X, Y) -> np.ndarray:
    """Cost[i, j] = 1 - rho(X[:, i], Y[:, j]), clamped to [0, 2].

    Zero-variance columns have undefined correlation; they get the neutral
    cost 1 against every partner (rho treated as 0) so transport mass is
    neither attracted to nor repelled from degenerate channels.
    """
    xm, ym = _as_matrix(X), _as_matrix(Y)
    if xm.shape[0] != ym.shape[0]:
        raise ValidationError(f"sample counts differ: {xm.shape[0]} vs {ym.shape[0]}")
    if xm.shape[0] < 2:
        raise InsufficientSamplesError(
            f"Pearson correlation needs at least 2 samples, got {xm.shape[0]}"
        )
    xc, xs = _center(xm)
    yc, ys = _center(ym)
    x_dead = xs == 0.0
    y_dead = ys == 0.0
    denom = np.sqrt(np.outer(xs, ys))
    denom[x_dead, :] = 1.0
    denom[:, y_dead] = 1.0
    rho = (xc.T @ yc) / denom
    rho[x_dead, :] = 0.0
    rho[:, y_dead] = 0.0
    cost = np.clip(1.0 - rho, 0.0, 2.0)
    # Bitwise-equal column pairs are perfectly correlated by definition;
    # snap them to exact zero so self-comparison diagonals are clean.
    if xm.shape == ym.shape:
        same = np.all(xm == ym, axis=0) & ~x_dead & ~y_dead
        idx = np.flatnonzero(same)
        cost[idx, idx] = 0.0
    return cost


def pearson_cost_oracle(X, Y):
    """Tile evaluator for streaming solvers: (row_slice, col_slice) -> cost tile.

    Standardizes both activation sets once; each tile is formed from the
    normalized columns without materializing the full cost matrix.
    """
    xm, ym = _as_matrix(X), _as_matrix(Y)
    if xm.shape[0] != ym.shape[0]:
        raise ValidationError(f"sample counts differ: {xm.shape[0]} vs {ym.shape[0]}")
    if xm.shape[0] < 2:
        raise InsufficientSamplesError(
            f"Pearson correlation needs at least 2 samples, got {xm.shape[0]}"
        )
    xc, xs = _center(xm)
    yc, ys = _center(ym)
    x_dead = xs == 0.0
    y_dead = ys == 0.0
    xn = xc / np.sqrt(np.where(x_dead, 1.0, xs))
    yn = yc / np.sqrt(np.where(y_dead, 1.0, ys))

    def tile(rows: slice, cols: slice) -> np.ndarray:
        rho = xn[:, rows].T @ yn[:, cols]
        rho[x_dead[rows], :] = 0.0
        rho[:, y_dead[cols]] = 0.0
        return np.clip(1.0 - rho, 0.0, 2.0)

    return tile


def activation_strength(X, layer: int = 0, module: str = "") -> ActivationScore:
    """Per-neuron score s_j = mean over samples of |activation of neuron j|."""
    xm = _as_matrix(X)
    if xm.shape[0] < 1:
        raise ValidationError("activation matrix has no rows")
    if isinstance(X, ActivationMatrix):
        layer, module = X.layer, X.module
    return ActivationScore(layer=layer, module=module, scores=np.mean(np.abs(xm), axis=0))


def pool_tokens(samples) -> np.ndarray:
    """Collapse per-sample token sequences to one row per sample by mean pooling.

    `samples` is a sequence of (tokens x features) arrays; returns a T x n
    matrix whose row t is the mean over sample t's token positions.
    """
    rows = []
    width = None
    for t, sample in enumerate(samples):
        arr = np.asarray(sample, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise EmptySequenceError(f"sample {t} has no token vectors")
        if width is None:
            width = arr.shape[1]
        elif arr.shape[1] != width:
            raise ValidationError(
                f"sample {t} has feature width {arr.shape[1]}, expected {width}"
            )
        rows.append(arr.mean(axis=0))
    if not rows:
        raise EmptySequenceError("no samples to pool")
    return np.stack(rows, axis=0)
