"""Differentiable layers and losses built from the primitives in :mod:`tensor`.

Sequence tensors are laid out as ``(..., T, d)``: time is the second-to-last
axis and any leading axes are independent batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import ShapeError, Tensor

INIT_SCALE = 0.08
PROB_EPS = 1e-7
PAD_ID = 0
UNK_ID = 1


def _uniform(rng: np.random.Generator, shape, name: str) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class EmbeddingTable:
    weights: Tensor

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init(cls, rows: int, cols: int, rng: np.random.Generator, name: str = "embedding"):
        w = _uniform(rng, (rows, cols), name)
        w.data[PAD_ID] = 0.0
        return cls(w)

    def parameters(self) -> list[Tensor]:
        return [self.weights]


@dataclass
class Conv1dParams:
    weights: Tensor  # (kernel, in_dim, filters)
    bias: Tensor  # (filters,)

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def filters(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def init(cls, kernel_size: int, in_dim: int, filters: int, rng, name: str = "conv"):
        return cls(_uniform(rng, (kernel_size, in_dim, filters), f"{name}.w"), _zeros((filters,), f"{name}.b"))

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]


@dataclass
class LstmDirection:
    w_in: Tensor  # (in_dim, 4H), gate order i, f, g, o
    w_rec: Tensor  # (H, 4H)
    bias: Tensor  # (4H,)

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng, name: str):
        bias = _zeros((4 * hidden,), f"{name}.b")
        bias.data[hidden:2 * hidden] = 1.0
        return cls(
            _uniform(rng, (in_dim, 4 * hidden), f"{name}.w_in"),
            _uniform(rng, (hidden, 4 * hidden), f"{name}.w_rec"),
            bias,
        )

    def parameters(self) -> list[Tensor]:
        return [self.w_in, self.w_rec, self.bias]


@dataclass
class BiLstmParams:
    hidden: int
    forward: LstmDirection
    backward: LstmDirection
    dropout: float = 0.4

    @property
    def in_dim(self) -> int:
        return self.forward.w_in.shape[0]

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng, dropout: float = 0.4, name: str = "bilstm"):
        return cls(
            hidden,
            LstmDirection.init(in_dim, hidden, rng, f"{name}.fw"),
            LstmDirection.init(in_dim, hidden, rng, f"{name}.bw"),
            dropout,
        )

    def parameters(self) -> list[Tensor]:
        return self.forward.parameters() + self.backward.parameters()


ACTIVATIONS = ("relu", "sigmoid", "softmax", "none")


@dataclass
class DenseParams:
    weights: Tensor  # (in, out)
    bias: Tensor  # (out,)
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng, name: str = "dense"):
        return cls(_uniform(rng, (in_dim, out_dim), f"{name}.w"), _zeros((out_dim,), f"{name}.b"), activation)

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]


# ---------------------------------------------------------------------------
# forward passes


def embedding_forward(ids, table: EmbeddingTable) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        bad = ids[(ids < 0) | (ids >= table.rows)].reshape(-1)[0]
        raise IndexError(f"embedding id {bad} outside [0, {table.rows})")
    return tc.embedding(table.weights, ids)


def conv1d_forward(x: Tensor, p: Conv1dParams) -> Tensor:
    """Same-padded cross-correlation over the time axis, plus bias, no activation.

    Zero padding is split evenly with the odd frame on the right, so kernel 4
    pads one frame before and two after.
    """
    if x.ndim < 2 or x.shape[-1] != p.in_dim:
        raise ShapeError(f"conv1d: input {x.shape} does not match in_dim {p.in_dim}")
    T = x.shape[-2]
    if T < 1:
        raise ShapeError("conv1d: empty sequence")
    k = p.kernel_size
    before = (k - 1) // 2
    after = k - 1 - before
    xp = tc.pad(x, before, after, axis=-2)
    frames = [tc.slice_axis(xp, j, j + T, axis=-2) for j in range(k)]
    windows = frames[0] if k == 1 else tc.concat(frames, axis=-1)
    w = tc.reshape(p.weights, (k * p.in_dim, p.filters))
    return tc.add(tc.matmul(windows, w), p.bias)


def max_pool_over_time(x: Tensor, mask_bias: np.ndarray | None = None) -> Tensor:
    """Column-wise max over the time axis; ``mask_bias`` (..., T, 1) excludes frames."""
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError(f"max_pool_over_time: empty sequence {x.shape}")
    if mask_bias is not None:
        x = tc.add(x, mask_bias)
    return tc.max_axis(x, axis=-2)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity outside training."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return tc.mul(x, keep)


def _lstm_direction(xw: Tensor, d: LstmDirection, hidden: int, mask: np.ndarray, reverse: bool) -> list[Tensor]:
    B, T = xw.shape[0], xw.shape[1]
    h = Tensor(np.zeros((B, hidden)))
    c = Tensor(np.zeros((B, hidden)))
    outs: list[Tensor | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    H = hidden
    for t in steps:
        x_t = tc.reshape(tc.slice_axis(xw, t, t + 1, axis=1), (B, 4 * H))
        z = tc.add(x_t, tc.matmul(h, d.w_rec))
        i = tc.sigmoid(tc.slice_axis(z, 0, H))
        f = tc.sigmoid(tc.slice_axis(z, H, 2 * H))
        g = tc.tanh(tc.slice_axis(z, 2 * H, 3 * H))
        o = tc.sigmoid(tc.slice_axis(z, 3 * H, 4 * H))
        c_new = tc.add(tc.mul(f, c), tc.mul(i, g))
        h_new = tc.mul(o, tc.tanh(c_new))
        m = mask[:, t:t + 1]
        if m.all():
            c, h = c_new, h_new
        else:
            # padded steps carry the previous state through unchanged
            c = tc.add(tc.mul(c_new, m), tc.mul(c, 1.0 - m))
            h = tc.add(tc.mul(h_new, m), tc.mul(h, 1.0 - m))
        outs[t] = tc.reshape(h, (B, 1, H))
    return outs


def bilstm_forward(x: Tensor, p: BiLstmParams, training: bool = False,
                   mask: np.ndarray | None = None, rng: np.random.Generator | None = None) -> Tensor:
    """Bidirectional LSTM over ``x`` (T, d) or (B, T, d); returns (..., T, 2*hidden).

    Dropout at ``p.dropout`` hits the concatenated per-step outputs only when
    training. ``mask`` (B, T) marks real positions.
    """
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"bilstm: input {x.shape} does not match in_dim {p.in_dim}")
    squeeze = x.ndim == 2
    if squeeze:
        x = tc.reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ShapeError(f"bilstm: expected (B, T, d) input, got {x.shape}")
    B, T, _ = x.shape
    mask = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, T)
    H = p.hidden
    fw_in = tc.add(tc.matmul(x, p.forward.w_in), p.forward.bias)
    bw_in = tc.add(tc.matmul(x, p.backward.w_in), p.backward.bias)
    fw = tc.concat(_lstm_direction(fw_in, p.forward, H, mask, reverse=False), axis=1)
    bw = tc.concat(_lstm_direction(bw_in, p.backward, H, mask, reverse=True), axis=1)
    out = dropout(tc.concat([fw, bw], axis=-1), p.dropout, training, rng)
    if squeeze:
        out = tc.reshape(out, (T, 2 * H))
    return out


def dense_forward(x: Tensor, p: DenseParams) -> Tensor:
    if x.shape[-1] != p.weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weights {p.weights.shape}")
    y = tc.add(tc.matmul(x, p.weights), p.bias)
    if p.activation == "relu":
        return tc.relu(y)
    if p.activation == "sigmoid":
        return tc.sigmoid(y)
    if p.activation == "softmax":
        return tc.softmax(y)
    return y


# ---------------------------------------------------------------------------
# losses


def _loss_mask(shape, mask) -> np.ndarray:
    m = np.ones(shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match targets {tuple(shape)}")
    if m.sum() == 0:
        raise ValueError("every position is masked; loss is undefined")
    return m


def bce_loss(preds: Tensor, targets, mask=None) -> Tensor:
    """Masked mean binary cross-entropy. ``preds`` has a trailing axis of size 1."""
    y = np.asarray(targets, dtype=np.float64)
    if preds.shape[-1] != 1 or preds.shape[:-1] != y.shape:
        raise ShapeError(f"bce_loss: preds {preds.shape} vs targets {y.shape}")
    m = _loss_mask(y.shape, mask)
    p = tc.clamp(tc.reshape(preds, y.shape), PROB_EPS, 1.0 - PROB_EPS)
    ll = tc.add(tc.mul(tc.log(p), y), tc.mul(tc.log(tc.sub(1.0, p)), 1.0 - y))
    return tc.mul(tc.sum_all(tc.mul(ll, m)), -1.0 / m.sum())


def cce_loss(probs: Tensor, targets, mask=None) -> Tensor:
    """Masked mean negative log-probability of the target class."""
    y = np.asarray(targets, dtype=np.int64)
    C = probs.shape[-1]
    if C < 2 or probs.shape[:-1] != y.shape:
        raise ShapeError(f"cce_loss: probs {probs.shape} vs targets {y.shape}")
    m = _loss_mask(y.shape, mask)
    valid = m > 0
    if np.any((y[valid] < 0) | (y[valid] >= C)):
        raise ValueError(f"cce_loss: target outside [0, {C})")
    onehot = np.zeros(probs.shape)
    yi = np.where(valid, y, 0)
    np.put_along_axis(onehot, yi[..., None], 1.0, axis=-1)
    onehot *= m[..., None]
    logp = tc.log(tc.clamp(probs, PROB_EPS, 1.0 - PROB_EPS))
    return tc.mul(tc.sum_all(tc.mul(logp, onehot)), -1.0 / m.sum())
