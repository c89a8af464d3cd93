"""Neural sequence-model building blocks.

Each layer is a pure function of (input, params, rng) producing a graph
node, with a hand-derived backward closure. Time is always the leading
axis: inputs are L×C with one row per second.

Conventions fixed here and relied on by the checkpoint format:
  * LSTM gate blocks are stacked in the row order (input i, forget f,
    cell g, output o) inside the 4H-row weight matrices and bias.
  * Convolution weights are C_out×C_in×K with K odd; outputs keep the
    input length via symmetric zero padding of (K-1)/2.
  * Parameters are named "<layer>.<field>".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from stepseq.numerics import Parameter, ShapeError, Tensor, as_tensor, _sigmoid


@dataclass
class Conv1dParams:
    weight: Parameter  # C_out × C_in × K
    bias: Parameter  # C_out

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


@dataclass
class LstmParams:
    w_input: Parameter  # 4H × C_in
    w_hidden: Parameter  # 4H × H
    bias: Parameter  # 4H

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def in_channels(self) -> int:
        return self.w_input.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w_input, self.w_hidden, self.bias]


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams

    @property
    def hidden(self) -> int:
        return self.fwd.hidden

    @property
    def in_channels(self) -> int:
        return self.fwd.in_channels

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()


@dataclass
class DenseParams:
    weight: Parameter  # D_in × C
    bias: Parameter  # C

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# forward operations


def conv1d_same(x, p: Conv1dParams) -> Tensor:
    """Temporal convolution with zero padding keeping the output length L.

    out[t, o] = bias[o] + sum_{k,c} weight[o, c, k] * x_padded[t + k, c]
    """
    x = as_tensor(x)
    w, b = p.weight, p.bias
    if x.data.ndim != 2 or x.shape[1] != p.in_channels:
        raise ShapeError(
            f"conv1d_same: input {x.shape} does not match {p.in_channels} channels"
        )
    length = x.shape[0]
    if length < 1:
        raise ShapeError("conv1d_same: empty input")
    k = p.kernel_size
    pad = (k - 1) // 2

    padded = np.zeros((length + k - 1, x.shape[1]))
    padded[pad : pad + length] = x.data
    windows = sliding_window_view(padded, k, axis=0)  # L × C_in × K
    out = np.tensordot(windows, w.data, axes=([1, 2], [1, 2])) + b.data

    def vjp(g):
        dw = np.tensordot(g, windows, axes=([0], [0]))
        db = g.sum(axis=0)
        per_tap = np.tensordot(g, w.data, axes=([1], [0]))  # L × C_in × K
        dpadded = np.zeros_like(padded)
        for tap in range(k):
            dpadded[tap : tap + length] += per_tap[:, :, tap]
        return dpadded[pad : pad + length], dw, db

    return Tensor(out, (x, w, b), vjp)


def lstm_forward(x, p: LstmParams, direction: str = "fwd") -> Tensor:
    """Run an LSTM over the rows of x, starting from zero state.

    direction "bwd" traverses the rows in reverse and re-reverses the
    output, so rows always line up with the input's time order. The cell
    is the standard no-peephole formulation:

        a_t = W_x x_t + W_h h_{t-1} + b          (4H preactivations)
        i, f, o = sigmoid(a), g = tanh(a)        (per gate block)
        c_t = f * c_{t-1} + i * g
        h_t = o * tanh(c_t)
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError(f"direction must be 'fwd' or 'bwd', got {direction!r}")
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != p.in_channels:
        raise ShapeError(
            f"lstm_forward: input {x.shape} does not match {p.in_channels} channels"
        )
    hid = p.hidden
    length = x.shape[0]
    wx, wh, b = p.w_input, p.w_hidden, p.bias

    xs = x.data if direction == "fwd" else np.ascontiguousarray(x.data[::-1])
    pre = xs @ wx.data.T + b.data  # L × 4H, input contribution batched
    wh_t = np.ascontiguousarray(wh.data.T)

    gates = np.empty((length, 4 * hid))
    cells = np.empty((length, hid))
    cell_tanh = np.empty((length, hid))
    hidden = np.empty((length, hid))
    h = np.zeros(hid)
    c = np.zeros(hid)
    with np.errstate(over="ignore"):  # saturating exp inside the sigmoids
        for t in range(length):
            a = gates[t]
            np.matmul(h, wh_t, out=a)
            a += pre[t]
            # in place: sigmoid on the i,f blocks and o block, tanh on g
            np.negative(a[: 2 * hid], out=a[: 2 * hid])
            np.exp(a[: 2 * hid], out=a[: 2 * hid])
            a[: 2 * hid] += 1.0
            np.reciprocal(a[: 2 * hid], out=a[: 2 * hid])
            np.tanh(a[2 * hid : 3 * hid], out=a[2 * hid : 3 * hid])
            np.negative(a[3 * hid :], out=a[3 * hid :])
            np.exp(a[3 * hid :], out=a[3 * hid :])
            a[3 * hid :] += 1.0
            np.reciprocal(a[3 * hid :], out=a[3 * hid :])

            c = a[hid : 2 * hid] * c
            c += a[:hid] * a[2 * hid : 3 * hid]
            tc = np.tanh(c)
            h = a[3 * hid :] * tc
            cells[t] = c
            cell_tanh[t] = tc
            hidden[t] = h

    out = hidden if direction == "fwd" else hidden[::-1]

    def vjp(g):
        gy = g if direction == "fwd" else np.ascontiguousarray(g[::-1])
        ig = gates[:, :hid]
        fg = gates[:, hid : 2 * hid]
        gg = gates[:, 2 * hid : 3 * hid]
        og = gates[:, 3 * hid :]
        # loop-invariant gate derivative factors, batched over time
        d_sig_i = gg * ig * (1.0 - ig)
        d_sig_f = fg * (1.0 - fg)
        d_sig_f[1:] *= cells[:-1]
        d_sig_f[0] = 0.0  # c_{-1} = 0
        d_sig_g = ig * (1.0 - gg * gg)
        d_sig_o = cell_tanh * og * (1.0 - og)
        d_tan_c = og * (1.0 - cell_tanh * cell_tanh)

        d_pre = np.empty((length, 4 * hid))
        dh = np.zeros(hid)
        dc = np.zeros(hid)
        for t in range(length - 1, -1, -1):
            dht = gy[t] + dh
            dct = dht * d_tan_c[t] + dc
            d_pre[t, :hid] = dct * d_sig_i[t]
            d_pre[t, hid : 2 * hid] = dct * d_sig_f[t]
            d_pre[t, 2 * hid : 3 * hid] = dct * d_sig_g[t]
            d_pre[t, 3 * hid :] = dht * d_sig_o[t]
            dc = dct * fg[t]
            dh = d_pre[t] @ wh.data
        h_prev = np.vstack([np.zeros((1, hid)), hidden[:-1]])
        dwx = d_pre.T @ xs
        dwh = d_pre.T @ h_prev
        db = d_pre.sum(axis=0)
        dxs = d_pre @ wx.data
        dx = dxs if direction == "fwd" else dxs[::-1]
        return dx, dwx, dwh, db

    return Tensor(out, (x, wx, wh, b), vjp)


def bilstm_forward(x, p: BiLstmParams) -> Tensor:
    """Column-concatenated [forward | backward] LSTM passes, L × 2H."""
    from stepseq.numerics import concat_last_axis

    return concat_last_axis(
        [lstm_forward(x, p.fwd, "fwd"), lstm_forward(x, p.bwd, "bwd")]
    )


def dense_forward(x, p: DenseParams) -> Tensor:
    """Affine map applied per row: x @ weight + bias."""
    x = as_tensor(x)
    w, b = p.weight, p.bias
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"dense_forward: input {x.shape} does not match weight {w.shape}"
        )
    out = x.data @ w.data + b.data

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, (x, w, b), vjp)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: zero each element with probability rate, scale
    survivors by 1/(1-rate). Identity at inference or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_conv1d(
    c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator, name: str
) -> Conv1dParams:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
    weight = glorot_uniform(
        rng,
        (c_out, c_in, kernel_size),
        fan_in=c_in * kernel_size,
        fan_out=c_out * kernel_size,
    )
    return Conv1dParams(
        weight=Parameter(weight, f"{name}.weight"),
        bias=Parameter(np.zeros(c_out), f"{name}.bias"),
    )


def init_lstm(c_in: int, hidden: int, rng: np.random.Generator, name: str) -> LstmParams:
    w_input = glorot_uniform(rng, (4 * hidden, c_in), fan_in=c_in, fan_out=4 * hidden)
    w_hidden = glorot_uniform(
        rng, (4 * hidden, hidden), fan_in=hidden, fan_out=4 * hidden
    )
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0  # forget gate opens early BPTT
    return LstmParams(
        w_input=Parameter(w_input, f"{name}.w_input"),
        w_hidden=Parameter(w_hidden, f"{name}.w_hidden"),
        bias=Parameter(bias, f"{name}.bias"),
    )


def init_bilstm(
    c_in: int, hidden: int, rng: np.random.Generator, name: str
) -> BiLstmParams:
    return BiLstmParams(
        fwd=init_lstm(c_in, hidden, rng, f"{name}.fwd"),
        bwd=init_lstm(c_in, hidden, rng, f"{name}.bwd"),
    )


def init_dense(d_in: int, c: int, rng: np.random.Generator, name: str) -> DenseParams:
    weight = glorot_uniform(rng, (d_in, c), fan_in=d_in, fan_out=c)
    return DenseParams(
        weight=Parameter(weight, f"{name}.weight"),
        bias=Parameter(np.zeros(c), f"{name}.bias"),
    )
