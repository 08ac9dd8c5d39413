"""Embedding lookup, LSTM cell, bidirectional LSTM, and layer stacking.

Sequences move through the encoder as lists of per-position tensors of shape
[batch x dim]; the single-sequence entry points (`embed`, `bilstm`,
`stack_bilstm`) wrap the batched internals for a [T x dim] matrix view.

Gate block layout inside every LSTM weight matrix is fixed as
(input, forget, cell-candidate, output).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ParameterSet,
    Tensor,
    add,
    concat,
    gather_rows,
    matmul,
    mul,
    sigmoid,
    slice_axis,
    tanh,
)

__all__ = [
    "EmbeddingTable",
    "LstmParams",
    "BiLstmLayer",
    "PAD_ID",
    "UNK_ID",
    "embed",
    "lstm_step",
    "bilstm",
    "bilstm_batch",
    "stack_bilstm",
    "stack_bilstm_batch",
    "glorot_uniform",
    "init_embedding",
    "init_lstm_params",
    "init_bilstm_layer",
]

PAD_ID = 0
UNK_ID = 1


@dataclass
class EmbeddingTable:
    """Token embedding matrix; row 0 is PAD, row 1 is UNK."""

    table: Tensor  # [vocab_size x dim]

    @property
    def vocab_size(self) -> int:
        return self.table.data.shape[0]

    @property
    def dim(self) -> int:
        return self.table.data.shape[1]


@dataclass
class LstmParams:
    """One direction of an LSTM layer.

    w_in:  [in_dim x 4*hidden]   input-to-gates
    w_rec: [hidden x 4*hidden]   hidden-to-gates
    bias:  [4*hidden]            gate biases, forget block initialized to 1
    """

    w_in: Tensor
    w_rec: Tensor
    bias: Tensor

    @property
    def hidden(self) -> int:
        return self.w_rec.data.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_in.data.shape[0]


@dataclass
class BiLstmLayer:
    fwd: LstmParams
    bwd: LstmParams

    @property
    def in_dim(self) -> int:
        return self.fwd.in_dim

    @property
    def out_dim(self) -> int:
        return 2 * self.fwd.hidden


def embed(token_ids, table: EmbeddingTable) -> Tensor:
    """Look up embedding rows for a sequence of token ids -> [len x dim]."""
    ids = np.asarray(token_ids, dtype=np.intp).reshape(-1)
    if ids.size and ids.max() >= table.vocab_size:
        raise ValueError(f"embed: id {ids.max()} out of range for vocab of {table.vocab_size}")
    if ids.size == 0:
        return Tensor(np.zeros((0, table.dim), dtype=table.table.dtype))
    return gather_rows(table.table, ids)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM cell update on a [batch x in_dim] input."""
    gates = add(add(matmul(x, p.w_in), matmul(h_prev, p.w_rec)), p.bias)
    return _finish_step(gates, c_prev, p.hidden)


def _finish_step(gates: Tensor, c_prev: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    i = sigmoid(slice_axis(gates, 1, 0, hidden))
    f = sigmoid(slice_axis(gates, 1, hidden, 2 * hidden))
    g = tanh(slice_axis(gates, 1, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_axis(gates, 1, 3 * hidden, 4 * hidden))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def _run_direction(xs: list[Tensor], p: LstmParams, mask: np.ndarray | None, reverse: bool) -> list[Tensor]:
    """Run one LSTM direction over per-position inputs, carrying state
    through masked (padding) positions unchanged."""
    steps = len(xs)
    batch = xs[0].data.shape[0]
    dtype = xs[0].dtype
    # input projections do not depend on the recurrence: hoist them into one matmul
    stacked = concat(xs, axis=0) if steps > 1 else xs[0]
    proj = matmul(stacked, p.w_in)
    h = Tensor(np.zeros((batch, p.hidden), dtype=dtype))
    c = Tensor(np.zeros((batch, p.hidden), dtype=dtype))
    outputs: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        proj_t = slice_axis(proj, 0, t * batch, (t + 1) * batch)
        gates = add(add(proj_t, matmul(h, p.w_rec)), p.bias)
        h_new, c_new = _finish_step(gates, c, p.hidden)
        if mask is not None:
            m = Tensor(mask[:, t : t + 1].astype(dtype))
            inv = Tensor(1.0 - m.data)
            h = add(mul(h_new, m), mul(h, inv))
            c = add(mul(c_new, m), mul(c, inv))
        else:
            h, c = h_new, c_new
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def bilstm_batch(xs: list[Tensor], layer: BiLstmLayer, mask: np.ndarray | None = None) -> list[Tensor]:
    """Bidirectional LSTM over per-position [batch x in_dim] tensors.

    Position t of the output concatenates the forward state over x_0..x_t
    with the backward state over x_{T-1}..x_t; both directions start from
    zeros.  `mask` is a [batch x T] boolean array; state carries through
    False positions unchanged so padding cannot leak into real positions.
    """
    if not xs:
        raise ValueError("bilstm: empty sequence")
    if xs[0].data.shape[1] != layer.in_dim:
        raise ValueError(f"bilstm: input dim {xs[0].data.shape[1]} != layer in_dim {layer.in_dim}")
    fwd = _run_direction(xs, layer.fwd, mask, reverse=False)
    bwd = _run_direction(xs, layer.bwd, mask, reverse=True)
    return [concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]


def bilstm(xs: Tensor, layer: BiLstmLayer) -> Tensor:
    """Single-sequence view: [T x in_dim] -> [T x 2*hidden]."""
    t_len = xs.data.shape[0]
    if t_len < 1:
        raise ValueError("bilstm: empty sequence")
    rows = [slice_axis(xs, 0, t, t + 1) for t in range(t_len)]
    outs = bilstm_batch(rows, layer)
    return concat(outs, axis=0)


def stack_bilstm_batch(
    xs: list[Tensor], layers: list[BiLstmLayer], mask: np.ndarray | None = None
) -> list[list[Tensor]]:
    """Run stacked BiLSTM layers; returns the per-position outputs of every layer."""
    _validate_stack(layers)
    taps: list[list[Tensor]] = []
    current = xs
    for layer in layers:
        current = bilstm_batch(current, layer, mask)
        taps.append(current)
    return taps


def stack_bilstm(xs: Tensor, layers: list[BiLstmLayer]) -> list[Tensor]:
    """Single-sequence view of the stack: list of [T x 2*hidden] tap outputs."""
    _validate_stack(layers)
    t_len = xs.data.shape[0]
    if t_len < 1:
        raise ValueError("stack_bilstm: empty sequence")
    rows = [slice_axis(xs, 0, t, t + 1) for t in range(t_len)]
    return [concat(tap, axis=0) for tap in stack_bilstm_batch(rows, layers)]


def _validate_stack(layers: list[BiLstmLayer]) -> None:
    if not layers:
        raise ValueError("stack: need at least one layer")
    for i in range(1, len(layers)):
        if layers[i].in_dim != layers[i - 1].out_dim:
            raise ValueError(
                f"stack: layer {i + 1} input dim {layers[i].in_dim} != "
                f"layer {i} output dim {layers[i - 1].out_dim}"
            )


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_embedding(params: ParameterSet, name: str, vocab_size: int, dim: int, rng) -> EmbeddingTable:
    table = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
    return EmbeddingTable(params.add(name, table))


def init_lstm_params(
    params: ParameterSet, prefix: str, in_dim: int, hidden: int, rng, forget_bias: float = 1.0
) -> LstmParams:
    w_in = glorot_uniform(rng, in_dim, 4 * hidden, (in_dim, 4 * hidden))
    w_rec = glorot_uniform(rng, hidden, 4 * hidden, (hidden, 4 * hidden))
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = forget_bias
    return LstmParams(
        w_in=params.add(f"{prefix}.w_in", w_in),
        w_rec=params.add(f"{prefix}.w_rec", w_rec),
        bias=params.add(f"{prefix}.bias", bias),
    )


def init_bilstm_layer(
    params: ParameterSet, prefix: str, in_dim: int, hidden: int, rng, forget_bias: float = 1.0
) -> BiLstmLayer:
    return BiLstmLayer(
        fwd=init_lstm_params(params, f"{prefix}.fwd", in_dim, hidden, rng, forget_bias),
        bwd=init_lstm_params(params, f"{prefix}.bwd", in_dim, hidden, rng, forget_bias),
    )
