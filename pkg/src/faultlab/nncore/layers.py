"""LSTM and dense layer primitives with hand-derived backward passes.

All math is float64. Batched sequence arrays are shaped (B, T, dim); the
thin single-sequence wrappers near the bottom take (T, dim) and plain
vectors, which is the surface most callers and tests use.

LSTM gate layout: the 4H rows of ``w_input``/``w_hidden`` (and entries of
``bias``) are sliced as [input gate | forget gate | candidate | output gate].
Gates use the logistic sigmoid, the candidate uses tanh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatchError

ACTIVATIONS = ("identity", "softmax", "sigmoid", "tanh")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax; rows sum to 1 and are strictly positive."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


@dataclass
class LstmCellParams:
    """Weights of one LSTM cell.

    w_input: (4H, D), w_hidden: (4H, H), bias: (4H,).
    """

    w_input: np.ndarray
    w_hidden: np.ndarray
    bias: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_input.shape[1]

    def validate(self) -> None:
        h = self.hidden_size
        if self.w_input.shape[0] != 4 * h or self.w_hidden.shape != (4 * h, h):
            raise ShapeMismatchError(
                f"inconsistent LSTM shapes: w_input {self.w_input.shape}, "
                f"w_hidden {self.w_hidden.shape}"
            )
        if self.bias.shape != (4 * h,):
            raise ShapeMismatchError(f"bias shape {self.bias.shape}, expected ({4 * h},)")
        for arr in (self.w_input, self.w_hidden, self.bias):
            if not np.all(np.isfinite(arr)):
                raise ShapeMismatchError("non-finite LSTM parameter")

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> "LstmCellParams":
        """Uniform +-1/sqrt(fan_in) weights, zero bias."""
        lim_x = 1.0 / np.sqrt(input_size)
        lim_h = 1.0 / np.sqrt(hidden_size)
        return cls(
            w_input=rng.uniform(-lim_x, lim_x, size=(4 * hidden_size, input_size)),
            w_hidden=rng.uniform(-lim_h, lim_h, size=(4 * hidden_size, hidden_size)),
            bias=np.zeros(4 * hidden_size),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmCellParams":
        return cls(
            w_input=np.zeros((4 * hidden_size, input_size)),
            w_hidden=np.zeros((4 * hidden_size, hidden_size)),
            bias=np.zeros(4 * hidden_size),
        )


@dataclass
class DenseParams:
    """Fully connected layer: activation(w @ x + b). w: (out, in), b: (out,)."""

    w: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def out_size(self) -> int:
        return self.w.shape[0]

    @property
    def in_size(self) -> int:
        return self.w.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_size: int, out_size: int,
             activation: str = "identity") -> "DenseParams":
        lim = 1.0 / np.sqrt(in_size)
        return cls(
            w=rng.uniform(-lim, lim, size=(out_size, in_size)),
            b=np.zeros(out_size),
            activation=activation,
        )


@dataclass
class LstmCache:
    """Forward-pass intermediates needed by lstm_backward_batch."""

    x: np.ndarray        # (B, T, D)
    gate_i: np.ndarray   # (B, T, H)
    gate_f: np.ndarray
    gate_g: np.ndarray
    gate_o: np.ndarray
    c: np.ndarray        # cell states after each step
    tanh_c: np.ndarray
    h: np.ndarray        # hidden outputs
    h0: np.ndarray       # (B, H)
    c0: np.ndarray
    params: LstmCellParams


@dataclass
class LstmGrads:
    w_input: np.ndarray
    w_hidden: np.ndarray
    bias: np.ndarray
    x: np.ndarray    # gradient w.r.t. the input sequence
    h0: np.ndarray
    c0: np.ndarray


def lstm_forward_batch(
    x: np.ndarray,
    p: LstmCellParams,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
    want_cache: bool = False,
) -> tuple[np.ndarray, LstmCache | None]:
    """Run an LSTM over a batch of sequences.

    x: (B, T, D) -> hidden outputs (B, T, H).
    """
    if x.ndim != 3:
        raise ShapeMismatchError(f"expected (B, T, D) input, got shape {x.shape}")
    nb, nt, nd = x.shape
    if nt == 0:
        raise ShapeMismatchError("empty sequence (T=0)")
    if nd != p.input_size:
        raise ShapeMismatchError(f"input dim {nd} != layer input size {p.input_size}")
    nh = p.hidden_size
    h_prev = np.zeros((nb, nh)) if h0 is None else h0
    c_prev = np.zeros((nb, nh)) if c0 is None else c0
    if h_prev.shape != (nb, nh) or c_prev.shape != (nb, nh):
        raise ShapeMismatchError("initial state shape mismatch")

    wx_t = p.w_input.T   # (D, 4H)
    wh_t = p.w_hidden.T  # (H, 4H)
    gi = np.empty((nb, nt, nh))
    gf = np.empty((nb, nt, nh))
    gg = np.empty((nb, nt, nh))
    go = np.empty((nb, nt, nh))
    cs = np.empty((nb, nt, nh))
    tcs = np.empty((nb, nt, nh))
    hs = np.empty((nb, nt, nh))
    h0_saved, c0_saved = h_prev, c_prev

    for t in range(nt):
        a = x[:, t, :] @ wx_t + h_prev @ wh_t + p.bias
        i = sigmoid(a[:, :nh])
        f = sigmoid(a[:, nh:2 * nh])
        g = np.tanh(a[:, 2 * nh:3 * nh])
        o = sigmoid(a[:, 3 * nh:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        gi[:, t], gf[:, t], gg[:, t], go[:, t] = i, f, g, o
        cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
        h_prev, c_prev = h, c

    cache = None
    if want_cache:
        cache = LstmCache(x, gi, gf, gg, go, cs, tcs, hs, h0_saved, c0_saved, p)
    return hs, cache


def lstm_backward_batch(
    cache: LstmCache,
    dh_seq: np.ndarray,
    dh_last: np.ndarray | None = None,
    dc_last: np.ndarray | None = None,
) -> LstmGrads:
    """Backpropagate through time.

    dh_seq: (B, T, H) upstream gradient on every hidden output; dh_last/dc_last
    add extra gradient on the final hidden/cell state (used when only the last
    state feeds downstream layers).
    """
    p = cache.params
    nb, nt, nd = cache.x.shape
    nh = p.hidden_size
    if dh_seq.shape != cache.h.shape:
        raise ShapeMismatchError("dh_seq shape mismatch")

    d_wx = np.zeros_like(p.w_input)
    d_wh = np.zeros_like(p.w_hidden)
    d_b = np.zeros_like(p.bias)
    dx = np.empty_like(cache.x)
    dh_carry = np.zeros((nb, nh)) if dh_last is None else dh_last.copy()
    dc_carry = np.zeros((nb, nh)) if dc_last is None else dc_last.copy()

    for t in range(nt - 1, -1, -1):
        i, f, g, o = cache.gate_i[:, t], cache.gate_f[:, t], cache.gate_g[:, t], cache.gate_o[:, t]
        tc = cache.tanh_c[:, t]
        c_prev = cache.c[:, t - 1] if t > 0 else cache.c0
        h_prev = cache.h[:, t - 1] if t > 0 else cache.h0

        dh = dh_seq[:, t] + dh_carry
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_carry
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_carry = dc * f

        da = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )  # (B, 4H), same gate order as the parameter rows
        d_wx += da.T @ cache.x[:, t]
        d_wh += da.T @ h_prev
        d_b += da.sum(axis=0)
        dx[:, t] = da @ p.w_input
        dh_carry = da @ p.w_hidden

    return LstmGrads(d_wx, d_wh, d_b, dx, dh_carry, dc_carry)


def dense_forward_batch(x: np.ndarray, p: DenseParams) -> np.ndarray:
    """Apply a dense layer to the last axis of x (any leading shape)."""
    if x.shape[-1] != p.in_size:
        raise ShapeMismatchError(f"input dim {x.shape[-1]} != layer in_size {p.in_size}")
    z = x @ p.w.T + p.b
    if p.activation == "identity":
        return z
    if p.activation == "sigmoid":
        return sigmoid(z)
    if p.activation == "tanh":
        return np.tanh(z)
    return softmax(z, axis=-1)


def dense_backward_batch(
    x: np.ndarray, out: np.ndarray, d_out: np.ndarray, p: DenseParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of a dense layer given upstream d_out.

    Returns (dw, db, dx). `out` must be the forward activation output for the
    same x. Works on any leading shape; parameters accumulate over it.
    """
    if p.activation == "identity":
        dz = d_out
    elif p.activation == "sigmoid":
        dz = d_out * out * (1.0 - out)
    elif p.activation == "tanh":
        dz = d_out * (1.0 - out * out)
    else:  # softmax: full Jacobian-vector product, row-wise
        dz = out * (d_out - np.sum(d_out * out, axis=-1, keepdims=True))
    flat_x = x.reshape(-1, p.in_size)
    flat_dz = dz.reshape(-1, p.out_size)
    dw = flat_dz.T @ flat_x
    db = flat_dz.sum(axis=0)
    dx = dz @ p.w
    return dw, db, dx


# --- single-sequence / vector wrappers -------------------------------------

def lstm_cell_forward(
    x: np.ndarray, h: np.ndarray, c: np.ndarray, p: LstmCellParams
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step on plain vectors: returns (h_next, c_next)."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    c = np.asarray(c, dtype=float)
    nh = p.hidden_size
    if x.shape != (p.input_size,) or h.shape != (nh,) or c.shape != (nh,):
        raise ShapeMismatchError(
            f"cell input shapes {x.shape}/{h.shape}/{c.shape} do not match params "
            f"(D={p.input_size}, H={nh})"
        )
    a = p.w_input @ x + p.w_hidden @ h + p.bias
    i = sigmoid(a[:nh])
    f = sigmoid(a[nh:2 * nh])
    g = np.tanh(a[2 * nh:3 * nh])
    o = sigmoid(a[3 * nh:])
    c_next = f * c + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next


def lstm_layer_forward(
    seq: np.ndarray,
    p: LstmCellParams,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
) -> np.ndarray:
    """Run the cell over a (T, D) sequence; returns the (T, H) hidden sequence."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2:
        raise ShapeMismatchError(f"expected (T, D) sequence, got shape {seq.shape}")
    if seq.shape[0] == 0:
        raise ShapeMismatchError("empty sequence")
    batched = seq[None, :, :]
    h0b = None if h0 is None else np.asarray(h0, dtype=float)[None, :]
    c0b = None if c0 is None else np.asarray(c0, dtype=float)[None, :]
    hs, _ = lstm_forward_batch(batched, p, h0b, c0b)
    return hs[0]


def dense_forward(x: np.ndarray, p: DenseParams) -> np.ndarray:
    """Dense layer on a single vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.in_size,):
        raise ShapeMismatchError(f"input shape {x.shape} != ({p.in_size},)")
    return dense_forward_batch(x[None, :], p)[0]
