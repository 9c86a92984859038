"""Differentiable convolution, normalization and framing primitives.

All feature maps are laid out as [batch, channels, time, freq].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_op

Pads = tuple[tuple[int, int], tuple[int, int]]


def _out_len(n: int, pad: tuple[int, int], k: int, s: int) -> int:
    return (n + pad[0] + pad[1] - k) // s + 1


def _im2col(xpad: np.ndarray, kt: int, kf: int, st: int, sf: int, to: int, fo: int) -> np.ndarray:
    # [B, C, T', F', kt, kf] -> [B*T'*F', C*kt*kf]
    win = sliding_window_view(xpad, (kt, kf), axis=(2, 3))[:, :, : st * (to - 1) + 1 : st, : sf * (fo - 1) + 1 : sf]
    b, c = xpad.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * to * fo, c * kt * kf)


def _col2im(cols: np.ndarray, pad_shape, kt: int, kf: int, st: int, sf: int, to: int, fo: int) -> np.ndarray:
    b, c = pad_shape[:2]
    cols = cols.reshape(b, to, fo, c, kt, kf).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(pad_shape, dtype=cols.dtype)
    for i in range(kt):
        for j in range(kf):
            out[:, :, i : i + st * (to - 1) + 1 : st, j : j + sf * (fo - 1) + 1 : sf] += cols[:, :, i, j]
    return out


def _crop(a: np.ndarray, pads: Pads) -> np.ndarray:
    (t0, t1), (f0, f1) = pads
    return a[:, :, t0 : a.shape[2] - t1, f0 : a.shape[3] - f1]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1), padding: Pads = ((0, 0), (0, 0))) -> Tensor:
    """Cross-correlation of x [B, C, T, F] with w [O, C, kt, kf].

    ``padding`` gives (before, after) zero padding for time then frequency;
    asymmetric time padding expresses causal convolution.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    bsz, c, t, f = x.shape
    o, _, kt, kf = w.shape
    st, sf = stride
    to, fo = _out_len(t, padding[0], kt, st), _out_len(f, padding[1], kf, sf)
    if to < 1 or fo < 1:
        raise ValueError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    xpad = np.pad(x.data, ((0, 0), (0, 0), padding[0], padding[1]))
    cols = _im2col(xpad, kt, kf, st, sf, to, fo)
    wmat = w.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(bsz, to, fo, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _crop(_col2im(gmat @ wmat, xpad.shape, kt, kf, st, sf, to, fo), padding)
        if w.requires_grad:
            gw = (gmat.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_op(np.ascontiguousarray(out), parents, bw)


def conv_transpose2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride=(1, 1),
    padding: Pads = ((0, 0), (0, 0)),
    output_size: tuple[int, int] | None = None,
) -> Tensor:
    """Adjoint of ``conv2d`` with the same stride/padding.

    x is [B, Ci, T, F] and w is [Ci, Co, kt, kf]. ``output_size`` (T_out,
    F_out) picks among the sizes that conv2d would map back onto x's shape.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose2d shape mismatch: x {x.shape}, w {w.shape}")
    bsz, ci, t, f = x.shape
    _, co, kt, kf = w.shape
    st, sf = stride
    if output_size is None:
        output_size = (
            (t - 1) * st + kt - sum(padding[0]),
            (f - 1) * sf + kf - sum(padding[1]),
        )
    to, fo = output_size
    if _out_len(to, padding[0], kt, st) != t or _out_len(fo, padding[1], kf, sf) != f:
        raise ValueError(f"conv_transpose2d: output_size {output_size} incompatible with input {x.shape}")
    pad_shape = (bsz, co, to + sum(padding[0]), fo + sum(padding[1]))
    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, ci)
    wmat = w.data.reshape(ci, -1)
    out = _crop(_col2im(xmat @ wmat, pad_shape, kt, kf, st, sf, t, f), padding)
    if b is not None:
        out = out + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gpad = np.pad(g, ((0, 0), (0, 0), padding[0], padding[1]))
        cols = _im2col(gpad, kt, kf, st, sf, t, f)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (cols @ wmat.T).reshape(bsz, t, f, ci).transpose(0, 3, 1, 2)
        if w.requires_grad:
            gw = (xmat.T @ cols).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_op(np.ascontiguousarray(out), parents, bw)


def depthwise_conv2d(x: Tensor, w: Tensor, padding: Pads = ((1, 1), (1, 1))) -> Tensor:
    """Per-channel cross-correlation; w is [C, kt, kf], stride 1."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ValueError(f"depthwise_conv2d shape mismatch: x {x.shape}, w {w.shape}")
    _, c, t, f = x.shape
    _, kt, kf = w.shape
    to, fo = _out_len(t, padding[0], kt, 1), _out_len(f, padding[1], kf, 1)
    xpad = np.pad(x.data, ((0, 0), (0, 0), padding[0], padding[1]))
    out = np.zeros((x.shape[0], c, to, fo), dtype=x.dtype)
    for i in range(kt):
        for j in range(kf):
            out += xpad[:, :, i : i + to, j : j + fo] * w.data[None, :, i, j, None, None]

    def bw(g):
        gpad = np.zeros_like(xpad)
        gw = np.zeros_like(w.data)
        for i in range(kt):
            for j in range(kf):
                gpad[:, :, i : i + to, j : j + fo] += g * w.data[None, :, i, j, None, None]
                gw[:, i, j] = np.einsum("bctf,bctf->c", g, xpad[:, :, i : i + to, j : j + fo])
        return _crop(gpad, padding), gw

    return make_op(out, (x, w), bw)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Normalize each channel with its batch statistics over (B, T, F).

    Returns the output tensor plus the (mean, biased var) used.
    """
    axes = (0, 2, 3)
    n = x.data.size // x.shape[1]
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g4, b4 = gamma.data[None, :, None, None], beta.data[None, :, None, None]
    out = xhat * g4 + b4

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * g4
        gx = inv / n * (n * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, gg, gb

    return make_op(out.astype(x.dtype), (x, gamma, beta), bw), mu.ravel(), var.ravel()


def frame(x: Tensor, win_len: int, hop: int) -> Tensor:
    """Slice the last axis into frames: [..., N] -> [..., T, win_len]."""
    x = as_tensor(x)
    n = x.shape[-1]
    if n < win_len:
        raise ValueError(f"signal of {n} samples is shorter than one {win_len}-sample frame")
    t = 1 + (n - win_len) // hop
    out = sliding_window_view(x.data, win_len, axis=-1)[..., : hop * (t - 1) + 1 : hop, :]
    return make_op(np.ascontiguousarray(out), (x,), lambda g: (_ola(g, hop, n),))


def _ola(frames: np.ndarray, hop: int, n: int) -> np.ndarray:
    t, win = frames.shape[-2:]
    out = np.zeros(frames.shape[:-2] + (n,), dtype=frames.dtype)
    for i in range(t):
        seg = out[..., i * hop : i * hop + win]
        seg += frames[..., i, : seg.shape[-1]]
    return out


def overlap_add(frames: Tensor, hop: int, n: int) -> Tensor:
    """Sum frames [..., T, win] at ``hop`` spacing into [..., n] samples."""
    frames = as_tensor(frames)
    t, win = frames.shape[-2:]

    def bw(g):
        need = (t - 1) * hop + win
        gp = np.pad(g, [(0, 0)] * (g.ndim - 1) + [(0, max(0, need - n))])
        return (np.ascontiguousarray(sliding_window_view(gp, win, axis=-1)[..., : hop * (t - 1) + 1 : hop, :]),)

    return make_op(_ola(frames.data, hop, n), (frames,), bw)
