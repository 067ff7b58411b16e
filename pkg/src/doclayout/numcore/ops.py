"""Differentiable primitives.

Every op takes and returns :class:`Tensor` (python scalars and arrays are
promoted to constants). Inputs are never mutated. Broadcasting follows numpy
alignment on trailing axes; backward rules sum the gradient back down to
each operand's shape.
"""

from __future__ import annotations

import builtins

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NumericError, ShapeError, Tensor, as_tensor

_make = Tensor._make


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return _make(y, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of a non-positive value")

    def backward(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), backward)


# -- reductions and shape -----------------------------------------------------


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(y, dtype=np.float64), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(y, (x,), backward)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(x.data, axes), (x,), backward)


def index(x, idx) -> Tensor:
    """``x[idx]`` with scatter-add backward (handles repeated indices)."""
    x = as_tensor(x)
    y = np.array(x.data[idx], dtype=np.float64)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(y, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(
                f"concat along axis {axis}: incompatible shapes "
                f"{[t.shape for t in ts]}"
            )
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; ``a`` may carry leading batch axes when ``b`` is 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    y = np.matmul(a.data, b.data)

    if b.ndim == 2:

        def backward(g):
            ga = np.matmul(g, b.data.T)
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
            return ga, gb

    else:

        def backward(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(y, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    y = matmul(x, weight)
    if bias is not None:
        y = add(y, bias)
    return y


# -- normalisation and probabilities -------------------------------------


def _check_finite(d: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(d)):
        raise NumericError(f"{what}: non-finite input")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    _check_finite(x.data, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.data, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        p = np.exp(y)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1] if x.ndim else 0
    if c == 0:
        raise ShapeError("layer_norm needs a non-empty channel axis")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} != ({c},)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return _make(y, (x, gamma, beta), backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects [N,C] logits and N targets, got {logits.shape}, {t.shape}")
    n, c = logits.shape
    if n == 0:
        raise ShapeError("cross_entropy over zero rows")
    if np.any(t < 0) or np.any(t >= c):
        raise IndexError(f"target out of range [0,{c})")
    _check_finite(logits.data, "cross_entropy")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, t].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss), (logits,), backward)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss with the quadratic/linear switch at ``beta``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1 shape mismatch: {pred.shape} vs {target.shape}")
    d = pred.data - target.data
    ad = np.abs(d)
    n = d.size
    if n == 0:
        raise ShapeError("smooth_l1 over zero elements")
    quad = ad < beta
    loss = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta).mean()

    def backward(g):
        gd = np.where(quad, d / beta, np.sign(d)) * (g / n)
        return gd, -gd

    return _make(np.asarray(loss), (pred, target), backward)


# -- convolutional primitives ------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [H,W,Cin] (or [B,H,W,Cin]) with ``w`` [kh,kw,Cin,Cout]."""
    x, w = as_tensor(x), as_tensor(w)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise ShapeError(f"conv2d expects x [H,W,C] or [B,H,W,C] and w [kh,kw,Cin,Cout], got {x.shape}, {w.shape}")
    xd = x.data if batched else x.data[None]
    bsz, h, wd, cin = xd.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, kernel {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ShapeError("conv2d needs stride >= 1 and pad >= 0")
    num_h, num_w = h + 2 * pad - kh, wd + 2 * pad - kw
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise ShapeError(
            f"conv2d output size not integral: H={h}, W={wd}, k={kh}x{kw}, stride={stride}, pad={pad}"
        )
    oh, ow = num_h // stride + 1, num_w // stride + 1

    if kh == 1 and kw == 1 and pad == 0 and stride == 1:
        cols = xd.reshape(-1, cin)
        y = (cols @ w.data.reshape(cin, cout)).reshape(bsz, oh, ow, cout)
    else:
        xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xd
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        # win: [B, oh, ow, Cin, kh, kw] -> rows ordered (kh, kw, Cin) to match w
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * cin)
        y = (cols @ w.data.reshape(-1, cout)).reshape(bsz, oh, ow, cout)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {b.shape} != ({cout},)")
        y = y + b.data

    def backward(g):
        gb = g if batched else g[None]
        g2 = gb.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        wmat = w.data.reshape(kh, kw, cin, cout)
        if kh == 1 and kw == 1 and pad == 0 and stride == 1:
            gx = (g2 @ wmat[0, 0].T).reshape(xd.shape)
        else:
            gxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += gb @ wmat[i, j].T
            gx = gxp[:, pad : pad + h, pad : pad + wd, :]
        if not batched:
            gx = gx[0]
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y if batched else y[0], parents, backward)


def max_pool2d(x) -> Tensor:
    """2x2 max pooling with stride 2 over the two axes before channels."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"max_pool2d expects [...,H,W,C], got {x.shape}")
    *lead, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(*lead, h // 2, 2, w // 2, 2, c)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 4, nl + 1, nl + 3)
    flat = blocks.transpose(perm).reshape(*lead, h // 2, w // 2, c, 4)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        back = onehot.reshape(*lead, h // 2, w // 2, c, 2, 2)
        inv = tuple(range(nl)) + (nl, nl + 3, nl + 1, nl + 4, nl + 2)
        return (back.transpose(inv).reshape(x.shape),)

    return _make(y, (x,), backward)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour x2 upsampling over the two axes before channels."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"upsample2x expects [...,H,W,C], got {x.shape}")
    y = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)
    *lead, h, w, c = x.shape

    def backward(g):
        return (g.reshape(*lead, h, 2, w, 2, c).sum(axis=(-4, -2)),)

    return _make(y, (x,), backward)


# -- lookups and sampling ----------------------------------------------------


def embedding(table, indices) -> Tensor:
    """Gather rows of ``table`` [V,C]; index -1 yields a zero vector."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be [V,C], got {table.shape}")
    if np.any(idx >= table.shape[0]) or np.any(idx < -1):
        raise IndexError("embedding index out of range")
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    y = table.data[safe] * valid[..., None]

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, safe[valid], g[valid])
        return (out,)

    return _make(y, (table,), backward)


def bilinear_sample(fmap, ys, xs) -> Tensor:
    """Sample ``fmap`` [H,W,D] at fractional (y, x) positions; returns [K,D].

    Positions are clamped to the map's extent (border replication).
    """
    fmap = as_tensor(fmap)
    if fmap.ndim != 3:
        raise ShapeError(f"bilinear_sample expects [H,W,D], got {fmap.shape}")
    h, w, _ = fmap.shape
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ly, lx = ys - y0, xs - x0
    hy, hx = 1.0 - ly, 1.0 - lx
    corners = ((y0, x0, hy * hx), (y0, x1, hy * lx), (y1, x0, ly * hx), (y1, x1, ly * lx))
    d = fmap.data
    y = builtins.sum(d[r, c] * wt[:, None] for r, c, wt in corners)

    def backward(g):
        out = np.zeros_like(d)
        for r, c, wt in corners:
            np.add.at(out, (r, c), g * wt[:, None])
        return (out,)

    return _make(np.asarray(y, dtype=np.float64), (fmap,), backward)


# -- node-set primitives (results independent of row order) -----------------


def rowwise_linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` for x [N,K], computed without BLAS.

    Each output row is accumulated over K in a fixed order, so its bits do
    not depend on the row's position or on the other rows present.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"rowwise_linear shape mismatch: {x.shape} @ {weight.shape}")
    y = (x.data[:, :, None] * weight.data[None, :, :]).sum(axis=1)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"rowwise_linear bias shape {bias.shape} != ({weight.shape[1]},)")
        y = y + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _make(y, tuple(parents), backward)


def attention(q, k, v) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d)) v`` per head.

    q, k: [h,N,d]; v: [h,N,dv]. Returns the output [h,N,dv] and the
    attention weights [h,N,N] (as a plain array). Sums over the node axis are
    taken over sorted terms, so permuting the nodes permutes the output
    bit-exactly.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 3 or k.shape != q.shape or v.ndim != 3 or v.shape[:2] != q.shape[:2]:
        raise ShapeError(f"attention expects q,k [h,N,d] and v [h,N,dv]; got {q.shape}, {k.shape}, {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q.data[:, :, None, :] * k.data[:, None, :, :]).sum(axis=-1) * scale
    _check_finite(scores, "attention")
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    a = e / np.sort(e, axis=-1).sum(axis=-1, keepdims=True)
    terms = a[:, :, :, None] * v.data[:, None, :, :]
    out = np.sort(terms, axis=2).sum(axis=2)

    def backward(g):
        gv = np.swapaxes(a, -1, -2) @ g
        ga = g @ np.swapaxes(v.data, -1, -2)
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k.data
        gk = np.swapaxes(gs, -1, -2) @ q.data
        return gq, gk, gv

    return _make(out, (q, k, v), backward), a
