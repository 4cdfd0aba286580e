"""Neural network layer ops on top of the autodiff Tensor.

conv2d and batch_norm carry hand-written backward rules (the hot paths);
dense, lstm_step, and bilstm_layer are composed from Tensor primitives and
inherit their gradients.
"""

import numpy as np

from . import kernels
from .errors import (
    BatchTooSmall,
    EmptySequence,
    LabelOutOfRange,
    ShapeMismatch,
)
from .tensor import Tensor, assert_finite, concat

# gate order in all 4U-wide LSTM parameters: input, forget, cell, output
GATES = ("i", "f", "g", "o")


def conv2d(x: Tensor, w: Tensor, b=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation of (N,C,H,W) or (C,H,W) input with (Co,C,kh,kw)
    weights. Lowered to im2col + GEMM per sample; backward recomputes the
    columns instead of caching them to bound memory."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d input {x.shape}, weights {w.shape}")
    n, c, h, wd = xd.shape
    co, ci, kh, kw = w.data.shape
    sh, sw = stride
    ph, pw = padding
    if ci != c:
        raise ShapeMismatch(f"conv2d channels: input {c}, weights expect {ci}")
    if kh > h + 2 * ph or kw > wd + 2 * pw:
        raise ShapeMismatch(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{wd + 2 * pw}"
        )
    oh = kernels.conv_out_size(h, kh, sh, ph)
    ow = kernels.conv_out_size(wd, kw, sw, pw)

    w2d = w.data.reshape(co, ci * kh * kw)
    out = np.empty((n, co, oh, ow), dtype=xd.dtype)
    for i in range(n):
        cols = kernels.im2col(xd[i], kh, kw, sh, sw, ph, pw)
        np.matmul(w2d, cols, out=out[i].reshape(co, oh * ow))
    if b is not None:
        out += b.data.reshape(1, co, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g4 = g.reshape(n, co, oh * ow)
        if b is not None and b.requires_grad:
            b._accum(g4.sum(axis=(0, 2)), owned=True)
        if w.requires_grad:
            dw = np.zeros_like(w2d)
            for i in range(n):
                cols = kernels.im2col(xd[i], kh, kw, sh, sw, ph, pw)
                dw += g4[i] @ cols.T
            w._accum(dw.reshape(w.data.shape), owned=True)
        if x.requires_grad:
            dx = np.empty_like(xd)
            for i in range(n):
                dcols = w2d.T @ g4[i]
                kernels.col2im(dcols, c, h, wd, kh, kw, sh, sw, ph, pw, out=dx[i])
            x._accum(dx[0] if squeeze else dx, owned=True)

    return Tensor._result(out[0] if squeeze else out, parents, "conv2d", bwd)


# grow-only GEMM/column workspace shared by the channel-major conv path;
# sized by the largest layer, reused across layers and steps
_scratch_buf = np.empty(0, dtype=np.float32)


def _scratch(count: int, shape) -> np.ndarray:
    global _scratch_buf
    if _scratch_buf.size < count:
        _scratch_buf = np.empty(count, dtype=np.float32)
    return _scratch_buf[:count].reshape(shape)


def conv2d_cnhw(x: Tensor, w: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Channel-major conv: (C,N,H,W) input, (Co,C,kh,kw) weights, no bias.

    One GEMM covers the whole batch; the column workspace is shared across
    calls. This is the training hot path; use conv2d for the (N,C,H,W) API.
    """
    xd = x.data
    c, n, h, wd = xd.shape
    co, ci, kh, kw = w.data.shape
    sh, sw = stride
    ph, pw = padding
    if ci != c:
        raise ShapeMismatch(f"conv channels: input {c}, weights expect {ci}")
    oh = kernels.conv_out_size(h, kh, sh, ph)
    ow = kernels.conv_out_size(wd, kw, sw, pw)
    k = ci * kh * kw
    m = n * oh * ow

    w2d = w.data.reshape(co, k)
    use_scratch = xd.dtype == np.float32
    cols = kernels.im2col_cnhw(xd, kh, kw, sh, sw, ph, pw,
                               out=_scratch(k * m, (k, m)) if use_scratch else None)
    out = np.empty((co, n, oh, ow), dtype=xd.dtype)
    np.matmul(w2d, cols, out=out.reshape(co, m))

    def bwd(g):
        g2 = g.reshape(co, m)
        if w.requires_grad:
            cols_b = kernels.im2col_cnhw(
                xd, kh, kw, sh, sw, ph, pw,
                out=_scratch(k * m, (k, m)) if use_scratch else None)
            w._accum((g2 @ cols_b.T).reshape(w.data.shape), owned=True)
        if x.requires_grad:
            dcols = _scratch(k * m, (k, m)) if use_scratch else np.empty((k, m), dtype=g.dtype)
            np.matmul(w2d.T, g2, out=dcols)
            dx = kernels.col2im_cnhw(dcols, c, n, h, wd, kh, kw, sh, sw, ph, pw)
            x._accum(dx, owned=True)

    return Tensor._result(out, (x, w), "conv2d_cnhw", bwd)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean,
               running_var, mode: str, momentum: float = 0.9,
               eps: float = 1e-5, channel_axis: int = 1) -> Tensor:
    """Per-channel batch normalization of a rank-4 tensor.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running buffers in place (side effect); eval mode normalizes by the
    running statistics. channel_axis=1 is the (N,C,H,W) API; the model's
    channel-major path passes 0. The affine transform is folded into one
    scale and one shift per channel, and backward reduces over g and g*x
    directly so the normalized tensor is never materialized.
    """
    if x.data.ndim != 4:
        raise ShapeMismatch(f"batch_norm expects rank-4 input, got {x.shape}")
    xd = x.data
    c = xd.shape[channel_axis]
    axes = tuple(i for i in range(4) if i != channel_axis)
    m = xd.size // c
    bshape = [1, 1, 1, 1]
    bshape[channel_axis] = c
    batch_n = xd.shape[1] if channel_axis == 0 else xd.shape[0]

    def _reduce(arr):
        # per-channel sum and sum of arr*x, with float64 accumulation
        if channel_axis == 0:
            a2 = arr.reshape(c, m)
            x2 = xd.reshape(c, m)
            return (a2.sum(axis=1, dtype=np.float64),
                    np.einsum("cm,cm->c", a2, x2, dtype=np.float64))
        sums = arr.sum(axis=axes, dtype=np.float64)
        prods = np.einsum("abcd,abcd->b", arr, xd, dtype=np.float64)
        return sums, prods

    if mode == "train":
        if batch_n < 2:
            raise BatchTooSmall(f"batch_norm train mode needs N >= 2, got {batch_n}")
        sx, sxx = _reduce(xd)
        mean = sx / m
        var = np.maximum(sxx / m - mean * mean, 0.0)
        invstd = 1.0 / np.sqrt(var + eps)
        running_mean *= momentum
        running_mean += ((1.0 - momentum) * mean).astype(running_mean.dtype)
        running_var *= momentum
        running_var += ((1.0 - momentum) * var).astype(running_var.dtype)
        op_name = "batch_norm"
    else:
        mean = running_mean.astype(np.float64)
        invstd = 1.0 / np.sqrt(running_var.astype(np.float64) + eps)
        op_name = "batch_norm_eval"

    dt = xd.dtype
    scale = (gamma.data * invstd).astype(dt)
    shift = (beta.data - gamma.data * mean * invstd).astype(dt)
    out = xd * scale.reshape(bshape)
    out += shift.reshape(bshape)

    def bwd(g):
        s1, sgx = _reduce(g)
        s2 = invstd * (sgx - mean * s1)  # = sum(g * xhat) per channel
        if beta.requires_grad:
            beta._accum(s1.astype(beta.dtype), owned=True)
        if gamma.requires_grad:
            gamma._accum(s2.astype(gamma.dtype), owned=True)
        if x.requires_grad:
            k1 = (gamma.data * invstd).astype(dt)
            if mode == "train":
                k6 = (-gamma.data * invstd * invstd * s2 / m).astype(dt)
                k7 = (gamma.data * invstd * (invstd * s2 * mean - s1) / m).astype(dt)
                dx = g * k1.reshape(bshape)
                dx += xd * k6.reshape(bshape)
                dx += k7.reshape(bshape)
            else:
                dx = g * k1.reshape(bshape)
            x._accum(dx, owned=True)

    return Tensor._result(out, (x, gamma, beta), op_name, bwd)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x @ w + b."""
    return x.matmul(w) + b


def lstm_step(x: Tensor, state, params) -> tuple:
    """One LSTM cell update.

    x: (N,D) or (D,); state: (h, c) matching; params: dict with W (4U,D),
    R (4U,U), b (4U,). Gate slices follow the i,f,g,o order.
    Returns (h', c').
    """
    h, c = state
    squeeze = x.data.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
        h = h.reshape(1, -1)
        c = c.reshape(1, -1)
    W, R, b = params["W"], params["R"], params["b"]
    four_u, d = W.data.shape
    u = four_u // 4
    if x.data.shape[1] != d or h.data.shape[1] != u or R.data.shape != (four_u, u):
        raise ShapeMismatch(
            f"lstm_step x {x.shape}, h {h.shape}, W {W.shape}, R {R.shape}"
        )

    # callers driving many steps may pass pre-transposed weights ("WT"/"RT")
    # so the transpose happens once per sequence instead of once per step
    wt = params["WT"] if "WT" in params else W.T
    rt = params["RT"] if "RT" in params else R.T
    z = x.matmul(wt) + h.matmul(rt) + b
    i = z.narrow(1, 0, u).sigmoid()
    f = z.narrow(1, u, u).sigmoid()
    g = z.narrow(1, 2 * u, u).tanh()
    o = z.narrow(1, 3 * u, u).sigmoid()
    c_new = f * c + i * g
    h_new = o * c_new.tanh()
    if squeeze:
        return h_new.reshape(-1), c_new.reshape(-1)
    return h_new, c_new


def _run_direction(steps, params, n, u, dtype):
    cached = dict(params)
    cached["WT"] = params["W"].T
    cached["RT"] = params["R"].T
    h = Tensor(np.zeros((n, u), dtype=dtype))
    c = Tensor(np.zeros((n, u), dtype=dtype))
    outs = []
    for x_t in steps:
        h, c = lstm_step(x_t, (h, c), cached)
        outs.append(h)
    return outs


def bilstm_layer(seq: Tensor, fwd_params, bwd_params) -> Tensor:
    """Bidirectional LSTM over (N,T,D) or (T,D).

    The forward pass scans t = 0..T-1, the backward pass scans t = T-1..0;
    outputs are concatenated per position as [h_fwd(t); h_bwd(t)], so
    position 0 of the backward half has seen the whole sequence.
    """
    squeeze = seq.data.ndim == 2
    if squeeze:
        seq = seq.reshape(1, *seq.data.shape)
    n, t_len, d = seq.data.shape
    if t_len < 1:
        raise EmptySequence("bilstm_layer needs at least one time step")
    u = fwd_params["W"].data.shape[0] // 4

    steps = [seq.narrow(1, t, 1).reshape(n, d) for t in range(t_len)]
    outs_f = _run_direction(steps, fwd_params, n, u, seq.dtype)
    outs_b_rev = _run_direction(steps[::-1], bwd_params, n, u, seq.dtype)
    outs_b = outs_b_rev[::-1]

    per_step = [
        concat([f, b], dim=1).reshape(n, 1, 2 * u)
        for f, b in zip(outs_f, outs_b)
    ]
    out = concat(per_step, dim=1)
    if squeeze:
        out = out.reshape(t_len, 2 * u)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class.

    logits: (N,K); labels: int array (N,) with entries in [0, K).
    Backward is the fused (softmax - onehot)/N rule.
    """
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels {labels.shape} for logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def bwd(g):
        if logits.requires_grad:
            probs = np.exp(logp)
            probs[np.arange(n), labels] -= 1.0
            logits._accum((g * probs / n).astype(logits.dtype, copy=False))

    return Tensor._result(loss, (logits,), "softmax_cross_entropy", bwd)


def he_uniform(rng, shape, fan_in, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def lstm_init(rng, units, input_dim, dtype=np.float32):
    """W, R uniform in +-1/sqrt(U); forget-gate bias +1, others 0."""
    limit = 1.0 / np.sqrt(units)
    w = rng.uniform(-limit, limit, size=(4 * units, input_dim)).astype(dtype)
    r = rng.uniform(-limit, limit, size=(4 * units, units)).astype(dtype)
    b = np.zeros(4 * units, dtype=dtype)
    b[units:2 * units] = 1.0
    return w, r, b
