"""Minimal reverse-mode automatic differentiation engine.

Provides exactly the operations the translation networks need: 1-d/2-d
convolutions and the 1-d transposed convolution, layer normalization, the
usual activations, a few elementwise/reduction ops, linear upsampling, and an
Adam optimizer. Arrays are stored in float32; reductions accumulate in
float64 before casting back.

Each forward op builds one node of a tape. Calling backward() on a scalar
walks the tape in reverse topological order and accumulates gradients into
every tensor that requires them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "tensor", "add", "sub", "mul", "neg", "tlog", "tabs", "tsqrt",
    "tsum", "tmean", "l1_distance", "relu", "leaky_relu", "sigmoid", "tanh",
    "softplus", "concat", "reshape", "conv1d", "conv_transpose1d", "conv2d",
    "layer_norm", "upsample_linear1d", "Adam", "finite_diff_check",
    "truncated_normal",
]


def _as_f32(data):
    arr = np.asarray(data, dtype=np.float32)
    return arr


class Tensor:
    """N-dimensional float32 array participating in the gradient tape.

    data        -- float32 ndarray (row-major)
    requires_grad -- whether backward() should deposit a gradient here
    grad        -- float32 ndarray of the same shape, or None before backward
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None, _op=""):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        # Tape bookkeeping is only kept where a gradient can actually flow;
        # detached subgraphs cost nothing to walk.
        if _backward_fn is not None and requires_grad:
            self._parents = _parents
            self._backward_fn = _backward_fn
        else:
            self._parents = ()
            self._backward_fn = None
        self._op = _op

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, op={self._op!r}{flag})"

    # ---- graph control ---------------------------------------------------------

    def detach(self):
        """Same data, no tape participation."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, free_graph=True):
        """Reverse-mode pass from a scalar output.

        free_graph drops parent links afterwards so the step's intermediate
        buffers (im2col caches etc.) become collectable immediately.
        """
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {tuple(self.shape)}")
        topo = []
        seen = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if id(p) not in seen and (p._backward_fn is not None or p.requires_grad):
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                topo.append(node)
                stack.pop()
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)
                if free_graph:
                    node._backward_fn = None
                    node._parents = ()

    # ---- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    # Accumulation rebinds rather than mutating, so storing a view is safe.
    if not t.requires_grad:
        return
    g = g.astype(np.float32, copy=False)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Adjoint of numpy broadcasting: reduce g back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _requires(*tensors):
    return any(t.requires_grad for t in tensors)


# ---- elementwise ops ------------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return Tensor(out_data, _requires(a, b), (a, b), backward, "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data - b.data
    except ValueError:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return Tensor(out_data, _requires(a, b), (a, b), backward, "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, _requires(a, b), (a, b), backward, "mul")


def neg(a):
    a = _wrap(a)

    def backward(g):
        _accum(a, -g)

    return Tensor(-a.data, a.requires_grad, (a,), backward, "neg")


def tlog(a, offset=0.0):
    """Natural log of (a + offset). The offset guards zero inputs."""
    a = _wrap(a)
    shifted = a.data + np.float32(offset)
    if np.any(shifted <= 0):
        raise ValueError("tlog: argument (after offset) must be strictly positive")
    out_data = np.log(shifted)

    def backward(g):
        _accum(a, g / shifted)

    return Tensor(out_data, a.requires_grad, (a,), backward, "log")


def tabs(a):
    a = _wrap(a)
    s = np.sign(a.data)

    def backward(g):
        _accum(a, g * s)

    return Tensor(np.abs(a.data), a.requires_grad, (a,), backward, "abs")


def tsqrt(a):
    a = _wrap(a)
    root = np.sqrt(a.data)

    def backward(g):
        # subgradient 0 at exactly 0 keeps zero-signal spectrograms finite
        denom = 2.0 * root
        _accum(a, np.where(denom > 0, g / np.where(denom > 0, denom, 1.0), 0.0))

    return Tensor(root, a.requires_grad, (a,), backward, "sqrt")


# ---- reductions -------------------------------------------------------------------


def tsum(a):
    a = _wrap(a)
    out_data = np.float32(a.data.sum(dtype=np.float64))

    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return Tensor(out_data, a.requires_grad, (a,), backward, "sum")


def tmean(a):
    a = _wrap(a)
    out_data = np.float32(a.data.mean(dtype=np.float64))
    n = a.size

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.shape))

    return Tensor(out_data, a.requires_grad, (a,), backward, "mean")


def l1_distance(a, b):
    """Mean absolute difference, reduced over every element."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ValueError(f"l1_distance: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out_data = np.float32(np.abs(diff).mean(dtype=np.float64))
    n = a.size

    def backward(g):
        gd = g * np.sign(diff) / n
        _accum(a, gd)
        _accum(b, -gd)

    return Tensor(out_data, _requires(a, b), (a, b), backward, "l1")


# ---- activations ------------------------------------------------------------------


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return Tensor(a.data * mask, a.requires_grad, (a,), backward, "relu")


def leaky_relu(a, slope=0.2):
    a = _wrap(a)
    slope = np.float32(slope)
    pos = a.data > 0
    out_data = np.where(pos, a.data, a.data * slope)

    def backward(g):
        _accum(a, np.where(pos, g, g * slope))

    return Tensor(out_data, a.requires_grad, (a,), backward, "leaky_relu")


_SIG_EPS = np.float32(1e-7)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # float32 saturates to exactly 0/1 beyond |x| ~ 17; clamp keeps the
    # output (and every attention map built on it) strictly inside (0,1)
    np.clip(out, _SIG_EPS, 1.0 - _SIG_EPS, out=out)
    return out


def sigmoid(a):
    a = _wrap(a)
    s = _sigmoid(a.data)

    def backward(g):
        _accum(a, g * s * (1.0 - s))

    return Tensor(s, a.requires_grad, (a,), backward, "sigmoid")


def tanh(a):
    a = _wrap(a)
    # float32 tanh rounds to exactly +/-1 beyond |x| ~ 9; clamp to keep the
    # strict (-1, 1) range downstream contracts rely on
    t = np.clip(np.tanh(a.data), -1.0 + _SIG_EPS, 1.0 - _SIG_EPS)

    def backward(g):
        _accum(a, g * (1.0 - t * t))

    return Tensor(t, a.requires_grad, (a,), backward, "tanh")


def softplus(a):
    """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
    a = _wrap(a)
    out_data = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))

    def backward(g):
        _accum(a, g * _sigmoid(a.data))

    return Tensor(out_data, a.requires_grad, (a,), backward, "softplus")


# ---- shape ops -----------------------------------------------------------------


def concat(tensors, axis=1):
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return Tensor(out_data, _requires(*tensors), tuple(tensors), backward, "concat")


def reshape(a, shape):
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return Tensor(out_data, a.requires_grad, (a,), backward, "reshape")


# ---- convolutions ---------------------------------------------------------------


def _pad_pair(padding):
    if isinstance(padding, (tuple, list)):
        pl, pr = padding
        return int(pl), int(pr)
    return int(padding), int(padding)


def conv1d(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlation along the last axis.

    x: [B, C_in, L]; kernel: [C_out, C_in, K]; bias: [C_out] or None.
    padding may be an int (symmetric) or a (left, right) pair; output length
    is floor((L + pad_l + pad_r - K)/stride) + 1.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 3:
        raise ValueError(f"conv1d: input must be [B,C,L], got {x.shape}")
    if kernel.ndim != 3:
        raise ValueError(f"conv1d: kernel must be [C_out,C_in,K], got {kernel.shape}")
    B, ci, L = x.shape
    co, kci, K = kernel.shape
    if ci != kci:
        raise ValueError(f"conv1d: input channels {ci} != kernel C_in {kci} (axis 1)")
    pl, pr = _pad_pair(padding)
    P = L + pl + pr
    if P < K:
        raise ValueError(f"conv1d: padded length {P} < kernel size {K}")
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")
    lo = (P - K) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]
    # contiguous [B, lo, ci*K] so the matmul below hits BLAS
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(B, lo, ci * K)
    w2 = kernel.data.reshape(co, ci * K)
    out = cols @ w2.T                       # [B, lo, co]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (co,):
            raise ValueError(f"conv1d: bias shape {bias.shape} != ({co},) (axis 0)")
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1))
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1))        # [B, lo, co]
        if kernel.requires_grad:
            dw = gt.reshape(B * lo, co).T @ cols.reshape(B * lo, ci * K)
            _accum(kernel, dw.reshape(co, ci, K))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2), dtype=np.float64).astype(np.float32))
        if x.requires_grad:
            dcols = (gt @ w2).reshape(B, lo, ci, K)
            slabs = dcols.transpose(3, 0, 2, 1)                # [K, B, ci, lo]
            dxp = np.zeros((B, ci, P), dtype=np.float32)
            for k in range(K):
                dxp[:, :, k:k + stride * lo:stride] += slabs[k]
            _accum(x, dxp[:, :, pl:pl + L])

    return Tensor(out, _requires(*parents), parents, backward, "conv1d")


def conv_transpose1d(x, kernel, bias=None, stride=1, padding=0):
    """Adjoint of conv1d: scatters strided windows instead of gathering them.

    x: [B, C_in, L]; kernel: [C_in, C_out, K]; output length is
    (L-1)*stride - (pad_l + pad_r) + K. Forward equals the
    gradient-w.r.t.-input of conv1d run with the same kernel/stride/padding.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 3:
        raise ValueError(f"conv_transpose1d: input must be [B,C,L], got {x.shape}")
    B, ci, L = x.shape
    kci, co, K = kernel.shape
    if ci != kci:
        raise ValueError(
            f"conv_transpose1d: input channels {ci} != kernel C_in {kci} (axis 0)")
    if stride < 1:
        raise ValueError("conv_transpose1d: stride must be >= 1")
    pl, pr = _pad_pair(padding)
    full = (L - 1) * stride + K
    lo = full - pl - pr
    if lo <= 0:
        raise ValueError(f"conv_transpose1d: padding {pl}+{pr} consumes output (length {full})")

    w2 = kernel.data.reshape(ci, co * K)
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 1))       # [B, L, ci]
    scat = (xt @ w2).reshape(B, L, co, K).transpose(3, 0, 2, 1)  # [K, B, co, L]
    out_full = np.zeros((B, co, full), dtype=np.float32)
    for k in range(K):
        out_full[:, :, k:k + stride * L:stride] += scat[k]
    out = out_full[:, :, pl:pl + lo]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (co,):
            raise ValueError(f"conv_transpose1d: bias shape {bias.shape} != ({co},)")
        out = out + bias.data[:, None]
    out = np.ascontiguousarray(out)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pl, pr)))             # back to `full` length
        gw = np.lib.stride_tricks.sliding_window_view(gp, K, axis=2)[:, :, ::stride, :]
        gcols = np.ascontiguousarray(gw.transpose(0, 2, 1, 3)).reshape(B, L, co * K)
        if x.requires_grad:
            _accum(x, (gcols @ w2.T).transpose(0, 2, 1))
        if kernel.requires_grad:
            dw = xt.reshape(B * L, ci).T @ gcols.reshape(B * L, co * K)
            _accum(kernel, dw.reshape(ci, co, K))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2), dtype=np.float64).astype(np.float32))

    return Tensor(out, _requires(*parents), parents, backward, "conv_transpose1d")


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-d analogue of conv1d.

    x: [B, C_in, H, W]; kernel: [C_out, C_in, Kh, Kw]. stride is an int or
    (sh, sw); padding is an int, a (ph, pw) pair, or ((top, bottom),
    (left, right)) for the asymmetric same-padding the discriminators need.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be [B,C,H,W], got {x.shape}")
    B, ci, H, W = x.shape
    co, kci, kh, kw = kernel.shape
    if ci != kci:
        raise ValueError(f"conv2d: input channels {ci} != kernel C_in {kci} (axis 1)")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    if isinstance(padding, int):
        (pt, pb), (pleft, pright) = (padding, padding), (padding, padding)
    elif isinstance(padding[0], (tuple, list)):
        (pt, pb), (pleft, pright) = padding
    else:
        ph, pw = padding
        (pt, pb), (pleft, pright) = (ph, ph), (pw, pw)
    Hp, Wp = H + pt + pb, W + pleft + pright
    if Hp < kh or Wp < kw:
        raise ValueError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {kh}x{kw}")
    ho = (Hp - kh) // sh + 1
    wo = (Wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pleft, pright))) \
        if (pt or pb or pleft or pright) else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, :, :]                          # [B, ci, ho, wo, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B, ho * wo, ci * kh * kw)
    w2 = kernel.data.reshape(co, ci * kh * kw)
    out = cols @ w2.T                                          # [B, ho*wo, co]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (co,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({co},) (axis 0)")
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(B, co, ho, wo)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gt = np.ascontiguousarray(g.reshape(B, co, ho * wo).transpose(0, 2, 1))
        if kernel.requires_grad:
            dw = gt.reshape(B * ho * wo, co).T @ cols.reshape(B * ho * wo, ci * kh * kw)
            _accum(kernel, dw.reshape(co, ci, kh, kw))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
        if x.requires_grad:
            # tap-major gemm layout keeps every tap slab contiguous, and the
            # per-stride-phase buffer gives the scatter a contiguous target
            wt = np.ascontiguousarray(
                kernel.data.transpose(2, 3, 1, 0)).reshape(kh * kw * ci, co)
            g2 = np.ascontiguousarray(gt.reshape(B * ho * wo, co).T)
            slabs = (wt @ g2).reshape(kh, kw, ci, B, ho, wo)
            hph = (kh - 1) // sh + ho
            wph = (kw - 1) // sw + wo
            dxp = np.zeros((B, ci, Hp, Wp), dtype=np.float32)
            buf = np.empty((ci, B, hph, wph), np.float32)
            for pa in range(min(sh, kh)):
                for pb in range(min(sw, kw)):
                    buf[...] = 0.0
                    for a in range(pa, kh, sh):
                        for b in range(pb, kw, sw):
                            buf[:, :, a // sh:a // sh + ho,
                                b // sw:b // sw + wo] += slabs[a, b]
                    nr = min((Hp - pa + sh - 1) // sh, hph)
                    nc = min((Wp - pb + sw - 1) // sw, wph)
                    dxp[:, :, pa:pa + sh * nr:sh, pb:pb + sw * nc:sw] = \
                        buf[:, :, :nr, :nc].transpose(1, 0, 2, 3)
            _accum(x, dxp[:, :, pt:pt + H, pleft:pleft + W])

    return Tensor(out, _requires(*parents), parents, backward, "conv2d")


# ---- normalization / resampling -----------------------------------------------


def layer_norm(x, epsilon=1e-5):
    """Normalize each sample (axis 0 row) over all remaining axes.

    No learned affine: output is exactly (x - mu) / sqrt(var + eps).
    """
    x = _wrap(x)
    if x.ndim < 2:
        raise ValueError("layer_norm: need at least [B, ...], got scalar/vector")
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True, dtype=np.float64)
    var = np.square(x.data.astype(np.float64) - mu).mean(axis=axes, keepdims=True)
    inv = (1.0 / np.sqrt(var + epsilon)).astype(np.float32)
    xhat = ((x.data - mu) * inv).astype(np.float32)

    def backward(g):
        # exact gradient of (x-mu)/sqrt(var+eps), epsilon included
        gm = g.mean(axis=axes, keepdims=True, dtype=np.float64).astype(np.float32)
        gx = (g * xhat).mean(axis=axes, keepdims=True, dtype=np.float64).astype(np.float32)
        _accum(x, inv * (g - gm - xhat * gx))

    return Tensor(xhat, x.requires_grad, (x,), backward, "layer_norm")


def upsample_linear1d(x, factor):
    """Linear interpolation along the last axis by an integer factor.

    Output position j samples input position j/factor; positions past the
    last input sample replicate the edge value.
    """
    x = _wrap(x)
    if factor < 1:
        raise ValueError("upsample_linear1d: factor must be >= 1")
    if factor == 1:
        def backward_id(g):
            _accum(x, g)
        return Tensor(x.data, x.requires_grad, (x,), backward_id, "upsample1")
    L = x.shape[-1]
    src = np.arange(L * factor, dtype=np.float64) / factor
    i0 = np.floor(src).astype(np.int64)
    frac = (src - i0).astype(np.float32)
    i1 = np.minimum(i0 + 1, L - 1)
    out_data = x.data[..., i0] * (1.0 - frac) + x.data[..., i1] * frac

    def backward(g):
        dx = np.zeros(x.shape, dtype=np.float32)
        lead = (slice(None),) * (x.ndim - 1)
        np.add.at(dx, lead + (i0,), g * (1.0 - frac))
        np.add.at(dx, lead + (i1,), g * frac)
        _accum(x, dx)

    return Tensor(out_data, x.requires_grad, (x,), backward, "upsample_linear1d")


# ---- optimizer ------------------------------------------------------------------


class Adam:
    """Adam with bias correction over a list of (name, Tensor) parameters.

    beta1=0.9, beta2=0.999, eps=1e-8. The step counter t increments once per
    step() call. Moment buffers are float32 so checkpointed state resumes
    bit-exactly.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        if not all(isinstance(n, str) and isinstance(p, Tensor) for n, p in self.params):
            raise TypeError("Adam expects (name, Tensor) pairs")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float32) for _, p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float32) for _, p in self.params]

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (name, p) in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"Adam.step: parameter {name!r} has no gradient")
            g = p.grad
            m = self.m[i]
            v = self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= np.float32(lr) * mhat / (np.sqrt(vhat) + self.eps)

    # named state dict used by checkpointing: one m/v buffer per parameter plus t
    def state_tensors(self):
        out = {}
        for i, (name, _) in enumerate(self.params):
            out[f"{name}.m"] = self.m[i]
            out[f"{name}.v"] = self.v[i]
        return out

    def load_state(self, tensors, t):
        for i, (name, p) in enumerate(self.params):
            m = tensors[f"{name}.m"]
            v = tensors[f"{name}.v"]
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError(f"Adam.load_state: shape mismatch for {name!r}")
            self.m[i] = m.astype(np.float32, copy=True)
            self.v[i] = v.astype(np.float32, copy=True)
        self.t = int(t)


# ---- init + gradient checking -----------------------------------------------------


def truncated_normal(rng, shape, std=0.02):
    """N(0, std^2) with draws beyond 2 std resampled."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


def finite_diff_check(f, x, h=1e-3, max_elements=None, rng=None):
    """Compare reverse-mode gradients of scalar f against central differences.

    Returns max over checked elements of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    f must be deterministic. max_elements optionally limits the check to a
    random subset for large inputs (the full generator graph case).
    """
    if not isinstance(x, Tensor):
        x = Tensor(x, requires_grad=True)
    if not x.requires_grad:
        raise ValueError("finite_diff_check: x must require grad")
    x.grad = None
    out = f(x)
    out.backward()
    g_ad = x.grad.reshape(-1).astype(np.float64).copy()

    flat = x.data.reshape(-1)
    idxs = np.arange(flat.size)
    if max_elements is not None and flat.size > max_elements:
        rng = rng or np.random.default_rng(0)
        idxs = rng.choice(flat.size, size=max_elements, replace=False)

    probe = Tensor(x.data)  # shares the buffer; no tape participation
    worst = 0.0
    for i in idxs:
        orig = flat[i]
        up = np.float32(orig + h)
        dn = np.float32(orig - h)
        h_eff = float(up) - float(dn)  # exact span between the f32 probe points
        flat[i] = up
        fp = float(f(probe).data)
        flat[i] = dn
        fm = float(f(probe).data)
        flat[i] = orig
        g_fd = (fp - fm) / h_eff
        rel = abs(g_ad[i] - g_fd) / max(1.0, abs(g_ad[i]), abs(g_fd))
        worst = max(worst, rel)
    return worst
