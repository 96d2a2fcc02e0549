"""A small reverse-mode autodiff engine on top of numpy.

Only the operators the network needs are provided. Each op computes its
forward value eagerly and, when any input requires a gradient, records a
closure mapping the output gradient to input gradients. ``backward`` walks
the recorded nodes in exact reverse creation order.

Compute runs in 32-bit floats by default; wrap verification code in
``precision(np.float64)``.
"""

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_default_dtype = np.float32
_node_ids = itertools.count()


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ParameterError(f"unsupported compute dtype {dtype!r}")
    _default_dtype = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default compute dtype."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_ids)
        self._parents = tuple(_parents)
        self._backward = None
        self._op = _op
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op or 'leaf'})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def parameter(data):
    """A leaf tensor that requires a gradient."""
    return Tensor(np.asarray(data, dtype=_default_dtype), requires_grad=True)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _default_dtype))


def _result(data, parents, op, grad_fn):
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = grad_fn
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss):
    """Populate ``.grad`` on every leaf that requires a gradient.

    Gradients accumulate additively into leaves. The graph is released
    afterwards, so a second call on the same loss raises ``GraphError``.
    """
    if loss._released:
        raise GraphError("graph already released by a previous backward(); rebuild it")
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is detached: no input requires a gradient")

    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.node_id in nodes:
            continue
        nodes[node.node_id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads = {loss.node_id: np.ones_like(loss.data)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            if node._parents:
                raise GraphError("graph already released by a previous backward(); rebuild it")
            g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg

    for node in nodes.values():
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), "add", grad_fn)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), "mul", grad_fn)


def _int_power(x, q):
    out = x.copy()
    for _ in range(q - 1):
        out = out * x
    return out


def elementwise_power(x, q):
    """x**q by repeated multiplication; q must be a positive integer."""
    if int(q) != q or q < 1:
        raise ParameterError(f"power order must be a positive integer, got {q!r}")
    q = int(q)
    if q == 1:
        return x
    xd = x.data

    def grad_fn(g):
        return (g * (q * _int_power(xd, q - 1)),)

    return _result(_int_power(xd, q), (x,), f"pow{q}", grad_fn)


def tanh_activation(x):
    y = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), "tanh", grad_fn)


def tensor_sum(x):
    shape = x.shape

    def grad_fn(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), "sum", grad_fn)


def tensor_mean(x):
    shape, n = x.shape, x.data.size

    def grad_fn(g):
        return (np.broadcast_to(g / n, shape).astype(x.dtype),)

    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), "mean", grad_fn)


def reshape(x, shape):
    old = x.shape

    def grad_fn(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), "reshape", grad_fn)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        index = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            parts.append(g[tuple(index)])
        return tuple(parts)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", grad_fn)


# -- convolution ---------------------------------------------------------------

def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _conv_dense(xp, w, stride, ho, wo):
    kh, kw = w.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), win


def _conv_dense_backward(g, win, w, xp_shape, stride):
    kh, kw = w.shape[2:]
    _, _, ho, wo = g.shape
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    gcol = np.tensordot(g, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    gxp = np.zeros(xp_shape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcol[..., i, j].transpose(0, 3, 1, 2)
    return gxp, gw


def _conv_depthwise(xp, w, stride, ho, wo):
    kh, kw = w.shape[2:]
    out = np.zeros((xp.shape[0], xp.shape[1], ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] * w[None, :, 0, i, j, None, None]
    return out


def _conv_depthwise_backward(g, xp, w, stride):
    kh, kw = w.shape[2:]
    _, _, ho, wo = g.shape
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
            gw[:, 0, i, j] = (g * xp[sl]).sum(axis=(0, 2, 3))
            gxp[sl] += g * w[None, :, 0, i, j, None, None]
    return gxp, gw


def conv2d(x, kernel, bias=None, stride=1, padding=0, groups=1):
    """2-D cross-correlation with zero padding (no kernel flip)."""
    if stride < 1 or int(stride) != stride:
        raise ParameterError(f"stride must be a positive integer, got {stride!r}")
    if padding < 0 or groups < 1:
        raise ParameterError("padding must be >= 0 and groups >= 1")
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects input [N,C,H,W] and kernel [F,C/groups,kh,kw]")
    n, c, h, wdt = x.shape
    f, cg, kh, kw = kernel.shape
    if c % groups or f % groups or cg != c // groups:
        raise DimensionError(f"input channels {c}, kernel {kernel.shape} and groups={groups} disagree")
    if h + 2 * padding < kh or wdt + 2 * padding < kw:
        raise DimensionError("kernel larger than padded input")
    if bias is not None and bias.shape != (f,):
        raise DimensionError(f"bias shape {bias.shape} does not match {f} filters")

    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(wdt, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    w = kernel.data
    fg = f // groups
    depthwise = groups > 1 and cg == 1 and fg == 1

    if groups == 1:
        out, win = _conv_dense(xp, w, stride, ho, wo)
        wins = [win]
    elif depthwise:
        out = _conv_depthwise(xp, w, stride, ho, wo)
    else:
        outs, wins = [], []
        for gi in range(groups):
            o, win = _conv_dense(xp[:, gi * cg:(gi + 1) * cg], w[gi * fg:(gi + 1) * fg], stride, ho, wo)
            outs.append(o)
            wins.append(win)
        out = np.concatenate(outs, axis=1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        if groups == 1:
            gxp, gw = _conv_dense_backward(g, wins[0], w, xp.shape, stride)
        elif depthwise:
            gxp, gw = _conv_depthwise_backward(g, xp, w, stride)
        else:
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(w)
            for gi in range(groups):
                gx_i, gw_i = _conv_dense_backward(
                    g[:, gi * fg:(gi + 1) * fg], wins[gi], w[gi * fg:(gi + 1) * fg],
                    (n, cg) + xp.shape[2:], stride)
                gxp[:, gi * cg:(gi + 1) * cg] = gx_i
                gw[gi * fg:(gi + 1) * fg] = gw_i
        gx = gxp[:, :, padding:padding + h, padding:padding + wdt] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, "conv2d", grad_fn)


# -- normalization, pooling, dense ---------------------------------------------

def batchnorm2d(x, gamma, beta, running_mean, running_var, training=True, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    ``running_mean``/``running_var`` are plain arrays updated in place in
    training mode (unbiased variance for the running estimate).
    """
    if eps <= 0:
        raise ParameterError("epsilon must be positive")
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm2d channel mismatch: input {x.shape}, gamma {gamma.shape}")
    xd = x.data
    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if m < 1:
        raise DimensionError("batchnorm2d needs at least one value per channel")
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu[None, :, None, None]) * inv_std[None, :, None, None]
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        if training:
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), "batchnorm2d", grad_fn)


def max_pool2d(x, size):
    """Non-overlapping max pooling; gradient goes to the first maximum."""
    n, c, h, w = x.shape
    if size < 1 or size > h or size > w:
        raise ParameterError(f"pool window {size} does not fit input {h}x{w}")
    ho, wo = h // size, w // size
    xd = x.data[:, :, :ho * size, :wo * size]
    blocks = xd.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, :ho * size, :wo * size] = (
            gb.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size))
        return (gx,)

    return _result(out, (x,), "maxpool", grad_fn)


def adaptive_bins(size, out):
    """Bin edges used by adaptive pooling: [floor(i*size/out), ceil((i+1)*size/out))."""
    return [(i * size // out, -(-(i + 1) * size // out)) for i in range(out)]


def _avg_matrix(size, out, dtype):
    mat = np.zeros((out, size), dtype=dtype)
    for i, (lo, hi) in enumerate(adaptive_bins(size, out)):
        mat[i, lo:hi] = 1.0 / (hi - lo)
    return mat


def adaptive_avg_pool2d(x, output_size):
    oh, ow = (output_size, output_size) if np.isscalar(output_size) else output_size
    n, c, h, w = x.shape
    if oh < 1 or ow < 1 or oh > h or ow > w:
        raise ParameterError(f"adaptive pool target {oh}x{ow} invalid for input {h}x{w}")
    if oh == 1 and ow == 1:
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def grad_fn(g):
            return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

        return _result(out, (x,), "adaptive_avg", grad_fn)
    ph = _avg_matrix(h, oh, x.dtype)
    pw = _avg_matrix(w, ow, x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", ph, x.data, pw)

    def grad_fn(g):
        return (np.einsum("ih,ncij,jw->nchw", ph, g, pw),)

    return _result(out, (x,), "adaptive_avg", grad_fn)


def pool2d(x, mode, size):
    if mode == "max":
        return max_pool2d(x, size)
    if mode == "adaptive_avg":
        return adaptive_avg_pool2d(x, size)
    raise ParameterError(f"unknown pool mode {mode!r}")


def affine(x, weight, bias=None):
    """Dense layer: x @ weight.T + bias."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ weight.data, g.T @ x.data, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, "affine", grad_fn)


def dropout(x, p, training, rng):
    """Inverted dropout; the mask is drawn from ``rng`` (a named stream)."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * (1.0 / (1.0 - p))

    def grad_fn(g):
        return (g * keep,)

    return _result(x.data * keep, (x,), "dropout", grad_fn)


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(np.asarray(z)))


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer class targets."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} vs targets {targets.shape}")
    k = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= k or not np.issubdtype(targets.dtype, np.integer)):
        raise ValueError(f"targets must be integer class indices in [0, {k})")
    n = logits.shape[0]
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, targets].mean(), dtype=logits.dtype)

    def grad_fn(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / n),)

    return _result(loss, (logits,), "xent", grad_fn)


# -- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied in place to ``params`` (arrays)."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape or g.shape != p.shape:
            raise DimensionError(f"shape mismatch in adam_step: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
