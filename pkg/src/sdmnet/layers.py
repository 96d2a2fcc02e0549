"""Self-ONN layers and the building blocks of Self-DenseMobileNet."""

import math

import numpy as np

from . import tensor as T
from .tensor import DimensionError, ParameterError, Tensor


class Module:
    """Minimal module container: parameters, buffers and a train/eval flag."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def modules(self):
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, list) else [value]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _init_uniform(rng, shape, fan_in, scale=1.0):
    bound = scale / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SelfOnnConv2d(Module):
    """Operational conv layer with a learned Maclaurin-polynomial nodal operator.

    out = b + sum_{q=1..Q} conv2d(x**q, W_q)

    The expansion point is 0, so Q=1 is an ordinary convolution.
    """

    def __init__(self, in_ch, out_ch, kernel_size, q=3, stride=1, padding=0, groups=1, bias=True, rng=None):
        if q < 1:
            raise ParameterError(f"Self-ONN order must be >= 1, got {q}")
        if in_ch % groups or out_ch % groups:
            raise ParameterError(f"channels {in_ch}->{out_ch} not divisible by groups={groups}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.q = q
        self.in_ch, self.out_ch = in_ch, out_ch
        self.stride, self.padding, self.groups = stride, padding, groups
        shape = (out_ch, in_ch // groups, kernel_size, kernel_size)
        fan_in = shape[1] * kernel_size * kernel_size
        # higher orders start damped by 1/q!
        self.weights = [T.parameter(_init_uniform(rng, shape, fan_in, 1.0 / math.factorial(k)))
                        for k in range(1, q + 1)]
        self.bias = T.parameter(_init_uniform(rng, (out_ch,), fan_in)) if bias else None

    def __call__(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise DimensionError(f"expected {self.in_ch} input channels, got shape {x.shape}")
        if self.groups == 1 and self.q > 1:
            # one convolution over the stacked powers equals the sum of per-order convolutions
            powers = T.concat([T.elementwise_power(x, k) for k in range(1, self.q + 1)], axis=1)
            out = T.conv2d(powers, T.concat(self.weights, axis=1), None, self.stride, self.padding)
        else:
            out = None
            for order, w in enumerate(self.weights, start=1):
                term = T.conv2d(T.elementwise_power(x, order), w, None, self.stride, self.padding, self.groups)
                out = term if out is None else T.add(out, term)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (1, self.out_ch, 1, 1)))
        return out


class SelfMLP(Module):
    """Dense Self-ONN layer: out = b + sum_q x**q @ W_q.T"""

    def __init__(self, in_features, out_features, q=3, rng=None):
        if q < 1:
            raise ParameterError(f"Self-ONN order must be >= 1, got {q}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.q = q
        self.in_features, self.out_features = in_features, out_features
        self.weights = [T.parameter(_init_uniform(rng, (out_features, in_features), in_features,
                                                  1.0 / math.factorial(k)))
                        for k in range(1, q + 1)]
        self.bias = T.parameter(_init_uniform(rng, (out_features,), in_features))

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"expected [N,{self.in_features}] input, got {x.shape}")
        powers = T.concat([T.elementwise_power(x, k) for k in range(1, self.q + 1)], axis=1)
        return T.affine(powers, T.concat(self.weights, axis=1), self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        dtype = T.default_dtype()
        self.gamma = T.parameter(np.ones(channels))
        self.beta = T.parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x):
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class Bottleneck(Module):
    """expand 1x1 -> depthwise 3x3 -> project 1x1, with identity skip when shapes allow."""

    def __init__(self, in_ch, out_ch, stride=1, expansion=4, q=1, rng=None):
        if stride not in (1, 2):
            raise ParameterError(f"bottleneck stride must be 1 or 2, got {stride}")
        hidden = in_ch * expansion
        self.in_ch, self.out_ch, self.stride, self.expansion = in_ch, out_ch, stride, expansion
        self.residual = stride == 1 and in_ch == out_ch
        self.expand = SelfOnnConv2d(in_ch, hidden, 1, q=q, rng=rng)
        self.bn1 = BatchNorm2d(hidden)
        self.depthwise = SelfOnnConv2d(hidden, hidden, 3, q=q, stride=stride, padding=1, groups=hidden, rng=rng)
        self.bn2 = BatchNorm2d(hidden)
        self.project = SelfOnnConv2d(hidden, out_ch, 1, q=q, rng=rng)
        self.bn3 = BatchNorm2d(out_ch)

    def __call__(self, x):
        if x.shape[1] != self.in_ch:
            raise DimensionError(f"bottleneck expects {self.in_ch} channels, got {x.shape[1]}")
        y = T.tanh_activation(self.bn1(self.expand(x)))
        y = T.tanh_activation(self.bn2(self.depthwise(y)))
        y = self.bn3(self.project(y))
        return T.add(y, x) if self.residual else y
