"""Standard network building blocks over the differentiable ops.

``Module`` discovers parameters by introspection: any ``Variable``
attribute (or list of them) is a parameter, any numpy-array attribute
is a persistent buffer (batch-norm running stats), and nested modules
recurse. Attribute insertion order fixes the traversal order, which
checkpointing and the optimizer rely on.
"""

import numpy as np

from . import ops
from .autograd import Variable
from .tensor_ops import ConvSpec


class Module:
    training = True

    def named_parameters(self, prefix="", _seen=None):
        # A module or parameter reached twice (shared weights) is
        # yielded once, under its first path.
        seen = set() if _seen is None else _seen
        for name, val in vars(self).items():
            if isinstance(val, Variable):
                if id(val) not in seen:
                    seen.add(id(val))
                    yield f"{prefix}{name}", val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.", seen)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Variable):
                        if id(item) not in seen:
                            seen.add(id(item))
                            yield f"{prefix}{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.", seen)

    def parameters(self):
        return [v for _, v in self.named_parameters()]

    def named_buffers(self, prefix="", _seen=None):
        # Underscore attributes are scratch state, not persistent buffers.
        seen = set() if _seen is None else _seen
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, np.ndarray):
                if id(val) not in seen:
                    seen.add(id(val))
                    yield f"{prefix}{name}", val
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{name}.", seen)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.", seen)

    def modules(self, _seen=None):
        seen = set() if _seen is None else _seen
        if id(self) in seen:
            return
        seen.add(id(self))
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules(seen)
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules(seen)

    def named_modules(self, prefix="", _seen=None):
        seen = set() if _seen is None else _seen
        if id(self) in seen:
            return
        seen.add(id(self))
        yield prefix.rstrip("."), self
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{name}.", seen)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.", seen)

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def param_count(self):
        return sum(p.value.size for p in self.parameters())

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


def uniform_fanin(rng, shape, fan_in, dtype):
    """Kaiming-style uniform init with bound sqrt(1/fan_in)."""
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1,
                 padding="replicate", bias=True, dtype=np.float32):
        self.spec = ConvSpec(in_channels, out_channels, kernel, stride, padding)
        fan_in = in_channels * kernel * kernel
        self.weight = Variable(
            uniform_fanin(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype),
            requires_grad=True)
        self.bias = Variable(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.spec)


class Dense(Module):
    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float32):
        self.weight = Variable(
            uniform_fanin(rng, (in_features, out_features), in_features, dtype),
            requires_grad=True)
        self.bias = Variable(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = ops.add(y, ops.broadcast_features(self.bias, y.value.shape))
        return y


class BatchNorm2d(Module):
    """Per-channel normalization; batch stats in training, running in eval."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = Variable(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Variable(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        if x.value.shape[0] == 0:
            raise ValueError("batch must be non-empty")
        shape = x.value.shape
        if self.training:
            mu = ops.batch_channel_mean(x)
            xc = ops.sub(x, ops.broadcast_features(mu, shape))
            var = ops.batch_channel_mean(ops.mul(xc, xc))
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu.value).astype(x.value.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var.value).astype(x.value.dtype)
        else:
            mu = Variable(self.running_mean.astype(x.value.dtype, copy=False))
            var = Variable(self.running_var.astype(x.value.dtype, copy=False))
            xc = ops.sub(x, ops.broadcast_features(mu, shape))
        inv = ops.power_scalar(ops.add(var, self.eps), -0.5)
        xhat = ops.mul(xc, ops.broadcast_features(inv, shape))
        return ops.add(ops.mul(xhat, ops.broadcast_features(self.gamma, shape)),
                       ops.broadcast_features(self.beta, shape))


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class GELU(Module):
    def forward(self, x):
        return ops.gelu(x)


class Identity(Module):
    def forward(self, x):
        return x


class PixelShuffle(Module):
    def __init__(self, r):
        self.r = r

    def forward(self, x):
        return ops.pixel_shuffle(x, self.r)


class ResidualScale(Module):
    """Per-channel learnable gain on a block's output before the skip add."""

    def __init__(self, channels, init=0.1, dtype=np.float32):
        self.scale = Variable(np.full(channels, init, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return ops.mul(x, ops.broadcast_features(self.scale, x.value.shape))


class GlobalAvgPool(Module):
    def forward(self, x):
        return ops.spatial_mean(x)
