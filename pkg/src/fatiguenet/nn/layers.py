"""Stateful layer wrappers around :mod:`fatiguenet.nn.ops`.

A :class:`Module` owns named parameter arrays, gradient arrays of the same
shape, and non-trainable buffers (batch-norm running statistics). Child
modules assigned as attributes are registered automatically so that
hierarchical names such as ``block1.inception.branch2.0.conv.weight`` fall
out of the attribute structure.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidSpecError
from . import ops


class Module:
    def __init__(self):
        object.__setattr__(self, "_modules", {})
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.train = False

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def named_parameters(self, prefix=""):
        for k, v in self.params.items():
            yield prefix + k, v, self.grads[k]
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for k, v in self.buffers.items():
            yield prefix + k, v
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def zero_grad(self):
        for _, _, g in self.named_parameters():
            g.fill(0)

    def set_mode(self, train: bool):
        for m in self.modules():
            m.train = train


def _fan_in_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, dilation=1, stride=1, pad=None,
                 dtype=np.float32):
        super().__init__()
        self.stride, self.dilation = stride, dilation
        self.need_input_grad = True
        self.workspace = {}
        # default: "same" padding for stride 1
        self.pad = (ops.receptive_field(k, dilation) - 1) // 2 if pad is None else pad
        self.add_param("weight", _fan_in_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype))
        self.add_param("bias", np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        out, self._cache = ops.conv2d_forward(x, self.params["weight"], self.params["bias"],
                                              self.stride, self.pad, self.dilation,
                                              self.workspace)
        return out

    def backward(self, dout):
        dx, dw, db = ops.conv2d_backward(dout, self._cache, self.need_input_grad)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class BatchNorm2d(Module):
    def __init__(self, c, dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.add_param("gamma", np.ones(c, dtype=dtype))
        self.add_param("beta", np.zeros(c, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)

    def forward(self, x):
        out, self._cache = ops.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            self.train, self.momentum, self.eps)
        return out

    def backward(self, dout):
        dx, dg, db = ops.batchnorm_backward(dout, self._cache)
        self.grads["gamma"] += dg
        self.grads["beta"] += db
        return dx


class ConvBNReLU(Module):
    def __init__(self, c_in, c_out, k, rng, dilation=1, pad=None, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, k, rng, dilation=dilation, pad=pad, dtype=dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)

    def forward(self, x):
        out, self._mask = ops.relu_forward(self.bn.forward(self.conv.forward(x)))
        return out

    def backward(self, dout):
        return self.conv.backward(self.bn.backward(ops.relu_backward(dout, self._mask)))


class MaxPool2d(Module):
    def __init__(self, window=2, stride=2, pad=0):
        super().__init__()
        self.window, self.stride, self.pad = window, stride, pad

    def forward(self, x):
        out, self._cache = ops.maxpool2d_forward(x, self.window, self.stride, self.pad)
        return out

    def backward(self, dout):
        return ops.maxpool2d_backward(dout, self._cache)


class Linear(Module):
    def __init__(self, f_in, f_out, rng, dtype=np.float32):
        super().__init__()
        self.add_param("weight", _fan_in_uniform(rng, (f_in, f_out), f_in, dtype))
        self.add_param("bias", np.zeros(f_out, dtype=dtype))

    def forward(self, x):
        out, self._cache = ops.linear_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, dout):
        dx, dw, db = ops.linear_backward(dout, self._cache)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class ChannelAttention(Module):
    def __init__(self, c, rng, reduction=8, dtype=np.float32):
        super().__init__()
        if c % reduction:
            raise InvalidSpecError(f"{c} channels not divisible by reduction {reduction}")
        hidden = c // reduction
        self.add_param("w1", _fan_in_uniform(rng, (c, hidden), c, dtype))
        self.add_param("b1", np.zeros(hidden, dtype=dtype))
        self.add_param("w2", _fan_in_uniform(rng, (hidden, c), hidden, dtype))
        self.add_param("b2", np.zeros(c, dtype=dtype))

    def forward(self, x):
        p = self.params
        out, self._cache = ops.channel_attention_forward(x, p["w1"], p["b1"], p["w2"], p["b2"])
        return out

    def backward(self, dout):
        dx, dw1, db1, dw2, db2 = ops.channel_attention_backward(dout, self._cache)
        for k, g in zip(("w1", "b1", "w2", "b2"), (dw1, db1, dw2, db2)):
            self.grads[k] += g
        return dx


class SpatialAttention(Module):
    def __init__(self, rng, kernel=7, dtype=np.float32):
        super().__init__()
        self.add_param("weight", _fan_in_uniform(rng, (1, 2, kernel, kernel), 2 * kernel * kernel,
                                                 dtype))
        self.add_param("bias", np.zeros(1, dtype=dtype))

    def forward(self, x):
        out, self._cache = ops.spatial_attention_forward(x, self.params["weight"],
                                                         self.params["bias"])
        return out

    def backward(self, dout):
        dx, dw, db = ops.spatial_attention_backward(dout, self._cache)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class Dropout(Module):
    def __init__(self, p=0.5):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(0)

    def forward(self, x):
        out, self._mask = ops.dropout_forward(x, self.p, self.train, self.rng)
        return out

    def backward(self, dout):
        return ops.dropout_backward(dout, self._mask)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
