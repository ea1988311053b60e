"""Weighted connection ops shared by the teacher ANN and the spiking layers.

Every op maps a flattened batch ``(B, in_features)`` to ``(B, out_features)``
so that spiking layers can treat dense and convolutional connectivity alike.
No biases are used anywhere.
"""

import numpy as np

from .errors import DimensionError
from .numerics import conv2d_backward, conv2d_forward, conv2d_weight_grad, conv_output_size


class Dense:
    kind = "dense"

    def __init__(self, in_features, out_features, weight=None, rng=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            # He initialisation for ReLU stacks
            weight = rng.normal(0.0, np.sqrt(2.0 / in_features), (out_features, in_features))
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (self.out_features, self.in_features):
            raise DimensionError(f"dense weight shape {weight.shape} != {(out_features, in_features)}")
        self.weight = weight

    @property
    def out_shape(self):
        return (self.out_features,)

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"expected {self.in_features} inputs, got {x.shape[-1]}")
        return x @ self.weight.T

    def backward(self, x, grad_out):
        return grad_out @ self.weight, grad_out.T @ x

    def weight_grad(self, x, grad_out):
        return grad_out.T @ x

    def fan_out(self):
        """Number of outgoing connections of every input neuron."""
        return np.full(self.in_features, self.out_features, dtype=np.int64)

    def describe(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}

    def copy(self):
        return Dense(self.in_features, self.out_features, self.weight.copy())


class Conv2d:
    """Strided, zero-padded convolution over a flattened ``(C, H, W)`` input."""

    kind = "conv2d"

    def __init__(self, in_shape, filters, kernel, stride=1, padding=0, weight=None, rng=None):
        self.in_shape = tuple(int(d) for d in in_shape)
        c, h, w = self.in_shape
        self.filters = int(filters)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)
        ho = conv_output_size(h, kernel, stride, padding)
        wo = conv_output_size(w, kernel, stride, padding)
        self.out_shape = (self.filters, ho, wo)
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            fan_in = c * kernel * kernel
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), (filters, c, kernel, kernel))
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (filters, c, kernel, kernel):
            raise DimensionError(f"conv weight shape {weight.shape} mismatched")
        self.weight = weight

    @property
    def in_features(self):
        return int(np.prod(self.in_shape))

    @property
    def out_features(self):
        return int(np.prod(self.out_shape))

    def _unflatten(self, x):
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"expected {self.in_features} inputs, got {x.shape[-1]}")
        return x.reshape((-1,) + self.in_shape)

    def forward(self, x):
        out = conv2d_forward(self._unflatten(x), self.weight, self.stride, self.padding)
        return out.reshape(x.shape[0], -1)

    def backward(self, x, grad_out):
        g = grad_out.reshape((-1,) + self.out_shape)
        gx, gw = conv2d_backward(self._unflatten(x), self.weight, g, self.stride, self.padding)
        return gx.reshape(x.shape[0], -1), gw

    def weight_grad(self, x, grad_out):
        g = grad_out.reshape((-1,) + self.out_shape)
        return conv2d_weight_grad(self._unflatten(x), g, self.weight.shape, self.stride, self.padding)

    def fan_out(self):
        # output rows (cols) whose receptive field covers each input row (col)
        c, h, w = self.in_shape
        _, ho, wo = self.out_shape

        def cover(size, out_size):
            counts = np.zeros(size, dtype=np.int64)
            for o in range(out_size):
                start = o * self.stride - self.padding
                lo, hi = max(start, 0), min(start + self.kernel, size)
                counts[lo:hi] += 1
            return counts

        per_pixel = np.outer(cover(h, ho), cover(w, wo)) * self.filters
        return np.broadcast_to(per_pixel, (c, h, w)).reshape(-1).copy()

    def describe(self):
        return {
            "kind": self.kind, "in_shape": list(self.in_shape), "filters": self.filters,
            "kernel": self.kernel, "stride": self.stride, "padding": self.padding,
        }

    def copy(self):
        return Conv2d(self.in_shape, self.filters, self.kernel, self.stride, self.padding,
                      self.weight.copy())


def op_from_description(desc, weight=None):
    if desc["kind"] == "dense":
        return Dense(desc["in"], desc["out"], weight)
    if desc["kind"] == "conv2d":
        return Conv2d(desc["in_shape"], desc["filters"], desc["kernel"], desc["stride"],
                      desc["padding"], weight)
    raise DimensionError(f"unknown op kind {desc['kind']!r}")
