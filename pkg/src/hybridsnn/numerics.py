"""Dense and convolutional array arithmetic, optimizers and a gradient checker.

Arrays are plain ``numpy.ndarray`` objects in float64. Convolutions use an
im2col layout so that forward and weight-gradient passes are single matrix
products.
"""

import math

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError


def matmul(a, b):
    """Matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def conv_output_size(size, kernel, stride, padding):
    out = (size + 2 * padding - kernel) // stride + 1
    if stride < 1 or kernel > size + 2 * padding or out < 1:
        raise ConfigurationError(
            f"invalid convolution: size={size} kernel={kernel} stride={stride} padding={padding}"
        )
    return out


def _im2col(x, kh, kw, stride, padding):
    # x: (B, C, H, W) -> cols (B*Ho*Wo, C*kh*kw)
    b, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d_forward(x, kernels, stride=1, padding=0):
    """Cross-correlate ``x`` (C,H,W) or (B,C,H,W) with ``kernels`` (F,C,kh,kw)."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"bad conv operand ranks: {x.shape}, {kernels.shape}")
    f, c, kh, kw = kernels.shape
    if x.shape[1] != c:
        raise DimensionError(f"input has {x.shape[1]} channels, kernels expect {c}")
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    out = cols @ kernels.reshape(f, -1).T
    out = out.reshape(x.shape[0], ho, wo, f).transpose(0, 3, 1, 2)
    return out[0] if single else out


def conv2d_backward(x, kernels, grad_out, stride=1, padding=0):
    """Return ``(grad_input, grad_kernels)`` for :func:`conv2d_forward`."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
        grad_out = grad_out[None]
    b, c, h, w = x.shape
    f, _, kh, kw = kernels.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    g = grad_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
    grad_k = (g.T @ cols).reshape(kernels.shape)
    dcols = (g @ kernels.reshape(f, -1)).reshape(b, ho, wo, c, kh, kw)
    gx = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return (gx[0] if single else gx), grad_k


def conv2d_weight_grad(x, grad_out, kernel_shape, stride=1, padding=0):
    """Kernel gradient only; skips the input-gradient scatter."""
    b = x.shape[0]
    f, _, kh, kw = kernel_shape
    cols, ho, wo = _im2col(np.asarray(x, dtype=np.float64), kh, kw, stride, padding)
    g = grad_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
    return (g.T @ cols).reshape(kernel_shape)


def check_gradient(f, analytic, params, eps=1e-6):
    """Compare ``analytic`` against central differences of scalar ``f(params)``.

    ``params`` is perturbed in place and restored. Returns the maximum over
    entries of ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 0 < eps <= 1e-2:
        raise ConfigurationError(f"eps must lie in (0, 1e-2], got {eps}")
    params = np.asarray(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise DimensionError(f"gradient shape {analytic.shape} != params {params.shape}")
    flat = params.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(params))
        flat[i] = orig - eps
        fm = float(f(params))
        flat[i] = orig
        numeric[i] = (fp - fm) / (2 * eps)
    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
        raise NumericError("non-finite value during gradient check")
    err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


class Optimizer:
    """Shared bookkeeping for in-place parameter updates."""

    kind = None

    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise DimensionError("one gradient per parameter expected")
        self.step_count += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise DimensionError(f"gradient {g.shape} does not match parameter {p.shape}")
            self._update(i, p, g)

    def _update(self, i, p, g):
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd-momentum"

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in self.params]

    def _update(self, i, p, g):
        if self.weight_decay:
            g = g + self.weight_decay * p
        if self.momentum:
            buf = self.velocity[i]
            buf *= self.momentum
            buf += g
            g = buf
        p -= self.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def _update(self, i, p, g):
        m, v = self.m[i], self.v[i]
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * g * g
        mhat = m / (1 - self.beta1 ** self.step_count)
        vhat = v / (1 - self.beta2 ** self.step_count)
        p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind, params, lr, **kwargs):
    if kind in ("sgd", "sgd-momentum"):
        return SGD(params, lr, **kwargs)
    if kind == "adam":
        return Adam(params, lr, **kwargs)
    raise ConfigurationError(f"unknown optimizer {kind!r}")


def cosine_lr(base_lr, epoch, total_epochs):
    if total_epochs <= 0:
        return base_lr
    return 0.5 * base_lr * (1 + math.cos(math.pi * epoch / total_epochs))


def step_lr(base_lr, epoch, step_size, gamma):
    return base_lr * gamma ** (epoch // step_size)
