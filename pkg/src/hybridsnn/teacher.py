"""ReLU teacher networks whose hidden activations supervise the spiking student."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import iterate_minibatches
from .errors import DimensionError, TrainingError
from .layers import Conv2d, Dense
from .numerics import SGD, cosine_lr

log = logging.getLogger(__name__)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


@dataclass
class TeacherSnapshot:
    activations: list
    logits: np.ndarray


@dataclass
class TeacherNetwork:
    hidden: list
    classifier: Dense
    history: list = field(default_factory=list)
    train_accuracy: float = float("nan")
    test_accuracy: float = float("nan")

    def __post_init__(self):
        for a, b in zip(self.hidden, self.hidden[1:] + [self.classifier]):
            if a.out_features != b.in_features:
                raise DimensionError(f"teacher layers do not chain: {a.out_features} -> {b.in_features}")

    @classmethod
    def mlp(cls, sizes, rng):
        """``sizes = [n_in, h1, ..., n_classes]``."""
        ops = [Dense(a, b, rng=rng) for a, b in zip(sizes[:-2], sizes[1:-1])]
        return cls(ops, Dense(sizes[-2], sizes[-1], rng=rng))

    @classmethod
    def cnn(cls, in_shape, convs, dense, n_classes, rng):
        """``convs`` is a list of ``(filters, kernel, stride, padding)``."""
        ops, shape = [], tuple(in_shape)
        for filters, k, s, p in convs:
            op = Conv2d(shape, filters, k, s, p, rng=rng)
            ops.append(op)
            shape = op.out_shape
        n = int(np.prod(shape))
        for width in dense:
            ops.append(Dense(n, width, rng=rng))
            n = width
        return cls(ops, Dense(n, n_classes, rng=rng))

    @property
    def n_in(self):
        return self.hidden[0].in_features if self.hidden else self.classifier.in_features

    def forward(self, x):
        acts, h = [], x
        for op in self.hidden:
            h = np.maximum(op.forward(h), 0.0)
            acts.append(h)
        return acts, self.classifier.forward(h)

    def predict(self, x, batch_size=2000):
        out = [self.forward(x[i:i + batch_size])[1].argmax(axis=1)
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def accuracy(self, x, y):
        return float((self.predict(x) == y).mean())

    def params(self):
        return [op.weight for op in self.hidden] + [self.classifier.weight]

    def gradients(self, x, y):
        acts, logits = self.forward(x)
        loss, g = cross_entropy(logits, y)
        inputs = [x] + acts
        g_in, g_cls = self.classifier.backward(acts[-1] if acts else x, g)
        grads = [g_cls]
        for op, inp, out in zip(self.hidden[::-1], inputs[-2::-1], acts[::-1]):
            g_in = g_in * (out > 0)
            g_in, gw = op.backward(inp, g_in)
            grads.append(gw)
        return loss, grads[::-1]


def train_teacher(dataset, net, epochs, lr=0.05, momentum=0.9, weight_decay=5e-4,
                  batch_size=100, rng=None):
    """Minibatch SGD with momentum, weight decay and cosine-annealed step size."""
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = SGD(net.params(), lr, momentum=momentum, weight_decay=weight_decay)
    x, y = dataset.x_train, dataset.y_train
    for epoch in range(epochs):
        opt.lr = cosine_lr(lr, epoch, epochs)
        total = 0.0
        for idx in iterate_minibatches(len(x), batch_size, rng):
            loss, grads = net.gradients(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"teacher loss diverged in epoch {epoch}", epoch=epoch)
            opt.step(grads)
            total += loss * len(idx)
        test_acc = net.accuracy(dataset.x_test, dataset.y_test)
        net.history.append({"epoch": epoch, "loss": total / len(x), "test_acc": test_acc})
        log.info("teacher epoch %d loss %.4f test acc %.4f", epoch, total / len(x), test_acc)
    net.train_accuracy = net.accuracy(x, y)
    net.test_accuracy = net.accuracy(dataset.x_test, dataset.y_test)
    return net


def snapshot_activations(net, batch):
    """Record every post-ReLU hidden activation and the logits for ``batch``."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[-1] != net.n_in:
        raise DimensionError(f"batch has {batch.shape[-1]} features, teacher expects {net.n_in}")
    acts, logits = net.forward(batch)
    return TeacherSnapshot([a.copy() for a in acts], logits.copy())
