"""Layer-wise tandem learning of bursting hidden layers against a ReLU teacher.

Each hidden layer is regressed onto its teacher layer with the loss

    L = || y_hat - r * c(T) / T ||^2        (summed over neurons, batch mean)

and the weight gradient is accumulated through time. The floor in the burst
nonlinearity is bypassed with a straight-through estimator (ds/dv = 1).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import iterate_minibatches
from .errors import ConfigurationError, StateError, TrainingError
from .neurons import BurstingIFLayer, SpikeTrain
from .numerics import Adam, step_lr

log = logging.getLogger(__name__)

STE_SLOPE = 1.0


@dataclass
class LTLConfig:
    T: int = 8
    scale: object = 1.0  # r^l: one float for all layers or a per-layer list
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 10
    epochs: int = 5
    batch_size: int = 100
    clip_targets: bool = True
    # include r^l when differentiating the loss w.r.t. the spike count
    scale_in_delta: bool = True
    # "one_step": delta(t) = -vth*delta(t+1) + a, two-term sum; "exact": full BPTT of the STE graph
    recursion: str = "one_step"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError("T must be >= 1")
        scales = self.scale if isinstance(self.scale, (list, tuple)) else [self.scale]
        if any(r <= 0 for r in scales):
            raise ConfigurationError("scaling factors must be positive")
        if self.recursion not in ("one_step", "exact"):
            raise ConfigurationError(f"unknown recursion {self.recursion!r}")

    def scale_for(self, layer_index):
        if isinstance(self.scale, (list, tuple)):
            return float(self.scale[layer_index])
        return float(self.scale)


@dataclass
class LayerGradientTape:
    """Inputs and outputs of one layer over a window.

    ``inputs`` is ``(B, n_in)`` for a constant (direct-coded) drive or
    ``(T, B, n_in)`` for spike input; ``spikes`` is ``(T, B, n_out)``.
    """

    inputs: np.ndarray
    spikes: np.ndarray
    threshold: float
    T: int
    deltas: np.ndarray = field(default=None, repr=False)

    @property
    def complete(self):
        return self.spikes is not None and self.spikes.shape[0] == self.T

    def counts(self):
        return self.spikes.sum(axis=0, dtype=np.float64)


def ltl_loss(teacher_acts, counts, T, r=1.0):
    """Squared distance between teacher activations and scaled firing rates.

    Summed over neurons, averaged over the batch.
    """
    y = np.atleast_2d(np.asarray(teacher_acts, dtype=np.float64))
    c = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    diff = y - r * c / T
    return float((diff ** 2).sum(axis=1).mean())


def record_tape(layer, inputs, T):
    """Run ``layer`` from rest and keep what the backward pass needs."""
    if isinstance(inputs, SpikeTrain):
        inputs = inputs.counts
    train = layer.run(inputs, T)
    return LayerGradientTape(np.asarray(inputs), train.counts, layer.threshold, T)


def membrane_gradients(tape, teacher_acts, config, r):
    """``dL/dv(t)`` for every step, shape ``(T, B, n_out)``."""
    if not tape.complete:
        raise StateError("gradient tape does not cover the full window")
    T = tape.T
    y = np.atleast_2d(teacher_acts)
    batch = y.shape[0]
    c = tape.counts()
    err = y - r * c / T
    a = -(2.0 / T) * err / batch
    if config.scale_in_delta:
        a = a * r
    vth, sig = tape.threshold, STE_SLOPE
    grads = np.empty((T,) + a.shape)
    if config.recursion == "one_step":
        deltas = np.empty_like(grads)
        deltas[T - 1] = a
        for t in range(T - 2, -1, -1):
            deltas[t] = -vth * deltas[t + 1] * sig + a
        grads[T - 1] = deltas[T - 1] * sig
        grads[:T - 1] = deltas[1:] * sig + deltas[:-1] * sig
        tape.deltas = deltas
    else:
        g_next = np.zeros_like(a)
        for t in range(T - 1, -1, -1):
            g_next = sig * a + (1.0 - sig * vth) * g_next
            grads[t] = g_next
    return grads


def ltl_backward(tape, teacher_acts, config, op, r=1.0):
    """Weight gradient of the layer loss accumulated over the window."""
    g = membrane_gradients(tape, teacher_acts, config, r)
    x = tape.inputs
    if x.ndim == 2:
        # constant drive: sum the membrane gradients first
        return op.weight_grad(x.astype(np.float64), g.sum(axis=0))
    T, batch = x.shape[0], x.shape[1]
    return op.weight_grad(x.reshape(T * batch, -1).astype(np.float64),
                          g.reshape(T * batch, -1))


def build_student(teacher, gamma=5, threshold=1.0):
    """Bursting hidden stack initialised by copying the teacher's hidden weights."""
    return [BurstingIFLayer(op.copy(), threshold, gamma) for op in teacher.hidden]


def hidden_targets(teacher, x, layer_index, gamma, r, clip):
    acts, _ = teacher.forward(x)
    y = acts[layer_index]
    return np.minimum(y, gamma * r) if clip else y


def train_hidden_stack(student, teacher, x_train, config, rng=None, log_rows=None):
    """Train hidden layers one after another, shallowest first.

    Layer ``l`` sees the live spike output of the already-trained layers
    ``1..l-1``; only layer ``l``'s weights change while it trains. Returns the
    per-epoch rows ``(epoch, layer, normalized_mse)``.
    """
    if len(student) != len(teacher.hidden):
        raise ConfigurationError("student and teacher hidden stacks differ in depth")
    for s_layer, t_op in zip(student, teacher.hidden):
        if s_layer.weight.shape != t_op.weight.shape:
            raise ConfigurationError("student/teacher layer shapes misaligned")
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = [] if log_rows is None else log_rows
    T = config.T
    inputs = x_train  # constant drive for the first hidden layer
    teacher_batch = 2000
    for li, layer in enumerate(student):
        r = config.scale_for(li)
        opt = Adam([layer.op.weight], config.lr)
        for epoch in range(config.epochs):
            opt.lr = step_lr(config.lr, epoch, config.lr_decay_every, config.lr_decay)
            se, norm = 0.0, 0.0
            for idx in iterate_minibatches(len(x_train), config.batch_size, rng):
                x = inputs[idx] if inputs.ndim == 2 else inputs[:, idx]
                y = hidden_targets(teacher, x_train[idx], li, layer.gamma, r, config.clip_targets)
                tape = record_tape(layer, x, T)
                se += ltl_loss(y, tape.counts(), T, r) * len(idx)
                norm += float((y ** 2).sum())
                grad = ltl_backward(tape, y, config, layer.op, r)
                opt.step([grad])
            if not np.isfinite(se):
                raise TrainingError(f"LTL loss diverged in layer {li}", epoch=epoch)
            nmse = se / max(norm, 1e-12)
            rows.append((epoch, li, nmse))
            log.info("ltl layer %d epoch %d nmse %.5f", li, epoch, nmse)
        # freeze this layer and generate the next layer's input once
        outs = []
        for start in range(0, len(x_train), teacher_batch):
            x = inputs[start:start + teacher_batch] if inputs.ndim == 2 \
                else inputs[:, start:start + teacher_batch]
            outs.append(layer.run(x, T).counts)
        inputs = np.concatenate(outs, axis=1)
    return rows


def layer_nmse(student, teacher, x, T, r=1.0, clip=True):
    """Normalised MSE of every hidden layer on ``x`` (no training)."""
    acts, _ = teacher.forward(x)
    out, h = [], x
    for li, layer in enumerate(student):
        train = layer.run(h, T)
        y = np.minimum(acts[li], layer.gamma * r) if clip else acts[li]
        diff = y - r * train.rate()
        out.append(float((diff ** 2).sum() / max((y ** 2).sum(), 1e-12)))
        h = train
    return out
