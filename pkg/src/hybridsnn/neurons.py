"""Discrete-time spiking layers.

Two neuron types are provided:

* :class:`BurstingIFLayer` -- integrate-and-fire with reset-by-subtraction that
  may emit up to ``gamma`` spikes in one step. ``gamma=1`` is a plain rate-coded
  IF neuron.
* :class:`DoubleExpLIFLayer` -- non-resetting readout whose potential is a
  weighted double-exponential filter of its input spikes.

Time runs over ``t = 1..T`` with unit step. Spike trains are stored
time-major as ``(T, B, N)`` arrays of ``uint8`` counts.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError
from .layers import Dense

DEFAULT_THRESHOLD = 1.0
DEFAULT_GAMMA = 5
DEFAULT_TAU_M = 2.0
DEFAULT_TAU_S = 0.5


@dataclass
class SpikeTrain:
    """Spike counts of one layer over a window.

    ``counts`` has shape ``(T, B, N)``; ``gamma`` is the burst ceiling of the
    layer that emitted it.
    """

    counts: np.ndarray
    gamma: int = 1

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim == 2:
            self.counts = self.counts[:, None, :]
        if self.counts.ndim != 3 or self.counts.shape[0] < 1:
            raise DimensionError(f"spike counts must be (T, B, N), got {self.counts.shape}")

    @property
    def T(self):
        return self.counts.shape[0]

    @property
    def n_neurons(self):
        return self.counts.shape[2]

    def total(self):
        """Per-neuron spike count ``c(T)`` with shape ``(B, N)``."""
        return self.counts.sum(axis=0, dtype=np.int64)

    def rate(self):
        return self.total() / self.T

    def astype_float(self):
        return self.counts.astype(np.float64)


def burst_update(v, current, threshold, gamma):
    """One bursting-IF update on raw arrays; returns ``(spikes, v_after)``."""
    v = v + current
    s = np.minimum(np.maximum(np.floor(v / threshold), 0.0), gamma)
    return s, v - s * threshold


class BurstingIFLayer:
    """Bursting integrate-and-fire layer driven by a dense or conv op."""

    def __init__(self, op, threshold=DEFAULT_THRESHOLD, gamma=DEFAULT_GAMMA):
        if isinstance(op, np.ndarray):
            op = Dense(op.shape[1], op.shape[0], op)
        if not 1 <= gamma <= 255 or int(gamma) != gamma:
            # counts are stored as uint8
            raise ConfigurationError(f"gamma must be an integer in [1, 255], got {gamma}")
        if threshold <= 0:
            raise ConfigurationError("threshold must be positive")
        self.op = op
        self.threshold = float(threshold)
        self.gamma = int(gamma)
        self.v = None

    @property
    def weight(self):
        return self.op.weight

    @property
    def n_in(self):
        return self.op.in_features

    @property
    def n_out(self):
        return self.op.out_features

    def reset(self, batch=1):
        self.v = np.zeros((batch, self.n_out))

    def step(self, x):
        """Charge with ``W @ x`` and emit a burst. ``x`` is ``(B, n_in)`` or ``(n_in,)``."""
        return self.step_current(self.op.forward(np.atleast_2d(np.asarray(x, dtype=np.float64))))

    def step_current(self, current):
        current = np.atleast_2d(current)
        if self.v is None or self.v.shape != current.shape:
            self.reset(current.shape[0])
        s, self.v = burst_update(self.v, current, self.threshold, self.gamma)
        if not np.all(np.isfinite(self.v)):
            raise NumericError("membrane potential became non-finite")
        return s

    def run(self, inputs, T=None):
        """Simulate a full window from rest.

        ``inputs`` is either a constant ``(B, n_in)`` current source injected at
        every step, or a time-varying ``(T, B, n_in)`` array / :class:`SpikeTrain`.
        Returns the emitted :class:`SpikeTrain`.
        """
        if isinstance(inputs, SpikeTrain):
            inputs = inputs.counts
        inputs = np.asarray(inputs)
        if inputs.ndim == 2:
            if T is None or T < 1:
                raise ConfigurationError("constant input needs a window length T >= 1")
            current = self.op.forward(inputs.astype(np.float64))
            currents = None
        elif inputs.ndim == 3:
            T = inputs.shape[0] if T is None else T
            if inputs.shape[0] != T:
                raise DimensionError(f"input train has {inputs.shape[0]} steps, window is {T}")
            flat = inputs.reshape(-1, inputs.shape[2]).astype(np.float64)
            currents = self.op.forward(flat).reshape(T, inputs.shape[1], -1)
        else:
            raise DimensionError(f"bad input rank {inputs.shape}")
        batch = inputs.shape[-2]
        self.reset(batch)
        out = np.empty((T, batch, self.n_out), dtype=np.uint8)
        v = self.v
        for t in range(T):
            s, v = burst_update(v, current if currents is None else currents[t],
                                self.threshold, self.gamma)
            out[t] = s
        if not np.all(np.isfinite(v)):
            raise NumericError("membrane potential became non-finite")
        self.v = v
        return SpikeTrain(out, self.gamma)


def burst_step(layer, x):
    return layer.step(x)


def kernel_peak(tau_m, tau_s, window):
    """Largest value of ``exp(-t/tau_m) - exp(-t/tau_s)`` for ``t = 1..window``."""
    t = np.arange(1, int(window) + 1)
    return float(np.max(np.exp(-t / tau_m) - np.exp(-t / tau_s)))


class DoubleExpLIFLayer:
    """Output layer with double-exponential synaptic traces.

    ``k0`` defaults to ``threshold / kernel_peak(tau_m, tau_s, window)`` so that
    the discrete kernel peaks at the firing threshold.
    """

    def __init__(self, weight, tau_m=DEFAULT_TAU_M, tau_s=DEFAULT_TAU_S,
                 threshold=1.0, window=8, k0=None):
        if not tau_m > tau_s > 0:
            raise ConfigurationError(f"need tau_m > tau_s > 0, got {tau_m}, {tau_s}")
        self.weight = np.asarray(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError("LIF weight must be (n_out, n_in)")
        self.tau_m = float(tau_m)
        self.tau_s = float(tau_s)
        self.window = int(window)
        self.threshold = float(threshold)
        self.k0 = float(k0) if k0 is not None else self.normalizer(self.threshold)
        self.decay_m = np.exp(-1.0 / self.tau_m)
        self.decay_s = np.exp(-1.0 / self.tau_s)
        self.m = None
        self.i = None

    def normalizer(self, threshold):
        return threshold / kernel_peak(self.tau_m, self.tau_s, self.window)

    def set_threshold(self, threshold):
        """Change ``V_th`` and re-derive ``k0`` from it."""
        self.threshold = float(threshold)
        self.k0 = self.normalizer(self.threshold)

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def reset(self, batch=1):
        self.m = np.zeros((batch, self.n_in))
        self.i = np.zeros((batch, self.n_in))

    def step(self, s):
        """Advance traces by one step; returns ``(v, fired)``."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        if not np.all(np.isfinite(s)):
            raise NumericError("non-finite input spikes")
        if self.m is None or self.m.shape != s.shape:
            self.reset(s.shape[0])
        self.m = self.decay_m * (self.m + s)
        self.i = self.decay_s * (self.i + s)
        k = self.k0 * (self.m - self.i)
        v = k @ self.weight.T
        return v, v >= self.threshold

    def kernel_trace(self, train):
        """Return ``K(t)`` for every step of ``train`` as a ``(T, B, n_in)`` array."""
        counts = train.counts if isinstance(train, SpikeTrain) else np.asarray(train)
        if counts.shape[-1] != self.n_in:
            raise DimensionError(f"expected {self.n_in} inputs, got {counts.shape[-1]}")
        T, batch = counts.shape[0], counts.shape[1]
        out = np.empty((T, batch, self.n_in))
        m = np.zeros((batch, self.n_in))
        i = np.zeros((batch, self.n_in))
        for t in range(T):
            s = counts[t]
            m = self.decay_m * (m + s)
            i = self.decay_s * (i + s)
            out[t] = m - i
        out *= self.k0
        return out

    def potentials(self, train):
        """Membrane potentials ``v(t)`` for all steps, ``(T, B, n_out)``."""
        K = self.kernel_trace(train)
        return K @ self.weight.T


def lif_step(layer, s):
    return layer.step(s)


def run_window(stack, inputs, T, transform=None):
    """Run a feed-forward stack of bursting layers from rest for ``T`` steps.

    ``transform(layer_index, train)`` may rewrite each layer's output before it
    is passed on (used for spike-deletion noise). Returns one
    :class:`SpikeTrain` per layer.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    for prev, nxt in zip(stack, stack[1:]):
        if prev.n_out != nxt.n_in:
            raise DimensionError(f"layer chain broken: {prev.n_out} -> {nxt.n_in}")
    trains = []
    x = inputs
    for idx, layer in enumerate(stack):
        train = layer.run(x, T)
        if transform is not None:
            train = transform(idx, train)
        trains.append(train)
        x = train
    return trains
