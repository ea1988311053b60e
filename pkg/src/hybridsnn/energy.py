"""Synaptic-operation counts and energy estimates for ANN and SNN runs.

An ANN layer performs one multiply-accumulate per (input, output) pair it
computes. A spiking layer performs one accumulate per spike per outgoing
connection, so a burst of ``k`` spikes costs ``k`` times the fan-out.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .layers import Conv2d, Dense
from .neurons import SpikeTrain


@dataclass(frozen=True)
class EnergyModel:
    mac_pj: float
    ac_pj: float
    mode: str

    def __post_init__(self):
        if not self.mac_pj > self.ac_pj > 0:
            raise ConfigurationError("need mac_pj > ac_pj > 0")


FLOAT32 = EnergyModel(4.6, 0.9, "float32")
INT32 = EnergyModel(3.1, 0.1, "int32")
ENERGY_MODELS = {"float32": FLOAT32, "int32": INT32}


def layer_fan_in(op):
    if isinstance(op, Dense):
        return op.in_features
    if isinstance(op, Conv2d):
        return op.in_shape[0] * op.kernel * op.kernel
    raise ConfigurationError(f"cannot resolve fan-in of {type(op).__name__}")


def synops_ann(architecture):
    """MACs of one ANN forward pass: fan-in times neuron count, summed over layers."""
    if not architecture:
        raise ConfigurationError("empty architecture")
    return int(sum(layer_fan_in(op) * op.out_features for op in architecture))


def synops_snn(history, architecture):
    """Spike-weighted fan-out summed over time, layers and neurons.

    ``history[l]`` is the output train of ``architecture[l]``; its spikes are
    delivered through ``architecture[l + 1]``. The readout's own output is
    not counted, so ``len(history)`` may be ``len(architecture) - 1``.
    """
    if len(history) > len(architecture) - 1:
        raise ConfigurationError("more spiking layers than downstream connections")
    total = 0
    for train, op in zip(history, architecture[1:]):
        counts = train.counts if isinstance(train, SpikeTrain) else np.asarray(train)
        if counts.shape[-1] != op.in_features:
            raise ConfigurationError(
                f"train of {counts.shape[-1]} neurons feeds an op expecting {op.in_features}")
        per_neuron = counts.sum(axis=tuple(range(counts.ndim - 1)), dtype=np.int64)
        total += int(per_neuron @ op.fan_out())
    return total


@dataclass
class SynOpsLedger:
    """Running SynOps totals for one architecture."""

    fan_in: list
    fan_out: list
    neurons: list
    ann_macs_per_sample: int
    analog_first_layer: bool = False
    snn_ops: int = 0
    analog_macs: int = 0
    n_samples: int = 0
    per_layer_ops: list = field(default_factory=list)

    @classmethod
    def for_architecture(cls, architecture, analog_first_layer=False):
        return cls(
            fan_in=[layer_fan_in(op) for op in architecture],
            fan_out=[op.fan_out() for op in architecture],
            neurons=[op.out_features for op in architecture],
            ann_macs_per_sample=synops_ann(architecture),
            analog_first_layer=analog_first_layer,
            per_layer_ops=[0] * max(len(architecture) - 1, 0),
        )

    @classmethod
    def from_totals(cls, ann_macs, snn_ops, n_samples=1):
        return cls([], [], [], int(ann_macs), snn_ops=int(snn_ops), n_samples=n_samples)

    def record(self, history, T=None):
        """Add one batch of spike history (one train per spiking layer)."""
        if len(history) > len(self.fan_out) - 1:
            raise ConfigurationError("more spiking layers than downstream connections")
        batch = None
        for li, train in enumerate(history):
            counts = train.counts if isinstance(train, SpikeTrain) else np.asarray(train)
            fo = self.fan_out[li + 1]
            if counts.shape[-1] != len(fo):
                raise ConfigurationError(f"layer {li} train width {counts.shape[-1]} != {len(fo)}")
            ops = int(counts.sum(axis=(0, 1), dtype=np.int64) @ fo)
            self.per_layer_ops[li] += ops
            self.snn_ops += ops
            batch = counts.shape[1]
            T = counts.shape[0] if T is None else T
        if batch is None:
            raise ConfigurationError("empty spike history")
        if self.analog_first_layer:
            # the direct-coded input drives layer 1 with real-valued currents every step
            self.analog_macs += T * batch * self.fan_in[0] * self.neurons[0]
        self.n_samples += batch

    @property
    def ann_macs(self):
        return self.ann_macs_per_sample * self.n_samples

    @property
    def ratio(self):
        return self.snn_ops / self.ann_macs if self.ann_macs else float("nan")


def energy_report(ledger, model=FLOAT32):
    """Energy of both networks for the samples recorded in ``ledger``."""
    if ledger.ann_macs <= 0:
        raise ConfigurationError("ANN SynOps must be positive")
    ann_pj = ledger.ann_macs * model.mac_pj
    snn_pj = ledger.snn_ops * model.ac_pj + ledger.analog_macs * model.mac_pj
    infinite = snn_pj == 0
    return {
        "mode": model.mode,
        "ratio": ledger.snn_ops / ledger.ann_macs,
        "ann_synops": ledger.ann_macs,
        "snn_synops": ledger.snn_ops,
        "analog_macs": ledger.analog_macs,
        "ann_pJ": ann_pj,
        "snn_pJ": snn_pj,
        "saving": math.inf if infinite else ann_pj / snn_pj,
        "saving_infinite": infinite,
        "samples": ledger.n_samples,
    }


def saving_from_ratio(ratio, model=FLOAT32):
    """Energy saving implied by a SynOps ratio alone."""
    if ratio <= 0:
        return math.inf
    return (1.0 / ratio) * (model.mac_pj / model.ac_pj)


def report_json(report):
    # json has no infinity literal
    return json.dumps({k: (None if isinstance(v, float) and math.isinf(v) else v)
                       for k, v in report.items()}, indent=2, sort_keys=True)
