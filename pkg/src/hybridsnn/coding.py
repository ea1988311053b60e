"""Encoders, decoders and per-block coding assignments."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .neurons import SpikeTrain

INPUT_SCHEMES = ("direct", "phase")
HIDDEN_SCHEMES = ("burst", "rate")
OUTPUT_SCHEMES = ("ttfs", "direct")


@dataclass(frozen=True)
class CodingAssignment:
    """Coding scheme used by the input, hidden and output blocks."""

    input_scheme: str = "direct"
    hidden_scheme: str = "burst"
    output_scheme: str = "ttfs"

    def __post_init__(self):
        if self.input_scheme not in INPUT_SCHEMES:
            raise ConfigurationError(f"unknown input scheme {self.input_scheme!r}")
        if self.hidden_scheme not in HIDDEN_SCHEMES:
            raise ConfigurationError(f"unknown hidden scheme {self.hidden_scheme!r}")
        if self.output_scheme not in OUTPUT_SCHEMES:
            raise ConfigurationError(f"unknown output scheme {self.output_scheme!r}")

    def hidden_gamma(self, gamma):
        """Rate coding is burst coding capped at one spike per step."""
        return 1 if self.hidden_scheme == "rate" else int(gamma)

    def validate_task(self, task):
        if self.input_scheme == "phase" and task != "sound-loc":
            raise ConfigurationError("phase input coding is only available for sound localisation")

    @property
    def tag(self):
        letters = {"direct": "D", "phase": "P", "burst": "B", "rate": "R", "ttfs": "T"}
        return "+".join(letters[s] for s in (self.input_scheme, self.hidden_scheme, self.output_scheme))


@dataclass
class TTFSDecision:
    predicted_class: int
    t_f: int
    potentials_at_tf: np.ndarray
    fired_any: bool
    steps_executed: int


def ttfs_decode(output_layer, hidden_train, T=None):
    """Step the output layer until the first output spike.

    The winner among simultaneous firers (or among all neurons when nothing
    fires by ``T``) is the one with the highest potential; exact ties go to the
    lowest index. Only a single sample is decoded; see :func:`ttfs_decide`
    for batches.
    """
    counts = hidden_train.counts if isinstance(hidden_train, SpikeTrain) else np.asarray(hidden_train)
    if counts.ndim == 2:
        counts = counts[:, None, :]
    T = counts.shape[0] if T is None else T
    if counts.shape[0] != T:
        raise DimensionError(f"train has {counts.shape[0]} steps, expected {T}")
    if counts.shape[1] != 1:
        raise DimensionError("ttfs_decode handles one sample; use ttfs_decide for batches")
    output_layer.reset(1)
    for t in range(1, T + 1):
        v, fired = output_layer.step(counts[t - 1])
        v, fired = v[0], fired[0]
        if fired.any() or t == T:
            return TTFSDecision(int(np.argmax(v)), t, v.copy(), bool(fired.any()), t)
    raise AssertionError("unreachable")


@dataclass
class BatchDecisions:
    """Vectorised TTFS decisions; ``t_f`` is 1-based."""

    predicted: np.ndarray
    t_f: np.ndarray
    potentials_at_tf: np.ndarray
    fired_any: np.ndarray
    final_predicted: np.ndarray

    def __len__(self):
        return len(self.predicted)

    def to_records(self):
        return [
            TTFSDecision(int(p), int(t), v, bool(f), int(t))
            for p, t, v, f in zip(self.predicted, self.t_f, self.potentials_at_tf, self.fired_any)
        ]


def ttfs_decide(potentials, threshold):
    """Decide every sample from precomputed potentials ``(T, B, n_out)``.

    Equivalent to running :func:`ttfs_decode` independently per sample.
    ``final_predicted`` is the argmax at the last step, the basis of
    last-timestep accuracy.
    """
    T, batch, _ = potentials.shape
    any_fired = (potentials >= threshold).any(axis=2)
    fired_any = any_fired.any(axis=0)
    first = np.where(fired_any, any_fired.argmax(axis=0), T - 1)
    at_tf = potentials[first, np.arange(batch)]
    return BatchDecisions(
        predicted=at_tf.argmax(axis=1),
        t_f=first + 1,
        potentials_at_tf=at_tf,
        fired_any=fired_any,
        final_predicted=potentials[-1].argmax(axis=1),
    )


def direct_decode(classifier_weights, hidden_train):
    """Average the linear readout of ``hidden_train`` over its window."""
    counts = hidden_train.counts if isinstance(hidden_train, SpikeTrain) else np.asarray(hidden_train)
    if counts.ndim == 2:
        counts = counts[:, None, :]
    if counts.shape[0] == 0:
        raise ConfigurationError("window length must be positive")
    w = np.asarray(classifier_weights, dtype=np.float64)
    if w.shape[1] != counts.shape[2]:
        raise DimensionError(f"classifier fan-in {w.shape[1]} != {counts.shape[2]} hidden neurons")
    mean_counts = counts.sum(axis=0, dtype=np.float64) / counts.shape[0]
    return mean_counts @ w.T


def direct_encode(features):
    """Analog features become the first layer's input current unchanged."""
    x = np.asarray(features, dtype=np.float64)
    return x.reshape(x.shape[0], -1) if x.ndim > 2 else x
