"""A complete hybrid-coded network: analog input, bursting hidden stack, TTFS readout."""

from dataclasses import dataclass, field

import numpy as np

from .coding import BatchDecisions, CodingAssignment, direct_decode, ttfs_decide
from .errors import DimensionError
from .neurons import run_window


@dataclass
class HybridNetwork:
    hidden: list
    output: object  # DoubleExpLIFLayer
    T: int
    coding: CodingAssignment = field(default_factory=CodingAssignment)
    classifier: np.ndarray = None  # direct-decode readout weights

    def __post_init__(self):
        for a, b in zip(self.hidden, self.hidden[1:]):
            if a.n_out != b.n_in:
                raise DimensionError(f"hidden layers do not chain: {a.n_out} -> {b.n_in}")
        if self.hidden and self.output is not None and self.hidden[-1].n_out != self.output.n_in:
            raise DimensionError("readout fan-in does not match the last hidden layer")

    @property
    def ops(self):
        """Every weighted op in order, the readout included (for SynOps accounting)."""
        from .layers import Dense

        out = [layer.op for layer in self.hidden]
        if self.output is not None:
            w = self.output.weight
            out.append(Dense(w.shape[1], w.shape[0], w))
        return out

    def hidden_trains(self, x, transform=None):
        return run_window(self.hidden, x, self.T, transform)

    def last_hidden_counts(self, x, batch_size=2000, transform=None, on_batch=None):
        """``(T, N, n_hidden)`` spike counts of the last hidden layer.

        ``on_batch(trains)`` sees every hidden layer's output for each batch,
        which is how SynOps are tallied without keeping the full history.
        """
        parts = []
        for start in range(0, len(x), batch_size):
            trains = self.hidden_trains(np.asarray(x[start:start + batch_size], dtype=np.float64),
                                        transform)
            if on_batch is not None:
                on_batch(trains)
            parts.append(trains[-1].counts)
        return np.concatenate(parts, axis=1)

    def decide(self, x, batch_size=2000, transform=None, on_batch=None):
        counts = self.last_hidden_counts(x, batch_size, transform, on_batch)
        return self.decide_from_counts(counts, batch_size)

    def decide_from_counts(self, counts, batch_size=2000):
        parts = [ttfs_decide(self.output.potentials(counts[:, i:i + batch_size]), self.output.threshold)
                 for i in range(0, counts.shape[1], batch_size)]
        fields = ("predicted", "t_f", "potentials_at_tf", "fired_any", "final_predicted")
        return BatchDecisions(*(np.concatenate([getattr(p, f) for p in parts]) for f in fields))

    def direct_predict_from_counts(self, counts):
        w = self.classifier if self.classifier is not None else self.output.weight
        return direct_decode(w, counts).argmax(axis=1)
