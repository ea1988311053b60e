"""Time-to-first-spike training of the output layer.

The hidden stack is frozen; only the readout weights move. Each sample's
decision time ``t_f`` is found by a forward pass, and the loss

    alpha * CE(softmax(v(t_f)), target) + beta * theta * sum_{i != target} (v_i(t_f) - V_th)

is differentiated at that fixed ``t_f``. ``theta`` gates the second term by how
much accuracy is lost by deciding at the first spike instead of at ``T``.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .coding import BatchDecisions, ttfs_decide
from .data import iterate_minibatches
from .errors import CalibrationError, ConfigurationError, DataError
from .neurons import DEFAULT_TAU_M, DEFAULT_TAU_S, DoubleExpLIFLayer
from .numerics import SGD, cosine_lr
from .teacher import softmax

log = logging.getLogger(__name__)


@dataclass
class TTFSTrainConfig:
    alpha: float = 2.0
    beta: float = 2.0
    epochs: int = 8
    lr: float = 1e-5
    momentum: float = 0.9
    batch_size: int = 100

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigurationError("need alpha, beta >= 0 with alpha + beta > 0")


@dataclass
class ThetaState:
    acc_tf: float = 0.0
    acc_T: float = 0.0
    theta: float = 0.0


def update_theta(state, eval_acc_tf, eval_acc_T):
    """Refresh ``theta = max(1 - acc_tf / acc_T, 0)`` after an evaluation."""
    if eval_acc_T <= 0:
        warnings.warn("last-step accuracy is zero; theta forced to 0", RuntimeWarning, stacklevel=2)
        return ThetaState(eval_acc_tf, eval_acc_T, 0.0)
    theta = max(1.0 - eval_acc_tf / eval_acc_T, 0.0)
    return ThetaState(eval_acc_tf, eval_acc_T, theta)


def loss_l1(potentials, target):
    v = np.asarray(potentials, dtype=np.float64)
    z = v - v.max()
    return float(np.log(np.exp(z).sum()) - z[target])


def loss_l2(potentials, target, theta, threshold):
    v = np.asarray(potentials, dtype=np.float64)
    mask = np.ones(v.shape, dtype=bool)
    mask[target] = False
    return float(theta * (v[mask] - threshold).sum())


def ttfs_loss_grad(v_tf, targets, theta, threshold, alpha, beta):
    """Batch-mean losses and ``dL/dv(t_f)`` for potentials ``(B, n)``."""
    batch, n = v_tf.shape
    rows = np.arange(batch)
    z = v_tf - v_tf.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    l1 = float((logsum - z[rows, targets]).mean())
    others = np.ones_like(v_tf)
    others[rows, targets] = 0.0
    l2 = float((theta * ((v_tf - threshold) * others).sum(axis=1)).mean())
    g = softmax(v_tf)
    g[rows, targets] -= 1.0
    grad = (alpha * g + beta * theta * others) / batch
    return l1, l2, grad


def output_weight_grad(layer, counts, targets, theta, alpha, beta):
    """Loss terms, weight gradient and decisions for one batch of hidden spikes."""
    K = layer.kernel_trace(counts)
    V = K @ layer.weight.T
    dec = ttfs_decide(V, layer.threshold)
    K_tf = K[dec.t_f - 1, np.arange(K.shape[1])]
    l1, l2, g = ttfs_loss_grad(dec.potentials_at_tf, targets, theta, layer.threshold, alpha, beta)
    return l1, l2, g.T @ K_tf, dec


def decide(layer, counts, batch_size=2000):
    """TTFS decisions for a whole ``(T, N, n_in)`` spike array."""
    parts = [ttfs_decide(layer.potentials(counts[:, i:i + batch_size]), layer.threshold)
             for i in range(0, counts.shape[1], batch_size)]
    fields = ("predicted", "t_f", "potentials_at_tf", "fired_any", "final_predicted")
    return BatchDecisions(*(np.concatenate([getattr(p, f) for p in parts]) for f in fields))


def evaluate(layer, counts, labels):
    dec = decide(layer, counts)
    return {
        "acc_tf": float((dec.predicted == labels).mean()),
        "acc_T": float((dec.final_predicted == labels).mean()),
        "mean_tf": float(dec.t_f.mean()),
        "decisions": dec,
    }


def build_output_layer(classifier_weight, T, init_scale=0.02, tau_m=DEFAULT_TAU_M,
                       tau_s=DEFAULT_TAU_S):
    """TTFS readout warm-started from a (scaled-down) linear classifier.

    At full scale a trained classifier fires on the very first step for nearly
    every sample, leaving training nothing to advance; shrinking it makes the
    untrained readout decide late.
    """
    if init_scale <= 0:
        raise ConfigurationError("init_scale must be positive")
    w = np.asarray(classifier_weight, dtype=np.float64) * init_scale
    return DoubleExpLIFLayer(w, tau_m=tau_m, tau_s=tau_s, window=T)


def calibrate_output_threshold(layer, counts):
    """Set ``V_th`` to the mean (over samples and neurons) of the peak potential.

    Potentials are measured with ``k0 = 1``; ``k0`` is then re-derived from the
    new threshold.
    """
    if counts.shape[1] == 0:
        raise CalibrationError("calibration set is empty")
    saved = layer.k0
    layer.k0 = 1.0
    try:
        peaks = np.concatenate([layer.potentials(counts[:, i:i + 2000]).max(axis=0)
                                for i in range(0, counts.shape[1], 2000)])
    finally:
        layer.k0 = saved
    vth = float(peaks.mean())
    if not np.any(peaks) or not np.isfinite(vth) or vth <= 0:
        raise CalibrationError(f"cannot calibrate threshold from potentials (mean {vth})")
    layer.set_threshold(vth)
    return vth


def train_output_layer(layer, train_counts, y_train, val_counts, y_val, config, rng=None,
                       teacher_accuracy=None, test_counts=None, y_test=None):
    """SGD on the output weights; returns per-epoch curve rows.

    Row 0 describes the untrained layer. ``theta`` is refreshed on the
    validation split after every epoch.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if not np.any(train_counts):
        raise DataError("hidden stack produced no spikes for any training sample")
    opt = SGD([layer.weight], config.lr, momentum=config.momentum)
    ev = evaluate(layer, val_counts, y_val)
    state = update_theta(ThetaState(), ev["acc_tf"], ev["acc_T"])
    rows = [_curve_row(0, ev, float("nan"), float("nan"), state.theta, layer, teacher_accuracy,
                       test_counts, y_test)]
    for epoch in range(1, config.epochs + 1):
        opt.lr = cosine_lr(config.lr, epoch - 1, config.epochs)
        l1_sum = l2_sum = 0.0
        n = train_counts.shape[1]
        for idx in iterate_minibatches(n, config.batch_size, rng):
            l1, l2, grad, _ = output_weight_grad(layer, train_counts[:, idx], y_train[idx],
                                                 state.theta, config.alpha, config.beta)
            opt.step([grad])
            l1_sum += l1 * len(idx)
            l2_sum += l2 * len(idx)
        ev = evaluate(layer, val_counts, y_val)
        state = update_theta(state, ev["acc_tf"], ev["acc_T"])
        rows.append(_curve_row(epoch, ev, l1_sum / n, l2_sum / n, state.theta, layer,
                               teacher_accuracy, test_counts, y_test))
        log.info("ttfs epoch %d acc_tf %.4f acc_T %.4f mean_tf %.3f theta %.4f",
                 epoch, ev["acc_tf"], ev["acc_T"], ev["mean_tf"], state.theta)
    return rows


def _curve_row(epoch, ev, l1, l2, theta, layer, teacher_accuracy, test_counts, y_test):
    row = {"epoch": epoch, "acc_tf": ev["acc_tf"], "acc_T": ev["acc_T"],
           "mean_tf": ev["mean_tf"], "L1": l1, "L2": l2, "theta": theta}
    if teacher_accuracy is not None and test_counts is not None:
        te = evaluate(layer, test_counts, y_test)
        row["tradeoff"] = (teacher_accuracy - te["acc_tf"]) * te["mean_tf"]
    return row
