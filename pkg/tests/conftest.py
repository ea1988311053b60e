import numpy as np
import pytest

from hybridsnn.layers import Conv2d, Dense

CRITERIA = {}
N_CRITERIA = 12


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(CRITERIA.get(n, f"criterion {n:2d}: FAIL  no result (deselected, skipped or errored)"))


def surrogate_ltl_loss(weight, inputs, targets, T, threshold, r, ref_spikes, ref_v):
    """LTL loss through a forward pass where floor/clip act as identity around a reference run.

    Spikes equal the reference counts plus however far the pre-spike potential
    moved from its reference value (slope 1); at the reference weights the
    loss equals the true quantised loss.
    """
    batch = targets.shape[0]
    u = np.zeros((batch, weight.shape[0]))
    total = np.zeros_like(u)
    for t in range(T):
        x = inputs if inputs.ndim == 2 else inputs[t]
        v = u + x @ weight.T
        s = ref_spikes[t] + (v - ref_v[t])
        u = v - threshold * s
        total = total + s
    diff = targets - r * total / T
    return float((diff ** 2).sum(axis=1).mean())


def reference_run(weight, inputs, T, threshold, gamma):
    """True bursting forward pass that also keeps the pre-spike potentials."""
    batch = inputs.shape[-2]
    u = np.zeros((batch, weight.shape[0]))
    spikes, pre = [], []
    for t in range(T):
        x = inputs if inputs.ndim == 2 else inputs[t]
        v = u + x @ weight.T
        s = np.minimum(np.maximum(np.floor(v / threshold), 0), gamma)
        pre.append(v)
        spikes.append(s)
        u = v - s * threshold
    return np.array(spikes), np.array(pre)


def enumerate_connections(op):
    """Every (input index, output index) pair an op actually wires, found by brute force."""
    pairs = []
    if isinstance(op, Dense):
        for o in range(op.out_features):
            for i in range(op.in_features):
                pairs.append((i, o))
        return pairs
    c_in, h, w = op.in_shape
    f, ho, wo = op.out_shape
    for fo in range(f):
        for oy in range(ho):
            for ox in range(wo):
                o = (fo * ho + oy) * wo + ox
                for c in range(c_in):
                    for ky in range(op.kernel):
                        for kx in range(op.kernel):
                            iy = oy * op.stride - op.padding + ky
                            ix = ox * op.stride - op.padding + kx
                            if 0 <= iy < h and 0 <= ix < w:
                                pairs.append(((c * h + iy) * w + ix, o))
    return pairs


def enumerate_macs(op):
    """MACs of one ANN pass counted tap by tap (padding taps included, as a dense kernel would)."""
    if isinstance(op, Dense):
        return sum(1 for _o in range(op.out_features) for _i in range(op.in_features))
    c_in = op.in_shape[0]
    count = 0
    for _ in range(op.out_features):
        for _c in range(c_in):
            for _ky in range(op.kernel):
                for _kx in range(op.kernel):
                    count += 1
    return count


def random_architecture(rng):
    """A small random conv/dense stack with resolved shapes."""
    ops = []
    if rng.random() < 0.6:
        shape = (int(rng.integers(1, 3)), int(rng.integers(4, 8)), int(rng.integers(4, 8)))
        for _ in range(int(rng.integers(1, 3))):
            k = int(rng.integers(1, 4))
            pad = int(rng.integers(0, 2))
            stride = int(rng.integers(1, 3))
            if k > min(shape[1:]) + 2 * pad:
                break
            op = Conv2d(shape, int(rng.integers(1, 4)), k, stride, pad, rng=rng)
            ops.append(op)
            shape = op.out_shape
        n = int(np.prod(shape))
    else:
        n = int(rng.integers(3, 12))
        ops.append(Dense(n, int(rng.integers(3, 12)), rng=rng))
        n = ops[-1].out_features
    for _ in range(int(rng.integers(1, 3))):
        width = int(rng.integers(2, 10))
        ops.append(Dense(n, width, rng=rng))
        n = width
    return ops


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


BLOBS_CONFIG = """\
[experiment]
dataset = blobs
[teacher]
hidden = 32,32
epochs = 5
n_val = 300
[ltl]
epochs = 2
[ttfs]
epochs = 6
lr = 1e-3
init_scale = 0.1
calibration_samples = 1000
[noise]
seeds = 2
"""
