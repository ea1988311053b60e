"""Exit criteria of the build, one test per criterion.

Each test records a PASS/FAIL line that is printed at the end of the session.
The end-to-end criteria share one MNIST run and one sound-localization run
produced through the command-line interface.
"""

import copy
import os
import shutil
import time

import numpy as np
import pytest

from conftest import enumerate_connections, enumerate_macs, random_architecture, record_criterion
from conftest import reference_run, surrogate_ltl_loss
from hybridsnn.cli import main
from hybridsnn.coding import CodingAssignment
from hybridsnn.config import load_config
from hybridsnn.energy import FLOAT32, saving_from_ratio, synops_ann, synops_snn
from hybridsnn.ltl import LTLConfig, ltl_backward, record_tape
from hybridsnn.neurons import BurstingIFLayer, DoubleExpLIFLayer, burst_update, run_window
from hybridsnn.numerics import check_gradient
from hybridsnn.pipeline import Pipeline, load_teacher
from hybridsnn.ttfs import ThetaState, output_weight_grad, train_output_layer, ttfs_loss_grad, \
    update_theta

pytestmark = pytest.mark.acceptance

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MNIST_DIR = os.path.join(ROOT, "data", "mnist")
CSVS = ("teacher.csv", "ltl.csv", "ttfs.csv", "eval.csv", "decision_histogram.csv",
        "energy.csv", "noise.csv")

needs_mnist = pytest.mark.skipif(not os.path.isdir(MNIST_DIR), reason="MNIST files not present")


def mnist_config_text():
    return f"[experiment]\ndata_dir = {MNIST_DIR}\n"


def run_cli(verb, config_text, out):
    cfg_path = os.path.join(out, "experiment.ini")
    os.makedirs(out, exist_ok=True)
    with open(cfg_path, "w") as fh:
        fh.write(config_text)
    start = time.time()
    code = main([verb, "--config", cfg_path, "--out", out])
    assert code == 0, f"{verb} exited with {code}"
    return time.time() - start


@pytest.fixture(scope="session")
def mnist_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("mnist"))
    seconds = run_cli("run-pipeline", mnist_config_text(), out)
    pipe = Pipeline(load_config(mnist_config_text()), out)
    return out, pipe, seconds


@pytest.fixture(scope="session")
def sound_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("sound"))
    seconds = run_cli("loc-experiment", "[experiment]\ntask = sound-loc\n", out)
    return out, Pipeline(load_config("[experiment]\ntask = sound-loc\n"), out), seconds


def run_metrics(out):
    import json
    with open(os.path.join(out, "run_record.json")) as fh:
        return json.load(fh)


def plain_if_reference(weights, x, T):
    """Integrate-and-fire with one spike per step at most, written out independently."""
    trains, h = [], x
    for t_w in weights:
        v = np.zeros((x.shape[0], t_w.shape[0]))
        steps = []
        for t in range(T):
            drive = h if h.ndim == 2 else h[t]
            v = v + drive @ t_w.T
            s = (v >= 1.0).astype(np.float64)
            v = v - s
            steps.append(s)
        h = np.array(steps)
        trains.append(h)
    return trains


def test_criterion_01_rate_equals_burst_gamma_one():
    rng = np.random.default_rng(101)
    rate = CodingAssignment(hidden_scheme="rate")
    mismatches = 0
    for _ in range(100):
        depth, T = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        sizes = [int(rng.integers(1, 33)) for _ in range(depth + 1)]
        weights = [rng.normal(0, 1, (b, a)) for a, b in zip(sizes, sizes[1:])]
        x = rng.uniform(0, 2, (int(rng.integers(1, 5)), sizes[0]))
        as_rate = run_window([BurstingIFLayer(w.copy(), 1.0, rate.hidden_gamma(5)) for w in weights], x, T)
        as_burst = run_window([BurstingIFLayer(w.copy(), 1.0, 1) for w in weights], x, T)
        ref = plain_if_reference(weights, x, T)
        for a, b, c in zip(as_rate, as_burst, ref):
            if not (np.array_equal(a.counts, b.counts) and np.array_equal(a.counts, c)):
                mismatches += 1
    ok = mismatches == 0
    record_criterion(1, ok, f"{mismatches} mismatching layers over 100 random networks")
    assert ok


def test_criterion_02_burst_step_conservation():
    rng = np.random.default_rng(202)
    n = 100_000
    v = rng.uniform(-20, 20, n)
    current = rng.uniform(-20, 20, n)
    threshold = rng.uniform(0.01, 5, n)
    gamma = rng.integers(1, 256, n)
    # exact multiples of the threshold exercise the floor boundary
    current[:1000] = np.round(current[:1000] / threshold[:1000]) * threshold[:1000] - v[:1000]
    s, v_after = burst_update(v, current, threshold, gamma)
    in_range = bool(np.all((s >= 0) & (s <= gamma) & (s == np.floor(s))))
    exact = bool(np.all(v_after == (v + current) - s * threshold))
    ok = in_range and exact
    record_criterion(2, ok, f"{n} tuples, counts in range: {in_range}, charge exact: {exact}")
    assert ok


def ltl_instance_error(rng, recursion, threshold):
    n_in, n_out = int(rng.integers(2, 12)), int(rng.integers(1, 17))
    T, batch = int(rng.integers(1, 9)), int(rng.integers(1, 5))
    gamma, r = int(rng.integers(1, 6)), float(rng.uniform(0.5, 2.0))
    w = rng.normal(0, 0.8, (n_out, n_in))
    if rng.random() < 0.5:
        x = rng.uniform(0, 1.5, (batch, n_in))
    else:
        x = rng.integers(0, 3, (T, batch, n_in)).astype(np.float64)
    y = rng.uniform(0, 2, (batch, n_out))
    layer = BurstingIFLayer(w.copy(), threshold, gamma)
    tape = record_tape(layer, x, T)
    grad = ltl_backward(tape, y, LTLConfig(T=T, scale=r, recursion=recursion), layer.op, r)
    ref_s, ref_v = reference_run(w, x, T, threshold, gamma)
    return check_gradient(lambda ww: surrogate_ltl_loss(ww, x, y, T, threshold, r, ref_s, ref_v),
                          grad, w.copy())


def test_criterion_03_ltl_gradient_oracle():
    rng = np.random.default_rng(303)
    default = max(ltl_instance_error(rng, "one_step", 1.0) for _ in range(20))
    exact = max(ltl_instance_error(rng, "exact", float(rng.uniform(0.5, 2))) for _ in range(20))
    ok = default <= 1e-4 and exact <= 1e-4
    record_criterion(3, ok, f"max rel err {default:.2e} (default recursion, unit threshold), "
                            f"{exact:.2e} (exact recursion, random thresholds)")
    assert ok


def test_criterion_04_ttfs_gradient_oracle():
    rng = np.random.default_rng(404)
    errs = []
    for _ in range(20):
        n_in, n_out = int(rng.integers(2, 12)), int(rng.integers(2, 8))
        T, batch = int(rng.integers(2, 9)), int(rng.integers(1, 6))
        layer = DoubleExpLIFLayer(rng.normal(0.3, 1.0, (n_out, n_in)),
                                  threshold=float(rng.uniform(1, 4)), window=T)
        counts = rng.integers(0, 4, (T, batch, n_in)).astype(np.uint8)
        targets = rng.integers(0, n_out, batch)
        theta, alpha, beta = float(rng.uniform(0, 1)), float(rng.uniform(0.5, 3)), float(rng.uniform(0, 3))
        _, _, grad, dec = output_weight_grad(layer, counts, targets, theta, alpha, beta)
        K_tf = layer.kernel_trace(counts)[dec.t_f - 1, np.arange(batch)]

        def loss(w):
            l1, l2, _ = ttfs_loss_grad(K_tf @ w.T, targets, theta, layer.threshold, alpha, beta)
            return alpha * l1 + beta * l2

        errs.append(check_gradient(loss, grad, layer.weight.copy()))
    ok = max(errs) <= 1e-4
    record_criterion(4, ok, f"max rel err {max(errs):.2e} over 20 instances")
    assert ok


@needs_mnist
def test_criterion_05_mnist_end_to_end(mnist_run):
    out, _, seconds = mnist_run
    rec = run_metrics(out)
    m, clock = rec["metrics"], rec["wall_clock"]
    teacher, direct = m["teacher"]["test_acc"], m["ltl"]["direct_acc"]
    ttfs, direct_final, mean_tf = m["eval"]["ttfs_acc"], m["eval"]["direct_acc"], m["eval"]["mean_tf"]
    checks = {
        "teacher >= 97%": teacher >= 0.97,
        "teacher < 15 min": clock["teacher"] < 15 * 60,
        "ltl epochs <= 10": load_config(mnist_config_text())["ltl"]["epochs"] <= 10,
        "ltl within 1.5% of teacher": direct >= teacher - 0.015,
        "ttfs within 1.0% of direct": abs(ttfs - direct_final) <= 0.01,
        "mean t_f <= 0.75 T": mean_tf <= 0.75 * 8,
        "total < 45 min": seconds < 45 * 60,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record_criterion(5, ok, f"teacher {teacher:.4f}, ltl {direct:.4f}, ttfs {ttfs:.4f} vs direct "
                            f"{direct_final:.4f}, mean t_f {mean_tf:.2f}/8, {seconds / 60:.1f} min"
                     + (f"; failed: {failed}" if failed else ""))
    assert ok


@needs_mnist
def test_criterion_06_gamma_ablation(mnist_run, tmp_path):
    out, pipe, _ = mnist_run
    teacher = load_teacher(os.path.join(out, "checkpoints", "teacher.ckpt"))
    acts, _ = teacher.forward(pipe.data.x_train[:5000])
    precondition = max(a.max() for a in acts) > 1.0
    accs = {5: run_metrics(out)["metrics"]["ltl"]["direct_acc"]}
    for gamma in (1, 2, 10):
        sub = tmp_path / f"gamma{gamma}"
        os.makedirs(sub / "checkpoints")
        shutil.copy(os.path.join(out, "checkpoints", "teacher.ckpt"), sub / "checkpoints")
        cfg = load_config(mnist_config_text() + f"[snn]\ngamma = {gamma}\n")
        accs[gamma] = Pipeline(cfg, str(sub)).run(("ltl",)).metrics["ltl"]["direct_acc"]
    high = [accs[g] for g in (2, 5, 10)]
    spread = max(high) - min(high)
    ok = precondition and spread <= 0.005 and accs[1] < min(high)
    record_criterion(6, ok, "accuracy by gamma " + ", ".join(f"{g}: {accs[g]:.4f}" for g in sorted(accs))
                     + f"; spread over 2/5/10 {spread:.4f}; teacher activations exceed 1: {precondition}")
    assert ok


def test_criterion_07_theta_schedule():
    cases = [((0.8, 0.9), 1 - 8 / 9), ((0.9, 0.9), 0.0), ((0.95, 0.9), 0.0),
             ((0.5, 1.0), 0.5), ((0.0, 0.7), 1.0)]
    got = [update_theta(ThetaState(), *args).theta for args, _ in cases]
    ok = all(g == pytest.approx(want, abs=1e-15) for g, (_, want) in zip(got, cases))
    record_criterion(7, ok, "theta " + ", ".join(f"{a}->{g:.6f}" for (a, _), g in zip(cases, got)))
    assert ok


@needs_mnist
def test_criterion_08_ttfs_training_dynamics(mnist_run):
    _, pipe, _ = mnist_run
    net = pipe.network("readout", "calibrate")
    ds = pipe.data
    tr = pipe.hidden_counts(net.hidden, "train")
    va = pipe.hidden_counts(net.hidden, "val")
    results = []
    for seed in range(3):
        finals = {}
        for beta in (0.0, 2.0):
            layer = copy.deepcopy(net.output)
            rows = train_output_layer(layer, tr, ds.y_train, va, ds.y_val,
                                      pipe.ttfs_config(beta=beta), np.random.default_rng(seed))
            finals[beta] = rows
        no_l2 = finals[0.0]
        results.append({
            "tf0": no_l2[0]["mean_tf"], "tf5": no_l2[5]["mean_tf"],
            "acc_no_l2": no_l2[-1]["acc_tf"], "acc_dual": finals[2.0][-1]["acc_tf"],
            "max_theta": max(r["theta"] for r in finals[2.0]),
        })
    advanced = all(r["tf5"] < r["tf0"] for r in results)
    dual_ok = np.mean([r["acc_dual"] for r in results]) >= np.mean([r["acc_no_l2"] for r in results])
    ok = advanced and dual_ok
    record_criterion(8, ok, "; ".join(
        f"seed {i}: t_f {r['tf0']:.2f}->{r['tf5']:.2f}, acc beta=0 {r['acc_no_l2']:.4f} "
        f"dual {r['acc_dual']:.4f} (max theta {r['max_theta']:.4f})" for i, r in enumerate(results)))
    assert ok


def test_criterion_09_synops_oracle_and_energy_arithmetic():
    rng = np.random.default_rng(909)
    exact = 0
    for _ in range(20):
        arch = random_architecture(rng)
        T = int(rng.integers(1, 6))
        history = [rng.integers(0, 4, (T, 2, op.out_features)) for op in arch[:-1]]
        brute_snn = 0
        for counts, op in zip(history, arch[1:]):
            for i, _o in enumerate_connections(op):
                brute_snn += int(counts[..., i].sum())
        brute_ann = sum(enumerate_macs(op) for op in arch)
        exact += synops_ann(arch) == brute_ann and synops_snn(history, arch) == brute_snn
    saving = saving_from_ratio(0.49, FLOAT32)
    ok = exact == 20 and abs(saving - 10.43) <= 0.01
    record_criterion(9, ok, f"{exact}/20 architectures exact; ratio 0.49 float32 saving {saving:.4f}")
    assert ok


def test_criterion_10_sound_localization(sound_run):
    out, _, seconds = sound_run
    m = run_metrics(out)["metrics"]
    mae, acc, mean_tf = m["eval"]["MAE"], m["eval"]["Acc"], m["eval"]["mean_tf"]
    noise = m["noise"]

    def series(prefix, levels):
        return [noise[f"{prefix}/{lvl}"] for lvl in levels]

    trends = {
        "babble": series("snr/babble", (20.0, 10.0, 5.0, 0.0)),
        "factory": series("snr/factory", (20.0, 10.0, 5.0, 0.0)),
        "deletion": series("deletion/spike-deletion", (0.0, 0.2, 0.4, 0.6)),
    }
    monotone = {k: all(b >= a for a, b in zip(v, v[1:])) for k, v in trends.items()}
    ok = mae <= 15 and acc >= 0.40 and mean_tf < 16 and all(monotone.values()) and seconds < 3600
    record_criterion(10, ok, f"MAE {mae:.2f} deg, Acc {acc:.4f}, mean t_f {mean_tf:.2f}/16, "
                             f"{seconds / 60:.1f} min; MAE trends " + ", ".join(
                                 f"{k} {[round(x, 2) for x in v]}" for k, v in trends.items()))
    assert ok


@needs_mnist
def test_criterion_11_early_decisions_are_more_accurate(mnist_run):
    out, _, _ = mnist_run
    ev = run_metrics(out)["metrics"]["eval"]
    ok = ev["n_below"] > 0 and ev["n_above"] > 0 and ev["acc_below"] >= ev["acc_above"]
    record_criterion(11, ok, f"median t_f {ev['median_tf']}, below: {ev['n_below']} at "
                             f"{ev['acc_below']:.4f}, above: {ev['n_above']} at {ev['acc_above']:.4f}")
    assert ok


@needs_mnist
def test_criterion_12_determinism(mnist_run, tmp_path):
    out, _, _ = mnist_run
    run_cli("run-pipeline", mnist_config_text(), str(tmp_path))
    differing = [name for name in CSVS
                 if open(os.path.join(out, name), "rb").read() != (tmp_path / name).read_bytes()]
    ok = not differing
    record_criterion(12, ok, f"{len(CSVS)} metrics CSVs compared byte for byte"
                     + (f"; differing: {differing}" if differing else ""))
    assert ok
