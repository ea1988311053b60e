"""Seeded end-to-end experiment: teacher, LTL, calibration, TTFS, evaluation, audits.

Every stage reads what earlier stages left in the output directory
(checkpoints) and writes its own metrics CSV, so stages can run one at a time
from the command line or all at once. Each stage draws randomness from its
own stream derived from the master seed.
"""

import csv
import hashlib
import json
import logging
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import audio
from .checkpoint import load_checkpoint, save_checkpoint
from .coding import CodingAssignment, direct_decode
from .data import Dataset, gaussian_blobs, load_mnist_idx
from .energy import ENERGY_MODELS, SynOpsLedger, energy_report, report_json
from .errors import HybridSNNError, StateError
from .layers import op_from_description
from .ltl import LTLConfig, build_student, layer_nmse, train_hidden_stack
from .model import HybridNetwork
from .neurons import BurstingIFLayer, DoubleExpLIFLayer
from .teacher import TeacherNetwork, train_teacher
from .ttfs import (TTFSTrainConfig, build_output_layer, calibrate_output_threshold, evaluate,
                   train_output_layer)

log = logging.getLogger(__name__)

STAGES = ("teacher", "ltl", "calibrate", "ttfs", "eval", "energy", "noise")


class StageError(HybridSNNError, RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def stage_rng(seed, name):
    """Independent generator for one named stage."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def write_csv(path, rows, header=None):
    header = header or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            cells = [row.get(k, "") for k in header] if isinstance(row, dict) else list(row)
            writer.writerow([_cell(v) for v in cells])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def emit_decision_histogram(decisions, labels, T=None):
    """Rows ``(t_f, correct, wrong)``, one per decision time that occurs."""
    t_f = np.asarray([d.t_f for d in decisions] if isinstance(decisions, list) else decisions.t_f)
    pred = np.asarray([d.predicted_class for d in decisions] if isinstance(decisions, list)
                      else decisions.predicted)
    labels = np.asarray(labels)
    if len(t_f) == 0:
        raise HybridSNNError("no decisions to histogram")
    rows = []
    for t in range(1, int(T or t_f.max()) + 1):
        mask = t_f == t
        if mask.any():
            correct = int((pred[mask] == labels[mask]).sum())
            rows.append((t, correct, int(mask.sum()) - correct))
    return rows


def early_decision_split(t_f, correct):
    """Accuracy of samples deciding strictly before and strictly after the median time."""
    t_f, correct = np.asarray(t_f), np.asarray(correct, dtype=bool)
    median = float(np.median(t_f))
    below, above = t_f < median, t_f > median
    return {
        "median_tf": median,
        "n_below": int(below.sum()),
        "n_above": int(above.sum()),
        "acc_below": float(correct[below].mean()) if below.any() else float("nan"),
        "acc_above": float(correct[above].mean()) if above.any() else float("nan"),
    }


def save_teacher(path, net):
    blocks = [(f"hidden{i}", op.weight) for i, op in enumerate(net.hidden)]
    blocks.append(("classifier", net.classifier.weight))
    meta = {"ops": [op.describe() for op in net.hidden], "classifier": net.classifier.describe(),
            "train_accuracy": net.train_accuracy, "test_accuracy": net.test_accuracy}
    save_checkpoint(path, "teacher", blocks, meta)


def load_teacher(path):
    _, meta, blocks = load_checkpoint(path, "teacher")
    hidden = [op_from_description(d, blocks[f"hidden{i}"]) for i, d in enumerate(meta["ops"])]
    net = TeacherNetwork(hidden, op_from_description(meta["classifier"], blocks["classifier"]))
    net.train_accuracy, net.test_accuracy = meta["train_accuracy"], meta["test_accuracy"]
    return net


def save_network(path, kind, hidden, output=None, classifier=None):
    blocks = [(f"hidden{i}", layer.weight) for i, layer in enumerate(hidden)]
    if classifier is not None:
        blocks.append(("classifier", classifier))
    meta = {"ops": [layer.op.describe() for layer in hidden],
            "gamma": [layer.gamma for layer in hidden],
            "threshold": [layer.threshold for layer in hidden]}
    if output is not None:
        blocks.append(("output", output.weight))
        meta["output"] = {"tau_m": output.tau_m, "tau_s": output.tau_s, "window": output.window,
                          "threshold": output.threshold, "k0": output.k0}
    save_checkpoint(path, kind, blocks, meta)


def load_network(path, kind):
    _, meta, blocks = load_checkpoint(path, kind)
    hidden = [BurstingIFLayer(op_from_description(d, blocks[f"hidden{i}"]), th, g)
              for i, (d, g, th) in enumerate(zip(meta["ops"], meta["gamma"], meta["threshold"]))]
    output = None
    if "output" in meta:
        o = meta["output"]
        output = DoubleExpLIFLayer(blocks["output"], o["tau_m"], o["tau_s"], o["threshold"],
                                   o["window"], o["k0"])
    return hidden, output, blocks.get("classifier")


@dataclass
class RunRecord:
    config_hash: str
    metrics: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"config_hash": self.config_hash, "metrics": self.metrics,
                           "wall_clock": self.wall_clock, "checkpoints": self.checkpoints},
                          indent=2, sort_keys=True, default=_cell)


class Pipeline:
    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = out_dir
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        exp = cfg["experiment"]
        self.coding = CodingAssignment(exp["input_scheme"], exp["hidden_scheme"], exp["output_scheme"])
        self.record = RunRecord(cfg.digest())
        self._data = None
        self._counts = {}
        self._geometry = None
        self._mtpc = None

    # -- paths and persistence ------------------------------------------------
    def path(self, name):
        return os.path.join(self.out, name)

    def ckpt(self, name):
        return os.path.join(self.out, "checkpoints", f"{name}.ckpt")

    def _need(self, name, stage):
        path = self.ckpt(name)
        if not os.path.exists(path):
            raise StateError(f"missing {name} checkpoint; run the {stage} stage first")
        return path

    # -- data -----------------------------------------------------------------
    @property
    def data(self):
        if self._data is None:
            self._data = self._load_data()
        return self._data

    def _load_data(self):
        cfg = self.cfg
        rng = stage_rng(cfg.seed, "data")
        tcfg = cfg["teacher"]
        if cfg.task == "sound-loc":
            train, test = self.audio_datasets()
            geometry, mtpc = self.audio_frontend()
            ds = Dataset(audio.encode_dataset(train, geometry, mtpc), train.labels,
                         audio.encode_dataset(test, geometry, mtpc), test.labels,
                         n_classes=cfg["audio"]["n_classes"],
                         meta={"test_azimuths": test.azimuths})
        elif cfg["experiment"]["dataset"] == "blobs":
            n = tcfg["n_train"] or 2000
            ds = gaussian_blobs(n + tcfg["n_val"], 1000, n_features=8, n_classes=4,
                                seed=int(rng.integers(2 ** 31)))
        else:
            ds = load_mnist_idx(cfg["experiment"]["data_dir"])
            if tcfg["n_train"]:
                ds = Dataset(ds.x_train[:tcfg["n_train"] + tcfg["n_val"]],
                             ds.y_train[:tcfg["n_train"] + tcfg["n_val"]],
                             ds.x_test, ds.y_test, n_classes=ds.n_classes, meta=ds.meta)
        if tcfg["n_val"] > 0:
            ds = ds.split_validation(tcfg["n_val"], rng)
        return ds

    def audio_frontend(self):
        if self._geometry is None:
            a = self.cfg["audio"]
            self._geometry = audio.square_array(a["spacing"])
            self._mtpc = audio.MTPCConfig(a["n_fft"], a["n_delays"], a["n_bands"], a["f_lo"],
                                          a["f_hi"], magnitude_ratio=a["magnitude_ratio"])
        return self._geometry, self._mtpc

    def audio_test_spec(self):
        a = self.cfg["audio"]
        return {"frames_per_class": a["test_frames_per_class"], "sample_rate": a["sample_rate"],
                "length": a["frame_length"], "source": a["source"], "n_classes": a["n_classes"]}

    def audio_datasets(self):
        a = self.cfg["audio"]
        if a["dataset_dir"]:
            return (audio.load_dataset(os.path.join(a["dataset_dir"], "train")),
                    audio.load_dataset(os.path.join(a["dataset_dir"], "test")))
        rng = stage_rng(self.cfg.seed, "audio")
        geometry, _ = self.audio_frontend()
        spec = self.audio_test_spec()
        train_seed, test_seed = (int(s) for s in rng.integers(2 ** 31, size=2))
        train = audio.generate_dataset(seed=train_seed, geometry=geometry,
                                       **dict(spec, frames_per_class=a["frames_per_class"]))
        test = audio.generate_dataset(seed=test_seed, geometry=geometry, **spec)
        return train, test

    # -- model pieces ----------------------------------------------------------
    def teacher(self):
        return load_teacher(self._need("teacher", "teacher"))

    def hidden(self):
        layers, _, _ = load_network(self._need("hidden", "ltl"), "snn-hidden")
        return layers

    def network(self, kind="hybrid", stage="ttfs"):
        name = "model" if kind == "hybrid" else "readout"
        layers, output, classifier = load_network(self._need(name, stage), kind)
        return HybridNetwork(layers, output, self.cfg["snn"]["T"], self.coding, classifier)

    def hidden_counts(self, hidden, split):
        digest = hashlib.sha1(b"".join(layer.weight.tobytes() for layer in hidden)).hexdigest()
        if self._counts.get("digest") != digest:
            self._counts = {"digest": digest}
        if split not in self._counts:
            x = {"train": self.data.x_train, "val": self.data.x_val, "test": self.data.x_test}[split]
            net = HybridNetwork(hidden, None, self.cfg["snn"]["T"], self.coding)
            self._counts[split] = net.last_hidden_counts(x)
        return self._counts[split]

    def ttfs_config(self, **overrides):
        t = self.cfg["ttfs"]
        kw = {k: t[k] for k in ("alpha", "beta", "epochs", "lr", "momentum", "batch_size")}
        kw.update(overrides)
        return TTFSTrainConfig(**kw)

    # -- stages ------------------------------------------------------------------
    def stage_teacher(self):
        cfg, ds = self.cfg, self.data
        rng = stage_rng(cfg.seed, "teacher")
        t = cfg["teacher"]
        sizes = [ds.n_features] + cfg.ints("teacher", "hidden") + [ds.n_classes]
        net = TeacherNetwork.mlp(sizes, rng)
        train_teacher(ds, net, t["epochs"], t["lr"], t["momentum"], t["weight_decay"],
                      t["batch_size"], rng)
        save_teacher(self.ckpt("teacher"), net)
        write_csv(self.path("teacher.csv"), net.history, ["epoch", "loss", "test_acc"])
        acts, _ = net.forward(ds.x_train[:2000])
        return {"train_acc": net.train_accuracy, "test_acc": net.test_accuracy,
                "max_activation": float(max(a.max() for a in acts))}

    def ltl_config(self):
        c = self.cfg["ltl"]
        return LTLConfig(T=self.cfg["snn"]["T"], scale=self.cfg["snn"]["scale"], lr=c["lr"],
                         lr_decay=c["lr_decay"], lr_decay_every=c["lr_decay_every"],
                         epochs=c["epochs"], batch_size=c["batch_size"],
                         clip_targets=c["clip_targets"], scale_in_delta=c["scale_in_delta"],
                         recursion=c["recursion"])

    def stage_ltl(self):
        cfg, ds = self.cfg, self.data
        teacher = self.teacher()
        gamma = self.coding.hidden_gamma(cfg["snn"]["gamma"])
        student = build_student(teacher, gamma, cfg["snn"]["threshold"])
        config = self.ltl_config()
        rows = train_hidden_stack(student, teacher, ds.x_train, config, stage_rng(cfg.seed, "ltl"))
        save_network(self.ckpt("hidden"), "snn-hidden", student)
        write_csv(self.path("ltl.csv"), [dict(zip(("epoch", "layer", "normalized_mse"), r))
                                         for r in rows])
        counts = self.hidden_counts(student, "test")
        direct = direct_decode(teacher.classifier.weight, counts).argmax(axis=1)
        nmse = layer_nmse(student, teacher, ds.x_test[:2000], config.T, config.scale_for(0),
                          config.clip_targets)
        return {"direct_acc": float((direct == ds.y_test).mean()),
                **{f"test_nmse_layer{i}": v for i, v in enumerate(nmse)}}

    def stage_calibrate(self):
        cfg = self.cfg
        teacher, hidden = self.teacher(), self.hidden()
        counts = self.hidden_counts(hidden, "train")
        out = build_output_layer(teacher.classifier.weight, cfg["snn"]["T"],
                                 cfg["ttfs"]["init_scale"], cfg["snn"]["tau_m"], cfg["snn"]["tau_s"])
        vth = calibrate_output_threshold(out, counts[:, :cfg["ttfs"]["calibration_samples"]])
        save_network(self.ckpt("readout"), "readout", hidden, out)
        fired_early = float((evaluate(out, counts[:, :2000], self.data.y_train[:2000])
                             ["decisions"].t_f < cfg["snn"]["T"]).mean())
        return {"threshold": vth, "k0": out.k0, "fraction_deciding_before_T": fired_early}

    def stage_ttfs(self):
        cfg, ds = self.cfg, self.data
        teacher = self.teacher()
        net = self.network("readout", "calibrate")
        tr = self.hidden_counts(net.hidden, "train")
        va = self.hidden_counts(net.hidden, "val") if ds.x_val is not None else tr[:, :1000]
        y_va = ds.y_val if ds.x_val is not None else ds.y_train[:1000]
        te = self.hidden_counts(net.hidden, "test")
        rows = train_output_layer(net.output, tr, ds.y_train, va, y_va, self.ttfs_config(),
                                  stage_rng(cfg.seed, "ttfs"), teacher.test_accuracy, te, ds.y_test)
        save_network(self.ckpt("model"), "hybrid", net.hidden, net.output,
                     teacher.classifier.weight)
        write_csv(self.path("ttfs.csv"), rows,
                  ["epoch", "acc_tf", "acc_T", "mean_tf", "L1", "L2", "theta", "tradeoff"])
        return {k: rows[-1][k] for k in ("acc_tf", "acc_T", "mean_tf", "theta")}

    def stage_eval(self):
        cfg, ds = self.cfg, self.data
        teacher = self.teacher()
        net = self.network()
        counts = self.hidden_counts(net.hidden, "test")
        ev = evaluate(net.output, counts, ds.y_test)
        dec = ev["decisions"]
        correct = dec.predicted == ds.y_test
        direct_acc = float((net.direct_predict_from_counts(counts) == ds.y_test).mean())
        metrics = {
            "teacher_acc": teacher.test_accuracy,
            "direct_acc": direct_acc,
            "ttfs_acc": ev["acc_tf"],
            "last_step_acc": ev["acc_T"],
            "mean_tf": ev["mean_tf"],
            "T": cfg["snn"]["T"],
            "tradeoff": (teacher.test_accuracy - ev["acc_tf"]) * ev["mean_tf"],
            "fired_fraction": float(dec.fired_any.mean()),
        }
        metrics.update(early_decision_split(dec.t_f, correct))
        if cfg.task == "sound-loc":
            step = 360.0 / cfg["audio"]["n_classes"]
            metrics.update(audio.localization_metrics(dec.predicted * step, ds.y_test * step))
        write_csv(self.path("eval.csv"), [{"metric": k, "value": v} for k, v in metrics.items()])
        write_csv(self.path("decision_histogram.csv"),
                  emit_decision_histogram(dec, ds.y_test, cfg["snn"]["T"]),
                  ["t_f", "correct_count", "wrong_count"])
        return metrics

    def stage_energy(self):
        cfg, ds = self.cfg, self.data
        net = self.network()
        ledger = SynOpsLedger.for_architecture(net.ops, cfg["energy"]["analog_first_layer"])
        net.last_hidden_counts(ds.x_test, on_batch=ledger.record)
        reports = [energy_report(ledger, ENERGY_MODELS[m]) for m in ("float32", "int32")]
        chosen = reports[0] if cfg["energy"]["mode"] == "float32" else reports[1]
        with open(self.path("energy.json"), "w") as fh:
            fh.write(report_json(chosen) + "\n")
        write_csv(self.path("energy.csv"), reports,
                  ["mode", "ratio", "ann_synops", "snn_synops", "analog_macs", "ann_pJ", "snn_pJ",
                   "saving", "samples"])
        return {"ratio": chosen["ratio"], "saving": chosen["saving"]}

    def stage_noise(self):
        cfg = self.cfg
        net = self.network()
        seeds = cfg["noise"]["seeds"]
        deletion = cfg.floats("noise", "deletion_grid")

        def ledger():
            return SynOpsLedger.for_architecture(net.ops)

        if cfg.task == "sound-loc":
            geometry, mtpc = self.audio_frontend()
            rows = audio.run_localization_experiment(
                net, geometry, mtpc, self.audio_test_spec(), cfg.floats("noise", "snr_grid"),
                cfg.words("noise", "noise_kinds"), deletion, seeds,
                int(stage_rng(cfg.seed, "noise").integers(2 ** 31)), ledger)
        else:
            ds = self.data
            rows = []
            base = int(stage_rng(cfg.seed, "noise").integers(2 ** 31))
            for s in range(seeds):
                for rate in deletion:
                    rng = np.random.default_rng([base, s, int(round(rate * 1000))])
                    dec = net.decide(ds.x_test, transform=lambda _i, tr, rng=rng, rate=rate:
                                     audio.apply_spike_deletion(tr, rate, rng))
                    rows.append({"condition": "deletion", "noise": "spike-deletion",
                                 "level": rate, "seed": s,
                                 "acc": float((dec.predicted == ds.y_test).mean()),
                                 "mean_tf": float(dec.t_f.mean())})
        write_csv(self.path("noise.csv"), rows)
        return summarize_noise(rows)

    # -- driver -------------------------------------------------------------------
    def run(self, stages=STAGES, resume=False):
        if self.coding.output_scheme == "direct":
            stages = [s for s in stages if s not in ("calibrate", "ttfs", "eval", "energy", "noise")]
            if "ltl" not in stages and "teacher" not in stages:
                raise StateError("direct-decoded output supports the teacher and ltl stages only")
        progress_path = self.path("progress.json")
        done = {}
        if resume and os.path.exists(progress_path):
            with open(progress_path) as fh:
                saved = json.load(fh)
            if saved.get("config_hash") == self.record.config_hash:
                done = saved.get("stages", {})
        with open(self.path("resolved_config.ini"), "w") as fh:
            fh.write(self.cfg.to_ini())
        for stage in stages:
            if stage in done:
                self.record.metrics[stage] = done[stage]
                log.info("stage %s already complete, skipping", stage)
                continue
            start = time.time()
            try:
                metrics = getattr(self, f"stage_{stage}")()
            except HybridSNNError as exc:
                raise StageError(stage, str(exc)) from exc
            except (ValueError, ArithmeticError, OSError) as exc:
                raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
            self.record.wall_clock[stage] = time.time() - start
            self.record.metrics[stage] = metrics
            done[stage] = metrics
            with open(progress_path, "w") as fh:
                json.dump({"config_hash": self.record.config_hash, "stages": done}, fh,
                          indent=2, sort_keys=True, default=_cell)
            log.info("stage %s finished in %.1fs", stage, self.record.wall_clock[stage])
        self.record.checkpoints = {n: self.ckpt(n) for n in ("teacher", "hidden", "readout", "model")
                                   if os.path.exists(self.ckpt(n))}
        with open(self.path("run_record.json"), "w") as fh:
            fh.write(self.record.to_json() + "\n")
        return self.record


def summarize_noise(rows):
    """Mean of the error metric over seeds for every (condition, noise, level)."""
    key_metric = "MAE" if rows and "MAE" in rows[0] else "acc"
    groups = {}
    for r in rows:
        groups.setdefault((r["condition"], r["noise"], r["level"]), []).append(r[key_metric])
    return {f"{c}/{n}/{lvl}": float(np.mean(v)) for (c, n, lvl), v in groups.items()}


def run_pipeline(cfg, out_dir, stages=STAGES, resume=False):
    return Pipeline(cfg, out_dir).run(stages, resume)
