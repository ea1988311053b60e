"""Experiment configuration: an INI file with one section per stage.

Every key has a typed default; unknown sections or keys are errors. The
resolved configuration (defaults filled in) can be written back out so a run
records exactly what it used.
"""

import configparser
import hashlib
import io

from .errors import ConfigurationError

# (type, default) per key; the sound-loc task overrides a few below
SCHEMA = {
    "experiment": {
        "task": (str, "image-class"),
        "dataset": (str, "mnist"),
        "data_dir": (str, "data/mnist"),
        "seed": (int, 0),
        "input_scheme": (str, "direct"),
        "hidden_scheme": (str, "burst"),
        "output_scheme": (str, "ttfs"),
    },
    "teacher": {
        "hidden": (str, "300,300"),
        "epochs": (int, 8),
        "lr": (float, 0.05),
        "momentum": (float, 0.9),
        "weight_decay": (float, 2e-3),
        "batch_size": (int, 100),
        "n_train": (int, 0),
        "n_val": (int, 5000),
    },
    "snn": {
        "T": (int, 8),
        "gamma": (int, 5),
        "threshold": (float, 1.0),
        "scale": (float, 1.0),
        "tau_m": (float, 2.0),
        "tau_s": (float, 0.5),
    },
    "ltl": {
        "epochs": (int, 3),
        "lr": (float, 1e-4),
        "lr_decay": (float, 0.5),
        "lr_decay_every": (int, 10),
        "batch_size": (int, 100),
        "clip_targets": (bool, True),
        "scale_in_delta": (bool, True),
        "recursion": (str, "one_step"),
    },
    "ttfs": {
        "alpha": (float, 2.0),
        "beta": (float, 2.0),
        "epochs": (int, 8),
        "lr": (float, 1e-5),
        "momentum": (float, 0.9),
        "batch_size": (int, 100),
        "init_scale": (float, 0.02),
        "calibration_samples": (int, 5000),
    },
    "energy": {
        "mode": (str, "float32"),
        "analog_first_layer": (bool, False),
    },
    "audio": {
        "frames_per_class": (int, 40),
        "test_frames_per_class": (int, 10),
        "n_classes": (int, 72),
        "sample_rate": (float, 24000.0),
        "frame_length": (int, 1024),
        "spacing": (float, 0.05),
        "source": (str, "multitone"),
        "n_fft": (int, 1024),
        "n_delays": (int, 51),
        "n_bands": (int, 40),
        "f_lo": (float, 280.0),
        "f_hi": (float, 8000.0),
        "magnitude_ratio": (float, 0.05),
        "dataset_dir": (str, ""),
    },
    "noise": {
        "snr_grid": (str, "20,10,5,0"),
        "noise_kinds": (str, "babble,factory"),
        "deletion_grid": (str, "0,0.2,0.4,0.6"),
        "seeds": (int, 3),
    },
}

TASK_DEFAULTS = {
    "image-class": {},
    "sound-loc": {
        ("experiment", "dataset"): "synthetic-array",
        ("experiment", "input_scheme"): "phase",
        ("teacher", "hidden"): "256,256",
        ("teacher", "epochs"): 20,
        ("teacher", "weight_decay"): 5e-4,
        ("teacher", "n_val"): 360,
        ("snn", "T"): 16,
        ("ltl", "epochs"): 5,
        ("ttfs", "epochs"): 10,
        ("ttfs", "lr"): 1e-4,
        ("ttfs", "init_scale"): 0.05,
        ("ttfs", "calibration_samples"): 2520,
    },
}

TASKS = tuple(TASK_DEFAULTS)


def _parse(kind, raw, where):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


class ExperimentConfig:
    """Resolved configuration; ``cfg["ltl"]["lr"]`` style access."""

    def __init__(self, values):
        self.values = values

    def __getitem__(self, section):
        return self.values[section]

    @property
    def task(self):
        return self.values["experiment"]["task"]

    @property
    def seed(self):
        return self.values["experiment"]["seed"]

    def floats(self, section, key):
        text = self.values[section][key].strip()
        return [float(v) for v in text.split(",")] if text else []

    def ints(self, section, key):
        text = self.values[section][key].strip()
        return [int(v) for v in text.split(",")] if text else []

    def words(self, section, key):
        return [v.strip() for v in self.values[section][key].split(",") if v.strip()]

    def to_ini(self):
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {k: _fmt(v) for k, v in keys.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    def with_overrides(self, **sections):
        values = {s: dict(k) for s, k in self.values.items()}
        for section, keys in sections.items():
            for key, val in keys.items():
                if section not in values or key not in values[section]:
                    raise ConfigurationError(f"unknown key [{section}] {key}")
                values[section][key] = val
        return ExperimentConfig(values)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def load_config(text="", seed=None):
    """Parse INI ``text``, fill defaults and validate.

    ``seed`` (e.g. from the command line) overrides ``[experiment] seed``.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key [{section}] {key}")
    task = parser.get("experiment", "task", fallback=SCHEMA["experiment"]["task"][1]).strip()
    if task not in TASK_DEFAULTS:
        raise ConfigurationError(f"unknown task {task!r}; expected one of {TASKS}")
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            default = TASK_DEFAULTS[task].get((section, key), default)
            if parser.has_option(section, key):
                values[section][key] = _parse(kind, parser[section][key], f"[{section}] {key}")
            else:
                values[section][key] = default
    if seed is not None:
        values["experiment"]["seed"] = int(seed)
    cfg = ExperimentConfig(values)
    validate(cfg)
    return cfg


def load_config_file(path, seed=None):
    try:
        with open(path) as fh:
            return load_config(fh.read(), seed)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None


def validate(cfg):
    from .coding import CodingAssignment

    exp = cfg["experiment"]
    coding = CodingAssignment(exp["input_scheme"], exp["hidden_scheme"], exp["output_scheme"])
    coding.validate_task(cfg.task)
    if cfg["snn"]["T"] < 1:
        raise ConfigurationError("T must be >= 1")
    if not 1 <= cfg["snn"]["gamma"] <= 255:
        raise ConfigurationError("gamma must lie in [1, 255]")
    if cfg["snn"]["scale"] <= 0 or cfg["snn"]["threshold"] <= 0:
        raise ConfigurationError("scale and threshold must be positive")
    if cfg["ltl"]["recursion"] not in ("one_step", "exact"):
        raise ConfigurationError("ltl recursion must be 'one_step' or 'exact'")
    if cfg["energy"]["mode"] not in ("float32", "int32"):
        raise ConfigurationError("energy mode must be float32 or int32")
    if cfg.task == "image-class" and exp["dataset"] not in ("mnist", "blobs"):
        raise ConfigurationError(f"unknown image dataset {exp['dataset']!r}")
    try:
        cfg.ints("teacher", "hidden")
        cfg.floats("noise", "snr_grid")
        cfg.floats("noise", "deletion_grid")
    except ValueError as exc:
        raise ConfigurationError(f"bad list value: {exc}") from None
    if cfg.task == "sound-loc" and exp["input_scheme"] != "phase":
        raise ConfigurationError("sound-loc uses the phase-coded (MTPC) input block")
    return cfg
