"""Microphone-array synthesis, multi-tone phase coding and localisation metrics.

The encoder splits every channel into FFT tones, turns each tone into one
spike at its first positive peak, and lets a bank of coincidence detectors
per microphone pair vote for the inter-channel delay. Detector votes are then
pooled into log-spaced frequency bands.
"""

import itertools
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .neurons import SpikeTrain

SPEED_OF_SOUND = 343.0
AZIMUTH_STEP = 5.0
N_AZIMUTHS = 72
SNR_GRID = (20.0, 10.0, 5.0, 0.0)
DELETION_GRID = (0.0, 0.2, 0.4, 0.6)
NOISE_KINDS = ("babble", "factory")


@dataclass
class ArrayGeometry:
    """Planar microphone positions in metres, one row per microphone."""

    positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2 or len(self.positions) < 2:
            raise ConfigurationError("need at least two 2-D microphone positions")
        if self.aperture() <= 0:
            raise ConfigurationError("microphone array has zero aperture")

    @property
    def n_mics(self):
        return len(self.positions)

    def aperture(self):
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return float(np.sqrt((diff ** 2).sum(axis=2)).max())

    def pairs(self):
        return list(itertools.combinations(range(self.n_mics), 2))

    def arrival_times(self, azimuth_deg):
        """Plane-wave arrival time at each mic relative to the array origin (s)."""
        az = np.deg2rad(azimuth_deg)
        toward_source = np.array([np.cos(az), np.sin(az)])
        return -(self.positions @ toward_source) / self.speed_of_sound

    def max_tdoa(self):
        return self.aperture() / self.speed_of_sound


def square_array(spacing=0.05):
    h = spacing / 2.0
    return ArrayGeometry([[h, h], [-h, h], [-h, -h], [h, -h]])


def linear_pair(spacing=0.05):
    return ArrayGeometry([[-spacing / 2.0, 0.0], [spacing / 2.0, 0.0]])


@dataclass
class MicArrayFrame:
    channels: np.ndarray
    sample_rate: float
    azimuth: float
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2:
            raise DataError("channels must be (mics, samples)")
        if not 0.0 <= self.azimuth < 360.0:
            raise DataError(f"azimuth {self.azimuth} outside [0, 360)")

    @property
    def frame_length(self):
        return self.channels.shape[1]


def _band_limited_noise(rng, length, sample_rate, f_lo, f_hi):
    spec = np.fft.rfft(rng.normal(size=length))
    freqs = np.fft.rfftfreq(length, 1.0 / sample_rate)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    return spec, freqs


def _delayed(spec, freqs, delay, length):
    return np.fft.irfft(spec * np.exp(-2j * np.pi * freqs * delay), n=length)


def babble_noise(rng, length, sample_rate, n_voices=24):
    """Many amplitude-modulated tones in the speech band."""
    t = np.arange(length) / sample_rate
    f = rng.uniform(100.0, 4000.0, n_voices)
    mod = rng.uniform(2.0, 8.0, n_voices)
    phase = rng.uniform(0, 2 * np.pi, (2, n_voices))
    env = 1.0 + 0.8 * np.sin(2 * np.pi * mod[:, None] * t + phase[1][:, None])
    return (env * np.sin(2 * np.pi * f[:, None] * t + phase[0][:, None])).sum(axis=0)


def factory_noise(rng, length, sample_rate):
    """Wide-band noise with a slow multiplicative hum-like modulation."""
    spec, _ = _band_limited_noise(rng, length, sample_rate, 50.0, 0.45 * sample_rate)
    base = np.fft.irfft(spec, n=length)
    t = np.arange(length) / sample_rate
    hum = 1.0 + 0.6 * np.sin(2 * np.pi * rng.uniform(20.0, 120.0) * t)
    return base * hum


NOISE_GENERATORS = {"babble": babble_noise, "factory": factory_noise}


def mix_at_snr(clean, noise, snr_db):
    p_sig = float(np.mean(clean ** 2))
    p_noise = float(np.mean(noise ** 2))
    if p_noise == 0.0 or p_sig == 0.0:
        return clean.copy()
    return clean + noise * np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))


def synthesize_frame(azimuth, source="multitone", geometry=None, sample_rate=24000.0,
                     length=1024, snr_db=None, noise_kind="babble", rng=None,
                     band=(280.0, 8000.0), frequencies=None):
    """Far-field frame from a source at ``azimuth`` degrees.

    ``source`` is ``"tone"``, ``"multitone"`` or ``"noise-burst"``. Tonal sources
    are delayed analytically; noise bursts by an FFT phase shift. With
    ``snr_db`` set, independent noise of ``noise_kind`` is added to every
    channel at that SNR.
    """
    geometry = geometry if geometry is not None else square_array()
    rng = rng if rng is not None else np.random.default_rng(0)
    delays = geometry.arrival_times(azimuth)
    t = np.arange(length) / sample_rate
    desc = {"kind": source}
    if source in ("tone", "multitone"):
        if frequencies is None:
            if source == "tone":
                frequencies = [rng.uniform(*band)]
            else:
                f0 = rng.uniform(band[0], 1000.0)
                harmonics = np.arange(1, int(band[1] // f0) + 1)
                k = int(rng.integers(3, 7))
                frequencies = f0 * np.sort(rng.choice(harmonics, size=min(k, len(harmonics)),
                                                      replace=False))
        freqs = np.asarray(frequencies, dtype=np.float64)
        amps = rng.uniform(0.5, 1.0, len(freqs)) if source == "multitone" else np.ones(1)
        phases = rng.uniform(0, 2 * np.pi, len(freqs)) if source == "multitone" else np.zeros(1)
        arg = 2 * np.pi * freqs[None, :, None] * (t[None, None, :] - delays[:, None, None])
        channels = (amps[None, :, None] * np.sin(arg + phases[None, :, None])).sum(axis=1)
        desc.update(frequencies=[float(f) for f in freqs])
    elif source == "noise-burst":
        spec, freqs = _band_limited_noise(rng, length, sample_rate, *band)
        channels = np.stack([_delayed(spec, freqs, d, length) for d in delays])
    else:
        raise ConfigurationError(f"unknown source kind {source!r}")
    if snr_db is not None:
        gen = NOISE_GENERATORS.get(noise_kind)
        if gen is None:
            raise ConfigurationError(f"unknown noise kind {noise_kind!r}")
        channels = np.stack([mix_at_snr(ch, gen(rng, length, sample_rate), snr_db)
                             for ch in channels])
        desc.update(snr_db=float(snr_db), noise=noise_kind)
    return MicArrayFrame(channels, float(sample_rate), float(azimuth) % 360.0, desc)


@dataclass
class MTPCConfig:
    n_fft: int = 1024
    n_delays: int = 51
    n_bands: int = 40
    f_lo: float = 280.0
    f_hi: float = 8000.0
    pairs: tuple = None  # default: every microphone pair
    max_delay: float = None  # seconds; default: the array's largest TDOA
    magnitude_ratio: float = 0.05  # tones weaker than this fraction of the peak stay silent

    def __post_init__(self):
        if self.n_delays < 1 or self.n_delays % 2 == 0:
            raise ConfigurationError("n_delays must be odd")
        if not 0 < self.f_lo < self.f_hi:
            raise ConfigurationError("need 0 < f_lo < f_hi")
        if self.n_bands < 1 or self.n_fft < 2:
            raise ConfigurationError("n_bands and n_fft must be positive")

    def resolve(self, geometry, sample_rate):
        if self.f_hi >= sample_rate / 2:
            raise ConfigurationError(f"f_hi {self.f_hi} must stay below Nyquist {sample_rate / 2}")
        pairs = tuple(tuple(p) for p in self.pairs) if self.pairs else tuple(geometry.pairs())
        max_delay = self.max_delay if self.max_delay is not None else geometry.max_tdoa()
        return pairs, max_delay

    def delay_grid(self, max_delay):
        return np.linspace(-max_delay, max_delay, self.n_delays)

    def band_edges(self):
        return np.geomspace(self.f_lo, self.f_hi, self.n_bands + 1)


@dataclass
class PhaseSpikeMap:
    counts: np.ndarray  # (pairs, n_delays, n_bands)
    delays: np.ndarray
    band_edges: np.ndarray
    pairs: tuple

    def fired(self):
        return np.argwhere(self.counts > 0)


def first_peak_times(phases, omega):
    """Earliest ``t >= 0`` at which ``cos(omega t + phase)`` peaks."""
    return np.mod(-phases, 2 * np.pi) / omega


def mtpc_encode_batch(channels, sample_rate, geometry, config):
    """Encode ``(frames, mics, samples)`` into ``(frames, pairs, n_delays, n_bands)`` counts."""
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim == 2:
        channels = channels[None]
    if channels.shape[2] < config.n_fft:
        raise DataError(f"frame has {channels.shape[2]} samples, need {config.n_fft}")
    pairs, max_delay = config.resolve(geometry, sample_rate)
    spec = np.fft.rfft(channels[:, :, :config.n_fft], axis=2)
    freqs = np.fft.rfftfreq(config.n_fft, 1.0 / sample_rate)
    edges = config.band_edges()
    in_range = (freqs >= config.f_lo) & (freqs <= config.f_hi)
    bins = np.nonzero(in_range)[0]
    band_of = np.clip(np.searchsorted(edges, freqs[bins], side="right") - 1, 0, config.n_bands - 1)
    omega = 2 * np.pi * freqs[bins]
    period = 1.0 / freqs[bins]
    spikes = first_peak_times(np.angle(spec[:, :, bins]), omega)
    mag = np.abs(spec[:, :, bins])
    peak = mag.max(axis=(1, 2), keepdims=True)
    active = (mag > 0) & (mag >= config.magnitude_ratio * peak)
    grid = config.delay_grid(max_delay)
    step = grid[1] - grid[0] if config.n_delays > 1 else np.inf
    n_frames = channels.shape[0]
    out = np.zeros((n_frames, len(pairs), config.n_delays, config.n_bands), dtype=np.int64)
    frame_idx = np.arange(n_frames)[:, None]
    for pi, (a, b) in enumerate(pairs):
        # phase differences are only defined modulo one period
        diff = spikes[:, b] - spikes[:, a]
        diff = np.mod(diff + period / 2, period) - period / 2
        if config.n_delays > 1:
            idx = np.rint((diff + max_delay) / step).astype(np.int64)
        else:
            idx = np.zeros_like(diff, dtype=np.int64)
        ok = active[:, a] & active[:, b] & (idx >= 0) & (idx < config.n_delays)
        ok &= np.abs(diff - grid[np.clip(idx, 0, config.n_delays - 1)]) <= step / 2
        f, k = np.nonzero(ok)
        np.add.at(out, (frame_idx[f, 0], pi, idx[f, k], band_of[k]), 1)
    return out


def mtpc_encode(frame, config=None, geometry=None):
    config = config if config is not None else MTPCConfig()
    geometry = geometry if geometry is not None else square_array()
    if frame.channels.shape[0] != geometry.n_mics:
        raise DataError(f"frame has {frame.channels.shape[0]} channels, array has {geometry.n_mics}")
    pairs, max_delay = config.resolve(geometry, frame.sample_rate)
    counts = mtpc_encode_batch(frame.channels, frame.sample_rate, geometry, config)[0]
    return PhaseSpikeMap(counts, config.delay_grid(max_delay), config.band_edges(), pairs)


def normalize_spike_maps(counts):
    """Scale each (pair, band) delay histogram to unit sum; silent bands stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-2, keepdims=True)
    return np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)


def circular_error(pred, truth):
    d = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def localization_metrics(predictions, truths, eta=2.5, grid=AZIMUTH_STEP):
    """Circular MAE (degrees) and the fraction of grid-rounded predictions within ``eta``."""
    pred = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truths, dtype=np.float64)
    if pred.size == 0 or pred.shape != truth.shape:
        raise DataError("need equally long, non-empty prediction and truth lists")
    rounded = np.round(pred / grid) * grid if grid else pred
    return {
        "MAE": float(circular_error(pred, truth).mean()),
        "Acc": float((circular_error(rounded, truth) < eta).mean()),
    }


def apply_spike_deletion(train, deletion_rate, seed=None):
    """Zero every (timestep, sample, neuron) output independently with ``deletion_rate``."""
    if not 0.0 <= deletion_rate <= 1.0:
        raise ConfigurationError("deletion rate must lie in [0, 1]")
    counts = train.counts if isinstance(train, SpikeTrain) else np.asarray(train)
    gamma = train.gamma if isinstance(train, SpikeTrain) else 1
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(counts.shape) >= deletion_rate
    return SpikeTrain((counts * keep).astype(counts.dtype), gamma)


@dataclass
class AudioDataset:
    channels: np.ndarray  # (frames, mics, samples) float32
    azimuths: np.ndarray
    sample_rate: float
    records: list

    def __len__(self):
        return len(self.azimuths)

    @property
    def labels(self):
        return np.rint(self.azimuths / AZIMUTH_STEP).astype(np.int64) % N_AZIMUTHS


def generate_dataset(frames_per_class, seed, geometry=None, sample_rate=24000.0, length=1024,
                     source="multitone", snr_db=None, noise_kind="babble",
                     n_classes=N_AZIMUTHS):
    """Frames on the azimuth grid; every frame gets its own seed for reproducibility."""
    geometry = geometry if geometry is not None else square_array()
    master = np.random.SeedSequence(seed)
    children = master.spawn(frames_per_class * n_classes)
    chans, az, records = [], [], []
    for i, child in enumerate(children):
        azimuth = (i % n_classes) * (360.0 / n_classes)
        frame = synthesize_frame(azimuth, source, geometry, sample_rate, length, snr_db,
                                 noise_kind, np.random.default_rng(child))
        chans.append(frame.channels.astype(np.float32))
        az.append(frame.azimuth)
        records.append({"index": i, "azimuth": frame.azimuth, "sample_rate": sample_rate,
                        "source": frame.source, "seed": [seed, i]})
    return AudioDataset(np.stack(chans), np.asarray(az), float(sample_rate), records)


def save_dataset(dataset, directory):
    """Raw little-endian float32 PCM per channel plus a JSON-lines manifest."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "manifest.jsonl"), "w") as fh:
        for rec, frame in zip(dataset.records, dataset.channels):
            files = []
            for m, ch in enumerate(frame):
                name = f"frame{rec['index']:06d}_ch{m}.f32"
                ch.astype("<f4").tofile(os.path.join(directory, name))
                files.append(name)
            fh.write(json.dumps(dict(rec, files=files), sort_keys=True) + "\n")


def load_dataset(directory):
    path = os.path.join(directory, "manifest.jsonl")
    if not os.path.exists(path):
        raise DataError(f"no manifest in {directory}")
    chans, az, records = [], [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            frame = [np.fromfile(os.path.join(directory, f), dtype="<f4") for f in rec.pop("files")]
            if len({len(c) for c in frame}) != 1:
                raise DataError(f"frame {rec['index']} has channels of unequal length")
            chans.append(np.stack(frame))
            az.append(rec["azimuth"])
            records.append(rec)
    if not records:
        raise DataError("empty manifest")
    return AudioDataset(np.stack(chans), np.asarray(az), float(records[0]["sample_rate"]), records)


def mtpc_config_dict(config):
    return {k: v for k, v in asdict(config).items()}


def encode_dataset(dataset, geometry, config):
    """Normalised MTPC features, one flattened row per frame."""
    maps = mtpc_encode_batch(dataset.channels, dataset.sample_rate, geometry, config)
    return normalize_spike_maps(maps).reshape(len(dataset), -1)


def run_localization_experiment(model, geometry, mtpc_config, test_spec, snr_grid=SNR_GRID,
                                noise_kinds=NOISE_KINDS, deletion_grid=DELETION_GRID, seeds=3,
                                base_seed=0, ledger_factory=None):
    """Evaluate a trained model on clean, noisy and spike-deleted test frames.

    ``test_spec`` holds the :func:`generate_dataset` keyword arguments of the
    test split (``frames_per_class``, ``sample_rate``, ...). For every seed the
    same source frames are reused across SNR levels, so conditions differ only
    in the noise. Returns one row per (condition, level, seed).
    """
    from .errors import StateError

    if model is None or model.output is None:
        raise StateError("localisation experiment needs a trained model")
    rows = []

    def evaluate(features, azimuths, condition, kind, level, seed, transform=None):
        ledger = ledger_factory() if ledger_factory else None
        dec = model.decide(features, transform=transform,
                           on_batch=ledger.record if ledger else None)
        m = localization_metrics(dec.predicted * (360.0 / N_AZIMUTHS), azimuths)
        row = {"condition": condition, "noise": kind, "level": level, "seed": seed,
               "MAE": m["MAE"], "Acc": m["Acc"], "mean_tf": float(dec.t_f.mean())}
        if ledger is not None:
            row["synops_per_sample"] = ledger.snn_ops / ledger.n_samples
        rows.append(row)

    for s in range(seeds):
        frame_seed = base_seed + 7919 * s
        clean = generate_dataset(seed=frame_seed, geometry=geometry, **test_spec)
        features = encode_dataset(clean, geometry, mtpc_config)
        evaluate(features, clean.azimuths, "clean", "none", float("inf"), s)
        for kind in noise_kinds:
            for snr in snr_grid:
                noisy = generate_dataset(seed=frame_seed, geometry=geometry, snr_db=snr,
                                         noise_kind=kind, **test_spec)
                evaluate(encode_dataset(noisy, geometry, mtpc_config), noisy.azimuths,
                         "snr", kind, float(snr), s)
        for rate in deletion_grid:
            rng = np.random.default_rng([base_seed, s, int(round(rate * 1000))])
            evaluate(features, clean.azimuths, "deletion", "spike-deletion", float(rate), s,
                     lambda _i, train, rng=rng, rate=rate: apply_spike_deletion(train, rate, rng))
    return rows
