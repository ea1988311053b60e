import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsnn.audio import (ArrayGeometry, MicArrayFrame, MTPCConfig, apply_spike_deletion,
                             circular_error, first_peak_times, generate_dataset, linear_pair, load_dataset,
                             localization_metrics, mix_at_snr, mtpc_encode, mtpc_encode_batch,
                             normalize_spike_maps, save_dataset, square_array, synthesize_frame)
from hybridsnn.errors import ConfigurationError, DataError

FS = 24000.0
N_FFT = 1024


def tone_channels(freq, delays, phase=0.0, length=N_FFT):
    t = np.arange(length) / FS
    return np.stack([np.cos(2 * np.pi * freq * (t - d) + phase) for d in delays])


def xcorr_tdoa(a, b, upsample=64):
    """Delay of ``b`` relative to ``a`` from the peak of their band-limited cross-correlation."""
    n = len(a)
    spec = np.fft.rfft(b, 2 * n) * np.conj(np.fft.rfft(a, 2 * n))
    cc = np.fft.irfft(spec, 2 * n * upsample)
    lag = int(np.argmax(cc))
    if lag > n * upsample:
        lag -= 2 * n * upsample
    return lag / (FS * upsample)


def test_square_array_geometry():
    geo = square_array(0.05)
    assert geo.n_mics == 4 and len(geo.pairs()) == 6
    assert geo.max_tdoa() == pytest.approx(0.05 * np.sqrt(2) / 343.0)
    # a source on the +x axis reaches the +x microphones first
    times = geo.arrival_times(0.0)
    assert times[0] < times[1] and times[0] == pytest.approx(times[3])


def test_zero_aperture_rejected():
    with pytest.raises(ConfigurationError):
        ArrayGeometry([[0.0, 0.0], [0.0, 0.0]])


def test_first_peak_examples():
    omega = 2 * np.pi * 100.0
    assert first_peak_times(np.array([0.0]), omega)[0] == 0.0
    assert first_peak_times(np.array([-np.pi / 2]), omega)[0] == pytest.approx(2.5e-3)
    assert first_peak_times(np.array([np.pi / 2]), omega)[0] == pytest.approx(7.5e-3)


def test_mtpc_agrees_with_cross_correlation(rng):
    geo = square_array()
    cfg = MTPCConfig()
    grid = cfg.delay_grid(geo.max_tdoa())
    step = grid[1] - grid[0]
    for az in rng.uniform(0, 360, 10):
        frame = synthesize_frame(az, "noise-burst", geo, FS, N_FFT, rng=rng)
        counts = mtpc_encode(frame, cfg, geo).counts
        for pi, (a, b) in enumerate(geo.pairs()):
            oracle = xcorr_tdoa(frame.channels[a], frame.channels[b])
            mode = grid[np.argmax(counts[pi].sum(axis=1))]
            assert abs(mode - oracle) <= 1.5 * step


def test_silence_produces_no_spikes():
    frame = MicArrayFrame(np.zeros((4, N_FFT)), FS, 0.0)
    assert not mtpc_encode(frame).counts.any()
    assert not normalize_spike_maps(mtpc_encode(frame).counts).any()


def test_single_tone_fires_one_detector_per_pair():
    geo = square_array()
    freq = 40 * FS / N_FFT
    channels = tone_channels(freq, geo.arrival_times(30.0))
    counts = mtpc_encode_batch(channels, FS, geo, MTPCConfig())[0]
    assert counts.shape == (6, 51, 40)
    for pair in counts:
        assert (pair > 0).sum() == 1 and pair.sum() == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(12, 100), st.floats(-1.0, 1.0), st.floats(0, 2 * np.pi))
def test_detected_delay_follows_true_delay(bin_index, frac, phase):
    geo = linear_pair()
    cfg = MTPCConfig()
    max_delay = geo.max_tdoa()
    delay = frac * max_delay
    channels = tone_channels(bin_index * FS / N_FFT, [0.0, delay], phase)
    counts = mtpc_encode_batch(channels, FS, geo, cfg)[0, 0]
    grid = cfg.delay_grid(max_delay)
    fired = np.argwhere(counts.sum(axis=1) > 0).ravel()
    assert len(fired) == 1
    assert abs(grid[fired[0]] - delay) <= (grid[1] - grid[0]) / 2 + 1e-9


def test_short_frame_rejected():
    with pytest.raises(DataError):
        mtpc_encode_batch(np.zeros((4, 100)), FS, square_array(), MTPCConfig())


def test_f_hi_must_stay_below_nyquist():
    with pytest.raises(ConfigurationError):
        mtpc_encode_batch(np.zeros((4, N_FFT)), 16000.0, square_array(), MTPCConfig())


def test_normalised_histograms_sum_to_one(rng):
    frame = synthesize_frame(45.0, "multitone", square_array(), FS, N_FFT, rng=rng)
    feats = normalize_spike_maps(mtpc_encode(frame).counts)
    sums = feats.sum(axis=1)
    assert np.all((np.abs(sums - 1) < 1e-12) | (sums == 0))
    assert np.any(sums == 1)


def test_mix_at_snr_hits_target(rng):
    clean, noise = rng.normal(size=4000), rng.normal(size=4000) * 3
    mixed = mix_at_snr(clean, noise, 5.0)
    snr = 10 * np.log10(np.mean(clean ** 2) / np.mean((mixed - clean) ** 2))
    assert snr == pytest.approx(5.0)


@pytest.mark.parametrize("kind", ["babble", "factory"])
def test_noisy_frames_keep_source(kind):
    clean = synthesize_frame(90.0, rng=np.random.default_rng(3))
    noisy = synthesize_frame(90.0, snr_db=10.0, noise_kind=kind, rng=np.random.default_rng(3))
    assert noisy.source["frequencies"] == clean.source["frequencies"]
    assert not np.allclose(noisy.channels, clean.channels)


def test_circular_error_and_metrics():
    assert circular_error(355.0, 5.0) == pytest.approx(10.0)
    assert circular_error(180.0, 0.0) == pytest.approx(180.0)
    m = localization_metrics([0.0, 90.0, 350.0, 100.0], [0.0, 90.0, 0.0, 90.0])
    assert m["MAE"] == pytest.approx(5.0)
    assert m["Acc"] == pytest.approx(0.5)
    with pytest.raises(DataError):
        localization_metrics([], [])


def test_spike_deletion_is_binomial(rng):
    train = np.ones((8, 500, 50), dtype=np.uint8)
    for rate in (0.0, 0.2, 0.6, 1.0):
        kept = apply_spike_deletion(train, rate, rng).counts.mean()
        sd = np.sqrt(rate * (1 - rate) / train.size)
        assert abs(kept - (1 - rate)) <= 4 * sd + 1e-12
    with pytest.raises(ConfigurationError):
        apply_spike_deletion(train, 1.5)


def test_dataset_is_seeded_and_round_trips(tmp_path):
    a = generate_dataset(1, seed=7, n_classes=4, length=N_FFT)
    b = generate_dataset(1, seed=7, n_classes=4, length=N_FFT)
    assert np.array_equal(a.channels, b.channels)
    assert a.labels.tolist() == [0, 18, 36, 54]
    save_dataset(a, tmp_path / "d")
    c = load_dataset(tmp_path / "d")
    assert np.array_equal(c.channels, a.channels)
    assert c.azimuths.tolist() == a.azimuths.tolist() and c.sample_rate == FS
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing")
