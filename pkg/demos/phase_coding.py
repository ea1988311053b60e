"""
Multi-tone phase coding of a microphone array frame
===================================================
"""

import numpy as np

from hybridsnn.audio import MTPCConfig, mtpc_encode, square_array, synthesize_frame

geometry = square_array(0.05)
config = MTPCConfig()
rng = np.random.default_rng(4)

frame = synthesize_frame(120.0, "multitone", geometry, rng=rng)
print("tones (Hz):", [round(f) for f in frame.source["frequencies"]])

spikes = mtpc_encode(frame, config, geometry)
arrival = geometry.arrival_times(frame.azimuth)

# a phase difference only pins the delay down modulo one period, so above
# c / (2 * aperture) the diagonal pairs alias; look at the low bands only
unambiguous = spikes.band_edges[1:] < geometry.speed_of_sound / (2 * geometry.aperture())
for p, (a, b) in enumerate(spikes.pairs):
    hist = spikes.counts[p][:, unambiguous].sum(axis=1)
    best = spikes.delays[np.argmax(hist)]
    print(f"mics {a}-{b}: true delay {1e6 * (arrival[b] - arrival[a]):7.1f} us, "
          f"busiest low-band detector {1e6 * best:7.1f} us")

# every FFT bin above the magnitude gate fires one detector per pair
print("spikes per pair:", spikes.counts.sum(axis=(1, 2)))
print("bands below the aliasing limit:", int(unambiguous.sum()), "of", len(unambiguous))
