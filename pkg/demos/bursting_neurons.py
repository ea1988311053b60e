"""
Bursting integrate-and-fire neurons
===================================

A constant drive into one layer, read out as rate and as bursts, then a
double-exponential readout neuron fed by the burst train.
"""

import numpy as np

from hybridsnn.neurons import BurstingIFLayer, DoubleExpLIFLayer

np.set_printoptions(precision=3, suppress=True)

# three neurons see drives of 0.4, 1.7 and 4.2 thresholds per step
weight = np.diag([0.4, 1.7, 4.2])
x = np.ones((1, 3))
T = 8

for gamma in (1, 5):
    train = BurstingIFLayer(weight, threshold=1.0, gamma=gamma).run(x, T)
    print(f"gamma={gamma} spikes per step:")
    print(train.counts[:, 0].T)
    print("decoded rate:", train.rate()[0])

# with one spike per step the strong neurons saturate at 1.0; bursts keep
# the rate proportional to the drive up to gamma

burst = BurstingIFLayer(weight, 1.0, 5).run(x, T)
readout = DoubleExpLIFLayer(np.array([[0.1, 0.2, 0.3]]), window=T)
v = readout.potentials(burst.counts)[:, 0, 0]
print("readout potential per step:", v)
print("first step at threshold:", int(np.argmax(v >= readout.threshold)) + 1
      if np.any(v >= readout.threshold) else "none")
