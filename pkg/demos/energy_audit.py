"""
Counting synaptic operations
============================
"""

import numpy as np

from hybridsnn.energy import (FLOAT32, INT32, SynOpsLedger, energy_report, saving_from_ratio,
                              synops_ann)
from hybridsnn.layers import Conv2d, Dense

rng = np.random.default_rng(0)
conv = Conv2d((1, 28, 28), 8, 3, stride=2, padding=1, rng=rng)
arch = [conv, Dense(conv.out_features, 100, rng=rng), Dense(100, 10, rng=rng)]
print("ANN MACs per sample:", synops_ann(arch))

# a sparse fake history: 5% of neurons fire once per step over 8 steps
T, batch = 8, 16
history = [(rng.random((T, batch, op.out_features)) < 0.05).astype(np.uint8) for op in arch[:-1]]

ledger = SynOpsLedger.for_architecture(arch)
ledger.record(history)
for model in (FLOAT32, INT32):
    r = energy_report(ledger, model)
    print(f"{model.mode}: ratio {r['ratio']:.3f}, saving {r['saving']:.1f}x")

print("a ratio of 0.49 in float32 gives", round(saving_from_ratio(0.49, FLOAT32), 2))
