"""Merging checkpoints: LAWA, EMA and a sliding sequence of merges.

Run with ``python demos/01_merging.py``. Writes a tiny checkpoint run into a
temporary directory and averages it in several ways.
"""

import tempfile

import numpy as np

from extramerge import CheckpointManifest, MergeSchedule, sliding_pma, write_run
from extramerge.merge_engine import merge_latest

tmp = tempfile.mkdtemp()

# Ten checkpoints of a 4-parameter model, saved every 10 steps.
# Parameter i at checkpoint j is j + i/10 so averages are easy to read.
steps = list(range(0, 100, 10))
vectors = [np.arange(4) / 10 + j for j in range(10)]
manifest = write_run(vectors, steps, tmp)
print("steps on disk:", manifest.steps)

# Uniform average of the newest 4 checkpoints (steps 60..90).
lawa = merge_latest(manifest, tau=10, weights=MergeSchedule.uniform(10, 4).weights)
print("LAWA of last 4 :", lawa.params, "anchor", lawa.anchor_step)

# EMA-style weights put more mass on the newest checkpoint.
ema = merge_latest(manifest, tau=10, weights=MergeSchedule.ema(10, 4, gamma=0.5).weights)
print("EMA(0.5) of last 4:", np.round(ema.params, 4))

# Three consecutive merges, each shifted by one save interval.
for m in sliding_pma(CheckpointManifest.load(tmp + "/manifest.tsv"), tau=10, n=4, count=3):
    print(f"merge anchored at {m.anchor_step}: {m.params}")
