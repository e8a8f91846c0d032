"""Extra-Merge on a toy regression run.

Trains a linear model with constant-LR SGD, then merges the tail of the run,
finds the dominant direction of the merged trajectory and walks along it
until the validation loss stops improving.
"""

import tempfile

from extramerge import LineSearchConfig, run_extra_merge
from extramerge.toy_trainer import ToyTaskConfig, train

cfg = ToyTaskConfig(seed=3)
run = train(cfg, tempfile.mkdtemp())
print(f"trained {cfg.steps} steps, {len(run.manifest.steps)} checkpoints")
print(f"final raw val loss: {run.oracle(run.final_params):.6f}")

result, sub = run_extra_merge(run.manifest, tau=cfg.save_every, n=8, K=4,
                              config=LineSearchConfig(alpha=0.1), loss_eval=run.oracle)
print(f"R1 of merged trajectory: {sub.r1:.3f}")
print(f"anchor (merged) loss   : {result.anchor_loss:.6f}")
print(f"extrapolated loss      : {result.best_loss:.6f} after {result.best_k} steps"
      f" ({result.terminated_by})")
