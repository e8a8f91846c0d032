"""The toy trainer: data, schedules, losses and the on-disk run layout."""

import tempfile
from pathlib import Path

from extramerge.csvio import read_csv
from extramerge.toy_trainer import MLP, WSD, ToyTaskConfig, train

out = Path(tempfile.mkdtemp())
cfg = ToyTaskConfig(model=MLP, in_dim=4, hidden_dim=8, steps=600, save_every=100,
                    lr_schedule=WSD, decay_start=300)
print(cfg.to_text())

run = train(cfg, out)
print("files:", sorted(p.name for p in out.iterdir() if p.suffix != ".xmg"))
_, rows = read_csv(out / "curves.csv")
for r in rows:
    print(f"step {r['step']:>4}  train {float(r['train_loss']):.4f}  val {float(r['val_loss']):.4f}")

# The same oracle can be rebuilt later from the run directory alone.
from extramerge.toy_trainer import LossOracleHandle  # noqa: E402
again = LossOracleHandle.from_run_dir(out)
print("reloaded oracle agrees:", again(run.final_params) == run.oracle(run.final_params))
