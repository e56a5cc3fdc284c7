"""
Train a small matcher and inspect its matches
=============================================

A few epochs on synthetic scenes are enough for the reduced model to
prefer the right cells.
"""

import tempfile
from pathlib import Path

from coarse_loftr import numerics as nx
from coarse_loftr.dataio import read_metrics, scan_dataset
from coarse_loftr.distillation import DistillConfig
from coarse_loftr.matching import extract_matches, mae
from coarse_loftr.model import CoarseMatcher
from coarse_loftr.synthetic import generate_synthetic_dataset
from coarse_loftr.trainer import PairDataset, TrainConfig, train

work = Path(tempfile.mkdtemp())
generate_synthetic_dataset(work / "data", n_scenes=4, image_size=(64, 64), seed=2)
data = PairDataset(scan_dataset(work / "data"))

model = CoarseMatcher(seed=0)
cfg = TrainConfig(epochs=6, epoch_pairs=12, micro_batch=2, accum_steps=2, lr_gamma=0.1)
train(model, None, data, cfg, DistillConfig(), work / "run")

for row in read_metrics(work / "run" / "metrics.csv")[::3]:
    print(f"epoch {row['epoch']}  step {row['step']:2d}  loss {row['loss']:.3f}  mae {row['mae']:.4f}")

sample = data[0]
with nx.no_grad():
    out = model(sample.imageA, sample.imageB)
found = extract_matches(out.P, threshold=0.2)
truth = sample.gt.as_set()
hits = sum((i, j) in truth for i, j, _ in found.matches)
print(f"{len(found)} matches above 0.2, {hits} agree with depth ground truth")
print("pair MAE:", mae(out.P, sample.gt.dense))
