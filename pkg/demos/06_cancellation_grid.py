"""
Sweeping the cancellation design space
======================================

Trains the same model under nine cancellation settings: strength eta
from 0 to 1 (A1-A5), looser and tighter projector damping (B1, B2),
cancellation applied after the gating blend instead of before (C1), and
a rank-4 anchor family instead of the single self-direction (C2).
The point of the exercise is direction, not headline numbers: the sweep
runs on a small bundle with a short budget, and accuracy differences of
a point or two are within seed noise.
"""

from gesc.graphs import SyntheticSpec, generate_synthetic
from gesc.model import ModelConfig, TrainConfig
from gesc.verify import sic_ablation_grid

data = generate_synthetic(SyntheticSpec(
    num_nodes=300, num_classes=2, feature_dim=8,
    target_homophily=0.3, mean_degree=5.0,
    feature_signal_strength=0.5, rng_seed=2,
))
cfg = ModelConfig(in_dim=data.feature_dim, num_classes=data.num_classes,
                  dim=8, heads=2, num_layers=2, lambda_js=0.0, dropout=0.3)
tcfg = TrainConfig(lr=1e-2, patience=20, max_epochs=40, seed=0)

rows = sic_ablation_grid(data, cfg, tcfg, seeds=(0, 1))
print("setting  eta   epsilon  position  rank  val    test")
for row in rows:
    print(f"{row['name']:<7}  {row['eta_sic']:<4}  {row['epsilon']:<7}"
          f"  {row['sic_position']:<8}  {row['sic_rank']:<4}"
          f"  {row['val_acc']:.3f}  {row['test_acc']:.3f}")
