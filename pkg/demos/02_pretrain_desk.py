"""Pretrain the desk-scale model on synthetic data and watch the objective.

Every step logs one JSON object with the loss breakdown; the identity
total = alpha*L_d + beta*L_c + L_reg holds on every line.

Run:  python demos/02_pretrain_desk.py   (takes a minute or two on a laptop)
"""

import json
from pathlib import Path

from skelcompose import TrainConfig, pretrain, synth_generate
from skelcompose.augment import AugmentationConfig
from skelcompose.losses import LossConfig
from skelcompose.model import ModelConfig

dataset = synth_generate(4, 400, 2, n_joints=11, n_frames=16, noise_sd=0.02, seed=7)

cfg = TrainConfig(
    batch_size=64,
    max_epochs=10,
    drop_epoch=8,
    seed=0,
    multiview=True,
    loss=LossConfig(alpha=1.0, beta=1.0),
    # Moderate magnitudes, matched to the synthetic motion scale.
    augment=AugmentationConfig(crop_min=0.7, crop_max=1.0, rot_range=0.2,
                               shear_range=0.1, jitter_sd=0.005, frames=16),
    model=ModelConfig(),  # desk defaults: width 64, 16 frames, 11 joints
)

result = pretrain(dataset, cfg, Path("runs/demo"))
print(f"checkpoint: {result.checkpoint_path}")
print(f"first-epoch mean loss {result.first_epoch_mean:.2f} -> "
      f"final-epoch {result.final_epoch_mean:.2f}")

lines = [json.loads(l) for l in result.metrics_path.read_text().splitlines()]
steps = [l for l in lines if "step" in l]
print(f"{len(steps)} optimizer steps logged; sample breakdown:")
for l in steps[:: max(1, len(steps) // 5)]:
    identity = cfg.loss.alpha * (l["L_d_t"] + l["L_d_s"]) + cfg.loss.beta * l["L_c"] + l["L_reg"]
    print(f"  step {l['step']:3d}: total={l['total']:8.2f} "
          f"L_d_t={l['L_d_t']:7.2f} L_d_s={l['L_d_s']:7.2f} "
          f"L_c={l['L_c']:6.2f} L_reg={l['L_reg']:6.2f} "
          f"identity gap={abs(l['total'] - identity):.1e}")
