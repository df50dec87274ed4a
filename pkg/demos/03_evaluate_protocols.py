"""Run the downstream protocols against a pretrained checkpoint.

Expects runs/demo/checkpoint.dcc from demos/02_pretrain_desk.py; trains one
on the spot otherwise. Linear probe and KNN use frozen unified features;
semi-supervised fine-tunes everything on a labeled fraction.

Run:  python demos/03_evaluate_protocols.py
"""

from pathlib import Path

from skelcompose import (
    TrainConfig,
    extract_bank,
    knn_retrieve,
    linear_probe,
    load_checkpoint,
    pretrain,
    semi_supervised,
    synth_generate,
)
from skelcompose.augment import AugmentationConfig
from skelcompose.model import ModelConfig

dataset = synth_generate(4, 600, 2, n_joints=11, n_frames=16, noise_sd=0.02, seed=7)
train, test = dataset.split_by_performance(400)

ckpt = Path("runs/demo/checkpoint.dcc")
if ckpt.exists():
    model = load_checkpoint(ckpt).model
else:
    print("no checkpoint found, pretraining a small one first...")
    aug = AugmentationConfig(crop_min=0.7, crop_max=1.0, rot_range=0.2,
                             shear_range=0.1, jitter_sd=0.005, frames=16)
    cfg = TrainConfig(batch_size=64, max_epochs=10, drop_epoch=8,
                      augment=aug, model=ModelConfig())
    model = pretrain(train, cfg, Path("runs/demo")).model

# Frozen-feature protocols over every modality subset, as in the
# modality-selection ablation.
for subset in (("joint",), ("motion",), ("bone",), ("joint", "bone"),
               ("joint", "bone", "motion")):
    tb = extract_bank(model, train, subset, split="train")
    eb = extract_bank(model, test, subset, split="test")
    lin = linear_probe(tb, eb)
    knn = knn_retrieve(tb, eb, k=1)
    print(f"{'+'.join(subset):24s} linear={lin:.3f}  1-NN={knn:.3f}")

# Semi-supervised: fine-tune everything on 10% of the labels. Tiny labeled
# sets mean few optimizer steps per epoch, so the budget is generous.
acc = semi_supervised(model, train, test, fraction=0.10, epochs=40, lr=3e-3, seed=0)
print(f"semi-supervised (10% labels): {acc:.3f}")
