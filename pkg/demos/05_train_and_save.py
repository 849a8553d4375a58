"""End-to-end: train the miniature variant briefly, checkpoint, reload.

The synthetic set is 32 images in two classes separated by their dominant
color channel. 40 steps is enough to see the loss move decisively; the full
300-step run (loss < 0.05) is `maxvit train-toy` or the acceptance suite.
"""

import sys
import tempfile

import numpy as np

from maxvit import forward, load_model, make_toy_dataset, save_model, train_toy

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 40

print(f"training the toy variant for {steps} steps (about a second per step)...")
result = train_toy(seed=0, steps=steps, log_every=10)
print(f"\nloss: {result.losses[0]:.4f} -> {result.final_loss:.4f}")
print(f"train accuracy: {result.accuracy:.4f}\n")

with tempfile.TemporaryDirectory() as tmp:
    save_model(result.model, tmp)
    reloaded = load_model(tmp)
    data = make_toy_dataset(seed=0)
    a = forward(result.model, data.images).data
    b = forward(reloaded, data.images).data
    print("checkpoint roundtrip preserves logits bitwise:", np.array_equal(a, b))
