"""
Training the restorer on a toy denoise task
===========================================

A desk-scale run of the training loop: a few smooth textures, additive
noise only, a narrow model.  Two hundred iterations are enough to watch the
L1 loss fall well below the noise floor it starts at.

The networks initialize with zeroed residual branches, so the fresh
restorer is exactly the identity and the first losses measure the raw task
difficulty; everything it learns shows up as the ratio below 1.
"""

import os
import tempfile

import numpy as np
from scipy.ndimage import gaussian_filter

from d3net import D2NetConfig, DegradationParams, Image, TrainConfig
from d3net import generate_dataset, save_image, train

work = tempfile.mkdtemp()
clean_dir = os.path.join(work, "clean")
os.makedirs(clean_dir)

rng = np.random.default_rng(10)
for i in range(4):
    img = gaussian_filter(rng.uniform(0, 1, (64, 64)), 3.0)
    img = (img - img.min()) / (img.max() - img.min())
    save_image(Image(img.astype(np.float32)), os.path.join(clean_dir, f"c{i}.png"))

# pure additive noise: the cleanest possible statement of "denoise"
params = DegradationParams(tilt_sigma=0.0, tilt_corr=8.0, blur_sigma=0.0,
                           noise_sigma=0.1, frames=1, seed=11)
manifest = generate_dataset(clean_dir, os.path.join(work, "ds"), params,
                            variations=4)

cfg = TrainConfig(patch_size=16, batch_size=32, max_iterations=200, seed=7)
model_cfg = D2NetConfig(width_multiplier=0.125)  # 8/16/32/64 channels
store, log = train("d2net", manifest, cfg, base_dir=os.path.join(work, "ds"),
                   model_cfg=model_cfg)

print(f"parameters: {store.param_count()}")
print("iter    lr        loss")
for e in log[::4] + [log[-1]]:
    print(f"{e['iter']:4d}  {e['lr']:.6f}  {e['loss']:.4f}")

first = np.mean([e["loss"] for e in log if e["iter"] < 20])
last = np.mean([e["loss"] for e in log if e["iter"] >= 180])
print(f"first-20 mean {first:.4f}, final-20 mean {last:.4f},"
      f" ratio {last / first:.2f}")
