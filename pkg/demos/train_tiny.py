"""
Training the tiny model at desk scale
=====================================

Trains the 8-block, 32-channel model for x2 super-resolution on a folder of
PNGs, then compares it with bicubic upsampling on held-out images.

    python demos/train_tiny.py TRAIN_DIR HELDOUT_DIR [STEPS]

Each step draws 8 random 128x128 crops (flipped and rotated at random),
reduces them to 64x64 with antialiased bicubic filtering and takes one Adam
step on the L1 loss.  A step takes about 2 s on one CPU core.
"""

import sys
import time

from tcsr.model import init_model, reference_config
from tcsr.train import TrainConfig, evaluate, train

train_dir, heldout_dir = sys.argv[1], sys.argv[2]
steps = int(sys.argv[3]) if len(sys.argv) > 3 else 2000

model = init_model(reference_config("tiny", scale=2), seed=0)
config = TrainConfig(patch=64, batch=8, steps=steps, seed=0, checkpoint_interval=250)

start = time.time()


def progress(step, loss):
    if step % 50 == 0 or step == 1:
        print(f"step {step:5d}  loss {loss:.5f}  {time.time() - start:7.0f} s", flush=True)


result = train(model, config, train_dir, out="tiny_x2.ckpt", curve="tiny_x2.csv",
               callback=progress)

# the checkpoint holds the config, so `tcsr infer --ckpt tiny_x2.ckpt ...` works directly
ours = evaluate(model, heldout_dir, 2)
bicubic = evaluate(None, heldout_dir, 2, method="bicubic")
print(ours.to_text())
print(f"bicubic mean {bicubic.mean_psnr:.3f} dB, gain {ours.mean_psnr - bicubic.mean_psnr:+.3f} dB")
