"""Train a small model on a two-state Markov source and watch it sample.

The source flips symbol with probability 0.1, so its entropy rate is about
0.469 bits per character. A tabular predictor that looks at the nearest
unmasked neighbours can reach that floor.

    python3 demos/markov_training.py
"""

import math

from mdc.corpus import split, two_state_source
from mdc.rng import stream
from mdc.sampler import SamplerConfig, render, trajectory
from mdc.trainer import (TrainConfig, evaluate_nats, kernel_from_checkpoint, predictor_from_checkpoint,
                         train)

src = two_state_source(0.1)
L = 64
data = src.generate_ids(600 * L, 0).reshape(-1, L)
train_c, valid_c = split(data, 0.1)

cfg = TrainConfig(predictor="tabular", context="neighbor", max_dist=16, batch_size=64, steps=1500, lr=0.05,
                  ema_decay=0.99, seed=0)
ck = train(cfg, train_c, vocab=src.vocab().to_dict()).checkpoint
nats, se = evaluate_nats(ck, valid_c, draws_per_chunk=4, seed=0)
print(f"validation: {nats / math.log(2):.4f} +- {se / math.log(2):.4f} BPC, "
      f"source entropy {src.entropy_bits():.4f} BPC")

pred, k = predictor_from_checkpoint(ck), kernel_from_checkpoint(ck)
snaps = trajectory(pred, 2, L, SamplerConfig(100, k.schedule), stream(0, "demo-sample"), num=1,
                   stride=20)
for i, x in enumerate(snaps):
    print(f"step {20 * i:3d}: {render(x, src.vocab().decode, 2)[0]}")
