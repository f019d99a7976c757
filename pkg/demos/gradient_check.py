"""Central differences against the hand-written backward pass of the full model.

Random direction in parameter space, directional derivative compared with
the analytic gradient.  Uses a tiny width so it runs in a second.

    python demos/gradient_check.py
"""

import numpy as np

from jtanet.losses import LossWeights
from jtanet.model import ModelConfig, init_params
from jtanet.trainer import loss_and_grads

rng = np.random.default_rng(0)
params = init_params(ModelConfig(embedding_len=8, channel_scale=1 / 16), rng_seed=1)
x = rng.uniform(-1, 1, (6, 64, 64, 3))
y = np.array([0, 0, 1, 1, 2, 2])
w = LossWeights(1, 1, 1)

step = loss_and_grads(params, x, y, w, "hard")
direction = {k: rng.standard_normal(v.shape) for k, v in params.weights.items()}
analytic = sum(float((step.grads[k] * direction[k]).sum()) for k in direction)


def total_at(h):
    p = params.copy()
    for k in direction:
        p.weights[k] += h * direction[k]
    return loss_and_grads(p, x, y, w, "hard").report.total


# hard mining is deterministic, so +h and -h see the same triplets.  Large h
# pushes some pre-activations across a leaky-ReLU kink, hence the drift at 1e-5
for h in (1e-5, 1e-6, 1e-7):
    numeric = (total_at(h) - total_at(-h)) / (2 * h)
    print(f"h={h:.0e}  analytic {analytic:.8f}  numeric {numeric:.8f}  rel err {abs(analytic - numeric) / abs(analytic):.1e}")
