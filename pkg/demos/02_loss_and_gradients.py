"""Poke at the soft Dice loss and check a gradient by finite differences.

The multi-class soft Dice loss drives both training stages. This script
shows its behavior on perfect, disjoint, and random predictions, then
verifies the analytic logits-gradient of a tiny U-Net against central
finite differences.
"""

import numpy as np

from priorseg import losses
from priorseg.unet import (UNetConfig, backward, forward, init_params,
                           softmax_channels, trainable_names)

rng = np.random.default_rng(0)

labels = rng.integers(0, 3, (5, 5, 5))
target = losses.onehot(labels, 3)

print("perfect prediction:   loss = %.2e" % losses.msdl(target, target))
shifted = losses.onehot((labels + 1) % 3, 3)
print("zero-overlap shift:   loss = %.4f" % losses.msdl(shifted, target))
probs = softmax_channels(rng.standard_normal((1, 3, 5, 5, 5)))[0]
print("random prediction:    loss = %.4f" % losses.msdl(probs, target))
print("inverse-volume weighted same: loss = %.4f"
      % losses.msdl(probs, target, losses.inverse_volume_weights(target)))

# Now check one network parameter gradient the hard way. Everything is run
# in float64 so the finite-difference quotient is trustworthy.
cfg = UNetConfig(in_channels=1, out_channels=2, levels=2, base_width=2)
params = init_params(cfg, rng, dtype=np.float64)
x = rng.standard_normal((1, 1, 4, 4, 4))
y = losses.onehot(rng.integers(0, 2, (4, 4, 4)), 2)


def loss_at_current_params():
    return losses.msdl(softmax_channels(forward(params, cfg, x, train=True))[0], y)


logits, cache = forward(params, cfg, x, train=True, want_cache=True)
g = losses.msdl_grad(softmax_channels(logits)[0], y)[None]
grads = backward(params, cfg, cache, g)

# h must stay well inside one smooth piece of the loss: ReLU and max-pool
# switching points make larger steps disagree at the 1e-4 level
name = trainable_names(params)[0]
idx = (0,) * params[name].ndim
h = 1e-6
orig = params[name][idx]
params[name][idx] = orig + h
lp = loss_at_current_params()
params[name][idx] = orig - h
lm = loss_at_current_params()
params[name][idx] = orig

fd = (lp - lm) / (2 * h)
an = grads[name][idx]
print(f"\nparameter {name}{list(idx)}:")
print("  finite difference: % .10f" % fd)
print("  analytic gradient: % .10f" % an)
print("  relative error:    %.2e" % (abs(fd - an) / max(abs(fd), 1e-12)))
