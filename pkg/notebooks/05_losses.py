"""
Training objective
==================

The denoiser is trained with MSE, a structure-sensitive feature loss and an
L1 term restricted to pixels where the LiDAR target has a return.
"""

import numpy as np

from rangediff.losses import LossWeights, combined_loss, perceptual_loss

img = -np.ones((32, 128))
img[10:22, 40:70] = 0.2  # a box in the range image
noisy = img + 0.05 * np.random.default_rng(0).standard_normal(img.shape)
shifted = np.roll(img, 6, axis=1)

for name, other in (("noisy copy", noisy), ("shifted copy", shifted)):
    total, terms = combined_loss(img, other, valid=img > -1)
    print(f"{name:13s} total {total:.4f}  " + "  ".join(f"{k} {v:.4f}" for k, v in terms.items()))

# the feature loss cares about moved structure more than pixel noise
print("perceptual: noise", round(perceptual_loss(img, noisy), 5), "vs shift", round(perceptual_loss(img, shifted), 5))

# weights are plain multipliers on the three terms
print(combined_loss(img, shifted, LossWeights(1.0, 0.0, 0.0))[0], combined_loss(img, shifted, LossWeights(2.0, 0.0, 0.0))[0])
