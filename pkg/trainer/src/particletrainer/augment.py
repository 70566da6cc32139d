"""Image augmentations: up to two of five per sample.

The five candidates are left-right flip (50% coin when selected),
up-down flip (50%), rotation by 90/180/270 degrees, multiplicative
intensity in [0.8, 1.5], and Gaussian blur with sigma in [0, 0.5].
Per sample, k ~ uniform{0, 1, 2} distinct augmentations are drawn, so
each candidate's selection probability is 1/5. Geometric augmentations
are applied to image and masks consistently; intensity/blur touch only
the image.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

AUGMENTATIONS = ("flip-lr", "flip-ud", "rotate", "multiply", "blur")


@dataclass(frozen=True)
class AugmentationPolicy:
    max_augmentations: int = 2
    flip_probability: float = 0.5
    rotation_choices: tuple = (1, 2, 3)        # quarter turns
    multiply_range: tuple = (0.8, 1.5)
    blur_sigma_range: tuple = (0.0, 0.5)


def sample_augmentations(rng: np.random.Generator,
                         policy: AugmentationPolicy = AugmentationPolicy()) -> list[str]:
    k = int(rng.integers(0, policy.max_augmentations + 1))
    if k == 0:
        return []
    picks = rng.choice(len(AUGMENTATIONS), size=k, replace=False)
    return [AUGMENTATIONS[i] for i in picks]


def apply_augmentations(image: np.ndarray, masks: np.ndarray, names: list[str],
                        rng: np.random.Generator,
                        policy: AugmentationPolicy = AugmentationPolicy()):
    """Apply the named augmentations in order; returns (image, masks)."""
    image = image.copy()
    masks = masks.copy()
    for name in names:
        if name == "flip-lr":
            if rng.random() < policy.flip_probability:
                image = image[:, ::-1]
                masks = masks[:, :, ::-1]
        elif name == "flip-ud":
            if rng.random() < policy.flip_probability:
                image = image[::-1, :]
                masks = masks[:, ::-1, :]
        elif name == "rotate":
            k = int(rng.choice(policy.rotation_choices))
            image = np.rot90(image, k)
            masks = np.stack([np.rot90(m, k) for m in masks]) if len(masks) \
                else masks.reshape((0,) + image.shape)
        elif name == "multiply":
            factor = rng.uniform(*policy.multiply_range)
            image = np.clip(image * factor, 0.0, 1.0)
        elif name == "blur":
            sigma = rng.uniform(*policy.blur_sigma_range)
            if sigma > 0:
                image = ndimage.gaussian_filter(image, sigma, mode="nearest")
        else:
            raise ValueError(f"unknown augmentation {name!r}")
    return np.ascontiguousarray(image), np.ascontiguousarray(masks)


def augment_sample(image: np.ndarray, masks: np.ndarray,
                   rng: np.random.Generator,
                   policy: AugmentationPolicy = AugmentationPolicy()):
    names = sample_augmentations(rng, policy)
    return apply_augmentations(image, masks, names, rng, policy)
