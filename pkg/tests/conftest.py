import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from particleforge import CompositeSpec, Scene, Sphere, degrade


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_scene(spheres_xyzr, image_size=(128, 128), neck_blend=0.0,
               light=(-0.35, -0.45, -0.82)):
    spheres = [Sphere(center=np.array(c[:3], dtype=float), radius=float(c[3]),
                      particle_id=i)
               for i, c in enumerate(spheres_xyzr)]
    return Scene(spheres=spheres, agglomerate_of={s.particle_id: 0 for s in spheres},
                 image_size=image_size, neck_blend=neck_blend, light_direction=light)


def flat_disk_image(cx, cy, r, size=(200, 200), level=0.85, blur=0.8,
                    noise=0.01, seed=2):
    """Synthesized single-circle input: a flat disk pushed through the
    degradation pipeline."""
    width, height = size
    img = np.zeros((height, width), np.float64)
    ys, xs = np.mgrid[0:height, 0:width]
    img[(xs - cx) ** 2 + (ys - cy) ** 2 <= r ** 2] = level
    spec = CompositeSpec(blur_sigma=blur, noise_gaussian=noise, noise_poisson=0)
    return degrade(img, spec, np.random.default_rng(seed))


@pytest.fixture
def scene_factory():
    return make_scene


@pytest.fixture
def disk_factory():
    return flat_disk_image
