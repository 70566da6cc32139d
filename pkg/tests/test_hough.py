import numpy as np
import pytest

from particleforge import (CompositeSpec, HoughParams, InvalidParamsError,
                           gradient_map, hough_detect)
from particleforge.hough import detect_image
from particleforge.metrics import Instance, match_and_ap
from particleforge.render import render_image
from particleforge import extract_masks, render_maps

RENDER_SPEC = CompositeSpec(blur_sigma=0.5, noise_gaussian=0.01, noise_poisson=0)


class TestGradientMap:
    def test_constant_image_zero(self):
        mag, _ = gradient_map(np.full((32, 32), 120, np.uint8))
        assert np.all(mag == 0.0)

    def test_vertical_step_edge(self):
        img = np.zeros((32, 32), np.uint8)
        img[:, 16:] = 200
        mag, direction = gradient_map(img)
        peak_row, peak_col = np.unravel_index(mag.argmax(), mag.shape)
        assert peak_col in (15, 16)
        # gradient points along +x (increasing intensity), away from borders
        interior = direction[8:24, 15]
        assert np.allclose(np.cos(interior), 1.0, atol=1e-6)

    def test_disk_rim_ring(self, disk_factory):
        img = disk_factory(100, 90, 30)
        mag, _ = gradient_map(img)
        ring_y, ring_x = np.nonzero(mag > 0.5)
        radius = np.hypot(ring_x - 100.0, ring_y - 90.0)
        assert abs(radius.mean() - 30.0) < 1.0

    def test_magnitude_in_range(self, disk_factory):
        mag, _ = gradient_map(disk_factory(60, 60, 20, size=(120, 120)))
        assert mag.min() >= 0.0 and mag.max() <= 1.0


class TestHoughDetect:
    def test_blank_image(self):
        circles = hough_detect(np.zeros((64, 64), np.uint8),
                               HoughParams(r_min=5, r_max=20))
        assert circles == []

    def test_single_disk(self, disk_factory):
        img = disk_factory(100, 90, 30)
        circles = hough_detect(img, HoughParams(r_min=20, r_max=40))
        assert len(circles) == 1
        (c,) = circles
        assert abs(c.x - 100) <= 2 and abs(c.y - 90) <= 2
        assert abs(c.radius - 30) <= 2

    def test_r_max_exceeding_diagonal_rejected(self):
        with pytest.raises(InvalidParamsError):
            hough_detect(np.zeros((64, 64), np.uint8),
                         HoughParams(r_min=5, r_max=50))

    def test_param_validation(self):
        with pytest.raises(InvalidParamsError):
            HoughParams(r_min=10, r_max=10)
        with pytest.raises(InvalidParamsError):
            HoughParams(accumulator_threshold=0.0)

    def test_determinism(self, disk_factory):
        img = disk_factory(64, 64, 22, size=(128, 128))
        params = HoughParams(r_min=15, r_max=30)
        a = hough_detect(img, params)
        b = hough_detect(img, params)
        assert a == b

    def test_score_ordering_and_nms(self, disk_factory):
        img = np.zeros((200, 360), np.float64)
        ys, xs = np.mgrid[0:200, 0:360]
        for cx, cy, r in [(70, 100, 30), (180, 100, 25), (290, 100, 28)]:
            img[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = 0.85
        from particleforge import degrade
        img8 = degrade(img, RENDER_SPEC, np.random.default_rng(4))
        circles = hough_detect(img8, HoughParams(r_min=18, r_max=36))
        scores = [c.score for c in circles]
        assert scores == sorted(scores, reverse=True)
        for i in range(len(circles)):
            for j in range(i + 1, len(circles)):
                a, b = circles[i], circles[j]
                assert np.hypot(a.x - b.x, a.y - b.y) >= 0.8 * min(a.radius, b.radius)

    def test_translation_equivariance(self, disk_factory):
        base = np.zeros((160, 160), np.float64)
        ys, xs = np.mgrid[0:160, 0:160]
        base[(xs - 60) ** 2 + (ys - 70) ** 2 <= 20 ** 2] = 0.85
        shifted = np.roll(base, (12, 17), axis=(0, 1))  # dy=12, dx=17
        from particleforge import degrade
        params = HoughParams(r_min=12, r_max=28)
        rng_img = lambda arr: degrade(arr, CompositeSpec(blur_sigma=0.5,
                                                         noise_gaussian=0.0,
                                                         noise_poisson=0.0),
                                      np.random.default_rng(0))
        (c0,) = hough_detect(rng_img(base), params)
        (c1,) = hough_detect(rng_img(shifted), params)
        assert abs((c1.x - c0.x) - 17) <= 1
        assert abs((c1.y - c0.y) - 12) <= 1


class TestEndToEnd:
    def _nine_disk_scene(self):
        from conftest import make_scene
        spheres = []
        for i in range(3):
            for j in range(3):
                spheres.append((70 + 110 * i, 70 + 110 * j, 0.0,
                                24 + 3 * ((i + j) % 3)))
        return make_scene(spheres, image_size=(360, 360))

    def test_nine_disks_ap50(self):
        scene = self._nine_disk_scene()
        img, maps = render_image(scene, RENDER_SPEC, np.random.default_rng(11))
        gt_recs = extract_masks(maps, convexify=False)
        det = detect_image(img, HoughParams(r_min=16, r_max=40), image_id=1)
        assert len(det.particles) == 9
        gt = [Instance(1, r.particle_id, r.mask) for r in gt_recs]
        dets = [Instance(1, i, r.mask, score=r.score)
                for i, r in enumerate(det.particles)]
        rep = match_and_ap(gt, dets)
        assert rep.ap50 >= 0.9

    def test_sintered_agglomerate_worse_than_disks(self):
        from particleforge import AgglomerateSpec, PsdSpec, compose_scene
        scene = self._nine_disk_scene()
        img, maps = render_image(scene, RENDER_SPEC, np.random.default_rng(11))
        gt = [Instance(1, r.particle_id, r.mask)
              for r in extract_masks(maps, convexify=False)]
        det = detect_image(img, HoughParams(r_min=16, r_max=40), image_id=1)
        disks_ap50 = match_and_ap(gt, [Instance(1, i, r.mask, score=r.score)
                                       for i, r in enumerate(det.particles)]).ap50

        spec = AgglomerateSpec((8, 8), PsdSpec(50, 1.15),
                               sintering_degree=0.4, mode="chain-biased")
        scene_s = compose_scene([(spec, 1)], (360, 360), seed=21, neck_blend=4.0)
        img_s, maps_s = render_image(scene_s, RENDER_SPEC, np.random.default_rng(13))
        gt_s = [Instance(1, r.particle_id, r.mask)
                for r in extract_masks(maps_s, convexify=False)]
        det_s = detect_image(img_s, HoughParams(r_min=16, r_max=40), image_id=1)
        sintered_ap50 = match_and_ap(
            gt_s, [Instance(1, i, r.mask, score=r.score)
                   for i, r in enumerate(det_s.particles)]).ap50
        assert sintered_ap50 < disks_ap50
