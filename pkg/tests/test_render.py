import numpy as np
import pytest
from concurrent.futures import ThreadPoolExecutor

from particleforge import (CompositeSpec, InvalidSpecError, Scene, composite,
                           degrade, render_maps, value_noise)
from particleforge.render import gaussian_kernel


def empty_scene(size=(64, 64)):
    return Scene(spheres=[], agglomerate_of={}, image_size=size)


class TestRenderMaps:
    def test_empty_scene(self):
        maps = render_maps(empty_scene())
        assert np.all(np.isinf(maps.depth))
        assert np.all(maps.instance_id == -1)
        assert np.all(maps.diffuse == 0)

    def test_instance_iff_depth_finite(self, scene_factory):
        maps = render_maps(scene_factory([(40, 40, 0, 20), (70, 64, 5, 18)]))
        assert np.array_equal(maps.instance_id >= 0, np.isfinite(maps.depth))

    def test_intensities_in_range(self, scene_factory):
        maps = render_maps(scene_factory([(40, 40, 0, 20), (70, 64, 5, 18)],
                                         neck_blend=3.0))
        for field in (maps.diffuse, maps.shadow):
            assert field.min() >= 0.0 and field.max() <= 1.0

    def test_head_on_sphere_diffuse_and_area(self, scene_factory):
        scene = scene_factory([(128, 128, 0, 50)], image_size=(256, 256),
                              light=(0.0, 0.0, -1.0))
        maps = render_maps(scene)
        assert maps.diffuse[128, 128] == pytest.approx(1.0, abs=1e-3)
        area = int((maps.instance_id == 0).sum())
        assert abs(area - np.pi * 50 ** 2) / (np.pi * 50 ** 2) < 0.02

    def test_hidden_sphere_wins_zero_pixels(self, scene_factory):
        scene = scene_factory([(64, 64, 0, 30), (64, 64, 50, 10)])
        maps = render_maps(scene)
        assert (maps.instance_id == 1).sum() == 0

    def test_depth_buffer_matches_bruteforce(self, rng):
        spheres = [(rng.uniform(10, 54), rng.uniform(10, 54),
                    rng.uniform(-10, 10), rng.uniform(4, 12)) for _ in range(6)]
        from conftest import make_scene
        scene = make_scene(spheres, image_size=(64, 64))
        maps = render_maps(scene)
        for y in range(64):
            for x in range(64):
                best, best_id = np.inf, -1
                for i, (cx, cy, cz, r) in enumerate(spheres):
                    rho2 = (x - cx) ** 2 + (y - cy) ** 2
                    if rho2 <= r * r:
                        z = cz - np.sqrt(r * r - rho2)
                        if z < best:
                            best, best_id = z, i
                assert maps.instance_id[y, x] == best_id

    def test_monotone_neck_growth(self, scene_factory):
        counts = []
        for k in [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 12.0]:
            scene = scene_factory([(54, 64, 0, 20), (82, 64, 0, 20)], neck_blend=k)
            counts.append(int((render_maps(scene).instance_id >= 0).sum()))
        assert all(a <= b for a, b in zip(counts, counts[1:]))
        assert counts[-1] > counts[0]  # necks actually grow

    def test_smooth_union_reduces_to_exact_at_tiny_k(self, scene_factory):
        scene0 = scene_factory([(50, 64, 0, 22), (86, 64, 4, 18)], neck_blend=0.0)
        scene1 = scene_factory([(50, 64, 0, 22), (86, 64, 4, 18)], neck_blend=1e-4)
        a = render_maps(scene0)
        b = render_maps(scene1)
        assert (a.instance_id != b.instance_id).mean() < 0.01

    def test_shadow_attenuation_levels(self, scene_factory):
        # sphere pair aligned with the light: one shadows the other
        scene = scene_factory([(40, 64, 0, 15), (80, 64, 0, 15)],
                              light=(1.0, 0.0, 0.0))
        maps = render_maps(scene)
        left = maps.shadow[64, 30]    # occluded by the right sphere
        right = maps.shadow[64, 90]   # nothing toward the light
        assert left == pytest.approx(0.6)
        assert right == pytest.approx(1.0)


class TestValueNoise:
    def test_range_and_determinism(self):
        a = value_noise(64, 48, 12.0, seed=99)
        b = value_noise(64, 48, 12.0, seed=99)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_seed_changes_field(self):
        a = value_noise(32, 32, 8.0, seed=1)
        b = value_noise(32, 32, 8.0, seed=2)
        assert not np.array_equal(a, b)


class TestComposite:
    def test_background_only_constant(self):
        maps = render_maps(empty_scene())
        spec = CompositeSpec(background_base=0.2, background_amplitude=0.0,
                             w_background=0.8)
        img = composite(maps, spec, np.random.default_rng(0))
        assert np.allclose(img, 0.2 * 0.8)

    def test_degenerate_weights_pass_diffuse(self, scene_factory):
        maps = render_maps(scene_factory([(64, 64, 0, 30)]))
        spec = CompositeSpec(w_diffuse=1.0, w_shadow=0.0, w_background=0.0,
                             background_amplitude=0.0)
        img = composite(maps, spec, np.random.default_rng(0))
        fg = maps.instance_id >= 0
        assert np.allclose(img[fg], maps.diffuse[fg])
        assert np.allclose(img[~fg], 0.0)

    def test_thread_schedule_independence(self, scene_factory):
        maps = render_maps(scene_factory([(40, 40, 0, 20), (80, 80, 0, 25)]))
        spec = CompositeSpec()

        def run(_):
            return composite(maps, spec, np.random.default_rng(77))

        single = run(None)
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(run, range(4)))
        for r in results:
            assert np.array_equal(r, single)


class TestDegrade:
    def test_identity_pipeline_quantizes_exactly(self, rng):
        img = rng.random((32, 32))
        spec = CompositeSpec(blur_sigma=0.0, noise_gaussian=0.0, noise_poisson=0.0)
        out = degrade(img, spec, np.random.default_rng(0))
        assert np.array_equal(out, np.floor(img * 255 + 0.5).astype(np.uint8))

    def test_gaussian_noise_moments(self):
        img = np.full((1000, 1000), 0.5)
        spec = CompositeSpec(blur_sigma=0.0, noise_gaussian=0.05, noise_poisson=0.0)
        out = degrade(img, spec, np.random.default_rng(8)).astype(np.float64) / 255.0
        assert abs(out.mean() - 127.5 / 255.0) < 0.005
        assert abs(out.std() - 0.05) / 0.05 < 0.05

    def test_impulse_mass_conserved(self):
        img = np.zeros((41, 41))
        img[20, 20] = 1.0
        spec = CompositeSpec(blur_sigma=2.0, noise_gaussian=0.0, noise_poisson=0.0)
        out = degrade(img, spec, np.random.default_rng(0)).astype(np.float64)
        blurred = out / 255.0
        # quantization truncates the faint skirt; 10% headroom covers it
        assert abs(blurred.sum() - 1.0) < 0.1
        peak = np.unravel_index(blurred.argmax(), blurred.shape)
        assert peak == (20, 20)

    def test_kernel_normalized(self):
        for sigma in (0.3, 0.8, 1.5, 2.0, 5.0):
            kern = gaussian_kernel(sigma)
            assert abs(kern.sum() - 1.0) < 1e-6
            assert len(kern) == 2 * int(np.ceil(3 * sigma)) + 1

    def test_out_of_range_input_rejected(self):
        with pytest.raises(InvalidSpecError):
            degrade(np.full((4, 4), 1.5), CompositeSpec(), np.random.default_rng(0))

    def test_blur_mass_conservation_float(self):
        # kernel-normalization oracle without quantization in the way
        from particleforge import gaussian_blur
        img = np.zeros((41, 41))
        img[20, 20] = 1.0
        out = gaussian_blur(img, 2.0)
        assert abs(out.sum() - 1.0) < 0.01


class TestSpecValidation:
    def test_bad_weights(self):
        with pytest.raises(InvalidSpecError):
            CompositeSpec(w_diffuse=1.5)

    def test_bad_noise(self):
        with pytest.raises(InvalidSpecError):
            CompositeSpec(noise_gaussian=-0.1)


class TestFloatMaps:
    def test_roundtrip_and_header(self, tmp_path, rng, scene_factory):
        from particleforge.fileio import read_float_map, write_float_map
        maps = render_maps(scene_factory([(40, 40, 0, 20)]))
        path = tmp_path / "depth.f32"
        write_float_map(path, maps.depth)
        payload = path.read_bytes()
        assert payload[:8] == b"PFMAPS01"
        assert int.from_bytes(payload[8:12], "little") == 128
        assert int.from_bytes(payload[12:16], "little") == 128
        back = read_float_map(path)
        assert np.array_equal(back, maps.depth.astype(np.float32))

    def test_bad_magic_rejected(self, tmp_path):
        from particleforge.fileio import read_float_map
        bad = tmp_path / "bad.f32"
        bad.write_bytes(b"NOTMAPS0" + bytes(8))
        with pytest.raises(ValueError):
            read_float_map(bad)
