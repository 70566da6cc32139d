"""Acceptance gate: one test per criterion, each printing a PASS/FAIL
line. Tolerances are pinned here and nowhere else."""

import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

import particleforge as pf
from particleforge.cli import main
from particleforge.metrics import AP_THRESHOLDS, Instance, match_and_ap
from oracles import brute_ap, brute_feret


@contextmanager
def criterion(name):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    print(f"ACCEPTANCE {name}: PASS ({time.perf_counter() - start:.1f}s)")


def test_metric_oracle_suite():
    with criterion("metric-oracle-suite") as _:
        start = time.perf_counter()

        # IoU of 10x10 squares offset by 5 px: 50/150 exactly
        a = np.zeros((20, 30), bool)
        b = np.zeros((20, 30), bool)
        a[5:15, 5:15] = True
        b[5:15, 10:20] = True
        assert pf.iou(a, b) == 1 / 3

        # KL hand case
        p = pf.Histogram((0, 1, 2, 3), (0.5, 0.25, 0.25))
        q = pf.Histogram((0, 1, 2, 3), (0.25, 0.5, 0.25))
        assert abs(pf.kl_divergence(p, q) - 0.25 * np.log(2)) <= 1e-12

        # solidity of the L-tromino (three 40x40 cells)
        tromino = np.zeros((90, 90), bool)
        tromino[0:80, 0:40] = True
        tromino[40:80, 40:80] = True
        assert abs(pf.solidity(tromino).solidity - 6 / 7) <= 0.01

        # Feret of a 3x7 rectangle vs the all-pairs oracle
        rect = np.zeros((10, 12), bool)
        rect[3:6, 2:9] = True
        assert abs(pf.max_feret(rect) - brute_feret(rect)) <= 0.01
        assert abs(pf.max_feret(rect) - (np.hypot(2, 6) + 1)) <= 0.01

        # AP of a single detection at IoU exactly 0.60
        g = np.zeros((10, 60), bool)
        d = np.zeros((10, 60), bool)
        g[:4, 0:40] = True
        d[:4, 10:50] = True
        assert pf.iou(g, d) == 0.6
        rep = match_and_ap([Instance(1, 1, g)], [Instance(1, 1, d, score=0.9)])
        assert rep.ap50 == 1.0 and rep.ap75 == 0.0 and rep.ap == 0.3

        # greedy matcher vs exhaustive brute force on <= 4-object instances
        rng = np.random.default_rng(2024)

        def square(y, x, s):
            m = np.zeros((40, 40), bool)
            m[y:y + s, x:x + s] = True
            return m

        for _ in range(40):
            gt, det = [], []
            det_id = 0
            for img in (1, 2):
                for gid in range(int(rng.integers(0, 5))):
                    gt.append(Instance(img, gid, square(
                        int(rng.integers(0, 30)), int(rng.integers(0, 30)),
                        int(rng.integers(4, 11)))))
                for _ in range(int(rng.integers(0, 5))):
                    det.append(Instance(img, det_id, square(
                        int(rng.integers(0, 30)), int(rng.integers(0, 30)),
                        int(rng.integers(4, 11))),
                        score=float(rng.choice([0.3, 0.6, 0.6, 0.9]))))
                    det_id += 1
            mine = match_and_ap(gt, det)
            oracle = brute_ap([(x.image_id, x.mask) for x in gt],
                              [(x.image_id, x.instance_id, x.mask, x.score)
                               for x in det], AP_THRESHOLDS)
            for t in AP_THRESHOLDS:
                assert abs(mine.per_threshold[t] - oracle[t]) <= 1e-9

        assert time.perf_counter() - start < 60.0


def test_psd_recovery():
    with criterion("psd-recovery"):
        start = time.perf_counter()
        spec = pf.AgglomerateSpec((1, 1), pf.PsdSpec(30.0, 1.4))
        ferets = []
        image_index = 0
        while len(ferets) < 1000:
            scene = pf.compose_scene([(spec, 16)], (448, 448),
                                     seed=1000 + image_index, coverage=0.35)
            maps = pf.render_maps(scene)
            for rec in pf.extract_masks(maps, convexify=False):
                ferets.append(rec.max_feret)
            image_index += 1
        stats = pf.psd_stats(ferets[:1000])
        assert abs(stats.d_g - 30.0) / 30.0 <= 0.05
        assert abs(stats.sigma_g - 1.4) / 1.4 <= 0.05
        assert time.perf_counter() - start < 120.0


def test_synth_determinism(tmp_path):
    with criterion("synth-determinism"):
        cfg = {
            "image_size": [192, 192], "coverage": 0.25, "seed": 0,
            "neck_blend": 2.0,
            "agglomerates": [{"count_range": [1, 4], "d_g": 26, "sigma_g": 1.3,
                              "sintering_degree": 0.3, "mode": "chain-biased"}],
            "blur_sigma": 0.7, "noise": {"gaussian": 0.02, "poisson": 500},
        }
        cfg_path = tmp_path / "scene.json"
        cfg_path.write_text(json.dumps(cfg))

        def run(out, threads):
            rc = main(["synth", "--config", str(cfg_path), "--count", "4",
                       "--seed", "7", "--out", str(out),
                       "--threads", str(threads)])
            assert rc == 0
            payload = {}
            for f in sorted((out / "train").iterdir()):
                if f.name != "run.json":
                    payload[f.name] = f.read_bytes()
            return payload

        first = run(tmp_path / "r1", 1)
        second = run(tmp_path / "r2", 1)
        threaded = run(tmp_path / "r8", 8)
        assert first == second
        assert first == threaded
        assert any(name.endswith(".png") for name in first)


def test_rle_and_dataset_roundtrip(tmp_path, rng):
    with criterion("rle-dataset-roundtrip"):
        for _ in range(1000):
            raster = rng.random((16, 16)) > rng.uniform(0.2, 0.8)
            assert np.array_equal(pf.decode_rle(pf.encode_rle(raster)), raster)

        scene = pf.compose_scene(
            [(pf.AgglomerateSpec((2, 5), pf.PsdSpec(22, 1.25),
                                 sintering_degree=0.2), 3)],
            (256, 256), seed=13)
        image, maps = pf.render_image(scene, pf.CompositeSpec(),
                                      np.random.default_rng(13))
        records = pf.extract_masks(maps)
        annotated = pf.AnnotatedImage(image_id=1, file_name="image_00001.png",
                                      width=256, height=256, particles=records,
                                      image=image)
        pf.export_dataset([annotated], tmp_path, split="test")
        (loaded,) = pf.load_dataset(tmp_path, split="test")
        assert len(loaded.particles) == len(records)
        for a, b in zip(records, loaded.particles):
            assert a.mask.runs == b.mask.runs
            assert tuple(a.bbox) == tuple(b.bbox)
            assert a.visible_fraction == b.visible_fraction
            assert a.max_feret == b.max_feret


def test_hough_end_to_end():
    with criterion("hough-end-to-end"):
        render_spec = pf.CompositeSpec(blur_sigma=0.5, noise_gaussian=0.01,
                                       noise_poisson=0)
        spheres = []
        for i in range(3):
            for j in range(3):
                spheres.append(pf.Sphere(
                    center=np.array([70.0 + 110 * i, 70.0 + 110 * j, 0.0]),
                    radius=24.0 + 3 * ((i + j) % 3), particle_id=3 * i + j))
        scene = pf.Scene(spheres=spheres,
                         agglomerate_of={s.particle_id: s.particle_id for s in spheres},
                         image_size=(360, 360))
        img, maps = pf.render_image(scene, render_spec, np.random.default_rng(11))
        gt = [Instance(1, r.particle_id, r.mask)
              for r in pf.extract_masks(maps, convexify=False)]
        from particleforge.hough import detect_image
        det = detect_image(img, pf.HoughParams(r_min=16, r_max=40), image_id=1)
        disks = match_and_ap(gt, [Instance(1, i, r.mask, score=r.score)
                                  for i, r in enumerate(det.particles)])
        assert disks.ap50 >= 0.9

        agg = pf.AgglomerateSpec((8, 8), pf.PsdSpec(50, 1.15),
                                 sintering_degree=0.4, mode="chain-biased")
        scene_s = pf.compose_scene([(agg, 1)], (360, 360), seed=21, neck_blend=4.0)
        img_s, maps_s = pf.render_image(scene_s, render_spec,
                                        np.random.default_rng(13))
        gt_s = [Instance(1, r.particle_id, r.mask)
                for r in pf.extract_masks(maps_s, convexify=False)]
        det_s = detect_image(img_s, pf.HoughParams(r_min=16, r_max=40), image_id=1)
        sintered = match_and_ap(gt_s, [Instance(1, i, r.mask, score=r.score)
                                       for i, r in enumerate(det_s.particles)])
        assert sintered.ap50 < disks.ap50


def test_lr_fit_criteria():
    with criterion("lr-fit"):
        alphas = np.arange(0.05, 0.601, 0.05)
        losses = np.maximum(-2.0 * alphas + 1.0, 0.2)
        fit = pf.fit_lr_range(pf.LossCurve(tuple(alphas), tuple(losses)),
                              alpha_min=0.05)
        assert abs(fit.alpha_max - (fit.c - fit.b) / fit.m) <= 1e-12
        assert abs(fit.alpha_max - 0.4) <= 1e-9

        rng = np.random.default_rng(42)
        hits = 0
        for _ in range(100):
            noisy = losses + rng.normal(0, 0.01, len(losses))
            try:
                f = pf.fit_lr_range(pf.LossCurve(tuple(alphas), tuple(noisy)),
                                    alpha_min=0.05)
            except pf.NoDescentError:
                continue
            if abs(f.alpha_max - 0.4) / 0.4 <= 0.05:
                hits += 1
        assert hits >= 95

        sched = pf.CyclicSchedule(alpha_min=0.0005, alpha_max=0.0037,
                                  cycle_length=400)
        assert pf.triangular_lr(0, sched) == 0.0005
        assert pf.triangular_lr(200, sched) == 0.0037
        assert pf.triangular_lr(400, sched) == 0.0005


def test_occlusion_partition():
    with criterion("occlusion-partition"):
        rng = np.random.default_rng(555)
        for case in range(50):
            spec = pf.AgglomerateSpec(
                (2, 6),
                pf.PsdSpec(float(rng.uniform(14, 30)), float(rng.uniform(1.05, 1.4))),
                sintering_degree=float(rng.uniform(0.0, 0.6)),
                mode=("chain-biased", "compact", "uniform-random")[case % 3])
            neck = 3.0 if case % 5 == 0 else 0.0
            scene = pf.compose_scene([(spec, 2)], (160, 160),
                                     seed=9000 + case, neck_blend=neck)
            maps = pf.render_maps(scene)
            records = pf.extract_masks(maps, convexify=False,
                                       min_visible_fraction=0.0)
            coverage = np.zeros((160, 160), dtype=np.int32)
            for rec in records:
                coverage += rec.mask.to_array()
            assert coverage.max() <= 1, f"case {case}: overlapping visible masks"
            assert np.array_equal(coverage.astype(bool), maps.instance_id >= 0), \
                f"case {case}: masks do not tile the instance map"
