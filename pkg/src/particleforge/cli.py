"""Command-line front end: synthesize -> export -> detect -> evaluate.

Subcommands: synth, detect-hough, evaluate, psd, kl, lr-fit, rle.
All randomness flows from --seed; reruns with equal seeds produce
byte-identical artifacts (timing blocks excluded). PF_LOG sets the log
level. Errors are emitted as JSON on stderr; exit code 2 marks an
unwritable output location.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (agglomerate_specs_from_config, composite_spec_from_config,
                     load_scene_config)
from .errors import InvalidInputError, ParticleForgeError
from .fileio import read_json, read_png, write_json_atomic, write_png
from .groundtruth import (AnnotatedImage, Mask, decode_rle, export_dataset,
                          extract_masks, load_annotations, save_annotations,
                          validate_doc)
from .hough import HoughParams, detect_image
from .lrtools import LossCurve, fit_lr_range, save_lr_range
from .metrics import (Histogram, component_solidities, evaluate_sample,
                      kl_divergence, max_feret, psd_stats)
from .render import render_image
from .scene import scene_from_config

logger = logging.getLogger("particleforge")


def _image_rng(seed: int, split: str, index: int) -> np.random.Generator:
    key = (zlib.crc32(split.encode("utf-8")), index)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _write_run_record(out_dir: Path, args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    for k, v in resolved.items():
        if isinstance(v, Path):
            resolved[k] = str(v)
    write_json_atomic(out_dir / "run.json",
                      {"tool": "particleforge", "version": __version__,
                       "command": args.command, "config": resolved})


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_scene_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    cspec = composite_spec_from_config(cfg)
    agglomerate_specs_from_config(cfg)  # fail fast on bad recipes
    convexify = bool(cfg.get("convexify", True))
    min_fraction = float(cfg.get("min_visible_fraction", 0.01))

    out_dir = Path(args.out)
    split_dir = out_dir / args.split
    split_dir.mkdir(parents=True, exist_ok=True)

    def build(index: int):
        rng = _image_rng(seed, args.split, index)
        scene = scene_from_config(cfg, seed=seed, rng=rng)
        image, maps = render_image(scene, cspec, rng)
        if args.dump_maps:
            from .fileio import write_float_map
            stem = split_dir / "maps" / f"image_{index + 1:05d}"
            write_float_map(f"{stem}_depth.f32", maps.depth)
            write_float_map(f"{stem}_instance.f32", maps.instance_id)
            write_float_map(f"{stem}_diffuse.f32", maps.diffuse)
            write_float_map(f"{stem}_shadow.f32", maps.shadow)
        records = extract_masks(maps, convexify=convexify,
                                min_visible_fraction=min_fraction)
        annotated = AnnotatedImage(
            image_id=index + 1, file_name=f"image_{index + 1:05d}.png",
            width=scene.image_size[0], height=scene.image_size[1],
            particles=records, image=image)
        geometry = {
            "image_id": index + 1,
            "placement_failures": scene.placement_failures,
            "particles": [{
                "particle_id": s.particle_id,
                "diameter": 2.0 * s.radius,
                "center": [float(c) for c in s.center],
                "agglomerate_id": scene.agglomerate_of[s.particle_id],
            } for s in scene.spheres],
        }
        return annotated, geometry

    indices = range(args.count)
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(build, indices))
    else:
        results = [build(i) for i in indices]

    images = [r[0] for r in results]
    geometries = [r[1] for r in results]
    export_dataset(images, out_dir, split=args.split, name=cfg.get("name", "synthetic"),
                   seed=seed)
    write_json_atomic(split_dir / "geometry.json", {"images": geometries})
    _write_run_record(split_dir, args)

    n_particles = sum(len(im.particles) for im in images)
    dropped = sum(g["placement_failures"] for g in geometries)
    print(f"split {args.split}: {len(images)} images, {n_particles} particles"
          + (f", {dropped} dropped agglomerates" if dropped else ""))
    return 0


# ---------------------------------------------------------------------------
# detect-hough
# ---------------------------------------------------------------------------

def _collect_images(path: Path) -> list[tuple[int, str, np.ndarray]]:
    """Image set from a directory of PNGs or an annotations.json."""
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        return [(i + 1, f.name, read_png(f)) for i, f in enumerate(files)]
    doc = read_json(path)
    validate_doc(doc)
    base = path.parent
    return [(im["id"], im["file_name"], read_png(base / im["file_name"]))
            for im in doc["images"]]


def cmd_detect_hough(args) -> int:
    params_kw = {}
    if args.params:
        params_kw.update(read_json(args.params))
    for name in ("r_min", "r_max", "accumulator_threshold", "edge_threshold"):
        value = getattr(args, name)
        if value is not None:
            params_kw[name] = value
    params = HoughParams(**params_kw)

    images = _collect_images(Path(args.images))

    def run_once() -> list[AnnotatedImage]:
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                return list(pool.map(
                    lambda item: detect_image(item[2], params, item[0], item[1]), images))
        return [detect_image(img, params, image_id, name)
                for image_id, name, img in images]

    elapsed = []
    detections = []
    for _ in range(max(args.repeat, 1)):
        t0 = time.perf_counter()
        detections = run_once()
        elapsed.append(time.perf_counter() - t0)

    # detection ids must be unique across the file for stable score ties
    next_id = 0
    for det in detections:
        for rec in det.particles:
            rec.particle_id = next_id
            next_id += 1

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = save_annotations(detections, out, detections=True)
    n_particles = len(doc["annotations"])
    mean_s = float(np.mean(elapsed))
    doc["timing"] = {
        "repetitions": len(elapsed),
        "images": len(images),
        "particles": n_particles,
        "seconds_mean": mean_s,
        "seconds_std": float(np.std(elapsed)),
        "images_per_s": len(images) / mean_s if mean_s > 0 else None,
        "particles_per_s": n_particles / mean_s if mean_s > 0 else None,
    }
    write_json_atomic(out, doc)
    _write_run_record(out.parent, args)
    print(f"{len(images)} images -> {n_particles} detections "
          f"({doc['timing']['images_per_s']:.2f} images/s)")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    if len(args.gt) != len(args.det):
        raise InvalidInputError("--gt and --det must be given in matching pairs")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for gt_path, det_path in zip(args.gt, args.det):
        gt_images = load_annotations(gt_path)
        det_images = load_annotations(det_path, detections=True)
        row = {"sample_id": Path(gt_path).parent.name or Path(gt_path).stem}
        solidities = []
        for img in gt_images:
            masks = [rec.mask for rec in img.particles]
            if masks:
                solidities.extend(component_solidities(masks, img.width, img.height))
        row["mean_solidity"] = float(np.mean(solidities)) if solidities else None
        row.update(evaluate_sample(gt_images, det_images))
        det_doc = read_json(det_path)
        if "timing" in det_doc:
            row["timing"] = det_doc["timing"]
        rows.append(row)

    def column(name):
        return [r[name] for r in rows if r.get(name) is not None]

    report = {"samples": rows, "n_samples": len(rows)}
    for key, out_key in (("err_d_g", "mape_d_g"), ("err_sigma_g", "mape_sigma_g"),
                         ("err_n", "mape_n")):
        vals = column(key)
        report[out_key] = float(np.mean(np.abs(vals))) if vals else None
    report["mean_ap"] = float(np.mean(column("ap"))) if column("ap") else None

    if args.format in ("json", "both"):
        write_json_atomic(out_dir / "report.json", report)
    if args.format in ("csv", "both"):
        fields = ["sample_id", "mean_solidity", "d_g", "sigma_g", "n",
                  "err_d_g", "err_sigma_g", "err_n", "ap", "ap50", "ap75"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow(r)
        (out_dir / "report.csv").write_text(buf.getvalue())
    _write_run_record(out_dir, args)

    for r in rows:
        print(f"{r['sample_id']}: ap={r['ap']:.3f} ap50={r['ap50']:.3f} "
              f"ap75={r['ap75']:.3f} err_d_g={_fmt(r['err_d_g'])} "
              f"err_sigma_g={_fmt(r['err_sigma_g'])} err_N={_fmt(r['err_n'])}")
    print(f"MAPE: d_g={_fmt(report['mape_d_g'])} sigma_g={_fmt(report['mape_sigma_g'])} "
          f"N={_fmt(report['mape_n'])}")
    return 0


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:+.2f}%" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# psd / kl / lr-fit / rle
# ---------------------------------------------------------------------------

def cmd_psd(args) -> int:
    images = load_annotations(args.annotations)
    ferets = [rec.max_feret for img in images for rec in img.particles]
    if not ferets:
        raise InvalidInputError("no annotations found")
    stats = psd_stats(ferets)
    lo = args.range[0] if args.range else min(ferets)
    hi = args.range[1] if args.range else max(ferets) * (1 + 1e-9)
    edges = np.linspace(lo, hi, args.bins + 1)
    hist = Histogram.from_samples(ferets, edges)

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json_atomic(out / "psd.json", {
            "d_g": stats.d_g, "sigma_g": stats.sigma_g, "n_particles": stats.n_particles,
            "bin_edges": list(hist.bin_edges), "probabilities": list(hist.probabilities),
        })
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["bin_lo", "bin_hi", "probability"])
        for i, p in enumerate(hist.probabilities):
            writer.writerow([hist.bin_edges[i], hist.bin_edges[i + 1], p])
        (out / "psd.csv").write_text(buf.getvalue())
        _write_run_record(out, args)
    print(f"d_g={stats.d_g:.3f} px, sigma_g={stats.sigma_g:.4f}, N={stats.n_particles}")
    return 0


def _load_histogram(path) -> Histogram:
    doc = read_json(path)
    return Histogram(bin_edges=tuple(doc["bin_edges"]),
                     probabilities=tuple(doc["probabilities"]))


def cmd_kl(args) -> int:
    value = kl_divergence(_load_histogram(args.p), _load_histogram(args.q))
    if args.out:
        write_json_atomic(args.out, {"kl_divergence": value})
    print(f"{value:.6f}")
    return 0


def cmd_lr_fit(args) -> int:
    curve = LossCurve.from_csv(args.curve)
    fit = fit_lr_range(curve, alpha_min=args.alpha_min)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_lr_range(fit, out)
    print(f"m={fit.m:.6g} b={fit.b:.6g} c={fit.c:.6g} "
          f"alpha_min={fit.alpha_min:.6g} alpha_max={fit.alpha_max:.6g} "
          f"rms={fit.rms_residual:.3g}")
    return 0


def cmd_rle(args) -> int:
    if args.action == "encode":
        image = read_png(args.input)
        mask = Mask.from_array(image > args.threshold)
        write_json_atomic(args.out, {"width": mask.width, "height": mask.height,
                                     "rle": mask.runs})
    else:
        doc = read_json(args.input)
        raster = decode_rle(Mask(width=doc["width"], height=doc["height"],
                                 runs=list(doc["rle"])))
        write_png(args.out, raster.astype(np.uint8) * 255)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="particleforge",
        description="Synthetic particle image generation and detector evaluation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset split")
    p.add_argument("--config", required=True, help="scene config JSON")
    p.add_argument("--count", type=int, required=True, help="number of images")
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dump-maps", dest="dump_maps", action="store_true",
                   help="also write depth/instance/diffuse/shadow float maps")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect-hough", help="run the circular Hough baseline")
    p.add_argument("--images", required=True,
                   help="directory of PNGs or an annotations.json")
    p.add_argument("--out", required=True, help="detections.json path")
    p.add_argument("--params", default=None, help="HoughParams JSON file")
    p.add_argument("--r-min", dest="r_min", type=int, default=None)
    p.add_argument("--r-max", dest="r_max", type=int, default=None)
    p.add_argument("--accumulator-threshold", dest="accumulator_threshold",
                   type=float, default=None)
    p.add_argument("--edge-threshold", dest="edge_threshold", type=float, default=None)
    p.add_argument("--repeat", type=int, default=1, help="timing repetitions")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_detect_hough)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("--gt", action="append", required=True, help="annotations.json")
    p.add_argument("--det", action="append", required=True, help="detections.json")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--format", choices=["json", "csv", "both"], default="both")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("psd", help="PSD statistics from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--range", type=float, nargs=2, default=None)
    p.add_argument("--out", default=None, help="directory for psd.json / psd.csv")
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("kl", help="KL divergence between two histograms")
    p.add_argument("--p", required=True, help="histogram JSON (training set)")
    p.add_argument("--q", required=True, help="histogram JSON (test set)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_kl)

    p = sub.add_parser("lr-fit", help="fit the LR range test curve")
    p.add_argument("--curve", required=True, help="2-column (alpha, loss) CSV")
    p.add_argument("--alpha-min", dest="alpha_min", type=float, default=None)
    p.add_argument("--out", required=True, help="lr_range.json path")
    p.set_defaults(func=cmd_lr_fit)

    p = sub.add_parser("rle", help="debug mask encode/decode")
    p.add_argument("action", choices=["encode", "decode"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=int, default=127)
    p.set_defaults(func=cmd_rle)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PF_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PermissionError,) as exc:
        _emit_error(exc)
        return 2
    except OSError as exc:
        _emit_error(exc)
        return 2
    except ParticleForgeError as exc:
        _emit_error(exc)
        return 1
    except Exception as exc:  # keep stderr machine-readable
        logger.debug("unhandled error", exc_info=True)
        _emit_error(exc)
        return 1


def _emit_error(exc: BaseException) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
