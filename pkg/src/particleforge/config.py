"""Scene-config loading and translation into typed specs.

The config is a single JSON document (reference schema shipped at
docs/scene-config.schema.json); flags on the CLI override its values.
"""

import importlib.resources
import json

import jsonschema

from .errors import SchemaError
from .fileio import read_json
from .render import CompositeSpec
from .scene import AgglomerateSpec, PsdSpec

_SCHEMA_CACHE: dict = {}


def scene_config_schema() -> dict:
    if "scene" not in _SCHEMA_CACHE:
        ref = importlib.resources.files("particleforge").joinpath(
            "schemas/scene-config.schema.json")
        _SCHEMA_CACHE["scene"] = json.loads(ref.read_text())
    return _SCHEMA_CACHE["scene"]


def validate_scene_config(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(scene_config_schema())
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        path = "$" + "".join(f"[{p!r}]" if isinstance(p, str) else f"[{p}]"
                             for p in error.absolute_path)
        raise SchemaError(f"{path}: {error.message}")


def load_scene_config(path) -> dict:
    doc = read_json(path)
    validate_scene_config(doc)
    return doc


def agglomerate_specs_from_config(cfg: dict) -> list[AgglomerateSpec]:
    specs = []
    for entry in cfg["agglomerates"]:
        psd = PsdSpec(d_g=entry["d_g"], sigma_g=entry["sigma_g"],
                      d_min=entry.get("d_min"), d_max=entry.get("d_max"))
        specs.append(AgglomerateSpec(
            particle_count_range=tuple(entry["count_range"]),
            psd=psd,
            sintering_degree=entry.get("sintering_degree", 0.0),
            mode=entry.get("mode", "uniform-random")))
    return specs


def composite_spec_from_config(cfg: dict) -> CompositeSpec:
    weights = cfg.get("weights", {})
    background = cfg.get("background", {})
    noise = cfg.get("noise", {})
    defaults = CompositeSpec()
    return CompositeSpec(
        w_diffuse=weights.get("diffuse", defaults.w_diffuse),
        w_shadow=weights.get("shadow", defaults.w_shadow),
        w_background=weights.get("background", defaults.w_background),
        background_base=background.get("base", defaults.background_base),
        background_amplitude=background.get("amplitude", defaults.background_amplitude),
        background_scale=background.get("scale", defaults.background_scale),
        blur_sigma=cfg.get("blur_sigma", defaults.blur_sigma),
        noise_gaussian=noise.get("gaussian", defaults.noise_gaussian),
        noise_poisson=noise.get("poisson", defaults.noise_poisson),
        brightness_jitter=tuple(cfg.get("brightness_jitter", defaults.brightness_jitter)),
        contrast_jitter=tuple(cfg.get("contrast_jitter", defaults.contrast_jitter)),
    )
