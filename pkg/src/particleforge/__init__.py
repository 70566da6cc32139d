"""particleforge: synthetic SEM-style particle images with pixel-perfect
occlusion ground truth, plus the full detector evaluation stack."""

__version__ = "0.1.0"

from .errors import (CorruptMaskError, EmptyMaskError, InvalidInputError,
                     InvalidParamsError, InvalidSpecError, NoDescentError,
                     ParticleForgeError, SchemaError)
from .scene import (AgglomerateSpec, PsdSpec, Scene, Sphere, build_agglomerate,
                    compose_scene, sample_diameters, scene_from_config)
from .render import (CompositeSpec, RenderMaps, composite, degrade,
                     gaussian_blur, render_image, render_maps, value_noise)
from .groundtruth import (AnnotatedImage, DatasetManifest, Mask, ParticleRecord,
                          decode_rle, encode_rle, export_dataset, extract_masks,
                          load_annotations, load_dataset, save_annotations)
from .metrics import (ApReport, Histogram, Instance, MaskMetrics, PsdStats,
                      iou, kl_divergence, mape, match_and_ap, max_feret,
                      percentage_error, psd_stats, solidity)
from .hough import Circle, HoughParams, gradient_map, hough_detect
from .lrtools import (CyclicSchedule, EarlyStopState, LossCurve, LrRangeFit,
                      early_stop_check, fit_lr_range, triangular_lr)
