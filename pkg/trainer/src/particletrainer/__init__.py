"""particletrainer: thin Mask R-CNN harness over particleforge datasets."""

__version__ = "0.1.0"

from .augment import AUGMENTATIONS, AugmentationPolicy, augment_sample
from .data import Sample, decode_rle, encode_rle, load_dataset
from .infer import infer
from .model import TrainConfig, build_model
from .schedule import EarlyStopping, load_lr_range, triangular_lr
from .train import TrainResult, lr_sweep, train
