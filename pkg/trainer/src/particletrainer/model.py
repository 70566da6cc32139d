"""Off-the-shelf Mask R-CNN construction and the training configuration.

The architecture comes straight from torchvision (backbone choice and
anchor sizing are configuration, not reimplementation). Initial weights
are either random or transferred from everyday-object trainings
(ImageNet backbone / COCO detector); the transfer path needs the weight
files to be downloadable or already cached.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch.nn as nn
from torchvision.models.detection import MaskRCNN
from torchvision.models.detection.anchor_utils import AnchorGenerator
from torchvision.models.detection.backbone_utils import resnet_fpn_backbone

BACKBONES = ("resnet18", "resnet34", "resnet50")
INITS = ("random", "pretrained-everyday-objects")


@dataclass
class TrainConfig:
    train_annotations: str
    val_annotations: str
    out_dir: str
    lr_range: str = ""                  # lr_range.json path; "" -> defaults
    backbone: str = "resnet18"
    init_weights: str = "random"
    image_size: int = 224
    batch_size: int = 2
    iterations_per_epoch: int = 50
    max_epochs: int = 16
    patience: int = 4
    cycle_length: int = 100             # iterations per LR cycle
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_grad_norm: float = 10.0
    augment: bool = True
    anchor_sizes: tuple = (16, 24, 32, 48, 64)
    score_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if self.init_weights not in INITS:
            raise ValueError(f"init_weights must be one of {INITS}")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1")
        if self.cycle_length < 2 or self.cycle_length % 2:
            raise ValueError("cycle_length must be even and >= 2")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        doc = json.loads(Path(path).read_text())
        if "anchor_sizes" in doc:
            doc["anchor_sizes"] = tuple(doc["anchor_sizes"])
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor_sizes"] = list(self.anchor_sizes)
        return d


def build_model(config: TrainConfig) -> MaskRCNN:
    pretrained = config.init_weights == "pretrained-everyday-objects"
    try:
        backbone = resnet_fpn_backbone(
            backbone_name=config.backbone,
            weights="IMAGENET1K_V1" if pretrained else None,
            norm_layer=nn.BatchNorm2d,
            trainable_layers=3 if pretrained else 5)
    except Exception as exc:
        if pretrained:
            raise RuntimeError(
                "pretrained everyday-object weights are unavailable "
                f"(offline cache miss?): {exc}") from exc
        raise
    anchors = AnchorGenerator(
        sizes=tuple((s,) for s in config.anchor_sizes),
        aspect_ratios=((0.75, 1.0, 1.25),) * len(config.anchor_sizes))
    return MaskRCNN(
        backbone, num_classes=2, rpn_anchor_generator=anchors,
        min_size=config.image_size, max_size=config.image_size,
        box_detections_per_img=100)
