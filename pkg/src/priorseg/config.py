"""Pipeline configuration: every constant is a config default, never hard-coded."""

from dataclasses import asdict, dataclass, field

import yaml


@dataclass
class CoarseConfig:
    target_spacing: tuple = (2.0, 2.0, 6.0)
    target_dims: tuple = (168, 168, 64)
    epochs: int = 100
    lr: float = 1e-4
    batch: int = 1
    levels: int = 4
    base_width: int = 8
    class_weighting: str = "uniform"  # or "inverse_volume"
    lr_schedule: str = "constant"  # or "cosine"
    augment: bool = False  # random axis flips during training


@dataclass
class RefineConfig:
    patch_dims: tuple = (128, 128, 64)
    patches_per_organ: int = 50
    epochs: int = 5
    lr: float = 1e-4
    batch: int = 2
    levels: int = 4
    base_width: int = 8
    lr_schedule: str = "constant"  # or "cosine"


@dataclass
class PipelineConfig:
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    window: tuple = (-175.0, 250.0)  # HU normalization window
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.coarse, dict):
            self.coarse = CoarseConfig(**self.coarse)
        if isinstance(self.refine, dict):
            self.refine = RefineConfig(**self.refine)
        self.coarse.target_spacing = tuple(self.coarse.target_spacing)
        self.coarse.target_dims = tuple(self.coarse.target_dims)
        self.refine.patch_dims = tuple(self.refine.patch_dims)
        self.window = tuple(self.window)
        if any(s <= 0 for s in self.coarse.target_spacing):
            raise ValueError("coarse target spacing must be positive")
        if any(d < 1 for d in self.coarse.target_dims):
            raise ValueError("coarse target dims must be >= 1")
        if self.coarse.epochs < 0 or self.refine.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.coarse.class_weighting not in ("uniform", "inverse_volume"):
            raise ValueError(f"unknown class weighting {self.coarse.class_weighting!r}")
        for stage in (self.coarse, self.refine):
            if stage.lr_schedule not in ("constant", "cosine"):
                raise ValueError(f"unknown lr schedule {stage.lr_schedule!r}")


def load_config(path):
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    return PipelineConfig(**raw)


def save_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(asdict(cfg), f, sort_keys=True)
