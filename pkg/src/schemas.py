"""
Pydantic Schemas for Run Configuration and Reports
"""
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# ================================
# ENUMS
# ================================

class Shape(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"


class Color(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"


class Size(str, Enum):
    SMALL = "small"
    LARGE = "large"


class Motion(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    UP = "up"
    DOWN = "down"
    STILL = "still"


class RatioMode(str, Enum):
    KEEP_HARD = "keep_hard"
    HARD_PLUS_EASY = "hard_plus_easy"


class Ablation(str, Enum):
    NO_CCL = "no-ccl"
    NO_LCF = "no-lcf"
    NO_RHIC = "no-rhic"
    NO_LANGUAGE = "no-language"


P_AT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
NUM_STAGES = 4

# ================================
# CONFIGURATION SCHEMAS
# ================================

class DataConfig(BaseModel):
    """Synthetic dataset generation settings"""
    model_config = ConfigDict(extra="forbid")

    path: Path = Field(Path("data/toy"), description="Dataset root (holds train/ and val/)")
    n_train: int = Field(400, ge=0, description="Number of training clips")
    n_val: int = Field(100, ge=0, description="Number of validation clips")
    seed: int = Field(0, ge=0, description="First seed of the training range")
    val_seed_offset: int = Field(1_000_000, gt=0, description="Offset of the validation seed range")
    frame_size: int = Field(64, ge=16, description="Square frame side in pixels")
    n_frames: int = Field(4, ge=1, description="Frames per clip (T)")
    min_instances: int = Field(2, ge=2, le=4, description="Minimum instances per clip")
    max_instances: int = Field(4, ge=2, le=4, description="Maximum instances per clip")
    p_confusable: float = Field(0.5, ge=0.0, le=1.0, description="Probability of a language-only-distinguishable pair")
    max_len: int = Field(20, ge=6, description="Padded sentence length")

    @model_validator(mode="after")
    def _instance_range(self) -> "DataConfig":
        if self.min_instances > self.max_instances:
            raise ValueError("min_instances must not exceed max_instances")
        return self


class ModelDims(BaseModel):
    """Model widths; toy-scale defaults"""
    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(24, ge=2, le=4096, description="Vocabulary size including padding")
    max_len: int = Field(20, ge=1, description="Padded sentence length")
    d_e: int = Field(32, gt=0, description="Word embedding width")
    d_h: int = Field(64, gt=0, description="LSTM hidden width per direction")
    c_v: int = Field(128, gt=0, description="Fused visual channel width")
    stage_channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 64], description="Backbone stage widths")
    lcf_hidden: int = Field(64, gt=0, description="Hidden width of each channel-gate generator")
    decoder_channels: int = Field(64, gt=0, description="Width of the 3x3 decoder convolutions")
    proj_hidden: int = Field(512, gt=0, description="Projection network hidden width")
    proj_out: int = Field(128, gt=0, description="Projection network output width")
    leaky_slope: float = Field(0.1, gt=0.0, lt=1.0, description="LeakyReLU negative slope")

    @field_validator("stage_channels")
    @classmethod
    def _four_positive_stages(cls, value: List[int]) -> List[int]:
        if len(value) != NUM_STAGES or any(c <= 0 for c in value):
            raise ValueError(f"stage_channels must list {NUM_STAGES} positive widths")
        return value

    @field_validator("c_v")
    @classmethod
    def _divisible_by_stages(cls, value: int) -> int:
        if value % NUM_STAGES:
            raise ValueError(f"c_v must be divisible by {NUM_STAGES}")
        return value


class ContrastiveConfig(BaseModel):
    """Contrastive objective and hard-instance construction"""
    model_config = ConfigDict(extra="forbid")

    temperature: float = Field(0.07, gt=0.0, description="Softmax temperature tau")
    ratio: Tuple[int, int] = Field((1, 3), description="Hard:easy pixel ratio")
    ratio_mode: RatioMode = Field(RatioMode.KEEP_HARD, description="Reading of the hard:easy ratio")
    rhic_warmup_epochs: int = Field(1, ge=0, description="Epochs pooled over full masks before hard selection")

    @field_validator("ratio", mode="before")
    @classmethod
    def _parse_ratio(cls, value):
        if isinstance(value, str):
            parts = value.split(":")
            if len(parts) != 2:
                raise ValueError(f"ratio must look like 'h:e', got {value!r}")
            value = (int(parts[0]), int(parts[1]))
        return value

    @field_validator("ratio")
    @classmethod
    def _positive_parts(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] < 1 or value[1] < 1:
            raise ValueError("ratio parts must be >= 1")
        return value


class HyperParams(BaseModel):
    """Optimisation settings and ablation switches"""
    model_config = ConfigDict(extra="forbid")

    lam: float = Field(0.8, ge=0.1, le=1.0, description="Contrastive weight lambda")
    lr: float = Field(2e-4, gt=0.0, description="Initial learning rate")
    batch_size: int = Field(8, ge=1, description="Samples per step")
    patience: int = Field(2, ge=1, description="Plateau epochs before decay")
    decay: float = Field(10.0, gt=1.0, description="Learning-rate decay factor")
    min_lr: float = Field(1e-7, gt=0.0, description="Learning-rate floor")
    beta: float = Field(0.8, gt=0.0, le=1.0, description="Inference threshold fraction of the max probability")
    use_ccl: bool = Field(True, description="Enable the contrastive objective")
    use_lcf: bool = Field(True, description="Enable language-relevant channel gating")
    use_rhic: bool = Field(True, description="Enable relative hard instance construction")
    use_language: bool = Field(True, description="Feed the sentence (false replaces r_l by a constant)")

    def with_ablations(self, ablations: List[Ablation]) -> "HyperParams":
        update: Dict[str, bool] = {}
        for ablation in ablations:
            if ablation == Ablation.NO_CCL:
                update["use_ccl"] = False
            elif ablation == Ablation.NO_LCF:
                update["use_lcf"] = False
            elif ablation == Ablation.NO_RHIC:
                update["use_rhic"] = False
            elif ablation == Ablation.NO_LANGUAGE:
                update["use_language"] = False
                update["use_ccl"] = False
        return self.model_copy(update=update)


class TrainConfig(BaseModel):
    """Training loop settings"""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0, description="Initialisation and shuffling seed")
    epochs: int = Field(40, ge=0, description="Epoch budget")
    output_dir: Path = Field(Path("runs/toy"), description="Checkpoint and log directory")
    augment_hflip: bool = Field(False, description="Random horizontal flips with left/right token swap")
    max_samples_per_epoch: Optional[int] = Field(None, ge=1, description="Cap on (clip, sentence) pairs per epoch")


class EvalConfig(BaseModel):
    """Evaluation settings"""
    model_config = ConfigDict(extra="forbid")

    beta: Optional[float] = Field(None, gt=0.0, le=1.0, description="Overrides hyper.beta when set")
    n_jobs: int = Field(1, ge=1, description="Concurrent scoring threads")
    report_dir: Optional[Path] = Field(None, description="Where reports go (defaults to train.output_dir)")


class RunConfig(BaseModel):
    """Complete run configuration"""
    model_config = ConfigDict(extra="forbid")

    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelDims = Field(default_factory=ModelDims)
    hyper: HyperParams = Field(default_factory=HyperParams)
    contrastive: ContrastiveConfig = Field(default_factory=ContrastiveConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _consistent_lengths(self) -> "RunConfig":
        if self.model.max_len != self.data.max_len:
            raise ValueError("model.max_len must equal data.max_len")
        if self.data.frame_size % 32:
            raise ValueError("data.frame_size must be divisible by 32")
        return self

    @property
    def effective_beta(self) -> float:
        return self.eval.beta if self.eval.beta is not None else self.hyper.beta


# ================================
# DATASET MANIFEST
# ================================

MANIFEST_VERSION = 1


class ManifestSentence(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tokens: List[int]
    length: int = Field(..., ge=1)
    referent_id: int
    text: str = ""


class ManifestInstance(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    shape: Shape
    color: Color
    size: Size
    motion: Motion


class ManifestClip(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: str
    n_instances: int = Field(..., ge=1)
    instance_ids: List[int]
    confusable: bool = False
    seed: Optional[int] = None
    instances: List[ManifestInstance] = Field(default_factory=list)
    sentences: List[ManifestSentence]

    @model_validator(mode="after")
    def _ids_match_count(self) -> "ManifestClip":
        if len(self.instance_ids) != self.n_instances:
            raise ValueError(f"instance_ids lists {len(self.instance_ids)} ids for n_instances={self.n_instances}")
        return self


class Manifest(BaseModel):
    """One JSON document per dataset split"""
    model_config = ConfigDict(extra="forbid")

    version: int = MANIFEST_VERSION
    frame_size: int = Field(..., ge=1)
    T: int = Field(..., ge=1, description="Frames per clip")
    vocab_path: str = "vocab.txt"
    clips: List[ManifestClip] = Field(default_factory=list)


# ================================
# REPORT SCHEMAS
# ================================

class SampleResult(BaseModel):
    """Score of one (clip, sentence) pair, frames pooled"""
    clip_dir: str
    referent_id: int
    intersection: int
    union: int
    iou: float = Field(..., ge=0.0, le=1.0)
    confusable: bool = False


class SubsetMetrics(BaseModel):
    """Aggregate metrics over one subset of samples"""
    subset: str
    n_samples: int
    overall_iou: float = Field(..., ge=0.0, le=1.0)
    mean_iou: float = Field(..., ge=0.0, le=1.0)
    p_at: Dict[str, float] = Field(..., description="Precision at IoU thresholds 0.5..0.9")
    map_50_95: float = Field(..., ge=0.0, le=1.0)


class EvalReport(BaseModel):
    """Evaluation report over a dataset"""
    run_id: str
    beta: float
    ious: List[float]
    overall_iou: float = Field(..., ge=0.0, le=1.0)
    mean_iou: float = Field(..., ge=0.0, le=1.0)
    p_at: Dict[str, float]
    map_50_95: float = Field(..., ge=0.0, le=1.0)
    subsets: Dict[str, SubsetMetrics]
    samples: List[SampleResult] = Field(default_factory=list)
