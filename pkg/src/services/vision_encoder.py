"""
Visual Encoder
Four-stage convolutional backbone, spatial encoding, language-relevant channel
gating and top-down multi-scale merge into X_v
"""
from typing import List, Optional

import numpy as np
import structlog

from ..engine import Tensor
from ..engine import ops
from ..exceptions import DimensionError
from ..models import ModelParams
from ..schemas import NUM_STAGES, ModelDims

logger = structlog.get_logger(__name__)

COORD_CHANNELS = 8
INPUT_CHANNELS = 3
INPUT_DIVISOR = 32


def frame_to_tensor(frame: np.ndarray, dtype=np.float32) -> Tensor:
    """(H, W, 3) uint8 frame -> 3 x H x W tensor scaled to [0, 1]"""
    if frame.ndim != 3 or frame.shape[2] != INPUT_CHANNELS:
        raise DimensionError(f"expected an H x W x 3 frame, got {frame.shape}")
    return Tensor(np.transpose(frame, (2, 0, 1)).astype(dtype) / 255.0, dtype=dtype)


def spatial_coords(height: int, width: int, dtype=np.float32) -> Tensor:
    """8 x H x W grid of [x_min, y_min, x_max, y_max, x_c, y_c, 1/W, 1/H].

    Each cell is a unit box and coordinates are normalised to [-1, 1].
    """
    if height < 1 or width < 1:
        raise DimensionError(f"spatial_coords: grid must be at least 1x1, got {height}x{width}")
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    x_min = -1.0 + 2.0 * cols / width
    x_max = -1.0 + 2.0 * (cols + 1) / width
    y_min = -1.0 + 2.0 * rows / height
    y_max = -1.0 + 2.0 * (rows + 1) / height

    grid = np.empty((COORD_CHANNELS, height, width), dtype=np.float64)
    grid[0] = x_min[None, :]
    grid[1] = y_min[:, None]
    grid[2] = x_max[None, :]
    grid[3] = y_max[:, None]
    grid[4] = ((x_min + x_max) / 2.0)[None, :]
    grid[5] = ((y_min + y_max) / 2.0)[:, None]
    grid[6] = 1.0 / width
    grid[7] = 1.0 / height
    return Tensor(grid.astype(dtype), dtype=dtype)


def _he_normal(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(np.float32)


class VisionEncoder:
    """Produce the language-filtered multi-scale feature map of one frame"""

    def __init__(self, dims: ModelDims):
        self.dims = dims
        self.slope = dims.leaky_slope

    @property
    def lateral_channels(self) -> int:
        return self.dims.c_v // NUM_STAGES

    def init_params(self, params: ModelParams, rng: np.random.Generator) -> None:
        """Register vision.* weights on ``params``"""
        d = self.dims
        channels = d.stage_channels
        params.add("vision.stem.weight", _he_normal(rng, (channels[0], INPUT_CHANNELS, 3, 3)))
        params.add("vision.stem.bias", np.zeros(channels[0], dtype=np.float32))

        c_in = channels[0]
        for stage, c_out in enumerate(channels, start=1):
            prefix = f"vision.stage{stage}"
            params.add(f"{prefix}.down.weight", _he_normal(rng, (c_out, c_in, 3, 3)))
            params.add(f"{prefix}.down.bias", np.zeros(c_out, dtype=np.float32))
            params.add(f"{prefix}.conv.weight", _he_normal(rng, (c_out, c_out, 3, 3)))
            params.add(f"{prefix}.conv.bias", np.zeros(c_out, dtype=np.float32))
            c_in = c_out

        for stage, c_stage in enumerate(channels, start=1):
            params.add(f"vision.sem{stage}.weight",
                       rng.normal(0.0, 0.1, (c_stage, COORD_CHANNELS, 1, 1)).astype(np.float32))
            params.add(f"vision.lcf{stage}.w1",
                       rng.normal(0.0, np.sqrt(1.0 / d.c_v), (d.c_v, d.lcf_hidden)).astype(np.float32))
            params.add(f"vision.lcf{stage}.b1", np.zeros(d.lcf_hidden, dtype=np.float32))
            params.add(f"vision.lcf{stage}.w2",
                       rng.normal(0.0, np.sqrt(1.0 / d.lcf_hidden), (d.lcf_hidden, c_stage)).astype(np.float32))
            params.add(f"vision.lcf{stage}.b2", np.zeros(c_stage, dtype=np.float32))
            params.add(f"vision.lateral{stage}.weight", _he_normal(rng, (self.lateral_channels, c_stage, 1, 1)))
            params.add(f"vision.lateral{stage}.bias", np.zeros(self.lateral_channels, dtype=np.float32))

    # ------------------------------------------------------------------
    # backbone
    # ------------------------------------------------------------------
    def _conv_act(self, x: Tensor, prefix: str, params: ModelParams, stride: int = 1) -> Tensor:
        out = ops.conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], stride=stride)
        return ops.leaky_relu(out, self.slope)

    def backbone_forward(self, frame: Tensor, params: ModelParams) -> List[Tensor]:
        """Raw stage maps at strides 4, 8, 16 and 32"""
        if frame.ndim != 3 or frame.shape[0] != INPUT_CHANNELS:
            raise DimensionError(f"backbone: expected a 3 x H x W frame, got {frame.shape}")
        height, width = frame.shape[1:]
        if height % INPUT_DIVISOR or width % INPUT_DIVISOR:
            raise DimensionError(f"backbone: frame {height}x{width} is not divisible by {INPUT_DIVISOR}")

        x = self._conv_act(frame, "vision.stem", params, stride=2)
        stages = []
        for stage in range(1, NUM_STAGES + 1):
            x = self._conv_act(x, f"vision.stage{stage}.down", params, stride=2)
            x = self._conv_act(x, f"vision.stage{stage}.conv", params)
            stages.append(x)
        return stages

    # ------------------------------------------------------------------
    # spatial encoding and channel gating
    # ------------------------------------------------------------------
    def sem_fuse(self, x: Tensor, coords: Tensor, stage: int, params: ModelParams) -> Tensor:
        """X_i = x_i + W_p(coords) with W_p a bias-free 1x1 convolution"""
        if x.shape[1:] != coords.shape[1:]:
            raise DimensionError(f"sem_fuse: feature map {x.shape} and coordinates {coords.shape} disagree")
        return x + ops.conv2d(coords, params[f"vision.sem{stage}.weight"])

    def channel_gate(self, r_l: Tensor, stage: int, params: ModelParams) -> Tensor:
        """g = sigmoid(W2 leaky(W1 r_l + b1) + b2), one value per stage channel"""
        prefix = f"vision.lcf{stage}"
        hidden = ops.leaky_relu(ops.linear(r_l.reshape(1, -1), params[f"{prefix}.w1"], params[f"{prefix}.b1"]),
                                self.slope)
        return ops.sigmoid(ops.linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"]))

    def lcf_apply(self, x: Tensor, r_l: Tensor, stage: int, params: ModelParams) -> Tensor:
        gate = self.channel_gate(r_l, stage, params)
        return x * gate.reshape(x.shape[0], 1, 1)

    # ------------------------------------------------------------------
    # merge
    # ------------------------------------------------------------------
    def pyramid_merge(self, stages: List[Tensor], params: ModelParams) -> Tensor:
        """Lateral 1x1 projections, top-down sum, upsample everything to stride 4 and concatenate"""
        if len(stages) != NUM_STAGES:
            raise DimensionError(f"pyramid_merge: expected {NUM_STAGES} stages, got {len(stages)}")
        laterals = [
            ops.conv2d(x, params[f"vision.lateral{stage}.weight"], params[f"vision.lateral{stage}.bias"])
            for stage, x in enumerate(stages, start=1)
        ]

        merged: List[Optional[Tensor]] = [None] * NUM_STAGES
        merged[-1] = laterals[-1]
        for idx in range(NUM_STAGES - 2, -1, -1):
            merged[idx] = laterals[idx] + ops.upsample2x(merged[idx + 1])

        outputs = []
        for idx, level in enumerate(merged):
            for _ in range(idx):
                level = ops.upsample2x(level)
            outputs.append(level)
        return ops.concat(outputs, axis=0)

    def encode(self, frame: Tensor, r_l: Tensor, params: ModelParams, use_lcf: bool = True) -> Tensor:
        """X_v (C_v x H/4 x W/4) for one frame"""
        fused = []
        for stage, x in enumerate(self.backbone_forward(frame, params), start=1):
            coords = spatial_coords(x.shape[1], x.shape[2], dtype=x.dtype)
            x = self.sem_fuse(x, coords, stage, params)
            if use_lcf:
                x = self.lcf_apply(x, r_l, stage, params)
            fused.append(x)
        return self.pyramid_merge(fused, params)
