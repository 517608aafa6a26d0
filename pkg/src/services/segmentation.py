"""
Mask Decoder and Model Composition
Tiled-concatenation decoder, segmentation and joint losses, and the full
sentence + clip -> mask model
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import structlog
from scipy.special import expit

from ..engine import Tensor
from ..engine import ops
from ..exceptions import ConfigError, DimensionError
from ..models import Clip, ModelParams, Sentence
from ..schemas import ContrastiveConfig, HyperParams, ModelDims
from .cclm import ContrastiveModule
from .text_encoder import TextEncoder
from .vision_encoder import VisionEncoder, frame_to_tensor

logger = structlog.get_logger(__name__)

DECODER_LAYERS = 3
LAMBDA_RANGE = (0.1, 1.0)


def seg_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Per-pixel mean binary cross-entropy in the stable logit form"""
    target = np.asarray(target)
    if tuple(target.shape) != logits.shape:
        raise DimensionError(f"seg_loss: logits {logits.shape} vs target {target.shape}")
    return ops.bce_with_logits(logits, target.astype(logits.dtype))


def total_loss(seg: Tensor, contrastive: Tensor, lam: float, use_ccl: bool = True) -> Tensor:
    """L = L_s + lambda * L_c, or L_s alone when the contrastive term is disabled"""
    low, high = LAMBDA_RANGE
    if not low <= lam <= high:
        raise ConfigError(f"lambda must lie in [{low}, {high}], got {lam}")
    if not use_ccl:
        return seg
    return seg + contrastive * lam


class MaskDecoder:
    """Three 3x3 conv + leaky layers and a 1x1 head over [X_v ; tiled r_l]"""

    def __init__(self, dims: ModelDims):
        self.dims = dims
        self.slope = dims.leaky_slope

    def init_params(self, params: ModelParams, rng: np.random.Generator) -> None:
        d = self.dims
        c_in = 2 * d.c_v
        for layer in range(1, DECODER_LAYERS + 1):
            fan_in = c_in * 9
            params.add(f"decoder.conv{layer}.weight",
                       rng.normal(0.0, np.sqrt(2.0 / fan_in), (d.decoder_channels, c_in, 3, 3)).astype(np.float32))
            params.add(f"decoder.conv{layer}.bias", np.zeros(d.decoder_channels, dtype=np.float32))
            c_in = d.decoder_channels
        params.add("decoder.head.weight",
                   rng.normal(0.0, np.sqrt(1.0 / c_in), (1, c_in, 1, 1)).astype(np.float32))
        params.add("decoder.head.bias", np.zeros(1, dtype=np.float32))

    def decode(self, features: Tensor, r_l: Tensor, params: ModelParams,
               out_size: Tuple[int, int]) -> Tuple[Tensor, Tensor]:
        """Stride-4 logits and their bilinear upsampling to ``out_size``"""
        channels, height, width = features.shape
        if r_l.shape != (channels,):
            raise DimensionError(f"decode: r_l {r_l.shape} does not match {channels} feature channels")
        tiled = ops.expand(r_l.reshape(channels, 1, 1), (channels, height, width))
        x = ops.concat([features, tiled], axis=0)
        for layer in range(1, DECODER_LAYERS + 1):
            x = ops.conv2d(x, params[f"decoder.conv{layer}.weight"], params[f"decoder.conv{layer}.bias"])
            x = ops.leaky_relu(x, self.slope)
        low = ops.conv2d(x, params["decoder.head.weight"], params["decoder.head.bias"]).reshape(height, width)
        full = ops.resize_bilinear(low, out_size[0], out_size[1])
        return low, full


@dataclass
class ClipForward:
    """Per-frame outputs of one forward pass over a clip"""
    r_l: Tensor
    features: List[Tensor]
    low_logits: List[Tensor]
    logits: List[Tensor]

    def low_probs(self) -> List[np.ndarray]:
        """Detached stride-4 foreground probabilities (input of RHIC)"""
        return [expit(l.data.astype(np.float64)) for l in self.low_logits]


class SegmentationModel:
    """Text encoder, visual encoder, contrastive projection and decoder"""

    def __init__(self, dims: ModelDims, contrastive: ContrastiveConfig, hyper: HyperParams):
        self.dims = dims
        self.hyper = hyper
        self.text = TextEncoder(dims)
        self.vision = VisionEncoder(dims)
        self.contrastive = ContrastiveModule(dims, contrastive)
        self.decoder = MaskDecoder(dims)

    def init_params(self, seed: int) -> ModelParams:
        """Fresh parameters; registration order is text, vision, projection, decoder"""
        rng = np.random.default_rng(seed)
        params = ModelParams()
        self.text.init_params(params, rng)
        self.vision.init_params(params, rng)
        self.contrastive.init_params(params, rng)
        self.decoder.init_params(params, rng)
        logger.debug("Parameters initialised", n_tensors=len(params),
                     n_values=int(sum(t.size for _, t in params.items())))
        return params

    def reference(self, sentence: Sentence, params: ModelParams) -> Tensor:
        """r_l, or a constant zero vector when language is ablated"""
        if not self.hyper.use_language:
            dtype = params["text.embedding"].dtype
            return Tensor(np.zeros(self.dims.c_v, dtype=dtype))
        return self.text.encode(sentence, params)

    def forward_clip(self, clip: Clip, sentence: Sentence, params: ModelParams) -> ClipForward:
        dtype = params["text.embedding"].dtype
        r_l = self.reference(sentence, params)
        out_size = clip.frame_size
        features, lows, fulls = [], [], []
        for frame in clip.frames:
            x_v = self.vision.encode(frame_to_tensor(frame, dtype), r_l, params, use_lcf=self.hyper.use_lcf)
            low, full = self.decoder.decode(x_v, r_l, params, out_size)
            features.append(x_v)
            lows.append(low)
            fulls.append(full)
        return ClipForward(r_l=r_l, features=features, low_logits=lows, logits=fulls)

    def predict_probs(self, clip: Clip, sentence: Sentence, params: ModelParams) -> np.ndarray:
        """(T, H, W) foreground probabilities; call outside a tape for inference"""
        forward = self.forward_clip(clip, sentence, params)
        return np.stack([expit(l.data.astype(np.float64)) for l in forward.logits])
