"""
Cross-modal Contrastive Learning Module
Instance pooling over object masks, relative hard instance construction,
shared projection onto the unit sphere and the temperature-scaled contrastive loss
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from ..engine import Tensor
from ..engine import ops
from ..exceptions import (
    ContractError,
    DimensionError,
    DomainError,
    EmptyRegionError,
    InvalidSampleError,
)
from ..models import BACKGROUND_ID, ModelParams
from ..schemas import ContrastiveConfig, ModelDims, RatioMode

logger = structlog.get_logger(__name__)

UNIT_NORM_TOLERANCE = 1e-4
HARD_THRESHOLD = 0.5


# ================================
# MASK UTILITIES
# ================================

def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Block-coverage downsampling of a binary mask.

    A cell is set when at least half of its ``factor`` x ``factor`` block is set.
    A non-empty mask never vanishes: if no block reaches half coverage, the block
    with the largest coverage (first in row-major order) is kept.
    """
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    if height % factor or width % factor:
        raise DimensionError(f"downsample_mask: {mask.shape} not divisible by {factor}")
    coverage = mask.reshape(height // factor, factor, width // factor, factor).mean(axis=(1, 3))
    small = coverage >= 0.5
    if mask.any() and not small.any():
        small.flat[int(np.argmax(coverage))] = True
    return small


def misclassified_degree(probs: np.ndarray, target: np.ndarray) -> np.ndarray:
    """c_p = 1 - c on referent pixels, c elsewhere"""
    probs = np.asarray(probs)
    if np.any(probs < 0.0) or np.any(probs > 1.0) or not np.all(np.isfinite(probs)):
        raise DomainError(f"misclassified_degree: probabilities outside [0, 1] (min={probs.min()}, max={probs.max()})")
    target = np.asarray(target, dtype=bool)
    if target.shape != probs.shape:
        raise DimensionError(f"misclassified_degree: probs {probs.shape} vs target {target.shape}")
    return np.where(target, 1.0 - probs, probs)


def hard_count(n_pixels: int, ratio: Tuple[int, int]) -> int:
    """K = ceil(n * h / (h + e)) in integer arithmetic"""
    hard, easy = ratio
    return (n_pixels * hard + hard + easy - 1) // (hard + easy)


def rhic_select(c_p: np.ndarray, region: np.ndarray, ratio: Tuple[int, int] = (1, 3),
                mode: RatioMode = RatioMode.KEEP_HARD) -> np.ndarray:
    """Keep the relatively hard part of ``region``.

    ``keep_hard`` keeps exactly K pixels with the largest c_p, ties going to the
    earlier pixel in row-major order. ``hard_plus_easy`` keeps every pixel with
    c_p above 0.5 (at least the hardest one) plus an evenly spaced row-major
    sample of easy pixels sized by the ratio.
    """
    region = np.asarray(region, dtype=bool)
    if c_p.shape != region.shape:
        raise DimensionError(f"rhic_select: c_p {c_p.shape} vs region {region.shape}")
    pixels = np.flatnonzero(region)
    if pixels.size == 0:
        raise EmptyRegionError("rhic_select: region is empty")
    scores = np.asarray(c_p).reshape(-1)[pixels]
    ranked = pixels[np.argsort(-scores, kind="stable")]

    selected = np.zeros(region.size, dtype=bool)
    if mode == RatioMode.KEEP_HARD:
        selected[ranked[:hard_count(pixels.size, ratio)]] = True
        return selected.reshape(region.shape)

    hard = pixels[scores > HARD_THRESHOLD]
    if hard.size == 0:
        hard = ranked[:1]
    selected[hard] = True
    easy = pixels[~selected[pixels]]
    n_easy = min(easy.size, -(-hard.size * ratio[1] // ratio[0]))
    if n_easy:
        picks = np.floor(np.arange(n_easy) * easy.size / n_easy).astype(np.int64)
        selected[easy[picks]] = True
    return selected.reshape(region.shape)


# ================================
# POOLING AND LOSS
# ================================

def _pool_weights(masks: Sequence[np.ndarray], dtype) -> np.ndarray:
    weights = np.stack([np.asarray(m, dtype=bool).reshape(-1) for m in masks], axis=1).astype(dtype)
    counts = weights.sum(axis=0)
    if np.any(counts == 0):
        raise EmptyRegionError(f"masked_avg_pool: empty mask at positions {np.flatnonzero(counts == 0).tolist()}")
    return weights / counts


def masked_avg_pool_many(features: Tensor, masks: Sequence[np.ndarray]) -> Tensor:
    """n x C matrix of region averages, one row per mask"""
    channels, height, width = features.shape
    for mask in masks:
        if np.shape(mask) != (height, width):
            raise DimensionError(f"masked_avg_pool: mask {np.shape(mask)} vs features {features.shape}")
    weights = Tensor(_pool_weights(masks, features.dtype))
    pooled = ops.matmul(features.reshape(channels, height * width), weights)
    return pooled.T


def masked_avg_pool(features: Tensor, mask: np.ndarray) -> Tensor:
    """r_v[c] = mean of X_v[c] over the set pixels of ``mask``"""
    return masked_avg_pool_many(features, [mask]).reshape(features.shape[0])


def _as_matrix(vectors: Union[Tensor, Sequence[Tensor], None]) -> Optional[Tensor]:
    if vectors is None:
        return None
    if isinstance(vectors, Tensor):
        return vectors.reshape(1, -1) if vectors.ndim == 1 else vectors
    vectors = list(vectors)
    if not vectors:
        return None
    return ops.concat([v.reshape(1, -1) for v in vectors], axis=0)


def _check_unit(name: str, matrix: Tensor) -> None:
    norms = np.linalg.norm(matrix.data.astype(np.float64), axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
        raise ContractError(f"contrastive_loss: {name} is not unit-norm (norms={np.round(norms, 6).tolist()})")


def contrastive_loss(z_l: Tensor, z_p: Union[Tensor, Sequence[Tensor]],
                     negatives: Union[Tensor, Sequence[Tensor], None], temperature: float) -> Tensor:
    """Mean over positives of -log softmax(positive logit) against the negative pool"""
    if temperature <= 0:
        raise ContractError(f"contrastive_loss: temperature must be positive, got {temperature}")
    anchor = _as_matrix(z_l)
    positives = _as_matrix(z_p)
    negative_matrix = _as_matrix(negatives)
    if positives is None:
        raise ContractError("contrastive_loss: at least one positive is required")
    _check_unit("z_l", anchor)
    _check_unit("z_p", positives)
    if negative_matrix is not None:
        _check_unit("z_n", negative_matrix)

    n_pos = positives.shape[0]
    anchor_col = anchor.reshape(-1, 1)
    positive_logits = ops.matmul(positives, anchor_col) / temperature
    logits = positive_logits
    if negative_matrix is not None:
        n_neg = negative_matrix.shape[0]
        negative_logits = ops.matmul(negative_matrix, anchor_col).reshape(1, n_neg) / temperature
        logits = ops.concat([positive_logits, ops.expand(negative_logits, (n_pos, n_neg))], axis=1)
    per_positive = ops.logsumexp(logits, axis=1) - positive_logits.reshape(n_pos)
    return ops.mean(per_positive)


# ================================
# MODULE
# ================================

@dataclass
class PoolEntry:
    """Where a pooled object came from"""
    frame: int
    instance_id: int
    n_pixels: int


@dataclass
class InstancePool:
    """Projected referent objects (positives), every other object (negatives) and z_l"""
    z_l: Tensor
    positives: Tensor
    negatives: Optional[Tensor]
    positive_sources: List[PoolEntry] = field(default_factory=list)
    negative_sources: List[PoolEntry] = field(default_factory=list)

    @property
    def n_positives(self) -> int:
        return len(self.positive_sources)

    @property
    def n_negatives(self) -> int:
        return len(self.negative_sources)


class ContrastiveModule:
    """Builds the instance pool of one sample and scores it"""

    def __init__(self, dims: ModelDims, config: ContrastiveConfig):
        self.dims = dims
        self.config = config
        self.slope = dims.leaky_slope

    def init_params(self, params: ModelParams, rng: np.random.Generator) -> None:
        d = self.dims
        params.add("proj.w_a", rng.normal(0.0, np.sqrt(2.0 / d.c_v), (d.c_v, d.proj_hidden)).astype(np.float32))
        params.add("proj.b_a", np.zeros(d.proj_hidden, dtype=np.float32))
        params.add("proj.w_b",
                   rng.normal(0.0, np.sqrt(1.0 / d.proj_hidden), (d.proj_hidden, d.proj_out)).astype(np.float32))
        params.add("proj.b_b", np.zeros(d.proj_out, dtype=np.float32))

    def project(self, r: Tensor, params: ModelParams) -> Tensor:
        """z = l2_normalize(W_b leaky(W_a r + a) + b); rows of a matrix are projected independently"""
        single = r.ndim == 1
        matrix = r.reshape(1, -1) if single else r
        hidden = ops.leaky_relu(ops.linear(matrix, params["proj.w_a"], params["proj.b_a"]), self.slope)
        z = ops.l2_normalize(ops.linear(hidden, params["proj.w_b"], params["proj.b_b"]), axis=-1)
        return z.reshape(self.dims.proj_out) if single else z

    def _object_regions(self, masks: np.ndarray, factor: int) -> List[np.ndarray]:
        """Downsampled instance masks of one frame followed by its background"""
        regions = [downsample_mask(m, factor) for m in masks]
        regions.append(downsample_mask(~masks.any(axis=0), factor))
        return regions

    def build_instance_pool(self, features: Sequence[Tensor], masks: np.ndarray, instance_ids: Sequence[int],
                            referent_id: int, r_l: Tensor, params: ModelParams,
                            probs: Optional[Sequence[np.ndarray]] = None, use_rhic: bool = True) -> InstancePool:
        """Pool, optionally harden, and project every object of a clip.

        ``features`` holds X_v per frame, ``masks`` is the (T, N, H, W) full-size
        ground truth and ``probs`` the detached stride-4 foreground probabilities
        used by RHIC. Objects whose downsampled region is empty are skipped.
        """
        instance_ids = list(instance_ids)
        if referent_id not in instance_ids:
            raise InvalidSampleError(f"referent {referent_id} is not an instance of the clip (ids={instance_ids})")
        if len(features) != masks.shape[0]:
            raise DimensionError(f"build_instance_pool: {len(features)} feature maps for {masks.shape[0]} frames")
        if use_rhic and probs is None:
            raise ContractError("build_instance_pool: RHIC needs foreground probabilities")
        referent_idx = instance_ids.index(referent_id)
        object_ids = instance_ids + [BACKGROUND_ID]

        pooled_rows: List[Tensor] = []
        sources: List[PoolEntry] = []
        for t, frame_features in enumerate(features):
            factor = masks.shape[-1] // frame_features.shape[-1]
            regions = self._object_regions(masks[t], factor)
            target = regions[referent_idx]
            c_p = misclassified_degree(probs[t], target) if use_rhic else None

            kept, kept_ids = [], []
            for object_id, region in zip(object_ids, regions):
                if not region.any():
                    logger.debug("Empty object skipped", frame=t, instance_id=object_id)
                    continue
                if use_rhic:
                    region = rhic_select(c_p, region, self.config.ratio, self.config.ratio_mode)
                kept.append(region)
                kept_ids.append(object_id)
            if not kept:
                continue
            pooled_rows.append(masked_avg_pool_many(frame_features, kept))
            sources.extend(PoolEntry(t, object_id, int(region.sum())) for object_id, region in zip(kept_ids, kept))

        positive_idx = np.array([i for i, s in enumerate(sources) if s.instance_id == referent_id], dtype=np.int64)
        negative_idx = np.array([i for i, s in enumerate(sources) if s.instance_id != referent_id], dtype=np.int64)
        if positive_idx.size == 0:
            raise InvalidSampleError(f"referent {referent_id} is absent from every frame")

        projected = self.project(ops.concat(pooled_rows, axis=0), params)
        z_l = self.project(r_l, params)
        return InstancePool(
            z_l=z_l,
            positives=projected[positive_idx],
            negatives=projected[negative_idx] if negative_idx.size else None,
            positive_sources=[sources[i] for i in positive_idx],
            negative_sources=[sources[i] for i in negative_idx],
        )

    def loss(self, pool: InstancePool) -> Tensor:
        return contrastive_loss(pool.z_l, pool.positives, pool.negatives, self.config.temperature)
