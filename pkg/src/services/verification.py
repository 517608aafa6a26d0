"""
Gradient Verification Suite
Checks every differentiable primitive and the composite losses against
64-bit central differences
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import structlog

from ..engine import CHECK_DTYPE, Tensor, grad_check
from ..engine import ops
from ..exceptions import ConfigError
from ..models import ClipRecord, ModelParams
from ..schemas import ContrastiveConfig, DataConfig, HyperParams, ModelDims, RunConfig
from .cclm import contrastive_loss, masked_avg_pool
from .segmentation import SegmentationModel, seg_loss
from .synthgen import generate_clip, sample_clip_spec
from .trainer import Trainer
from .vision_encoder import frame_to_tensor, spatial_coords

logger = structlog.get_logger(__name__)

OP_TOLERANCE = 1e-4
DEEP_TOLERANCE = 1e-3
CHECK_EPS = 1e-6
# end-to-end gradients go down to ~1e-8, below what a 1e-6 step resolves
DEEP_EPS = 1e-5
DEEP_CHECKS = frozenset({"decoder", "vision_encoder", "end_to_end", "joint_loss"})
CHECK_FRAME = 32
COORDS_PER_PARAM = 6

TINY_DIMS = ModelDims(vocab_size=24, max_len=8, d_e=4, d_h=3, c_v=8, stage_channels=[2, 3, 4, 4],
                      lcf_hidden=3, decoder_channels=4, proj_hidden=6, proj_out=5)
TINY_DATA = DataConfig(frame_size=CHECK_FRAME, n_frames=2, min_instances=2, max_instances=2,
                       p_confusable=0.0, max_len=TINY_DIMS.max_len)


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err)) and self.max_rel_err < self.tolerance


def grad_check_params(loss_fn: Callable[[ModelParams], Tensor], params: ModelParams,
                      names: Optional[Sequence[str]] = None, eps: float = CHECK_EPS,
                      max_coords: Optional[int] = COORDS_PER_PARAM, seed: int = 0) -> Dict[str, float]:
    """grad_check of ``loss_fn`` with respect to each named parameter in turn"""
    errors = {}
    for name in names or params.names():
        def f(x: Tensor, name=name) -> Tensor:
            return loss_fn(params.with_tensor(name, x))
        errors[name] = grad_check(f, params[name], eps=eps, max_coords=max_coords,
                                  rng=np.random.default_rng(seed))
    return errors


class GradCheckSuite:
    """Named checks, each a callable returning its max relative error"""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def _x(self, *shape: int, positive: bool = False) -> Tensor:
        values = self.rng.uniform(0.5, 2.0, shape) if positive else self.rng.normal(0.0, 1.0, shape)
        return Tensor(values, dtype=CHECK_DTYPE)

    def _weights(self, shape) -> Tensor:
        return Tensor(self.rng.normal(0.0, 1.0, shape), dtype=CHECK_DTYPE)

    def _weighted(self, build: Callable[[Tensor], Tensor], x: Tensor) -> float:
        """Check sum(w * build(x)) for a fixed random w, which avoids symmetric zero gradients"""
        shaped = build(Tensor(x.data))
        w = self._weights(shaped.shape)
        return grad_check(lambda t: ops.sum(ops.mul(build(t), w)), x, eps=CHECK_EPS)

    # ------------------------------------------------------------------
    # primitives
    # ------------------------------------------------------------------
    def primitive_checks(self) -> Dict[str, Callable[[], float]]:
        b23 = self._x(2, 3)
        b3 = self._x(3)
        k3 = self._x(3, 2, 3, 3)
        k1 = self._x(2, 2, 1, 1)
        x256 = self._x(2, 5, 6)
        m42 = self._x(4, 2)
        bias = self._x(3)
        mask = np.array([[True, False, True, True], [False, True, True, False]])
        table = self._x(5, 3)
        target = (self.rng.random((3, 4)) > 0.5).astype(CHECK_DTYPE)
        return {
            "add": lambda: self._weighted(lambda t: ops.add(t, b3), self._x(2, 3)),
            "sub": lambda: self._weighted(lambda t: ops.sub(b23, t), self._x(2, 3)),
            "mul": lambda: self._weighted(lambda t: ops.mul(t, b3), self._x(2, 3)),
            "sigmoid": lambda: self._weighted(ops.sigmoid, self._x(3, 4)),
            "tanh": lambda: self._weighted(ops.tanh, self._x(3, 4)),
            "leaky_relu": lambda: self._weighted(lambda t: ops.leaky_relu(t, 0.1), self._x(3, 4)),
            "exp": lambda: self._weighted(ops.exp, self._x(3, 4)),
            "log": lambda: self._weighted(ops.log, self._x(3, 4, positive=True)),
            "matmul": lambda: self._weighted(lambda t: ops.matmul(t, m42), self._x(3, 4)),
            "conv2d": lambda: self._weighted(lambda t: ops.conv2d(t, k3, bias), self._x(2, 5, 6)),
            "conv2d_kernel": lambda: self._weighted(lambda t: ops.conv2d(x256, t, bias), k3),
            "conv2d_stride2": lambda: self._weighted(lambda t: ops.conv2d(t, k3, stride=2), self._x(2, 6, 6)),
            "conv2d_1x1": lambda: self._weighted(lambda t: ops.conv2d(t, k1), self._x(2, 4, 4)),
            "softmax": lambda: self._weighted(lambda t: ops.softmax(t, axis=1, mask=mask), self._x(2, 4)),
            "logsumexp": lambda: self._weighted(lambda t: ops.logsumexp(t, axis=1), self._x(3, 4)),
            "l2_normalize": lambda: self._weighted(lambda t: ops.l2_normalize(t, axis=-1), self._x(3, 4)),
            "upsample2x": lambda: self._weighted(ops.upsample2x, self._x(2, 3, 3)),
            "resize_bilinear": lambda: self._weighted(lambda t: ops.resize_bilinear(t, 8, 12), self._x(4, 3)),
            "reshape": lambda: self._weighted(lambda t: ops.reshape(t, (4, 3)), self._x(2, 6)),
            "transpose": lambda: self._weighted(ops.transpose, self._x(2, 5)),
            "concat": lambda: self._weighted(lambda t: ops.concat([t, b23, t], axis=0), self._x(2, 3)),
            "getitem": lambda: self._weighted(lambda t: t[1:, ::2], self._x(3, 4)),
            "expand": lambda: self._weighted(lambda t: ops.expand(t, (3, 2, 4)), self._x(2, 1)),
            "sum": lambda: self._weighted(lambda t: ops.sum(t, axis=0), self._x(3, 4)),
            "mean": lambda: self._weighted(lambda t: ops.mean(t, axis=1, keepdims=True), self._x(3, 4)),
            "embedding": lambda: self._weighted(lambda t: ops.embedding(t, np.array([4, 0, 4, 2])), table),
            "bce_with_logits": lambda: grad_check(lambda t: ops.bce_with_logits(t, target), self._x(3, 4)),
        }

    # ------------------------------------------------------------------
    # composites
    # ------------------------------------------------------------------
    def _tiny_model(self, use_rhic: bool = False) -> SegmentationModel:
        hyper = HyperParams(use_rhic=use_rhic)
        return SegmentationModel(TINY_DIMS, ContrastiveConfig(), hyper)

    def _tiny_sample(self):
        clip, sentences = generate_clip(sample_clip_spec(self.seed, TINY_DATA))
        return clip, sentences[0]

    def composite_checks(self) -> Dict[str, Callable[[], float]]:
        model = self._tiny_model()
        params = model.init_params(self.seed).astype(CHECK_DTYPE)
        clip, sentence = self._tiny_sample()
        frame = frame_to_tensor(clip.frames[0], CHECK_DTYPE)
        dims = TINY_DIMS

        def text_loss(p: ModelParams) -> Tensor:
            w = Tensor(np.linspace(-1.0, 1.0, dims.c_v), dtype=CHECK_DTYPE)
            return ops.sum(ops.mul(model.text.encode(sentence, p), w))

        stage_map = self._x(dims.stage_channels[0], 4, 4)

        def lcf_gate(x: Tensor) -> Tensor:
            gated = model.vision.lcf_apply(stage_map, x, 1, params)
            return ops.sum(ops.mul(gated, gated))

        def sem(x: Tensor) -> Tensor:
            coords = spatial_coords(4, 4, dtype=CHECK_DTYPE)
            return ops.sum(ops.mul(model.vision.sem_fuse(x, coords, 1, params), x))

        def pooled(x: Tensor) -> Tensor:
            region = np.zeros((4, 4), dtype=bool)
            region[1:3, 0:3] = True
            r_v = masked_avg_pool(x, region)
            return ops.sum(ops.mul(r_v, r_v))

        def projection(x: Tensor) -> Tensor:
            return ops.sum(ops.mul(model.contrastive.project(x, params), Tensor(np.arange(dims.proj_out) - 2.0)))

        anchor_z = self._x(dims.proj_out)
        negatives_z = self._x(4, dims.proj_out)

        def contrastive(x: Tensor) -> Tensor:
            z_p = ops.l2_normalize(x, axis=-1)
            z_l = ops.l2_normalize(anchor_z, axis=-1)
            z_n = ops.l2_normalize(negatives_z, axis=-1)
            return contrastive_loss(z_l, z_p, z_n, temperature=0.5)

        def segmentation(x: Tensor) -> Tensor:
            return seg_loss(x, clip.masks[0, 0][::4, ::4])

        def decoder(p: ModelParams) -> Tensor:
            x_v = Tensor(np.sin(np.arange(dims.c_v * 64).reshape(dims.c_v, 8, 8)), dtype=CHECK_DTYPE)
            r_l = Tensor(np.cos(np.arange(dims.c_v)), dtype=CHECK_DTYPE)
            _, logits = model.decoder.decode(x_v, r_l, p, (CHECK_FRAME, CHECK_FRAME))
            return seg_loss(logits, clip.masks[0, 0])

        def end_to_end(p: ModelParams) -> Tensor:
            r_l = model.text.encode(sentence, p)
            _, logits = model.decoder.decode(model.vision.encode(frame, r_l, p), r_l, p, clip.frame_size)
            return seg_loss(logits, clip.mask_of(sentence.referent_id)[0])

        trainer = Trainer(RunConfig(data=TINY_DATA, model=TINY_DIMS, hyper=HyperParams(use_rhic=False)), params=params)
        record = ClipRecord(dir="gradcheck", clip=clip, sentences=[sentence])

        def joint(p: ModelParams) -> Tensor:
            return trainer.compute_batch_loss([(record, sentence)], p).total

        vision_names = [n for n in params.names() if n.startswith("vision.")]
        return {
            "text_encoder": lambda: max(grad_check_params(text_loss, params,
                                                          [n for n in params.names() if n.startswith("text.")],
                                                          max_coords=None).values()),
            "lcf_gate": lambda: grad_check(lcf_gate, self._x(dims.c_v)),
            "sem_fuse": lambda: grad_check(sem, self._x(dims.stage_channels[0], 4, 4)),
            "masked_avg_pool": lambda: grad_check(pooled, self._x(3, 4, 4)),
            "projection": lambda: grad_check(projection, self._x(dims.c_v)),
            "contrastive_loss": lambda: grad_check(contrastive, self._x(3, dims.proj_out)),
            "seg_loss": lambda: grad_check(segmentation, self._x(8, 8)),
            "decoder": lambda: max(grad_check_params(decoder, params,
                                                     [n for n in params.names() if n.startswith("decoder.")]).values()),
            "vision_encoder": lambda: max(grad_check_params(end_to_end, params, vision_names, eps=DEEP_EPS).values()),
            "end_to_end": lambda: max(grad_check_params(end_to_end, params, eps=DEEP_EPS).values()),
            "joint_loss": lambda: max(grad_check_params(joint, params).values()),
        }

    def tolerance_of(self, name: str) -> float:
        return DEEP_TOLERANCE if name in DEEP_CHECKS else OP_TOLERANCE

    def run(self, only: Optional[Sequence[str]] = None) -> List[CheckResult]:
        checks = {**self.primitive_checks(), **self.composite_checks()}
        unknown = sorted(set(only or ()) - set(checks))
        if unknown:
            raise ConfigError(f"unknown gradient checks {unknown}")
        results = []
        for name, check in checks.items():
            if only and name not in only:
                continue
            error = float(check())
            result = CheckResult(name=name, max_rel_err=error, tolerance=self.tolerance_of(name))
            log = logger.info if result.passed else logger.warning
            log("Gradient check", check=name, max_rel_err=error, tolerance=result.tolerance, passed=result.passed)
            results.append(result)
        return results

