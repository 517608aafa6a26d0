"""
Training Engine
Joint segmentation + contrastive objective, one Adam step per batch, plateau
schedule per epoch, checkpoints and the tab-separated training log
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from ..engine import Tape, Tensor
from ..engine import ops
from ..exceptions import InvalidSampleError, OutputError
from ..models import ClipRecord, Dataset, ModelParams, Sentence, StepMetrics
from ..schemas import RunConfig
from .checkpoint_service import Checkpoint, load_checkpoint, restore_params, save_checkpoint
from .dataset_io import MANIFEST_FILE, read_dataset
from .evaluation import Evaluator, model_predictor
from .optim import AdamOptimizer, PlateauScheduler, lr_schedule
from .segmentation import SegmentationModel, seg_loss, total_loss
from .synthgen import hflip

logger = structlog.get_logger(__name__)

Sample = Tuple[ClipRecord, Sentence]

TRAIN_LOG = "train_log.tsv"
LOG_COLUMNS = ["epoch", "L", "L_s", "L_c", "lr", "val_mean_iou"]
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"


def epoch_checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:03d}.ckpt"


@dataclass
class BatchLoss:
    """Loss tensors of one batch (``total`` is None when every sample was skipped)"""
    total: Optional[Tensor]
    seg: Optional[Tensor]
    contrastive: Optional[Tensor]
    n_samples: int
    n_skipped: int


def _mean(values: List[Tensor]) -> Tensor:
    return ops.mean(ops.concat([v.reshape(1) for v in values], axis=0))


class Trainer:
    """Owns the model, its parameters and the optimisation state of one run"""

    def __init__(self, config: RunConfig, params: Optional[ModelParams] = None):
        self.config = config
        self.hyper = config.hyper
        self.model = SegmentationModel(config.model, config.contrastive, config.hyper)
        self.params = params if params is not None else self.model.init_params(config.train.seed)
        self.optimizer = AdamOptimizer(self.params, config.hyper.lr)
        self.scheduler = PlateauScheduler(config.hyper.lr, patience=config.hyper.patience,
                                          decay=config.hyper.decay, min_lr=config.hyper.min_lr)
        self.rng = np.random.default_rng([config.train.seed, 7])
        self.epoch = 0

    def rhic_active(self, epoch: int) -> bool:
        return self.hyper.use_rhic and epoch >= self.config.contrastive.rhic_warmup_epochs

    # ------------------------------------------------------------------
    # losses
    # ------------------------------------------------------------------
    def compute_sample_loss(self, record: ClipRecord, sentence: Sentence, params: ModelParams,
                            use_rhic: bool) -> Tuple[Tensor, Optional[Tensor]]:
        """(L_s averaged over frames, L_c or None when the contrastive term is off)"""
        forward = self.model.forward_clip(record.clip, sentence, params)
        target = record.clip.mask_of(sentence.referent_id)
        l_s = _mean([seg_loss(logits, target[t]) for t, logits in enumerate(forward.logits)])
        if not self.hyper.use_ccl:
            return l_s, None

        pool = self.model.contrastive.build_instance_pool(
            forward.features, record.clip.masks, record.clip.instance_ids, sentence.referent_id,
            forward.r_l, params, probs=forward.low_probs() if use_rhic else None, use_rhic=use_rhic,
        )
        return l_s, self.model.contrastive.loss(pool)

    def compute_batch_loss(self, batch: Sequence[Sample], params: ModelParams, epoch: int = 0) -> BatchLoss:
        """L = mean L_s + lambda * mean L_c over the samples that could be pooled"""
        use_rhic = self.rhic_active(epoch)
        seg_terms, contrastive_terms = [], []
        skipped = 0
        for record, sentence in batch:
            try:
                l_s, l_c = self.compute_sample_loss(record, sentence, params, use_rhic)
            except InvalidSampleError as e:
                skipped += 1
                logger.warning("Sample skipped", clip=record.dir, referent_id=sentence.referent_id, reason=str(e))
                continue
            seg_terms.append(l_s)
            if l_c is not None:
                contrastive_terms.append(l_c)

        if not seg_terms:
            return BatchLoss(None, None, None, 0, skipped)
        l_s = _mean(seg_terms)
        l_c = _mean(contrastive_terms) if contrastive_terms else None
        total = total_loss(l_s, l_c, self.hyper.lam, use_ccl=l_c is not None)
        return BatchLoss(total, l_s, l_c, len(seg_terms), skipped)

    # ------------------------------------------------------------------
    # optimisation
    # ------------------------------------------------------------------
    def _augment(self, batch: Sequence[Sample]) -> List[Sample]:
        if not self.config.train.augment_hflip:
            return list(batch)
        augmented = []
        for record, sentence in batch:
            if self.rng.random() < 0.5:
                clip, sentence = hflip(record.clip, sentence)
                record = ClipRecord(dir=record.dir, clip=clip, sentences=[sentence],
                                    confusable=record.confusable, seed=record.seed)
            augmented.append((record, sentence))
        return augmented

    def train_step(self, batch: Sequence[Sample], epoch: Optional[int] = None) -> StepMetrics:
        """One forward pass, one backward pass and one Adam step"""
        epoch = self.epoch if epoch is None else epoch
        self.optimizer.zero_grad()
        with Tape() as tape:
            losses = self.compute_batch_loss(self._augment(batch), self.params, epoch)
        if losses.total is None:
            logger.warning("Batch skipped", n_skipped=losses.n_skipped)
            return StepMetrics(0.0, 0.0, 0.0, 0, losses.n_skipped)

        tape.backward(losses.total)
        self.optimizer.step()
        return StepMetrics(
            loss=losses.total.item(),
            seg_loss=losses.seg.item(),
            contrastive_loss=0.0 if losses.contrastive is None else losses.contrastive.item(),
            n_samples=losses.n_samples,
            n_skipped=losses.n_skipped,
        )

    def run_epoch(self, samples: Sequence[Sample]) -> StepMetrics:
        """Shuffle, batch and step; returns sample-weighted epoch means"""
        order = self.rng.permutation(len(samples))
        cap = self.config.train.max_samples_per_epoch
        if cap is not None:
            order = order[:cap]
        batch_size = self.hyper.batch_size

        totals = np.zeros(3)
        n_samples = n_skipped = 0
        for start in range(0, len(order), batch_size):
            batch = [samples[int(i)] for i in order[start:start + batch_size]]
            step = self.train_step(batch)
            totals += step.n_samples * np.array([step.loss, step.seg_loss, step.contrastive_loss])
            n_samples += step.n_samples
            n_skipped += step.n_skipped
        means = totals / max(n_samples, 1)
        return StepMetrics(float(means[0]), float(means[1]), float(means[2]), n_samples, n_skipped)

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------
    def snapshot(self, metrics: Optional[dict] = None) -> Checkpoint:
        return Checkpoint(
            params=self.params.state_dict(),
            config=self.config.model_dump(mode="json"),
            epoch=self.epoch,
            rng_state=self.rng.bit_generator.state,
            optimizer=self.optimizer.state_dict(),
            scheduler=self.scheduler.state_dict(),
            adam_m={k: v.copy() for k, v in self.optimizer.state.m.items()},
            adam_v={k: v.copy() for k, v in self.optimizer.state.v.items()},
            metrics=dict(metrics or {}),
        )

    def resume(self, checkpoint: Checkpoint) -> None:
        """Restore parameters, optimiser, scheduler, generator and epoch counter"""
        restore_params(checkpoint, self.params)
        self.optimizer.load_state_dict(checkpoint.optimizer, {"m": checkpoint.adam_m, "v": checkpoint.adam_v})
        if checkpoint.scheduler:
            self.scheduler.load_state_dict(checkpoint.scheduler)
        if checkpoint.rng_state is not None:
            self.rng.bit_generator.state = checkpoint.rng_state
        self.epoch = checkpoint.epoch
        logger.info("Run resumed", epoch=self.epoch, lr=self.optimizer.lr)

    def validate(self, val_set: Optional[Dataset]) -> float:
        if val_set is None or not val_set.clips:
            return float("nan")
        evaluator = Evaluator(beta=self.config.effective_beta, n_jobs=self.config.eval.n_jobs)
        report = evaluator.evaluate_predictor(val_set, model_predictor(self.model, self.params),
                                              run_id=f"epoch_{self.epoch}")
        return report.mean_iou

    # ------------------------------------------------------------------
    # loop
    # ------------------------------------------------------------------
    def fit(self, train_set: Dataset, val_set: Optional[Dataset] = None,
            resume_from: Optional[Checkpoint] = None) -> Checkpoint:
        """Train for the epoch budget; returns the best-by-validation checkpoint"""
        out_dir = Path(self.config.train.output_dir)
        log_path = out_dir / TRAIN_LOG
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            if resume_from is not None:
                self.resume(resume_from)
            elif log_path.exists():
                log_path.unlink()

            samples = train_set.samples()
            last = best = self.snapshot()
            best_iou = -math.inf
            if resume_from is not None and (out_dir / BEST_CHECKPOINT).exists():
                best = load_checkpoint(out_dir / BEST_CHECKPOINT)
                best_iou = best.metrics.get("val_mean_iou") or -math.inf

            while self.epoch < self.config.train.epochs:
                metrics = self.run_epoch(samples)
                self.epoch += 1
                val_iou = self.validate(val_set)
                lr_used = self.optimizer.lr
                self.optimizer.lr = lr_schedule(self.scheduler, metrics.loss)

                self._log_epoch(log_path, metrics, lr_used, val_iou)
                logger.info("Epoch completed", epoch=self.epoch, loss=round(metrics.loss, 6),
                            seg_loss=round(metrics.seg_loss, 6), contrastive_loss=round(metrics.contrastive_loss, 6),
                            lr=lr_used, val_mean_iou=val_iou, skipped=metrics.n_skipped)

                last = self.snapshot({
                    "loss": metrics.loss,
                    "seg_loss": metrics.seg_loss,
                    "contrastive_loss": metrics.contrastive_loss,
                    "val_mean_iou": None if math.isnan(val_iou) else val_iou,
                })
                save_checkpoint(last, out_dir / epoch_checkpoint_name(self.epoch))
                # without a validation split the latest epoch counts as best
                if math.isnan(val_iou) or val_iou > best_iou:
                    best = last
                    best_iou = -math.inf if math.isnan(val_iou) else val_iou

            save_checkpoint(best, out_dir / BEST_CHECKPOINT)
            save_checkpoint(last, out_dir / LAST_CHECKPOINT)
            logger.info("Training finished", epochs=self.epoch, best_epoch=best.epoch,
                        best_val_mean_iou=best.metrics.get("val_mean_iou"))
            return best
        except OSError as e:
            logger.error(f"Training failed: {str(e)}", output_dir=str(out_dir))
            raise OutputError(f"cannot write training outputs: {e.strerror or e}", path=str(out_dir)) from e

    def _log_epoch(self, path: Path, metrics: StepMetrics, lr: float, val_iou: float) -> None:
        row = {"epoch": self.epoch, "L": metrics.loss, "L_s": metrics.seg_loss, "L_c": metrics.contrastive_loss,
               "lr": lr, "val_mean_iou": val_iou}
        pd.DataFrame([row], columns=LOG_COLUMNS).to_csv(
            path, sep="\t", mode="a", header=not path.exists(), index=False, float_format="%.6g", na_rep="nan",
        )


def train_step(trainer: Trainer, batch: Sequence[Sample]) -> StepMetrics:
    return trainer.train_step(batch)


def fit(config: RunConfig, resume_from: Optional[Checkpoint] = None) -> Checkpoint:
    """Read the train/val splits under ``config.data.path`` and train"""
    root = Path(config.data.path)
    train_set = read_dataset(root / "train")
    val_dir = root / "val"
    val_set = read_dataset(val_dir) if (val_dir / MANIFEST_FILE).exists() else None
    return Trainer(config).fit(train_set, val_set, resume_from=resume_from)
