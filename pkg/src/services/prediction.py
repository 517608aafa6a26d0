"""
Prediction Service
Segments one clip directory for a free-form sentence and writes mask and overlay images
"""
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import structlog

from ..exceptions import ConfigMismatchError, OutputError
from ..models import Clip
from .checkpoint_service import Checkpoint
from .dataset_io import MASK_ON, read_clip_frames, write_ppm
from .evaluation import load_model
from .metrics import binarize
from .synthgen import make_sentence

logger = structlog.get_logger(__name__)

OVERLAY_TINT = np.array([255, 0, 255], dtype=np.float64)
OVERLAY_ALPHA = 0.5

PathLike = Union[str, Path]


def mask_file(t: int) -> str:
    return f"pred_mask_{t}.pgm"


def overlay_file(t: int) -> str:
    return f"overlay_{t}.ppm"


def render_overlay(frame: np.ndarray, mask: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Blend the tint into the predicted region; pixels outside it are unchanged"""
    out = frame.astype(np.float64)
    out[mask] = (1.0 - alpha) * out[mask] + alpha * OVERLAY_TINT
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def predict_clip(checkpoint: Checkpoint, clip_dir: PathLike, text: str, out_dir: PathLike,
                 beta: Optional[float] = None) -> List[Path]:
    """Write pred_mask_t.pgm and overlay_t.ppm for every frame; returns the written paths"""
    config, model, params = load_model(checkpoint)
    sentence = make_sentence(text, referent_id=0, max_len=config.model.max_len)
    frames = read_clip_frames(clip_dir)
    size = config.data.frame_size
    if frames.shape[1:3] != (size, size):
        raise ConfigMismatchError(f"checkpoint expects {size}px frames, clip has {frames.shape[1]}x{frames.shape[2]}")

    n_frames, height, width = frames.shape[:3]
    clip = Clip(frames=frames, masks=np.zeros((n_frames, 0, height, width), dtype=bool), instance_ids=[])
    probs = model.predict_probs(clip, sentence, params)
    beta = config.effective_beta if beta is None else beta

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for t in range(n_frames):
            mask = binarize(probs[t], beta)
            write_ppm(out / mask_file(t), mask.astype(np.uint8) * MASK_ON)
            write_ppm(out / overlay_file(t), render_overlay(frames[t], mask))
            written += [out / mask_file(t), out / overlay_file(t)]
        logger.info("Prediction written", clip=str(clip_dir), sentence=sentence.text, out_dir=str(out),
                    n_frames=n_frames)
        return written
    except OSError as e:
        logger.error(f"Prediction write failed: {str(e)}", out_dir=str(out))
        raise OutputError(f"cannot write prediction: {e.strerror or e}", path=str(out)) from e
