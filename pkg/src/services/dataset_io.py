"""
Dataset Storage
Clip directories of binary PPM frames and PGM masks plus a JSON manifest
"""
from pathlib import Path
from typing import List, Union

import numpy as np
import structlog
from PIL import Image, UnidentifiedImageError
from pydantic import ValidationError

from ..exceptions import LoadError, OutputError
from ..models import Clip, ClipRecord, Dataset, InstanceSpec, Sentence
from ..schemas import (
    MANIFEST_VERSION,
    Manifest,
    ManifestClip,
    ManifestInstance,
    ManifestSentence,
)

logger = structlog.get_logger(__name__)

MANIFEST_FILE = "manifest.json"
VOCAB_FILE = "vocab.txt"
MASK_ON = 255

PathLike = Union[str, Path]


def frame_name(t: int) -> str:
    return f"frame_{t}.ppm"


def mask_name(t: int, instance_id: int) -> str:
    return f"mask_{t}_{instance_id}.pgm"


# ================================
# IMAGES
# ================================

def write_ppm(path: Path, image: np.ndarray) -> None:
    """Binary P6 for H x W x 3, binary P5 for H x W, 8 bits per sample"""
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PPM")


def read_image(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise LoadError("missing image", path=str(path))
    try:
        with Image.open(path) as image:
            if image.mode != mode:
                raise LoadError(f"expected {mode} image, found {image.mode}", path=str(path), field="mode")
            return np.array(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise LoadError(f"unreadable image: {e}", path=str(path)) from e


def read_mask(path: Path) -> np.ndarray:
    values = read_image(path, "L")
    bad = np.setdiff1d(np.unique(values), [0, MASK_ON])
    if bad.size:
        raise LoadError(f"mask values must be 0 or {MASK_ON}, found {bad.tolist()}", path=str(path), field="pixels")
    return values == MASK_ON


# ================================
# WRITE
# ================================

def _manifest_clip(record: ClipRecord) -> ManifestClip:
    clip = record.clip
    return ManifestClip(
        dir=record.dir,
        n_instances=len(clip.instance_ids),
        instance_ids=list(clip.instance_ids),
        confusable=record.confusable,
        seed=record.seed,
        instances=[
            ManifestInstance(id=i.instance_id, shape=i.shape, color=i.color, size=i.size, motion=i.motion)
            for i in clip.instances
        ],
        sentences=[
            ManifestSentence(tokens=[int(t) for t in s.tokens], length=s.length, referent_id=s.referent_id, text=s.text)
            for s in record.sentences
        ],
    )


def write_dataset(dataset: Dataset, path: PathLike) -> Path:
    """Write every clip directory, the vocabulary file and the manifest"""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / VOCAB_FILE).write_text("\n".join(dataset.vocab) + "\n", encoding="utf-8")
        for record in dataset.clips:
            clip_dir = root / record.dir
            clip_dir.mkdir(parents=True, exist_ok=True)
            for t in range(record.clip.n_frames):
                write_ppm(clip_dir / frame_name(t), record.clip.frames[t])
                for n, instance_id in enumerate(record.clip.instance_ids):
                    write_ppm(clip_dir / mask_name(t, instance_id), record.clip.masks[t, n].astype(np.uint8) * MASK_ON)

        manifest = Manifest(version=MANIFEST_VERSION, frame_size=dataset.frame_size, T=dataset.n_frames,
                            vocab_path=VOCAB_FILE, clips=[_manifest_clip(r) for r in dataset.clips])
        (root / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info("Dataset written", path=str(root), n_clips=len(dataset.clips))
        return root
    except OSError as e:
        logger.error(f"Dataset write failed: {str(e)}", path=str(root))
        raise OutputError(f"cannot write dataset: {e.strerror or e}", path=str(root)) from e


# ================================
# READ
# ================================

def _field_of(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"])


def _read_manifest(root: Path) -> Manifest:
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.is_file():
        raise LoadError("missing manifest", path=str(manifest_path))
    try:
        manifest = Manifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise LoadError(f"malformed manifest: {e.errors()[0]['msg']}", path=str(manifest_path),
                        field=_field_of(e)) from e
    if manifest.version != MANIFEST_VERSION:
        raise LoadError(f"unsupported manifest version {manifest.version}", path=str(manifest_path), field="version")
    return manifest


def _read_vocab(root: Path, manifest: Manifest) -> List[str]:
    vocab_path = root / manifest.vocab_path
    if not vocab_path.is_file():
        raise LoadError("missing vocabulary", path=str(vocab_path))
    return vocab_path.read_text(encoding="utf-8").splitlines()


def _read_record(root: Path, entry: ManifestClip, manifest: Manifest, index: int, vocab_size: int) -> ClipRecord:
    clip_dir = root / entry.dir
    frames = np.stack([read_image(clip_dir / frame_name(t), "RGB") for t in range(manifest.T)])
    masks = np.stack([
        np.stack([read_mask(clip_dir / mask_name(t, instance_id)) for instance_id in entry.instance_ids])
        for t in range(manifest.T)
    ])
    if frames.shape[1:3] != (manifest.frame_size, manifest.frame_size):
        raise LoadError(f"frame size {frames.shape[1:3]} differs from {manifest.frame_size}",
                        path=str(clip_dir), field="frame_size")

    sentences = []
    for s_idx, s in enumerate(entry.sentences):
        field_name = f"clips.{index}.sentences.{s_idx}"
        if s.referent_id not in entry.instance_ids:
            raise LoadError(f"referent {s.referent_id} is not an instance of the clip",
                            path=str(root / MANIFEST_FILE), field=f"{field_name}.referent_id")
        if any(not 0 <= t < vocab_size for t in s.tokens):
            raise LoadError("token id outside the vocabulary", path=str(root / MANIFEST_FILE),
                            field=f"{field_name}.tokens")
        try:
            sentences.append(Sentence(tokens=np.array(s.tokens, dtype=np.int64), length=s.length,
                                      referent_id=s.referent_id, text=s.text))
        except ValueError as e:
            raise LoadError(str(e), path=str(root / MANIFEST_FILE), field=f"{field_name}.length") from e

    instances = [InstanceSpec(instance_id=i.id, shape=i.shape, color=i.color, size=i.size, motion=i.motion)
                 for i in entry.instances]
    clip = Clip(frames=frames, masks=masks, instance_ids=list(entry.instance_ids), instances=instances)
    return ClipRecord(dir=entry.dir, clip=clip, sentences=sentences, confusable=entry.confusable, seed=entry.seed)


def read_dataset(path: PathLike) -> Dataset:
    """Reconstruct a dataset written by :func:`write_dataset`"""
    root = Path(path)
    try:
        manifest = _read_manifest(root)
        vocab = _read_vocab(root, manifest)
        records = [_read_record(root, entry, manifest, i, len(vocab)) for i, entry in enumerate(manifest.clips)]
        logger.info("Dataset loaded", path=str(root), n_clips=len(records))
        return Dataset(frame_size=manifest.frame_size, n_frames=manifest.T, vocab=vocab, clips=records)
    except LoadError as e:
        logger.error(f"Dataset load failed: {str(e)}")
        raise


def dataset_io(dataset_or_none, path: PathLike, direction: str):
    """Write ``dataset`` to ``path`` or read one back, by ``direction``"""
    if direction == "write":
        write_dataset(dataset_or_none, path)
        return None
    if direction == "read":
        return read_dataset(path)
    raise ValueError(f"Unknown direction: {direction}")


def read_clip_frames(clip_dir: PathLike) -> np.ndarray:
    """(T, H, W, 3) frames of one clip directory, read as frame_0, frame_1, ... until one is missing"""
    root = Path(clip_dir)
    frames = []
    while (root / frame_name(len(frames))).is_file():
        frames.append(read_image(root / frame_name(len(frames)), "RGB"))
    if not frames:
        raise LoadError("clip directory holds no frames", path=str(root / frame_name(0)))
    if any(f.shape != frames[0].shape for f in frames):
        raise LoadError("frames of one clip differ in size", path=str(root), field="frame_size")
    return np.stack(frames)
