"""
Synthetic Referring-Video Generator
Moving hard-edged shapes with per-frame instance masks and templated sentences,
including pairs of instances that only the sentence can tell apart
"""
import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from joblib import Parallel, delayed

from ..exceptions import GenerationError, VocabularyError
from ..models import PAD_ID, Clip, ClipRecord, Dataset, InstanceSpec, Sentence
from ..schemas import Color, DataConfig, Motion, Shape, Size

logger = structlog.get_logger(__name__)

PAD_TOKEN = "<pad>"
VOCABULARY: List[str] = [
    PAD_TOKEN,
    "the", "small", "large",
    "red", "green", "blue", "yellow",
    "circle", "square", "triangle",
    "moving", "left", "right", "up", "down", "standing", "still",
    "a", "object", "shape", "is", "and", "moves",
]
TOKEN_IDS: Dict[str, int] = {token: idx for idx, token in enumerate(VOCABULARY)}

COLORS: Dict[Color, Tuple[int, int, int]] = {
    Color.RED: (220, 40, 40),
    Color.GREEN: (40, 180, 60),
    Color.BLUE: (40, 80, 220),
    Color.YELLOW: (230, 210, 40),
}
SIZE_FRACTIONS: Dict[Size, float] = {Size.SMALL: 0.08, Size.LARGE: 0.14}
DIRECTIONS: Dict[Motion, Tuple[int, int]] = {
    Motion.LEFT: (0, -1),
    Motion.RIGHT: (0, 1),
    Motion.UP: (-1, 0),
    Motion.DOWN: (1, 0),
    Motion.STILL: (0, 0),
}
FLIPPED_MOTION = {Motion.LEFT: Motion.RIGHT, Motion.RIGHT: Motion.LEFT}

BACKGROUND_GRAY = 128
BACKGROUND_NOISE = 8
MAX_PLACEMENT_ATTEMPTS = 100
KEEP_OUT = 1
APPEARANCES = list(itertools.product(Shape, Color, Size))


# ================================
# LANGUAGE
# ================================

def describe(instance: InstanceSpec) -> str:
    """the [size] [color] [shape] moving [motion] / standing still"""
    head = f"the {instance.size.value} {instance.color.value} {instance.shape.value}"
    if instance.motion == Motion.STILL:
        return f"{head} standing still"
    return f"{head} moving {instance.motion.value}"


def tokenize(text: str, max_len: int = 20) -> Tuple[np.ndarray, int]:
    """Whitespace split, lowercase, lookup, truncate and pad with the padding id"""
    words = text.lower().split()
    unknown = [w for w in words if w not in TOKEN_IDS]
    if unknown:
        raise VocabularyError(f"Unknown words: {', '.join(sorted(set(unknown)))}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    words = words[:max_len]
    ids[:len(words)] = [TOKEN_IDS[w] for w in words]
    return ids, len(words)


def detokenize(ids: Sequence[int], length: Optional[int] = None) -> str:
    ids = list(ids)[:length] if length is not None else list(ids)
    for token_id in ids:
        if not 0 <= int(token_id) < len(VOCABULARY):
            raise VocabularyError(f"token id {token_id} outside the vocabulary")
    return " ".join(VOCABULARY[int(i)] for i in ids if int(i) != PAD_ID)


def make_sentence(text: str, referent_id: int, max_len: int = 20) -> Sentence:
    ids, length = tokenize(text, max_len)
    if length == 0:
        raise VocabularyError("empty sentence")
    return Sentence(tokens=ids, length=length, referent_id=referent_id, text=" ".join(text.lower().split()[:max_len]))


# ================================
# CLIP SPECIFICATION
# ================================

@dataclass
class ClipSpec:
    """Everything that determines one clip"""
    seed: int
    instances: List[InstanceSpec]
    frame_size: int = 64
    n_frames: int = 4
    confusable: bool = False
    size_fractions: Dict[Size, float] = field(default_factory=lambda: dict(SIZE_FRACTIONS))
    max_len: int = 20

    def half_extent(self, size: Size) -> int:
        return max(1, int(round(self.size_fractions[size] * self.frame_size)))

    @property
    def speed(self) -> int:
        return max(1, self.frame_size // 16)


def sample_clip_spec(seed: int, config: DataConfig) -> ClipSpec:
    """Draw instance count, appearances and motions for one seed"""
    rng = np.random.default_rng(seed)
    n_instances = int(rng.integers(config.min_instances, config.max_instances + 1))
    confusable = bool(rng.random() < config.p_confusable)
    motions = list(Motion)

    picks = rng.choice(len(APPEARANCES), size=n_instances, replace=False)
    appearances = [APPEARANCES[int(i)] for i in picks]
    chosen_motions = [motions[int(i)] for i in rng.integers(0, len(motions), size=n_instances)]
    if confusable:
        appearances[1] = appearances[0]
        # the pair differs in one word: its direction
        directions = [m for m in motions if m != Motion.STILL]
        first, second = rng.choice(len(directions), size=2, replace=False)
        chosen_motions[0], chosen_motions[1] = directions[int(first)], directions[int(second)]

    order = rng.permutation(n_instances)
    instances = [
        InstanceSpec(instance_id=rank + 1, shape=appearances[i][0], color=appearances[i][1],
                     size=appearances[i][2], motion=chosen_motions[i])
        for rank, i in enumerate(int(o) for o in order)
    ]
    return ClipSpec(seed=seed, instances=instances, frame_size=config.frame_size, n_frames=config.n_frames,
                    confusable=confusable, max_len=config.max_len)


# ================================
# RENDERING
# ================================

def render_shape(shape: Shape, center: Tuple[int, int], half: int, frame_size: int) -> np.ndarray:
    """Hard-edged binary mask of one shape"""
    rows, cols = np.mgrid[0:frame_size, 0:frame_size]
    dy = rows - center[0]
    dx = cols - center[1]
    if shape == Shape.SQUARE:
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape == Shape.CIRCLE:
        return dx * dx + dy * dy <= half * half
    # apex up, base on the bottom row of the bounding box
    depth = dy + half
    return (depth >= 0) & (depth <= 2 * half) & (2 * np.abs(dx) <= depth)


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    grown = mask.copy()
    for _ in range(radius):
        padded = np.pad(grown, 1)
        grown = (padded[1:-1, 1:-1] | padded[:-2, 1:-1] | padded[2:, 1:-1]
                 | padded[1:-1, :-2] | padded[1:-1, 2:])
    return grown


def _trajectory(spec: ClipSpec, instance: InstanceSpec, start: Tuple[int, int]) -> List[Tuple[int, int]]:
    step_r, step_c = DIRECTIONS[instance.motion]
    return [(start[0] + t * step_r * spec.speed, start[1] + t * step_c * spec.speed) for t in range(spec.n_frames)]


def _place(spec: ClipSpec, instance: InstanceSpec, occupied: np.ndarray,
           rng: np.random.Generator) -> np.ndarray:
    """(T, S, S) masks of one instance placed clear of ``occupied``"""
    size = spec.frame_size
    half = spec.half_extent(instance.size)
    travel = spec.speed * (spec.n_frames - 1)
    step_r, step_c = DIRECTIONS[instance.motion]
    low = KEEP_OUT + half
    high = size - 1 - KEEP_OUT - half
    row_range = (low - min(0, step_r) * travel, high - max(0, step_r) * travel)
    col_range = (low - min(0, step_c) * travel, high - max(0, step_c) * travel)
    if row_range[0] > row_range[1] or col_range[0] > col_range[1]:
        raise GenerationError(f"instance {instance.instance_id} ({instance.size.value}) cannot stay inside "
                              f"a {size}x{size} frame for {spec.n_frames} frames")

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        start = (int(rng.integers(row_range[0], row_range[1] + 1)),
                 int(rng.integers(col_range[0], col_range[1] + 1)))
        masks = np.stack([render_shape(instance.shape, c, half, size) for c in _trajectory(spec, instance, start)])
        if not np.any(masks & occupied):
            return masks
    raise GenerationError(f"could not place instance {instance.instance_id} after "
                          f"{MAX_PLACEMENT_ATTEMPTS} attempts (seed={spec.seed})")


def _check_referents(instances: Sequence[InstanceSpec]) -> None:
    descriptions = [inst.attributes for inst in instances]
    if len(set(descriptions)) != len(descriptions):
        raise GenerationError("two instances share every attribute; sentences would be ambiguous")


def generate_clip(spec: ClipSpec) -> Tuple[Clip, List[Sentence]]:
    """Render the clip and one sentence per instance; a pure function of ``spec``"""
    _check_referents(spec.instances)
    rng = np.random.default_rng([spec.seed, 1])
    size, n_frames = spec.frame_size, spec.n_frames

    occupied = np.zeros((n_frames, size, size), dtype=bool)
    masks = np.zeros((n_frames, len(spec.instances), size, size), dtype=bool)
    for n, instance in enumerate(spec.instances):
        placed = _place(spec, instance, occupied, rng)
        masks[:, n] = placed
        occupied |= np.stack([_dilate(m, KEEP_OUT) for m in placed])

    noise = rng.integers(-BACKGROUND_NOISE, BACKGROUND_NOISE + 1, size=(n_frames, size, size, 1))
    frames = np.clip(BACKGROUND_GRAY + noise, 0, 255).repeat(3, axis=3).astype(np.uint8)
    for n, instance in enumerate(spec.instances):
        frames[masks[:, n]] = COLORS[instance.color]

    clip = Clip(frames=frames, masks=masks, instance_ids=[i.instance_id for i in spec.instances],
                instances=list(spec.instances))
    sentences = [make_sentence(describe(i), i.instance_id, spec.max_len) for i in spec.instances]
    return clip, sentences


def hflip(clip: Clip, sentence: Sentence) -> Tuple[Clip, Sentence]:
    """Mirror a clip horizontally and swap left/right so the sentence stays true"""
    flipped = Clip(
        frames=clip.frames[:, :, ::-1].copy(),
        masks=clip.masks[:, :, :, ::-1].copy(),
        instance_ids=list(clip.instance_ids),
        instances=[replace(i, motion=FLIPPED_MOTION.get(i.motion, i.motion)) for i in clip.instances],
    )
    swap = {TOKEN_IDS["left"]: TOKEN_IDS["right"], TOKEN_IDS["right"]: TOKEN_IDS["left"]}
    tokens = np.array([swap.get(int(t), int(t)) for t in sentence.tokens], dtype=np.int64)
    text = detokenize(tokens, sentence.length)
    return flipped, Sentence(tokens=tokens, length=sentence.length, referent_id=sentence.referent_id, text=text)


# ================================
# DATASETS
# ================================

def _generate_record(index: int, seed: int, config: DataConfig) -> ClipRecord:
    spec = sample_clip_spec(seed, config)
    clip, sentences = generate_clip(spec)
    return ClipRecord(dir=f"clip_{index:05d}", clip=clip, sentences=sentences,
                      confusable=spec.confusable, seed=seed)


def split_seeds(config: DataConfig, split: str) -> List[int]:
    """Train seeds start at ``seed``; validation seeds are offset so the ranges never meet"""
    if split == "train":
        return [config.seed + i for i in range(config.n_train)]
    if split == "val":
        return [config.seed + config.val_seed_offset + i for i in range(config.n_val)]
    raise ValueError(f"Unknown split: {split}")


def generate_dataset(config: DataConfig, split: str = "train", n_jobs: int = 1) -> Dataset:
    """Generate one split; clips are independent so they may be rendered concurrently"""
    try:
        seeds = split_seeds(config, split)
        records = Parallel(n_jobs=n_jobs)(
            delayed(_generate_record)(i, seed, config) for i, seed in enumerate(seeds)
        )
        dataset = Dataset(frame_size=config.frame_size, n_frames=config.n_frames,
                          vocab=list(VOCABULARY), clips=list(records))
        logger.info("Dataset generated", split=split, n_clips=len(dataset.clips),
                    n_confusable=sum(r.confusable for r in dataset.clips))
        return dataset
    except GenerationError as e:
        logger.error(f"Dataset generation failed: {str(e)}", split=split)
        raise
