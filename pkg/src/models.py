"""
Domain records shared across services: clips, sentences, datasets, parameters
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .engine import Tensor
from .schemas import Color, Motion, Shape, Size

PAD_ID = 0
BACKGROUND_ID = -1


@dataclass(frozen=True)
class InstanceSpec:
    """Appearance and motion of one instance"""
    instance_id: int
    shape: Shape
    color: Color
    size: Size
    motion: Motion

    @property
    def appearance(self) -> Tuple[Shape, Color, Size]:
        return (self.shape, self.color, self.size)

    @property
    def attributes(self) -> Tuple[Shape, Color, Size, Motion]:
        return (self.shape, self.color, self.size, self.motion)


@dataclass
class Sentence:
    """Padded token ids, true length and the instance the sentence describes"""
    tokens: np.ndarray
    length: int
    referent_id: int
    text: str = ""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if not 1 <= self.length <= self.tokens.shape[0]:
            raise ValueError(f"sentence length {self.length} outside [1, {self.tokens.shape[0]}]")

    @property
    def max_len(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def valid_mask(self) -> np.ndarray:
        return np.arange(self.max_len) < self.length


@dataclass
class Clip:
    """T RGB frames with per-frame per-instance binary masks.

    ``frames`` is (T, H, W, 3) uint8, ``masks`` is (T, N, H, W) bool and
    ``instance_ids[n]`` names mask channel n. The background is the complement
    of the union of the instance masks.
    """
    frames: np.ndarray
    masks: np.ndarray
    instance_ids: List[int]
    instances: List[InstanceSpec] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def frame_size(self) -> Tuple[int, int]:
        return int(self.frames.shape[1]), int(self.frames.shape[2])

    def mask_of(self, instance_id: int) -> np.ndarray:
        """(T, H, W) mask of one instance"""
        try:
            return self.masks[:, self.instance_ids.index(instance_id)]
        except ValueError:
            raise KeyError(f"instance {instance_id} not in clip (ids={self.instance_ids})") from None

    def background(self) -> np.ndarray:
        """(T, H, W) complement of the union of instance masks"""
        return ~self.masks.any(axis=1)


@dataclass
class ClipRecord:
    """A clip with its sentences and manifest metadata"""
    dir: str
    clip: Clip
    sentences: List[Sentence]
    confusable: bool = False
    seed: Optional[int] = None


@dataclass
class Dataset:
    """A set of clips sharing frame size, clip length and vocabulary"""
    frame_size: int
    n_frames: int
    vocab: List[str]
    clips: List[ClipRecord] = field(default_factory=list)

    def samples(self) -> List[Tuple[ClipRecord, Sentence]]:
        """Every (clip, sentence) pair in manifest order"""
        return [(record, sentence) for record in self.clips for sentence in record.sentences]


@dataclass
class StepMetrics:
    """Loss components of one optimisation step"""
    loss: float
    seg_loss: float
    contrastive_loss: float
    n_samples: int = 0
    n_skipped: int = 0


class ModelParams:
    """All learnable weights, addressable by dotted name.

    Iteration order is registration order, which fixes checkpoint layout.
    """

    def __init__(self, tensors: Optional[Dict[str, Tensor]] = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor)

    def add(self, name: str, value: Any) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter '{name}' registered twice")
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._tensors.items())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def astype(self, dtype) -> "ModelParams":
        """Fresh leaves in the given precision (64-bit for gradient checks)"""
        return ModelParams({name: Tensor(t.data.astype(dtype)) for name, t in self._tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams({name: Tensor(t.data.copy()) for name, t in self._tensors.items()})

    def with_tensor(self, name: str, tensor: Tensor) -> "ModelParams":
        """Shallow copy with one parameter substituted"""
        if name not in self._tensors:
            raise KeyError(name)
        swapped = ModelParams.__new__(ModelParams)
        swapped._tensors = OrderedDict(self._tensors)
        swapped._tensors[name] = tensor
        return swapped

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, t.data) for name, t in self._tensors.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, tensor in self._tensors.items():
            if name not in state:
                raise KeyError(f"missing parameter '{name}'")
            if tuple(state[name].shape) != tensor.shape:
                raise ValueError(f"parameter '{name}' has shape {tuple(state[name].shape)}, expected {tensor.shape}")
            tensor.data = np.array(state[name], dtype=tensor.dtype, copy=True)
