"""
Linguistic Encoder
Embedding table, bi-directional LSTM and self-guided attention pooling into r_l
"""
from typing import List, Tuple

import numpy as np
import structlog

from ..engine import Tensor
from ..engine import ops
from ..exceptions import DimensionError
from ..models import ModelParams, Sentence
from ..schemas import ModelDims

logger = structlog.get_logger(__name__)

DIRECTIONS = ("fwd", "bwd")


class TextEncoder:
    """Encode a sentence into a C_v-dimensional reference vector"""

    def __init__(self, dims: ModelDims):
        self.dims = dims

    def init_params(self, params: ModelParams, rng: np.random.Generator) -> None:
        """Register text.* weights on ``params``"""
        d = self.dims
        params.add("text.embedding", rng.normal(0.0, 1.0, (d.vocab_size, d.d_e)).astype(np.float32))
        bound = 1.0 / np.sqrt(d.d_h)
        for direction in DIRECTIONS:
            prefix = f"text.lstm_{direction}"
            params.add(f"{prefix}.w_ih", rng.uniform(-bound, bound, (d.d_e, 4 * d.d_h)).astype(np.float32))
            params.add(f"{prefix}.w_hh", rng.uniform(-bound, bound, (d.d_h, 4 * d.d_h)).astype(np.float32))
            params.add(f"{prefix}.bias", np.zeros(4 * d.d_h, dtype=np.float32))
        pooled = 2 * d.d_h
        params.add("text.attn.weight", rng.normal(0.0, np.sqrt(1.0 / pooled), (pooled, 1)).astype(np.float32))
        params.add("text.attn.bias", np.zeros(1, dtype=np.float32))
        params.add("text.proj.weight", rng.normal(0.0, np.sqrt(1.0 / pooled), (pooled, d.c_v)).astype(np.float32))
        params.add("text.proj.bias", np.zeros(d.c_v, dtype=np.float32))

    # ------------------------------------------------------------------
    # operations
    # ------------------------------------------------------------------
    def embed(self, sentence: Sentence, params: ModelParams) -> Tensor:
        """max_len x d_e rows of the embedding table; padded rows use the padding id"""
        return ops.embedding(params["text.embedding"], sentence.tokens)

    def _run_direction(self, embedded: Tensor, steps: List[int], direction: str,
                       params: ModelParams) -> List[Tensor]:
        d_h = self.dims.d_h
        prefix = f"text.lstm_{direction}"
        projected = ops.linear(embedded, params[f"{prefix}.w_ih"], params[f"{prefix}.bias"])
        w_hh = params[f"{prefix}.w_hh"]

        hidden = Tensor(np.zeros((1, d_h), dtype=embedded.dtype))
        cell = Tensor(np.zeros((1, d_h), dtype=embedded.dtype))
        outputs = []
        for step in steps:
            gates = projected[step:step + 1] + ops.matmul(hidden, w_hh)
            input_gate = ops.sigmoid(gates[:, 0:d_h])
            forget_gate = ops.sigmoid(gates[:, d_h:2 * d_h])
            candidate = ops.tanh(gates[:, 2 * d_h:3 * d_h])
            output_gate = ops.sigmoid(gates[:, 3 * d_h:4 * d_h])
            cell = forget_gate * cell + input_gate * candidate
            hidden = output_gate * ops.tanh(cell)
            outputs.append(hidden)
        return outputs

    def bilstm(self, embedded: Tensor, length: int, params: ModelParams) -> Tensor:
        """max_len x 2d_h states; row i = [forward_i, backward_i], zero past ``length``"""
        max_len = embedded.shape[0]
        if not 1 <= length <= max_len:
            raise DimensionError(f"bilstm: length {length} outside [1, {max_len}]")
        forward = self._run_direction(embedded, list(range(length)), "fwd", params)
        backward = self._run_direction(embedded, list(reversed(range(length))), "bwd", params)
        backward.reverse()

        rows = [ops.concat([f, b], axis=1) for f, b in zip(forward, backward)]
        if length < max_len:
            rows.append(Tensor(np.zeros((max_len - length, 2 * self.dims.d_h), dtype=embedded.dtype)))
        return ops.concat(rows, axis=0)

    def attention_pool(self, states: Tensor, length: int, params: ModelParams,
                       return_weights: bool = False):
        """r_l = W_l(sum_i alpha_i h_i) + b_l with alpha = softmax over valid words of fc(h_i)"""
        max_len = states.shape[0]
        scores = ops.linear(states, params["text.attn.weight"], params["text.attn.bias"])
        valid = np.arange(max_len) < length
        alpha = ops.softmax(scores.reshape(max_len), axis=0, mask=valid)
        pooled = ops.matmul(alpha.reshape(1, max_len), states)
        reference = ops.linear(pooled, params["text.proj.weight"], params["text.proj.bias"]).reshape(self.dims.c_v)
        if return_weights:
            return reference, alpha
        return reference

    def encode(self, sentence: Sentence, params: ModelParams) -> Tensor:
        embedded = self.embed(sentence, params)
        states = self.bilstm(embedded, sentence.length, params)
        return self.attention_pool(states, sentence.length, params)

    def encode_with_weights(self, sentence: Sentence, params: ModelParams) -> Tuple[Tensor, Tensor]:
        embedded = self.embed(sentence, params)
        states = self.bilstm(embedded, sentence.length, params)
        return self.attention_pool(states, sentence.length, params, return_weights=True)
