"""
Tests for the linguistic encoder
"""
import numpy as np
import pytest

from src.engine import Tape
from src.exceptions import DimensionError
from src.models import PAD_ID, ModelParams, Sentence
from src.services.synthgen import TOKEN_IDS, make_sentence
from src.services.text_encoder import TextEncoder


@pytest.fixture
def encoder(tiny_dims):
    return TextEncoder(tiny_dims)


@pytest.fixture
def params(encoder):
    params = ModelParams()
    encoder.init_params(params, np.random.default_rng(0))
    return params


class TestTextEncoder:
    """Embedding, BiLSTM and attention pooling"""

    def test_reference_shape(self, encoder, params, tiny_dims):
        """r_l has one value per fused visual channel"""
        r_l = encoder.encode(make_sentence("the small red circle", 1, tiny_dims.max_len), params)
        assert r_l.shape == (tiny_dims.c_v,)
        assert np.all(np.isfinite(r_l.data))

    def test_padding_content_is_ignored(self, encoder, params, tiny_dims):
        """Token ids past the true length do not change r_l"""
        sentence = make_sentence("the large blue square", 1, tiny_dims.max_len)
        noisy = sentence.tokens.copy()
        noisy[sentence.length:] = TOKEN_IDS["yellow"]
        other = Sentence(tokens=noisy, length=sentence.length, referent_id=1)
        np.testing.assert_array_equal(encoder.encode(sentence, params).data, encoder.encode(other, params).data)

    def test_states_are_zero_past_length(self, encoder, params, tiny_dims):
        """BiLSTM rows beyond the sentence length are zero"""
        sentence = make_sentence("the red circle", 1, tiny_dims.max_len)
        states = encoder.bilstm(encoder.embed(sentence, params), sentence.length, params)
        assert states.shape == (tiny_dims.max_len, 2 * tiny_dims.d_h)
        np.testing.assert_array_equal(states.data[sentence.length:], 0.0)

    def test_attention_weights(self, encoder, params, tiny_dims):
        """Word weights sum to one over valid words and vanish on padding"""
        sentence = make_sentence("the small green triangle", 2, tiny_dims.max_len)
        _, alpha = encoder.encode_with_weights(sentence, params)
        assert alpha.data.sum() == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_array_equal(alpha.data[sentence.length:], 0.0)
        assert np.all(alpha.data[:sentence.length] > 0.0)

    def test_different_sentences_differ(self, encoder, params, tiny_dims):
        """The reference depends on the words"""
        left = encoder.encode(make_sentence("the red circle moving left", 1, tiny_dims.max_len), params)
        right = encoder.encode(make_sentence("the red circle moving right", 1, tiny_dims.max_len), params)
        assert not np.allclose(left.data, right.data)

    def test_length_out_of_range(self, encoder, params, tiny_dims):
        """bilstm refuses lengths outside [1, max_len]"""
        sentence = make_sentence("the red circle", 1, tiny_dims.max_len)
        with pytest.raises(DimensionError):
            encoder.bilstm(encoder.embed(sentence, params), 0, params)
        with pytest.raises(DimensionError):
            encoder.bilstm(encoder.embed(sentence, params), tiny_dims.max_len + 1, params)

    def test_padding_row_gets_no_gradient(self, encoder, params, tiny_dims):
        """Only embedding rows of real words receive gradient"""
        sentence = make_sentence("the small red circle", 1, tiny_dims.max_len)
        with Tape() as tape:
            loss = encoder.encode(sentence, params).sum()
        tape.backward(loss)
        grad = params["text.embedding"].grad
        np.testing.assert_array_equal(grad[PAD_ID], 0.0)
        np.testing.assert_array_equal(grad[TOKEN_IDS["blue"]], 0.0)
        assert np.any(grad[TOKEN_IDS["red"]] != 0.0)
