import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pramana.embeddings import (
    DEFAULT_ALPHABET,
    EmbeddingProvider,
    EmbeddingProviderSpec,
    EmbeddingUnavailable,
    bag_of_chars,
    embed_audio,
    embed_text,
    text_key,
)
from pramana.errors import ConfigError
from pramana.segmentation import AudioSegment

from conftest import write_jsonl

MOCK = EmbeddingProviderSpec("m", "mock_bag_of_chars")


def test_mock_defaults():
    assert MOCK.alphabet == DEFAULT_ALPHABET
    assert MOCK.dimension == len(DEFAULT_ALPHABET)
    assert len(set(DEFAULT_ALPHABET)) == len(DEFAULT_ALPHABET)
    assert not MOCK.validate()


def test_bag_of_chars_counts():
    v = bag_of_chars("aab?", "abc")
    assert np.allclose(v, np.array([2, 1, 0]) / np.sqrt(5))
    assert not bag_of_chars("???", "abc").any()


@given(st.text(alphabet="abcxyz", min_size=1, max_size=20))
def test_bag_of_chars_unit_norm(text):
    assert np.linalg.norm(bag_of_chars(text, "abcxyz")) == pytest.approx(1.0)


def test_mock_audio_uses_reference_text():
    seg = AudioSegment("s", "src", "a.wav", 0, 3, reference_text="अब")
    assert np.array_equal(embed_audio(MOCK, seg), embed_text(MOCK, "अब"))
    with pytest.raises(EmbeddingUnavailable):
        embed_audio(MOCK, AudioSegment("s", "src", "a.wav", 0, 3))


def test_empty_text_unavailable():
    with pytest.raises(EmbeddingUnavailable):
        embed_text(MOCK, "   ")


def test_replay_bit_exact(tmp_path):
    vec = [0.1, 1 / 3, -2.5e-17]
    path = write_jsonl(tmp_path / "e.jsonl", [{"id": text_key("नमस्ते"), "vector": vec}, {"id": "seg1", "vector": [1.0, 0, 0]}])
    spec = EmbeddingProviderSpec("r", "replay", dimension=3, path=str(path))
    prov = EmbeddingProvider(spec)
    assert prov.embed_text("नमस्ते").tolist() == vec
    assert prov.embed_audio(AudioSegment("seg1", "src", "a.wav", 0, 3)).tolist() == [1.0, 0, 0]
    with pytest.raises(EmbeddingUnavailable, match="embedding unavailable"):
        prov.embed_text("missing")


def test_dimension_mismatch(tmp_path):
    path = write_jsonl(tmp_path / "e.jsonl", [{"id": "seg1", "vector": [1.0, 0]}])
    with pytest.raises(EmbeddingUnavailable, match="shape"):
        embed_audio(EmbeddingProviderSpec("r", "replay", dimension=3, path=str(path)), AudioSegment("seg1", "s", "a", 0, 1))


def test_subprocess_provider_matches_mock():
    spec = EmbeddingProviderSpec("p", "subprocess", dimension=len(DEFAULT_ALPHABET),
                                 command=(sys.executable, "-m", "pramana.echo_child"), timeout_s=10)
    prov = EmbeddingProvider(spec)
    try:
        assert np.allclose(prov.embed_text("अबab"), bag_of_chars("अबab", DEFAULT_ALPHABET))
        # the echo child embeds audio as its id
        assert np.allclose(prov.embed_audio(AudioSegment("abc", "s", "a.wav", 0, 1)), bag_of_chars("abc", DEFAULT_ALPHABET))
    finally:
        prov.close()


def test_invalid_spec():
    with pytest.raises(ConfigError):
        EmbeddingProvider(EmbeddingProviderSpec("x", "replay", dimension=3))
    assert EmbeddingProviderSpec("m", "mock_bag_of_chars", alphabet="aab").validate()


def test_spec_roundtrip():
    assert EmbeddingProviderSpec.from_dict(MOCK.to_dict()) == MOCK
