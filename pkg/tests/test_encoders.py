import numpy as np
import pytest

from coupalign.data.vocab import VOCAB_SIZE, tokenize
from coupalign.network.encoders import (
    ImageStage,
    LanguageEncoder,
    LanguageStage,
    PatchEmbed,
    TokenEmbedding,
    extract_sentence,
)
from coupalign.network.params import ParamStore
from coupalign.tensor import Tensor
from coupalign.utils.errors import ContractError, InputError


@pytest.fixture
def store():
    return ParamStore(seed=0, dtype=np.float64)


def zero_params(store, prefix=""):
    for _, tensor in store.named_parameters(prefix):
        tensor.data = np.zeros_like(tensor.data)


def test_image_stage_halves_resolution_and_doubles_channels(store):
    stage = ImageStage(store, 1, 16, 2, 2)
    out = stage(Tensor(np.random.default_rng(0).normal(size=(1, 8, 8, 16))))
    assert out.shape == (1, 4, 4, 32)


def test_image_stage_zero_weights_zero_input(store):
    stage = ImageStage(store, 1, 4, 2, 2)
    zero_params(store)
    out = stage(Tensor(np.zeros((1, 4, 4, 4))))
    assert np.array_equal(out.data, np.zeros((1, 2, 2, 8)))


def test_image_stage_odd_extent(store):
    stage = ImageStage(store, 1, 4, 2, 2)
    with pytest.raises(ContractError):
        stage(Tensor(np.zeros((1, 3, 4, 4))))


def test_patch_embed_is_local(store):
    embed = PatchEmbed(store, 2, 4)
    rng = np.random.default_rng(1)
    images = rng.uniform(size=(1, 4, 4, 3))
    changed = images.copy()
    changed[0, 2:, :, :] = rng.uniform(size=(2, 4, 3))
    a, b = embed(Tensor(images)).data, embed(Tensor(changed)).data
    assert a.shape == (1, 2, 2, 4)
    assert np.array_equal(a[0, 0], b[0, 0])
    assert not np.array_equal(a[0, 1], b[0, 1])


def test_single_token_attends_to_itself(store):
    stage = LanguageStage(store, 1, 8, 2, 2)
    l = Tensor(np.random.default_rng(0).normal(size=(1, 1, 8)))
    _, weights = stage.block(l, key_mask=np.array([[True]]))
    assert np.array_equal(weights.data, np.ones((1, 2, 1, 1)))


def test_padded_tokens_receive_zero_attention(store):
    stage = LanguageStage(store, 1, 8, 2, 2)
    l = Tensor(np.random.default_rng(0).normal(size=(1, 4, 8)))
    mask = np.array([[True, True, True, False]])
    _, weights = stage.block(l, key_mask=mask)
    assert np.all(weights.data[..., 3] == 0.0)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0)


def test_padding_does_not_change_valid_outputs(store):
    stage = LanguageStage(store, 1, 8, 2, 2)
    rng = np.random.default_rng(2)
    l = rng.normal(size=(1, 4, 8))
    other = l.copy()
    other[0, 3] = rng.normal(size=8) * 10
    mask = np.array([[True, True, True, False]])
    a, b = stage(Tensor(l), mask).data, stage(Tensor(other), mask).data
    np.testing.assert_allclose(a[0, :3], b[0, :3], atol=1e-12)


def test_all_padding_rejected(store):
    stage = LanguageStage(store, 1, 8, 2, 2)
    with pytest.raises(ContractError):
        stage(Tensor(np.zeros((1, 2, 8))), np.array([[False, False]]))


def test_embedding_lookup(store):
    embed = TokenEmbedding(store, VOCAB_SIZE, 8, 6)
    ids = np.array([[1, 5, 5]])
    out, mask = embed(ids)
    assert np.array_equal(out.data[0, 1], embed.tokens.data[5] + embed.positions.data[1])
    np.testing.assert_allclose(out.data[0, 1] - out.data[0, 2], embed.positions.data[1] - embed.positions.data[2])
    assert mask.tolist() == [[True, True, True]]


@pytest.mark.parametrize("ids", [np.zeros((1, 0), dtype=np.int64), np.array([[1, VOCAB_SIZE]]),
                                 np.array([[1, -1]]), np.ones((1, 9), dtype=np.int64)])
def test_embedding_rejects_bad_ids(store, ids):
    embed = TokenEmbedding(store, VOCAB_SIZE, 8, 6)
    with pytest.raises(InputError):
        embed(ids)


def test_sentence_vector_ignores_padding(store):
    encoder = LanguageEncoder(store, VOCAB_SIZE, 8, 8, 2, 2)
    tokens = tokenize(["red", "circle"], 8)[None]

    def sentence(l):
        mask = tokens != 0
        for stage in encoder.stages:
            l = stage(l, mask)
        return extract_sentence(l).data

    embedded, _ = encoder.embed(tokens)
    noisy = embedded.data.copy()
    noisy[0, 3:] += 5.0
    first = sentence(embedded)
    assert first.shape == (1, 1, 8)
    np.testing.assert_allclose(first, sentence(Tensor(noisy)), atol=1e-12)
