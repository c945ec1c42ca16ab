import numpy as np
import pytest

from coupalign.data.store import MANIFEST, load_dataset, load_split, save_dataset
from coupalign.data.synth import (
    Dataset,
    compose_sample,
    generate,
    generate_sample,
    parse_expression,
    rasterize,
    resolve,
)
from coupalign.data.vocab import CLS_ID, PAD_ID, VOCAB_SIZE, WORDS, detokenize, tokenize
from coupalign.schemas.sample import ObjectMeta
from coupalign.utils.errors import DataError, FormatError, InputError, UnsupportedVersionError


def circle(cx, cy=32.0, radius=5.0, color="red", size="small"):
    return ObjectMeta(shape="circle", color=color, size=size, cx=cx, cy=cy, radius=radius)


def test_vocabulary():
    assert VOCAB_SIZE <= 32
    assert PAD_ID == 0
    assert len(set(WORDS)) == VOCAB_SIZE


def test_tokenize():
    ids = tokenize(["red", "circle"], 6)
    assert ids.tolist()[:3] == [CLS_ID, WORDS.index("red"), WORDS.index("circle")]
    assert ids.tolist()[3:] == [PAD_ID] * 3
    assert detokenize(ids) == ["red", "circle"]
    assert tokenize([], 4).tolist() == [CLS_ID, PAD_ID, PAD_ID, PAD_ID]


@pytest.mark.parametrize("words", [["red", "dragon"], ["red"] * 8, ["[PAD]"]])
def test_tokenize_errors(words):
    with pytest.raises(InputError):
        tokenize(words, 8)


def test_generation_is_deterministic_and_order_independent():
    dataset = generate(seed=3, n_samples=5, height=64, width=64)
    again = generate_sample(3, 3)
    assert np.array_equal(dataset[3].image, again.image)
    assert np.array_equal(dataset[3].mask, again.mask)
    assert dataset[3].meta == again.meta
    assert not np.array_equal(generate_sample(4, 3).image, again.image)


def test_splits_differ():
    assert generate_sample(0, 0, split="train").meta != generate_sample(0, 0, split="val").meta


@pytest.fixture(scope="module")
def samples():
    return [generate_sample(11, index) for index in range(30)]


def test_expressions_resolve_to_exactly_the_referent(samples):
    for sample in samples:
        expr = parse_expression(sample.meta.expression.split())
        assert resolve(expr, sample.meta.objects) == [sample.meta.referent]


def test_masks_are_visible_part_of_referent(samples):
    for sample in samples:
        meta = sample.meta
        raster = rasterize(meta.objects[meta.referent], 64, 64)
        assert int(sample.mask.sum()) == meta.visible_pixels
        assert not np.any(sample.mask.astype(bool) & ~raster)
        assert meta.visible_pixels >= 0.5 * raster.sum()
        for later in meta.objects[meta.referent + 1:]:
            assert not np.any(sample.mask.astype(bool) & rasterize(later, 64, 64))


def test_scenes_are_crowded(samples):
    for sample in samples:
        objects = sample.meta.objects
        assert 2 <= len(objects) <= 6
        target = objects[sample.meta.referent]
        assert sum(obj.shape == target.shape for obj in objects) >= 2
    templates = {sample.meta.template for sample in samples}
    assert len(templates) >= 2


def test_single_object_scene():
    obj = circle(20.0)
    sample = compose_sample([obj], ["red", "circle"])
    assert np.array_equal(sample.mask, rasterize(obj, 64, 64).astype(np.uint8))
    assert sample.image.shape == (64, 64, 3)
    assert sample.image.dtype == np.float32


def test_ordinal_from_left():
    objects = [circle(50.0), circle(10.0), circle(30.0)]
    sample = compose_sample(objects, "the second circle from left".split())
    assert sample.meta.referent == 2
    assert np.array_equal(sample.mask, rasterize(objects[2], 64, 64).astype(np.uint8))
    assert compose_sample(objects, "circle right".split()).meta.referent == 0


def test_occlusion_removes_pixels():
    below, above = circle(30.0, radius=8.0), circle(36.0, radius=8.0, color="blue")
    sample = compose_sample([below, above], ["red", "circle"])
    raster = rasterize(below, 64, 64)
    assert 0 < sample.mask.sum() < raster.sum()


@pytest.mark.parametrize("words", [["circle"], ["the", "fourth", "circle", "from", "left"], ["green", "circle"]])
def test_ambiguous_or_empty_expressions_rejected(words):
    with pytest.raises(DataError):
        compose_sample([circle(10.0), circle(40.0)], words)


def test_unparseable_expression():
    with pytest.raises(DataError):
        parse_expression(["the", "circle"])


def test_batches_cover_dataset(tiny_train):
    seen = np.concatenate(list(tiny_train.batches(3, np.arange(len(tiny_train))[::-1])))
    assert sorted(seen.tolist()) == list(range(len(tiny_train)))
    images, tokens, masks = tiny_train.batch([0, 1])
    assert images.shape == (2, 32, 32, 3) and tokens.shape == (2, 8) and masks.shape == (2, 32, 32)


def test_save_and_load_round_trip(tmp_path, tiny_val):
    save_dataset(tiny_val, tmp_path / "val")
    loaded = load_split(tmp_path, "val")
    assert len(loaded) == len(tiny_val)
    assert loaded.split == "val"
    for a, b in zip(tiny_val.samples, loaded.samples):
        assert a.image.tobytes() == b.image.tobytes()
        assert np.array_equal(a.mask, b.mask) and np.array_equal(a.tokens, b.tokens)
        assert a.meta == b.meta


def test_missing_and_corrupt_files(tmp_path, tiny_val):
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "nothing")
    save_dataset(tiny_val, tmp_path / "val")
    sample_file = tmp_path / "val" / "samples" / "0.catn"
    payload = bytearray(sample_file.read_bytes())
    payload[4] = 9
    sample_file.write_bytes(bytes(payload))
    with pytest.raises(UnsupportedVersionError):
        load_dataset(tmp_path / "val")
    sample_file.write_bytes(b"junk")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "val")


def test_vocab_hash_mismatch(tmp_path, tiny_val):
    save_dataset(tiny_val, tmp_path / "val")
    manifest = tmp_path / "val" / MANIFEST
    text = manifest.read_text(encoding="utf-8")
    lines = [line if not line.startswith("vocab_hash") else "vocab_hash = 0000" for line in text.splitlines()]
    manifest.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "val")


def test_empty_dataset_not_saved(tmp_path):
    with pytest.raises(DataError):
        save_dataset(Dataset([]), tmp_path / "empty")
