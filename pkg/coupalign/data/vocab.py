"""
固定词表与分词
"""
import hashlib

import numpy as np

from coupalign.utils.errors import InputError

CLS, PAD = "[CLS]", "[PAD]"
COLORS = ("red", "green", "blue", "yellow", "purple", "orange")
SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "big")
DIRECTIONS = ("left", "right", "top", "bottom")
ORDINALS = ("first", "second", "third", "fourth")
RELATIONS = ("from", "the")

# PAD 必须为 0
WORDS: tuple[str, ...] = (PAD, CLS) + COLORS + SHAPES + SIZES + DIRECTIONS + ORDINALS + RELATIONS
WORD_TO_ID = {word: index for index, word in enumerate(WORDS)}
PAD_ID = WORD_TO_ID[PAD]
CLS_ID = WORD_TO_ID[CLS]
VOCAB_SIZE = len(WORDS)


def vocab_hash() -> str:
    return hashlib.sha256("\n".join(WORDS).encode("utf-8")).hexdigest()[:16]


def tokenize(words, t_max: int = 16) -> np.ndarray:
    """[CLS] + 词 id + PAD 补齐到 t_max"""
    if isinstance(words, str):
        words = words.split()
    words = list(words)
    if len(words) + 1 > t_max:
        raise InputError(f"表达式 {len(words)} 个词超出 T_max={t_max}")
    ids = [CLS_ID]
    for word in words:
        if word not in WORD_TO_ID or word in (CLS, PAD):
            raise InputError(f"词表外的词: {word!r}")
        ids.append(WORD_TO_ID[word])
    ids.extend([PAD_ID] * (t_max - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def detokenize(ids) -> list[str]:
    words = []
    for index in np.asarray(ids).reshape(-1):
        index = int(index)
        if not 0 <= index < VOCAB_SIZE:
            raise InputError(f"token id 越界: {index}")
        if index not in (PAD_ID, CLS_ID):
            words.append(WORDS[index])
    return words
