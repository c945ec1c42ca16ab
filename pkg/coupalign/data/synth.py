"""
合成指代分割数据：硬边几何形状场景 + 组合式指代表达式 + 精确真值掩码

每个样本的随机数由 (seed, split, index) 派生，生成结果与顺序无关。
序数/方位按物体中心坐标排序，坐标相同时按垂直方向坐标排序。
"""
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from coupalign.data.vocab import COLORS, DIRECTIONS, ORDINALS, SHAPES, SIZES, tokenize
from coupalign.schemas.sample import ObjectMeta, SampleMeta
from coupalign.utils.errors import DataError

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "1"
SPLITS = {"train": 0, "val": 1, "test": 2}
BACKGROUND = (0.12, 0.12, 0.12)
PALETTE = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.75, 0.20),
    "blue": (0.15, 0.30, 0.95),
    "yellow": (0.95, 0.90, 0.10),
    "purple": (0.60, 0.20, 0.80),
    "orange": (1.00, 0.55, 0.00),
}
MIN_VISIBLE = 0.5
MAX_RETRIES = 50


@dataclass
class Sample:
    image: np.ndarray       # [H, W, 3] float32, 取值 [0, 1]
    tokens: np.ndarray      # [T_max] int64
    mask: np.ndarray        # [H, W] uint8
    meta: SampleMeta


@dataclass(frozen=True)
class Expression:
    template: str
    shape: str
    color: Optional[str] = None
    size: Optional[str] = None
    ordinal: int = 0
    direction: Optional[str] = None

    def words(self) -> list[str]:
        colour = [self.color] if self.color else []
        if self.template == "attr":
            return ([self.size] if self.size else []) + colour + [self.shape]
        if self.template == "ordinal":
            return ["the", ORDINALS[self.ordinal]] + colour + [self.shape, "from", self.direction]
        return colour + [self.shape, self.direction]


def parse_expression(words: Sequence[str]) -> Expression:
    """把词序列解析回 Expression，格式不合法时抛出 DataError"""
    words = list(words)
    try:
        if words and words[0] == "the":
            ordinal = ORDINALS.index(words[1])
            if words[-2] != "from" or words[-1] not in DIRECTIONS:
                raise ValueError
            middle = words[2:-2]
            color = middle[0] if len(middle) == 2 else None
            shape = middle[-1]
            return _checked(Expression("ordinal", shape, color=color, ordinal=ordinal, direction=words[-1]))
        if words and words[-1] in DIRECTIONS:
            color = words[0] if len(words) == 3 else None
            return _checked(Expression("extreme", words[-2], color=color, direction=words[-1]))
        size = words[0] if words and words[0] in SIZES else None
        rest = words[1:] if size else words
        color = rest[0] if len(rest) == 2 else None
        return _checked(Expression("attr", rest[-1], color=color, size=size))
    except (ValueError, IndexError):
        raise DataError(f"无法解析的表达式: {' '.join(words)!r}") from None


def _checked(expr: Expression) -> Expression:
    if expr.shape not in SHAPES or (expr.color is not None and expr.color not in COLORS):
        raise ValueError
    return expr


def order_along(objects: Sequence[ObjectMeta], indices: Sequence[int], direction: str) -> list[int]:
    keys = {
        "left": lambda i: (objects[i].cx, objects[i].cy),
        "right": lambda i: (-objects[i].cx, objects[i].cy),
        "top": lambda i: (objects[i].cy, objects[i].cx),
        "bottom": lambda i: (-objects[i].cy, objects[i].cx),
    }
    return sorted(indices, key=keys[direction])


def resolve(expr: Expression, objects: Sequence[ObjectMeta]) -> list[int]:
    """返回满足表达式的全部物体下标"""
    candidates = [
        i for i, obj in enumerate(objects)
        if obj.shape == expr.shape
        and (expr.color is None or obj.color == expr.color)
        and (expr.template != "attr" or expr.size is None or obj.size == expr.size)
    ]
    if expr.template == "attr":
        return candidates
    ranked = order_along(objects, candidates, expr.direction)
    return [ranked[expr.ordinal]] if expr.ordinal < len(ranked) else []


def rasterize(obj: ObjectMeta, height: int, width: int) -> np.ndarray:
    """硬边光栅化，像素中心取 (x + 0.5, y + 0.5)"""
    ys, xs = np.mgrid[0:height, 0:width] + 0.5
    dx, dy = xs - obj.cx, ys - obj.cy
    if obj.shape == "circle":
        return dx * dx + dy * dy <= obj.radius ** 2
    if obj.shape == "square":
        return (np.abs(dx) <= obj.radius) & (np.abs(dy) <= obj.radius)
    # 顶点朝上的等腰三角形
    depth = dy + obj.radius
    return (depth >= 0) & (dy <= obj.radius) & (np.abs(dx) <= depth / 2)


def render(objects: Sequence[ObjectMeta], height: int, width: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """按列表顺序 (z 序) 绘制，返回图像与每个物体的可见掩码"""
    image = np.empty((height, width, 3), dtype=np.float32)
    image[:] = BACKGROUND
    rasters = [rasterize(obj, height, width) for obj in objects]
    for obj, raster in zip(objects, rasters):
        image[raster] = PALETTE[obj.color]
    visible = []
    covered = np.zeros((height, width), dtype=bool)
    for raster in reversed(rasters):
        visible.append(raster & ~covered)
        covered |= raster
    return image, visible[::-1]


def compose_sample(objects: Sequence[ObjectMeta], words: Sequence[str], height: int = 64, width: int = 64,
                   t_max: int = 16, index: int = 0, split: str = "train") -> Sample:
    """由给定场景与表达式构造样本；表达式必须唯一指向一个物体"""
    expr = parse_expression(words)
    matches = resolve(expr, objects)
    if len(matches) != 1:
        raise DataError(f"表达式 {' '.join(words)!r} 匹配了 {len(matches)} 个物体")
    referent = matches[0]
    image, visible = render(objects, height, width)
    mask = visible[referent].astype(np.uint8)
    meta = SampleMeta(index=index, split=split, expression=" ".join(words), template=expr.template,
                      referent=referent, objects=list(objects), visible_pixels=int(mask.sum()))
    return Sample(image=image, tokens=tokenize(words, t_max), mask=mask, meta=meta)


def _sample_scene(rng: np.random.Generator, height: int, width: int) -> tuple[list[ObjectMeta], int]:
    count = int(rng.integers(2, 7))
    shape = SHAPES[rng.integers(len(SHAPES))]
    same = int(rng.integers(2, count + 1))
    shapes = [shape] * same + [SHAPES[rng.integers(len(SHAPES))] for _ in range(count - same)]
    scale = min(height, width)
    objects = []
    for obj_shape in shapes:
        size = SIZES[rng.integers(len(SIZES))]
        radius = scale * (rng.uniform(0.07, 0.10) if size == "small" else rng.uniform(0.14, 0.19))
        cx = float(rng.integers(int(np.ceil(radius)), int(width - radius) + 1))
        cy = float(rng.integers(int(np.ceil(radius)), int(height - radius) + 1))
        objects.append(ObjectMeta(shape=obj_shape, color=COLORS[rng.integers(len(COLORS))], size=size,
                                  cx=cx, cy=cy, radius=float(radius)))
    order = rng.permutation(count)
    objects = [objects[i] for i in order]
    referent = int(np.flatnonzero(order < same)[rng.integers(same)])
    return objects, referent


def _describe(rng: np.random.Generator, objects: list[ObjectMeta], referent: int) -> Optional[Expression]:
    """为被指物体找一个唯一的表达式，找不到返回 None"""
    target = objects[referent]
    options: dict[str, list[Expression]] = {
        "attr": [Expression("attr", target.shape, color=c, size=s)
                 for s, c in ((None, None), (None, target.color), (target.size, None), (target.size, target.color))],
        "ordinal": [Expression("ordinal", target.shape, color=c, ordinal=k, direction=d)
                    for d in rng.permutation(DIRECTIONS) for c in (None, target.color) for k in range(len(ORDINALS))],
        "extreme": [Expression("extreme", target.shape, color=c, direction=d)
                    for d in rng.permutation(DIRECTIONS) for c in (None, target.color)],
    }
    for template in rng.permutation(list(options)):
        for expr in options[template]:
            if resolve(expr, objects) == [referent]:
                return expr
    return None


def generate_sample(seed: int, index: int, height: int = 64, width: int = 64, t_max: int = 16,
                    split: str = "train") -> Sample:
    rng = np.random.default_rng([seed, SPLITS[split], index])
    for attempt in range(MAX_RETRIES):
        objects, referent = _sample_scene(rng, height, width)
        expr = _describe(rng, objects, referent)
        if expr is None:
            continue
        sample = compose_sample(objects, expr.words(), height, width, t_max, index, split)
        full = int(rasterize(objects[referent], height, width).sum())
        if sample.meta.visible_pixels < MIN_VISIBLE * full:
            continue
        sample.meta.retries = attempt
        return sample
    raise DataError(f"样本 {split}/{index} 重试 {MAX_RETRIES} 次仍无法生成唯一指代")


class Dataset:
    """内存中的样本集合"""

    def __init__(self, samples: list[Sample], seed: int = 0, split: str = "train"):
        self.samples = samples
        self.seed = seed
        self.split = split

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples[0].mask.shape

    def batch(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """返回 (images [B,H,W,3], tokens [B,T], masks [B,H,W])"""
        chosen = [self.samples[i] for i in indices]
        return (np.stack([s.image for s in chosen]), np.stack([s.tokens for s in chosen]),
                np.stack([s.mask for s in chosen]))

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator[np.ndarray]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield order[start:start + batch_size]


def generate(seed: int, n_samples: int, height: int = 64, width: int = 64, t_max: int = 16,
             split: str = "train") -> Dataset:
    samples = [generate_sample(seed, i, height, width, t_max, split) for i in range(n_samples)]
    retries = sum(s.meta.retries or 0 for s in samples)
    logger.info(f"生成 {split} 集 {n_samples} 个样本 (seed={seed}，重试 {retries} 次)")
    return Dataset(samples, seed=seed, split=split)
