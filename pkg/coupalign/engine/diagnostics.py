"""
梯度检验套件：对每个可微算子、网络组件、损失以及 16x16 端到端流程做 float64 中心差分检验
"""
import logging
from typing import Callable, Sequence

import numpy as np

from coupalign.config import RunConfig, build_run_config
from coupalign.data.vocab import tokenize
from coupalign.engine.losses import aux_loss, seg_loss
from coupalign.network.decoder import MaskGenerator, SegHead, SentenceMaskAlignment
from coupalign.network.encoders import ImageStage, LanguageStage
from coupalign.network.fusion import CrossFusion
from coupalign.network.model import CoupAlign
from coupalign.network.params import ParamStore
from coupalign.network.wpa import WordPixelAlignment
from coupalign.schemas.report import GradCheckRow
from coupalign.tensor import (
    BatchNormState,
    Tensor,
    batch_norm,
    bilinear_upsample,
    concat,
    conv2d,
    default_dtype,
    div,
    exp,
    grad_check,
    l2_normalize,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    relu,
    sigmoid,
    softmax,
    softplus,
    tanh,
    tsum,
)

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
PIPELINE_COORDS = 96

Check = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray]]


def _const(array) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float64))


def weighted_sum(t: Tensor, rng: np.random.Generator) -> Tensor:
    """用固定随机权重把任意张量归约成标量，避免 sum 带来的对称抵消"""
    return tsum(mul(t, _const(rng.normal(size=t.shape))))


def _elementwise(op: Callable[[Tensor], Tensor], positive: bool = False) -> Check:
    def build(rng):
        x = rng.normal(size=(3, 4))
        if positive:
            x = np.abs(x) + 0.5
        w = rng.normal(size=(3, 4))
        return (lambda t: tsum(mul(op(t), _const(w)))), x
    return build


def _matmul(rng):
    b, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
    return (lambda t: tsum(mul(matmul(t, _const(b)), _const(w)))), rng.normal(size=(3, 4))


def _softmax_matmul(rng):
    b, w = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    return (lambda t: tsum(mul(softmax(matmul(t, _const(b)), axis=-1), _const(w)))), rng.normal(size=(3, 3))


def _masked_softmax(rng):
    mask = np.array([[True, True, False, True], [True, False, True, True], [False, True, True, True]])
    w = rng.normal(size=(3, 4))
    return (lambda t: tsum(mul(softmax(t, axis=-1, mask=mask), _const(w)))), rng.normal(size=(3, 4))


def _logsumexp(rng):
    w = rng.normal(size=(3,))
    return (lambda t: tsum(mul(logsumexp(t, axis=1), _const(w)))), rng.normal(size=(3, 4))


def _concat_mean(rng):
    other, w = rng.normal(size=(2, 4)), rng.normal(size=(4,))
    return (lambda t: tsum(mul(mean(concat([t, _const(other)], axis=0), axis=0), _const(w)))), rng.normal(size=(3, 4))


def _div(rng):
    numerator, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    return (lambda t: tsum(mul(div(_const(numerator), t), _const(w)))), np.abs(rng.normal(size=(3, 4))) + 0.5


def _conv(kernel_size: int, wrt_kernel: bool) -> Check:
    def build(rng):
        x = rng.normal(size=(1, 5, 5, 2))
        kernel = rng.normal(size=(kernel_size, kernel_size, 2, 3))
        bias = _const(rng.normal(size=(3,)))
        w = rng.normal(size=(1, 5, 5, 3))
        if wrt_kernel:
            return (lambda k: tsum(mul(conv2d(_const(x), k, bias), _const(w)))), kernel
        return (lambda t: tsum(mul(conv2d(t, _const(kernel), bias), _const(w)))), x
    return build


def _bilinear(rng):
    w = rng.normal(size=(1, 6, 6, 2))
    return (lambda t: tsum(mul(bilinear_upsample(t, 2), _const(w)))), rng.normal(size=(1, 3, 3, 2))


def _layer_norm(rng):
    gamma, beta, w = rng.normal(size=(5,)), rng.normal(size=(5,)), rng.normal(size=(4, 5))
    return (lambda t: tsum(mul(layer_norm(t, _const(gamma), _const(beta)), _const(w)))), rng.normal(size=(4, 5))


def _batch_norm(rng):
    gamma, beta, w = rng.normal(size=(4,)), rng.normal(size=(4,)), rng.normal(size=(2, 3, 3, 4))
    state = BatchNormState(running_mean=_const(np.zeros(4)), running_var=_const(np.ones(4)))
    return (lambda t: tsum(mul(batch_norm(t, _const(gamma), _const(beta), state, True), _const(w)))), \
        rng.normal(size=(2, 3, 3, 4))


def _store(rng) -> ParamStore:
    return ParamStore(seed=int(rng.integers(2 ** 31)), dtype=np.float64)


def _image_stage(rng):
    stage = ImageStage(_store(rng), 1, 4, 2, 2)
    return (lambda t: weighted_sum(stage(t), np.random.default_rng(1))), rng.normal(size=(1, 4, 4, 4))


def _language_stage(rng):
    stage = LanguageStage(_store(rng), 1, 8, 2, 2)
    mask = np.array([[True, True, True, False]])
    return (lambda t: weighted_sum(stage(t, mask), np.random.default_rng(1))), rng.normal(size=(1, 4, 8))


def _wpa(vision_only: bool) -> Check:
    def build(rng):
        module = WordPixelAlignment(_store(rng), 1, 4, 8, 8)
        mask = np.array([[True, True, False]])
        v = rng.normal(size=(1, 2, 2, 4))
        l = rng.normal(size=(1, 3, 8))
        if vision_only:
            # 只有视觉分支进入损失：∂loss/∂L 经视觉->语言路径仍非零
            return (lambda t: weighted_sum(module(_const(v), t, mask, "bi")[0], np.random.default_rng(1))), l

        def f(t):
            v_next, l_next, _ = module(t, _const(l), mask, "bi")
            return weighted_sum(v_next, np.random.default_rng(1)) + weighted_sum(l_next, np.random.default_rng(2))
        return f, v
    return build


def _fusion(rng):
    module = CrossFusion(_store(rng), (2, 2), 8, 8, 2)
    l = _const(rng.normal(size=(1, 3, 8)))
    mask = np.array([[True, True, False]])
    return (lambda t: weighted_sum(module(t, l, mask)[0], np.random.default_rng(1))), rng.normal(size=(1, 2, 2, 8))


def _mask_generator(rng):
    module = MaskGenerator(_store(rng), 2, 8, 8, 1, 2, 2)
    return (lambda t: weighted_sum(module(t), np.random.default_rng(1))), rng.normal(size=(1, 2, 2, 8))


def _seg_head(rng):
    module = SegHead(_store(rng), [2, 4, 8, 16], 32, 2)
    features = [_const(rng.normal(size=(2, 16 // 2 ** i, 16 // 2 ** i, 2 ** (i + 1)))) for i in range(4)]
    return (lambda t: weighted_sum(module(t, features, True), np.random.default_rng(1))), rng.normal(size=(2, 1, 1, 32))


def _sma(rng):
    module = SentenceMaskAlignment(_store(rng), 8, 4, 8)
    y_1, l_g = _const(rng.normal(size=(1, 3, 3, 4))), _const(rng.normal(size=(1, 1, 8)))

    def f(t):
        out = module(t, y_1, l_g)
        return weighted_sum(out.m, np.random.default_rng(1)) + weighted_sum(out.q_w, np.random.default_rng(2))
    return f, rng.normal(size=(1, 2, 8))


def _seg_loss(rng):
    mask = rng.integers(0, 2, size=(2, 3, 3))
    return (lambda t: tsum(seg_loss(t, mask))), rng.normal(size=(2, 3, 3))


def _aux_loss(rng):
    mask = np.zeros((1, 8, 8), dtype=np.uint8)
    mask[0, :4, :6] = 1
    return (lambda t: tsum(aux_loss(t, mask, tau=0.5))), rng.normal(size=(1, 4, 4, 3))


def pipeline_config(seed: int = 0) -> RunConfig:
    """16x16 图像、T=4、N=2、float64 的小型端到端配置"""
    return build_run_config({
        "seed": seed,
        "data.height": 16, "data.width": 16, "data.t_max": 4,
        "model.patch_size": 1, "model.c1": 4, "model.d_lang": 8, "model.d_joint": 8,
        "model.d_q": 8, "model.d_s": 4, "model.n_queries": 2, "model.decoder_layers": 1,
        "model.precision": "f64",
    })


def _pipeline(training: bool) -> Check:
    """训练模式下 BN 使用批统计量，输出与滑动统计量无关，重复求值结果一致"""
    def check(rng):
        model = CoupAlign(pipeline_config(int(rng.integers(2 ** 31))))
        tokens = tokenize(["red", "circle", "left"], 4)[None, :]
        mask = np.zeros((1, 16, 16), dtype=np.uint8)
        mask[0, 2:9, 3:11] = 1

        def f(t):
            prediction = model.predict(t, tokens, training=training)
            return tsum(seg_loss(prediction.logits, mask)) + tsum(aux_loss(prediction.y_1, mask, tau=0.5))
        return f, rng.uniform(size=(1, 16, 16, 3))
    return check


CHECKS: dict[str, Check] = {
    "matmul": _matmul,
    "softmax∘matmul": _softmax_matmul,
    "softmax(masked)": _masked_softmax,
    "relu": _elementwise(relu),
    "tanh": _elementwise(tanh),
    "sigmoid": _elementwise(sigmoid),
    "softplus": _elementwise(softplus),
    "exp": _elementwise(exp),
    "log": _elementwise(log, positive=True),
    "mul": _elementwise(lambda t: mul(t, t)),
    "div": _div,
    "l2_normalize": _elementwise(lambda t: l2_normalize(t, axis=-1)),
    "logsumexp": _logsumexp,
    "concat+mean": _concat_mean,
    "conv2d3x3(x)": _conv(3, wrt_kernel=False),
    "conv2d3x3(kernel)": _conv(3, wrt_kernel=True),
    "conv2d1x1(x)": _conv(1, wrt_kernel=False),
    "bilinear_upsample": _bilinear,
    "layer_norm": _layer_norm,
    "batch_norm": _batch_norm,
    "image_stage": _image_stage,
    "language_stage": _language_stage,
    "wpa(bi)": _wpa(vision_only=False),
    "wpa(vision->language)": _wpa(vision_only=True),
    "fusion": _fusion,
    "mask_generator": _mask_generator,
    "seg_head": _seg_head,
    "sma": _sma,
    "seg_loss": _seg_loss,
    "aux_loss": _aux_loss,
    "pipeline16x16": _pipeline(training=False),
    "pipeline16x16(train)": _pipeline(training=True),
}


def run_check(name: str, seed: int, tol: float = TOLERANCE) -> GradCheckRow:
    with default_dtype(np.float64):
        f, x = CHECKS[name](np.random.default_rng([seed, len(name)]))
        max_coords = PIPELINE_COORDS if name.startswith("pipeline") else None
        error = grad_check(f, Tensor(np.asarray(x, dtype=np.float64)), tol=tol, max_coords=max_coords, seed=seed)
    return GradCheckRow(name=name, seed=seed, error=error, passed=error < tol)


def run_suite(names: Sequence[str] = (), seeds: Sequence[int] = (0, 1, 2), tol: float = TOLERANCE) -> list[GradCheckRow]:
    rows = []
    for name in names or list(CHECKS):
        for seed in seeds:
            row = run_check(name, seed, tol)
            logger.debug(f"gradcheck {name} seed={seed}: {row.error:.3e}")
            rows.append(row)
    failed = [row for row in rows if not row.passed]
    if failed:
        logger.error(f"梯度检验失败 {len(failed)}/{len(rows)} 项")
    else:
        logger.info(f"梯度检验全部通过 ({len(rows)} 项)")
    return rows


def render_rows(rows: Sequence[GradCheckRow]) -> str:
    width = max(len(row.name) for row in rows)
    lines = [f"{'check'.ljust(width)}  seed  max_rel_err  status"]
    for row in rows:
        lines.append(f"{row.name.ljust(width)}  {row.seed:>4}  {row.error:11.3e}  {'ok' if row.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
