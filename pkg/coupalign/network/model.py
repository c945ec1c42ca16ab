"""
完整的 CoupAlign 网络：编码器 (穿插 WPA) -> 跨模态融合 -> 掩码生成器 + 分割头 -> SMA -> 上采样
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from coupalign.config import RunConfig
from coupalign.data.vocab import VOCAB_SIZE
from coupalign.network.decoder import MaskGenerator, MaskHead, SegHead, SentenceMaskAlignment
from coupalign.network.encoders import NUM_STAGES, ImageEncoder, LanguageEncoder, extract_sentence
from coupalign.network.fusion import CrossFusion
from coupalign.network.params import ParamStore
from coupalign.network.wpa import WordPixelAlignment
from coupalign.tensor import Tensor, bilinear_upsample, reshape

logger = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class Prediction:
    logits: Tensor                      # M'，[B, H, W]
    m: Tensor                           # M，[B, H/p, W/p]
    y_1: Tensor                         # [B, H/p, W/p, d_s]
    l_g: Tensor                         # [B, 1, D]
    q_w: Optional[Tensor] = None        # [B, N]，关闭 SMA 时为 None
    y_n: Optional[Tensor] = None        # [B, N, H/p, W/p]
    token_mask: Optional[np.ndarray] = None
    wpa_attn: dict[int, np.ndarray] = field(default_factory=dict)   # 阶段 -> [B, h_i*w_i, T]
    fusion_attn: Optional[np.ndarray] = None


class CoupAlign:
    def __init__(self, run: RunConfig, vocab_size: int = VOCAB_SIZE, store: Optional[ParamStore] = None):
        m = run.model
        self.run = run
        self.store = store or ParamStore(seed=run.seed, dtype=DTYPES[m.precision])
        self.patch = m.patch_size
        h1, w1 = run.data.height // m.patch_size, run.data.width // m.patch_size
        self.image = ImageEncoder(self.store, m.patch_size, m.c1, m.heads, m.mlp_ratio)
        self.language = LanguageEncoder(self.store, vocab_size, run.data.t_max, m.d_lang, m.heads, m.mlp_ratio)
        self.channels = [self.image.channels(i) for i in range(1, NUM_STAGES + 2)]
        self.wpa = {i: WordPixelAlignment(self.store, i, self.channels[i - 1], m.d_lang, m.d_joint)
                    for i in range(1, NUM_STAGES + 1)}
        c_o = self.channels[-1]
        grid_o = (h1 // 2 ** NUM_STAGES, w1 // 2 ** NUM_STAGES)
        self.fusion = CrossFusion(self.store, grid_o, c_o, m.d_lang, run.fusion.heads)
        self.generator = MaskGenerator(self.store, m.n_queries, m.d_q, c_o, m.decoder_layers, m.heads, m.mlp_ratio)
        self.seg_head = SegHead(self.store, self.channels[:NUM_STAGES], c_o, m.d_s, m.rho_order)
        self.sma = SentenceMaskAlignment(self.store, m.d_q, m.d_s, m.d_lang)
        self.mask_head = MaskHead(self.store, m.d_s)
        logger.debug(f"CoupAlign 参数量 {self.store.count()}，V_o 网格 {grid_o}，通道 {self.channels}")

    def encode(self, images: Tensor, tokens: np.ndarray) -> tuple[list[Tensor], Tensor, Tensor, np.ndarray, dict]:
        """返回 ({V_1..V_4}, V_o, L_o, 填充掩码, 各级 WPA 注意力)"""
        v = self.image.embed(images)
        l, mask = self.language.embed(tokens)
        features, attn_maps = [], {}
        for i in range(1, NUM_STAGES + 1):
            features.append(v)
            mode = self.run.wpa.mode if self.run.wpa.enabled(i) else "off"
            v_in, l_in, attn = self.wpa[i](v, l, mask, mode)
            if attn is not None:
                attn_maps[i] = attn.data
            v = self.image.stages[i - 1](v_in)
            l = self.language.stages[i - 1](l_in, mask)
        return features, v, l, mask, attn_maps

    def predict(self, images, tokens: np.ndarray, training: bool = False) -> Prediction:
        """images [B, H, W, 3]，tokens [B, T] -> 上采样到输入尺寸的掩码 logits"""
        images = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.store.dtype))
        if images.ndim == 3:
            images = reshape(images, (1,) + images.shape)
        features, v_o, l_o, mask, attn_maps = self.encode(images, tokens)
        l_g = extract_sentence(l_o)
        s_o, fusion_attn = self.fusion(v_o, l_o, mask)
        y_1 = self.seg_head(s_o, features, training)
        q_w = y_n = None
        if self.run.sma.enabled:
            q_o = self.generator(s_o)
            sma = self.sma(q_o, y_1, l_g)
            q_w, y_n, m = sma.q_w, sma.y_n, sma.m
        else:
            m = self.mask_head(y_1)
        batch, height, width = m.shape
        upsampled = bilinear_upsample(reshape(m, (batch, height, width, 1)), self.patch)
        logits = reshape(upsampled, (batch, height * self.patch, width * self.patch))
        return Prediction(logits=logits, m=m, y_1=y_1, l_g=l_g, q_w=q_w, y_n=y_n, token_mask=mask,
                          wpa_attn=attn_maps, fusion_attn=fusion_attn.data)


def binarize(logits: np.ndarray) -> np.ndarray:
    """σ(M') >= 0.5 等价于 M' >= 0"""
    return (np.asarray(logits) >= 0).astype(np.uint8)
