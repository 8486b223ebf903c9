"""Answer location module: a region-proposal head over visual query states, a
per-token probability head over the text streams, a coverage bridge from the
predicted region box to token probabilities, and a soft switch mixing the two.

Formula anchors: docs/mechanism_map.md#token-probability-linguistic,
#gated-visual-aggregation, #region-representation-and-box-head,
#box-regression-loss, #coverage-probability, #soft-switch,
#selection-mixture, #combined-location-loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import (
    AlmBatch,
    ModelConfig,
    TextLayoutEncoder,
    TextLayoutEncoding,
    VisualEncoder,
    VisualEncoding,
    collate_scenes,
)
from .geometry import BBox
from .nn import Linear, ParamStore, load_checkpoint_into, load_checkpoint_meta, save_checkpoint
from .preprocess import AlmTargets
from .vocab import Vocabulary, default_vocab
from .world import SceneInstance, reading_order


@dataclass
class AlmLossConfig:
    lambda1: float = 5.0
    lambda2: float = 2.0
    selection_threshold: float = 0.5
    eps: float = 1e-7
    aux_pl_weight: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("box-loss weights must be non-negative")
        if not 0.0 < self.selection_threshold < 1.0:
            raise ValueError("selection_threshold must be in (0, 1)")


@dataclass
class AlmOutput:
    """Per-scene location outputs (numpy, trimmed to the scene's m tokens)."""

    P_l: np.ndarray
    P_v: np.ndarray
    p_s: float
    P_w: np.ndarray
    b_p: BBox
    h_a: np.ndarray
    selected: list[tuple[int, str]]


@dataclass
class AlmForward:
    """Graph-backed batched forward state (tensors keep the autodiff graph)."""

    P_l: Tensor  # (B, m)
    P_v: Tensor  # (B, m)
    p_s: Tensor  # (B,)
    P_w: Tensor  # (B, m)
    b_p: Tensor  # (B, 4)
    h_a: Tensor  # (B, 2d)
    batch: AlmBatch


# ---------------------------------------------------------------------------
# head math (tensor functions shared by training and the op wrappers)


def _linguistic_head(h_lang: Tensor, h_lay: Tensor, w_l: Tensor, b_l: Tensor) -> Tensor:
    h_l = ad.concat([h_lang, h_lay], axis=-1)
    return ((h_l @ w_l) + b_l)[..., 0].sigmoid()


def _gated_visual(h_v: Tensor, gate: Linear) -> Tensor:
    return (gate(h_v).sigmoid() * h_v).sum(axis=-2)


def _spatial_pool(p_l: Tensor, h_lay: Tensor, tok_valid: np.ndarray) -> Tensor:
    weights = p_l * ad.constant(tok_valid.astype(np.float64))
    return (weights.reshape(*weights.shape, 1) * h_lay).sum(axis=-2)


def _box_from_cxcywh(raw: Tensor) -> Tensor:
    """(cx, cy, w, h) in (0,1) -> clipped corner box; keeps x1<=x2, y1<=y2."""
    cx, cy, w, h = raw[..., 0:1], raw[..., 1:2], raw[..., 2:3], raw[..., 3:4]
    x1 = (cx - w * 0.5).clip(0.0, 1.0)
    y1 = (cy - h * 0.5).clip(0.0, 1.0)
    x2 = (cx + w * 0.5).clip(0.0, 1.0)
    y2 = (cy + h * 0.5).clip(0.0, 1.0)
    return ad.concat([x1, y1, x2, y2], axis=-1)


def coverage_probs_t(b_p: Tensor, boxes: np.ndarray) -> Tensor:
    """Differentiable |A∩B|/|B| of the predicted box against constant token
    boxes; zero-area boxes (padding) get probability 0."""
    bx1, by1, bx2, by2 = (b_p[..., i : i + 1] for i in range(4))
    x1, y1, x2, y2 = (ad.constant(boxes[..., i]) for i in range(4))
    iw = ad.maximum(ad.minimum(bx2, x2) - ad.maximum(bx1, x1), 0.0)
    ih = ad.maximum(ad.minimum(by2, y2) - ad.maximum(by1, y1), 0.0)
    inter = iw * ih
    area_b = (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])
    inv = np.where(area_b > 0.0, 1.0 / np.where(area_b > 0.0, area_b, 1.0), 0.0)
    return inter * ad.constant(inv)


def giou_t(b_p: Tensor, b_a: np.ndarray) -> Tensor:
    """Differentiable generalized IoU against constant target boxes."""
    bx1, by1, bx2, by2 = (b_p[..., i] for i in range(4))
    ax1, ay1, ax2, ay2 = (ad.constant(b_a[..., i]) for i in range(4))
    iw = ad.maximum(ad.minimum(bx2, ax2) - ad.maximum(bx1, ax1), 0.0)
    ih = ad.maximum(ad.minimum(by2, ay2) - ad.maximum(by1, ay1), 0.0)
    inter = iw * ih
    area_p = (bx2 - bx1) * (by2 - by1)
    area_a = (ax2 - ax1) * (ay2 - ay1)
    union = ad.maximum(area_p + area_a - inter, 1e-12)
    hull = ad.maximum(
        (ad.maximum(bx2, ax2) - ad.minimum(bx1, ax1))
        * (ad.maximum(by2, ay2) - ad.minimum(by1, ay1)),
        1e-12,
    )
    return inter / union - (hull - union) / hull


# ---------------------------------------------------------------------------
# model


class AlmModel:
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary | None = None, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab if vocab is not None else default_vocab()
        self.store = ParamStore(np.random.default_rng([seed, 0xA1]))
        d = cfg.d_model
        self.emb = self.store.add("emb.word", (len(self.vocab), d), init="embedding")
        self.text_encoder = TextLayoutEncoder(self.store, cfg, self.emb)
        self.visual_encoder = VisualEncoder(self.store, cfg, self.emb)
        self.w_l = self.store.add("alm.w_l", (2 * d, 1))
        self.b_l = self.store.add("alm.b_l", (1,), init="zeros")
        self.gate = Linear(self.store, "alm.gate", d, d)
        self.bbox_ffn1 = Linear(self.store, "alm.bbox1", 2 * d, cfg.head_hidden)
        self.bbox_ffn2 = Linear(self.store, "alm.bbox2", cfg.head_hidden, 4)
        self.cls_wt = self.store.add("alm.cls_wt", (d, d))
        self.cls_wv = self.store.add("alm.cls_wv", (d, d))
        self.cls_ffn1 = Linear(self.store, "alm.cls1", d, cfg.head_hidden)
        self.cls_ffn2 = Linear(self.store, "alm.cls2", cfg.head_hidden, 1)

    # -- forward -----------------------------------------------------------

    def forward_batch(self, batch: AlmBatch) -> AlmForward:
        batch._store = self.store  # lets the loss wrapper return parameter grads
        h_lang, h_lay, h_t_cls = self.text_encoder(batch)
        h_v, h_v_cls = self.visual_encoder(batch)
        p_l = _linguistic_head(h_lang, h_lay, self.w_l, self.b_l)
        h_va = _gated_visual(h_v, self.gate)
        h_sa = _spatial_pool(p_l, h_lay, batch.tok_valid)
        h_a = ad.concat([h_va, h_sa], axis=-1)
        raw = self.bbox_ffn2(ad.gelu(self.bbox_ffn1(h_a))).sigmoid()
        b_p = _box_from_cxcywh(raw)
        pre = h_t_cls @ self.cls_wt + h_v_cls @ self.cls_wv
        p_s = self.cls_ffn2(ad.gelu(self.cls_ffn1(pre)))[..., 0].sigmoid()
        p_v = coverage_probs_t(b_p, batch.tok_boxes)
        p_w = p_s.reshape(-1, 1) * p_v + (1.0 - p_s.reshape(-1, 1)) * p_l
        return AlmForward(P_l=p_l, P_v=p_v, p_s=p_s, P_w=p_w, b_p=b_p, h_a=h_a, batch=batch)

    def forward_instances(self, instances: list[SceneInstance], targets=None) -> AlmForward:
        batch = collate_scenes(instances, self.vocab, self.cfg, targets=targets)
        return self.forward_batch(batch)

    def output_for(self, fwd: AlmForward, i: int, threshold: float = 0.5) -> AlmOutput:
        inst = fwd.batch.instances[i]
        m = len(inst.tokens)
        p_w = fwd.P_w.data[i, :m]
        return AlmOutput(
            P_l=fwd.P_l.data[i, :m].copy(),
            P_v=fwd.P_v.data[i, :m].copy(),
            p_s=float(fwd.p_s.data[i]),
            P_w=p_w.copy(),
            b_p=BBox.from_seq(fwd.b_p.data[i]),
            h_a=fwd.h_a.data[i].copy(),
            selected=select_words(p_w, inst.tokens, threshold),
        )

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.store, {"kind": "alm", "model": self.cfg.to_dict()})

    @classmethod
    def load(cls, path) -> "AlmModel":
        meta = load_checkpoint_meta(path)
        model = cls(ModelConfig.from_dict(meta["config"]["model"]))
        load_checkpoint_into(path, model.store)
        return model


# ---------------------------------------------------------------------------
# losses


def location_loss_batch(fwd: AlmForward, cfg: AlmLossConfig):
    """Mean over the batch of box-regression loss plus selection loss.

    Returns (loss tensor, float components for logging)."""
    batch = fwd.batch
    if batch.b_a is None or batch.tags is None:
        raise ValueError("batch was collated without targets")
    b = fwd.b_p.shape[0]
    l1 = (fwd.b_p - ad.constant(batch.b_a)).abs().sum(axis=-1)
    g = giou_t(fwd.b_p, batch.b_a)
    loss_bbox = cfg.lambda1 * l1 + cfg.lambda2 * (1.0 - g)
    loss_s = _masked_bce(fwd.P_w, batch.tags, batch.tok_valid, cfg.eps)
    loss = loss_bbox + loss_s
    if cfg.aux_pl_weight > 0.0:
        loss = loss + cfg.aux_pl_weight * _masked_bce(fwd.P_l, batch.tags, batch.tok_valid, cfg.eps)
    total = loss.sum() * (1.0 / b)
    parts = {
        "loss_bbox": float(loss_bbox.data.mean()),
        "loss_s": float(loss_s.data.mean()),
        "loss_a": float(total.data),
    }
    return total, parts


def _masked_bce(p: Tensor, tags: np.ndarray, valid: np.ndarray, eps: float) -> Tensor:
    p_c = p.clip(eps, 1.0 - eps)
    y = ad.constant(tags)
    nll = -(y * p_c.log() + (1.0 - y) * (1.0 - p_c).log())
    return (nll * ad.constant(valid.astype(np.float64))).sum(axis=-1)


def alm_loss(fwd_or_output, targets: AlmTargets, cfg: AlmLossConfig):
    """Single-scene combined loss. Given a graph-backed AlmForward (batch of
    one), returns (value, {param name: gradient}); given a plain AlmOutput,
    returns (value, {})."""
    if isinstance(fwd_or_output, AlmForward):
        fwd = fwd_or_output
        if len(fwd.batch.instances) != 1:
            raise ValueError("alm_loss expects a single-scene forward state")
        batch = fwd.batch
        batch.b_a = targets.b_a.as_array()[None, :]
        tags = np.zeros((1, batch.max_m))
        tags[0, : len(targets.tags)] = targets.tags
        batch.tags = tags
        loss, _ = location_loss_batch(fwd, cfg)
        store = _find_store(fwd)
        if store is not None:
            store.zero_grads()
        loss.backward()
        grads = {}
        if store is not None:
            grads = {
                k: p.grad.copy() for k, p in store.params.items() if p.grad is not None
            }
        return float(loss.data), grads
    out = fwd_or_output
    m = len(out.P_w)
    fake = AlmForward(
        P_l=ad.constant(out.P_l[None, :]),
        P_v=ad.constant(out.P_v[None, :]),
        p_s=ad.constant(np.array([out.p_s])),
        P_w=ad.constant(out.P_w[None, :]),
        b_p=ad.constant(out.b_p.as_array()[None, :]),
        h_a=ad.constant(out.h_a[None, :]),
        batch=AlmBatch(
            lang_ids=np.zeros((1, 1), dtype=np.int64),
            box_feats=np.zeros((1, 1, 6)),
            valid=np.ones((1, 1), dtype=bool),
            tok_start=0,
            max_m=m,
            tok_valid=np.ones((1, m), dtype=bool),
            tok_boxes=np.zeros((1, m, 4)),
            grid=np.zeros((1, 1, 1, 1)),
            b_a=targets.b_a.as_array()[None, :],
            tags=np.array([targets.tags], dtype=np.float64).reshape(1, m),
        ),
    )
    loss, _ = location_loss_batch(fake, cfg)
    return float(loss.data), {}


def _find_store(fwd: AlmForward):
    # the loss wrapper is called with forwards produced by AlmModel, whose
    # store is reachable via the model reference stashed on the batch
    return getattr(fwd.batch, "_store", None)


# ---------------------------------------------------------------------------
# op wrappers over single-scene encodings


def linguistic_probs(enc: TextLayoutEncoding, model: AlmModel) -> np.ndarray:
    """Per-token answer probability from the text streams."""
    with ad.no_grad():
        out = _linguistic_head(
            ad.constant(enc.h_lang), ad.constant(enc.h_lay), model.w_l, model.b_l
        )
    return out.data


def propose_region(
    enc_v: VisualEncoding, enc_t: TextLayoutEncoding, p_l: np.ndarray, model: AlmModel
):
    """Region box and its pooled representation from gated visual states and
    probability-weighted layout states."""
    m = len(p_l)
    with ad.no_grad():
        h_va = _gated_visual(ad.constant(enc_v.h_v[None, :, :]), model.gate)
        h_sa = _spatial_pool(
            ad.constant(p_l[None, :]),
            ad.constant(enc_t.h_lay[None, :, :]),
            np.ones((1, m), dtype=bool),
        )
        h_a = ad.concat([h_va, h_sa], axis=-1)
        raw = model.bbox_ffn2(ad.gelu(model.bbox_ffn1(h_a))).sigmoid()
        b_p = _box_from_cxcywh(raw)
    return BBox.from_seq(b_p.data[0]), h_a.data[0]


def visual_probs(b_p, tokens) -> np.ndarray:
    """Coverage fraction of each token box by the proposed region."""
    from .geometry import iou_hat_batch

    if not tokens:
        return np.zeros(0)
    boxes = np.stack([t.box.as_array() for t in tokens])
    b = np.asarray(b_p.as_array() if isinstance(b_p, BBox) else b_p, dtype=np.float64)
    return iou_hat_batch(np.tile(b, (len(tokens), 1)), boxes)


def soft_switch(h_t_cls: np.ndarray, h_v_cls: np.ndarray, model: AlmModel) -> float:
    """Scalar gate between the visual and linguistic probability spaces."""
    with ad.no_grad():
        pre = ad.constant(h_t_cls[None, :]) @ model.cls_wt + ad.constant(
            h_v_cls[None, :]
        ) @ model.cls_wv
        p = model.cls_ffn2(ad.gelu(model.cls_ffn1(pre)))[..., 0].sigmoid()
    return float(p.data[0])


def mix_probs(p_s: float, p_v: np.ndarray, p_l: np.ndarray) -> np.ndarray:
    """Convex combination per token: p_s * P_v + (1 - p_s) * P_l."""
    p_v = np.asarray(p_v, dtype=np.float64)
    p_l = np.asarray(p_l, dtype=np.float64)
    if p_v.shape != p_l.shape:
        raise ValueError(f"length mismatch: {p_v.shape} vs {p_l.shape}")
    return p_s * p_v + (1.0 - p_s) * p_l


def select_words(p_w: np.ndarray, tokens, threshold: float) -> list[tuple[int, str]]:
    """Indices with probability above threshold (argmax fallback, smallest
    index on ties), presented in reading order."""
    if len(tokens) == 0:
        return []
    p_w = np.asarray(p_w, dtype=np.float64)
    picked = [i for i in range(len(tokens)) if p_w[i] > threshold]
    if not picked:
        picked = [int(np.argmax(p_w))]
    rank = {t: r for r, t in enumerate(reading_order(tokens))}
    picked.sort(key=lambda i: rank[i])
    return [(i, tokens[i].word) for i in picked]
