"""Trainable stand-in encoders with the interface shapes the location module needs.

Text side: two parallel 2-layer self-attention stacks (word stream, box
stream) with jointly-computed attention, question tokens prefixed before the
scene-token rows. Reported rows are the scene-token rows only; the word
stream's leading classification slot provides the text summary state.

Visual side: the attribute grid is pooled into 2x2 patches, flattened with
2-D sinusoidal position codes, concatenated with the embedded question, run
through a small encoder, and decoded by learned queries (a prepended
classification query plus ``n_queries`` region queries).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (
    DecoderLayer,
    DualStreamLayer,
    EncoderLayer,
    LayerNorm,
    Linear,
    ParamStore,
    padding_mask,
    sinusoid_1d,
    sinusoid_2d,
)
from .vocab import Vocabulary, default_vocab
from .world import GRID_FEATURES, SceneInstance, SceneTextToken


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_hidden: int = 128
    n_queries: int = 8
    grid_size: int = 16
    grid_features: int = GRID_FEATURES
    patch: int = 2
    head_hidden: int = 64
    max_question_len: int = 12
    max_scene_tokens: int = 16
    check_finite: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TextLayoutEncoding:
    """Per-token states of both text streams plus the text summary state."""

    h_lang: np.ndarray  # (m, d)
    h_lay: np.ndarray  # (m, d)
    h_t_cls: np.ndarray  # (d,)


@dataclass
class VisualEncoding:
    """Region-query states plus the visual summary state."""

    h_v: np.ndarray  # (n_queries, d)
    h_v_cls: np.ndarray  # (d,)


@dataclass
class AlmBatch:
    """Padded arrays for a batch of scenes (constants for the graph)."""

    lang_ids: np.ndarray  # (B, N) word ids: CLS q.. SEP tokens..
    box_feats: np.ndarray  # (B, N, 6) corner+size features, zero off token rows
    valid: np.ndarray  # (B, N) bool
    tok_start: int
    max_m: int
    tok_valid: np.ndarray  # (B, max_m) bool
    tok_boxes: np.ndarray  # (B, max_m, 4)
    grid: np.ndarray  # (B, G, G, F)
    b_a: np.ndarray | None = None  # (B, 4)
    tags: np.ndarray | None = None  # (B, max_m)
    instances: list = field(default_factory=list)


def box_features(box) -> np.ndarray:
    x1, y1, x2, y2 = box.as_tuple() if hasattr(box, "as_tuple") else box
    return np.array([x1, y1, x2, y2, x2 - x1, y2 - y1], dtype=np.float64)


def collate_scenes(
    instances: list[SceneInstance],
    vocab: Vocabulary,
    cfg: ModelConfig,
    targets: list | None = None,
) -> AlmBatch:
    """Pad a list of scenes into one AlmBatch; optional location targets."""
    b = len(instances)
    for inst in instances:
        if len(inst.question) > cfg.max_question_len:
            raise ValueError(
                f"{inst.id}: question length {len(inst.question)} exceeds "
                f"max_question_len={cfg.max_question_len}"
            )
        if len(inst.tokens) > cfg.max_scene_tokens:
            raise ValueError(
                f"{inst.id}: {len(inst.tokens)} scene tokens exceed "
                f"max_scene_tokens={cfg.max_scene_tokens}"
            )
    max_q = max((len(i.question) for i in instances), default=1)
    max_m = max((len(i.tokens) for i in instances), default=0)
    max_m = max(max_m, 1)
    tok_start = 1 + max_q + 1  # CLS, question, SEP
    n = tok_start + max_m
    lang_ids = np.full((b, n), vocab.pad_id, dtype=np.int64)
    box_feats_arr = np.zeros((b, n, 6))
    valid = np.zeros((b, n), dtype=bool)
    tok_valid = np.zeros((b, max_m), dtype=bool)
    tok_boxes = np.zeros((b, max_m, 4))
    grid = np.zeros((b, cfg.grid_size, cfg.grid_size, cfg.grid_features))
    for i, inst in enumerate(instances):
        lang_ids[i, 0] = vocab.cls_id
        valid[i, 0] = True
        for j, w in enumerate(inst.question):
            lang_ids[i, 1 + j] = vocab.word_id(w)
            valid[i, 1 + j] = True
        lang_ids[i, 1 + max_q] = vocab.sep_id
        valid[i, 1 + max_q] = True
        for j, tok in enumerate(inst.tokens):
            lang_ids[i, tok_start + j] = vocab.word_id(tok.word)
            box_feats_arr[i, tok_start + j] = box_features(tok.box)
            valid[i, tok_start + j] = True
            tok_valid[i, j] = True
            tok_boxes[i, j] = tok.box.as_array()
        grid[i] = inst.visual_grid
    batch = AlmBatch(
        lang_ids=lang_ids,
        box_feats=box_feats_arr,
        valid=valid,
        tok_start=tok_start,
        max_m=max_m,
        tok_valid=tok_valid,
        tok_boxes=tok_boxes,
        grid=grid,
        instances=list(instances),
    )
    if targets is not None:
        batch.b_a = np.stack([t.b_a.as_array() for t in targets])
        tags = np.zeros((b, max_m))
        for i, t in enumerate(targets):
            if t.tags:
                tags[i, : len(t.tags)] = t.tags
        batch.tags = tags
    return batch


def _check_finite(cfg: ModelConfig, *tensors: Tensor) -> None:
    if not cfg.check_finite:
        return
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError("non-finite encoder output")


class TextLayoutEncoder:
    def __init__(self, store: ParamStore, cfg: ModelConfig, emb: Tensor):
        self.cfg = cfg
        self.emb = emb
        self.box_proj = Linear(store, "txt.box_proj", 6, cfg.d_model)
        self.layers = [
            DualStreamLayer(store, f"txt.layer{i}", cfg.d_model, cfg.n_heads, cfg.ffn_hidden)
            for i in range(cfg.n_layers)
        ]
        self.final_lang = LayerNorm(store, "txt.final_lang", cfg.d_model)
        self.final_lay = LayerNorm(store, "txt.final_lay", cfg.d_model)

    def __call__(self, batch: AlmBatch):
        """Returns (h_lang, h_lay) as (B, max_m, d) plus the (B, d) summary."""
        cfg = self.cfg
        pos = ad.constant(sinusoid_1d(batch.lang_ids.shape[1], cfg.d_model)[None, :, :])
        words = ad.take(self.emb, batch.lang_ids)
        xa = words + pos
        xb = words + self.box_proj(ad.constant(batch.box_feats)) + pos
        mask = padding_mask(batch.valid)
        for layer in self.layers:
            xa, xb = layer(xa, xb, mask)
        xa = self.final_lang(xa)
        xb = self.final_lay(xb)
        s, m = batch.tok_start, batch.max_m
        h_lang = xa[:, s : s + m, :]
        h_lay = xb[:, s : s + m, :]
        h_t_cls = xa[:, 0, :]
        _check_finite(cfg, h_lang, h_lay, h_t_cls)
        return h_lang, h_lay, h_t_cls


class VisualEncoder:
    def __init__(self, store: ParamStore, cfg: ModelConfig, emb: Tensor):
        self.cfg = cfg
        self.emb = emb
        if cfg.grid_size % cfg.patch != 0:
            raise ValueError("grid_size must be divisible by patch")
        self.n_side = cfg.grid_size // cfg.patch
        patch_dim = cfg.patch * cfg.patch * cfg.grid_features
        self.patch_proj = Linear(store, "vis.patch_proj", patch_dim, cfg.d_model)
        self.layers = [
            EncoderLayer(store, f"vis.enc{i}", cfg.d_model, cfg.n_heads, cfg.ffn_hidden)
            for i in range(cfg.n_layers)
        ]
        self.queries = store.add("vis.queries", (cfg.n_queries + 1, cfg.d_model), init="embedding")
        self.dec_layers = [
            DecoderLayer(store, f"vis.dec{i}", cfg.d_model, cfg.n_heads, cfg.ffn_hidden)
            for i in range(cfg.n_layers)
        ]
        self.final = LayerNorm(store, "vis.final", cfg.d_model)
        self._pos2d = sinusoid_2d(self.n_side, self.n_side, cfg.d_model)

    def _patchify(self, grid: np.ndarray) -> np.ndarray:
        b, g, _, f = grid.shape
        p = self.cfg.patch
        s = self.n_side
        x = grid.reshape(b, s, p, s, p, f).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(b, s * s, p * p * f)

    def __call__(self, batch: AlmBatch):
        """Returns (h_v, h_v_cls) as (B, n_queries, d) and (B, d)."""
        cfg = self.cfg
        g = batch.grid
        if g.shape[1:] != (cfg.grid_size, cfg.grid_size, cfg.grid_features):
            raise ValueError(
                f"grid shape {g.shape[1:]} does not match config "
                f"({cfg.grid_size}, {cfg.grid_size}, {cfg.grid_features})"
            )
        b = g.shape[0]
        patches = self.patch_proj(ad.constant(self._patchify(g))) + ad.constant(
            self._pos2d[None, :, :]
        )
        q_len = batch.tok_start - 1  # CLS + question slots from the text batch
        q_ids = batch.lang_ids[:, :q_len]
        q_valid = batch.valid[:, :q_len]
        q_rows = ad.take(self.emb, q_ids) + ad.constant(
            sinusoid_1d(q_len, cfg.d_model)[None, :, :]
        )
        x = ad.concat([q_rows, patches], axis=1)
        enc_valid = np.concatenate(
            [q_valid, np.ones((b, patches.shape[1]), dtype=bool)], axis=1
        )
        mask = padding_mask(enc_valid)
        for layer in self.layers:
            x = layer(x, mask)
        n_q = cfg.n_queries + 1
        queries = self.queries.reshape(1, n_q, cfg.d_model) * np.ones((b, 1, 1))
        h = queries
        for layer in self.dec_layers:
            h = layer(h, x, self_mask=None, memory_mask=mask)
        h = self.final(h)
        h_v = h[:, 1:, :]
        h_v_cls = h[:, 0, :]
        _check_finite(cfg, h_v, h_v_cls)
        return h_v, h_v_cls


def encode_text_layout(
    question: list[str],
    tokens: list[SceneTextToken],
    model,
) -> TextLayoutEncoding:
    """Single-scene wrapper returning per-token states aligned with ``tokens``."""
    inst = _probe_instance(question, tokens, model.cfg)
    batch = collate_scenes([inst], model.vocab, model.cfg)
    with ad.no_grad():
        h_lang, h_lay, h_cls = model.text_encoder(batch)
    m = len(tokens)
    return TextLayoutEncoding(
        h_lang=h_lang.data[0, :m], h_lay=h_lay.data[0, :m], h_t_cls=h_cls.data[0]
    )


def encode_visual(question: list[str], grid: np.ndarray, model) -> VisualEncoding:
    """Single-scene wrapper for the region-query states."""
    inst = _probe_instance(question, [], model.cfg)
    batch = collate_scenes([inst], model.vocab, model.cfg)
    batch.grid = np.asarray(grid, dtype=np.float64)[None, ...]
    with ad.no_grad():
        h_v, h_v_cls = model.visual_encoder(batch)
    return VisualEncoding(h_v=h_v.data[0], h_v_cls=h_v_cls.data[0])


def _probe_instance(question, tokens, cfg) -> SceneInstance:
    return SceneInstance(
        id="probe",
        question=list(question),
        tokens=list(tokens),
        answers=[""] * 10,
        answer_tokens=[],
        template="probe",
        grid_size=cfg.grid_size,
    )


def make_vocab() -> Vocabulary:
    return default_vocab()
