"""Answer generation module: a small encoder-decoder that turns the question,
the selected words, and the full token list into a readable answer sequence.

Input layout is [question ; selected ; scene tokens] with a separator token
after the first two segments and word-boundary markers inside the last two.
Scene words out of vocabulary arrive as character pieces and numbers as digit
pieces, so the decoder can repair single-character recognition errors while
generating from the full vocabulary (docs/mechanism_map.md#generation-loss).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (
    DecoderLayer,
    EncoderLayer,
    LayerNorm,
    Linear,
    ParamStore,
    causal_mask,
    load_checkpoint_into,
    load_checkpoint_meta,
    padding_mask,
    save_checkpoint,
    sinusoid_1d,
)
from .vocab import Vocabulary, default_vocab
from .world import SceneTextToken, reading_order

log = logging.getLogger(__name__)


@dataclass
class GenConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_hidden: int = 128
    max_input_len: int = 96
    max_decode_len: int = 12
    check_finite: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)


@dataclass
class GenBatch:
    input_ids: np.ndarray  # (B, N)
    input_valid: np.ndarray  # (B, N) bool
    dec_in: np.ndarray | None = None  # (B, T) BOS + target pieces
    dec_out: np.ndarray | None = None  # (B, T) target pieces + EOS
    dec_valid: np.ndarray | None = None  # (B, T) bool
    meta: list = field(default_factory=list)


def build_gen_input(
    question: list[str],
    selected: list[str],
    tokens: list[SceneTextToken],
    vocab: Vocabulary,
    max_len: int,
) -> list[int]:
    """Deterministic id sequence [s_q ; SEP ; s_l ; SEP ; s_o].

    Both separators are always present (an empty selection keeps an empty
    middle segment). Scene tokens appear in reading order. On overflow only
    the scene-token tail is dropped, never the question or the selection."""
    ids = [vocab.word_id(w) for w in question]
    ids.append(vocab.sep_id)
    for i, w in enumerate(selected):
        if i > 0:
            ids.append(vocab.wsep_id)
        ids.extend(vocab.generator_pieces(w))
    ids.append(vocab.sep_id)
    head_len = len(ids)
    if head_len > max_len:
        raise ValueError(
            f"question plus selection ({head_len} pieces) exceed max_input_len={max_len}"
        )
    entries = [vocab.generator_pieces(tokens[i].word) for i in reading_order(tokens)]
    for i, pieces in enumerate(entries):
        extra = len(pieces) + (1 if i > 0 else 0)
        if len(ids) + extra > max_len:
            log.info(
                "generator input overflow: dropping %d trailing scene tokens",
                len(entries) - i,
            )
            break
        if i > 0:
            ids.append(vocab.wsep_id)
        ids.extend(pieces)
    return ids


def answer_pieces(answer_tokens: list[str], vocab: Vocabulary) -> list[int]:
    ids: list[int] = []
    for i, w in enumerate(answer_tokens):
        if i > 0:
            ids.append(vocab.wsep_id)
        ids.extend(vocab.generator_pieces(w))
    return ids


def collate_gen(
    inputs: list[list[int]],
    targets: list[list[int]] | None,
    vocab: Vocabulary,
    meta: list | None = None,
) -> GenBatch:
    b = len(inputs)
    n = max(len(x) for x in inputs)
    input_ids = np.full((b, n), vocab.pad_id, dtype=np.int64)
    input_valid = np.zeros((b, n), dtype=bool)
    for i, seq in enumerate(inputs):
        input_ids[i, : len(seq)] = seq
        input_valid[i, : len(seq)] = True
    batch = GenBatch(input_ids=input_ids, input_valid=input_valid, meta=meta or [])
    if targets is not None:
        t = max(len(x) for x in targets) + 1
        dec_in = np.full((b, t), vocab.pad_id, dtype=np.int64)
        dec_out = np.full((b, t), vocab.pad_id, dtype=np.int64)
        dec_valid = np.zeros((b, t), dtype=bool)
        for i, seq in enumerate(targets):
            dec_in[i, 0] = vocab.bos_id
            dec_in[i, 1 : 1 + len(seq)] = seq
            dec_out[i, : len(seq)] = seq
            dec_out[i, len(seq)] = vocab.eos_id
            dec_valid[i, : len(seq) + 1] = True
        batch.dec_in, batch.dec_out, batch.dec_valid = dec_in, dec_out, dec_valid
    return batch


class GenModel:
    def __init__(self, cfg: GenConfig, vocab: Vocabulary | None = None, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab if vocab is not None else default_vocab()
        self.store = ParamStore(np.random.default_rng([seed, 0x96]))
        d = cfg.d_model
        v = len(self.vocab)
        self.emb = self.store.add("gen.emb", (v, d), init="embedding")
        self.enc_layers = [
            EncoderLayer(self.store, f"gen.enc{i}", d, cfg.n_heads, cfg.ffn_hidden)
            for i in range(cfg.enc_layers)
        ]
        self.enc_final = LayerNorm(self.store, "gen.enc_final", d)
        self.dec_layers = [
            DecoderLayer(self.store, f"gen.dec{i}", d, cfg.n_heads, cfg.ffn_hidden)
            for i in range(cfg.dec_layers)
        ]
        self.dec_final = LayerNorm(self.store, "gen.dec_final", d)
        self.out_head = Linear(self.store, "gen.out", d, v)

    # -- forward -----------------------------------------------------------

    def _embed(self, ids: np.ndarray) -> Tensor:
        return ad.take(self.emb, ids) + ad.constant(
            sinusoid_1d(ids.shape[1], self.cfg.d_model)[None, :, :]
        )

    def encode(self, batch: GenBatch) -> tuple[Tensor, np.ndarray]:
        x = self._embed(batch.input_ids)
        mask = padding_mask(batch.input_valid)
        for layer in self.enc_layers:
            x = layer(x, mask)
        return self.enc_final(x), mask

    def decode_logits(self, memory: Tensor, memory_mask: np.ndarray, dec_in: np.ndarray) -> Tensor:
        y = self._embed(dec_in)
        self_mask = causal_mask(dec_in.shape[1])
        for layer in self.dec_layers:
            y = layer(y, memory, self_mask=self_mask, memory_mask=memory_mask)
        logits = self.out_head(self.dec_final(y))
        if self.cfg.check_finite and not np.all(np.isfinite(logits.data)):
            raise FloatingPointError("non-finite generator logits")
        return logits

    def loss(self, batch: GenBatch):
        """Teacher-forced mean over the batch of per-sequence summed
        cross-entropy (docs/mechanism_map.md#generation-loss)."""
        if batch.dec_in is None:
            raise ValueError("batch has no decoder targets")
        memory, mask = self.encode(batch)
        logits = self.decode_logits(memory, mask, batch.dec_in)
        logp = ad.log_softmax(logits, axis=-1)
        nll = -ad.gather_last(logp, batch.dec_out)
        per_seq = (nll * ad.constant(batch.dec_valid.astype(np.float64))).sum(axis=-1)
        return per_seq.sum() * (1.0 / batch.input_ids.shape[0])

    # -- decoding ----------------------------------------------------------

    def generate_batch(self, batch: GenBatch) -> list[list[int]]:
        """Greedy decode for every sequence in the batch."""
        cfg = self.cfg
        b = batch.input_ids.shape[0]
        with ad.no_grad():
            memory, mask = self.encode(batch)
            out = np.full((b, 1), self.vocab.bos_id, dtype=np.int64)
            finished = np.zeros(b, dtype=bool)
            for _ in range(cfg.max_decode_len):
                logits = self.decode_logits(memory, mask, out).data[:, -1, :]
                nxt = np.argmax(logits, axis=-1)
                nxt[finished] = self.vocab.pad_id
                out = np.concatenate([out, nxt[:, None]], axis=1)
                finished |= nxt == self.vocab.eos_id
                if finished.all():
                    break
        return [list(row[1:]) for row in out]

    def generate(
        self,
        question: list[str],
        selected: list[str],
        tokens: list[SceneTextToken],
        beam_size: int = 1,
    ) -> str:
        """Decode one answer string (greedy by default, beam search optional)."""
        ids = build_gen_input(question, selected, tokens, self.vocab, self.cfg.max_input_len)
        batch = collate_gen([ids], None, self.vocab)
        if beam_size <= 1:
            pieces = self.generate_batch(batch)[0]
        else:
            pieces = self._beam(batch, beam_size)
        return self.vocab.detokenize(pieces)

    def _beam(self, batch: GenBatch, beam_size: int) -> list[int]:
        cfg = self.cfg
        with ad.no_grad():
            memory, mask = self.encode(batch)
            beams = [([self.vocab.bos_id], 0.0, False)]
            for _ in range(cfg.max_decode_len):
                if all(done for _, _, done in beams):
                    break
                candidates = []
                for seq, score, done in beams:
                    if done:
                        candidates.append((seq, score, done))
                        continue
                    dec_in = np.array([seq], dtype=np.int64)
                    logits = self.decode_logits(memory, mask, dec_in).data[0, -1, :]
                    logp = logits - np.log(np.exp(logits - logits.max()).sum()) - logits.max()
                    top = np.argsort(logp)[::-1][:beam_size]
                    for t in top:
                        candidates.append(
                            (seq + [int(t)], score + float(logp[t]), int(t) == self.vocab.eos_id)
                        )
                candidates.sort(key=lambda c: c[1], reverse=True)
                beams = candidates[:beam_size]
        return beams[0][0][1:]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.store, {"kind": "agm", "model": self.cfg.to_dict()})

    @classmethod
    def load(cls, path) -> "GenModel":
        meta = load_checkpoint_meta(path)
        model = cls(GenConfig.from_dict(meta["config"]["model"]))
        load_checkpoint_into(path, model.store)
        return model


def gen_loss(batch: GenBatch, model: GenModel):
    """Value and parameter gradients of the teacher-forced loss."""
    model.store.zero_grads()
    loss = model.loss(batch)
    loss.backward()
    grads = {k: p.grad.copy() for k, p in model.store.params.items() if p.grad is not None}
    return float(loss.data), grads
