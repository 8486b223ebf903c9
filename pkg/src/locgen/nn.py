"""Transformer building blocks and parameter management over the autodiff engine.

Everything is batched float64. Attention masks are additive numpy constants
(0 for visible, -1e9 for hidden). Layers register their parameters in a
ParamStore at construction; checkpoints persist the store with a json header
and validate the shape table on load.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_SCHEMA_VERSION = 1
NEG_INF = -1e9


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Named learnable tensors with deterministic initialization."""

    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple, init: str = "xavier") -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "xavier":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            fan_out = shape[-1]
            std = np.sqrt(2.0 / (fan_in + fan_out))
            data = self.rng.normal(0.0, std, size=shape)
        elif init == "embedding":
            data = self.rng.normal(0.0, 0.1, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = ad.parameter(data)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        mine = {k: v.data.shape for k, v in self.params.items()}
        theirs = {k: a.shape for k, a in arrays.items()}
        if mine != theirs:
            missing = sorted(set(mine) - set(theirs))
            extra = sorted(set(theirs) - set(mine))
            shape_diff = sorted(
                k for k in set(mine) & set(theirs) if mine[k] != theirs[k]
            )
            raise CheckpointError(
                f"parameter table mismatch: missing={missing} extra={extra} "
                f"shape_mismatch={shape_diff}"
            )
        for k, a in arrays.items():
            self.params[k].data = np.asarray(a, dtype=np.float64)


def save_checkpoint(path, store: ParamStore, config: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": config,
        "shapes": {k: list(v.data.shape) for k, v in store.params.items()},
    }
    arrays = {f"p:{k}": v.data for k, v in store.params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint_meta(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__meta__" not in z:
            raise CheckpointError(f"{path}: missing checkpoint header")
        meta = json.loads(bytes(z["__meta__"]).decode())
    if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint schema_version {meta.get('schema_version')!r}"
        )
    return meta


def load_checkpoint_into(path, store: ParamStore) -> dict:
    """Load arrays into an already-built store, validating the shape table."""
    meta = load_checkpoint_meta(path)
    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k[2:]: z[k] for k in z.files if k.startswith("p:")}
    store.load_arrays(arrays)
    return meta


# ---------------------------------------------------------------------------
# layers


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = store.add(f"{name}.w", (d_in, d_out))
        self.b = store.add(f"{name}.b", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps: float = 1e-5):
        self.g = store.add(f"{name}.g", (d,), init="ones")
        self.b = store.add(f"{name}.b", (d,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / (var + self.eps).sqrt() * self.g + self.b


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d: int, hidden: int):
        self.lin1 = Linear(store, f"{name}.lin1", d, hidden)
        self.lin2 = Linear(store, f"{name}.lin2", hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.gelu(self.lin1(x)))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int):
        assert d % n_heads == 0
        self.n_heads = n_heads
        self.scale = 1.0 / np.sqrt(d // n_heads)
        self.wq = Linear(store, f"{name}.wq", d, d)
        self.wk = Linear(store, f"{name}.wk", d, d)
        self.wv = Linear(store, f"{name}.wv", d, d)
        self.wo = Linear(store, f"{name}.wo", d, d)

    def __call__(self, q_in: Tensor, kv_in: Tensor, add_mask: np.ndarray | None = None) -> Tensor:
        q = _split_heads(self.wq(q_in), self.n_heads)
        k = _split_heads(self.wk(kv_in), self.n_heads)
        v = _split_heads(self.wv(kv_in), self.n_heads)
        logits = (q @ k.swapaxes(-1, -2)) * self.scale
        if add_mask is not None:
            logits = logits + ad.constant(add_mask)
        att = ad.softmax(logits, axis=-1)
        return self.wo(_merge_heads(att @ v))


class EncoderLayer:
    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int, hidden: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d, n_heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, hidden)

    def __call__(self, x: Tensor, add_mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, add_mask)
        return x + self.ffn(self.ln2(x))


class DecoderLayer:
    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int, hidden: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.self_attn = MultiHeadAttention(store, f"{name}.self", d, n_heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross", d, n_heads)
        self.ln3 = LayerNorm(store, f"{name}.ln3", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, hidden)

    def __call__(
        self,
        x: Tensor,
        memory: Tensor,
        self_mask: np.ndarray | None = None,
        memory_mask: np.ndarray | None = None,
    ) -> Tensor:
        h = self.ln1(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(self.ln2(x), memory, memory_mask)
        return x + self.ffn(self.ln3(x))


class DualStreamLayer:
    """Two parallel streams whose attention patterns are computed jointly.

    Per head the attention logits are the sum of both streams' query-key
    scores, so each stream's mixing is conditioned on the other (word
    identity and spatial layout cross-talk)."""

    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int, hidden: int):
        self.n_heads = n_heads
        self.scale = 1.0 / np.sqrt(2.0 * (d // n_heads))
        self.streams = []
        for s in ("a", "b"):
            self.streams.append(
                {
                    "ln1": LayerNorm(store, f"{name}.{s}.ln1", d),
                    "wq": Linear(store, f"{name}.{s}.wq", d, d),
                    "wk": Linear(store, f"{name}.{s}.wk", d, d),
                    "wv": Linear(store, f"{name}.{s}.wv", d, d),
                    "wo": Linear(store, f"{name}.{s}.wo", d, d),
                    "ln2": LayerNorm(store, f"{name}.{s}.ln2", d),
                    "ffn": FeedForward(store, f"{name}.{s}.ffn", d, hidden),
                }
            )

    def __call__(self, xa: Tensor, xb: Tensor, add_mask: np.ndarray | None = None):
        normed = [self.streams[0]["ln1"](xa), self.streams[1]["ln1"](xb)]
        logits = None
        vs = []
        for st, h in zip(self.streams, normed):
            q = _split_heads(st["wq"](h), self.n_heads)
            k = _split_heads(st["wk"](h), self.n_heads)
            vs.append(_split_heads(st["wv"](h), self.n_heads))
            part = q @ k.swapaxes(-1, -2)
            logits = part if logits is None else logits + part
        logits = logits * self.scale
        if add_mask is not None:
            logits = logits + ad.constant(add_mask)
        att = ad.softmax(logits, axis=-1)
        outs = []
        for x, st, v in zip((xa, xb), self.streams, vs):
            y = x + st["wo"](_merge_heads(att @ v))
            outs.append(y + st["ffn"](st["ln2"](y)))
        return outs[0], outs[1]


# ---------------------------------------------------------------------------
# positions and masks


def sinusoid_1d(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angles = pos / (10000.0 ** (2 * i / d))
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def sinusoid_2d(rows: int, cols: int, d: int) -> np.ndarray:
    """Row/column sinusoids concatenated; shape (rows*cols, d)."""
    half = d // 2
    row_enc = sinusoid_1d(rows, half)
    col_enc = sinusoid_1d(cols, d - half)
    out = np.zeros((rows, cols, d))
    out[:, :, :half] = row_enc[:, None, :]
    out[:, :, half:] = col_enc[None, :, :]
    return out.reshape(rows * cols, d)


def padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B, N) boolean -> (B, 1, 1, N) additive mask."""
    return np.where(valid[:, None, None, :], 0.0, NEG_INF)


def causal_mask(n: int) -> np.ndarray:
    m = np.triu(np.full((n, n), NEG_INF), k=1)
    return m[None, None, :, :]
