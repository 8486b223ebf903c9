"""Numeric kernels with a numba fast path and a pure-numpy fallback.

The active backend is chosen at import time from the ``LOCGEN_BACKEND``
environment variable (``"numba"`` or ``"numpy"``). Unset, it defaults to
numba when importable. ``set_backend`` switches at runtime (used by tests
and the kernel benchmark). Both backends compute identical values.

Box arrays are float64 ``(N, 4)`` in corner form ``(x1, y1, x2, y2)``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but degrade gracefully
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _np_pair_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = _np_pair_intersection(a, b)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def _np_pair_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    return np.maximum(iw, 0.0) * np.maximum(ih, 0.0)


def _np_pair_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = _np_pair_intersection(a, b)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    iou = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    cw = np.maximum(a[:, 2], b[:, 2]) - np.minimum(a[:, 0], b[:, 0])
    ch = np.maximum(a[:, 3], b[:, 3]) - np.minimum(a[:, 1], b[:, 1])
    hull = cw * ch
    # degenerate hull (both boxes are points) contributes 0 by convention
    penalty = np.where(hull > 0.0, (hull - union) / np.where(hull > 0.0, hull, 1.0), 0.0)
    return np.where(hull > 0.0, iou - penalty, 0.0)


def _np_pair_coverage(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fraction of each b-box covered by the paired a-box; 0 for empty b."""
    inter = _np_pair_intersection(a, b)
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return np.where(area_b > 0.0, inter / np.where(area_b > 0.0, area_b, 1.0), 0.0)


def _np_pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def _np_levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    """Edit distance over code arrays; rows vectorized via a prefix-min trick.

    The in-row dependency d[j] = min(t[j], d[j-1]+1) unrolls to
    d[j] = j + min_{k<=j}(v[k]-k), a cumulative minimum.
    """
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    idx = np.arange(m + 1)
    prev = idx.copy()
    for i in range(n):
        subst = prev[:-1] + (b != a[i])
        up = np.minimum(prev[1:] + 1, subst)
        v = np.concatenate(([i + 1], up))
        prev = idx + np.minimum.accumulate(v - idx)
    return int(prev[-1])


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_pair_iou(a, b):
        n = a.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            iw = min(a[i, 2], b[i, 2]) - max(a[i, 0], b[i, 0])
            ih = min(a[i, 3], b[i, 3]) - max(a[i, 1], b[i, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            union = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1]) + (b[i, 2] - b[i, 0]) * (
                b[i, 3] - b[i, 1]
            ) - inter
            out[i] = inter / union if union > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_pair_giou(a, b):
        n = a.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            iw = min(a[i, 2], b[i, 2]) - max(a[i, 0], b[i, 0])
            ih = min(a[i, 3], b[i, 3]) - max(a[i, 1], b[i, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            union = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1]) + (b[i, 2] - b[i, 0]) * (
                b[i, 3] - b[i, 1]
            ) - inter
            iou = inter / union if union > 0.0 else 0.0
            cw = max(a[i, 2], b[i, 2]) - min(a[i, 0], b[i, 0])
            ch = max(a[i, 3], b[i, 3]) - min(a[i, 1], b[i, 1])
            hull = cw * ch
            out[i] = iou - (hull - union) / hull if hull > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_pair_coverage(a, b):
        n = a.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            iw = min(a[i, 2], b[i, 2]) - max(a[i, 0], b[i, 0])
            ih = min(a[i, 3], b[i, 3]) - max(a[i, 1], b[i, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            area_b = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
            out[i] = inter / area_b if area_b > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_pairwise_iou(a, b):
        n, m = a.shape[0], b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
            for j in range(m):
                iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
                ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
                inter = max(iw, 0.0) * max(ih, 0.0)
                union = area_a + (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1]) - inter
                out[i, j] = inter / union if union > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_levenshtein(a, b):
        n, m = len(a), len(b)
        if n == 0:
            return m
        if m == 0:
            return n
        prev = np.arange(m + 1, dtype=np.int64)
        cur = np.empty(m + 1, dtype=np.int64)
        for i in range(n):
            cur[0] = i + 1
            for j in range(1, m + 1):
                cost = 0 if a[i] == b[j - 1] else 1
                cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            prev, cur = cur, prev
        return int(prev[m])


# ---------------------------------------------------------------------------
# backend dispatch

_NUMPY_IMPL = {
    "pair_iou": _np_pair_iou,
    "pair_giou": _np_pair_giou,
    "pair_coverage": _np_pair_coverage,
    "pairwise_iou": _np_pairwise_iou,
    "levenshtein": _np_levenshtein,
}

_IMPLS = {"numpy": _NUMPY_IMPL}
if HAVE_NUMBA:
    _IMPLS["numba"] = {
        "pair_iou": _nb_pair_iou,
        "pair_giou": _nb_pair_giou,
        "pair_coverage": _nb_pair_coverage,
        "pairwise_iou": _nb_pairwise_iou,
        "levenshtein": _nb_levenshtein,
    }


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def _default_backend() -> str:
    env = os.environ.get("LOCGEN_BACKEND", "").strip().lower()
    if env:
        if env not in _IMPLS:
            raise ValueError(
                f"LOCGEN_BACKEND={env!r} not available; choose from {available_backends()}"
            )
        return env
    return "numba" if HAVE_NUMBA else "numpy"


_backend_name = _default_backend()
_impl = _IMPLS[_backend_name]


def set_backend(name: str) -> None:
    """Switch the kernel backend at runtime ("numpy" or "numba")."""
    global _backend_name, _impl
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; choose from {available_backends()}")
    _backend_name = name
    _impl = _IMPLS[name]


def active_backend() -> str:
    return _backend_name


def _as_boxes(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected (N, 4) box array, got shape {arr.shape}")
    return arr


def pair_iou(a, b) -> np.ndarray:
    """Elementwise IoU of paired boxes, shape (N,)."""
    return _impl["pair_iou"](_as_boxes(a), _as_boxes(b))


def pair_giou(a, b) -> np.ndarray:
    """Elementwise generalized IoU of paired boxes, shape (N,)."""
    return _impl["pair_giou"](_as_boxes(a), _as_boxes(b))


def pair_coverage(a, b) -> np.ndarray:
    """Elementwise |A∩B|/|B| of paired boxes, shape (N,)."""
    return _impl["pair_coverage"](_as_boxes(a), _as_boxes(b))


def pairwise_iou(a, b) -> np.ndarray:
    """All-pairs IoU, shape (N, M)."""
    return _impl["pairwise_iou"](_as_boxes(a), _as_boxes(b))


def levenshtein_codes(a: np.ndarray, b: np.ndarray) -> int:
    """Edit distance between two int code arrays."""
    a = np.ascontiguousarray(a, dtype=np.int32)
    b = np.ascontiguousarray(b, dtype=np.int32)
    return int(_impl["levenshtein"](a, b))
