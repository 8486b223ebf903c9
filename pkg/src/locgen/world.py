"""Synthetic scene-text QA world: generation, recognition noise, persistence.

Each instance is a set of attributed scene-text tokens placed disjointly in
the unit square, a templated question whose answer copies token words, a
10-answer gold set, and a grid of per-cell attribute features standing in for
an image. Recognition noise (character substitutions, word drops) perturbs
the token list while leaving the grid and the gold answers untouched.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, pairwise_iou
from .vocab import CATEGORIES, COLORS, FONT_SIZES, MAX_NUMBER, POSITIONS, WORD_LIST

SCHEMA_VERSION = 1

# feature layout per grid cell: 8 colors + 2 categories + 2 sizes + occupancy
GRID_FEATURES = len(COLORS) + len(CATEGORIES) + len(FONT_SIZES) + 1

TEMPLATE_CATEGORY_COLOR = "category_color"
TEMPLATE_POSITION = "position"
TEMPLATE_SIZE_CATEGORY = "size_category"
TEMPLATE_COLOR_PAIR = "color_pair"
TEMPLATES = (
    TEMPLATE_CATEGORY_COLOR,
    TEMPLATE_POSITION,
    TEMPLATE_SIZE_CATEGORY,
    TEMPLATE_COLOR_PAIR,
)

_ANCHORS = {
    "top left": (0.18, 0.18),
    "top right": (0.82, 0.18),
    "bottom left": (0.18, 0.82),
    "bottom right": (0.82, 0.82),
    "center": (0.5, 0.5),
}


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SceneTextToken:
    word: str
    box: BBox
    color: str
    category: str
    font_size: str

    @property
    def attributes(self) -> dict:
        return {"color": self.color, "category": self.category, "font_size": self.font_size}


@dataclass
class SceneInstance:
    id: str
    question: list[str]
    tokens: list[SceneTextToken]
    answers: list[str]
    answer_tokens: list[str]
    template: str
    grid_size: int
    # scene objects define the visual grid; they differ from `tokens` only
    # after recognition noise (missed words stay visible in the image)
    scene_objects: list[SceneTextToken] | None = None
    visual_grid: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.scene_objects is None:
            self.scene_objects = list(self.tokens)
        if self.visual_grid is None:
            self.visual_grid = build_visual_grid(self.scene_objects, self.grid_size)


@dataclass(frozen=True)
class CorruptionSpec:
    char_sub_rate: float
    word_drop_rate: float
    seed: int

    def __post_init__(self):
        for name in ("char_sub_rate", "word_drop_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass
class WorldConfig:
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 500
    grid_size: int = 16
    min_tokens: int = 5
    max_tokens: int = 8
    ambiguity_fraction: float = 0.5
    template_weights: dict = field(
        default_factory=lambda: {
            TEMPLATE_CATEGORY_COLOR: 0.35,
            TEMPLATE_POSITION: 0.30,
            TEMPLATE_SIZE_CATEGORY: 0.20,
            TEMPLATE_COLOR_PAIR: 0.15,
        }
    )
    max_place_attempts: int = 300

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# visual grid


def build_visual_grid(objects, grid_size: int) -> np.ndarray:
    """Attribute one-hots for every grid cell whose center lies in a token box."""
    grid = np.zeros((grid_size, grid_size, GRID_FEATURES), dtype=np.float64)
    centers = (np.arange(grid_size) + 0.5) / grid_size
    for tok in objects:
        cols = np.nonzero((centers >= tok.box.x1) & (centers <= tok.box.x2))[0]
        rows = np.nonzero((centers >= tok.box.y1) & (centers <= tok.box.y2))[0]
        feat = np.zeros(GRID_FEATURES)
        feat[COLORS.index(tok.color)] = 1.0
        feat[len(COLORS) + CATEGORIES.index(tok.category)] = 1.0
        feat[len(COLORS) + len(CATEGORIES) + FONT_SIZES.index(tok.font_size)] = 1.0
        feat[-1] = 1.0
        grid[np.ix_(rows, cols)] = feat
    return grid


def decode_cell(feat: np.ndarray) -> dict | None:
    """Inverse of the cell encoding; None for unoccupied cells."""
    if feat[-1] < 0.5:
        return None
    return {
        "color": COLORS[int(np.argmax(feat[: len(COLORS)]))],
        "category": CATEGORIES[int(np.argmax(feat[len(COLORS) : len(COLORS) + 2]))],
        "font_size": FONT_SIZES[int(np.argmax(feat[len(COLORS) + 2 : len(COLORS) + 4]))],
    }


def reading_order(tokens) -> list[int]:
    """Indices sorted top-to-bottom then left-to-right by box corner."""
    return sorted(range(len(tokens)), key=lambda i: (tokens[i].box.y1, tokens[i].box.x1))


# ---------------------------------------------------------------------------
# generation


def _sample_words(rng, categories) -> list[str]:
    n_numbers = sum(1 for c in categories if c == "number")
    n_words = len(categories) - n_numbers
    numbers = rng.choice(np.arange(1, MAX_NUMBER + 1), size=n_numbers, replace=False)
    words = rng.choice(np.array(WORD_LIST), size=n_words, replace=False)
    out, ni, wi = [], 0, 0
    for c in categories:
        if c == "number":
            out.append(str(int(numbers[ni])))
            ni += 1
        else:
            out.append(str(words[wi]))
            wi += 1
    return out


def _place_boxes(rng, n, anchor=None, target_first=False, max_attempts=300):
    """Disjoint boxes (small gap); optionally pin box 0 near an anchor point
    and push the rest outside an exclusion radius around it."""
    placed: list[BBox] = []
    arrs: list[np.ndarray] = []
    for i in range(n):
        ok = False
        for _ in range(max_attempts):
            w = rng.uniform(0.09, 0.18)
            h = rng.uniform(0.07, 0.12)
            if anchor is not None and target_first and i == 0:
                cx = np.clip(anchor[0] + rng.uniform(-0.08, 0.08), w / 2, 1 - w / 2)
                cy = np.clip(anchor[1] + rng.uniform(-0.08, 0.08), h / 2, 1 - h / 2)
            else:
                cx = rng.uniform(w / 2, 1 - w / 2)
                cy = rng.uniform(h / 2, 1 - h / 2)
                if anchor is not None:
                    if np.hypot(cx - anchor[0], cy - anchor[1]) < 0.30:
                        continue
            cand = np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
            pad = 0.01
            padded = cand + np.array([-pad, -pad, pad, pad])
            if arrs and pairwise_iou(padded[None, :], np.stack(arrs)).max() > 0.0:
                continue
            placed.append(BBox.from_seq(np.clip(cand, 0.0, 1.0)))
            arrs.append(cand)
            ok = True
            break
        if not ok:
            raise GenerationError(
                f"could not place token {i + 1}/{n} after {max_attempts} attempts; "
                "the disjoint-box layout constraint (pairwise IoU < 0.1) is unsatisfiable "
                "for this token count"
            )
    return placed


def _other(rng, pool, exclude):
    choices = [p for p in pool if p not in exclude]
    return str(rng.choice(np.array(choices)))


def _gold_answers(rng, canonical: str) -> list[str]:
    """Ten references: canonical x8 plus a typo variant and a clipped variant."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    digits = "0123456789"

    def typo(s: str) -> str:
        chars = list(s)
        idxs = [i for i, c in enumerate(chars) if c.isalnum()]
        i = int(rng.choice(idxs))
        pool = digits if chars[i].isdigit() else letters
        chars[i] = _other(rng, list(pool), {chars[i]})
        return "".join(chars)

    words = canonical.split()
    clipped = " ".join(words[:-1]) if len(words) > 1 else canonical[:-1]
    if not clipped or clipped == canonical:
        clipped = typo(canonical)
    return [canonical] * 8 + [typo(canonical), clipped]


def _generate_instance(rng, config: WorldConfig, inst_id: str) -> SceneInstance:
    weights = config.template_weights
    names = list(weights)
    probs = np.array([weights[n] for n in names], dtype=float)
    template = str(rng.choice(np.array(names), p=probs / probs.sum()))
    k = int(rng.integers(config.min_tokens, config.max_tokens + 1))
    ambiguous = bool(rng.random() < config.ambiguity_fraction)

    # role plan: list of (category, color, size) with the target(s) first
    cat = str(rng.choice(np.array(CATEGORIES)))
    color = str(rng.choice(np.array(COLORS)))
    size = str(rng.choice(np.array(FONT_SIZES)))
    plan: list[tuple[str, str, str]] = []
    n_targets = 1

    def filler(forbidden):
        while True:
            c = str(rng.choice(np.array(CATEGORIES)))
            r = str(rng.choice(np.array(COLORS)))
            s = str(rng.choice(np.array(FONT_SIZES)))
            if not any(fb(c, r, s) for fb in forbidden):
                return (c, r, s)

    if template == TEMPLATE_CATEGORY_COLOR:
        plan.append((cat, color, size))
        if ambiguous:
            plan.append((cat, _other(rng, COLORS, {color}), str(rng.choice(np.array(FONT_SIZES)))))
            plan.append((_other(rng, CATEGORIES, {cat}), color, str(rng.choice(np.array(FONT_SIZES)))))
        forbid = [lambda c, r, s: (c, r) == (cat, color)]
    elif template == TEMPLATE_SIZE_CATEGORY:
        plan.append((cat, color, size))
        if ambiguous:
            plan.append((cat, _other(rng, COLORS, {color}), _other(rng, FONT_SIZES, {size})))
            plan.append((_other(rng, CATEGORIES, {cat}), color, size))
        forbid = [lambda c, r, s: (c, s) == (cat, size)]
    elif template == TEMPLATE_COLOR_PAIR:
        # exactly two word-category tokens share the asked color
        n_targets = 2
        plan.append(("word", color, size))
        plan.append(("word", color, str(rng.choice(np.array(FONT_SIZES)))))
        if ambiguous:
            plan.append(("number", color, str(rng.choice(np.array(FONT_SIZES)))))
            plan.append(("word", _other(rng, COLORS, {color}), size))
        forbid = [lambda c, r, s: (c, r) == ("word", color)]
    else:  # position
        plan.append((cat, color, size))
        if ambiguous:
            plan.append((cat, _other(rng, COLORS, {color}), str(rng.choice(np.array(FONT_SIZES)))))
            plan.append((_other(rng, CATEGORIES, {cat}), color, str(rng.choice(np.array(FONT_SIZES)))))
        forbid = []

    if len(plan) > k:
        k = len(plan)
    while len(plan) < k:
        plan.append(filler(forbid))

    words = _sample_words(rng, [p[0] for p in plan])

    anchor_name = None
    if template == TEMPLATE_POSITION:
        anchor_name = str(rng.choice(np.array(POSITIONS)))
    boxes = _place_boxes(
        rng,
        k,
        anchor=_ANCHORS[anchor_name] if anchor_name else None,
        target_first=anchor_name is not None,
        max_attempts=config.max_place_attempts,
    )

    toks = [
        SceneTextToken(word=w, box=b, category=p[0], color=p[1], font_size=p[2])
        for w, b, p in zip(words, boxes, plan)
    ]

    if template == TEMPLATE_CATEGORY_COLOR:
        question = ["what", "is", "the", cat, "in", color, "?"]
        answer_tokens = [toks[0].word]
    elif template == TEMPLATE_SIZE_CATEGORY:
        question = ["what", "is", "the", size, cat, "?"]
        answer_tokens = [toks[0].word]
    elif template == TEMPLATE_COLOR_PAIR:
        question = ["what", "are", "the", "words", "in", color, "?"]
        pair = [toks[0], toks[1]]
        order = reading_order(pair)
        answer_tokens = [pair[i].word for i in order]
    else:
        question = ["what", "is", "written", "at", "the", *anchor_name.split(), "?"]
        answer_tokens = [toks[0].word]

    perm = rng.permutation(k)
    toks = [toks[i] for i in perm]

    canonical = " ".join(answer_tokens)
    answers = _gold_answers(rng, canonical)
    return SceneInstance(
        id=inst_id,
        question=question,
        tokens=toks,
        answers=answers,
        answer_tokens=answer_tokens,
        template=template,
        grid_size=config.grid_size,
    )


def generate_split(config: WorldConfig, seed: int, split: str, count: int) -> list[SceneInstance]:
    split_code = zlib.crc32(split.encode())
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, split_code, i])
        out.append(_generate_instance(rng, config, f"{split}-{i:05d}"))
    return out


def generate_dataset(config: WorldConfig, seed: int) -> dict[str, list[SceneInstance]]:
    """All three splits, each instance seeded independently from (seed, split, index)."""
    return {
        "train": generate_split(config, seed, "train", config.n_train),
        "val": generate_split(config, seed, "val", config.n_val),
        "test": generate_split(config, seed, "test", config.n_test),
    }


# ---------------------------------------------------------------------------
# recognition noise


_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_DIGITS = "0123456789"


def _substitute_chars(rng, word: str, rate: float) -> str:
    chars = list(word)
    for i, ch in enumerate(chars):
        if rng.random() >= rate:
            continue
        pool = _DIGITS if ch.isdigit() else _LETTERS
        chars[i] = _other(rng, list(pool), {ch})
    return "".join(chars)


def corrupt_ocr(scene: SceneInstance, spec: CorruptionSpec) -> SceneInstance:
    """Recognition noise on the token list; grid and gold answers unchanged.

    Pure in (scene, spec): the noise stream is derived from spec.seed and the
    instance id.
    """
    rng = np.random.default_rng([spec.seed, zlib.crc32(scene.id.encode())])
    kept = []
    for tok in scene.tokens:
        if rng.random() < spec.word_drop_rate:
            continue
        word = _substitute_chars(rng, tok.word, spec.char_sub_rate)
        kept.append(dataclasses.replace(tok, word=word))
    return SceneInstance(
        id=scene.id,
        question=list(scene.question),
        tokens=kept,
        answers=list(scene.answers),
        answer_tokens=list(scene.answer_tokens),
        template=scene.template,
        grid_size=scene.grid_size,
        scene_objects=list(scene.scene_objects),
        visual_grid=scene.visual_grid,
    )


def corrupt_split(instances, spec: CorruptionSpec) -> list[SceneInstance]:
    return [corrupt_ocr(s, spec) for s in instances]


# ---------------------------------------------------------------------------
# persistence


def _token_to_dict(tok: SceneTextToken) -> dict:
    return {
        "word": tok.word,
        "box": [tok.box.x1, tok.box.y1, tok.box.x2, tok.box.y2],
        "color": tok.color,
        "category": tok.category,
        "font_size": tok.font_size,
    }


def _token_from_dict(d: dict) -> SceneTextToken:
    return SceneTextToken(
        word=d["word"],
        box=BBox.from_seq(d["box"]),
        color=d["color"],
        category=d["category"],
        font_size=d["font_size"],
    )


def save_dataset(instances, path, config: WorldConfig, seed: int, split: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "locgen-dataset",
        "world_config": config.to_dict(),
        "seed": seed,
        "split": split,
        "count": len(instances),
    }
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for inst in instances:
            rec = {
                "id": inst.id,
                "template": inst.template,
                "question": inst.question,
                "tokens": [_token_to_dict(t) for t in inst.tokens],
                "answers": inst.answers,
                "answer_tokens": inst.answer_tokens,
            }
            if inst.scene_objects != inst.tokens:
                rec["scene_objects"] = [_token_to_dict(t) for t in inst.scene_objects]
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path) -> tuple[list[SceneInstance], dict]:
    """Returns (instances, header); raises DatasetFormatError with the
    offending line number on malformed input."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: line 1: malformed header: {e}") from e
    if header.get("kind") != "locgen-dataset":
        raise DatasetFormatError(f"{path}: line 1: not a locgen dataset header")
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported schema_version {version!r} (reader supports {SCHEMA_VERSION})"
        )
    grid_size = header["world_config"]["grid_size"]
    instances = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            tokens = [_token_from_dict(t) for t in rec["tokens"]]
            objects = (
                [_token_from_dict(t) for t in rec["scene_objects"]]
                if "scene_objects" in rec
                else None
            )
            instances.append(
                SceneInstance(
                    id=rec["id"],
                    question=rec["question"],
                    tokens=tokens,
                    answers=rec["answers"],
                    answer_tokens=rec["answer_tokens"],
                    template=rec["template"],
                    grid_size=grid_size,
                    scene_objects=objects,
                )
            )
        except (KeyError, ValueError, TypeError) as e:
            raise DatasetFormatError(f"{path}: line {lineno}: malformed record: {e}") from e
    if header.get("count") != len(instances):
        raise DatasetFormatError(
            f"{path}: header count {header.get('count')} != {len(instances)} records "
            "(truncated file?)"
        )
    return instances, header
