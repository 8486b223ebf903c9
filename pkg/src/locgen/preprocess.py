"""Training targets for the location module: exact answer-word matching,
binary token tags, and the answer-region box.

The region target is the componentwise min/max union of every matched token
box (docs/mechanism_map.md#answer-region-union); with no match it degenerates
to the zero box. Matching is word-by-word with no contiguity requirement, and
every occurrence of a repeated word is tagged.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

from .geometry import BBox, ZERO_BOX, union_all

_PUNCT = string.punctuation + "‘’“”"


def normalize_word(w: str) -> str:
    """Lowercase and strip surrounding punctuation; interior characters stay."""
    return w.strip(_PUNCT).lower()


@dataclass
class AlmTargets:
    b_a: BBox
    tags: list[int]
    matched_indices: set[int]


def build_targets(answer_tokens, tokens) -> AlmTargets:
    """Tag every scene token whose normalized word appears in the answer."""
    answer_set = {normalize_word(w) for w in answer_tokens}
    answer_set.discard("")
    matched = {
        i for i, tok in enumerate(tokens) if normalize_word(tok.word) in answer_set
    }
    tags = [1 if i in matched else 0 for i in range(len(tokens))]
    if matched:
        b_a = union_all([tokens[i].box for i in sorted(matched)])
    else:
        b_a = ZERO_BOX
    return AlmTargets(b_a=b_a, tags=tags, matched_indices=matched)
