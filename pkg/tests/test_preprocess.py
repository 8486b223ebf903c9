import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from locgen.geometry import BBox, ZERO_BOX, union_box
from locgen.preprocess import AlmTargets, build_targets, normalize_word
from locgen.world import SceneTextToken


def tok(word, box):
    return SceneTextToken(word, BBox.from_seq(box), "red", "word", "small")


class TestNormalizeWord:
    def test_examples(self):
        assert normalize_word("America,") == "america"
        assert normalize_word("201") == "201"
        assert normalize_word("") == ""

    def test_interior_preserved(self):
        assert normalize_word("don't") == "don't"
        assert normalize_word("(Hello!)") == "hello"


class TestBuildTargets:
    def test_single_match(self):
        tokens = [
            tok("to", [0.1, 0.1, 0.2, 0.2]),
            tok("201", [0.4, 0.4, 0.5, 0.5]),
            tok("15", [0.7, 0.7, 0.8, 0.8]),
        ]
        t = build_targets(["15"], tokens)
        assert t.tags == [0, 0, 1]
        assert t.matched_indices == {2}
        assert t.b_a == tokens[2].box

    def test_two_token_union(self):
        bk = [0.1, 0.5, 0.3, 0.7]
        bl = [0.6, 0.1, 0.9, 0.3]
        tokens = [tok("iron", bk), tok("gate", bl), tok("owl", [0.0, 0.9, 0.1, 1.0])]
        t = build_targets(["iron", "gate"], tokens)
        assert t.tags == [1, 1, 0]
        assert t.b_a == union_box(bk, bl)
        assert t.b_a == BBox(0.1, 0.1, 0.9, 0.7)

    def test_no_match_zero_box(self):
        t = build_targets(["ghost"], [tok("iron", [0.1, 0.1, 0.2, 0.2])])
        assert t.tags == [0]
        assert t.matched_indices == set()
        assert t.b_a == ZERO_BOX

    def test_empty_tokens(self):
        t = build_targets(["iron"], [])
        assert t == AlmTargets(b_a=ZERO_BOX, tags=[], matched_indices=set())

    def test_matches_all_occurrences(self):
        tokens = [tok("15", [0.1, 0.1, 0.2, 0.2]), tok("15", [0.6, 0.6, 0.7, 0.7])]
        t = build_targets(["15"], tokens)
        assert t.tags == [1, 1]
        assert t.b_a == BBox(0.1, 0.1, 0.7, 0.7)

    def test_normalized_matching(self):
        t = build_targets(["America"], [tok("america,", [0.2, 0.2, 0.4, 0.4])])
        assert t.tags == [1]

    def test_containment_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(1, 6)
            words = [str(rng.integers(1, 50)) for _ in range(n)]
            boxes = []
            for _ in range(n):
                x1, y1 = rng.uniform(0, 0.5, 2)
                boxes.append([x1, y1, x1 + rng.uniform(0.05, 0.4), y1 + rng.uniform(0.05, 0.4)])
            tokens = [tok(w, b) for w, b in zip(words, boxes)]
            answer = [words[rng.integers(0, n)]]
            t = build_targets(answer, tokens)
            for i in sorted(t.matched_indices):
                assert t.b_a.x1 <= tokens[i].box.x1 and t.b_a.y1 <= tokens[i].box.y1
                assert t.b_a.x2 >= tokens[i].box.x2 and t.b_a.y2 >= tokens[i].box.y2

    @given(st.permutations(list(range(4))))
    def test_permutation_equivariance(self, perm):
        tokens = [
            tok("iron", [0.1, 0.1, 0.2, 0.2]),
            tok("owl", [0.3, 0.3, 0.4, 0.4]),
            tok("15", [0.5, 0.5, 0.6, 0.6]),
            tok("iron", [0.7, 0.7, 0.8, 0.8]),
        ]
        base = build_targets(["iron"], tokens)
        shuffled = [tokens[i] for i in perm]
        got = build_targets(["iron"], shuffled)
        assert got.matched_indices == {perm.index(i) for i in base.matched_indices}
        assert got.b_a == base.b_a

    def test_unmatched_token_never_changes_box(self):
        tokens = [tok("iron", [0.2, 0.2, 0.5, 0.5])]
        base = build_targets(["iron"], tokens)
        extended = build_targets(["iron"], tokens + [tok("owl", [0.0, 0.0, 1.0, 1.0])])
        assert extended.b_a == base.b_a
