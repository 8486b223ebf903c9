import dataclasses
import json

import numpy as np
import pytest

from locgen import vocab
from locgen.geometry import BBox, pairwise_iou
from locgen.preprocess import build_targets
from locgen.world import (
    GRID_FEATURES,
    CorruptionSpec,
    DatasetFormatError,
    GenerationError,
    SceneInstance,
    SceneTextToken,
    WorldConfig,
    build_visual_grid,
    corrupt_ocr,
    decode_cell,
    generate_dataset,
    generate_split,
    load_dataset,
    reading_order,
    save_dataset,
)

from oracles import dp_levenshtein

SMALL = WorldConfig(n_train=30, n_val=8, n_test=12)


@pytest.fixture(scope="module")
def small_world():
    return generate_dataset(SMALL, seed=7)


def test_vocabulary_is_well_formed():
    assert len(vocab.WORD_LIST) == 200
    assert len(set(vocab.WORD_LIST)) == 200
    assert not set(vocab.WORD_LIST) & set(vocab.TEMPLATE_WORDS)
    v = vocab.default_vocab()
    assert v.word_id("apple") != v.word_id("7")
    assert v.word_id("zzzzz") == v.word_id("qqqqq")  # both unknown words
    assert v.word_id("1234") != v.word_id("zzzzz")  # unknown number differs


def test_generator_pieces_and_detokenize():
    v = vocab.default_vocab()
    assert v.generator_pieces("apple") == [v.word_id("apple")]
    assert len(v.generator_pieces("201")) == 3
    assert v.detokenize(v.generator_pieces("201")) == "201"
    seq = v.generator_pieces("apple") + [v.wsep_id] + v.generator_pieces("15")
    assert v.detokenize(seq) == "apple 15"
    assert v.detokenize(v.generator_pieces("unted")) == "unted"
    seq_eos = v.generator_pieces("apple") + [v.eos_id] + v.generator_pieces("pie")
    assert v.detokenize(seq_eos) == "apple"


def test_determinism_byte_identical(tmp_path):
    a = generate_dataset(SMALL, seed=7)
    b = generate_dataset(SMALL, seed=7)
    for split in ("train", "val", "test"):
        save_dataset(a[split], tmp_path / f"a_{split}.jsonl", SMALL, 7, split)
        save_dataset(b[split], tmp_path / f"b_{split}.jsonl", SMALL, 7, split)
        assert (tmp_path / f"a_{split}.jsonl").read_bytes() == (
            tmp_path / f"b_{split}.jsonl"
        ).read_bytes()
    c = generate_dataset(SMALL, seed=8)
    assert c["train"][0] != a["train"][0]


def test_split_sizes():
    cfg = dataclasses.replace(SMALL, n_train=40, n_test=15)
    world = generate_dataset(cfg, seed=3)
    assert len(world["train"]) == 40
    assert len(world["val"]) == cfg.n_val
    assert len(world["test"]) == 15


def test_scene_invariants(small_world):
    for inst in small_world["train"]:
        assert SMALL.min_tokens <= len(inst.tokens)
        words = [t.word for t in inst.tokens]
        assert len(set(words)) == len(words)
        boxes = np.stack([t.box.as_array() for t in inst.tokens])
        assert np.all(boxes >= 0.0) and np.all(boxes <= 1.0)
        m = pairwise_iou(boxes, boxes)
        np.fill_diagonal(m, 0.0)
        assert m.max() < 0.1
        assert inst.answers[0] == " ".join(inst.answer_tokens)
        assert len(inst.answers) == 10
        assert inst.answers.count(inst.answers[0]) >= 8


def test_answerability_every_instance(small_world):
    for split in small_world.values():
        for inst in split:
            t = build_targets(inst.answer_tokens, inst.tokens)
            assert len(t.matched_indices) >= 1, inst.id


def test_ambiguity_fraction_one_forces_distractors():
    cfg = dataclasses.replace(SMALL, ambiguity_fraction=1.0, n_train=40)
    for inst in generate_split(cfg, seed=11, split="train", count=40):
        target = next(
            t for t in inst.tokens if t.word == inst.answer_tokens[0]
        )
        others = [t for t in inst.tokens if t.word not in inst.answer_tokens]
        assert any(
            t.color == target.color and t.category != target.category for t in others
        ), (inst.id, inst.template)
        assert any(
            t.category == target.category and t.color != target.color for t in others
        ), (inst.id, inst.template)


def test_generation_error_names_constraint():
    cfg = dataclasses.replace(SMALL, min_tokens=90, max_tokens=90, max_place_attempts=40)
    with pytest.raises(GenerationError, match="IoU"):
        generate_split(cfg, seed=0, split="train", count=1)


def test_visual_grid_faithful(small_world):
    for inst in small_world["train"][:10]:
        grid = inst.visual_grid
        assert grid.shape == (SMALL.grid_size, SMALL.grid_size, GRID_FEATURES)
        for tok in inst.tokens:
            cells = []
            centers = (np.arange(SMALL.grid_size) + 0.5) / SMALL.grid_size
            for r in np.nonzero((centers >= tok.box.y1) & (centers <= tok.box.y2))[0]:
                for c in np.nonzero((centers >= tok.box.x1) & (centers <= tok.box.x2))[0]:
                    cells.append(decode_cell(grid[r, c]))
            assert cells, tok
            assert all(cell == tok.attributes for cell in cells)


def test_grid_empty_cells_are_zero():
    tok = SceneTextToken("apple", BBox(0.0, 0.0, 0.2, 0.2), "red", "word", "small")
    grid = build_visual_grid([tok], 16)
    assert decode_cell(grid[15, 15]) is None
    assert decode_cell(grid[0, 0]) == tok.attributes


def test_reading_order():
    toks = [
        SceneTextToken("c", BBox(0.1, 0.8, 0.2, 0.9), "red", "word", "small"),
        SceneTextToken("a", BBox(0.5, 0.1, 0.6, 0.2), "red", "word", "small"),
        SceneTextToken("b", BBox(0.8, 0.1, 0.9, 0.2), "red", "word", "small"),
    ]
    assert [toks[i].word for i in reading_order(toks)] == ["a", "b", "c"]


class TestCorruption:
    def test_identity_at_zero_rates(self, small_world):
        inst = small_world["train"][0]
        out = corrupt_ocr(inst, CorruptionSpec(0.0, 0.0, seed=5))
        assert out == inst

    def test_full_drop_keeps_answers(self, small_world):
        inst = small_world["train"][0]
        out = corrupt_ocr(inst, CorruptionSpec(0.0, 1.0, seed=5))
        assert out.tokens == []
        assert out.answers == inst.answers
        assert out.scene_objects == inst.scene_objects
        np.testing.assert_array_equal(out.visual_grid, inst.visual_grid)

    def test_substitution_preserves_length_and_distance(self):
        tok = SceneTextToken("united", BBox(0.1, 0.1, 0.3, 0.2), "red", "word", "small")
        inst = SceneInstance(
            id="x-1",
            question=["what", "?"],
            tokens=[tok],
            answers=["united"] * 10,
            answer_tokens=["united"],
            template="category_color",
            grid_size=16,
        )
        for seed in range(50):
            out = corrupt_ocr(inst, CorruptionSpec(0.15, 0.0, seed=seed))
            w = out.tokens[0].word
            assert len(w) == 6
            assert dp_levenshtein(w, "united") == sum(a != b for a, b in zip(w, "united"))
        hits = [
            corrupt_ocr(inst, CorruptionSpec(0.15, 0.0, seed=s)).tokens[0].word
            for s in range(50)
        ]
        one_sub = [w for w in hits if dp_levenshtein(w, "united") == 1]
        assert one_sub, "expected at least one single-substitution corruption in 50 seeds"

    def test_pure_function_of_scene_and_spec(self, small_world):
        inst = small_world["train"][3]
        spec = CorruptionSpec(0.3, 0.1, seed=9)
        assert corrupt_ocr(inst, spec) == corrupt_ocr(inst, spec)

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            CorruptionSpec(1.5, 0.0, seed=0)


class TestPersistence:
    def test_round_trip(self, small_world, tmp_path):
        path = tmp_path / "train.jsonl"
        save_dataset(small_world["train"], path, SMALL, 7, "train")
        loaded, header = load_dataset(path)
        assert loaded == small_world["train"]
        assert header["schema_version"] == 1
        assert header["world_config"] == SMALL.to_dict()
        grids_equal = [
            np.array_equal(a.visual_grid, b.visual_grid)
            for a, b in zip(loaded, small_world["train"])
        ]
        assert all(grids_equal)

    def test_round_trip_corrupted(self, small_world, tmp_path):
        corrupted = [
            corrupt_ocr(s, CorruptionSpec(0.3, 0.2, seed=1)) for s in small_world["test"]
        ]
        path = tmp_path / "test.jsonl"
        save_dataset(corrupted, path, SMALL, 7, "test")
        loaded, _ = load_dataset(path)
        assert loaded == corrupted

    def test_unknown_schema_version(self, small_world, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(small_world["val"], path, SMALL, 7, "val")
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["schema_version"] = 99
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DatasetFormatError, match="schema_version"):
            load_dataset(path)

    def test_truncated_line_cites_lineno(self, small_world, tmp_path):
        path = tmp_path / "d.jsonl"
        save_dataset(small_world["val"][:3], path, SMALL, 7, "val")
        lines = path.read_text().splitlines()
        lines[2] = lines[2][: len(lines[2]) // 2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            load_dataset(path)

    def test_not_a_dataset(self, tmp_path):
        path = tmp_path / "junk.jsonl"
        path.write_text('{"foo": 1}\n')
        with pytest.raises(DatasetFormatError):
            load_dataset(path)
