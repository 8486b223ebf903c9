import numpy as np
import pytest

from locgen import geometry, kernels

from oracles import dp_levenshtein, random_boxes


def codes(s: str) -> np.ndarray:
    return np.array([ord(c) for c in s], dtype=np.int32)


def test_backends_available():
    assert "numpy" in kernels.available_backends()


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_levenshtein_classic_cases(kernel_backend):
    assert kernels.levenshtein_codes(codes("kitten"), codes("sitting")) == 3
    assert kernels.levenshtein_codes(codes(""), codes("abc")) == 3
    assert kernels.levenshtein_codes(codes("abc"), codes("")) == 3
    assert kernels.levenshtein_codes(codes("same"), codes("same")) == 0


def test_levenshtein_matches_dp_oracle(kernel_backend):
    rng = np.random.default_rng(7)
    alphabet = "abcde"
    for _ in range(300):
        a = "".join(rng.choice(list(alphabet), size=rng.integers(0, 12)))
        b = "".join(rng.choice(list(alphabet), size=rng.integers(0, 12)))
        assert kernels.levenshtein_codes(codes(a), codes(b)) == dp_levenshtein(a, b)


def test_pair_ops_match_scalar_geometry(kernel_backend):
    rng = np.random.default_rng(3)
    a = random_boxes(rng, 200)
    b = random_boxes(rng, 200)
    np.testing.assert_allclose(
        kernels.pair_iou(a, b), [geometry.iou(x, y) for x, y in zip(a, b)], atol=1e-12
    )
    np.testing.assert_allclose(
        kernels.pair_giou(a, b), [geometry.giou(x, y) for x, y in zip(a, b)], atol=1e-12
    )
    np.testing.assert_allclose(
        kernels.pair_coverage(a, b), [geometry.iou_hat(x, y) for x, y in zip(a, b)], atol=1e-12
    )


def test_pairwise_iou_matches_pair_diag(kernel_backend):
    rng = np.random.default_rng(11)
    a = random_boxes(rng, 40)
    full = kernels.pairwise_iou(a, a)
    np.testing.assert_allclose(np.diag(full), np.ones(40), atol=1e-12)
    np.testing.assert_allclose(full, full.T, atol=1e-12)


def test_backends_agree():
    if len(kernels.available_backends()) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(5)
    a = random_boxes(rng, 100)
    b = random_boxes(rng, 100)
    sa, sb = codes("abacus"), codes("abyss")
    results = {}
    prev = kernels.active_backend()
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            results[name] = (
                kernels.pair_iou(a, b),
                kernels.pair_giou(a, b),
                kernels.pair_coverage(a, b),
                kernels.pairwise_iou(a[:10], b[:10]),
                kernels.levenshtein_codes(sa, sb),
            )
    finally:
        kernels.set_backend(prev)
    names = sorted(results)
    for x, y in zip(results[names[0]][:-1], results[names[1]][:-1]):
        np.testing.assert_array_equal(x, y)
    assert results[names[0]][-1] == results[names[1]][-1]


def test_box_shape_validation():
    with pytest.raises(ValueError):
        kernels.pair_iou(np.zeros((3, 5)), np.zeros((3, 5)))
