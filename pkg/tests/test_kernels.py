import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stsub.kernels import (
    DEFAULT_C_GRID,
    DegenerateKernelError,
    KernelBank,
    alignment_score,
    build_bank,
    cross_kernel,
    fuse,
    gaussian_kernel,
    ideal_kernel,
    kernel_weights,
    mean_sq_distance,
)


def test_single_column_kernel():
    assert gaussian_kernel(np.ones((3, 1)), 2.0).tolist() == [[1.0]]


def test_identical_columns_are_degenerate_or_ones():
    with pytest.raises(DegenerateKernelError):
        gaussian_kernel(np.ones((3, 2)), 2.0)
    # with an external mu, zero distance gives ones
    assert np.array_equal(gaussian_kernel(np.ones((3, 2)), 2.0, mu=1.0), np.ones((2, 2)))


def test_gaussian_matches_formula(rng):
    X = rng.standard_normal((5, 5))
    pairs = [np.sum((X[:, i] - X[:, j]) ** 2) for i in range(5) for j in range(5) if i != j]
    mu = np.mean(pairs)
    expect = np.array([[np.exp(-np.sum((X[:, i] - X[:, j]) ** 2) / (2 * mu)) for j in range(5)] for i in range(5)])
    assert np.allclose(gaussian_kernel(X, 2.0), expect, rtol=1e-12, atol=0)
    assert np.isclose(mean_sq_distance(X), mu, rtol=1e-12)


def test_default_bank_has_eleven_kernels(rng):
    bank = build_bank(rng.standard_normal((3, 6)))
    assert bank.size == 11
    assert bank.params == DEFAULT_C_GRID
    assert DEFAULT_C_GRID[0] == 2.0 and DEFAULT_C_GRID[-1] == 3.0
    for K in bank.kernels:
        assert np.array_equal(K, K.T) and np.all(np.diag(K) == 1)


def test_singleton_grid(rng):
    assert build_bank(rng.standard_normal((2, 4)), (1.0,)).size == 1


def test_larger_bandwidth_weakly_increases_entries(rng):
    bank = build_bank(rng.standard_normal((4, 7)))
    for a, b in zip(bank.kernels, bank.kernels[1:]):
        assert np.all(b >= a)


def test_ideal_kernel_examples():
    assert np.array_equal(ideal_kernel([1, 2]), np.eye(2))
    assert np.array_equal(ideal_kernel([1, 1]), np.ones((2, 2)))
    expect = np.kron(np.eye(2), np.ones((2, 2)))
    assert np.array_equal(ideal_kernel([1, 1, 2, 2]), expect)


def test_alignment_examples(rng):
    Kd = ideal_kernel([0, 0, 1, 2, 2])
    assert alignment_score(Kd, Kd) == pytest.approx(1.0, abs=1e-15)
    assert alignment_score(np.eye(3), np.eye(3)) == pytest.approx(1.0, abs=1e-15)
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 4))
    A, B = A @ A.T, B @ B.T
    oracle = np.trace(A.T @ B) / np.sqrt(np.trace(A.T @ A) * np.trace(B.T @ B))
    assert alignment_score(A, B) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ZeroDivisionError):
        alignment_score(np.zeros((2, 2)), np.eye(2))


@given(st.floats(1e-3, 1e3))
def test_alignment_scale_invariance(c):
    K = gaussian_kernel(np.arange(12.0).reshape(3, 4), 2.0)
    Kd = ideal_kernel([0, 0, 1, 1])
    assert alignment_score(c * K, Kd) == pytest.approx(alignment_score(K, Kd), rel=1e-12)


def test_single_kernel_gets_full_weight(rng):
    bank = build_bank(rng.standard_normal((3, 5)), (2.0,))
    assert kernel_weights(bank, ideal_kernel([0, 0, 1]), [0, 1, 2]).tolist() == [1.0]


def test_equal_alignment_splits_evenly(rng):
    K = gaussian_kernel(rng.standard_normal((3, 4)), 2.0)
    bank = KernelBank((K, K.copy()), (2.0, 2.0), 1.0)
    assert np.allclose(kernel_weights(bank, ideal_kernel([0, 0, 1, 1]), np.arange(4)), [0.5, 0.5], atol=1e-15)


def test_ideal_member_gets_max_weight(rng):
    y = [0, 0, 1, 1, 2]
    X = rng.standard_normal((3, 5))
    bank = build_bank(X)
    ideal = ideal_kernel(y) + 0.0
    bank = KernelBank(bank.kernels + (ideal,), bank.params + (0.0,), bank.mu)
    beta = kernel_weights(bank, ideal_kernel(y), np.arange(5))
    assert np.argmax(beta) == bank.size - 1
    assert abs(beta.sum() - 1) <= 1e-12 and np.all(beta > 0)


@given(st.permutations(range(11)))
def test_weights_follow_bank_permutation(perm):
    X = np.random.default_rng(3).standard_normal((4, 8))
    bank = build_bank(X)
    y = [0, 0, 1, 1, 2, 2]
    beta = kernel_weights(bank, ideal_kernel(y), np.arange(6))
    shuffled = KernelBank(tuple(bank.kernels[i] for i in perm), tuple(bank.params[i] for i in perm), bank.mu)
    assert np.allclose(kernel_weights(shuffled, ideal_kernel(y), np.arange(6)), beta[list(perm)], rtol=1e-13)


def test_fuse_endpoints(rng):
    bank = build_bank(rng.standard_normal((3, 6)), (2.0, 2.5, 3.0))
    f = fuse(bank, [0.0, 1.0, 0.0], [0, 1, 2])
    assert np.array_equal(f.K, bank.kernels[1])
    same = KernelBank((bank.kernels[0],) * 3, (2.0,) * 3, bank.mu)
    assert np.allclose(fuse(same, np.full(3, 1 / 3), [0]).K, bank.kernels[0], rtol=1e-15)
    with pytest.raises(ValueError):
        fuse(bank, [0.5, 0.5], [0])
    with pytest.raises(ValueError):
        fuse(bank, [0.5, 0.6, 0.1], [0])


def test_fused_blocks(rng):
    bank = build_bank(rng.standard_normal((3, 6)))
    f = fuse(bank, np.full(11, 1 / 11), [0, 2, 4])
    assert np.array_equal(f.K_ul, f.K_lu.T)
    assert f.K_l.shape == (6, 3) and f.K_u.shape == (6, 3)
    assert np.array_equal(f.unlabeled, [1, 3, 5])


@given(
    arrays(np.float64, (3, 9), elements=st.floats(-5, 5, allow_nan=False)).filter(lambda X: mean_sq_distance(X) > 1e-3),
    arrays(np.float64, 11, elements=st.floats(0.01, 1.0)),
)
def test_fused_kernel_is_psd(X, w):
    bank = build_bank(X)
    K = fuse(bank, w / w.sum(), np.arange(4)).K
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.abs(K).max()


def test_duplicated_bank_leaves_fusion_unchanged(rng):
    X = rng.standard_normal((4, 8))
    y = [0, 0, 1, 1]
    bank = build_bank(X)
    beta = kernel_weights(bank, ideal_kernel(y), np.arange(4))
    twice = bank + bank
    beta2 = kernel_weights(twice, ideal_kernel(y), np.arange(4))
    assert np.allclose(beta2[:11], beta / 2, rtol=1e-12)
    assert np.allclose(fuse(twice, beta2, np.arange(4)).K, fuse(bank, beta, np.arange(4)).K, rtol=0, atol=1e-12)


def test_cross_kernel_matches_training_kernel(rng):
    X = rng.standard_normal((3, 6))
    bank = build_bank(X)
    beta = np.full(11, 1 / 11)
    K = fuse(bank, beta, np.arange(3)).K
    assert np.allclose(cross_kernel(X, X, "gaussian", bank.mu, bank.params, beta), K, atol=1e-14)
