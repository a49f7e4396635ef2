import numpy as np
import pytest

from stridelab.metrics import (
    EmbeddingSet,
    in_batch_similarity,
    kid,
    kid_blocks,
    pairwise_matrix,
    report_for_prompt_sets,
    vendi_score,
)


def cosine_oracle(x):
    n = len(x)
    m = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ni, nj = np.linalg.norm(x[i]), np.linalg.norm(x[j])
            m[i, j] = 0.0 if ni == 0 or nj == 0 else float(x[i] @ x[j]) / (ni * nj)
            if i == j:
                m[i, j] = 1.0
    return m


def mmd2_oracle(x, y):
    """Direct O(n^2) double-loop unbiased MMD^2 under the poly3 kernel."""
    d = x.shape[1]

    def k(a, b):
        return (float(a @ b) / d + 1.0) ** 3

    m, mm = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j)
    syy = sum(k(y[i], y[j]) for i in range(mm) for j in range(mm) if i != j)
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(mm))
    return sxx / (m * (m - 1)) + syy / (mm * (mm - 1)) - 2.0 * sxy / (m * mm)


class TestInBatchSimilarity:
    def test_identical_vectors(self):
        v = np.tile([1.0, 2.0, 3.0], (5, 1))
        assert abs(in_batch_similarity(EmbeddingSet(v)) - 1.0) < 1e-12

    def test_orthogonal_pair(self):
        assert in_batch_similarity(EmbeddingSet(np.eye(2))) == 0.0

    def test_hand_computed_mean(self):
        v = np.array([[1.0, 0.0], [0.0, 1.0], [1.0 / np.sqrt(2), 1.0 / np.sqrt(2)]])
        expected = (0.0 + np.sqrt(2) / 2 + np.sqrt(2) / 2) / 3
        assert abs(in_batch_similarity(EmbeddingSet(v)) - expected) < 1e-12

    def test_zero_vector_convention(self):
        v = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert in_batch_similarity(EmbeddingSet(v)) == 0.0

    def test_too_few_vectors_rejected(self):
        with pytest.raises(ValueError):
            in_batch_similarity(EmbeddingSet(np.ones((1, 3))))

    def test_permutation_and_scaling_invariance(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((6, 4))
        base = in_batch_similarity(EmbeddingSet(v))
        perm = rng.permutation(6)
        scales = rng.uniform(0.1, 10.0, size=(6, 1))
        assert abs(in_batch_similarity(EmbeddingSet(v[perm])) - base) < 1e-12
        assert abs(in_batch_similarity(EmbeddingSet(v * scales)) - base) < 1e-10

    def test_equals_one_iff_parallel_positive(self):
        parallel = np.array([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]])
        assert abs(in_batch_similarity(EmbeddingSet(parallel)) - 1.0) < 1e-12
        flipped = np.array([[1.0, 1.0], [-2.0, -2.0]])
        assert in_batch_similarity(EmbeddingSet(flipped)) < 1.0


class TestVendiScore:
    def test_identical_vectors(self):
        v = np.tile([2.0, 1.0], (7, 1))
        assert abs(vendi_score(EmbeddingSet(v)) - 1.0) < 1e-9

    def test_orthonormal_vectors(self):
        for n in (2, 5, 9):
            assert abs(vendi_score(EmbeddingSet(np.eye(n))) - n) < 1e-9

    def test_two_orthogonal_pairs(self):
        v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        assert abs(vendi_score(EmbeddingSet(v)) - 2.0) < 1e-9

    def test_single_vector(self):
        assert abs(vendi_score(EmbeddingSet(np.array([[3.0, 4.0]]))) - 1.0) < 1e-12

    def test_bounds_on_random_sets(self):
        rng = np.random.default_rng(1)
        for n in (2, 8, 20):
            v = rng.standard_normal((n, 5))
            score = vendi_score(EmbeddingSet(v))
            assert 1.0 - 1e-9 <= score <= n + 1e-9

    def test_permutation_and_scaling_invariance(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((8, 3))
        base = vendi_score(EmbeddingSet(v))
        assert abs(vendi_score(EmbeddingSet(v[rng.permutation(8)])) - base) < 1e-9
        scales = rng.uniform(0.5, 5.0, size=(8, 1))
        assert abs(vendi_score(EmbeddingSet(v * scales)) - base) < 1e-9

    def test_duplication_invariance(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal((6, 4))
        doubled = np.concatenate([v, v])
        assert abs(vendi_score(EmbeddingSet(doubled)) - vendi_score(EmbeddingSet(v))) < 1e-9


class TestPairwiseMatrix:
    def test_single_vector_cosine(self):
        m = pairwise_matrix(EmbeddingSet(np.array([[1.0, 2.0]])), "cosine")
        assert np.array_equal(m, [[1.0]])

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(4)
        emb = EmbeddingSet(rng.standard_normal((12, 7)))
        for kernel in ("cosine", "poly3"):
            m = pairwise_matrix(emb, kernel)
            assert np.array_equal(m, m.T)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((5, 3))
        m = pairwise_matrix(EmbeddingSet(x), "cosine")
        assert np.abs(m - cosine_oracle(x)).max() < 1e-12
        m3 = pairwise_matrix(EmbeddingSet(x), "poly3")
        oracle = np.array([[(float(x[i] @ x[j]) / 3 + 1.0) ** 3 for j in range(5)] for i in range(5)])
        assert np.abs(m3 - oracle).max() < 1e-12

    def test_unknown_kernel_rejected(self):
        with pytest.raises(ValueError):
            pairwise_matrix(EmbeddingSet(np.ones((2, 2))), "rbf")


class TestKid:
    def test_identical_sets_single_block_matches_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((16, 8))
        val = kid(EmbeddingSet(x), EmbeddingSet(x), block_count=1, seed=0)
        # permutation is irrelevant when both sets are the whole matrix;
        # the oracle sees the same (shuffled) blocks
        assert abs(val - mmd2_oracle(x, x)) < 1e-10

    def test_blocks_match_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((24, 6))
        y = rng.standard_normal((20, 6)) + 0.3
        blocks = kid_blocks(EmbeddingSet(x), EmbeddingSet(y), block_count=3, seed=5)
        # reproduce the block protocol independently
        rng2 = np.random.default_rng(np.random.SeedSequence((5,)))
        px = rng2.permutation(24)
        py = rng2.permutation(20)
        b = 20 // 3
        for i in range(3):
            oracle = mmd2_oracle(x[px[i * b:(i + 1) * b]], y[py[i * b:(i + 1) * b]])
            assert abs(blocks[i] - oracle) < 1e-10

    def test_self_distance_within_three_standard_errors(self):
        rng = np.random.default_rng(8)
        pool = rng.standard_normal((120, 10))
        gen, ref = EmbeddingSet(pool[:60]), EmbeddingSet(pool[60:])
        blocks = kid_blocks(gen, ref, block_count=10, seed=1)
        se = blocks.std(ddof=1) / np.sqrt(len(blocks))
        assert abs(blocks.mean()) < 3 * se

    def test_mean_shift_increases_distance(self):
        rng = np.random.default_rng(9)
        ref = rng.standard_normal((40, 5))
        near = kid(EmbeddingSet(ref[:20]), EmbeddingSet(ref[20:]), block_count=2, seed=0)
        shifted = kid(EmbeddingSet(ref[:20] + 10.0), EmbeddingSet(ref[20:]), block_count=2, seed=0)
        assert shifted > 0
        assert shifted > near

    def test_insufficient_samples_rejected(self):
        x = EmbeddingSet(np.ones((4, 2)))
        with pytest.raises(ValueError):
            kid(x, x, block_count=3, seed=0)


def test_embedding_set_rejects_non_finite():
    with pytest.raises(ValueError):
        EmbeddingSet(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        EmbeddingSet(np.array([[np.inf, 0.0]]))


def test_report_for_prompt_sets():
    rng = np.random.default_rng(10)
    sets = [EmbeddingSet(rng.standard_normal((4, 6)), "toy-pixels") for _ in range(3)]
    ref = EmbeddingSet(rng.standard_normal((12, 6)), "toy-pixels")
    report = report_for_prompt_sets(sets, ref, block_count=2, seed=0)
    assert len(report.per_prompt) == 3
    assert report.kid is not None
    assert report.source_tag == "toy-pixels"
    assert abs(report.in_batch_sim - np.mean([p.in_batch_sim for p in report.per_prompt])) < 1e-12
