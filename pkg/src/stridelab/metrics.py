"""Diversity and distributional-distance metrics over embedding vectors.

At desk scale the embeddings are flattened generator outputs or captured
features; the set's source tag records which, so reports are never
conflated with scores computed from pretrained encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmbeddingSet",
    "PromptMetrics",
    "MetricsReport",
    "pairwise_matrix",
    "in_batch_similarity",
    "vendi_score",
    "kid",
    "kid_blocks",
    "report_for_prompt_sets",
]

_EIG_CLAMP = -1e-8


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """An (n, d) matrix of embedding vectors plus a free-text source tag."""

    vectors: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2:
            raise ValueError("vectors must be an (n, d) matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding vectors must be finite")
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def pairwise_matrix(emb: EmbeddingSet, kernel: str = "cosine") -> np.ndarray:
    """Exactly symmetric n x n kernel matrix.

    "cosine": zero vectors get 0 off-diagonal and 1 on the diagonal, like
    every other vector. "poly3": (x.y / d + 1)**3.
    """
    x = emb.vectors
    if kernel == "cosine":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        xn = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
        m = xn @ xn.T
        m = 0.5 * (m + m.T)
        np.clip(m, -1.0, 1.0, out=m)
        np.fill_diagonal(m, 1.0)
        return m
    if kernel == "poly3":
        m = (x @ x.T / x.shape[1] + 1.0) ** 3
        return 0.5 * (m + m.T)
    raise ValueError(f"unknown kernel {kernel!r}")


def in_batch_similarity(emb: EmbeddingSet) -> float:
    """Mean cosine similarity over all unordered pairs; lower = more diverse."""
    n = len(emb)
    if n < 2:
        raise ValueError(f"need at least 2 vectors for pairwise similarity, got {n}")
    m = pairwise_matrix(emb, "cosine")
    iu = np.triu_indices(n, k=1)
    return float(m[iu].mean())


def vendi_score(emb: EmbeddingSet) -> float:
    """Effective number of distinct vectors: exp of the entropy of eig(K / n).

    K is the cosine kernel. Small negative eigenvalues (above -1e-8) are
    floating-point artifacts and get clamped to zero; anything worse means
    the kernel is not PSD and raises.
    """
    n = len(emb)
    if n < 1:
        raise ValueError("need at least 1 vector")
    lam = np.linalg.eigvalsh(pairwise_matrix(emb, "cosine") / n)
    if lam.min() < _EIG_CLAMP:
        raise ValueError(f"similarity kernel is not PSD (min eigenvalue {lam.min():.3e})")
    lam = np.clip(lam, 0.0, None)
    lam = lam[lam > 0]
    return float(np.exp(-np.sum(lam * np.log(lam))))


def _mmd2_unbiased_poly3(x: np.ndarray, y: np.ndarray) -> float:
    d = x.shape[1]
    kxx = (x @ x.T / d + 1.0) ** 3
    kyy = (y @ y.T / d + 1.0) ** 3
    kxy = (x @ y.T / d + 1.0) ** 3
    m, mm = len(x), len(y)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (mm * (mm - 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


def kid_blocks(generated: EmbeddingSet, reference: EmbeddingSet, block_count: int = 10, seed: int = 0) -> np.ndarray:
    """Per-block unbiased MMD^2 estimates under the degree-3 polynomial kernel.

    Each set is shuffled by the seeded generator and cut into block_count
    disjoint blocks of size min(n_gen, n_ref) // block_count; every block
    needs at least 2 samples per set.
    """
    if block_count < 1:
        raise ValueError("block_count must be >= 1")
    x, y = generated.vectors, reference.vectors
    b = min(len(x), len(y)) // block_count
    if b < 2:
        raise ValueError(
            f"insufficient samples: {block_count} blocks need >= 2 per block, "
            f"got sets of {len(x)} and {len(y)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence((seed,)))
    px = rng.permutation(len(x))
    py = rng.permutation(len(y))
    vals = [
        _mmd2_unbiased_poly3(x[px[i * b:(i + 1) * b]], y[py[i * b:(i + 1) * b]])
        for i in range(block_count)
    ]
    return np.array(vals)


def kid(generated: EmbeddingSet, reference: EmbeddingSet, block_count: int = 10, seed: int = 0) -> float:
    """Mean of the per-block unbiased MMD^2 estimates; may be slightly negative."""
    return float(kid_blocks(generated, reference, block_count, seed).mean())


@dataclass(frozen=True)
class PromptMetrics:
    prompt: int
    in_batch_sim: float
    vendi: float
    n: int


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate diversity report with the per-prompt breakdown attached."""

    in_batch_sim: float
    vendi: float
    kid: float | None
    per_prompt: tuple
    source_tag: str = ""


def report_for_prompt_sets(prompt_sets, reference: EmbeddingSet | None = None,
                           block_count: int = 10, seed: int = 0) -> MetricsReport:
    """Per-prompt metrics plus pooled KID against a reference set, if given."""
    per = tuple(
        PromptMetrics(i, in_batch_similarity(s), vendi_score(s), len(s))
        for i, s in enumerate(prompt_sets)
    )
    tag = prompt_sets[0].source_tag if prompt_sets else ""
    kid_val = None
    if reference is not None:
        pooled = EmbeddingSet(np.concatenate([s.vectors for s in prompt_sets]), tag)
        kid_val = kid(pooled, reference, block_count, seed)
    return MetricsReport(
        in_batch_sim=float(np.mean([p.in_batch_sim for p in per])),
        vendi=float(np.mean([p.vendi for p in per])),
        kid=kid_val,
        per_prompt=per,
        source_tag=tag,
    )
