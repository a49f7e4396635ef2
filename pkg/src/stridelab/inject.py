"""Additive feature perturbation: on-manifold injection and its ablations.

The full pipeline per gated batch element: normalized pink noise over the
token grid (one 2D field per feature channel), patchified identically to
the features, projected onto the top principal directions of that image's
own patch features with singular-value weighting, unpatchified, and added
with scalar strength alpha. The ablation skips the projection; the
input-level baseline blends pink noise into the latent instead.

Seed streams: each (image, block, step) site derives its noise and SVD
seeds from SeedSequence((config seed, sample index, block, step)), so
changing batch size or gate sets never reshuffles unrelated noise, and
permuting batch elements together with their sample indices permutes the
outputs identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .noise import pink_noise
from .patch_pca import fit_pca, patchify, project_and_scale, unpatchify

__all__ = [
    "StrideConfig",
    "FeatureMap",
    "stride_perturb",
    "no_pca_perturb",
    "input_noise_blend",
    "perturbation_energy",
]


@dataclass(frozen=True)
class StrideConfig:
    """All perturbation knobs.

    alpha            additive strength (0 disables the injection)
    f_alpha          spectral exponent of the pink filter
    patch_size       P, side of the square token patches
    stride           S, patch lattice step (defaults follow P: non-overlapping)
    k_components     retained principal directions (clamped to min(M, P^2*D))
    power_iterations randomized-SVD power iterations
    layer_set        block indices where injection fires
    step_gate        timestep indices where injection fires
    seed             master seed for the per-site noise/SVD streams
    energy_match     make the no-projection ablation match the projected
                     perturbation's Frobenius norm per image
    """

    alpha: float = 2.0
    f_alpha: float = 2.0
    patch_size: int = 2
    stride: int = 2
    k_components: int = 16
    power_iterations: int = 2
    layer_set: frozenset = field(default_factory=lambda: frozenset({0, 1}))
    step_gate: frozenset = field(default_factory=lambda: frozenset({0}))
    seed: int = 0
    energy_match: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_set", frozenset(int(i) for i in self.layer_set))
        object.__setattr__(self, "step_gate", frozenset(int(i) for i in self.step_gate))
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.f_alpha < 0:
            raise ValueError(f"f_alpha must be >= 0, got {self.f_alpha}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.k_components < 1:
            raise ValueError("k_components must be >= 1")
        if self.power_iterations < 0:
            raise ValueError("power_iterations must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if not self.layer_set or not self.step_gate:
            raise ValueError("layer_set and step_gate must be non-empty")
        if any(i < 0 for i in self.layer_set) or any(i < 0 for i in self.step_gate):
            raise ValueError("gate indices must be non-negative")

    @classmethod
    def default_for(cls, depth: int, steps: int, **overrides) -> "StrideConfig":
        """Gates spanning the first third of the blocks, first step only."""
        n = max(1, -(-depth // 3))
        overrides.setdefault("layer_set", frozenset(range(n)))
        overrides.setdefault("step_gate", frozenset({0}))
        return cls(**overrides)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A batch of hidden states with explicit spatial layout.

    ``data`` is (B, H, W, D). ``sample_indices`` carries each element's
    identity for seed derivation; it defaults to arange(B) and travels with
    the element, so reordering a batch reorders its outputs.
    """

    data: np.ndarray
    block_index: int
    timestep_index: int
    sample_indices: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 4:
            raise ValueError("feature data must have shape (batch, height, width, channels)")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature data must be finite")
        sid = self.sample_indices
        sid = np.arange(data.shape[0]) if sid is None else np.asarray(sid, dtype=np.int64)
        if sid.shape != (data.shape[0],):
            raise ValueError("sample_indices must have one entry per batch element")
        if np.any(sid < 0):
            raise ValueError("sample indices must be non-negative")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sample_indices", sid)

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


def _site_seed_words(seed: int, sample: int, block: int, step: int) -> tuple[int, int]:
    """Two independent 64-bit words for one (image, block, step) site."""
    words = np.random.SeedSequence((seed, sample, block, step)).generate_state(2, np.uint64)
    return int(words[0]), int(words[1])


def _pink_grid(h: int, w: int, d: int, f_alpha: float, seed: int) -> np.ndarray:
    """Normalized pink noise as an (H, W, D) grid, one 2D field per channel."""
    return np.moveaxis(pink_noise(d, h, w, f_alpha, seed).data, 0, -1)


def _stride_direction(x: np.ndarray, cfg: StrideConfig, noise_seed: int, svd_seed: int) -> np.ndarray:
    """Manifold-projected perturbation direction for one (H, W, D) grid."""
    h, w, d = x.shape
    noise_p = patchify(_pink_grid(h, w, d, cfg.f_alpha, noise_seed), cfg.patch_size, cfg.stride)
    feat_p = patchify(x, cfg.patch_size, cfg.stride)
    basis = fit_pca(feat_p, cfg.k_components, cfg.power_iterations, svd_seed)
    return unpatchify(project_and_scale(noise_p, basis))


def _gated(h: FeatureMap, cfg: StrideConfig) -> bool:
    return h.block_index in cfg.layer_set and h.timestep_index in cfg.step_gate


def stride_perturb(h: FeatureMap, cfg: StrideConfig) -> FeatureMap:
    """Inject projected pink noise into every gated batch element.

    Outside the (layer_set, step_gate) window, or at alpha = 0, the input
    comes back bit-identical. Each element's basis is fitted on its own
    pre-perturbation features.
    """
    if not _gated(h, cfg) or cfg.alpha == 0:
        return h
    out = h.data.copy()
    for b in range(h.batch):
        ns, vs = _site_seed_words(cfg.seed, int(h.sample_indices[b]), h.block_index, h.timestep_index)
        out[b] += cfg.alpha * _stride_direction(h.data[b], cfg, ns, vs)
    return replace(h, data=out)


def no_pca_perturb(h: FeatureMap, cfg: StrideConfig) -> FeatureMap:
    """Ablation: add the normalized pink field itself, skipping the projection.

    With ``energy_match`` the field is rescaled per image so the injected
    Frobenius norm equals what the projected pipeline would have produced
    for the same seeds.
    """
    if not _gated(h, cfg) or cfg.alpha == 0:
        return h
    out = h.data.copy()
    hh, ww, dd = h.grid_shape
    for b in range(h.batch):
        ns, vs = _site_seed_words(cfg.seed, int(h.sample_indices[b]), h.block_index, h.timestep_index)
        d = _pink_grid(hh, ww, dd, cfg.f_alpha, ns)
        if cfg.energy_match:
            target = np.linalg.norm(_stride_direction(h.data[b], cfg, ns, vs))
            cur = np.linalg.norm(d)
            d = d * (target / cur) if cur > 0 else np.zeros_like(d)
        out[b] += cfg.alpha * d
    return replace(h, data=out)


def input_noise_blend(z: np.ndarray, alpha: float, f_alpha: float, seed: int) -> np.ndarray:
    """Convex blend of a (B, H, W, D) latent with normalized pink noise.

    Element b draws its field from SeedSequence((seed, b)); alpha = 0
    returns the latent unchanged and alpha = 1 the pure pink field.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 4:
        raise ValueError("latent must have shape (batch, height, width, channels)")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"blend alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return z.copy()
    _, h, w, d = z.shape
    out = np.empty_like(z)
    for b in range(z.shape[0]):
        word = int(np.random.SeedSequence((seed, b)).generate_state(1, np.uint64)[0])
        out[b] = (1.0 - alpha) * z[b] + alpha * _pink_grid(h, w, d, f_alpha, word)
    return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, FeatureMap) else np.asarray(x, dtype=float)


def perturbation_energy(before, after) -> float:
    """Frobenius norm of the difference between two feature maps."""
    a, b = _as_array(before), _as_array(after)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(b - a))
