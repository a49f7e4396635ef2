"""A deterministic, training-free stand-in for a distilled few-step generator.

Each block maps the token-by-channel state x through

    x' = bias + contraction * tanh(gain * (A @ x @ C)) / gain

where A is a random orthogonal token-mixing matrix (spectral norm 1), C is
a channel matrix with singular values (i + 1)**-spectrum_decay (largest 1),
and tanh(gain * u) / gain is 1-Lipschitz for any gain. The block is
therefore Lipschitz with constant ``contraction`` < 1 in Frobenius norm:
repeated application shrinks differences between latents, which is exactly
the diversity-suppressing behavior the injection hooks are meant to undo.

All blocks share one orthogonal channel basis (C = Q diag(s) Q^T with the
same Q), so the low-rank structure of the features is consistent across
depth: perturbations aligned with the top channel directions survive later
blocks while isotropic perturbations are mostly annihilated. Block biases
are drawn through C as well, keeping the attractor on the same low-rank
manifold. Multi-step mode re-feeds the readout-free feature state, so
hooks see (block, step) sites for every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .inject import FeatureMap

__all__ = [
    "BlockParams",
    "ToyGenerator",
    "build_generator",
    "generate",
    "batch_generate",
    "dump_generator",
    "dump_trace",
]

Hook = Callable[[FeatureMap], FeatureMap]


@dataclass(frozen=True, eq=False)
class BlockParams:
    token_mix: np.ndarray    # (N, N) orthogonal
    channel_mix: np.ndarray  # (D, D) shared-basis, decaying spectrum
    bias: np.ndarray         # (N, D) fixed attractor pattern, on-manifold
    gain: float


@dataclass(frozen=True, eq=False)
class ToyGenerator:
    """Immutable stack of contractive token-mixing blocks plus a linear readout."""

    blocks: tuple
    readout: np.ndarray
    depth: int
    steps: int
    height: int
    width: int
    feat_dim: int
    out_dim: int
    contraction: float
    spectrum_decay: float
    seed: int

    @property
    def n_tokens(self) -> int:
        return self.height * self.width

    @property
    def hook_sites(self) -> list:
        return [(b, t) for t in range(self.steps) for b in range(self.depth)]


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def channel_spectrum(dim: int, decay: float) -> np.ndarray:
    """Singular-value profile (i + 1)**-decay, i = 0..dim-1; largest is 1."""
    return (np.arange(1, dim + 1, dtype=float)) ** (-decay)


def build_generator(
    depth: int,
    steps: int,
    height: int,
    width: int,
    feat_dim: int,
    out_dim: int,
    seed: int,
    contraction: float = 0.9,
    spectrum_decay: float = 1.5,
    gain: float = 1.0,
    bias_scale: float = 0.3,
) -> ToyGenerator:
    """Deterministically materialize all block parameters from the seed.

    ``bias_scale`` sets the per-entry standard deviation of each block's
    attractor pattern relative to the contracted signal; smaller values
    leave more room for sample-to-sample variation at the output.
    """
    for name, v in (("depth", depth), ("steps", steps), ("height", height),
                    ("width", width), ("feat_dim", feat_dim), ("out_dim", out_dim)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    if not 0.0 < contraction < 1.0:
        raise ValueError(f"contraction must be in (0, 1), got {contraction}")
    if gain <= 0:
        raise ValueError("gain must be positive")
    if bias_scale <= 0:
        raise ValueError("bias_scale must be positive")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    n = height * width
    q = _orthogonal(rng, feat_dim)
    s = channel_spectrum(feat_dim, spectrum_decay)
    channel_mix = (q * s) @ q.T
    blocks = []
    for _ in range(depth):
        token_mix = _orthogonal(rng, n)
        bias = rng.standard_normal((n, feat_dim)) @ channel_mix
        bias *= bias_scale / bias.std()
        blocks.append(BlockParams(token_mix, channel_mix, bias, gain))
    readout = rng.standard_normal((feat_dim, out_dim))
    readout /= np.linalg.svd(readout, compute_uv=False)[0]
    return ToyGenerator(
        tuple(blocks), readout, depth, steps, height, width,
        feat_dim, out_dim, contraction, spectrum_decay, seed,
    )


def _block_step(x: np.ndarray, blk: BlockParams, contraction: float) -> np.ndarray:
    u = blk.token_mix @ x @ blk.channel_mix
    return blk.bias + contraction * np.tanh(blk.gain * u) / blk.gain


def generate(gen: ToyGenerator, latent: np.ndarray, hook: Hook | None = None, sample_index: int = 0):
    """Run one latent through all steps and blocks.

    After each block the (possibly hooked) feature state is recorded in the
    trace under its (block, step) site; the trace holds the stream that was
    actually propagated. Returns (image, trace).
    """
    latent = np.asarray(latent, dtype=float)
    expect = (gen.height, gen.width, gen.feat_dim)
    if latent.shape != expect:
        raise ValueError(f"latent shape {latent.shape} does not match generator grid {expect}")
    x = latent.reshape(gen.n_tokens, gen.feat_dim)
    trace = {}
    for t in range(gen.steps):
        for b, blk in enumerate(gen.blocks):
            x = _block_step(x, blk, gen.contraction)
            if hook is not None:
                fm = FeatureMap(
                    x.reshape(1, gen.height, gen.width, gen.feat_dim),
                    block_index=b,
                    timestep_index=t,
                    sample_indices=np.array([sample_index]),
                )
                fm = hook(fm)
                if fm.data.shape != (1, gen.height, gen.width, gen.feat_dim):
                    raise ValueError("hook must preserve the feature shape")
                x = fm.data[0].reshape(gen.n_tokens, gen.feat_dim)
            trace[(b, t)] = x.reshape(gen.height, gen.width, gen.feat_dim).copy()
    image = (x @ gen.readout).reshape(gen.height, gen.width, gen.out_dim)
    return image, trace


def batch_generate(gen: ToyGenerator, latents: np.ndarray, hook: Hook | None = None, sample_indices=None):
    """Elementwise ``generate`` over a (B, H, W, D) stack of latents.

    Results are identical to sequential per-element runs by construction;
    ``sample_indices`` (default arange(B)) key each element's noise streams.
    """
    latents = np.asarray(latents, dtype=float)
    if latents.ndim != 4 or latents.shape[0] < 1:
        raise ValueError("latents must be a non-empty (batch, height, width, channels) stack")
    n = latents.shape[0]
    sids = np.arange(n) if sample_indices is None else np.asarray(sample_indices, dtype=np.int64)
    if sids.shape != (n,):
        raise ValueError("sample_indices must have one entry per latent")
    images = []
    per_site = {site: [] for site in gen.hook_sites}
    for i in range(n):
        img, trace = generate(gen, latents[i], hook, int(sids[i]))
        images.append(img)
        for site, feats in trace.items():
            per_site[site].append(feats)
    traces = {site: np.stack(feats) for site, feats in per_site.items()}
    return np.stack(images), traces


def dump_generator(gen: ToyGenerator, path) -> None:
    """Inspection dump (NPY arrays in an NPZ): block params, readout, meta.

    Rebuilding a generator goes through (seed, shape), not this file.
    """
    arrays = {
        "meta": np.array([gen.depth, gen.steps, gen.height, gen.width,
                          gen.feat_dim, gen.out_dim, gen.seed], dtype=np.int64),
        "scalars": np.array([gen.contraction, gen.spectrum_decay], dtype="<f4"),
        "readout": gen.readout.astype("<f4"),
    }
    for i, blk in enumerate(gen.blocks):
        arrays[f"block{i:03d}_token_mix"] = blk.token_mix.astype("<f4")
        arrays[f"block{i:03d}_channel_mix"] = blk.channel_mix.astype("<f4")
        arrays[f"block{i:03d}_bias"] = blk.bias.astype("<f4")
    np.savez(path, **arrays)


def dump_trace(trace: dict, path) -> None:
    """Dump captured features, one NPY per (block, step) site, inside an NPZ."""
    arrays = {f"block{b:03d}_step{t:03d}": np.asarray(v).astype("<f4") for (b, t), v in trace.items()}
    np.savez(path, **arrays)
