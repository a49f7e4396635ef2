"""Spatial patchification and truncated PCA of patch features.

A (H, W, D) feature grid is cut into P x P patches on a stride-S lattice
and flattened row by row, giving an M x (P^2 * D) matrix with
M = floor((H - P) / S + 1) * floor((W - P) / S + 1); residual rows and
columns past the last full patch are dropped. Each row is the patch block
flattened in C order: row-major over patch pixels, channels fastest.

The PCA basis of those rows is computed by seeded randomized SVD (range
finding with as many probe columns as retained components, then the stated
number of power iterations), and noise rows are projected onto it with the
retained singular values rescaled by their mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["PatchMatrix", "PcaBasis", "patchify", "unpatchify", "fit_pca", "project_and_scale"]


@dataclass(frozen=True, eq=False)
class PatchMatrix:
    """Flattened patch rows plus the layout metadata needed to invert them."""

    data: np.ndarray
    height: int
    width: int
    channels: int
    patch_size: int
    stride: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("patch data must be a 2D matrix")
        p, s = self.patch_size, self.stride
        if p < 1 or s < 1:
            raise ValueError("patch_size and stride must be >= 1")
        if p > min(self.height, self.width):
            raise ValueError(f"patch_size {p} exceeds grid ({self.height}, {self.width})")
        my, mx = self.patch_grid
        if data.shape[0] != my * mx:
            raise ValueError(f"row count {data.shape[0]} does not match layout ({my} * {mx})")
        if data.shape[1] != p * p * self.channels:
            raise ValueError(f"row length {data.shape[1]} does not match P^2*D = {p * p * self.channels}")
        if not np.all(np.isfinite(data)):
            raise ValueError("patch entries must be finite")
        object.__setattr__(self, "data", data)

    @property
    def patch_grid(self) -> tuple[int, int]:
        """(rows, cols) of the patch lattice."""
        my = (self.height - self.patch_size) // self.stride + 1
        mx = (self.width - self.patch_size) // self.stride + 1
        return my, mx

    @property
    def n_patches(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Top principal directions of a patch matrix.

    ``directions`` is column-orthonormal (P^2*D, k_effective), ``singulars``
    the matching non-increasing singular values, ``mean`` the column mean of
    the fitted matrix. Only the right factor is kept; the left singular
    vectors are never needed downstream.
    """

    directions: np.ndarray
    singulars: np.ndarray
    mean: np.ndarray
    k_effective: int

    def __post_init__(self):
        v = np.asarray(self.directions, dtype=float)
        s = np.asarray(self.singulars, dtype=float)
        mu = np.asarray(self.mean, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.k_effective:
            raise ValueError("directions must be (dim, k_effective)")
        if s.shape != (self.k_effective,):
            raise ValueError("singulars must have length k_effective")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValueError("singular values must be non-negative and non-increasing")
        if mu.shape != (v.shape[0],):
            raise ValueError("mean length must match direction dimension")
        object.__setattr__(self, "directions", v)
        object.__setattr__(self, "singulars", s)
        object.__setattr__(self, "mean", mu)


def patchify(grid: np.ndarray, patch_size: int, stride: int | None = None) -> PatchMatrix:
    """Cut a (H, W, D) grid into flattened P x P patches on a stride lattice.

    ``stride`` defaults to ``patch_size`` (non-overlapping tiling). Patch m
    sits at lattice position (m // mx, m % mx); its row is the (P, P, D)
    block flattened in C order.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 3:
        raise ValueError("grid must have shape (height, width, channels)")
    h, w, d = grid.shape
    if stride is None:
        stride = patch_size
    if patch_size < 1 or patch_size > min(h, w):
        raise ValueError(f"patch_size must be in [1, min(H, W)], got {patch_size} for ({h}, {w})")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    win = sliding_window_view(grid, (patch_size, patch_size), axis=(0, 1))
    win = win[::stride, ::stride].transpose(0, 1, 3, 4, 2)
    my, mx = win.shape[:2]
    data = np.array(win, order="C").reshape(my * mx, patch_size * patch_size * d)
    return PatchMatrix(data, h, w, d, patch_size, stride)


def unpatchify(patches: PatchMatrix) -> np.ndarray:
    """Reassemble the full grid, averaging where patches overlap.

    Cells covered by no patch (residual borders, or gaps when stride
    exceeds patch size) are 0. For stride == patch_size on an exact tiling
    this inverts ``patchify`` bit-exactly.
    """
    h, w, d = patches.height, patches.width, patches.channels
    p, s = patches.patch_size, patches.stride
    my, mx = patches.patch_grid
    blocks = patches.data.reshape(my, mx, p, p, d)
    acc = np.zeros((h, w, d))
    cnt = np.zeros((h, w, 1))
    for py in range(p):
        sl_y = slice(py, py + (my - 1) * s + 1, s)
        for px in range(p):
            sl_x = slice(px, px + (mx - 1) * s + 1, s)
            acc[sl_y, sl_x, :] += blocks[:, :, py, px, :]
            cnt[sl_y, sl_x, 0] += 1.0
    return np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)


def fit_pca(patches: PatchMatrix, k: int, power_iterations: int = 2, seed: int = 0) -> PcaBasis:
    """Seeded randomized SVD of the centered patch rows.

    Uses k_effective = min(k, M, P^2*D) probe columns with no extra
    oversampling, re-orthonormalizing between power iterations. Column
    signs are fixed so each direction's largest-magnitude entry is
    positive; identical (patches, k, power_iterations, seed) gives
    bit-identical output.
    """
    x = patches.data
    m, cols = x.shape
    if m < 2:
        raise ValueError(f"need at least 2 patches to fit a basis, got {m}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if power_iterations < 0:
        raise ValueError("power_iterations must be >= 0")
    k_eff = min(k, m, cols)
    mu = x.mean(axis=0)
    xc = x - mu
    rng = np.random.default_rng(np.random.SeedSequence((seed,)))
    omega = rng.standard_normal((cols, k_eff))
    q, _ = np.linalg.qr(xc @ omega)
    for _ in range(power_iterations):
        z, _ = np.linalg.qr(xc.T @ q)
        q, _ = np.linalg.qr(xc @ z)
    b = q.T @ xc
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    v = vt[:k_eff].T.copy()
    s = s[:k_eff].copy()
    j = np.argmax(np.abs(v), axis=0)
    v *= np.where(v[j, np.arange(k_eff)] < 0, -1.0, 1.0)
    return PcaBasis(v, s, mu, k_eff)


def project_and_scale(noise_patches: PatchMatrix, basis: PcaBasis) -> PatchMatrix:
    """Project rows into span(V) with per-direction singular-value weighting.

    Coordinates c = X V are rescaled by s / mean(s) and mapped back through
    V^T, so output rows stay inside the fitted subspace with energy
    allocated along the basis's own variance profile. A zero spectrum
    (mean(s) == 0) yields the all-zeros matrix. The input rows are used as
    raw directions; the basis mean is not subtracted.
    """
    x = noise_patches.data
    v = basis.directions
    if x.shape[1] != v.shape[0]:
        raise ValueError(f"row length {x.shape[1]} does not match basis dimension {v.shape[0]}")
    s_bar = float(basis.singulars.mean()) if basis.k_effective > 0 else 0.0
    if s_bar == 0.0:
        out = np.zeros_like(x)
    else:
        out = ((x @ v) * (basis.singulars / s_bar)) @ v.T
    return PatchMatrix(
        out,
        noise_patches.height,
        noise_patches.width,
        noise_patches.channels,
        noise_patches.patch_size,
        noise_patches.stride,
    )
