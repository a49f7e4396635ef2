"""Seeded white noise and 2D spectral shaping.

Frequency convention: FFT bin (i, j) of an (height, width) grid sits at
radial frequency hypot(fy(i), fx(j)) in cycles per sample, where bin k of
an n-point axis maps to k/n for k <= n/2 and (k - n)/n above (the standard
discrete-FFT layout). The pink filter multiplies each channel's 2D spectrum
by 1 / (1 + |f|)**f_alpha, so f_alpha = 0 leaves the spectrum flat and the
DC gain is exactly 1 for every exponent.

White fields draw one independent PCG64 stream per channel, keyed by
SeedSequence((seed, channel)). Generation order cannot change the result,
so channel-parallel generation stays bit-identical to sequential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseField",
    "sample_white",
    "radial_frequency_grid",
    "pink_filter",
    "normalize_field",
    "pink_noise",
    "power_spectrum",
    "radial_power_profile",
    "fit_spectral_slope",
    "band_power_ratio",
    "save_field",
]


@dataclass(frozen=True, eq=False)
class NoiseField:
    """Independent 2D noise channels on a shared (height, width) grid.

    ``data`` has shape (channels, height, width). ``kind`` is "white" or
    "pink"; pink fields record the spectral exponent they were shaped with.
    Fields are treated as immutable after construction.
    """

    data: np.ndarray
    kind: str = "white"
    f_alpha: float | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError("noise data must have shape (channels, height, width)")
        if self.kind not in ("white", "pink"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not np.all(np.isfinite(data)):
            raise ValueError("noise data must be finite")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _channel_rng(seed: int, channel: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, channel)))


def sample_white(channels: int, height: int, width: int, seed: int) -> NoiseField:
    """Draw i.i.d. standard-normal channels, bit-reproducible per (seed, shape).

    Each channel comes from its own SeedSequence((seed, channel)) stream,
    so the output does not depend on generation order or thread count.
    """
    if channels < 1 or height < 1 or width < 1:
        raise ValueError(f"all dimensions must be >= 1, got ({channels}, {height}, {width})")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    data = np.empty((channels, height, width))
    for c in range(channels):
        data[c] = _channel_rng(seed, c).standard_normal((height, width))
    return NoiseField(data, "white")


def radial_frequency_grid(height: int, width: int) -> np.ndarray:
    """Radial frequency |f| of every FFT bin, in cycles per sample.

    Entry (i, j) equals hypot(fy(i), fx(j)) under the standard FFT bin
    assignment; the DC bin (0, 0) is exactly 0.
    """
    if height < 1 or width < 1:
        raise ValueError(f"dimensions must be >= 1, got ({height}, {width})")
    fy = np.fft.fftfreq(height)
    fx = np.fft.fftfreq(width)
    return np.hypot(fy[:, None], fx[None, :])


def pink_filter(white: NoiseField, f_alpha: float) -> NoiseField:
    """Shape a white field toward low spatial frequencies.

    Per channel: out = Re(ifft2(fft2(ch) / (1 + |f|)**f_alpha)). f_alpha = 0
    reproduces the input to FFT round-trip accuracy; the DC gain is exactly
    1 for every exponent, and larger exponents suppress fine-scale power.
    """
    if f_alpha < 0:
        raise ValueError(f"f_alpha must be >= 0, got {f_alpha}")
    if white.kind != "white":
        raise ValueError(f"pink_filter expects a white field, got kind {white.kind!r}")
    gain = 1.0 / (1.0 + radial_frequency_grid(white.height, white.width)) ** f_alpha
    spectra = np.fft.fft2(white.data, axes=(-2, -1)) * gain
    shaped = np.fft.ifft2(spectra, axes=(-2, -1)).real
    return NoiseField(shaped, "pink", float(f_alpha))


def normalize_field(field: NoiseField) -> NoiseField:
    """Rescale each channel to zero mean and unit population variance.

    Identically-constant channels come back as all zeros so the injection
    strength keeps scale-stable semantics regardless of the filter exponent.
    """
    out = np.empty_like(field.data)
    for c in range(field.channels):
        ch = field.data[c]
        sd = ch.std()
        if sd == 0.0:
            out[c] = 0.0
        else:
            out[c] = (ch - ch.mean()) / sd
    return NoiseField(out, field.kind, field.f_alpha)


def pink_noise(channels: int, height: int, width: int, f_alpha: float, seed: int) -> NoiseField:
    """Normalized pink field: sample_white -> pink_filter -> normalize_field."""
    return normalize_field(pink_filter(sample_white(channels, height, width, seed), f_alpha))


def power_spectrum(field: NoiseField) -> np.ndarray:
    """Per-channel 2D periodogram |FFT|^2, shape (channels, height, width)."""
    return np.abs(np.fft.fft2(field.data, axes=(-2, -1))) ** 2


def radial_power_profile(power: np.ndarray, n_bins: int = 48):
    """Mean power in equal-width annuli of |f|, DC excluded.

    ``power`` is (..., height, width); leading axes are averaged. Returns
    (mean_radius, mean_power, count) over the non-empty bins.
    """
    if n_bins < 2:
        raise ValueError("need at least 2 radial bins")
    h, w = power.shape[-2:]
    r = radial_frequency_grid(h, w).ravel()
    p = power.reshape(-1, h * w).mean(axis=0)
    mask = r > 0
    r, p = r[mask], p[mask]
    edges = np.linspace(0.0, r.max(), n_bins + 1)
    idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    keep = counts > 0
    mean_r = np.bincount(idx, weights=r, minlength=n_bins)[keep] / counts[keep]
    mean_p = np.bincount(idx, weights=p, minlength=n_bins)[keep] / counts[keep]
    return mean_r, mean_p, counts[keep]


def fit_spectral_slope(fields, n_bins: int = 48) -> float:
    """Slope of log radially-averaged power against log(1 + |f|).

    Accepts a single field or a sequence; all channels of all fields feed
    one averaged periodogram. For a field shaped by ``pink_filter`` with
    exponent f_alpha the expected slope is -2 * f_alpha (amplitude filter,
    squared in power).
    """
    if isinstance(fields, NoiseField):
        fields = [fields]
    power = np.concatenate([power_spectrum(f) for f in fields], axis=0)
    radii, mean_power, counts = radial_power_profile(power, n_bins)
    coeffs = np.polyfit(np.log1p(radii), np.log(mean_power), 1, w=np.sqrt(counts))
    return float(coeffs[0])


def band_power_ratio(field: NoiseField, low: float = 0.1, high: float = 0.25) -> float:
    """Average power above |f| = high divided by average power below |f| = low."""
    power = power_spectrum(field).mean(axis=0)
    r = radial_frequency_grid(field.height, field.width)
    return float(power[r > high].mean() / power[r < low].mean())


def save_field(field: NoiseField, path) -> None:
    """Export the field as NPY v1.0: little-endian float32, C order."""
    np.save(path, np.ascontiguousarray(field.data, dtype="<f4"), allow_pickle=False)
