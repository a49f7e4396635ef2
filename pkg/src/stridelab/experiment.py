"""Batch experiment runner: method comparisons, parameter sweeps, reporting.

A "prompt" is a latent seed stream; each of its samples draws a fresh
latent from SeedSequence((generator seed, 1, prompt, sample)). Injection
seeds key off a global sample id prompt * samples_per_prompt + sample, so
adding prompts to a spec never changes pre-existing prompts' rows.

results.csv is byte-deterministic for a fixed spec: floats are written at
6 significant digits with LF endings, and the wall-clock field stays on
the row objects only. KID, when selected, is computed on the pooled
images against a baseline (no-perturbation) render of the same latents.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import inject
from .inject import FeatureMap, StrideConfig, input_noise_blend
from .metrics import EmbeddingSet, in_batch_similarity, kid, vendi_score
from .toygen import ToyGenerator, batch_generate, build_generator

__all__ = [
    "GeneratorSpec",
    "ExperimentSpec",
    "ResultRow",
    "run_experiment",
    "sweep",
    "compare_methods",
    "emit_csv",
    "emit_pareto_svg",
    "write_outputs",
    "config_from_json",
    "config_from_dict",
    "spec_to_dict",
    "spec_digest",
    "demo_spec",
]

METHODS = ("baseline", "input_noise", "no_pca", "stride")
METRIC_NAMES = ("inbsim", "vendi", "kid")
SWEEP_AXES = ("alpha", "f_alpha", "P", "K", "layer_set", "step_gate")
SOURCE_TAG = "toy-pixels"

CSV_FIELDS = (
    "method",
    "config_digest",
    "axis",
    "axis_value",
    "prompt",
    "n_samples",
    "in_batch_sim",
    "vendi",
    "kid",
    "perturbation_energy",
    "mean_in_batch_sim",
    "mean_vendi",
)


@dataclass(frozen=True)
class GeneratorSpec:
    """(seed, shape) description of a toy generator; weights derive from it."""

    seed: int = 7
    depth: int = 6
    steps: int = 1
    height: int = 16
    width: int = 16
    feat_dim: int = 32
    out_dim: int = 3

    def build(self) -> ToyGenerator:
        return build_generator(self.depth, self.steps, self.height, self.width,
                               self.feat_dim, self.out_dim, self.seed)


@dataclass(frozen=True)
class ExperimentSpec:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    prompt_count: int = 32
    samples_per_prompt: int = 4
    method: str = "baseline"
    stride: StrideConfig = field(default_factory=StrideConfig)
    metrics: tuple = ("inbsim", "vendi")
    output_dir: str | None = None

    def validate(self) -> None:
        if self.prompt_count < 1:
            raise ValueError(f"prompt_count must be >= 1, got {self.prompt_count}")
        if self.samples_per_prompt < 2:
            raise ValueError(
                f"samples_per_prompt must be >= 2 for pairwise metrics, got {self.samples_per_prompt}"
            )
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise ValueError(f"unknown metric {m!r}; choose from {METRIC_NAMES}")
        if not self.metrics:
            raise ValueError("metrics selection must not be empty")
        if self.method == "input_noise" and not 0.0 <= self.stride.alpha <= 1.0:
            raise ValueError(
                f"stride.alpha is the blend factor for method input_noise and must be in [0, 1], "
                f"got {self.stride.alpha}"
            )
        g = self.generator
        if self.stride.patch_size > min(g.height, g.width):
            raise ValueError(
                f"stride.patch_size {self.stride.patch_size} exceeds generator grid ({g.height}, {g.width})"
            )


@dataclass
class ResultRow:
    """One row per (method, config, prompt). wall_clock_s never reaches the CSV."""

    method: str
    config_digest: str
    prompt: int
    n_samples: int
    axis: str = ""
    axis_value: str = ""
    in_batch_sim: float | None = None
    vendi: float | None = None
    kid: float | None = None
    perturbation_energy: float = 0.0
    mean_in_batch_sim: float | None = None
    mean_vendi: float | None = None
    wall_clock_s: float = 0.0


def _latents_for_prompt(spec: ExperimentSpec, prompt: int) -> np.ndarray:
    g = spec.generator
    lats = [
        np.random.default_rng(np.random.SeedSequence((g.seed, 1, prompt, j)))
        .standard_normal((g.height, g.width, g.feat_dim))
        for j in range(spec.samples_per_prompt)
    ]
    return np.stack(lats)


def _recording_hook(inner, store: dict):
    def hooked(fm: FeatureMap) -> FeatureMap:
        out = inner(fm)
        if out is not fm:
            for b in range(fm.batch):
                e = np.linalg.norm(out.data[b] - fm.data[b])
                sid = int(fm.sample_indices[b])
                store[sid] = store.get(sid, 0.0) + e * e
        return out

    return hooked


def _method_hook(spec: ExperimentSpec, store: dict):
    if spec.method == "no_pca":
        return _recording_hook(lambda fm: inject.no_pca_perturb(fm, spec.stride), store)
    if spec.method == "stride":
        return _recording_hook(lambda fm: inject.stride_perturb(fm, spec.stride), store)
    return None


def run_experiment(spec: ExperimentSpec) -> list:
    """Generate, measure, and return one ResultRow per prompt."""
    spec.validate()
    gen = spec.generator.build()
    digest = spec_digest(spec)
    spp = spec.samples_per_prompt
    energy = {}
    hook = _method_hook(spec, energy)
    want_kid = "kid" in spec.metrics

    prompt_rows = []
    gen_vectors = []
    ref_vectors = []
    for p in range(spec.prompt_count):
        t0 = time.perf_counter()
        latents = _latents_for_prompt(spec, p)
        sids = np.arange(p * spp, p * spp + spp)
        run_latents = latents
        if spec.method == "input_noise":
            blend_seed = int(np.random.SeedSequence((spec.stride.seed, 2, p)).generate_state(1, np.uint64)[0])
            run_latents = input_noise_blend(latents, spec.stride.alpha, spec.stride.f_alpha, blend_seed)
            for j in range(spp):
                e = np.linalg.norm(run_latents[j] - latents[j])
                energy[int(sids[j])] = e * e
        images, _ = batch_generate(gen, run_latents, hook, sample_indices=sids)
        wall = time.perf_counter() - t0

        emb = EmbeddingSet(images.reshape(spp, -1), SOURCE_TAG)
        gen_vectors.append(emb.vectors)
        if want_kid:
            ref_images, _ = batch_generate(gen, latents, None, sample_indices=sids)
            ref_vectors.append(ref_images.reshape(spp, -1))

        prompt_energy = float(np.mean([np.sqrt(energy.get(int(s), 0.0)) for s in sids]))
        prompt_rows.append(
            ResultRow(
                method=spec.method,
                config_digest=digest,
                prompt=p,
                n_samples=spp,
                in_batch_sim=in_batch_similarity(emb) if "inbsim" in spec.metrics else None,
                vendi=vendi_score(emb) if "vendi" in spec.metrics else None,
                perturbation_energy=prompt_energy,
                wall_clock_s=wall,
            )
        )

    kid_val = None
    if want_kid:
        pooled = EmbeddingSet(np.concatenate(gen_vectors), SOURCE_TAG)
        reference = EmbeddingSet(np.concatenate(ref_vectors), SOURCE_TAG)
        n_pooled = len(pooled)
        block_count = max(1, min(10, n_pooled // 2))
        kid_seed = int(np.random.SeedSequence((spec.generator.seed, 3)).generate_state(1, np.uint64)[0])
        kid_val = kid(pooled, reference, block_count, kid_seed)

    sims = [r.in_batch_sim for r in prompt_rows if r.in_batch_sim is not None]
    vens = [r.vendi for r in prompt_rows if r.vendi is not None]
    mean_sim = float(np.mean(sims)) if sims else None
    mean_ven = float(np.mean(vens)) if vens else None
    for r in prompt_rows:
        r.kid = kid_val
        r.mean_in_batch_sim = mean_sim
        r.mean_vendi = mean_ven
    return prompt_rows


def _format_axis_value(axis: str, value) -> str:
    if axis in ("layer_set", "step_gate"):
        return "+".join(str(int(i)) for i in sorted(value))
    return f"{value:.6g}"


def _apply_axis(spec: ExperimentSpec, axis: str, value) -> ExperimentSpec:
    cfg = spec.stride
    if axis == "alpha":
        cfg = replace(cfg, alpha=float(value))
    elif axis == "f_alpha":
        cfg = replace(cfg, f_alpha=float(value))
    elif axis == "P":
        p = int(value)
        s = p if cfg.stride == cfg.patch_size else cfg.stride
        cfg = replace(cfg, patch_size=p, stride=s)
    elif axis == "K":
        cfg = replace(cfg, k_components=int(value))
    elif axis == "layer_set":
        cfg = replace(cfg, layer_set=frozenset(int(i) for i in value))
    elif axis == "step_gate":
        cfg = replace(cfg, step_gate=frozenset(int(i) for i in value))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return replace(spec, stride=cfg)


def sweep(base: ExperimentSpec, axis: str, values) -> list:
    """One run_experiment per value; rows come back tagged by axis value."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    rows = []
    for v in values:
        run_rows = run_experiment(_apply_axis(base, axis, v))
        tag = _format_axis_value(axis, v)
        for r in run_rows:
            r.axis = axis
            r.axis_value = tag
        rows.extend(run_rows)
    return rows


def compare_methods(base: ExperimentSpec, methods=METHODS):
    """Run several methods on one spec and summarize per-method aggregates.

    The summary carries per-prompt in-batch similarities per method plus the
    no_pca-vs-stride gap and its pooled standard error when both ran. The
    input-level baseline blends convexly, so its factor is alpha clamped
    into [0, 1].
    """
    all_rows = []
    summary = {"methods": {}}
    for m in methods:
        spec = replace(base, method=m)
        if m == "input_noise" and spec.stride.alpha > 1.0:
            spec = replace(spec, stride=replace(spec.stride, alpha=1.0))
        rows = run_experiment(spec)
        all_rows.extend(rows)
        sims = np.array([r.in_batch_sim for r in rows if r.in_batch_sim is not None])
        vens = np.array([r.vendi for r in rows if r.vendi is not None])
        summary["methods"][m] = {
            "in_batch_sim": float(sims.mean()) if sims.size else None,
            "vendi": float(vens.mean()) if vens.size else None,
            "perturbation_energy": float(np.mean([r.perturbation_energy for r in rows])),
            "per_prompt_in_batch_sim": sims,
        }
    if "no_pca" in summary["methods"] and "stride" in summary["methods"]:
        a = summary["methods"]["no_pca"]["per_prompt_in_batch_sim"]
        b = summary["methods"]["stride"]["per_prompt_in_batch_sim"]
        gap = float(a.mean() - b.mean())
        se = float(np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size))
        summary["stride_vs_no_pca"] = {"gap": gap, "pooled_se": se}
    return all_rows, summary


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit_csv(rows, path) -> None:
    """Header plus one line per row, fields in CSV_FIELDS order.

    Floats at 6 significant digits, LF endings; re-emitting the same rows
    reproduces the file byte for byte.
    """
    lines = [",".join(CSV_FIELDS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, f)) for f in CSV_FIELDS))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


_PALETTE = {
    "baseline": "#4c72b0",
    "input_noise": "#dd8452",
    "no_pca": "#55a868",
    "stride": "#c44e52",
}
_FALLBACK_COLORS = ("#8172b3", "#937860", "#da8bc3", "#8c8c8c")


def _marker(idx: int, x: float, y: float, color: str) -> str:
    if idx % 4 == 0:
        return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{color}"/>'
    if idx % 4 == 1:
        return f'<rect x="{x - 3.5:.2f}" y="{y - 3.5:.2f}" width="7" height="7" fill="{color}"/>'
    if idx % 4 == 2:
        pts = f"{x:.2f},{y - 4.5:.2f} {x + 4.5:.2f},{y:.2f} {x:.2f},{y + 4.5:.2f} {x - 4.5:.2f},{y:.2f}"
        return f'<polygon points="{pts}" fill="{color}"/>'
    pts = f"{x:.2f},{y - 4.5:.2f} {x + 4.5:.2f},{y + 4:.2f} {x - 4.5:.2f},{y + 4:.2f}"
    return f'<polygon points="{pts}" fill="{color}"/>'


def emit_pareto_svg(rows, x_metric: str, y_metric: str, path, source_tag: str = SOURCE_TAG) -> None:
    """Deterministic SVG scatter, one distinguishable series per method."""
    for metric in (x_metric, y_metric):
        if metric not in CSV_FIELDS:
            raise ValueError(f"unknown metric {metric!r}")
    pts = []
    for r in rows:
        x, y = getattr(r, x_metric), getattr(r, y_metric)
        if x is not None and y is not None:
            pts.append((r.method, float(x), float(y)))
    if not pts:
        raise ValueError(f"no rows carry both metrics {x_metric!r} and {y_metric!r}")

    methods = sorted({m for m, _, _ in pts}, key=lambda m: (METHODS.index(m) if m in METHODS else 99, m))
    xs = np.array([p[1] for p in pts])
    ys = np.array([p[2] for p in pts])

    def bounds(v):
        lo, hi = float(v.min()), float(v.max())
        pad = 0.05 * (hi - lo) if hi > lo else max(0.05 * abs(hi), 1e-6)
        return lo - pad, hi + pad

    x0, x1 = bounds(xs)
    y0, y1 = bounds(ys)
    width, height = 640, 480
    ml, mr, mt, mb = 70, 170, 30, 60

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * (width - ml - mr)

    def sy(v):
        return height - mb - (v - y0) / (y1 - y0) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    for i in range(5):
        tx = x0 + (x1 - x0) * i / 4
        ty = y0 + (y1 - y0) * i / 4
        parts.append(
            f'<text x="{sx(tx):.2f}" y="{height - mb + 18}" font-size="11" text-anchor="middle">{tx:.4g}</text>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{sy(ty) + 4:.2f}" font-size="11" text-anchor="end">{ty:.4g}</text>'
        )
    parts.append(
        f'<text x="{(ml + width - mr) / 2:.2f}" y="{height - 15}" font-size="13" '
        f'text-anchor="middle">{x_metric} ({source_tag})</text>'
    )
    parts.append(
        f'<text x="18" y="{(mt + height - mb) / 2:.2f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {(mt + height - mb) / 2:.2f})">{y_metric} ({source_tag})</text>'
    )
    for idx, method in enumerate(methods):
        color = _PALETTE.get(method, _FALLBACK_COLORS[idx % len(_FALLBACK_COLORS)])
        for m, x, y in pts:
            if m == method:
                parts.append(_marker(idx, sx(x), sy(y), color))
        ly = mt + 20 + idx * 20
        parts.append(_marker(idx, width - mr + 20, ly, color))
        parts.append(f'<text x="{width - mr + 32}" y="{ly + 4}" font-size="12">{method}</text>')
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "generator": {f.name: getattr(spec.generator, f.name) for f in fields(GeneratorSpec)},
        "prompt_count": spec.prompt_count,
        "samples_per_prompt": spec.samples_per_prompt,
        "method": spec.method,
        "stride": {
            "alpha": spec.stride.alpha,
            "f_alpha": spec.stride.f_alpha,
            "patch_size": spec.stride.patch_size,
            "stride": spec.stride.stride,
            "k_components": spec.stride.k_components,
            "power_iterations": spec.stride.power_iterations,
            "layer_set": sorted(spec.stride.layer_set),
            "step_gate": sorted(spec.stride.step_gate),
            "seed": spec.stride.seed,
            "energy_match": spec.stride.energy_match,
        },
        "metrics": list(spec.metrics),
        "output_dir": spec.output_dir,
    }


def spec_digest(spec: ExperimentSpec) -> str:
    """Stable fingerprint of the resolved parameters, method label excluded.

    Excluding the method (and output path) keeps rows from a baseline run
    and an alpha-0 injection run comparable by digest.
    """
    d = spec_to_dict(spec)
    d.pop("method")
    d.pop("output_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def _check_keys(given: dict, allowed, where: str) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ValueError(f"unknown config key(s) in {where}: {', '.join(unknown)}")


def config_from_dict(cfg: dict) -> ExperimentSpec:
    """Strict ExperimentSpec parser: unknown keys anywhere are an error."""
    if not isinstance(cfg, dict):
        raise ValueError("config root must be a JSON object")
    top_fields = [f.name for f in fields(ExperimentSpec)]
    _check_keys(cfg, top_fields, "config")
    gen_cfg = cfg.get("generator", {})
    if not isinstance(gen_cfg, dict):
        raise ValueError("generator must be a JSON object")
    _check_keys(gen_cfg, [f.name for f in fields(GeneratorSpec)], "generator")
    stride_cfg = cfg.get("stride", {})
    if not isinstance(stride_cfg, dict):
        raise ValueError("stride must be a JSON object")
    _check_keys(stride_cfg, [f.name for f in fields(StrideConfig)], "stride")
    if "layer_set" in stride_cfg:
        stride_cfg = dict(stride_cfg, layer_set=frozenset(stride_cfg["layer_set"]))
    if "step_gate" in stride_cfg:
        stride_cfg = dict(stride_cfg, step_gate=frozenset(stride_cfg["step_gate"]))
    spec = ExperimentSpec(
        generator=GeneratorSpec(**gen_cfg),
        stride=StrideConfig(**stride_cfg),
        **{
            k: (tuple(v) if k == "metrics" else v)
            for k, v in cfg.items()
            if k not in ("generator", "stride")
        },
    )
    spec.validate()
    return spec


def config_from_json(path) -> ExperimentSpec:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def reseed(spec: ExperimentSpec, seed: int) -> ExperimentSpec:
    """Override the config seeds (generator and perturbation) in one move."""
    return replace(
        spec,
        generator=replace(spec.generator, seed=seed),
        stride=replace(spec.stride, seed=seed),
    )


def write_outputs(spec: ExperimentSpec, rows, out_dir,
                  x_metric: str = "in_batch_sim", y_metric: str = "vendi") -> dict:
    """Write results.csv, pareto.svg, and manifest.json into out_dir."""
    from . import __version__

    os.makedirs(out_dir, exist_ok=True)
    emit_csv(rows, os.path.join(out_dir, "results.csv"))
    emit_pareto_svg(rows, x_metric, y_metric, os.path.join(out_dir, "pareto.svg"))
    manifest = {
        "config": spec_to_dict(spec),
        "config_digest": spec_digest(spec),
        "row_count": len(rows),
        "tool": "stridelab",
        "version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def demo_spec(seed: int | None = None) -> ExperimentSpec:
    """The shipped collapse-demonstration spec: 32 prompts x 4 samples,
    energy-matched ablation, gates on the first third of blocks at step 0."""
    spec = ExperimentSpec(
        generator=GeneratorSpec(),
        prompt_count=32,
        samples_per_prompt=4,
        method="stride",
        stride=StrideConfig.default_for(GeneratorSpec().depth, GeneratorSpec().steps,
                                        energy_match=True, seed=11),
        metrics=("inbsim", "vendi", "kid"),
    )
    if seed is not None:
        spec = reseed(spec, seed)
    return spec
