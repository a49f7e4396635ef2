"""Structured feature-space perturbation toolkit.

Builds spatially coherent (pink) noise fields, projects them onto the
principal components of per-image patch features, and injects the result
additively into intermediate features of a deterministic contractive toy
generator. Ships diversity metrics (in-batch cosine similarity, Vendi
score, KID) and a batch experiment runner with CSV/SVG reporting.
"""

__version__ = "0.1.0"

from .noise import (
    NoiseField,
    band_power_ratio,
    fit_spectral_slope,
    normalize_field,
    pink_filter,
    pink_noise,
    power_spectrum,
    radial_frequency_grid,
    sample_white,
    save_field,
)
from .patch_pca import PatchMatrix, PcaBasis, fit_pca, patchify, project_and_scale, unpatchify
from .inject import (
    FeatureMap,
    StrideConfig,
    input_noise_blend,
    no_pca_perturb,
    perturbation_energy,
    stride_perturb,
)
from .toygen import ToyGenerator, batch_generate, build_generator, dump_generator, dump_trace, generate
from .metrics import (
    EmbeddingSet,
    MetricsReport,
    PromptMetrics,
    in_batch_similarity,
    kid,
    kid_blocks,
    pairwise_matrix,
    vendi_score,
)
from .experiment import (
    ExperimentSpec,
    GeneratorSpec,
    ResultRow,
    compare_methods,
    config_from_json,
    demo_spec,
    emit_csv,
    emit_pareto_svg,
    run_experiment,
    spec_digest,
    sweep,
    write_outputs,
)

__all__ = [
    "__version__",
    "NoiseField",
    "sample_white",
    "radial_frequency_grid",
    "pink_filter",
    "normalize_field",
    "pink_noise",
    "power_spectrum",
    "fit_spectral_slope",
    "band_power_ratio",
    "save_field",
    "PatchMatrix",
    "PcaBasis",
    "patchify",
    "unpatchify",
    "fit_pca",
    "project_and_scale",
    "StrideConfig",
    "FeatureMap",
    "stride_perturb",
    "no_pca_perturb",
    "input_noise_blend",
    "perturbation_energy",
    "ToyGenerator",
    "build_generator",
    "generate",
    "batch_generate",
    "dump_generator",
    "dump_trace",
    "EmbeddingSet",
    "MetricsReport",
    "PromptMetrics",
    "pairwise_matrix",
    "in_batch_similarity",
    "vendi_score",
    "kid",
    "kid_blocks",
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
    "spec_digest",
    "demo_spec",
]
