"""Command-line entry point.

Subcommands:
  run    one experiment from a JSON config
  sweep  one experiment per value along a parameter axis
  demo   the shipped collapse-demonstration comparison

Exit codes: 0 success, 2 invalid config, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from .experiment import (
    SWEEP_AXES,
    compare_methods,
    config_from_json,
    demo_spec,
    reseed,
    run_experiment,
    sweep,
    write_outputs,
)


def _parse_values(axis: str, raw: str):
    """Comma-separated axis values; set axes join indices with '+', e.g. 0+1,2+3."""
    tokens = [t for t in raw.split(",") if t]
    if not tokens:
        raise ValueError("--values must list at least one value")
    if axis in ("layer_set", "step_gate"):
        return [frozenset(int(i) for i in t.split("+")) for t in tokens]
    if axis in ("P", "K"):
        return [int(t) for t in tokens]
    return [float(t) for t in tokens]


def _resolve(args, needs_config: bool):
    spec = config_from_json(args.config) if needs_config else demo_spec()
    if args.seed is not None:
        spec = reseed(spec, args.seed)
    out = args.out or spec.output_dir
    if out is None:
        raise ValueError("no output directory: set output_dir in the config or pass --out")
    return spec, out


def _cmd_run(args) -> int:
    spec, out = _resolve(args, needs_config=True)
    rows = run_experiment(spec)
    write_outputs(spec, rows, out)
    if not args.quiet:
        print(f"{spec.method}: {len(rows)} prompt rows -> {out}")
        if rows[0].mean_in_batch_sim is not None:
            print(f"  mean in-batch similarity {rows[0].mean_in_batch_sim:.4f}")
        if rows[0].mean_vendi is not None:
            print(f"  mean Vendi {rows[0].mean_vendi:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    spec, out = _resolve(args, needs_config=True)
    values = _parse_values(args.axis, args.values)
    rows = sweep(spec, args.axis, values)
    write_outputs(spec, rows, out)
    if not args.quiet:
        print(f"sweep over {args.axis}: {len(values)} runs, {len(rows)} rows -> {out}")
    return 0


def _cmd_demo(args) -> int:
    spec, out = _resolve(args, needs_config=False)
    rows, summary = compare_methods(spec)
    write_outputs(spec, rows, out)
    if not args.quiet:
        print(f"collapse demo ({spec.prompt_count} prompts x {spec.samples_per_prompt} samples) -> {out}")
        print(f"{'method':<12} {'InBSim':>8} {'Vendi/p':>8} {'energy':>8}")
        for m, stats in summary["methods"].items():
            print(f"{m:<12} {stats['in_batch_sim']:>8.4f} {stats['vendi']:>8.4f} "
                  f"{stats['perturbation_energy']:>8.3g}")
        gap = summary["stride_vs_no_pca"]
        n_se = gap["gap"] / gap["pooled_se"] if gap["pooled_se"] > 0 else float("inf")
        print(f"stride vs no_pca gap: {gap['gap']:.4f} ({n_se:.1f} pooled SEs)")
        _print_layer_asymmetry(spec, quiet=False)
    return 0


def _print_layer_asymmetry(spec, quiet: bool) -> None:
    # Informational only: whether early-block injection beats late-block
    # injection on the toy generator is reported, not asserted.
    from dataclasses import replace

    depth = spec.generator.depth
    early = frozenset(range(max(1, depth // 3)))
    late = frozenset(range(depth - max(1, depth // 3), depth))
    small = replace(spec, prompt_count=min(8, spec.prompt_count), method="stride")
    vals = {}
    for name, gates in (("early", early), ("late", late)):
        rows = run_experiment(replace(small, stride=replace(small.stride, layer_set=gates)))
        vals[name] = rows[0].mean_in_batch_sim
    if not quiet:
        print(f"layer placement (informational): InBSim early={vals['early']:.4f} late={vals['late']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stridelab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config):
        if needs_config:
            p.add_argument("--config", required=True, help="path to the experiment JSON")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--seed", type=int, help="override the config seeds")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_run = sub.add_parser("run", help="run one experiment from a config")
    common(p_run, True)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the config once per axis value")
    common(p_sweep, True)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values; '+'-joined indices for set axes")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_demo = sub.add_parser("demo", help="run the shipped collapse-demonstration comparison")
    common(p_demo, False)
    p_demo.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
