"""Command-line harness: ``python -m fhenav {genfix,run,bench}``.

Exit codes: 0 success, 1 a tolerance or cost check failed, 2 bad usage or
unreadable input, 3 the level budget ran out (the block is named on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DepthExhausted, FheError
from .model import DESK_CONFIG, ModelConfig, ModelWeights, generate_weights, load_inputs, \
    random_inputs, save_inputs
from .pipeline import (
    check_depth,
    ckks_factory,
    level_budget,
    parse_blocks,
    required_rotations,
    run_bench,
    run_parity,
    simulator_factory,
)
from .reference import forward_exact, forward_poly

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DEPTH = 0, 1, 2, 3
PRESETS = {"default": {}, "desk": DESK_CONFIG}
DEFAULT_COUNT = 20


def _config(name: str) -> ModelConfig:
    return ModelConfig(**PRESETS[name])


def cmd_genfix(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    weights = generate_weights(args.seed, _config(args.config))
    weights.save(out / "weights.json")
    save_inputs(out / "inputs", random_inputs(args.seed, weights.config, args.count))
    print(f"wrote {out / 'weights.json'} and {args.count} inputs under {out / 'inputs'}")
    return EXIT_OK


def _load(args):
    if args.weights:
        weights = ModelWeights.load(args.weights)
    else:
        weights = generate_weights(args.seed, _config(args.config))
    src = args.inputs
    if src is None or src.startswith("seed:"):
        seed = args.seed if src is None else int(src.split(":", 1)[1])
        inputs = random_inputs(seed, weights.config, args.count)
    else:
        inputs = load_inputs(src, weights.config)
        if args.count is not None:
            inputs = inputs[: args.count]
    return weights, inputs


def _factory(args, weights, inputs, blocks):
    if args.backend == "simulator":
        return simulator_factory(args.noise, args.seed), args.levels
    from .ckks import CkksParams

    if args.noise != "off":
        raise ValueError("the noise model only applies to the simulator")
    w = weights.without_activations() if getattr(args, "bypass_activations", False) else weights
    levels = args.levels or level_budget(w, blocks)
    preset = json.loads(Path(args.ckks_params).read_text()) if args.ckks_params else {}
    preset.setdefault("max_level", max(levels, 1))
    params = CkksParams(**preset)
    check_depth(w, blocks, params.max_level)
    rotations = required_rotations(w, inputs[0], blocks, args.rotsum)
    return ckks_factory(params, rotations, args.seed), levels


def _write(doc: str, out: str | None) -> None:
    if out:
        Path(out).write_text(doc + "\n")
    else:
        print(doc)


def cmd_run(args) -> int:
    weights, inputs = _load(args)
    blocks = parse_blocks(args.blocks)
    factory, levels = _factory(args, weights, inputs, blocks)
    report = run_parity(weights, inputs, factory, blocks, args.rotsum, levels,
                        backend_name=args.backend, noise=args.noise,
                        bypass=args.bypass_activations, seed=args.seed)
    _write(report.to_json(), args.out)
    if args.traces:
        _dump_traces(Path(args.traces), weights, inputs)
    for row in report.blocks:
        print(f"{row['name']:8s} mae_exact={row['mae_exact']:.3e} mae_poly={row['mae_poly']:.3e} "
              f"depth={row['depth_measured']:3d} time={row['wall_time_s']:.2f}s", file=sys.stderr)
    if report.r_squared is not None:
        print(f"r_squared={report.r_squared:.4f}", file=sys.stderr)
    failed = [k for k, ok in report.checks.items() if not ok]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _dump_traces(directory: Path, weights, inputs) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, frames in enumerate(inputs):
        (directory / f"exact_{i:03d}.json").write_text(forward_exact(frames, weights).to_json())
        (directory / f"poly_{i:03d}.json").write_text(forward_poly(frames, weights).to_json())


def cmd_bench(args) -> int:
    weights, inputs = _load(args)
    blocks = parse_blocks(args.blocks)
    factory, levels = _factory(args, weights, inputs, blocks)
    table = run_bench(weights, inputs[0], factory, blocks, levels)
    _write(json.dumps(table, indent=2, sort_keys=True), args.out)
    print(f"{'block':8s} {'naive rot':>10s} {'tree rot':>10s} {'mult':>10s} {'ops(tree)':>10s} "
          f"{'time(s)':>8s}", file=sys.stderr)
    for b in blocks:
        naive, tree = table["modes"]["naive"][b], table["modes"]["tree"][b]
        c = tree["counters"]
        print(f"{b:8s} {naive['counters']['rotate']:10d} {c['rotate']:10d} "
              f"{c['mult_ct'] + c['mult_pt']:10d} {tree['ops']:10d} {tree['wall_time_s']:8.2f}",
              file=sys.stderr)
    failed = [k for k, ok in table["checks"].items() if not ok]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fhenav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("genfix", help="write seeded weights and input fixtures")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--config", choices=sorted(PRESETS), default="default")
    gen.add_argument("--count", type=int, default=DEFAULT_COUNT)
    gen.add_argument("--out", default="fixtures")
    gen.set_defaults(func=cmd_genfix)

    for verb, func, helptext in (("run", cmd_run, "encrypted vs cleartext parity report"),
                                 ("bench", cmd_bench, "per-block operation counts")):
        p = sub.add_parser(verb, help=helptext)
        p.add_argument("--backend", choices=["simulator", "ckks"], default="simulator")
        p.add_argument("--noise", choices=["off", "ckks"], default="off")
        p.add_argument("--weights", help="weights JSON (default: generate from --seed)")
        p.add_argument("--inputs", help="directory of input files, or seed:N")
        p.add_argument("--count", type=int, default=None,
                       help=f"number of inputs (default {DEFAULT_COUNT} for seeded inputs)")
        p.add_argument("--config", choices=sorted(PRESETS), default="default",
                       help="architecture preset when no weights file is given")
        p.add_argument("--blocks", default="all", help="comma list or range, e.g. conv1-conv3")
        p.add_argument("--rotsum", choices=["naive", "tree"], default="tree")
        p.add_argument("--levels", type=int, default=None,
                       help="level budget (default: exactly what the blocks need)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--ckks-params", help="JSON file of CKKS parameters (ring_dim, "
                       "log_scale, log_q0, max_level, sigma)")
        p.add_argument("--out", help="report path (default: stdout)")
        if verb == "run":
            p.add_argument("--bypass-activations", action="store_true",
                           help="replace every activation by the identity")
            p.add_argument("--traces", help="also write cleartext block traces here")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "count", None) is None and args.verb != "genfix":
        if args.inputs is None or str(args.inputs).startswith("seed:"):
            args.count = DEFAULT_COUNT
    try:
        return args.func(args)
    except DepthExhausted as exc:
        print(f"depth exhausted: {exc}", file=sys.stderr)
        return EXIT_DEPTH
    except (FheError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
