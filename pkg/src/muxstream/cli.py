"""Command line: ``run``, ``gen`` and ``validate``.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from muxstream.errors import ConfigError, TraceValidationError
from muxstream.gen import KINDS, gen_trace
from muxstream.model import ModelConfig
from muxstream.sim import RunConfig, run, write_log, write_metrics
from muxstream.trace import dump_trace, load_trace


def _model_flags(p: argparse.ArgumentParser, seed_flag: str = "--seed") -> None:
    g = p.add_argument_group("model")
    g.add_argument(seed_flag, dest="model_seed", type=int, default=0, help="model weight seed")
    g.add_argument("--d-model", type=int, default=32)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--heads", type=int, default=2)
    g.add_argument("--vocab", type=int, default=64)
    g.add_argument("--bos-id", type=int, default=1)
    g.add_argument("--eos-id", type=int, default=2)
    g.add_argument("--logit-scale", type=float, default=3.0)


def _run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("runtime")
    g.add_argument("--alpha", type=float, default=2.0, help="Gaussian factor for frame candidates")
    g.add_argument("--beta", type=float, default=0.2, help="interruption threshold scale")
    g.add_argument("--gamma", type=int, default=4, help="hit count an alert must exceed")
    g.add_argument("--warmup", type=int, default=2, help="frames skipped before scoring")
    g.add_argument("--max-response-tokens", type=int, default=32)
    g.add_argument("--query-mode", choices=("last3", "mean"), default="last3")


def _config(args: argparse.Namespace) -> RunConfig:
    model = ModelConfig(
        d_model=args.d_model,
        n_layers=args.layers,
        n_heads=args.heads,
        vocab_size=args.vocab,
        seed=args.model_seed,
        bos_id=args.bos_id,
        eos_id=args.eos_id,
        logit_scale=args.logit_scale,
    )
    model.validate()
    return RunConfig(
        model=model,
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        warmup=args.warmup,
        max_response_tokens=args.max_response_tokens,
        query_mode=args.query_mode,
        trace_path=getattr(args, "trace", None),
        log_path=getattr(args, "out_log", None),
        metrics_path=getattr(args, "out_metrics", None),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="muxstream", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay a trace and score it")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--out-log", type=Path, required=True)
    p.add_argument("--out-metrics", type=Path, required=True)
    _run_flags(p)
    _model_flags(p)

    p = sub.add_parser("gen", help="write a synthetic trace")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--seed", type=int, required=True, help="trace seed")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _run_flags(p)
    _model_flags(p, "--model-seed")

    p = sub.add_parser("validate", help="check a trace file")
    p.add_argument("--trace", type=Path, required=True)
    _run_flags(p)
    _model_flags(p)
    return parser


def _print_metrics(doc: dict) -> None:
    width = max(map(len, doc))
    for key in sorted(doc):
        value = doc[key]
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        print(f"{key:<{width}}  {shown}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
        if args.command == "validate":
            events = load_trace(args.trace, config.model.d_model, config.model.vocab_size)
            print(f"ok: {len(events)} events")
            return 0
        if args.command == "gen":
            dump_trace(gen_trace(args.kind, args.seed, args.size, config), args.out)
            return 0
        events = load_trace(args.trace, config.model.d_model, config.model.vocab_size)
    except (TraceValidationError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    try:
        log, doc = run(events, config)
        write_log(log, args.out_log)
        write_metrics(doc, args.out_metrics)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    _print_metrics(doc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
