"""Proactive-alert scores over a grid of alpha and gamma.

PA traces are generated at the defaults (alpha 2, gamma 4); other settings
replay the same traces, so off-default cells show how sensitive the trigger
is to its two knobs.
"""

import argparse
import itertools
import sys
from dataclasses import replace

from muxstream.gen import gen_trace
from muxstream.model import build_model
from muxstream.sim import RunConfig, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traces", type=int, default=10)
    ap.add_argument("--size", type=int, default=24)
    ap.add_argument("--alphas", type=float, nargs="+", default=[1.0, 1.5, 2.0, 2.5, 3.0])
    ap.add_argument("--gammas", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    args = ap.parse_args()

    base = RunConfig()
    model = build_model(base.model)
    traces = [gen_trace("pa", seed, args.size, base) for seed in range(args.traces)]
    print(f"{'alpha':>5}  {'gamma':>5}  {'accuracy':>8}  {'precision':>9}  {'iou':>6}  {'alerts':>6}")
    for alpha, gamma in itertools.product(args.alphas, args.gammas):
        config = replace(base, alpha=alpha, gamma=gamma)
        acc = prec = iou = 0.0
        alerts = 0
        for events in traces:
            _, doc = run(events, config, model)
            acc += doc["pa_accuracy"]
            prec += doc["pa_precision"]
            iou += doc["pa_iou"]
            alerts += doc["alerts"]
        n = len(traces)
        print(f"{alpha:>5.2f}  {gamma:>5d}  {acc / n:>8.3f}  {prec / n:>9.3f}  {iou / n:>6.3f}  {alerts:>6d}")


if __name__ == "__main__":
    sys.exit(main())
