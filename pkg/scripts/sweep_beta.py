"""Turn-taking trade-off: replay PT traces at several beta values.

Traces are generated once at the default beta, so the engineered noise/legit
split is fixed while the detector threshold moves.
"""

import argparse
import csv
import sys
from dataclasses import replace

from muxstream.gen import gen_trace
from muxstream.model import build_model
from muxstream.sim import RunConfig, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traces", type=int, default=20)
    ap.add_argument("--size", type=int, default=10)
    ap.add_argument("--betas", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.4, 0.8, 1.2, 1.6])
    ap.add_argument("--csv", help="also write rows to this file")
    args = ap.parse_args()

    base = RunConfig()
    model = build_model(base.model)
    traces = [gen_trace("pt", seed, args.size, base) for seed in range(args.traces)]
    rows = []
    for beta in args.betas:
        config = replace(base, beta=beta)
        pt = rr = 0.0
        for events in traces:
            _, doc = run(events, config, model)
            pt += doc["pt_accuracy"]
            rr += doc["legit_response_rate"]
        rows.append({"beta": beta, "pt_accuracy": pt / len(traces), "legit_response_rate": rr / len(traces)})

    print(f"{'beta':>6}  {'pt_accuracy':>11}  {'legit_response_rate':>19}")
    for r in rows:
        print(f"{r['beta']:>6.2f}  {r['pt_accuracy']:>11.3f}  {r['legit_response_rate']:>19.3f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
