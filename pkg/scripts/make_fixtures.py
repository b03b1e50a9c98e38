"""Regenerate the bundled smoke traces under tests/fixtures/."""

import argparse
from pathlib import Path

from muxstream.gen import gen_trace
from muxstream.sim import RunConfig
from muxstream.trace import dump_trace

FIXTURES = {
    "pa_smoke": ("pa", 1, 20),
    "pt_smoke": ("pt", 1, 10),
    "multiplex_smoke": ("multiplex", 1, 4),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "fixtures")
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    config = RunConfig()
    for name, (kind, seed, size) in FIXTURES.items():
        path = args.out_dir / f"{name}.jsonl"
        dump_trace(gen_trace(kind, seed, size, config), path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
