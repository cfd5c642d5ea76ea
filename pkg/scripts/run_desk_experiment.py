"""Full desk-scale run: search, evaluation, baselines, and all ablations.

Drives the CLI end to end with scripts/desk.ini, so every table lands next
to its manifest and any finished stage can be rerun or extended in place.
Expect a few minutes on a laptop CPU.
"""

import argparse
import sys
from pathlib import Path

from seal.cli import ABLATIONS, main as seal

HERE = Path(__file__).resolve().parent


def run(argv) -> None:
    argv = [str(a) for a in argv]
    print(f"$ seal {' '.join(argv)}")
    rc = seal(argv)
    if rc != 0:
        sys.exit(rc)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path,
                    default=HERE.parent / "results" / "desk")
    ap.add_argument("--seed", type=int, default=123,
                    help="search seed (evaluation seeds come from the config)")
    ap.add_argument("--skip-ablations", action="store_true")
    args = ap.parse_args()
    common = ["--config", HERE / "desk.ini", "--out", args.out]

    run(["search", *common, "--seed", args.seed])
    run(["evaluate", *common])
    run(["baselines", *common, "naive", "joint"])
    if not args.skip_ablations:
        for axis in ABLATIONS:
            run(["ablate", *common, axis])
    run(["report", "--out", args.out])


if __name__ == "__main__":
    main()
