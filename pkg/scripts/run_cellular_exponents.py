#!/usr/bin/env python3
"""Seeded exponent sweep on the cellular flow: all classes, horizons to 30.

The hyperbolic stagnation points give the exact rate 1; the report shows the
sampled exponents for the isovorticial class, the aligned factor-class
sub-supremum, and the full admissible set, plus the max-relation diagnostics.
"""

import sys

from fluidex import cli


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/cellular_exponents"
    return cli.main(
        [
            "exponents",
            "--flow", "cellular",
            "--classes", "full,star2,f2_aligned,f2",
            "--horizons", "5,10,15,20,25,30",
            "--n", "500",
            "--seed", "1",
            "--out", out,
        ]
    )


if __name__ == "__main__":
    raise SystemExit(main())
