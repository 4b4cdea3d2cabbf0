#!/usr/bin/env python3
"""Wave-packet growth: pseudospectral linearized-Euler oracle versus the
transported-amplitude prediction, for a packet riding the separatrix of the
cellular flow into its hyperbolic stagnation point."""

import sys

from fluidex import cli


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/oracle_compare"
    return cli.main(
        [
            "oracle-compare",
            "--flow", "cellular",
            "--x0", "0,1.2",
            "--zeta", "0.6",
            "--xi0", "1,0",
            "--deltas", "0.0625,0.015625",
            "--t-grid", "0.75,1.5,2.25,3.0",
            "--resolution", "256",
            "--dt", "0.01",
            "--out", out,
        ]
    )


if __name__ == "__main__":
    raise SystemExit(main())
