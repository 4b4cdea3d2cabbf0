#!/usr/bin/env python3
"""Measure the residual scaling laws of the high-frequency approximation
statements (solenoidal projection, 3D preimage, 2D preimage, factor-norm
discrepancy) and print the fitted log-log slopes."""

import sys

from fluidex import cli


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/lemma_scalings"
    return cli.main(["verify-lemmas", "--resolution", "256", "--seed", "1", "--out", out])


if __name__ == "__main__":
    raise SystemExit(main())
