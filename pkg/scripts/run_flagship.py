"""Flagship identification run: hidden cubic law, noiseless, n=32 square, 21 amplitudes.

Prints the reconstruction error and coverage; writes artifacts to --out.
"""

import argparse
import time

from corrode.cli import main as cli_main
from corrode.config import preset
from corrode.experiments import run_reconstruct


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="flagship_out")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    start = time.perf_counter()
    run = run_reconstruct(preset("flagship"), args.threads)
    rep = run.report
    err, cov = rep["reconstruction_error"], rep["coverage"]
    print(f"lambda            {err['lambda']:.6f}")
    print(f"populated cells   {err['populated_cells']}")
    print(f"relative sup err  {err['sup_rel']:.4%}")
    print(f"band coverage     {cov['band']:.2%}")
    print(f"openness checks   {cov['openness']['passed']}/{cov['openness']['checked']}")
    print(f"elapsed           {time.perf_counter() - start:.1f} s")
    cli_main(["reconstruct", "--preset", "flagship", "--out", args.out, "--threads", str(args.threads)])


if __name__ == "__main__":
    main()
