"""Remainder norms of both probe families across lambda, for several fixed widths."""

from __future__ import annotations

import argparse

from waveprobe.acceptance import EPSILON, GAUSSIAN, OMEGA, desk_grid
from waveprobe.geometry import boundary_faces
from waveprobe.go_factory import remainder_decay_report
from waveprobe.potential import sample_potential


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.5, 0.7])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[8.0, 16.0, 32.0, 64.0])
    args = ap.parse_args(argv)
    g = desk_grid(args.nx)
    faces = boundary_faces(g.domain, OMEGA, EPSILON)
    q = sample_potential(GAUSSIAN, g)
    for d in args.deltas:
        rep = remainder_decay_report(q, OMEGA, d, args.lambdas, g, faces)
        print(f"delta={d}")
        for r in rep["rows"]:
            print("  lam={lambda:5.1f} w_L2={w_L2:.3e} w_H1={w_H1:.3e} z_L2={z_L2:.3e} z_H1={z_H1:.3e}".format(**r))
        print("  slopes " + " ".join(f"{k}={v:.3f}" for k, v in rep["slopes"].items()), flush=True)


if __name__ == "__main__":
    main()
