#!/usr/bin/env python3
"""Write a small blob+plane+noise test volume for the viewer integration test.

Usage: make_phantom.py OUTDIR [SIZE]
Prints a JSON description (paths, plane slice, threshold) on stdout.
"""
import json
import sys
from pathlib import Path

import numpy as np

from faith import write_volume


def main() -> int:
    outdir = Path(sys.argv[1])
    size = int(sys.argv[2]) if len(sys.argv) > 2 else 48
    rng = np.random.default_rng(31415)

    vol = np.full((size, size, size), 50.0)
    plane_z = size // 3
    vol[plane_z] = 110.0
    c = (2 * size) // 3
    r = size // 6
    zz, yy, xx = np.mgrid[0:size, 0:size, 0:size]
    vol[(zz - c) ** 2 + (yy - c) ** 2 + (xx - c) ** 2 <= r * r] = 200.0
    vol += rng.normal(0.0, 5.0, size=vol.shape)
    data = np.clip(np.rint(vol), 0, 255).astype(np.uint8)

    outdir.mkdir(parents=True, exist_ok=True)
    raw, sidecar = write_volume(outdir / "phantom", data)
    print(
        json.dumps(
            {
                "raw": str(raw),
                "sidecar": str(sidecar),
                "size": size,
                "plane_z": plane_z,
                "theta_g": 150.0,
                "blob_center": c,
            }
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
