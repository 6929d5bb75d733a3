"""Generate the bundled sample course (src/igvsim/data/sample_course.json).

The lane is straight, then one smooth S-curve, then straight again. Barrels stand in a row just
outside each painted line, with a few more staggered inside the lane.
"""

import argparse
import json
import math
from pathlib import Path

LENGTH_X = 34.0  # m along x covered by the S-curve
AMPLITUDE = 2.5  # m, peak lateral excursion of the centerline
S_SCALE = AMPLITUDE / (1.5 * math.sin(2 * math.pi / 3))  # sin t - sin(2t)/2 peaks at 1.5 sin(2pi/3)
HALF_WIDTH = 2.5  # lane half width, centerline to line
EDGE_OFFSET = 3.0  # centerline to edge-barrel centers
EDGE_SPACING = 1.1  # m between edge barrels along the lane
INNER = [(7.0, 1.0), (13.0, -1.0), (19.5, 1.0), (26.5, 1.0)]  # (x, lateral offset)
LEAD_IN = 3.0  # straight section before and after the curve


def center(x):
    """(y, dy/dx) of the lane centerline: straight outside [0, LENGTH_X], and in between
    one S of sin t - sin(2t)/2, whose slope is zero at both ends so the joins are smooth."""
    if x <= 0.0 or x >= LENGTH_X:
        return 0.0, 0.0
    k = 2 * math.pi / LENGTH_X
    t = k * x
    return S_SCALE * (math.sin(t) - 0.5 * math.sin(2 * t)), \
        S_SCALE * k * (math.cos(t) - math.cos(2 * t))


def offset_point(x, d):
    y, dy = center(x)
    n = math.hypot(1.0, dy)
    return x - d * dy / n, y + d / n


def arc_samples(x0, x1, step):
    """x positions spaced ``step`` apart along the centerline arc."""
    xs, x, acc = [x0], x0, 0.0
    while x < x1:
        _, dy = center(x)
        dx = 0.01
        acc += math.hypot(1.0, dy) * dx
        x += dx
        if acc >= step:
            xs.append(x)
            acc = 0.0
    return xs


def build():
    start, end = -LEAD_IN, LENGTH_X + LEAD_IN
    xs = [start + i * 0.5 for i in range(int((end - start) / 0.5) + 1)]
    lines = [{"points": [[round(c, 4) for c in offset_point(x, s * HALF_WIDTH)] for x in xs],
              "width": 0.08, "intensity": 1.0} for s in (1, -1)]
    barrels = []
    for x in arc_samples(start, end, EDGE_SPACING):
        for s in (1, -1):
            bx, by = offset_point(x, s * EDGE_OFFSET)
            barrels.append({"x": round(bx, 4), "y": round(by, 4)})
    for x, d in INNER:
        bx, by = offset_point(x, d)
        barrels.append({"x": round(bx, 4), "y": round(by, 4)})
    gx, gy = offset_point(LENGTH_X + LEAD_IN - 0.5, 0.0)
    return {
        "geo": {"lat0": 42.678, "lon0": -83.195},
        "spawn": {"x": start + 0.5, "y": 0.0, "heading_deg": 0.0},
        "terrain": {"grass_base": [64, 120, 48], "noise_amplitude": 0.15, "noise_scale": 0.5,
                    "noise_seed": 7},
        "lines": lines,
        "barrels": barrels,
        "goal": {"x": round(gx, 4), "y": round(gy, 4), "radius": 1.5},
    }


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1]
                                         / "src/igvsim/data/sample_course.json"))
    args = ap.parse_args()
    Path(args.out).write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {args.out}")
