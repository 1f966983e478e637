"""Regenerates tests/data/rle_corpus.json with the pycocotools mask codec.

    python3 tests/support/make_rle_corpus.py > tests/data/rle_corpus.json
"""
import json
import sys

import numpy as np
from pycocotools import mask as mu


def runs(m):
    flat = m.flatten(order="F")
    out, cur, n = [], 0, 0
    for v in flat:
        if v != cur:
            out.append(n)
            cur, n = v, 0
        n += 1
    out.append(n)
    return out


def entry(m, kind, polygon=None):
    m = np.asfortranarray(m.astype(np.uint8))
    rle = mu.encode(m)
    e = {
        "kind": kind,
        "size": [int(m.shape[0]), int(m.shape[1])],
        "counts": rle["counts"].decode("ascii"),
        "runs": runs(m),
        "area": int(mu.area(rle)),
        "bbox": [float(v) for v in mu.toBbox(rle)],
    }
    if polygon is not None:
        e["polygon"] = polygon
    return e


def main():
    rng = np.random.default_rng(20240611)
    out = []
    for h, w in [(1, 1), (1, 7), (9, 1), (480, 640)]:
        out.append(entry(np.zeros((h, w)), "empty"))
        out.append(entry(np.ones((h, w)), "full"))
    while len(out) < 40:
        h, w = rng.integers(1, 120, size=2)
        out.append(entry(rng.random((h, w)) < rng.random(), "noise"))
    while len(out) < 80:
        h, w = rng.integers(20, 700, size=2)
        m = np.zeros((h, w))
        for _ in range(rng.integers(1, 6)):
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            m[y0 : y0 + rng.integers(1, h), x0 : x0 + rng.integers(1, w)] = 1
        out.append(entry(m, "boxes"))
    while len(out) < 130:
        h, w = (int(v) for v in rng.integers(10, 500, size=2))
        n = int(rng.integers(3, 12))
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        rad = rng.uniform(1, max(h, w) / 2, n)
        poly = np.stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)], 1).flatten()
        poly = [round(float(v), 2) for v in poly]
        rle = mu.merge(mu.frPyObjects([poly], h, w))
        out.append(entry(mu.decode(rle), "polygon", poly))
    json.dump(out, sys.stdout)


if __name__ == "__main__":
    main()
