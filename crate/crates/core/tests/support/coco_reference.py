"""Runs pycocotools COCOeval and prints its summary and per-detection matches as JSON.

    python3 coco_reference.py GT.json RESULTS.json {bbox,segm,keypoints}
"""
import contextlib
import io
import json
import sys

from pycocotools.coco import COCO
from pycocotools.cocoeval import COCOeval


def main(gt_path, dt_path, task):
    with contextlib.redirect_stdout(io.StringIO()):
        gt = COCO(gt_path)
        dt = gt.loadRes(dt_path)
        ev = COCOeval(gt, dt, task)
        ev.evaluate()
        ev.accumulate()
        ev.summarize()
    all_range = ev.params.areaRng[0]
    matches = []
    for e in ev.evalImgs:
        if e is None or e["aRng"] != all_range:
            continue
        for d, dt_id in enumerate(e["dtIds"]):
            for t in range(len(ev.params.iouThrs)):
                matches.append([int(e["image_id"]), int(dt_id), t, int(e["dtMatches"][t][d]), bool(e["dtIgnore"][t][d])])
    json.dump({"stats": [float(s) for s in ev.stats], "matches": matches}, sys.stdout)


if __name__ == "__main__":
    main(*sys.argv[1:4])
