#!/usr/bin/env python3
"""Generate the frozen golden fixtures under tests/golden/.

The evaluation scene's expected report is computed with the independent
brute-force oracles from tests/oracles.py (not with the package), then
serialized once and committed. The bindings fixtures freeze the primary
implementation's outputs for the cross-boundary equivalence suite.

Re-run only when the fixture scene itself changes.
"""

import json
import os
import shutil
import sys

import numpy as np

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "tests"))

from dowseg import cli, io as rio, labels as lab, metrics as met
from dowseg.instances import InstanceRecord, InstanceSet
from oracles import confusion_class_iou, oracle_ap, oracle_ap_range, oracle_match

GOLDEN = os.path.join(ROOT, "tests", "golden")


def block(r0, r1, c0, c1):
    return [(r, c) for r in range(r0, r1) for c in range(c0, c1)]


def make_set(shape, objects):
    amap = np.zeros(shape, dtype=np.uint32)
    records = []
    for oid, cls, conf, pixels in objects:
        for r, c in pixels:
            amap[r, c] = oid
        records.append(InstanceRecord(oid, cls, conf, len(pixels)))
    return InstanceSet(amap, records)


def eval_scene():
    shape = (24, 24)
    gt = make_set(
        shape,
        [
            (1, 1, None, block(1, 7, 1, 7)),
            (2, 2, None, block(1, 7, 10, 16)),
            (3, 3, None, block(10, 16, 1, 7)),
            (4, 5, None, block(18, 23, 18, 23)),
        ],
    )
    pred = make_set(
        shape,
        [
            (1, 1, 0.95, block(1, 7, 1, 7)),    # perfect TP
            (2, 2, 0.9, block(2, 7, 10, 16)),   # IoU 30/36
            (3, 4, 0.8, block(10, 16, 1, 7)),   # right shape, wrong class
            (4, 5, 0.4, block(18, 22, 18, 22)), # IoU 16/25
            (5, 1, 0.55, block(10, 14, 10, 14)),  # false positive
        ],
    )
    return pred, gt


def oracle_report(pred, gt):
    subset3, subset5 = (1, 2, 5), (1, 2, 3, 4, 5)
    pm = pred.instance_map > 0
    gm = gt.instance_map > 0
    inter = sum(
        1 for r in range(pm.shape[0]) for c in range(pm.shape[1]) if pm[r, c] and gm[r, c]
    )
    union = sum(
        1 for r in range(pm.shape[0]) for c in range(pm.shape[1]) if pm[r, c] or gm[r, c]
    )
    rep = met.MetricsReport()
    rep.iou_binary = inter / union

    def cls_raster(inst):
        out = np.zeros(inst.instance_map.shape, dtype=int)
        for rec in inst.records:
            out[inst.instance_map == rec.id] = rec.class_id
        return out

    rep.per_class_iou = confusion_class_iou(cls_raster(pred), cls_raster(gt), subset5)
    rep.miou5 = float(np.mean([v for v in rep.per_class_iou.values() if v is not None]))
    rep.miou3 = float(
        np.mean([rep.per_class_iou[c] for c in subset3 if rep.per_class_iou[c] is not None])
    )

    def o_preds(inst):
        return [
            (r.id, r.confidence, r.class_id,
             set(map(tuple, np.argwhere(inst.instance_map == r.id).tolist())))
            for r in inst.records
        ]

    def o_gts(inst):
        return [
            (r.id, r.class_id, set(map(tuple, np.argwhere(inst.instance_map == r.id).tolist())))
            for r in inst.records
        ]

    rep.ap50 = oracle_ap(o_preds(pred), o_gts(gt), 0.5)
    rep.ap50_95 = oracle_ap_range(o_preds(pred), o_gts(gt))
    rep.tps = len(oracle_match(o_preds(pred), o_gts(gt), 0.5, class_aware=True))
    rep.per_class_ap = {}
    for c in subset5:
        p_c = [o for o in o_preds(pred) if o[2] == c]
        g_c = [o for o in o_gts(gt) if o[1] == c]
        rep.per_class_ap[c] = oracle_ap(p_c, g_c, 0.5)
    present5 = [rep.per_class_ap[c] for c in subset5 if rep.per_class_ap[c] is not None]
    present3 = [rep.per_class_ap[c] for c in subset3 if rep.per_class_ap[c] is not None]
    rep.map50_5 = float(np.mean(present5))
    rep.map50_3 = float(np.mean(present3))
    return rep


def write_eval_fixture():
    pred, gt = eval_scene()
    for sub, inst in (("pred", pred), ("gt", gt)):
        d = os.path.join(GOLDEN, "eval", sub)
        os.makedirs(d, exist_ok=True)
        rio.write_array(inst.instance_map, os.path.join(d, "scene.npy"))
        with open(os.path.join(d, "scene.csv"), "w", encoding="utf-8", newline="\n") as fp:
            fp.write(cli._instance_table(inst))

    rep = oracle_report(pred, gt)
    pkg = met.evaluate(pred, gt, mode="multiclass")
    for field in ("iou_binary", "miou3", "miou5", "ap50", "map50_3", "map50_5", "ap50_95"):
        a, b = getattr(rep, field), getattr(pkg, field)
        assert abs(a - b) < 1e-12, (field, a, b)
    assert rep.tps == pkg.tps
    for c in rep.per_class_iou:
        for d_o, d_p in ((rep.per_class_iou, pkg.per_class_iou), (rep.per_class_ap, pkg.per_class_ap)):
            if d_o[c] is None:
                assert d_p[c] is None, (c, d_p[c])
            else:
                assert abs(d_o[c] - d_p[c]) < 1e-12, (c, d_o[c], d_p[c])

    rio.write_report(rep, os.path.join(GOLDEN, "report.json"), "json")
    rio.write_report(rep, os.path.join(GOLDEN, "report.csv"), "csv")
    print("eval fixture written; oracle report:")
    print(open(os.path.join(GOLDEN, "report.json")).read())


def write_bindings_fixture():
    d = os.path.join(GOLDEN, "bindings")
    os.makedirs(d, exist_ok=True)

    ids = np.zeros((25, 46), dtype=np.uint32)
    ids[2:23, 2:23] = 1
    ids[2:23, 23:44] = 2
    ids[24, 0] = 3  # tiny instance that gap enforcement will erase
    rio.write_array(ids, os.path.join(d, "labels.npy"))

    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[3:9, 4:12] = 1
    mask[12, 1] = 1
    rio.write_array(mask, os.path.join(d, "mask.npy"))

    levels = lab.ordinal_targets(lab.LabelRaster(ids), n_lev=2, n_pix=10)
    rio.write_array(levels.masks.astype(np.uint8), os.path.join(d, "levels.npy"))

    exp = os.path.join(d, "expected")
    if os.path.isdir(exp):
        shutil.rmtree(exp)
    os.makedirs(exp)

    def run_op(name, inputs, params, outputs):
        tmp = os.path.join(exp, "_tmp")
        os.makedirs(tmp, exist_ok=True)
        argv = ["op", name, "--out-dir", tmp, "--params", json.dumps(params)]
        for k, v in inputs.items():
            argv += ["--in", f"{k}={v}"]
        rc = cli.main(argv)
        assert rc == 0, (name, rc)
        for fname, target in outputs.items():
            shutil.move(os.path.join(tmp, fname), os.path.join(exp, target))
        shutil.rmtree(tmp)

    labels_p = os.path.join(d, "labels.npy")
    run_op("distance_transform", {"mask": os.path.join(d, "mask.npy")},
           {"source": "foreground"}, {"distance.npy": "distance.npy"})
    run_op("enforce_gap", {"labels": labels_p}, {"n_gap": 7},
           {"labels_gap.npy": "labels_gap.npy", "edits.json": "edits.json"})
    run_op("weight_map", {"labels": labels_p},
           {"w0": 10.0, "sigma": 5.0, "mode": "additive"}, {"weights.npy": "weights.npy"})
    run_op("ordinal_targets", {"labels": labels_p}, {"n_lev": 2, "n_pix": 10},
           {"levels.npy": "levels.npy"})
    run_op("dow_watershed", {"levels": os.path.join(d, "levels.npy")}, {},
           {"instances.npy": "instances.npy"})

    pred, gt = eval_scene()
    records = lambda inst: [
        {"id": r.id, "class": r.class_id, "confidence": r.confidence, "pixels": r.pixel_count}
        for r in inst.records
    ]
    run_op(
        "evaluate",
        {"pred_map": os.path.join(GOLDEN, "eval", "pred", "scene.npy"),
         "gt_map": os.path.join(GOLDEN, "eval", "gt", "scene.npy")},
        {"mode": "multiclass", "pred_records": records(pred), "gt_records": records(gt)},
        {"report.json": "report.json"},
    )
    print("bindings fixture written")


if __name__ == "__main__":
    os.makedirs(GOLDEN, exist_ok=True)
    write_eval_fixture()
    write_bindings_fixture()
