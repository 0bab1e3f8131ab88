"""Batch command-line frontend.

Subcommands: targets, instances, eval, split, probe, op. Configuration
comes from an optional JSON file (--config) overridden by flags. Exit
codes: 0 success, 2 validation error, 3 I/O error; failures print one
machine-parsable JSON object per error on stderr. Re-running a command on
identical inputs with an identical config and seed produces byte-identical
outputs regardless of --workers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import instances as inst_mod
from . import io as rio
from . import labels as lab_mod
from . import metrics as met_mod
from . import probe as probe_mod
from . import split as split_mod
from .errors import FormatError, ValidationError


@dataclass
class PipelineConfig:
    labels_dir: str | None = None
    levels_dir: str | None = None
    class_probs_dir: str | None = None
    interior_probs_dir: str | None = None
    pred_dir: str | None = None
    gt_dir: str | None = None
    buildings: str | None = None
    features: str | None = None
    masks_dir: str | None = None
    pool_mode: str = "upsample"
    labels_csv: str | None = None
    out_dir: str = "."
    n_lev: int = 2
    n_pix: int = 10
    n_gap: int = 7
    w0: float = 10.0
    sigma: float = 5.0
    weight_mode: str = "additive"
    connectivity: int = 8
    level_threshold: float = 0.5
    mode: str = "multiclass"
    subset3: tuple = met_mod.SUBSET3_DEFAULT
    subset5: tuple = met_mod.SUBSET5_DEFAULT
    cell_size: float = 225.0
    fractions: dict | None = None
    k_folds: int = 10
    seed: int = 0
    workers: int = 1


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fp:
                values.update(json.load(fp))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: invalid JSON ({exc})") from exc
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for f in fields(PipelineConfig):  # flags win over the config file
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = PipelineConfig(**values)
    if cfg.subset3 is not None:
        cfg.subset3 = tuple(cfg.subset3)
    if cfg.subset5 is not None:
        cfg.subset5 = tuple(cfg.subset5)
    return cfg


def _stems(directory: str) -> list[str]:
    if not os.path.isdir(directory):
        raise ValidationError(f"not a directory: {directory}")
    return sorted(os.path.splitext(f)[0] for f in os.listdir(directory) if f.endswith(".npy"))


def _run_files(worker, jobs, workers: int) -> list[str]:
    if workers <= 1 or len(jobs) <= 1:
        lines = [worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            lines = list(pool.map(worker, jobs))
    for line in sorted(lines):
        print(line)
    return lines


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


def _targets_one(job) -> str:
    cfg, stem = job
    arr = rio.read_array(os.path.join(cfg.labels_dir, stem + ".npy"))
    if arr.ndim != 2:
        raise ValidationError(f"{stem}: label rasters must be 2D")
    labels = lab_mod.LabelRaster(arr.astype(np.uint32))
    gapped, edits = lab_mod.enforce_gap(labels, n_gap=cfg.n_gap)
    weights = lab_mod.weight_map(gapped, w0=cfg.w0, sigma=cfg.sigma, mode=cfg.weight_mode)
    levels = lab_mod.ordinal_targets(gapped, n_lev=cfg.n_lev, n_pix=cfg.n_pix)
    rio.write_array(gapped.instance_ids, os.path.join(cfg.out_dir, stem + "_gap.npy"))
    rio.write_array(weights, os.path.join(cfg.out_dir, stem + "_weights.npy"))
    rio.write_array(
        levels.masks.astype(np.uint8), os.path.join(cfg.out_dir, stem + "_levels.npy")
    )
    with open(os.path.join(cfg.out_dir, stem + "_gap_edits.json"), "w", encoding="utf-8") as fp:
        json.dump(edits.to_json(), fp, sort_keys=True)
        fp.write("\n")
    return f"targets {stem}: {len(labels.ids())} instances, {edits.relabeled_pixels} px relabeled"


def cmd_targets(cfg: PipelineConfig) -> int:
    if cfg.labels_dir is None:
        raise ValidationError("targets requires labels_dir")
    if cfg.n_pix < 1:
        raise ValidationError("n_pix must be >= 1")
    os.makedirs(cfg.out_dir, exist_ok=True)
    _run_files(_targets_one, [(cfg, s) for s in _stems(cfg.labels_dir)], cfg.workers)
    return 0


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------


def _instance_table(inst: inst_mod.InstanceSet) -> str:
    lines = ["id,class,confidence,pixels"]
    for r in inst.records:
        conf = "" if r.confidence is None else repr(float(r.confidence))
        cls = "" if r.class_id is None else str(r.class_id)
        lines.append(f"{r.id},{cls},{conf},{r.pixel_count}")
    return "\n".join(lines) + "\n"


def read_instance_table(path: str, instance_map: np.ndarray) -> inst_mod.InstanceSet:
    """Rebuild an InstanceSet from an id,class,confidence,pixels CSV."""
    records = []
    with open(path, encoding="utf-8") as fp:
        header = fp.readline().strip()
        if header != "id,class,confidence,pixels":
            raise FormatError(f"{path}: unexpected header {header!r}")
        for line in fp:
            line = line.strip()
            if not line:
                continue
            sid, cls, conf, pix = line.split(",")
            records.append(
                inst_mod.InstanceRecord(
                    id=int(sid),
                    class_id=int(cls) if cls else None,
                    confidence=float(conf) if conf else None,
                    pixel_count=int(pix),
                )
            )
    return inst_mod.InstanceSet(instance_map.astype(np.uint32), records)


def _instances_one(job) -> str:
    cfg, stem = job
    layers = rio.read_array(os.path.join(cfg.levels_dir, stem + ".npy"))
    if layers.ndim == 2:
        layers = layers[None]
    stack = inst_mod.ProbabilityStack(layers.astype(np.float32), kind="level")
    masks = inst_mod.threshold_levels(stack, t=cfg.level_threshold)
    inst = inst_mod.dow_watershed(masks, connectivity=cfg.connectivity)

    interior_mask = masks[1] if masks.shape[0] >= 2 else None
    if cfg.class_probs_dir:
        probs = inst_mod.ProbabilityStack(
            rio.read_array(os.path.join(cfg.class_probs_dir, stem + ".npy")).astype(np.float32)
        )
        interior_p = None
        if cfg.interior_probs_dir:
            interior_p = inst_mod.ProbabilityStack(
                rio.read_array(
                    os.path.join(cfg.interior_probs_dir, stem + ".npy")
                ).astype(np.float32)
            )
        inst = inst_mod.assign_class_and_confidence(
            inst, probs, interior_p=interior_p,
            interior_mask=interior_mask if interior_p is not None else None,
        )
    else:
        inst = inst_mod.score_binary_confidence(inst, stack.layers[0])

    rio.write_array(inst.instance_map, os.path.join(cfg.out_dir, stem + "_instances.npy"))
    with open(
        os.path.join(cfg.out_dir, stem + "_instances.csv"), "w", encoding="utf-8", newline="\n"
    ) as fp:
        fp.write(_instance_table(inst))
    georef = rio.read_georef_sidecar(os.path.join(cfg.levels_dir, stem + ".npy"))
    rio.write_geojson(
        inst_mod.polygonize(inst), os.path.join(cfg.out_dir, stem + "_polygons.geojson"), georef
    )
    return f"instances {stem}: {len(inst)} instances"


def cmd_instances(cfg: PipelineConfig) -> int:
    if cfg.levels_dir is None:
        raise ValidationError("instances requires levels_dir")
    os.makedirs(cfg.out_dir, exist_ok=True)
    stems = _stems(cfg.levels_dir)
    for d in (cfg.class_probs_dir, cfg.interior_probs_dir):
        if d and _stems(d) != stems:
            raise ValidationError(f"{d}: stems do not pair with {cfg.levels_dir}")
    _run_files(_instances_one, [(cfg, s) for s in stems], cfg.workers)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_instances(directory: str, stem: str) -> inst_mod.InstanceSet:
    arr = rio.read_array(os.path.join(directory, stem + ".npy"))
    if arr.ndim != 2:
        raise ValidationError(f"{stem}: instance maps must be 2D")
    table = os.path.join(directory, stem + ".csv")
    if not os.path.exists(table):
        raise ValidationError(f"missing instance table {table}")
    return read_instance_table(table, arr)


def cmd_eval(cfg: PipelineConfig) -> int:
    if cfg.pred_dir is None or cfg.gt_dir is None:
        raise ValidationError("eval requires pred_dir and gt_dir")
    pred_stems = _stems(cfg.pred_dir)
    gt_stems = _stems(cfg.gt_dir)
    if pred_stems != gt_stems:
        raise ValidationError(
            f"unpaired files: predictions {pred_stems} vs ground truth {gt_stems}"
        )
    preds = [_load_instances(cfg.pred_dir, s) for s in pred_stems]
    gts = [_load_instances(cfg.gt_dir, s) for s in gt_stems]
    report = met_mod.evaluate(
        preds, gts, mode=cfg.mode, subset3=cfg.subset3, subset5=cfg.subset5
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    rio.write_report(report, os.path.join(cfg.out_dir, "report.json"), "json")
    rio.write_report(report, os.path.join(cfg.out_dir, "report.csv"), "csv")
    print(f"eval: {len(preds)} scenes, tps={report.tps}")
    return 0


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


def cmd_split(cfg: PipelineConfig) -> int:
    if cfg.buildings is None:
        raise ValidationError("split requires a buildings GeoJSON")
    if cfg.fractions is None:
        raise ValidationError("split requires target fractions (e.g. train/val/test)")
    fractions = {k: float(v) for k, v in cfg.fractions.items()}
    buildings = split_mod.load_buildings(cfg.buildings)
    if not buildings:
        raise ValidationError(f"{cfg.buildings}: no buildings")
    xs = [b.centroid[0] for b in buildings]
    ys = [b.centroid[1] for b in buildings]
    pad = 1e-9  # keep max-edge centroids inside the half-open grid
    grid = split_mod.build_grid(
        (min(xs), min(ys), max(xs) + pad, max(ys) + pad), cell_size=cfg.cell_size
    )
    counts = split_mod.cell_class_counts(buildings, grid)
    split = split_mod.partition_cells(counts, fractions, grid=grid)
    split = split_mod.leakage_masks(buildings, split)
    os.makedirs(cfg.out_dir, exist_ok=True)
    split_mod.write_split_json(split, os.path.join(cfg.out_dir, "split.json"))
    split_mod.write_set_counts_csv(split, os.path.join(cfg.out_dir, "counts.csv"))
    for s in split_mod.SET_NAMES:
        split_mod.write_mask_geojson(split, s, os.path.join(cfg.out_dir, f"masks_{s}.geojson"))
    n_masked = sum(len(v) for v in split.mask_regions.values())
    print(f"split: {len(buildings)} buildings over {len(split.assignment)} cells, "
          f"{n_masked} leakage masks")
    return 0


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------


def cmd_probe(cfg: PipelineConfig) -> int:
    if cfg.features is None or cfg.labels_csv is None:
        raise ValidationError("probe requires features and labels_csv")
    if os.path.isdir(cfg.features):
        # directory of (H, W, C) feature maps pooled under paired masks
        if cfg.masks_dir is None:
            raise ValidationError("a feature-map directory requires masks_dir")
        stems = _stems(cfg.features)
        if _stems(cfg.masks_dir) != stems:
            raise ValidationError(f"{cfg.masks_dir}: stems do not pair with {cfg.features}")
        rows = []
        for stem in stems:
            fmap = rio.read_array(os.path.join(cfg.features, stem + ".npy")).astype(np.float64)
            mask = rio.read_array(os.path.join(cfg.masks_dir, stem + ".npy")) != 0
            rows.append(probe_mod.pooled_features(fmap, mask, mode=cfg.pool_mode))
        x = np.asarray(rows)
    else:
        x = rio.read_array(cfg.features).astype(np.float64)
        if x.ndim != 2:
            raise ValidationError("features must be a 2D (N, C) array")
    y = _read_labels_csv(cfg.labels_csv)
    if len(y) != x.shape[0]:
        raise ValidationError("label count does not match feature rows")
    result = probe_mod.cross_validate(x, y, k_folds=cfg.k_folds, seed=cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "cv_report.json"), "w", encoding="utf-8") as fp:
        json.dump(
            {
                "best": result.best,
                "best_mean_f1": round(result.best_mean_f1, 6),
                "table": [
                    {"config": c, "mean_f1": round(m, 6), "fold_f1": [round(s, 6) for s in ss]}
                    for c, m, ss in result.table
                ],
            },
            fp,
            indent=2,
            sort_keys=True,
        )
        fp.write("\n")
    if result.best["model"] == "logreg":
        model = probe_mod.fit_logreg(x, y, lam=result.best["lam"])
        probe_mod.save_model(model, os.path.join(cfg.out_dir, "model.json"))
    print(f"probe: best {result.best} mean macro F1 {result.best_mean_f1:.6f}")
    return 0


def _read_labels_csv(path: str) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fp:
        header = fp.readline().strip()
        if header.split(",")[-1] != "label":
            raise FormatError(f"{path}: expected a trailing 'label' column")
        for line in fp:
            line = line.strip()
            if line:
                labels.append(int(line.split(",")[-1]))
    return np.asarray(labels)


# ---------------------------------------------------------------------------
# op: single-operation array-in/array-out calls (used by foreign bindings)
# ---------------------------------------------------------------------------


def cmd_op(cfg: PipelineConfig, name: str, inputs: dict[str, str], params: dict) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = cfg.out_dir
    if name == "distance_transform":
        mask = rio.read_array(inputs["mask"]) != 0
        d = lab_mod.distance_transform(mask, source=params.get("source", "foreground"))
        rio.write_array(d, os.path.join(out, "distance.npy"))
    elif name == "enforce_gap":
        labels = lab_mod.LabelRaster(rio.read_array(inputs["labels"]).astype(np.uint32))
        gapped, edits = lab_mod.enforce_gap(labels, n_gap=int(params.get("n_gap", 7)))
        rio.write_array(gapped.instance_ids, os.path.join(out, "labels_gap.npy"))
        with open(os.path.join(out, "edits.json"), "w", encoding="utf-8") as fp:
            json.dump(edits.to_json(), fp, sort_keys=True)
            fp.write("\n")
    elif name == "weight_map":
        labels = lab_mod.LabelRaster(rio.read_array(inputs["labels"]).astype(np.uint32))
        w = lab_mod.weight_map(
            labels,
            w0=float(params.get("w0", 10.0)),
            sigma=float(params.get("sigma", 5.0)),
            mode=params.get("mode", "additive"),
        )
        rio.write_array(w, os.path.join(out, "weights.npy"))
    elif name == "ordinal_targets":
        labels = lab_mod.LabelRaster(rio.read_array(inputs["labels"]).astype(np.uint32))
        t = lab_mod.ordinal_targets(
            labels, n_lev=int(params.get("n_lev", 2)), n_pix=int(params.get("n_pix", 10))
        )
        rio.write_array(t.masks.astype(np.uint8), os.path.join(out, "levels.npy"))
    elif name == "dow_watershed":
        levels = rio.read_array(inputs["levels"]) != 0
        if levels.ndim == 2:
            levels = levels[None]
        inst = inst_mod.dow_watershed(levels, connectivity=int(params.get("connectivity", 8)))
        rio.write_array(inst.instance_map, os.path.join(out, "instances.npy"))
    elif name == "evaluate":
        pred = _records_from_params(rio.read_array(inputs["pred_map"]), params["pred_records"])
        gt = _records_from_params(rio.read_array(inputs["gt_map"]), params["gt_records"])
        report = met_mod.evaluate(
            pred,
            gt,
            mode=params.get("mode", "multiclass"),
            subset3=tuple(params.get("subset3", met_mod.SUBSET3_DEFAULT)),
            subset5=tuple(params.get("subset5", met_mod.SUBSET5_DEFAULT)),
        )
        rio.write_report(report, os.path.join(out, "report.json"), "json")
    else:
        raise ValidationError(f"unknown op {name!r}")
    print(f"op {name}: ok")
    return 0


def _records_from_params(arr: np.ndarray, records: list[dict]) -> inst_mod.InstanceSet:
    recs = [
        inst_mod.InstanceRecord(
            id=int(r["id"]),
            class_id=r.get("class"),
            confidence=r.get("confidence"),
            pixel_count=int(r.get("pixels", 0)),
        )
        for r in records
    ]
    return inst_mod.InstanceSet(arr.astype(np.uint32), recs)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; flags override it")
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out-dir", dest="out_dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dowseg")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("targets", help="gap-enforced labels, weight maps, level masks")
    _add_common(p)
    p.add_argument("--labels-dir", dest="labels_dir", default=None)
    p.add_argument("--n-gap", dest="n_gap", type=int, default=None)
    p.add_argument("--n-lev", dest="n_lev", type=int, default=None)
    p.add_argument("--n-pix", dest="n_pix", type=int, default=None)
    p.add_argument("--w0", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--weight-mode", dest="weight_mode", default=None)

    p = subs.add_parser("instances", help="watershed instances from level stacks")
    _add_common(p)
    p.add_argument("--levels-dir", dest="levels_dir", default=None)
    p.add_argument("--class-probs-dir", dest="class_probs_dir", default=None)
    p.add_argument("--interior-probs-dir", dest="interior_probs_dir", default=None)
    p.add_argument("--threshold", dest="level_threshold", type=float, default=None)
    p.add_argument("--connectivity", type=int, default=None)

    p = subs.add_parser("eval", help="pixel and object metrics over paired directories")
    _add_common(p)
    p.add_argument("--pred-dir", dest="pred_dir", default=None)
    p.add_argument("--gt-dir", dest="gt_dir", default=None)
    p.add_argument("--mode", default=None, choices=("binary", "multiclass"))

    p = subs.add_parser("split", help="stratified spatial split of a buildings GeoJSON")
    _add_common(p)
    p.add_argument("--buildings", default=None)
    p.add_argument("--cell-size", dest="cell_size", type=float, default=None)
    p.add_argument(
        "--fractions",
        default=None,
        help="train,val,test fractions as three comma-separated numbers",
    )

    p = subs.add_parser("probe", help="cross-validated linear probe on pooled features")
    _add_common(p)
    p.add_argument("--features", default=None, help="N x C npy, or a directory of H x W x C maps")
    p.add_argument("--masks-dir", dest="masks_dir", default=None)
    p.add_argument("--pool-mode", dest="pool_mode", default=None,
                   choices=("upsample", "mask-downsample", "no-mask"))
    p.add_argument("--labels-csv", dest="labels_csv", default=None)
    p.add_argument("--k-folds", dest="k_folds", type=int, default=None)

    p = subs.add_parser("op", help="run a single operation on NPY inputs")
    _add_common(p)
    p.add_argument("name")
    p.add_argument("--in", dest="inputs", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--params", default="{}")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "fractions", None) is not None and isinstance(args.fractions, str):
            parts = [float(v) for v in args.fractions.split(",")]
            if len(parts) != 3:
                raise ValidationError("--fractions needs three comma-separated numbers")
            args.fractions = dict(zip(split_mod.SET_NAMES, parts))
        cfg = _load_config(args)
        if args.command == "targets":
            return cmd_targets(cfg)
        if args.command == "instances":
            return cmd_instances(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "probe":
            return cmd_probe(cfg)
        if args.command == "op":
            inputs = {}
            for spec in args.inputs:
                if "=" not in spec:
                    raise ValidationError(f"--in expects NAME=PATH, got {spec!r}")
                k, v = spec.split("=", 1)
                inputs[k] = v
            try:
                params = json.loads(args.params)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"--params is not valid JSON: {exc}") from exc
            return cmd_op(cfg, args.name, inputs, params)
        raise ValidationError(f"unknown command {args.command!r}")
    except ValidationError as exc:
        _emit_error("ValidationError", exc)
        return 2
    except FormatError as exc:
        _emit_error(type(exc).__name__, exc)
        return 3
    except OSError as exc:
        _emit_error("IOError", exc)
        return 3


def _emit_error(kind: str, exc: Exception) -> None:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
