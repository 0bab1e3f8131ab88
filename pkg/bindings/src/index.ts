/**
 * Array-in/array-out bindings to the segmentation toolkit.
 *
 * Each function mirrors one toolkit operation bit for bit: inputs cross the
 * boundary as NPY files, the toolkit CLI computes, results come back as
 * typed arrays. All calls are independent and run off the Node event loop.
 */

import { ValidationError } from "./errors.js";
import { BoundArray, checkBound } from "./npy.js";
import { runOp } from "./runner.js";

export { FormatError, UnsupportedError, ValidationError } from "./errors.js";
export { BoundArray, decodeNpy, encodeNpy } from "./npy.js";

function require2d(a: BoundArray, what: string): void {
  checkBound(a);
  if (a.shape.length !== 2) {
    throw new ValidationError(`${what} must be 2D, got shape [${a.shape}]`);
  }
}

/** Exact Euclidean distance to the nearest source pixel (float32). */
export async function distanceTransform(
  mask: BoundArray,
  source: "foreground" | "background" = "foreground",
): Promise<BoundArray> {
  require2d(mask, "mask");
  const res = await runOp("distance_transform", { mask }, { source }, ["distance.npy"]);
  return res.arrays["distance.npy"];
}

export interface GapResult {
  labels: BoundArray;
  removedInstances: number[];
  relabeledPixels: number;
}

/** Relabel instance pixels closer than nGap to another instance. */
export async function enforceGap(labels: BoundArray, nGap = 7): Promise<GapResult> {
  require2d(labels, "labels");
  const res = await runOp(
    "enforce_gap",
    { labels },
    { n_gap: nGap },
    ["labels_gap.npy"],
    ["edits.json"],
  );
  const edits = JSON.parse(res.texts["edits.json"]);
  return {
    labels: res.arrays["labels_gap.npy"],
    removedInstances: edits.removed_instances,
    relabeledPixels: edits.relabeled_pixels,
  };
}

/** Boundary-emphasis loss weights (float32). */
export async function weightMap(
  labels: BoundArray,
  opts: { w0?: number; sigma?: number; mode?: "additive" | "paper-literal" } = {},
): Promise<BoundArray> {
  require2d(labels, "labels");
  const params = { w0: opts.w0 ?? 10.0, sigma: opts.sigma ?? 5.0, mode: opts.mode ?? "additive" };
  const res = await runOp("weight_map", { labels }, params, ["weights.npy"]);
  return res.arrays["weights.npy"];
}

/** Nested ordinal level masks as a (nLev, H, W) uint8 stack. */
export async function ordinalTargets(
  labels: BoundArray,
  nLev = 2,
  nPix = 10,
): Promise<BoundArray> {
  require2d(labels, "labels");
  const res = await runOp(
    "ordinal_targets",
    { labels },
    { n_lev: nLev, n_pix: nPix },
    ["levels.npy"],
  );
  return res.arrays["levels.npy"];
}

/** Watershed instance separation over a nested level stack. */
export async function dowWatershed(levels: BoundArray, connectivity: 4 | 8 = 8): Promise<BoundArray> {
  checkBound(levels);
  if (levels.shape.length !== 3) {
    throw new ValidationError(`level stack must be 3D, got shape [${levels.shape}]`);
  }
  const res = await runOp("dow_watershed", { levels }, { connectivity }, ["instances.npy"]);
  return res.arrays["instances.npy"];
}

export interface InstanceInfo {
  id: number;
  class?: number | null;
  confidence?: number | null;
  pixels?: number;
}

export interface EvaluateOptions {
  mode?: "binary" | "multiclass";
  subset3?: number[];
  subset5?: number[];
}

export interface Report {
  iou_binary: number | null;
  miou3: number | null;
  miou5: number | null;
  ap50: number | null;
  map50_3: number | null;
  map50_5: number | null;
  ap50_95: number | null;
  tps: number | null;
  per_class_iou: Record<string, number | null>;
  per_class_ap: Record<string, number | null>;
  /** Verbatim report.json text, for bit-exact comparisons. */
  raw: string;
}

/** Pixel- and object-level metrics for one scene pair. */
export async function evaluate(
  predMap: BoundArray,
  predRecords: InstanceInfo[],
  gtMap: BoundArray,
  gtRecords: InstanceInfo[],
  options: EvaluateOptions = {},
): Promise<Report> {
  require2d(predMap, "predMap");
  require2d(gtMap, "gtMap");
  const params: Record<string, unknown> = {
    mode: options.mode ?? "multiclass",
    pred_records: predRecords,
    gt_records: gtRecords,
  };
  if (options.subset3) params.subset3 = options.subset3;
  if (options.subset5) params.subset5 = options.subset5;
  const res = await runOp(
    "evaluate",
    { pred_map: predMap, gt_map: gtMap },
    params,
    [],
    ["report.json"],
  );
  const raw = res.texts["report.json"];
  return { ...JSON.parse(raw), raw };
}
