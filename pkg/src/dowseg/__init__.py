"""Ordinal-watershed segmentation toolkit.

Training-target engineering (distance transforms, inter-instance gap
enforcement, boundary-emphasis weight maps, nested level masks), watershed
instance extraction with class and confidence assignment, IoU/AP evaluation,
stratified spatial dataset splitting, and a masked-pooling linear probe.
"""

from .errors import FormatError, UnsupportedError, ValidationError
from .instances import (
    InstanceRecord,
    InstanceSet,
    ProbabilityStack,
    assign_class_and_confidence,
    connected_components,
    dow_watershed,
    elevation_map,
    polygonize,
    score_binary_confidence,
    threshold_levels,
)
from .io import (
    Georef,
    PolygonRecord,
    PolygonSet,
    read_array,
    read_geojson,
    write_array,
    write_geojson,
    write_report,
)
from .labels import (
    GapEdits,
    LabelRaster,
    OrdinalTargets,
    distance_transform,
    enforce_gap,
    gap_weight,
    ordinal_targets,
    two_nearest_segment_distances,
    weight_map,
)
from .metrics import (
    MatchResult,
    MetricsReport,
    ap_range,
    average_precision,
    class_ious,
    count_tps,
    evaluate,
    match_instances,
    pixel_iou,
)
from .probe import (
    CVResult,
    ProbeModel,
    bilinear_upsample,
    cross_validate,
    fit_logreg,
    knn_predict,
    macro_f1,
    masked_pool,
    pooled_features,
    predict,
    predict_proba,
)
from .split import (
    BuildingRecord,
    GridSpec,
    GridSplit,
    build_grid,
    cell_class_counts,
    leakage_masks,
    partition_cells,
)

__version__ = "0.1.0"
