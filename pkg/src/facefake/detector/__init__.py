from .cascade import (
    CascadeConfig,
    CascadeTrace,
    Detection,
    StageOutput,
    StageScorer,
    detect_faces,
    detections_from_json,
    detections_to_json,
    load_detections,
    per_patch,
    save_detections,
)
from .geometry import (
    DegenerateBox,
    EmptyPyramid,
    NMSMode,
    PyramidSpec,
    apply_box_regression,
    build_pyramid,
    dynamic_resize,
    iou,
    nms,
    square_pad,
)
from .scorers import BlobScorer, blob_scorers
