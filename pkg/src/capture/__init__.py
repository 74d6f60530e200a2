"""Capture scoring, closing trigger and closing mechanisms."""

from .closing import (
    ClosingTrigger,
    DockingClosing,
    WinchClosing,
    closing_trigger,
    com_separation,
    debris_half_extent,
    docking_closing_positions,
    locked_pairs,
)
from .evaluation import CaptureLog, capture_success, evaluate_capture
from .geometry import (
    HullMetrics,
    TargetGeometry,
    convex_hull_metrics,
    cqi,
    cqi_from_terms,
    mouth_area,
)

__all__ = [
    "CaptureLog",
    "ClosingTrigger",
    "DockingClosing",
    "HullMetrics",
    "TargetGeometry",
    "WinchClosing",
    "capture_success",
    "closing_trigger",
    "com_separation",
    "debris_half_extent",
    "convex_hull_metrics",
    "cqi",
    "cqi_from_terms",
    "docking_closing_positions",
    "evaluate_capture",
    "locked_pairs",
    "mouth_area",
]
