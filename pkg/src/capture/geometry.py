"""Convex-hull metrics, capture quality index and net mouth area."""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..config import CaptureSettings
from ..errors import ConfigurationError

logger = logging.getLogger(__name__)

# Relative thickness below which a point cloud is treated as flat.
FLATNESS_TOLERANCE = 1e-10


class HullMetrics(NamedTuple):
    volume: float
    surface_area: float
    degenerate: bool


@dataclass(frozen=True)
class TargetGeometry:
    """Debris reference values used by the capture quality index."""

    volume: float
    surface: float
    characteristic_length: float

    def __post_init__(self):
        if min(self.volume, self.surface, self.characteristic_length) <= 0:
            raise ConfigurationError("target geometry values must be positive")

    @classmethod
    def from_settings(cls, settings: CaptureSettings) -> "TargetGeometry":
        return cls(settings.target_volume, settings.target_surface, settings.characteristic_length)


def _plane_basis(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, singular values and right singular vectors of a point cloud."""
    centroid = points.mean(axis=0)
    _, singular, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, singular, vt


def _planar_area(points: np.ndarray) -> float:
    centroid, singular, vt = _plane_basis(points)
    if len(singular) < 2 or singular[1] <= FLATNESS_TOLERANCE * max(singular[0], 1.0):
        return 0.0
    flat = (points - centroid) @ vt[:2].T
    try:
        return float(ConvexHull(flat).volume)
    except QhullError:
        return 0.0


def convex_hull_metrics(points: np.ndarray) -> HullMetrics:
    """
    Volume and surface area of the 3-D convex hull of ``points``.

    Coplanar or collinear input has no volume: it yields volume 0, the
    area of the planar hull, and ``degenerate=True``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got shape {points.shape}")

    if len(points) >= 4:
        _, singular, _ = _plane_basis(points)
        if singular[-1] > FLATNESS_TOLERANCE * max(singular[0], 1.0):
            try:
                hull = ConvexHull(points)
                return HullMetrics(float(hull.volume), float(hull.area), False)
            except QhullError:
                logger.debug("Qhull rejected the point set, treating it as planar")

    if len(points) < 3:
        return HullMetrics(0.0, 0.0, True)
    return HullMetrics(0.0, _planar_area(points), True)


def cqi_from_terms(volume: float, surface_area: float, offset: float, target: TargetGeometry) -> float:
    """Weighted volume, surface and center-offset mismatch (weights 0.1, 0.1, 0.8)."""
    return (
        0.1 * abs(volume - target.volume) / target.volume
        + 0.1 * abs(surface_area - target.surface) / target.surface
        + 0.8 * abs(offset) / target.characteristic_length
    )


def cqi(
    net_points: np.ndarray,
    net_com: np.ndarray,
    debris_com: np.ndarray,
    target: TargetGeometry,
) -> float:
    """
    Capture quality index of the net around the debris; lower is better.

    Args:
        net_points: Positions of every net node and MU
        net_com: Net center of mass
        debris_com: Debris center of mass
        target: Debris reference geometry

    Returns:
        Dimensionless index, computed with zero hull volume for degenerate hulls
    """
    metrics = convex_hull_metrics(net_points)
    if metrics.degenerate:
        logger.warning("Degenerate net hull: CQI computed with zero volume")
    offset = float(np.linalg.norm(np.asarray(net_com) - np.asarray(debris_com)))
    return cqi_from_terms(metrics.volume, metrics.surface_area, offset, target)


def mouth_area(perimeter: np.ndarray) -> float:
    """
    Area enclosed by the ordered perimeter loop, projected on its best-fit plane.

    Raises:
        ValueError: If fewer than 3 points are given
    """
    perimeter = np.asarray(perimeter, dtype=float)
    if len(perimeter) < 3:
        raise ValueError("mouth area needs at least 3 perimeter points")
    centroid, _, vt = _plane_basis(perimeter)
    flat = (perimeter - centroid) @ vt[:2].T
    x, y = flat[:, 0], flat[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
