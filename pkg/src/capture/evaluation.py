"""Capture scoring of a finished episode."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from ..config import CaptureSettings
from ..models import CaptureMetrics, FailureReason, Variant

logger = logging.getLogger(__name__)

SETTLED_TIME_TOLERANCE = 1e-6

# Closing-loop neighbours of the 4-MU net and docking joints of the 8-MU net.
LOCKED_PAIR_LIMIT = {Variant.FOUR_MU: 12, Variant.EIGHT_MU: 8}


@dataclass
class CaptureLog:
    """What an episode simulation reports to the capture evaluator."""

    variant: Variant
    max_mouth_area: float
    cqi_series: list[tuple[float, float]] = field(default_factory=list)
    trigger_time: Optional[float] = None
    locked_pairs: int = 0
    mouth_area_at_trigger: float = 0.0
    fuel_per_mu: list[float] = field(default_factory=list)
    diverged: bool = False

    def settled_cqi(self, settle_time: float) -> float:
        """CQI sample taken exactly ``settle_time`` after the trigger."""
        if self.trigger_time is None:
            return math.inf
        target = self.trigger_time + settle_time
        for t, value in self.cqi_series:
            if abs(t - target) <= SETTLED_TIME_TOLERANCE:
                return value
        raise ValueError(f"no CQI sample at t={target:.3f} s; episode ended too early")


def capture_success(
    settled_cqi: float,
    locked: int,
    variant: Variant,
    settings: CaptureSettings,
) -> tuple[bool, Optional[FailureReason]]:
    """
    Success needs a settled CQI within the threshold and enough locked pairs.

    Raises:
        ValueError: If ``locked`` is negative or more than the variant can lock
    """
    limit = LOCKED_PAIR_LIMIT[variant]
    if not 0 <= locked <= limit:
        raise ValueError(f"{variant.value} net has at most {limit} locked pairs, got {locked}")
    cqi_ok = settled_cqi <= settings.cqi_threshold
    locks_ok = locked >= settings.locked_threshold(variant)
    if cqi_ok and locks_ok:
        return True, None
    if not cqi_ok and not locks_ok:
        return False, FailureReason.CQI_AND_LOCKED_PAIRS
    return False, FailureReason.CQI if not cqi_ok else FailureReason.LOCKED_PAIRS


def evaluate_capture(log: CaptureLog, settings: CaptureSettings) -> CaptureMetrics:
    """
    Score one episode.

    Args:
        log: Capture log of a simulation run through trigger + settle time
        settings: Capture thresholds

    Returns:
        Capture metrics; episodes that never triggered or diverged fail with
        an infinite settled CQI and zero locked pairs

    Raises:
        ValueError: If a triggered episode has no settled CQI sample or
            reports more locked pairs than its variant can lock
    """
    if log.diverged or log.trigger_time is None:
        reason = FailureReason.DIVERGED if log.diverged else FailureReason.NO_TRIGGER
        logger.info(f"Capture failed: {reason.value}")
        return CaptureMetrics(
            cqi_series=log.cqi_series,
            settled_cqi=math.inf,
            locked_pairs=0,
            mouth_area_at_trigger=0.0,
            max_mouth_area=log.max_mouth_area,
            fuel_per_mu=log.fuel_per_mu,
            success=False,
            trigger_time=log.trigger_time,
            failure_reason=reason,
        )

    settled = log.settled_cqi(settings.settle_time)
    success, reason = capture_success(settled, log.locked_pairs, log.variant, settings)
    return CaptureMetrics(
        cqi_series=log.cqi_series,
        settled_cqi=settled,
        locked_pairs=log.locked_pairs,
        mouth_area_at_trigger=log.mouth_area_at_trigger,
        max_mouth_area=log.max_mouth_area,
        fuel_per_mu=log.fuel_per_mu,
        success=success,
        trigger_time=log.trigger_time,
        failure_reason=reason,
    )
