"""Episode simulation: deployment, closing trigger and the capture phase."""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .capture import (
    CaptureLog,
    ClosingTrigger,
    DockingClosing,
    TargetGeometry,
    WinchClosing,
    com_separation,
    cqi,
    docking_closing_positions,
    locked_pairs,
    mouth_area,
)
from .config import Settings
from .control import DeploymentController, deployment_controller
from .dynamics import (
    NetAssembly,
    SystemState,
    build_assembly,
    prolong_state,
    reduced_mesh,
    reduced_settings,
    step,
)
from .dynamics.integrator import ForceContribution
from .errors import ConfigurationError, IntegrationDiverged
from .models import CaptureMode, Variant

logger = logging.getLogger(__name__)


@dataclass
class EpisodeOutcome:
    """Everything one simulated episode produces."""

    assembly: NetAssembly
    capture_log: CaptureLog
    final_state: SystemState
    snapshots: list[SystemState] = field(default_factory=list)
    trajectory: list[dict] = field(default_factory=list)
    control_log: list[dict] = field(default_factory=list)
    tracking_log: list[tuple[float, list[float]]] = field(default_factory=list)
    sensor_faults: int = 0
    divergence: Optional[str] = None

    @property
    def triggered(self) -> bool:
        return self.capture_log.trigger_time is not None

    @property
    def trigger_state(self) -> Optional[SystemState]:
        """State at the closing trigger (last snapshot of the window)."""
        return self.snapshots[-1] if self.triggered and self.snapshots else None


def _steps_per(interval: float, dt: float, name: str) -> int:
    count = round(interval / dt)
    if count < 1 or abs(count * dt - interval) > 1e-9 * max(1.0, interval):
        raise ConfigurationError(f"{name} {interval} s is not a whole number of {dt} s steps")
    return count


def _trajectory_row(
    state: SystemState,
    assembly: NetAssembly,
    controller: DeploymentController,
) -> dict:
    return {
        "time": round(state.time, 9),
        "phase": controller.phase.value,
        "separation": com_separation(state, assembly),
        "net_com": assembly.net_com(state).tolist(),
        "debris_position": state.positions[assembly.debris_index].tolist(),
        "chaser_position": state.positions[assembly.chaser_index].tolist(),
        "mu_positions": state.positions[assembly.mu_indices].tolist(),
        "winch_mode": state.winch_mode.value,
        "deployed_tether_length": state.deployed_tether_length,
        "degenerate_links": state.degenerate_links,
    }


def _cqi_sample(state: SystemState, assembly: NetAssembly, target: TargetGeometry) -> float:
    rows = np.concatenate([np.arange(assembly.node_count), assembly.mu_indices])
    return cqi(
        state.positions[rows],
        assembly.net_com(state),
        state.positions[assembly.debris_index],
        target,
    )


def simulate_episode(
    settings: Settings,
    debris_position: Sequence[float],
    aiming_points: np.ndarray,
    seed: int,
    mode: CaptureMode = CaptureMode.FULL,
    record: bool = False,
    window: int = 1,
    raise_on_divergence: bool = False,
) -> EpisodeOutcome:
    """
    Simulate one capture episode.

    The MUs fly the net from the stowed state toward their aiming points.
    The closing trigger is checked at every sensor tick. In surrogate mode
    the episode stops at the trigger; in full mode the winch locks, the
    closing mechanism runs and the episode ends ``settle_time`` later with
    the settled CQI and locked pairs.

    Args:
        settings: Toolkit settings
        debris_position: Debris center of mass at launch (m)
        aiming_points: End-of-deployment target per MU, shape (mu_count, 3)
        seed: Sensor-noise seed
        mode: Surrogate (stop at trigger) or full capture
        record: Keep trajectory and control logs
        window: Sensor-tick snapshots kept up to the trigger
        raise_on_divergence: Re-raise integration divergence instead of
            returning a failed episode

    Returns:
        Episode outcome with its capture log
    """
    net, capture, harness = settings.net, settings.capture, settings.harness
    dt = net.dt
    assembly, state = build_assembly(net, settings.contact, capture, tuple(debris_position))
    full_assembly = assembly
    coarse = reduced_mesh(net.mesh, settings.surrogate.deployment_mesh) if mode == CaptureMode.SURROGATE else None
    if coarse is not None:
        # Deployment only; the closing mechanisms never run on the reduced net.
        assembly, state = build_assembly(
            reduced_settings(net, coarse), settings.contact, capture, tuple(debris_position), closing=False
        )
        logger.info(f"Deploying on a reduced {coarse}x{coarse} net for a {net.mesh}x{net.mesh} net")
    target = TargetGeometry.from_settings(capture)
    rng = np.random.default_rng(seed)
    controller = deployment_controller(
        assembly, aiming_points, settings.controller, state, rng, record=record
    )
    trigger = ClosingTrigger(assembly, capture.trigger_distance)

    sensor_every = _steps_per(1.0 / settings.controller.sensor_rate, dt, "sensor period")
    log_every = _steps_per(harness.log_interval, dt, "log_interval")
    cqi_every = _steps_per(capture.cqi_interval, dt, "cqi_interval")
    settle_steps = _steps_per(capture.settle_time, dt, "settle_time")
    timeout_steps = round(capture.deploy_timeout / dt)

    log = CaptureLog(variant=assembly.variant, max_mouth_area=full_assembly.max_mouth_area)
    snapshots: deque[SystemState] = deque(maxlen=window)
    trajectory: list[dict] = []
    extra: list[ForceContribution] = []
    closer: Optional[Union[WinchClosing, DockingClosing]] = None
    trigger_step: Optional[int] = None
    divergence: Optional[str] = None

    logger.info(
        f"Episode start: {assembly.variant.value}, debris at {tuple(debris_position)}, "
        f"seed {seed}, mode {mode.value}"
    )

    k = 0
    try:
        while True:
            if record and k % log_every == 0:
                trajectory.append(_trajectory_row(state, assembly, controller))

            if trigger_step is None and k % sensor_every == 0:
                snapshots.append(state.copy())
                if trigger.update(state):
                    trigger_step = k
                    log.trigger_time = state.time
                    log.mouth_area_at_trigger = mouth_area(state.positions[assembly.perimeter_loop])
                    state = state.lock_winch()
                    if mode == CaptureMode.SURROGATE:
                        break
                    if assembly.variant == Variant.FOUR_MU:
                        controller.deactivate(state.time)
                        closer = WinchClosing.start(assembly, capture, state)
                        extra.append(closer)
                    else:
                        approach = state.positions[assembly.debris_index] - state.positions[assembly.chaser_index]
                        approach /= np.linalg.norm(approach)
                        closing = docking_closing_positions(state, assembly, capture, approach)
                        controller.retarget(state, closing, capture.docking_duration)
                        closer = DockingClosing(assembly, capture)
                        extra.append(closer)
                elif k >= timeout_steps:
                    logger.info(f"No closing trigger within {capture.deploy_timeout} s")
                    break

            since = None if trigger_step is None else k - trigger_step
            if since is not None and (since % cqi_every == 0 or since == settle_steps):
                log.cqi_series.append((round(state.time, 9), _cqi_sample(state, assembly, target)))
                if since == settle_steps:
                    log.locked_pairs = locked_pairs(state, assembly, capture.lock_distance)
                    break

            thrust = controller(state)
            state = step(state, assembly, thrust, dt, extra)
            if closer is not None:
                state = closer.engage(state)
            k += 1
    except IntegrationDiverged as e:
        if raise_on_divergence:
            raise
        logger.warning(f"Episode diverged: {e}")
        log.diverged = True
        divergence = str(e)

    log.fuel_per_mu = controller.fuel_per_mu
    if record and (not trajectory or trajectory[-1]["time"] != round(state.time, 9)):
        trajectory.append(_trajectory_row(state, assembly, controller))
    if assembly is not full_assembly:
        snapshots = deque((prolong_state(s, assembly, full_assembly) for s in snapshots), maxlen=window)
        state = prolong_state(state, assembly, full_assembly)

    logger.info(
        f"Episode finished at t={state.time:.3f} s: trigger={log.trigger_time}, "
        f"locked pairs={log.locked_pairs}, fuel={sum(log.fuel_per_mu):.5f} kg"
    )
    return EpisodeOutcome(
        assembly=full_assembly,
        capture_log=log,
        final_state=state,
        snapshots=list(snapshots),
        trajectory=trajectory,
        control_log=controller.control_log,
        tracking_log=controller.tracking_log,
        sensor_faults=controller.sensor_faults,
        divergence=divergence,
    )
