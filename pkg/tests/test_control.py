"""Tests for MU guidance, PID thrust and fuel accounting."""

import numpy as np
import pytest

from src.config import ControllerSettings, NetSettings
from src.control import (
    ControlPhase,
    Measurement,
    MUControllerState,
    deployment_controller,
    desired_position,
    fuel_increment,
    pid_thrust,
    sense,
)
from src.dynamics import build_assembly
from src.errors import ConfigurationError


@pytest.fixture
def config():
    """Default controller settings."""
    return ControllerSettings()


@pytest.fixture
def small_net():
    """A 5x5 four-MU net."""
    return build_assembly(NetSettings(mesh=5))


def test_desired_position_endpoints():
    """Reference starts at r0, ends at r_final and holds there."""
    r0, rf = np.zeros(3), np.array([10.0, -20.0, 4.0])
    assert np.allclose(desired_position(0.0, r0, rf, 25.0), r0)
    assert np.allclose(desired_position(25.0, r0, rf, 25.0), rf)
    assert np.allclose(desired_position(40.0, r0, rf, 25.0), rf)
    assert np.allclose(desired_position(12.5, r0, rf, 25.0), [5.0, -10.0, 2.0])


@pytest.mark.parametrize("t_final", [0.0, -1.0])
def test_desired_position_rejects_bad_duration(t_final):
    """Non-positive deployment time is a configuration error."""
    with pytest.raises(ConfigurationError):
        desired_position(1.0, np.zeros(3), np.ones(3), t_final)


def test_sense_without_noise(config):
    """Zero noise bounds give the true state back."""
    quiet = config.model_copy(update={"pos_noise_3sigma": 0.0, "vel_noise_3sigma": 0.0})
    truth = (np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))
    measured = sense(truth, np.random.default_rng(0), quiet)
    assert np.array_equal(measured.position, truth[0])
    assert np.array_equal(measured.velocity, truth[1])


def test_sense_noise_statistics(config):
    """Per-axis position noise has sigma = bound / 3."""
    rng = np.random.default_rng(7)
    truth = (np.zeros(3), np.zeros(3))
    samples = np.array([sense(truth, rng, config).position for _ in range(20000)])
    assert samples.std(axis=0) == pytest.approx(np.full(3, 0.1 / 3.0), rel=0.05)


def test_sense_deterministic(config):
    """The same seed produces the same noise sequence."""
    truth = (np.zeros(3), np.zeros(3))
    a, b = np.random.default_rng(11), np.random.default_rng(11)
    for _ in range(5):
        assert np.array_equal(sense(truth, a, config).position, sense(truth, b, config).position)


def test_pid_zero_input(config):
    """No error, velocity or integral means no thrust."""
    thrust = pid_thrust(MUControllerState(), Measurement(np.zeros(3), np.zeros(3)), np.zeros(3), 0.05, config)
    assert np.allclose(thrust, 0.0)


def test_pid_saturates(config):
    """10 N demanded on x is clamped to 5.1 N."""
    controller = MUControllerState()
    thrust = pid_thrust(controller, Measurement(np.zeros(3), np.zeros(3)), np.array([1.0, 0.0, 0.0]), 0.05, config)
    assert np.allclose(thrust, [5.1, 0.0, 0.0])
    assert np.allclose(controller.integral, [0.05, 0.0, 0.0])


def test_pid_unsaturated_with_damping(config):
    """kp 10 on -0.2 m and kd 6 on 0.5 m/s give -5 N on z."""
    measured = Measurement(np.zeros(3), np.array([0.0, 0.0, 0.5]))
    thrust = pid_thrust(MUControllerState(), measured, np.array([0.0, 0.0, -0.2]), 0.05, config)
    assert np.allclose(thrust, [0.0, 0.0, -5.0])


def test_pid_uses_prior_integral(config):
    """The integral term comes from earlier ticks, not the current one."""
    controller = MUControllerState(integral=np.array([0.1, 0.0, 0.0]))
    thrust = pid_thrust(controller, Measurement(np.zeros(3), np.zeros(3)), np.zeros(3), 0.05, config)
    assert np.allclose(thrust, [0.6, 0.0, 0.0])


def test_pid_sensor_fault(config):
    """A non-finite measurement gives zero thrust and counts a fault."""
    controller = MUControllerState()
    measured = Measurement(np.array([np.nan, 0.0, 0.0]), np.zeros(3))
    thrust = pid_thrust(controller, measured, np.ones(3), 0.05, config)
    assert np.allclose(thrust, 0.0)
    assert controller.sensor_faults == 1
    assert controller.fuel_used == 0.0


def test_pid_inactive(config):
    """A deactivated controller never fires."""
    controller = MUControllerState(active=False)
    thrust = pid_thrust(controller, Measurement(np.zeros(3), np.zeros(3)), np.ones(3), 0.05, config)
    assert np.allclose(thrust, 0.0)


def test_pid_point_mass_converges():
    """Noise-free PID at 20 Hz settles a free 2.5 kg MU onto a fixed target within 1 cm by 20 s."""
    config = ControllerSettings(pos_noise_3sigma=0.0, vel_noise_3sigma=0.0)
    controller = MUControllerState()
    target = np.array([0.5, -0.3, 0.2])
    mass, dt, hold = 2.5, 1e-3, 50
    position, velocity = np.zeros(3), np.zeros(3)
    thrust = np.zeros(3)
    for k in range(20_000):
        if k % hold == 0:
            thrust = pid_thrust(controller, Measurement(position.copy(), velocity.copy()), target, hold * dt, config)
        velocity = velocity + thrust / mass * dt
        position = position + velocity * dt
    assert np.linalg.norm(position - target) < 1e-2
    assert np.linalg.norm(velocity) < 1e-2


def test_fuel_constant_saturated_thrust():
    """5.1 N for 10 s at Isp 60 s uses about 0.0866 kg."""
    used = fuel_increment(np.array([5.1, 0.0, 0.0]), 10.0, 60.0, 9.81)
    assert used == pytest.approx(5.1 * 10.0 / (60.0 * 9.81), rel=1e-9)


def test_fuel_vector_magnitude():
    """(3, 4, 0) N for 1 s burns 5 / (9.81 * 60) kg."""
    assert fuel_increment(np.array([3.0, 4.0, 0.0]), 1.0, 60.0, 9.81) == pytest.approx(8.4947e-3, rel=1e-4)
    assert fuel_increment(np.zeros(3), 1.0, 60.0, 9.81) == 0.0


def test_fuel_accumulates_over_ticks(config):
    """Fuel is charged for each held command."""
    controller = MUControllerState()
    for _ in range(200):
        pid_thrust(controller, Measurement(np.zeros(3), np.zeros(3)), np.array([1.0, 0.0, 0.0]), 0.05, config)
    assert controller.fuel_used == pytest.approx(5.1 * 10.0 / (60.0 * 9.81), rel=1e-9)


def test_controller_idle_before_activation(small_net, config):
    """No thrust before the activation time."""
    assembly, state = small_net
    late = config.model_copy(update={"activation_time": 1.0})
    targets = state.positions[assembly.mu_indices] + np.array([0.0, 0.0, -10.0])
    controller = deployment_controller(assembly, targets, late, state, np.random.default_rng(0))
    assert np.allclose(controller(state), 0.0)


def test_controller_zero_order_hold(small_net, config):
    """Thrust is held between command ticks."""
    assembly, state = small_net
    targets = state.positions[assembly.mu_indices] + np.array([0.0, 0.0, -10.0])
    controller = deployment_controller(assembly, targets, config, state, np.random.default_rng(0))
    first = controller(state)
    later = state.copy()
    later.time = 0.02
    assert np.array_equal(controller(later), first)
    later.time = 0.05
    controller(later)
    assert controller._command_tick == 1
    assert len(controller.tracking_log) == 2


def test_controller_deactivate(small_net, config):
    """After deactivation every MU thrust is identically zero."""
    assembly, state = small_net
    targets = state.positions[assembly.mu_indices] + np.array([0.0, 0.0, -10.0])
    controller = deployment_controller(assembly, targets, config, state, np.random.default_rng(0))
    assert np.abs(controller(state)).sum() > 0
    controller.deactivate(0.0)
    later = state.copy()
    later.time = 1.0
    assert controller.phase == ControlPhase.OFF
    assert np.array_equal(controller(later), np.zeros((4, 3)))


def test_controller_retarget(small_net, config):
    """Retargeting restarts the reference from the current positions."""
    assembly, state = small_net
    targets = state.positions[assembly.mu_indices] + np.array([0.0, 0.0, -10.0])
    controller = deployment_controller(assembly, targets, config, state, np.random.default_rng(0))
    controller.controllers[0].integral = np.ones(3)
    later = state.copy()
    later.time = 3.0
    closing = np.zeros((4, 3))
    controller.retarget(later, closing, 5.0)
    assert controller.phase == ControlPhase.DOCKING
    assert np.allclose(controller.desired(3.0), later.positions[assembly.mu_indices])
    assert np.allclose(controller.desired(8.0), closing)
    assert np.allclose(controller.controllers[0].integral, 0.0)


def test_controller_rejects_wrong_target_count(small_net, config):
    """One aiming point per MU."""
    assembly, state = small_net
    with pytest.raises(ValueError):
        deployment_controller(assembly, np.zeros((3, 3)), config, state)
