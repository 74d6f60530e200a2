"""Tests for episode simulation: capture-phase sampling, reduced deployment and nominal runs."""

import time

import numpy as np
import pytest

from src.capture import evaluate_capture
from src.config import CaptureSettings, NetSettings, Settings, SurrogateSettings
from src.dynamics import build_assembly
from src.harness.runner import generate_dataset, simulate_single, train_surrogate
from src.learning.policy import simulate_aimed
from src.models import CaptureMode, Scenario, Variant
from src.simulation import simulate_episode

NEAR_DEBRIS = (0.0, 0.0, -3.5)


@pytest.fixture
def near_settings():
    """Small net with a small debris close enough to fire the trigger at launch."""
    return Settings(
        net=NetSettings(mesh=5, debris_radius=0.3, debris_length=1.0),
        capture=CaptureSettings(settle_time=0.4, cqi_interval=0.25),
    )


def _corner_aiming(z):
    return np.array([[x, y, z] for x, y in ((-3.0, -3.0), (3.0, -3.0), (-3.0, 3.0), (3.0, 3.0))])


def test_settled_sample_off_the_cqi_grid(near_settings):
    """A settle time that is not a multiple of the CQI interval still gets its sample."""
    outcome = simulate_episode(near_settings, NEAR_DEBRIS, _corner_aiming(NEAR_DEBRIS[2]), seed=3)
    log = outcome.capture_log

    assert log.trigger_time == 0.0
    assert [t for t, _ in log.cqi_series] == pytest.approx([0.0, 0.25, 0.4])
    assert log.settled_cqi(0.4) == log.cqi_series[-1][1]
    assert outcome.final_state.time == pytest.approx(0.4)

    metrics = evaluate_capture(log, near_settings.capture)
    assert metrics.settled_cqi == log.cqi_series[-1][1]


def test_surrogate_mode_reports_on_the_full_net():
    """A reduced deployment hands back states with the full net's rows."""
    settings = Settings(
        net=NetSettings(mesh=9, debris_radius=0.3, debris_length=1.0),
        surrogate=SurrogateSettings(deployment_mesh=5),
    )
    outcome = simulate_episode(
        settings, NEAR_DEBRIS, _corner_aiming(NEAR_DEBRIS[2]), seed=3, mode=CaptureMode.SURROGATE
    )
    full, stowed = build_assembly(settings.net, settings.contact, settings.capture, NEAR_DEBRIS)

    assert outcome.triggered
    assert outcome.assembly.mesh == 9
    assert outcome.trigger_state.body_count == full.body_count
    assert np.allclose(outcome.trigger_state.positions, stowed.positions, atol=1e-9)
    assert outcome.capture_log.max_mouth_area == pytest.approx(full.max_mouth_area)


def test_surrogate_mode_without_reduction_uses_the_full_net():
    """No deployment mesh keeps the configured net."""
    settings = Settings(
        net=NetSettings(mesh=5, debris_radius=0.3, debris_length=1.0),
        surrogate=SurrogateSettings(deployment_mesh=None),
    )
    outcome = simulate_episode(
        settings, NEAR_DEBRIS, _corner_aiming(NEAR_DEBRIS[2]), seed=3, mode=CaptureMode.SURROGATE
    )
    assert outcome.assembly.mesh == 5
    assert outcome.final_state.time == 0.0


@pytest.mark.slow
@pytest.mark.parametrize("variant", [Variant.FOUR_MU, Variant.EIGHT_MU])
def test_nominal_capture_succeeds(variant):
    """Nominal aiming at a centred debris captures it."""
    settings = Settings(net=NetSettings(mesh=7))
    record, outcome = simulate_single(settings, variant, seed=7, position=(0.0, 0.0, -50.0))

    assert outcome.triggered
    assert record.metrics.success, record.metrics.failure_reason


@pytest.mark.slow
def test_eight_mu_tracking_and_approach():
    """MUs hold their references mid-flight and the net closes on the debris."""
    settings = Settings(net=NetSettings(mesh=7)).with_variant(Variant.EIGHT_MU)
    scenario = Scenario(x=0.0, y=0.0, z=-50.0, seed=11, variant=Variant.EIGHT_MU)
    _, outcome = simulate_aimed(settings, scenario, np.zeros((8, 2)), CaptureMode.SURROGATE, record=True)

    cruise = [max(errors) for t, errors in outcome.tracking_log if 10.0 <= t <= 20.0]
    assert cruise
    assert max(cruise) < 0.3

    separations = [row["separation"] for row in outcome.trajectory if row["time"] % 1.0 < 1e-9]
    assert all(b < a for a, b in zip(separations, separations[1:]))


@pytest.mark.slow
def test_reduced_deployment_is_much_faster():
    """Surrogate mode on the 23x23 net costs at most an eighth of a full capture."""
    settings = Settings(net=NetSettings(mesh=23))
    scenario = Scenario(x=0.0, y=0.0, z=-50.0, seed=5, variant=Variant.FOUR_MU)
    action = np.zeros((4, 2))

    started = time.perf_counter()
    simulate_aimed(settings, scenario, action, CaptureMode.FULL)
    full = time.perf_counter() - started

    started = time.perf_counter()
    _, outcome = simulate_aimed(settings, scenario, action, CaptureMode.SURROGATE)
    surrogate = time.perf_counter() - started

    assert outcome.triggered
    assert surrogate <= full / 8


@pytest.mark.long
def test_surrogate_accuracy_on_held_out_episodes():
    """A surrogate trained on reduced deployments classifies held-out captures."""
    settings = Settings(net=NetSettings(mesh=9))
    dataset = generate_dataset(settings, Variant.FOUR_MU, episodes=1200, root_seed=2)
    model = train_surrogate(settings, dataset["features"], dataset["labels"], Variant.FOUR_MU)

    assert model.metadata["validation"]["accuracy"] >= 0.9
