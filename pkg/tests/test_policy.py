"""Tests for aiming geometry, reward, scenarios and PPO training."""

import math

import numpy as np
import pytest
import torch

from src.config import PolicySettings, Settings
from src.errors import ConfigurationError, ScenarioError
from src.learning.policy import (
    PolicyModel,
    RewardConfig,
    Transition,
    apply_action,
    clipped_objective,
    load_checkpoint,
    make_optimizer,
    nominal_aiming,
    ppo_update,
    quantize,
    reward,
    reward_terms,
    sample_scenario,
    save_checkpoint,
    to_action,
    training_loop,
)
from src.models import Variant


@pytest.fixture
def origin_settings():
    """Policy settings whose scenario box includes the origin."""
    return PolicySettings(z_bounds=(-60.0, 0.0))


@pytest.fixture
def reward_config():
    """4-MU reward constants with a 0.1 kg fuel reference."""
    return RewardConfig(fuel_weight=1.0, fuel_reference=0.1, max_mouth_area=432.64, locked_threshold=8)


def test_nominal_four_mu(origin_settings):
    """Corners of a 24 m square around the debris."""
    points = nominal_aiming((0.0, 0.0, 0.0), Variant.FOUR_MU, origin_settings)
    assert points.shape == (4, 3)
    assert np.allclose(points[0], [-12.0, -12.0, 0.0])
    assert np.allclose(points[3], [12.0, 12.0, 0.0])


def test_nominal_eight_mu(origin_settings):
    """Side midpoints follow the corners."""
    points = nominal_aiming((0.0, 0.0, 0.0), Variant.EIGHT_MU, origin_settings)
    assert points.shape == (8, 3)
    assert np.allclose(points[5], [11.70, 0.0, 0.0])
    assert np.allclose(points[7], [0.0, 11.71, 0.0])


def test_nominal_translates_with_debris():
    """Every point moves with the debris; z equals the debris z."""
    base = nominal_aiming((0.0, 0.0, -50.0), Variant.EIGHT_MU)
    moved = nominal_aiming((2.0, -3.0, -50.0), Variant.EIGHT_MU)
    assert np.allclose(moved - base, [2.0, -3.0, 0.0])
    assert np.allclose(moved[:, 2], -50.0)


def test_raw_nominal_table(origin_settings):
    """The printed table duplicates MU3 and MU5 coordinates."""
    raw = origin_settings.model_copy(update={"raw_nominal_table": True})
    points = nominal_aiming((0.0, 0.0, 0.0), Variant.EIGHT_MU, raw)
    assert np.allclose(points[3], points[2])
    assert np.allclose(points[7], points[4])


def test_nominal_out_of_bounds():
    """Debris outside the scenario box is refused."""
    with pytest.raises(ScenarioError):
        nominal_aiming((10.0, 0.0, -50.0), Variant.FOUR_MU)


def test_apply_action(origin_settings):
    """MU1 offset by (5, -5) aims at (-7, -17, 0)."""
    nominal = nominal_aiming((0.0, 0.0, 0.0), Variant.FOUR_MU, origin_settings)
    action = np.zeros((4, 2))
    assert np.array_equal(apply_action(nominal, action), nominal)
    action[0] = [5.0, -5.0]
    points = apply_action(nominal, action)
    assert np.allclose(points[0], [-7.0, -17.0, 0.0])
    assert np.allclose(points[1:], nominal[1:])


def test_apply_action_clips_or_rejects(origin_settings, caplog):
    """Out-of-bound offsets are clipped in training and rejected when strict."""
    nominal = nominal_aiming((0.0, 0.0, 0.0), Variant.FOUR_MU, origin_settings)
    action = np.zeros((4, 2))
    action[2] = [6.0, -7.5]
    points = apply_action(nominal, action)
    assert np.allclose(points[2], nominal[2] + [5.0, -5.0, 0.0])
    assert "Clipping" in caplog.text
    with pytest.raises(ScenarioError):
        apply_action(nominal, action, strict=True)
    with pytest.raises(ScenarioError):
        apply_action(nominal, action, PolicySettings(clip_actions=False))


def test_to_action_legal():
    """Raw samples become grid actions inside the bound."""
    settings = PolicySettings()
    raw = np.array([7.3, -0.04, 1.26, -9.9, 4.95, 0.149, -2.35, 3.0])
    action = to_action(raw, settings)
    assert action.shape == (4, 2)
    assert np.abs(action).max() <= settings.action_bound
    assert np.allclose(action * 10, np.round(action * 10))
    assert action[0, 0] == 5.0


def test_quantize_grid():
    """Values snap to the nearest 0.1 m."""
    assert np.allclose(quantize([0.04, 0.06, -4.96], 0.1), [0.0, 0.1, -5.0])


def test_reward_examples(reward_config):
    """Hand-evaluated reward values."""
    assert reward(432.64, 2.5, 8, 0.1, reward_config) == pytest.approx(1.0)
    assert reward(432.64, 1.0, 8, 0.0, reward_config) == pytest.approx(2.0)
    expected = -math.log(57.25) - math.log(65.0)
    assert reward(0.0, 10.0, 0, 0.05, reward_config) == pytest.approx(expected)
    assert expected == pytest.approx(-8.22, abs=5e-3)


def test_reward_end_bonus_exclusive(reward_config):
    """The success bonus never coexists with a penalty, over 100000 random outcomes."""
    rng = np.random.default_rng(0)
    count = 100_000
    areas = rng.uniform(0, 432.64, count)
    cqis = rng.uniform(0, 10, count)
    locks = rng.integers(0, 13, count)
    fuels = rng.uniform(0, 0.2, count)
    for area, settled, locked, fuel in zip(areas, cqis, locks, fuels):
        terms = reward_terms(float(area), float(settled), int(locked), float(fuel), reward_config)
        if terms.end_bonus > 0:
            assert terms.cqi_penalty == 0.0
            assert terms.locked_penalty == 0.0
        if terms.total > 1.0:
            assert terms.end_bonus > 0


def test_reward_monotone(reward_config):
    """More fuel or a worse CQI never raises the reward."""
    fuels = np.linspace(0, 0.2, 11)
    values = [reward(300.0, 1.0, 10, f, reward_config) for f in fuels]
    assert (np.diff(values) <= 0).all()
    cqis = np.linspace(2.5, 20.0, 11)
    values = [reward(300.0, c, 10, 0.05, reward_config) for c in cqis]
    assert (np.diff(values) <= 0).all()


def test_reward_rejects_negative_fuel(reward_config):
    """Fuel cannot be negative."""
    with pytest.raises(ValueError):
        reward(1.0, 1.0, 8, -0.1, reward_config)


def test_reward_config_from_settings():
    """Weights follow the variant; a missing fuel reference is an error."""
    settings = Settings()
    with pytest.raises(ConfigurationError):
        RewardConfig.from_settings(settings, Variant.FOUR_MU)
    config = RewardConfig.from_settings(settings, Variant.EIGHT_MU, fuel_reference=0.2)
    assert config.fuel_weight == 1.5
    assert config.locked_threshold == 6
    assert config.max_mouth_area == pytest.approx(432.64)


def test_scenario_statistics():
    """Uniform over the lattice: box-center means, grid coordinates, bounds."""
    settings = PolicySettings()
    rng = np.random.default_rng(42)
    samples = np.array([sample_scenario(rng, settings, Variant.FOUR_MU).position for _ in range(20000)])
    assert abs(samples[:, 0].mean()) < 0.18
    assert abs(samples[:, 1].mean()) < 0.18
    assert samples[:, 2].mean() == pytest.approx(-50.0, rel=0.02)
    assert np.allclose(samples * 10, np.round(samples * 10))
    assert samples[:, :2].min() >= -9.0 and samples[:, :2].max() <= 9.0
    assert samples[:, 2].min() >= -60.0 and samples[:, 2].max() <= -40.0


def test_scenario_seeded():
    """The same generator seed reproduces the scenario sequence."""
    settings = PolicySettings()
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    assert [sample_scenario(a, settings, Variant.EIGHT_MU) for _ in range(5)] == [
        sample_scenario(b, settings, Variant.EIGHT_MU) for _ in range(5)
    ]


def test_policy_dimensions():
    """Three state inputs; two offsets per MU."""
    settings = PolicySettings()
    four = PolicyModel.for_variant(Variant.FOUR_MU, settings)
    eight = PolicyModel.for_variant(Variant.EIGHT_MU, settings)
    assert (four.state_dim, four.action_dim) == (3, 8)
    assert eight.action_dim == 16
    raw, log_prob, value = four.act(np.array([0.0, 0.0, -50.0]), np.random.default_rng(0))
    assert raw.shape == (8,)
    assert math.isfinite(log_prob) and math.isfinite(value)


def test_deterministic_act_is_mean():
    """Deterministic actions ignore the noise stream and stay in bounds."""
    model = PolicyModel.for_variant(Variant.FOUR_MU, PolicySettings())
    state = np.array([1.0, -2.0, -45.0])
    a, _, _ = model.act(state, np.random.default_rng(0), deterministic=True)
    b, _, _ = model.act(state, np.random.default_rng(99), deterministic=True)
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= 5.0


def test_ratio_one_identity():
    """With unchanged policy the clipped objective is the plain one."""
    advantages = torch.tensor([1.5, -0.3, 0.0, 2.0])
    assert torch.equal(clipped_objective(torch.ones(4), advantages, 0.2), advantages)


def test_ratio_clipping_bounds():
    """Large ratios stop paying off beyond the clip interval."""
    out = clipped_objective(torch.tensor([2.0, 0.5]), torch.tensor([1.0, -1.0]), 0.2)
    assert torch.allclose(out, torch.tensor([1.2, -0.8]))


def test_zero_advantage_gives_zero_actor_gradient():
    """Zero advantages leave the actor untouched."""
    torch.manual_seed(0)
    model = PolicyModel(3, 4, (8,))
    states = torch.randn(10, 3)
    with torch.no_grad():
        raw = model.distribution(states).sample()
        old = model.evaluate(states, raw)[0]
    log_prob, _, _ = model.evaluate(states, raw)
    objective = clipped_objective(torch.exp(log_prob - old), torch.zeros(10), 0.2).mean()
    objective.backward()
    for p in list(model.actor.parameters()) + [model.log_std]:
        assert p.grad is None or torch.count_nonzero(p.grad) == 0


def test_ppo_update_changes_policy():
    """An update with informative rewards moves the actor."""
    torch.manual_seed(1)
    settings = PolicySettings(hidden_sizes=(8,))
    model = PolicyModel(3, 2, (8,))
    optimizer = make_optimizer(model, settings)
    rng = np.random.default_rng(0)
    batch = []
    for _ in range(32):
        state = rng.normal(size=3)
        raw, log_prob, value = model.act(state, rng)
        batch.append(Transition(state, raw, log_prob, value, float(-np.sum(raw ** 2))))
    before = [p.detach().clone() for p in model.actor.parameters()]
    stats = ppo_update(model, optimizer, batch, settings, torch.Generator().manual_seed(0))
    assert stats.skipped == 0
    assert stats.actor_loss is not None
    assert any(not torch.equal(a, b) for a, b in zip(before, model.actor.parameters()))


def test_bandit_converges():
    """A 1-D bandit with optimum at 2 ends training at 95% of the best reward."""
    torch.manual_seed(0)
    settings = PolicySettings(hidden_sizes=(16,), learning_rate=3e-3, minibatch_size=64)
    model = PolicyModel(1, 1, (16,), action_bound=5.0, initial_std=1.0)
    optimizer = make_optimizer(model, settings)
    rng = np.random.default_rng(0)
    state = np.zeros(1)

    def collect(_iteration):
        batch = []
        for _ in range(32):
            raw, log_prob, value = model.act(state, rng)
            r = 1.0 - ((float(raw[0]) - 2.0) / 5.0) ** 2
            batch.append(Transition(state, raw, log_prob, value, r, success=r > 0.9))
        return batch

    history = training_loop(model, optimizer, collect, settings, 200, generator=torch.Generator().manual_seed(0))
    assert len(history) == 200
    assert history[-1].episodes == 200 * 32
    assert np.mean([h.trailing_mean_reward for h in history[-10:]]) >= 0.95


def test_training_loop_rejects_empty_batch():
    """An iteration without episodes is a configuration error."""
    settings = PolicySettings()
    model = PolicyModel(1, 1, (4,))
    with pytest.raises(ConfigurationError):
        training_loop(model, make_optimizer(model, settings), lambda _: [], settings, 1)


def test_checkpoint_round_trip(tmp_path):
    """Weights, optimizer state, history and iteration survive a save."""
    settings = PolicySettings(hidden_sizes=(8,))
    model = PolicyModel.for_variant(Variant.EIGHT_MU, settings)
    optimizer = make_optimizer(model, settings)
    state = np.zeros(3) + [0.0, 0.0, -50.0]

    def collect(_iteration):
        rng = np.random.default_rng(_iteration)
        return [Transition(state, *model.act(state, rng), reward=float(rng.normal())) for _ in range(8)]

    history = training_loop(model, optimizer, collect, settings, 2)
    path = save_checkpoint(tmp_path / "policy.pt", model, optimizer, 2, history, {"variant": "eight-mu"})
    checkpoint = load_checkpoint(path)

    assert checkpoint.iteration == 2
    assert checkpoint.variant == Variant.EIGHT_MU
    assert checkpoint.history == history
    for key, value in model.state_dict().items():
        assert torch.equal(checkpoint.model.state_dict()[key], value)
    observation = np.array([3.0, -4.0, -55.0])
    assert np.array_equal(
        checkpoint.model.act(observation, np.random.default_rng(0), deterministic=True)[0],
        model.act(observation, np.random.default_rng(0), deterministic=True)[0],
    )
    restored = make_optimizer(checkpoint.model, settings)
    restored.load_state_dict(checkpoint.optimizer_state)
