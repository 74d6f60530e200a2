"""One-step aiming MDP: nominal aiming, reward, scenarios and PPO training."""

import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.distributions import Normal

from ..capture import capture_success, evaluate_capture
from ..config import CaptureSettings, PolicySettings, Settings
from ..errors import ConfigurationError, ScenarioError
from ..harness.persistence import load_archive, save_archive
from ..models import (
    CaptureMetrics,
    CaptureMode,
    EpisodeRecord,
    FailureReason,
    Scenario,
    TrainingHistoryEntry,
    Variant,
)
from ..simulation import EpisodeOutcome, simulate_episode
from .surrogate import SurrogateModel, extract_features, extract_window

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "policy-checkpoint"
TRAILING_EPISODES = 32
BOUND_TOLERANCE = 1e-9

# End-of-deployment offsets from the debris position, MU1..MU8.
NOMINAL_OFFSETS = (
    (-12.0, -12.0),
    (12.0, -12.0),
    (-12.0, 12.0),
    (12.0, 12.0),
    (0.0, -11.71),
    (11.70, 0.0),
    (-11.71, 0.0),
    (0.0, 11.71),
)
# As printed: MU4 repeats MU3's x and MU8 repeats MU5's y.
RAW_NOMINAL_OFFSETS = NOMINAL_OFFSETS[:3] + ((-12.0, 12.0),) + NOMINAL_OFFSETS[4:7] + ((0.0, -11.71),)


def mu_count_for(variant: Variant) -> int:
    return 4 if variant == Variant.FOUR_MU else 8


def quantize(values: np.ndarray, step: float) -> np.ndarray:
    """Snap values to the ``step`` lattice."""
    return np.round(np.round(np.asarray(values, dtype=float) / step) * step, 10)


def _within(value: float, bounds: tuple[float, float]) -> bool:
    return bounds[0] - BOUND_TOLERANCE <= value <= bounds[1] + BOUND_TOLERANCE


def check_scenario(position: Sequence[float], settings: PolicySettings) -> None:
    """
    Raises:
        ScenarioError: If the debris position lies outside the scenario box
    """
    x, y, z = position
    for value, bounds, name in ((x, settings.x_bounds, "x"), (y, settings.y_bounds, "y"), (z, settings.z_bounds, "z")):
        if not _within(value, bounds):
            raise ScenarioError(f"debris {name}={value} outside {bounds}")


def nominal_aiming(
    position: Sequence[float],
    variant: Variant,
    settings: Optional[PolicySettings] = None,
) -> np.ndarray:
    """
    Nominal end-of-deployment points, one row per MU, all at the debris z.

    Raises:
        ScenarioError: If the debris position is out of bounds
    """
    settings = settings or PolicySettings()
    check_scenario(position, settings)
    offsets = RAW_NOMINAL_OFFSETS if settings.raw_nominal_table else NOMINAL_OFFSETS
    x, y, z = (float(c) for c in position)
    return np.array([[x + dx, y + dy, z] for dx, dy in offsets[: mu_count_for(variant)]])


def apply_action(
    nominal: np.ndarray,
    action: np.ndarray,
    settings: Optional[PolicySettings] = None,
    strict: bool = False,
) -> np.ndarray:
    """
    Shift each nominal point by its (dx, dy) offset; z is unchanged.

    Offsets outside the action bound are clipped with a warning, or
    rejected when ``strict`` or when clipping is disabled.

    Raises:
        ScenarioError: If a rejected offset is out of bounds
    """
    settings = settings or PolicySettings()
    nominal = np.asarray(nominal, dtype=float)
    action = np.asarray(action, dtype=float).reshape(len(nominal), 2)
    bound = settings.action_bound
    outside = np.abs(action) > bound + BOUND_TOLERANCE
    if outside.any():
        if strict or not settings.clip_actions:
            raise ScenarioError(f"aiming offsets {action[outside].tolist()} exceed ±{bound} m")
        logger.warning(f"Clipping {int(outside.sum())} aiming offsets to ±{bound} m")
        action = np.clip(action, -bound, bound)
    points = nominal.copy()
    points[:, :2] += action
    return points


def sample_scenario(
    rng: np.random.Generator,
    settings: PolicySettings,
    variant: Variant,
    seed: Optional[int] = None,
) -> Scenario:
    """Debris position drawn uniformly from the scenario lattice."""
    coords = []
    for lo, hi in (settings.x_bounds, settings.y_bounds, settings.z_bounds):
        count = int(round((hi - lo) / settings.grid_step)) + 1
        coords.append(round(lo + int(rng.integers(count)) * settings.grid_step, 10))
    if seed is None:
        seed = int(rng.integers(2**31 - 1))
    return Scenario(x=coords[0], y=coords[1], z=coords[2], seed=seed, variant=variant)


@dataclass(frozen=True)
class RewardConfig:
    """Constants of the shaped reward."""

    fuel_weight: float
    fuel_reference: float
    max_mouth_area: float
    cqi_threshold: float = 2.5
    locked_threshold: int = 8

    def __post_init__(self):
        if not self.fuel_weight > 0:
            raise ConfigurationError("fuel weight must be positive")
        if not self.fuel_reference > 0:
            raise ConfigurationError("fuel reference must be positive")
        if not self.max_mouth_area > 0:
            raise ConfigurationError("maximum mouth area must be positive")

    @classmethod
    def from_settings(
        cls,
        settings: Settings,
        variant: Variant,
        fuel_reference: Optional[float] = None,
    ) -> "RewardConfig":
        reference = fuel_reference if fuel_reference is not None else settings.policy.fuel_reference
        if reference is None:
            raise ConfigurationError("no fuel reference: run calibrate-fuel or set policy.fuel_reference")
        return cls(
            fuel_weight=settings.policy.fuel_weight_for(variant),
            fuel_reference=reference,
            max_mouth_area=settings.net.side_length ** 2,
            cqi_threshold=settings.capture.cqi_threshold,
            locked_threshold=settings.capture.locked_threshold(variant),
        )


class RewardTerms(NamedTuple):
    mouth_bonus: float
    cqi_penalty: float
    locked_penalty: float
    end_bonus: float

    @property
    def total(self) -> float:
        return self.mouth_bonus + self.cqi_penalty + self.locked_penalty + self.end_bonus


def reward_terms(
    mouth_area: float,
    settled_cqi: float,
    locked: float,
    fuel: float,
    config: RewardConfig,
) -> RewardTerms:
    """Mouth bonus, CQI and locked-pair penalties, and the fuel-weighted success bonus."""
    if fuel < 0:
        raise ValueError(f"fuel must be non-negative, got {fuel}")
    mouth = mouth_area / config.max_mouth_area
    cqi_penalty = 0.0
    if settled_cqi > config.cqi_threshold:
        cqi_penalty = -math.log((settled_cqi - config.cqi_threshold) ** 2 + 1.0)
    locked_penalty = 0.0
    if locked < config.locked_threshold:
        locked_penalty = -math.log((locked - config.locked_threshold) ** 2 + 1.0)
    end = 0.0
    if settled_cqi <= config.cqi_threshold and locked >= config.locked_threshold:
        end = config.fuel_weight * (1.0 - fuel / config.fuel_reference)
    return RewardTerms(mouth, cqi_penalty, locked_penalty, end)


def reward(mouth_area: float, settled_cqi: float, locked: float, fuel: float, config: RewardConfig) -> float:
    return reward_terms(mouth_area, settled_cqi, locked, fuel, config).total


class PolicyModel(nn.Module):
    """Gaussian actor with a bounded tanh mean and a separate critic."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        hidden_sizes: Sequence[int] = (64, 64),
        action_bound: float = 5.0,
        initial_std: float = 1.0,
        state_center: Optional[Sequence[float]] = None,
        state_scale: Optional[Sequence[float]] = None,
    ):
        super().__init__()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.action_bound = action_bound
        self.actor = self._mlp(state_dim, action_dim)
        self.critic = self._mlp(state_dim, 1)
        self.log_std = nn.Parameter(torch.full((action_dim,), math.log(initial_std)))
        center = torch.zeros(state_dim) if state_center is None else torch.tensor(state_center, dtype=torch.float32)
        scale = torch.ones(state_dim) if state_scale is None else torch.tensor(state_scale, dtype=torch.float32)
        self.register_buffer("state_center", center)
        self.register_buffer("state_scale", scale)

    def _mlp(self, width: int, out: int) -> nn.Sequential:
        layers: list[nn.Module] = []
        for size in self.hidden_sizes:
            layers += [nn.Linear(width, size), nn.Tanh()]
            width = size
        layers.append(nn.Linear(width, out))
        return nn.Sequential(*layers)

    @classmethod
    def for_variant(cls, variant: Variant, settings: PolicySettings) -> "PolicyModel":
        bounds = (settings.x_bounds, settings.y_bounds, settings.z_bounds)
        return cls(
            state_dim=3,
            action_dim=2 * mu_count_for(variant),
            hidden_sizes=settings.hidden_sizes,
            action_bound=settings.action_bound,
            initial_std=settings.initial_std,
            state_center=[0.5 * (lo + hi) for lo, hi in bounds],
            state_scale=[0.5 * (hi - lo) for lo, hi in bounds],
        )

    def _normalize(self, states: torch.Tensor) -> torch.Tensor:
        return (states - self.state_center) / self.state_scale

    def distribution(self, states: torch.Tensor) -> Normal:
        mean = self.action_bound * torch.tanh(self.actor(self._normalize(states)))
        return Normal(mean, self.log_std.exp().expand_as(mean))

    def value(self, states: torch.Tensor) -> torch.Tensor:
        return self.critic(self._normalize(states)).squeeze(-1)

    def act(
        self,
        state: np.ndarray,
        rng: np.random.Generator,
        deterministic: bool = False,
    ) -> tuple[np.ndarray, float, float]:
        """Sample a raw action; returns (raw action, log-probability, value)."""
        s = torch.as_tensor(np.asarray(state, dtype=np.float32))[None]
        with torch.no_grad():
            dist = self.distribution(s)
            if deterministic:
                raw = dist.mean[0]
            else:
                noise = torch.as_tensor(rng.standard_normal(self.action_dim), dtype=torch.float32)
                raw = dist.mean[0] + dist.stddev[0] * noise
            log_prob = float(dist.log_prob(raw[None]).sum())
            value = float(self.value(s)[0])
        return raw.numpy().astype(float), log_prob, value

    def evaluate(self, states: torch.Tensor, raw_actions: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Log-probabilities, entropies and values of a batch."""
        dist = self.distribution(states)
        return dist.log_prob(raw_actions).sum(-1), dist.entropy().sum(-1), self.value(states)


def to_action(raw: np.ndarray, settings: PolicySettings) -> np.ndarray:
    """Clip a raw policy sample to the action box and snap it to the grid."""
    clipped = np.clip(np.asarray(raw, dtype=float), -settings.action_bound, settings.action_bound)
    return quantize(clipped, settings.grid_step).reshape(-1, 2)


def scenario_state(scenario: Scenario) -> np.ndarray:
    return np.array(scenario.position, dtype=float)


@dataclass
class Transition:
    """One single-step episode as seen by the learner."""

    state: np.ndarray
    raw_action: np.ndarray
    log_prob: float
    value: float
    reward: float
    success: bool = False


class UpdateStats(NamedTuple):
    actor_loss: Optional[float]
    critic_loss: Optional[float]
    skipped: int


def clipped_objective(ratio: torch.Tensor, advantages: torch.Tensor, clip_ratio: float) -> torch.Tensor:
    """Per-sample clipped surrogate: min(r A, clip(r, 1-eps, 1+eps) A)."""
    clipped = torch.clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    return torch.min(ratio * advantages, clipped * advantages)


def ppo_update(
    model: PolicyModel,
    optimizer: torch.optim.Optimizer,
    batch: Sequence[Transition],
    settings: PolicySettings,
    generator: Optional[torch.Generator] = None,
) -> UpdateStats:
    """
    Clipped policy-gradient update on a batch of one-step episodes.

    Advantages are reward minus the critic value recorded at sampling
    time, normalized over the batch. Mini-batches whose gradients are not
    finite are skipped with a warning.
    """
    states = torch.as_tensor(np.stack([t.state for t in batch]), dtype=torch.float32)
    raw = torch.as_tensor(np.stack([t.raw_action for t in batch]), dtype=torch.float32)
    old_log_prob = torch.as_tensor([t.log_prob for t in batch], dtype=torch.float32)
    rewards = torch.as_tensor([t.reward for t in batch], dtype=torch.float32)
    advantages = rewards - torch.as_tensor([t.value for t in batch], dtype=torch.float32)
    if len(batch) > 1 and advantages.std() > 1e-8:
        advantages = (advantages - advantages.mean()) / advantages.std()

    actor_losses, critic_losses, skipped = [], [], 0
    for _ in range(settings.epochs_per_batch):
        order = torch.randperm(len(batch), generator=generator)
        for start in range(0, len(batch), settings.minibatch_size):
            idx = order[start:start + settings.minibatch_size]
            log_prob, entropy, values = model.evaluate(states[idx], raw[idx])
            ratio = torch.exp(log_prob - old_log_prob[idx])
            actor_loss = -clipped_objective(ratio, advantages[idx], settings.clip_ratio).mean()
            actor_loss = actor_loss - settings.entropy_coef * entropy.mean()
            critic_loss = ((values - rewards[idx]) ** 2).mean()

            optimizer.zero_grad()
            (actor_loss + settings.value_coef * critic_loss).backward()
            grads = [p.grad for p in model.parameters() if p.grad is not None]
            if not all(torch.isfinite(g).all() for g in grads):
                skipped += 1
                optimizer.zero_grad()
                logger.warning("Skipping PPO mini-batch with non-finite gradients")
                continue
            optimizer.step()
            actor_losses.append(float(actor_loss))
            critic_losses.append(float(critic_loss))

    return UpdateStats(
        float(np.mean(actor_losses)) if actor_losses else None,
        float(np.mean(critic_losses)) if critic_losses else None,
        skipped,
    )


def make_optimizer(model: PolicyModel, settings: PolicySettings) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=settings.learning_rate)


def training_loop(
    model: PolicyModel,
    optimizer: torch.optim.Optimizer,
    collect: Callable[[int], list[Transition]],
    settings: PolicySettings,
    iterations: int,
    start_iteration: int = 0,
    history: Optional[list[TrainingHistoryEntry]] = None,
    generator: Optional[torch.Generator] = None,
    on_iteration: Optional[Callable[[int, list[TrainingHistoryEntry]], None]] = None,
) -> list[TrainingHistoryEntry]:
    """
    Alternate batch collection and PPO updates.

    Args:
        model: Actor-critic to train
        optimizer: Its optimizer
        collect: Returns the batch of transitions for an iteration index
        settings: PPO hyper-parameters
        iterations: Iterations to run in this call
        start_iteration: Index of the first iteration (for resumed runs)
        history: Entries of earlier iterations, extended in place
        generator: Torch generator for mini-batch shuffling
        on_iteration: Called after every iteration (checkpointing)

    Returns:
        Training history
    """
    history = history if history is not None else []
    episodes = history[-1].episodes if history else 0
    trailing: deque[float] = deque(maxlen=TRAILING_EPISODES)

    for iteration in range(start_iteration, start_iteration + iterations):
        batch = collect(iteration)
        if not batch:
            raise ConfigurationError("an iteration collected no episodes")
        stats = ppo_update(model, optimizer, batch, settings, generator)
        rewards = [t.reward for t in batch]
        trailing.extend(rewards)
        episodes += len(batch)
        entry = TrainingHistoryEntry(
            iteration=iteration,
            episodes=episodes,
            mean_reward=float(np.mean(rewards)),
            trailing_mean_reward=float(np.mean(trailing)),
            success_rate=float(np.mean([t.success for t in batch])),
            actor_loss=stats.actor_loss,
            critic_loss=stats.critic_loss,
            skipped_updates=stats.skipped,
        )
        history.append(entry)
        logger.info(
            f"Iteration {iteration}: mean reward {entry.mean_reward:.4f}, "
            f"trailing {entry.trailing_mean_reward:.4f}, success {entry.success_rate:.2f}"
        )
        if on_iteration is not None:
            on_iteration(iteration, history)
    return history


def save_checkpoint(
    path: Union[str, Path],
    model: PolicyModel,
    optimizer: torch.optim.Optimizer,
    iteration: int,
    history: Sequence[TrainingHistoryEntry],
    metadata: dict[str, Any],
) -> Path:
    """Save weights, optimizer state and the next iteration index."""
    payload = {
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "iteration": iteration,
        "history": [entry.model_dump() for entry in history],
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "hidden_sizes": list(model.hidden_sizes),
        "action_bound": model.action_bound,
        "metadata": metadata,
    }
    return save_archive(path, CHECKPOINT_KIND, payload)


@dataclass
class Checkpoint:
    model: PolicyModel
    optimizer_state: dict[str, Any]
    iteration: int
    history: list[TrainingHistoryEntry]
    metadata: dict[str, Any]

    @property
    def variant(self) -> Variant:
        return Variant(self.metadata["variant"])


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    payload = load_archive(path, CHECKPOINT_KIND)
    model = PolicyModel(
        payload["state_dim"],
        payload["action_dim"],
        payload["hidden_sizes"],
        payload["action_bound"],
    )
    model.load_state_dict(payload["state_dict"])
    return Checkpoint(
        model=model,
        optimizer_state=payload["optimizer"],
        iteration=payload["iteration"],
        history=[TrainingHistoryEntry.model_validate(e) for e in payload["history"]],
        metadata=payload["metadata"],
    )


class PolicySample(NamedTuple):
    raw_action: np.ndarray
    action: np.ndarray
    log_prob: float
    value: float


def policy_sample(
    model: PolicyModel,
    scenario: Scenario,
    settings: PolicySettings,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> PolicySample:
    raw, log_prob, value = model.act(scenario_state(scenario), rng, deterministic)
    return PolicySample(raw, to_action(raw, settings), log_prob, value)


def zero_sample(variant: Variant) -> PolicySample:
    """Nominal aiming expressed as an all-zero action."""
    n = mu_count_for(variant)
    return PolicySample(np.zeros(2 * n), np.zeros((n, 2)), 0.0, 0.0)


def simulate_aimed(
    settings: Settings,
    scenario: Scenario,
    action: np.ndarray,
    mode: CaptureMode,
    record: bool = False,
    strict: bool = False,
    raise_on_divergence: bool = False,
) -> tuple[np.ndarray, EpisodeOutcome]:
    """Simulate a scenario with the given aiming offsets; safe to run in a worker."""
    settings = settings.with_variant(scenario.variant)
    nominal = nominal_aiming(scenario.position, scenario.variant, settings.policy)
    aiming = apply_action(nominal, action, settings.policy, strict=strict)
    outcome = simulate_episode(
        settings,
        scenario.position,
        aiming,
        scenario.seed,
        mode=mode,
        record=record,
        window=settings.surrogate.window,
        raise_on_divergence=raise_on_divergence,
    )
    return aiming, outcome


def _surrogate_metrics(
    outcome: EpisodeOutcome,
    surrogate: SurrogateModel,
    capture: CaptureSettings,
    rng: np.random.Generator,
) -> CaptureMetrics:
    log = outcome.capture_log
    surrogate.check_compatible(log.variant)
    if surrogate.window > 1:
        features = extract_window(outcome.snapshots, outcome.assembly, surrogate.feature_mus, surrogate.window)
    else:
        features = extract_features(outcome.trigger_state, outcome.assembly, surrogate.feature_mus)
    surrogate.check_compatible(log.variant, features.shape[-1])
    settled, locked = surrogate.noisy_predict(features, rng)
    success, reason = capture_success(settled, locked, log.variant, capture)
    return CaptureMetrics(
        settled_cqi=settled,
        locked_pairs=locked,
        mouth_area_at_trigger=log.mouth_area_at_trigger,
        max_mouth_area=log.max_mouth_area,
        fuel_per_mu=log.fuel_per_mu,
        success=success,
        trigger_time=log.trigger_time,
        failure_reason=reason,
    )


def score_episode(
    scenario: Scenario,
    sample: PolicySample,
    aiming: np.ndarray,
    outcome: EpisodeOutcome,
    mode: CaptureMode,
    settings: Settings,
    reward_config: RewardConfig,
    surrogate: Optional[SurrogateModel] = None,
    rng: Optional[np.random.Generator] = None,
) -> EpisodeRecord:
    """
    Turn a simulated episode into a scored record.

    Surrogate-mode episodes that triggered get their settled CQI and
    locked pairs from the surrogate; everything else is scored from the
    simulation. Episodes that never triggered or diverged take the failure
    reward path and are flagged.
    """
    capture = settings.capture
    log = outcome.capture_log
    flagged = log.diverged or log.trigger_time is None
    if mode == CaptureMode.SURROGATE and not flagged:
        if surrogate is None:
            raise ConfigurationError("surrogate-mode episodes need a trained surrogate")
        metrics = _surrogate_metrics(outcome, surrogate, capture, rng or np.random.default_rng(scenario.seed))
    else:
        metrics = evaluate_capture(log, capture)

    if flagged:
        value = reward(0.0, capture.failure_cqi, 0, metrics.total_fuel, reward_config)
        if metrics.failure_reason == FailureReason.NO_TRIGGER:
            logger.info(f"Episode {scenario.position} never triggered closing")
    else:
        value = reward(
            metrics.mouth_area_at_trigger,
            metrics.settled_cqi,
            metrics.locked_pairs,
            metrics.total_fuel,
            reward_config,
        )

    return EpisodeRecord(
        scenario=scenario,
        mode=mode,
        action=[tuple(a) for a in np.asarray(sample.action).tolist()],
        aiming_points=[tuple(p) for p in np.asarray(aiming).tolist()],
        reward=value,
        metrics=metrics,
        raw_action=np.asarray(sample.raw_action).tolist(),
        log_prob=sample.log_prob,
        value=sample.value,
        sensor_faults=outcome.sensor_faults,
        flagged=flagged,
    )


def run_episode(
    model: Optional[PolicyModel],
    scenario: Scenario,
    mode: CaptureMode,
    settings: Settings,
    reward_config: RewardConfig,
    surrogate: Optional[SurrogateModel] = None,
    deterministic: bool = False,
    record: bool = False,
) -> tuple[EpisodeRecord, EpisodeOutcome]:
    """
    Run one single-step episode in this process.

    A ``None`` model aims nominally. Action sampling and surrogate noise
    use streams derived from the scenario seed.
    """
    streams = np.random.SeedSequence(scenario.seed).spawn(2)
    if model is None:
        sample = zero_sample(scenario.variant)
    else:
        sample = policy_sample(model, scenario, settings.policy, np.random.default_rng(streams[0]), deterministic)
    aiming, outcome = simulate_aimed(settings, scenario, sample.action, mode, record=record)
    record_ = score_episode(
        scenario, sample, aiming, outcome, mode, settings, reward_config,
        surrogate, np.random.default_rng(streams[1]),
    )
    return record_, outcome


def transition(record: EpisodeRecord) -> Transition:
    return Transition(
        state=scenario_state(record.scenario),
        raw_action=np.asarray(record.raw_action, dtype=float),
        log_prob=record.log_prob,
        value=record.value,
        reward=record.reward,
        success=record.metrics.success,
    )
