"""Episode batches: datasets, fuel calibration, policy training and paired evaluation."""

import logging
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch
from joblib import Parallel, delayed

from ..capture.evaluation import LOCKED_PAIR_LIMIT
from ..config import Settings
from ..dynamics import reduced_mesh
from ..errors import ConfigurationError, TrainingError
from ..learning.policy import (
    Checkpoint,
    PolicyModel,
    PolicySample,
    RewardConfig,
    make_optimizer,
    mu_count_for,
    policy_sample,
    quantize,
    sample_scenario,
    save_checkpoint,
    score_episode,
    simulate_aimed,
    training_loop,
    transition,
    zero_sample,
)
from ..learning.surrogate import (
    SurrogateModel,
    extract_features,
    extract_window,
    fit_error_model,
    prediction_metrics,
    train,
)
from ..models import (
    CaptureMode,
    EpisodeRecord,
    EvaluationReport,
    PairedResult,
    RunManifest,
    Scenario,
    TrainingHistoryEntry,
    Variant,
)
from ..simulation import EpisodeOutcome
from .persistence import write_jsonl

logger = logging.getLogger(__name__)


def episode_rng(index: int, root_seed: int) -> np.random.Generator:
    """Independent stream for one episode of a batch."""
    return np.random.default_rng(np.random.SeedSequence([index, root_seed]))


def episode_scenario(index: int, root_seed: int, settings: Settings, variant: Variant) -> tuple[Scenario, np.random.Generator]:
    """Scenario and its remaining stream for episode ``index`` of a batch."""
    rng = episode_rng(index, root_seed)
    seed = int(np.random.SeedSequence([index, root_seed]).generate_state(1)[0])
    return sample_scenario(rng, settings.policy, variant, seed=seed), rng


def run_batch(
    settings: Settings,
    jobs: Sequence[tuple[Scenario, np.ndarray, CaptureMode]],
    n_jobs: Optional[int] = None,
    record: bool = False,
) -> list[tuple[np.ndarray, EpisodeOutcome]]:
    """Simulate (scenario, action, mode) jobs on the worker pool, in order."""
    n_jobs = n_jobs if n_jobs is not None else settings.harness.n_jobs
    started = time.perf_counter()
    results = Parallel(n_jobs=n_jobs)(
        delayed(simulate_aimed)(settings, scenario, action, mode, record)
        for scenario, action, mode in jobs
    )
    logger.info(f"Simulated {len(jobs)} episodes in {time.perf_counter() - started:.1f} s")
    return results


def simulated_timing(outcomes: Sequence[EpisodeOutcome]) -> dict[str, float]:
    """Simulated-time statistics of a batch."""
    triggers = [o.capture_log.trigger_time for o in outcomes if o.capture_log.trigger_time is not None]
    return {
        "episodes": float(len(outcomes)),
        "mean_trigger_time": float(np.mean(triggers)) if triggers else float("nan"),
        "mean_episode_time": float(np.mean([o.final_state.time for o in outcomes])) if outcomes else 0.0,
    }


def random_action(rng: np.random.Generator, settings: Settings, variant: Variant) -> np.ndarray:
    """Offsets drawn uniformly from the action lattice."""
    bound, grid = settings.policy.action_bound, settings.policy.grid_step
    count = int(round(2 * bound / grid)) + 1
    steps = rng.integers(count, size=(mu_count_for(variant), 2))
    return quantize(-bound + steps * grid, grid)


def _features(outcome: EpisodeOutcome, settings: Settings, variant: Variant) -> np.ndarray:
    mus = settings.surrogate.feature_mus(variant)
    window = settings.surrogate.window
    if window > 1:
        return extract_window(outcome.snapshots, outcome.assembly, mus, window)
    return extract_features(outcome.trigger_state, outcome.assembly, mus)


def generate_dataset(
    settings: Settings,
    variant: Variant,
    episodes: int,
    root_seed: int,
    n_jobs: Optional[int] = None,
) -> dict[str, Any]:
    """
    Full-capture episodes with random scenarios and random aiming offsets.

    Episodes that never trigger or diverge carry no label and are dropped.
    With a reduced deployment mesh each scenario is also deployed in
    surrogate mode and the features come from that run, so training sees
    the same features as policy-time surrogate scoring.

    Returns:
        Dict with ``features``, ``labels`` (settled CQI, locked pairs),
        ``scenarios`` and ``dropped``
    """
    settings = settings.with_variant(variant)
    jobs = []
    for index in range(episodes):
        scenario, rng = episode_scenario(index, root_seed, settings, variant)
        jobs.append((scenario, random_action(rng, settings, variant), CaptureMode.FULL))

    reduced = reduced_mesh(settings.net.mesh, settings.surrogate.deployment_mesh) is not None
    if reduced:
        jobs += [(scenario, action, CaptureMode.SURROGATE) for scenario, action, _ in jobs]
    results = [outcome for _, outcome in run_batch(settings, jobs, n_jobs)]
    deployments = results[episodes:] if reduced else results

    features, labels, scenarios = [], [], []
    dropped = 0
    for (scenario, _, _), outcome, deployment in zip(jobs, results[:episodes], deployments):
        log = outcome.capture_log
        if log.diverged or log.trigger_time is None or not deployment.triggered:
            dropped += 1
            continue
        features.append(_features(deployment, settings, variant))
        labels.append((log.settled_cqi(settings.capture.settle_time), float(log.locked_pairs)))
        scenarios.append(scenario.position)

    if dropped:
        logger.warning(f"{dropped} of {episodes} dataset episodes had no label (no trigger or diverged)")
    if not features:
        raise TrainingError("no dataset episode reached the closing trigger")
    return {
        "features": np.stack(features),
        "labels": np.array(labels, dtype=float),
        "scenarios": np.array(scenarios, dtype=float),
        "dropped": dropped,
    }


def max_locked_pairs(settings: Settings, variant: Variant) -> int:
    if variant == Variant.FOUR_MU:
        return min(settings.net.closing_loop_size, LOCKED_PAIR_LIMIT[variant])
    return LOCKED_PAIR_LIMIT[variant]


def train_surrogate(
    settings: Settings,
    features: np.ndarray,
    labels: np.ndarray,
    variant: Variant,
    learning_rate: Optional[float] = None,
    epochs: Optional[int] = None,
) -> SurrogateModel:
    """
    Train on a shuffled split, fit the error model and record held-out scores.

    Raises:
        TrainingError: If too few samples remain after the hold-out
    """
    surrogate = settings.surrogate
    count = len(features)
    holdout = surrogate.holdout_count
    if count - holdout < surrogate.min_dataset_size:
        raise TrainingError(
            f"{count} samples leave fewer than {surrogate.min_dataset_size} after holding out {holdout}"
        )
    order = np.random.default_rng(surrogate.seed).permutation(count)
    val, fit = order[:holdout], order[holdout:]

    model = train(
        features[fit], labels[fit], surrogate, variant, max_locked_pairs(settings, variant),
        learning_rate=learning_rate, epochs=epochs,
    )
    fit_error_model(model, features[val], labels[val], surrogate)
    model.metadata["train"] = prediction_metrics(model, features[fit], labels[fit], settings.capture)
    model.metadata["validation"] = prediction_metrics(model, features[val], labels[val], settings.capture)
    logger.info(
        f"Surrogate validation: CQI MSE {model.metadata['validation']['cqi_mse']:.4f}, "
        f"accuracy {model.metadata['validation']['accuracy']:.3f}"
    )
    return model


def calibrate_fuel_reference(
    settings: Settings,
    variant: Variant,
    episodes: int,
    root_seed: int,
    n_jobs: Optional[int] = None,
) -> float:
    """Percentile of deployment fuel over nominal-aiming episodes."""
    settings = settings.with_variant(variant)
    zero = zero_sample(variant).action
    jobs = [
        (episode_scenario(index, root_seed, settings, variant)[0], zero, CaptureMode.SURROGATE)
        for index in range(episodes)
    ]
    fuel = [sum(outcome.capture_log.fuel_per_mu) for _, outcome in run_batch(settings, jobs, n_jobs)]
    reference = float(np.percentile(fuel, settings.policy.calibration_percentile))
    if not reference > 0:
        raise TrainingError("nominal episodes used no fuel; cannot calibrate the fuel reference")
    logger.info(
        f"Fuel reference for {variant.value}: {reference:.5f} kg "
        f"(P{settings.policy.calibration_percentile:g} of {episodes} nominal episodes)"
    )
    return reference


class PolicyTrainer:
    """Surrogate-mode rollouts feeding PPO updates, with checkpoints."""

    def __init__(
        self,
        settings: Settings,
        variant: Variant,
        surrogate: SurrogateModel,
        root_seed: int,
        checkpoint_path: Path,
        fuel_reference: Optional[float] = None,
        resume: Optional[Checkpoint] = None,
        n_jobs: Optional[int] = None,
    ):
        surrogate.check_compatible(variant)
        self.settings = settings.with_variant(variant)
        self.variant = variant
        self.surrogate = surrogate
        self.root_seed = root_seed
        self.checkpoint_path = Path(checkpoint_path)
        self.n_jobs = n_jobs
        self.records: list[EpisodeRecord] = []

        if fuel_reference is None and resume is not None:
            fuel_reference = resume.metadata.get("fuel_reference")
        self.reward_config = RewardConfig.from_settings(self.settings, variant, fuel_reference)

        torch.manual_seed(root_seed)
        self.generator = torch.Generator().manual_seed(root_seed)
        if resume is not None:
            if resume.variant != variant:
                raise ConfigurationError(f"checkpoint is for {resume.variant.value}, not {variant.value}")
            self.model = resume.model
            self.optimizer = make_optimizer(self.model, self.settings.policy)
            self.optimizer.load_state_dict(resume.optimizer_state)
            self.generator.set_state(resume.metadata["generator_state"])
            self.start_iteration = resume.iteration
            self.history = list(resume.history)
        else:
            self.model = PolicyModel.for_variant(variant, self.settings.policy)
            self.optimizer = make_optimizer(self.model, self.settings.policy)
            self.start_iteration = 0
            self.history: list[TrainingHistoryEntry] = []

    def collect(self, iteration: int):
        per_iteration = self.settings.policy.episodes_per_iteration
        samples: list[tuple[Scenario, PolicySample, np.random.Generator]] = []
        for j in range(per_iteration):
            scenario, rng = episode_scenario(iteration * per_iteration + j, self.root_seed, self.settings, self.variant)
            samples.append((scenario, policy_sample(self.model, scenario, self.settings.policy, rng), rng))

        jobs = [(scenario, sample.action, CaptureMode.SURROGATE) for scenario, sample, _ in samples]
        batch = []
        for (scenario, sample, rng), (aiming, outcome) in zip(samples, run_batch(self.settings, jobs, self.n_jobs)):
            record = score_episode(
                scenario, sample, aiming, outcome, CaptureMode.SURROGATE,
                self.settings, self.reward_config, self.surrogate, rng,
            )
            self.records.append(record)
            batch.append(transition(record))
        return batch

    def metadata(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "fuel_reference": self.reward_config.fuel_reference,
            "fuel_weight": self.reward_config.fuel_weight,
            "root_seed": self.root_seed,
            "generator_state": self.generator.get_state(),
        }

    def checkpoint(self, iteration: int, history: list[TrainingHistoryEntry]) -> None:
        save_checkpoint(self.checkpoint_path, self.model, self.optimizer, iteration + 1, history, self.metadata())

    def run(self, iterations: int) -> list[TrainingHistoryEntry]:
        logger.info(
            f"Training {self.variant.value} policy from iteration {self.start_iteration} "
            f"for {iterations} iterations"
        )
        return training_loop(
            self.model,
            self.optimizer,
            self.collect,
            self.settings.policy,
            iterations,
            start_iteration=self.start_iteration,
            history=self.history,
            generator=self.generator,
            on_iteration=self.checkpoint,
        )


def paired_evaluation(
    settings: Settings,
    checkpoint: Checkpoint,
    episodes: int,
    root_seed: int,
    n_jobs: Optional[int] = None,
) -> tuple[EvaluationReport, list[EpisodeOutcome]]:
    """
    Nominal and policy aiming on the same scenarios, both with full capture.

    The policy aims with its mean action. Diverged episodes count as
    failures without stopping the batch.
    """
    variant = checkpoint.variant
    settings = settings.with_variant(variant)
    reward_config = RewardConfig.from_settings(settings, variant, checkpoint.metadata.get("fuel_reference"))
    nominal = zero_sample(variant)

    scenarios, samples, jobs = [], [], []
    for index in range(episodes):
        scenario, rng = episode_scenario(index, root_seed, settings, variant)
        sample = policy_sample(checkpoint.model, scenario, settings.policy, rng, deterministic=True)
        scenarios.append(scenario)
        samples.append(sample)
        jobs += [(scenario, nominal.action, CaptureMode.FULL), (scenario, sample.action, CaptureMode.FULL)]

    results = run_batch(settings, jobs, n_jobs)
    pairs = []
    for i, scenario in enumerate(scenarios):
        (nom_aim, nom_out), (rl_aim, rl_out) = results[2 * i], results[2 * i + 1]
        pairs.append(PairedResult(
            scenario=scenario,
            nominal=score_episode(scenario, nominal, nom_aim, nom_out, CaptureMode.FULL, settings, reward_config),
            policy=score_episode(scenario, samples[i], rl_aim, rl_out, CaptureMode.FULL, settings, reward_config),
        ))

    report = summarize_pairs(variant, pairs)
    logger.info(
        f"Evaluation over {episodes} scenarios: success {report.success_rate:.2f} "
        f"(nominal {report.success_rate_nominal:.2f}), mean fuel saving {report.mean_fuel_delta:.5f} kg "
        f"({100 * report.relative_saving:.1f}%)"
    )
    return report, [o for _, o in results]


def summarize_pairs(variant: Variant, pairs: list[PairedResult]) -> EvaluationReport:
    """Aggregate success rates and fuel statistics of paired episodes."""
    if not pairs:
        return EvaluationReport(variant=variant, episodes=0, success_rate=0.0, success_rate_nominal=0.0)
    mus = mu_count_for(variant)
    fuel_nominal = [p.nominal.metrics.total_fuel for p in pairs]
    fuel_rl = [p.policy.metrics.total_fuel for p in pairs]
    delta = [n - r for n, r in zip(fuel_nominal, fuel_rl)]
    mean_nominal = float(np.mean(fuel_nominal))
    return EvaluationReport(
        variant=variant,
        episodes=len(pairs),
        success_rate=float(np.mean([p.policy.metrics.success for p in pairs])),
        success_rate_nominal=float(np.mean([p.nominal.metrics.success for p in pairs])),
        fuel_nominal=fuel_nominal,
        fuel_rl=fuel_rl,
        fuel_delta=delta,
        mean_fuel_delta=float(np.mean(delta)),
        relative_saving=float(np.mean(delta)) / mean_nominal if mean_nominal > 0 else 0.0,
        per_mu_fuel_nominal=mean_nominal / mus,
        per_mu_fuel_rl=float(np.mean(fuel_rl)) / mus,
        pairs=pairs,
    )


def run_manifest(
    command: str,
    settings: Settings,
    root_seed: int,
    variant: Variant,
    mode: CaptureMode,
    records: Sequence[EpisodeRecord] = (),
    outcomes: Sequence[EpisodeOutcome] = (),
) -> RunManifest:
    manifest = RunManifest(
        command=command,
        config=settings.model_dump(mode="json"),
        root_seed=root_seed,
        variant=variant,
        mode=mode,
        timing=simulated_timing(outcomes),
    )
    for record in records:
        manifest.append(record)
    return manifest


def write_episode_logs(out_dir: Path, outcome: EpisodeOutcome, record: EpisodeRecord) -> list[Path]:
    """Trajectory, control, tracking and episode logs of one recorded episode."""
    out_dir = Path(out_dir)
    header = {"variant": record.scenario.variant.value, "seed": record.scenario.seed}
    tracking = [{"time": t, "errors": errors} for t, errors in outcome.tracking_log]
    return [
        write_jsonl(out_dir / "trajectory.jsonl", "trajectory", outcome.trajectory, header),
        write_jsonl(out_dir / "control.jsonl", "control", outcome.control_log, header),
        write_jsonl(out_dir / "tracking.jsonl", "tracking", tracking, header),
        write_jsonl(out_dir / "episode.jsonl", "episode", [record], header),
    ]


def simulate_single(
    settings: Settings,
    variant: Variant,
    seed: int,
    position: Optional[Sequence[float]] = None,
) -> tuple[EpisodeRecord, EpisodeOutcome]:
    """
    One nominal-aiming, full-capture episode with every log recorded.

    Without a configured fuel reference the episode's own fuel is used,
    which zeroes the fuel bonus.

    Raises:
        IntegrationDiverged: If the integration blows up
    """
    settings = settings.with_variant(variant)
    if position is None:
        scenario, _ = episode_scenario(0, seed, settings, variant)
    else:
        x, y, z = position
        scenario = Scenario(x=x, y=y, z=z, seed=seed, variant=variant)
    sample = zero_sample(variant)
    aiming, outcome = simulate_aimed(
        settings, scenario, sample.action, CaptureMode.FULL, record=True, raise_on_divergence=True
    )

    reference = settings.policy.fuel_reference
    if reference is None:
        reference = max(sum(outcome.capture_log.fuel_per_mu), 1e-12)
        logger.warning("No fuel reference configured; scoring against this episode's own fuel")
    reward_config = RewardConfig.from_settings(settings, variant, reference)
    record = score_episode(scenario, sample, aiming, outcome, CaptureMode.FULL, settings, reward_config)
    return record, outcome
