"""Pydantic models for episode records, reports and manifests."""

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field

FORMAT_VERSION = 1


class Variant(str, Enum):
    """Net layouts: 4 corner MUs with winch closing, or 8 MUs that dock."""
    FOUR_MU = "four-mu"
    EIGHT_MU = "eight-mu"


class FeatureMUs(str, Enum):
    """Which MU states are appended to the surrogate features."""
    NONE = "none"
    CORNERS = "corners"
    SIDES = "sides"
    ALL = "all"


class WinchMode(str, Enum):
    FREE_SPOOL = "free-spool"
    LOCKED = "locked"


class CaptureMode(str, Enum):
    """How the capture phase of an episode is resolved."""
    SURROGATE = "surrogate"
    FULL = "full"


class FailureReason(str, Enum):
    NO_TRIGGER = "no-trigger"
    CQI = "cqi"
    LOCKED_PAIRS = "locked-pairs"
    CQI_AND_LOCKED_PAIRS = "cqi-and-locked-pairs"
    DIVERGED = "diverged"


class Scenario(BaseModel):
    """Debris position at launch plus the physics seed of the episode."""

    x: float = Field(..., description="Debris x (m)")
    y: float = Field(..., description="Debris y (m)")
    z: float = Field(..., description="Debris z (m)")
    seed: int = Field(..., description="Physics and sensor-noise seed")
    variant: Variant = Field(..., description="Net variant")

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


class CaptureMetrics(BaseModel):
    """Capture scores of one episode."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    cqi_series: list[tuple[float, float]] = Field(
        default_factory=list, description="(time s, CQI) samples"
    )
    settled_cqi: float = Field(..., ge=0, description="CQI at trigger + settle time")
    locked_pairs: int = Field(..., ge=0, le=12, description="N_L at the settled sample")
    mouth_area_at_trigger: float = Field(..., ge=0, description="A_c (m^2)")
    max_mouth_area: float = Field(..., gt=0, description="A_max (m^2)")
    fuel_per_mu: list[float] = Field(default_factory=list, description="Fuel used by each MU (kg)")
    success: bool = Field(..., description="CQI and locked-pairs thresholds both met")
    trigger_time: Optional[float] = Field(None, description="Closing trigger time (s)")
    failure_reason: Optional[FailureReason] = Field(None, description="Why the capture failed")

    @property
    def total_fuel(self) -> float:
        return float(sum(self.fuel_per_mu))


class EpisodeRecord(BaseModel):
    """One single-step episode: state, action, reward and metrics."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    scenario: Scenario
    mode: CaptureMode
    action: list[tuple[float, float]] = Field(..., description="Per-MU (dx, dy) offsets (m)")
    aiming_points: list[tuple[float, float, float]] = Field(..., description="r_final per MU (m)")
    reward: float = Field(..., description="Shaped reward")
    metrics: CaptureMetrics
    raw_action: list[float] = Field(default_factory=list, description="Unquantized policy sample")
    log_prob: float = Field(0.0, description="Log-probability of raw_action under the behaviour policy")
    value: float = Field(0.0, description="Critic estimate at sampling time")
    sensor_faults: int = Field(0, ge=0, description="Sensor-fault events")
    flagged: bool = Field(False, description="Episode used the failure reward path")


class PairedResult(BaseModel):
    """Nominal and policy episode run on the same scenario and seed."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    scenario: Scenario
    nominal: EpisodeRecord
    policy: EpisodeRecord

    @property
    def fuel_delta(self) -> float:
        return self.nominal.metrics.total_fuel - self.policy.metrics.total_fuel


class EvaluationReport(BaseModel):
    """Nominal-versus-policy comparison over paired scenarios."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    format_version: int = FORMAT_VERSION
    variant: Variant
    episodes: int = Field(..., ge=0)
    success_rate: float = Field(..., ge=0, le=1, description="Policy capture success fraction")
    success_rate_nominal: float = Field(..., ge=0, le=1, description="Nominal capture success fraction")
    fuel_nominal: list[float] = Field(default_factory=list, description="Total fuel per nominal episode (kg)")
    fuel_rl: list[float] = Field(default_factory=list, description="Total fuel per policy episode (kg)")
    fuel_delta: list[float] = Field(default_factory=list, description="m_f,nom - m_f,RL per pair (kg)")
    mean_fuel_delta: float = Field(0.0, description="Mean of fuel_delta (kg)")
    relative_saving: float = Field(0.0, description="Mean saving over mean nominal fuel")
    per_mu_fuel_nominal: float = Field(0.0, ge=0, description="Average fuel per MU, nominal (kg)")
    per_mu_fuel_rl: float = Field(0.0, ge=0, description="Average fuel per MU, policy (kg)")
    pairs: list[PairedResult] = Field(default_factory=list)


class TrainingHistoryEntry(BaseModel):
    """One PPO iteration."""

    iteration: int = Field(..., ge=0)
    episodes: int = Field(..., ge=0, description="Episodes completed so far")
    mean_reward: float = Field(..., description="Mean reward of this iteration's batch")
    trailing_mean_reward: float = Field(..., description="Mean reward over the trailing 32 episodes")
    success_rate: float = Field(..., ge=0, le=1)
    actor_loss: Optional[float] = None
    critic_loss: Optional[float] = None
    skipped_updates: int = Field(0, ge=0)


class RunManifest(BaseModel):
    """Append-only record of a batch run."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    format_version: int = FORMAT_VERSION
    command: str = Field(..., description="Subcommand that produced the run")
    config: dict[str, Any] = Field(default_factory=dict, description="Settings snapshot")
    root_seed: int
    variant: Variant
    mode: CaptureMode
    episodes: list[EpisodeRecord] = Field(default_factory=list)
    timing: dict[str, float] = Field(default_factory=dict, description="Simulated-time statistics (s)")

    def append(self, record: EpisodeRecord) -> None:
        self.episodes.append(record)
