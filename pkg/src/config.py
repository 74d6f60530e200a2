"""Configuration settings for the tether-net capture toolkit."""

import os
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigurationError, MissingArtifactError, SchemaVersionError
from .models import FeatureMUs, Variant

SCHEMA_VERSION = 1
CONFIG_ENV_VAR = "TETHERNET_CONFIG"


class NetSettings(BaseModel):
    """Net, body and integrator parameters."""

    variant: Variant = Field(Variant.FOUR_MU, description="Number of maneuverable units")
    mesh: int = Field(23, ge=3, description="Nodes per side of the square net mesh")
    side_length: float = Field(20.8, gt=0, description="Side of the flat net (m)")
    net_mass: float = Field(2.0, gt=0, description="Total mass of the net nodes (kg)")
    stiffness: float = Field(2000.0, gt=0, description="Thread stiffness per link (N/m)")
    damping: float = Field(2.0, ge=0, description="Thread damping per link (N s/m)")

    knot_mass: float = Field(0.05, gt=0, description="Mass of the central knot (kg)")
    knot_thread_length: float = Field(0.2, gt=0, description="Knot to net-center thread (m)")

    mu_mass: float = Field(2.5, gt=0, description="Mass of each MU (kg)")
    mu_size: tuple[float, float, float] = Field((0.1, 0.1, 0.2), description="MU box dimensions (m)")
    mu_thread_length: float = Field(0.3, gt=0, description="MU to attachment node thread (m)")
    mu_protrusion: float = Field(0.1, ge=0, description="Stowed MU offset beyond its corner (m)")

    stowed_fraction: float = Field(0.1, gt=0, le=1, description="Stowed net side over flat side")
    node_radius: float = Field(0.02, gt=0, description="Contact radius of a net node (m)")

    chaser_mass: float = Field(1600.0, gt=0, description="Chaser mass (kg)")
    chaser_side: float = Field(1.5, gt=0, description="Chaser cube side (m)")

    debris_mass: float = Field(9000.0, gt=0, description="Debris mass (kg)")
    debris_radius: float = Field(1.95, gt=0, description="Debris cylinder radius (m)")
    debris_length: float = Field(10.4, gt=0, description="Debris cylinder length (m)")
    debris_axis: tuple[float, float, float] = Field((1.0, 0.0, 0.0), description="Debris long axis")
    debris_spin_rate: float = Field(0.0, description="Initial spin about the long axis (rad/s)")

    tether_stiffness: float = Field(2000.0, gt=0, description="Main tether stiffness (N/m)")
    tether_damping: float = Field(10.0, ge=0, description="Main tether damping (N s/m)")

    closing_loop_size: int = Field(12, ge=3, le=12, description="Nodes threaded by the closing line")
    feature_node_count: Optional[int] = Field(
        None, ge=3, description="Surrogate loop nodes; None scales 165 by mesh size"
    )

    dt: float = Field(1e-3, gt=0, description="Integrator step (s)")
    substep_safety: float = Field(0.5, gt=0, le=1, description="Fraction of the critical step used")

    @field_validator("debris_axis")
    @classmethod
    def validate_axis(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        """Reject a zero-length debris axis."""
        if sum(c * c for c in v) <= 0.0:
            raise ValueError("debris_axis must be non-zero")
        return v

    @field_validator("mu_size")
    @classmethod
    def validate_mu_size(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if min(v) <= 0.0:
            raise ValueError("MU dimensions must be positive")
        return v

    @property
    def mu_count(self) -> int:
        return 4 if self.variant == Variant.FOUR_MU else 8


class ContactSettings(BaseModel):
    """Penalty contact between net points and the debris."""

    normal_stiffness: float = Field(5000.0, gt=0, description="Penalty stiffness (N/m)")
    normal_damping: float = Field(1.0, gt=0, description="Penalty damping (N s/m)")
    friction_coefficient: float = Field(0.3, gt=0, le=2, description="Coulomb coefficient")
    friction_regularization_velocity: float = Field(
        0.01, gt=0, description="tanh smoothing velocity (m/s)"
    )


class ControllerSettings(BaseModel):
    """PID gains, actuator and sensor parameters for each MU."""

    kp: float = Field(10.0, description="Proportional gain")
    ki: float = Field(6.0, description="Integral gain")
    kd: float = Field(6.0, description="Velocity damping gain")
    thrust_limit_per_axis: float = Field(5.1, gt=0, description="Per-axis thrust clamp (N)")
    command_rate: float = Field(20.0, gt=0, description="Thrust command rate (Hz)")
    sensor_rate: float = Field(20.0, gt=0, description="Sensor sampling rate (Hz)")
    pos_noise_3sigma: float = Field(0.1, ge=0, description="Position noise 3-sigma bound (m)")
    vel_noise_3sigma: float = Field(0.1, ge=0, description="Velocity noise 3-sigma bound (m/s)")
    isp: float = Field(60.0, gt=0, description="Specific impulse (s)")
    g0: float = Field(9.81, gt=0, description="Standard gravity (m/s^2)")
    t_final: float = Field(25.0, description="Deployment duration (s)")
    activation_time: float = Field(0.0, description="Thruster activation time (s)")
    reset_integral_on_retarget: bool = Field(True, description="Clear the integral at docking retarget")


class CaptureSettings(BaseModel):
    """Capture scoring, trigger and closing-mechanism parameters."""

    target_volume: float = Field(159.9, gt=0, description="Debris volume V_D (m^3)")
    target_surface: float = Field(59.9, gt=0, description="Debris surface S_D (m^2)")
    characteristic_length: float = Field(1.95, gt=0, description="Debris length scale L_c (m)")

    cqi_threshold: float = Field(2.5, gt=0, description="Settled CQI success bound")
    trigger_distance: float = Field(2.5, gt=0, description="Net-debris COM distance to close (m)")
    settle_time: float = Field(15.0, gt=0, description="Trigger to settled sample (s)")
    cqi_interval: float = Field(0.5, gt=0, description="CQI sampling interval (s)")
    deploy_timeout: float = Field(40.0, gt=0, description="Give up waiting for the trigger (s)")
    failure_cqi: float = Field(50.0, gt=0, description="CQI used for episodes that never trigger")

    locked_threshold_four_mu: int = Field(8, ge=0, le=12, description="N_t for the 4-MU net")
    locked_threshold_eight_mu: int = Field(6, ge=0, le=8, description="N_t for the 8-MU net")

    lock_distance: float = Field(0.05, gt=0, description="Closing-loop neighbours counted as locked (m)")
    reel_rate: float = Field(5.0, gt=0, description="Closing line reel-in rate per winch (m/s)")
    closing_min_length: float = Field(0.0, ge=0, description="Shortest closing line (m)")
    closing_max_tension: float = Field(50.0, gt=0, description="Winch stall tension of the closing line (N)")
    closing_stiffness: float = Field(2000.0, gt=0, description="Closing line stiffness (N/m)")
    closing_damping: float = Field(1.0, ge=0, description="Closing line damping (N s/m)")

    docking_distance: float = Field(0.5, gt=0, description="Adjacent MU docking distance (m)")
    docking_stiffness: float = Field(5000.0, gt=0, description="Docking joint stiffness (N/m)")
    docking_damping: float = Field(50.0, ge=0, description="Docking joint damping (N s/m)")
    docking_ring_radius: float = Field(0.5, gt=0, description="Closing ring radius (m)")
    docking_offset: Optional[float] = Field(
        None, gt=0, description="Ring distance behind debris COM; None clears the debris surface"
    )
    docking_clearance: float = Field(1.0, gt=0, description="Ring gap behind the debris surface (m)")
    docking_duration: float = Field(5.0, gt=0, description="Time to fly to the closing ring (s)")

    def locked_threshold(self, variant: Variant) -> int:
        if variant == Variant.FOUR_MU:
            return self.locked_threshold_four_mu
        return self.locked_threshold_eight_mu


class SurrogateSettings(BaseModel):
    """Capture-outcome regressor."""

    hidden_sizes: tuple[int, ...] = Field((500, 300), description="Hidden layer widths")
    learning_rate: float = Field(1e-5, gt=0, description="Optimizer learning rate")
    epochs: int = Field(500, ge=1, description="Training epochs")
    batch_size: int = Field(64, ge=1, description="Mini-batch size")
    optimizer: str = Field("adam", pattern="^(adam|sgd)$", description="adam or sgd")
    holdout_count: int = Field(200, ge=1, description="Held-out validation episodes")
    min_dataset_size: int = Field(100, ge=1, description="Smallest accepted dataset")
    mu_features: Optional[FeatureMUs] = Field(
        None, description="MU states appended to the features; None uses the variant default"
    )
    window: int = Field(1, ge=1, description="Snapshots per sample; >1 selects the GRU model")
    error_cqi_cutoff: float = Field(20.0, gt=0, description="Residual model fit only below this CQI")
    min_residuals: int = Field(10, ge=1, description="Smallest residual set for the error model")
    seed: int = Field(0, description="Training seed")
    deployment_mesh: Optional[int] = Field(
        7, ge=3, description="Net mesh simulated in surrogate mode; None or >= net.mesh keeps the full net"
    )

    def feature_mus(self, variant: Variant) -> FeatureMUs:
        if self.mu_features is not None:
            return self.mu_features
        return FeatureMUs.NONE if variant == Variant.FOUR_MU else FeatureMUs.CORNERS


class PolicySettings(BaseModel):
    """Aiming policy, reward and PPO hyper-parameters."""

    hidden_sizes: tuple[int, ...] = Field((64, 64), description="Actor/critic hidden widths")
    learning_rate: float = Field(1e-3, gt=0, description="Adam learning rate")
    clip_ratio: float = Field(0.2, gt=0, lt=1, description="PPO clip interval half-width")
    epochs_per_batch: int = Field(4, ge=1, description="PPO passes over each batch")
    minibatch_size: int = Field(64, ge=1, description="PPO mini-batch size")
    episodes_per_iteration: int = Field(32, ge=1, description="Rollouts per update")
    entropy_coef: float = Field(0.0, ge=0, description="Entropy bonus weight")
    value_coef: float = Field(0.5, ge=0, description="Critic loss weight")
    initial_std: float = Field(1.0, gt=0, description="Initial action standard deviation (m)")
    iterations: int = Field(50, ge=1, description="Training iterations")

    fuel_weight: Optional[float] = Field(
        None, gt=0, description="Fuel reward weight w; None uses 1.0 (4-MU) or 1.5 (8-MU)"
    )
    fuel_reference: Optional[float] = Field(
        None, gt=0, description="m_fmax (kg); None requires calibration"
    )
    calibration_episodes: int = Field(100, ge=1, description="Nominal runs for m_fmax")
    calibration_percentile: float = Field(95.0, gt=0, le=100, description="Percentile of fuel used")

    x_bounds: tuple[float, float] = Field((-9.0, 9.0), description="Debris x range (m)")
    y_bounds: tuple[float, float] = Field((-9.0, 9.0), description="Debris y range (m)")
    z_bounds: tuple[float, float] = Field((-60.0, -40.0), description="Debris z range (m)")
    action_bound: float = Field(5.0, gt=0, description="Aiming offset bound (m)")
    grid_step: float = Field(0.1, gt=0, description="Scenario and action lattice step (m)")
    clip_actions: bool = Field(True, description="Clip out-of-bound actions instead of rejecting")
    raw_nominal_table: bool = Field(False, description="Use the printed nominal table as-is")

    def fuel_weight_for(self, variant: Variant) -> float:
        if self.fuel_weight is not None:
            return self.fuel_weight
        return 1.0 if variant == Variant.FOUR_MU else 1.5


class HarnessSettings(BaseModel):
    """Batch orchestration and logging."""

    n_jobs: int = Field(32, description="Worker processes for episode batches (-1 = all cores)")
    root_seed: int = Field(0, description="Root of every per-episode seed")
    log_interval: float = Field(0.1, gt=0, description="Trajectory log sample interval (s)")
    eval_episodes: int = Field(50, ge=1, description="Paired evaluation scenarios")


class Settings(BaseSettings):
    """Toolkit settings with environment variable support."""

    app_name: str = "Tether-Net Capture Toolkit"
    version: str = "0.3.0"
    schema_version: int = SCHEMA_VERSION
    debug: bool = False

    net: NetSettings = Field(default_factory=NetSettings)
    contact: ContactSettings = Field(default_factory=ContactSettings)
    controller: ControllerSettings = Field(default_factory=ControllerSettings)
    capture: CaptureSettings = Field(default_factory=CaptureSettings)
    surrogate: SurrogateSettings = Field(default_factory=SurrogateSettings)
    policy: PolicySettings = Field(default_factory=PolicySettings)
    harness: HarnessSettings = Field(default_factory=HarnessSettings)

    model_config = SettingsConfigDict(
        env_prefix="TETHERNET_",
        env_nested_delimiter="__",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @model_validator(mode="after")
    def check_schema_version(self) -> "Settings":
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {self.schema_version}")
        return self

    def with_variant(self, variant: Variant) -> "Settings":
        """Copy of these settings with a different net variant."""
        net = self.net.model_copy(update={"variant": variant})
        return self.model_copy(update={"net": net})


def load_settings(path: Optional[Union[str, Path]] = None) -> Settings:
    """
    Load settings from a YAML file.

    Values in the file take precedence over environment variables; sections
    the file leaves out fall back to the environment and then the defaults.

    Args:
        path: Config file; defaults to $TETHERNET_CONFIG, or built-in defaults

    Returns:
        Validated settings

    Raises:
        MissingArtifactError: If the file does not exist
        SchemaVersionError: If the file declares an unknown schema version
        ConfigurationError: If any value is invalid
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)

    data: dict = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise MissingArtifactError(f"Config file not found: {config_path}")
        with config_path.open("r") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config file {config_path} must hold a mapping")

    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"Config schema_version {version} is not supported (expected {SCHEMA_VERSION})"
        )

    try:
        return Settings(**data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return load_settings()
