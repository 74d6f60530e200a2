"""Capture-outcome surrogate: snapshot features, torch regressor and error model."""

import logging
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from ..config import CaptureSettings, SurrogateSettings
from ..dynamics.assembly import NetAssembly
from ..dynamics.state import SystemState
from ..errors import ConfigurationError, TrainingError, WidthMismatchError
from ..harness.persistence import load_archive, save_archive
from ..models import FeatureMUs, Variant

logger = logging.getLogger(__name__)

ARCHIVE_KIND = "surrogate"


def feature_mu_indices(assembly: NetAssembly, feature_mus: FeatureMUs) -> np.ndarray:
    """MU numbers (0-based) whose states are part of the features."""
    if feature_mus == FeatureMUs.NONE:
        return np.array([], dtype=int)
    if feature_mus == FeatureMUs.CORNERS:
        return np.arange(4)
    if feature_mus == FeatureMUs.SIDES:
        return np.arange(4, assembly.mu_count)
    return np.arange(assembly.mu_count)


def feature_rows(assembly: NetAssembly, feature_mus: FeatureMUs) -> np.ndarray:
    """Body rows in feature order: the three surrogate loops, then the selected MUs."""
    if not assembly.surrogate_loops:
        raise ConfigurationError(f"a {assembly.mesh}x{assembly.mesh} net has no surrogate loops")
    loops = np.concatenate(assembly.surrogate_loops)
    mus = assembly.mu_indices[feature_mu_indices(assembly, feature_mus)]
    return np.concatenate([loops, mus]).astype(int)


def feature_width(assembly: NetAssembly, feature_mus: FeatureMUs) -> int:
    return 6 * len(feature_rows(assembly, feature_mus))


def extract_features(
    state: SystemState,
    assembly: NetAssembly,
    feature_mus: FeatureMUs = FeatureMUs.NONE,
    expected_width: Optional[int] = None,
) -> np.ndarray:
    """
    Snapshot features relative to the debris center of mass.

    All relative positions come first, then all relative velocities, each
    in :func:`feature_rows` order.

    Raises:
        ConfigurationError: If the net has no surrogate loops or the width
            differs from ``expected_width``
    """
    rows = feature_rows(assembly, feature_mus)
    debris = assembly.debris_index
    rel_pos = state.positions[rows] - state.positions[debris]
    rel_vel = state.velocities[rows] - state.velocities[debris]
    features = np.concatenate([rel_pos.ravel(), rel_vel.ravel()])
    if expected_width is not None and len(features) != expected_width:
        raise ConfigurationError(
            f"feature width {len(features)} does not match the configured {expected_width}"
        )
    return features


def extract_window(
    snapshots: Sequence[SystemState],
    assembly: NetAssembly,
    feature_mus: FeatureMUs,
    window: int,
) -> np.ndarray:
    """Features of the trailing ``window`` snapshots, oldest first, front-padded."""
    if not snapshots:
        raise ValueError("no snapshots to extract features from")
    rows = [extract_features(s, assembly, feature_mus) for s in snapshots[-window:]]
    while len(rows) < window:
        rows.insert(0, rows[0])
    return np.stack(rows)


class SurrogateNet(nn.Module):
    """Tanh MLP regressor; with ``recurrent`` a GRU reads the snapshot window first."""

    def __init__(self, input_width: int, hidden_sizes: Sequence[int] = (500, 300), recurrent: bool = False):
        super().__init__()
        hidden_sizes = list(hidden_sizes)
        if not hidden_sizes:
            raise ConfigurationError("the surrogate needs at least one hidden layer")
        self.recurrent = recurrent
        layers: list[nn.Module] = []
        if recurrent:
            self.gru = nn.GRU(input_width, hidden_sizes[0], batch_first=True)
            width = hidden_sizes[0]
            hidden_sizes = hidden_sizes[1:]
        else:
            width = input_width
        for size in hidden_sizes:
            layers += [nn.Linear(width, size), nn.Tanh()]
            width = size
        layers.append(nn.Linear(width, 2))
        self.head = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.recurrent:
            _, hidden = self.gru(x)
            x = torch.tanh(hidden[-1])
        return self.head(x)


class ErrorModel(NamedTuple):
    """Gaussian model of CQI residuals (actual minus predicted)."""

    mean: float
    sigma: float

    @classmethod
    def from_residuals(cls, residuals: np.ndarray, min_count: int = 10) -> "ErrorModel":
        residuals = np.asarray(residuals, dtype=float)
        if len(residuals) < min_count:
            raise TrainingError(
                f"only {len(residuals)} residuals below the CQI cutoff; need at least {min_count}"
            )
        return cls(float(residuals.mean()), float(residuals.std()))


class SurrogateModel:
    """Trained regressor with its standardization statistics and error model."""

    def __init__(
        self,
        net: SurrogateNet,
        variant: Variant,
        feature_mus: FeatureMUs,
        width: int,
        window: int,
        max_locked: int,
        feature_mean: np.ndarray,
        feature_std: np.ndarray,
        label_mean: np.ndarray,
        label_std: np.ndarray,
        hidden_sizes: Sequence[int],
        error_model: Optional[ErrorModel] = None,
        metadata: Optional[dict[str, Any]] = None,
    ):
        self.net = net
        self.variant = variant
        self.feature_mus = feature_mus
        self.width = width
        self.window = window
        self.max_locked = max_locked
        self.feature_mean = np.asarray(feature_mean, dtype=np.float32)
        self.feature_std = np.asarray(feature_std, dtype=np.float32)
        self.label_mean = np.asarray(label_mean, dtype=np.float32)
        self.label_std = np.asarray(label_std, dtype=np.float32)
        self.hidden_sizes = tuple(hidden_sizes)
        self.error_model = error_model
        self.metadata = metadata or {}

    def check_compatible(self, variant: Variant, width: Optional[int] = None) -> None:
        """
        Raises:
            WidthMismatchError: If the variant or feature width differs from the model's
        """
        if variant != self.variant:
            raise WidthMismatchError(
                f"surrogate was trained for {self.variant.value}, not {variant.value}"
            )
        if width is not None and width != self.width:
            raise WidthMismatchError(f"feature width {width} does not match model width {self.width}")

    def _standardize(self, features: np.ndarray) -> torch.Tensor:
        x = (np.asarray(features, dtype=np.float32) - self.feature_mean) / self.feature_std
        return torch.from_numpy(x)

    def predict_raw(self, features: np.ndarray) -> np.ndarray:
        """Unclamped (CQI, locked pairs) rows for a batch of features."""
        features = np.asarray(features, dtype=np.float32)
        if features.shape[-1] != self.width:
            raise WidthMismatchError(
                f"feature width {features.shape[-1]} does not match model width {self.width}"
            )
        single = features.ndim == (2 if self.window > 1 else 1)
        if single:
            features = features[None]
        self.net.eval()
        with torch.no_grad():
            out = self.net(self._standardize(features)).numpy()
        out = out * self.label_std + self.label_mean
        return out[0] if single else out

    def predict(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Predicted settled CQI and locked pairs.

        Returns:
            CQI (clamped at 0) and locked pairs clamped to [0, max_locked]

        Raises:
            WidthMismatchError: If the feature width differs from the model's
        """
        out = np.asarray(self.predict_raw(features), dtype=float)
        cqi = np.maximum(out[..., 0], 0.0)
        locked = np.clip(out[..., 1], 0.0, self.max_locked)
        return cqi, locked

    def noisy_predict(self, features: np.ndarray, rng: np.random.Generator) -> tuple[float, int]:
        """One prediction with a Gaussian residual sample added to the CQI."""
        cqi, locked = self.predict(features)
        if self.error_model is not None:
            cqi = cqi + rng.normal(self.error_model.mean, self.error_model.sigma)
        return max(float(cqi), 0.0), int(np.rint(locked))

    def save(self, path: Union[str, Path]) -> Path:
        payload = {
            "state_dict": self.net.state_dict(),
            "variant": self.variant.value,
            "feature_mus": self.feature_mus.value,
            "width": self.width,
            "window": self.window,
            "max_locked": self.max_locked,
            "hidden_sizes": list(self.hidden_sizes),
            "feature_mean": torch.from_numpy(self.feature_mean),
            "feature_std": torch.from_numpy(self.feature_std),
            "label_mean": torch.from_numpy(self.label_mean),
            "label_std": torch.from_numpy(self.label_std),
            "error_model": list(self.error_model) if self.error_model is not None else None,
            "metadata": self.metadata,
        }
        return save_archive(path, ARCHIVE_KIND, payload)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SurrogateModel":
        payload = load_archive(path, ARCHIVE_KIND)
        net = SurrogateNet(payload["width"], payload["hidden_sizes"], recurrent=payload["window"] > 1)
        net.load_state_dict(payload["state_dict"])
        error = payload["error_model"]
        return cls(
            net=net,
            variant=Variant(payload["variant"]),
            feature_mus=FeatureMUs(payload["feature_mus"]),
            width=payload["width"],
            window=payload["window"],
            max_locked=payload["max_locked"],
            feature_mean=payload["feature_mean"].numpy(),
            feature_std=payload["feature_std"].numpy(),
            label_mean=payload["label_mean"].numpy(),
            label_std=payload["label_std"].numpy(),
            hidden_sizes=payload["hidden_sizes"],
            error_model=ErrorModel(*error) if error is not None else None,
            metadata=payload["metadata"],
        )


def _stats(values: np.ndarray, axis: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=axis)
    std = values.std(axis=axis)
    return mean, np.where(std < 1e-8, 1.0, std)


def _batch_loss(net: nn.Module, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sum over both outputs of the per-output mean squared error."""
    return ((net(x) - y) ** 2).mean(dim=0).sum()


def train(
    features: np.ndarray,
    labels: np.ndarray,
    settings: SurrogateSettings,
    variant: Variant,
    max_locked: int,
    feature_mus: Optional[FeatureMUs] = None,
    learning_rate: Optional[float] = None,
    epochs: Optional[int] = None,
) -> SurrogateModel:
    """
    Fit the regressor to (features, [settled CQI, locked pairs]) pairs.

    Features and labels are standardized with stored statistics. The loss
    history (full training set, once per epoch) goes into the metadata.

    Raises:
        TrainingError: If the dataset is too small or the loss becomes non-finite
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float32)
    if len(features) < settings.min_dataset_size:
        raise TrainingError(
            f"dataset has {len(features)} samples; at least {settings.min_dataset_size} required"
        )
    if labels.shape != (len(features), 2):
        raise TrainingError(f"labels must have shape ({len(features)}, 2), got {labels.shape}")

    window = features.shape[1] if features.ndim == 3 else 1
    width = features.shape[-1]
    lr = learning_rate if learning_rate is not None else settings.learning_rate
    epochs = epochs if epochs is not None else settings.epochs
    feature_axes = (0, 1) if window > 1 else (0,)
    feature_mean, feature_std = _stats(features, feature_axes)
    label_mean, label_std = _stats(labels, (0,))

    torch.manual_seed(settings.seed)
    generator = torch.Generator().manual_seed(settings.seed)
    net = SurrogateNet(width, settings.hidden_sizes, recurrent=window > 1)
    if settings.optimizer == "sgd":
        optimizer = torch.optim.SGD(net.parameters(), lr=lr)
    else:
        optimizer = torch.optim.Adam(net.parameters(), lr=lr)

    x = torch.from_numpy((features - feature_mean) / feature_std)
    y = torch.from_numpy((labels - label_mean) / label_std)
    logger.info(
        f"Training surrogate: {len(x)} samples, width {width}, window {window}, "
        f"lr {lr}, {epochs} epochs, {settings.optimizer}"
    )

    history: list[float] = []
    for epoch in range(epochs):
        net.train()
        order = torch.randperm(len(x), generator=generator)
        for start in range(0, len(x), settings.batch_size):
            batch = order[start:start + settings.batch_size]
            loss = _batch_loss(net, x[batch], y[batch])
            if not torch.isfinite(loss):
                logger.error(f"Non-finite surrogate loss at epoch {epoch}, batch starting {start}")
                raise TrainingError(
                    f"non-finite loss {loss.item()} at epoch {epoch}; "
                    f"feature std range [{feature_std.min():.3g}, {feature_std.max():.3g}]"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        net.eval()
        with torch.no_grad():
            history.append(float(_batch_loss(net, x, y)))
        if epoch % max(1, epochs // 10) == 0 or epoch == epochs - 1:
            logger.info(f"Epoch {epoch + 1}/{epochs}: loss {history[-1]:.6f}")

    return SurrogateModel(
        net=net,
        variant=variant,
        feature_mus=feature_mus or settings.feature_mus(variant),
        width=width,
        window=window,
        max_locked=max_locked,
        feature_mean=feature_mean,
        feature_std=feature_std,
        label_mean=label_mean,
        label_std=label_std,
        hidden_sizes=settings.hidden_sizes,
        metadata={
            "learning_rate": lr,
            "epochs": epochs,
            "optimizer": settings.optimizer,
            "samples": len(x),
            "loss_history": history,
        },
    )


def prediction_metrics(
    model: SurrogateModel,
    features: np.ndarray,
    labels: np.ndarray,
    capture: CaptureSettings,
) -> dict[str, float]:
    """
    Table-style scores of the surrogate on a labelled set.

    Returns:
        ``cqi_mse``, ``cqi_success_mse`` (successful captures only),
        ``locked_pairs_mse`` and success/failure classification ``accuracy``
    """
    labels = np.asarray(labels, dtype=float)
    cqi, locked = model.predict(features)
    threshold = capture.locked_threshold(model.variant)
    actual_success = (labels[:, 0] <= capture.cqi_threshold) & (labels[:, 1] >= threshold)
    predicted_success = (cqi <= capture.cqi_threshold) & (np.rint(locked) >= threshold)

    cqi_err = (cqi - labels[:, 0]) ** 2
    return {
        "cqi_mse": float(cqi_err.mean()),
        "cqi_success_mse": float(cqi_err[actual_success].mean()) if actual_success.any() else float("nan"),
        "locked_pairs_mse": float(((locked - labels[:, 1]) ** 2).mean()),
        "accuracy": float((actual_success == predicted_success).mean()),
    }


def fit_error_model(
    model: SurrogateModel,
    features: np.ndarray,
    labels: np.ndarray,
    settings: SurrogateSettings,
) -> ErrorModel:
    """
    Fit the Gaussian CQI residual model on validation scenarios below the CQI cutoff.

    Raises:
        TrainingError: If fewer than ``min_residuals`` scenarios qualify
    """
    labels = np.asarray(labels, dtype=float)
    keep = labels[:, 0] < settings.error_cqi_cutoff
    residuals = np.array([])
    if keep.any():
        cqi, _ = model.predict(np.asarray(features)[keep])
        residuals = labels[keep, 0] - cqi
    error = ErrorModel.from_residuals(residuals, settings.min_residuals)
    model.error_model = error
    logger.info(f"Error model fitted on {len(residuals)} residuals: mean {error.mean:.4f}, sigma {error.sigma:.4f}")
    return error


def noisy_predict(model: SurrogateModel, features: np.ndarray, rng: np.random.Generator) -> tuple[float, int]:
    return model.noisy_predict(features, rng)
