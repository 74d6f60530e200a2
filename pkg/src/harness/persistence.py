"""Versioned files: JSON Lines logs, npz datasets, torch archives, JSON reports."""

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, TypeVar, Union

import numpy as np
import torch
from pydantic import BaseModel

from ..errors import MissingArtifactError, SchemaVersionError
from ..models import FORMAT_VERSION

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ModelT = TypeVar("ModelT", bound=BaseModel)


def _require(path: PathLike) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"File not found: {path}")
    return path


def _check_version(found: Any, path: Path) -> None:
    if found != FORMAT_VERSION:
        raise SchemaVersionError(
            f"{path} has format_version {found!r}; this toolkit reads version {FORMAT_VERSION}"
        )


def _to_json_line(record: Union[BaseModel, dict]) -> str:
    if isinstance(record, BaseModel):
        return record.model_dump_json()
    return json.dumps(record, allow_nan=True)


def write_jsonl(
    path: PathLike,
    kind: str,
    records: Iterable[Union[BaseModel, dict]],
    header: Optional[dict] = None,
) -> Path:
    """Write a header line followed by one JSON object per record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {"format": kind, "format_version": FORMAT_VERSION, **(header or {})}
    count = 0
    with path.open("w") as fh:
        fh.write(json.dumps(head) + "\n")
        for record in records:
            fh.write(_to_json_line(record) + "\n")
            count += 1
    logger.info(f"Wrote {count} {kind} records to {path}")
    return path


def read_jsonl(path: PathLike, kind: Optional[str] = None) -> tuple[dict, list[dict]]:
    """
    Read a versioned JSON Lines file.

    Returns:
        Header and records

    Raises:
        MissingArtifactError: If the file does not exist
        SchemaVersionError: If the header is missing or has an unknown version
    """
    path = _require(path)
    with path.open("r") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise SchemaVersionError(f"{path} is empty")
    header = json.loads(lines[0])
    _check_version(header.get("format_version"), path)
    if kind is not None and header.get("format") != kind:
        raise SchemaVersionError(f"{path} holds {header.get('format')!r}, expected {kind!r}")
    return header, [json.loads(line) for line in lines[1:]]


def iter_models(path: PathLike, kind: str, model: type[ModelT]) -> Iterator[ModelT]:
    """Validate every record of a JSON Lines file into ``model``."""
    _, records = read_jsonl(path, kind)
    for record in records:
        yield model.model_validate(record)


def write_json(path: PathLike, document: BaseModel) -> Path:
    """Write a pydantic document that carries its own ``format_version``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2))
    logger.info(f"Wrote {type(document).__name__} to {path}")
    return path


def read_json(path: PathLike, model: type[ModelT]) -> ModelT:
    path = _require(path)
    data = json.loads(path.read_text())
    _check_version(data.get("format_version"), path)
    return model.model_validate(data)


def save_dataset(
    path: PathLike,
    features: np.ndarray,
    labels: np.ndarray,
    variant: str,
    window: int = 1,
    scenarios: Optional[np.ndarray] = None,
) -> Path:
    """Save surrogate training data as an npz archive with header fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if len(features) != len(labels):
        raise ValueError("features and labels must have the same number of rows")
    np.savez(
        path,
        features=features,
        labels=labels,
        scenarios=scenarios if scenarios is not None else np.zeros((len(labels), 3)),
        format_version=np.int64(FORMAT_VERSION),
        width=np.int64(features.shape[-1]),
        count=np.int64(len(labels)),
        variant=np.str_(variant),
        window=np.int64(window),
    )
    logger.info(f"Saved dataset of {len(labels)} samples (width {features.shape[-1]}) to {path}")
    return path


def load_dataset(path: PathLike) -> dict[str, Any]:
    """
    Load a dataset archive.

    Returns:
        Dict with ``features``, ``labels``, ``scenarios``, ``width``,
        ``count``, ``variant`` and ``window``
    """
    path = _require(path)
    with np.load(path, allow_pickle=False) as archive:
        _check_version(int(archive["format_version"]), path)
        data = {
            "features": archive["features"],
            "labels": archive["labels"],
            "scenarios": archive["scenarios"],
            "width": int(archive["width"]),
            "count": int(archive["count"]),
            "variant": str(archive["variant"]),
            "window": int(archive["window"]),
        }
    if data["features"].shape[-1] != data["width"] or len(data["labels"]) != data["count"]:
        raise SchemaVersionError(f"{path} header does not match its arrays")
    return data


def save_archive(path: PathLike, kind: str, payload: dict[str, Any]) -> Path:
    """Save a torch archive of tensors and plain values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": kind, "format_version": FORMAT_VERSION, **payload}, path)
    logger.info(f"Saved {kind} to {path}")
    return path


def load_archive(path: PathLike, kind: str) -> dict[str, Any]:
    path = _require(path)
    payload = torch.load(path, map_location="cpu", weights_only=True)
    _check_version(payload.get("format_version"), path)
    if payload.get("format") != kind:
        raise SchemaVersionError(f"{path} holds {payload.get('format')!r}, expected {kind!r}")
    return payload
