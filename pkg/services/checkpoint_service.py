"""Binary checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u64 header length, a JSON header,
then every tensor as little-endian float64 in the order the header lists them. Writing is
deterministic, so two identical checkpoints serialise to identical bytes.
"""
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from autograd.optim import AdamState
from exceptions import CompatibilityError, DataError
from models.config import ModelConfig
from services.schemas import MetricHistory, TrainConfig, TrainerState

MAGIC = b"TRMMCKPT"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<IQ")

PARAMS = "params"
ADAM_M = "adam_m"
ADAM_V = "adam_v"
BEST_PARAMS = "best_params"
BEST_ADAM_M = "best_adam_m"
BEST_ADAM_V = "best_adam_v"


class TensorEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    section: str
    name: str
    shape: List[int]


class OptimizerHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    counts: Dict[str, int] = Field(default_factory=dict)


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int
    architecture: ModelConfig
    train_config: Optional[TrainConfig] = None
    task_names: List[str] = Field(default_factory=list)
    history: MetricHistory = Field(default_factory=MetricHistory)
    selected_step: Optional[int] = None
    optimizer: Optional[OptimizerHeader] = None
    best_optimizer: Optional[OptimizerHeader] = None
    trainer_state: Optional[TrainerState] = None
    tensors: List[TensorEntry] = Field(default_factory=list)


@dataclass
class ResumeState:
    """Everything beyond the current weights needed to continue an interrupted run."""

    trainer: TrainerState
    best_parameters: Optional[Dict[str, np.ndarray]] = None
    best_optimizer: Optional[AdamState] = None


@dataclass
class Checkpoint:
    architecture: ModelConfig
    parameters: Dict[str, np.ndarray]
    optimizer: Optional[AdamState] = None
    train_config: Optional[TrainConfig] = None
    task_names: List[str] = field(default_factory=list)
    history: MetricHistory = field(default_factory=MetricHistory)
    selected_step: Optional[int] = None
    resume: Optional[ResumeState] = None
    format_version: int = CHECKPOINT_VERSION

    @property
    def selected_metrics(self) -> Optional[Dict[str, float]]:
        if self.selected_step is None:
            return None
        return dict(self.history.at_step(self.selected_step).metrics)


def _optimizer_header(state: Optional[AdamState]) -> Optional[OptimizerHeader]:
    if state is None:
        return None
    return OptimizerHeader(
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        step=state.step, counts=dict(state.counts),
    )


def _optimizer_from(header: Optional[OptimizerHeader], m, v) -> Optional[AdamState]:
    if header is None:
        return None
    return AdamState(
        lr=header.lr, beta1=header.beta1, beta2=header.beta2, eps=header.eps,
        step=header.step, m=m, v=v, counts=dict(header.counts),
    )


def _sections(checkpoint: Checkpoint) -> List[Tuple[str, Dict[str, np.ndarray]]]:
    sections = [(PARAMS, checkpoint.parameters)]
    if checkpoint.optimizer is not None:
        sections += [(ADAM_M, checkpoint.optimizer.m), (ADAM_V, checkpoint.optimizer.v)]
    resume = checkpoint.resume
    if resume is not None:
        if resume.best_parameters is not None:
            sections.append((BEST_PARAMS, resume.best_parameters))
        if resume.best_optimizer is not None:
            sections += [(BEST_ADAM_M, resume.best_optimizer.m), (BEST_ADAM_V, resume.best_optimizer.v)]
    return sections


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    entries: List[TensorEntry] = []
    blobs: List[bytes] = []
    for section, tensors in _sections(checkpoint):
        for name, array in tensors.items():
            array = np.asarray(array, dtype=np.float64)
            entries.append(TensorEntry(section=section, name=name, shape=list(array.shape)))
            blobs.append(np.ascontiguousarray(array, dtype="<f8").tobytes())

    resume = checkpoint.resume
    header = CheckpointHeader(
        format_version=checkpoint.format_version,
        architecture=checkpoint.architecture,
        train_config=checkpoint.train_config,
        task_names=list(checkpoint.task_names),
        history=checkpoint.history,
        selected_step=checkpoint.selected_step,
        optimizer=_optimizer_header(checkpoint.optimizer),
        best_optimizer=_optimizer_header(resume.best_optimizer) if resume else None,
        trainer_state=resume.trainer if resume else None,
        tensors=entries,
    )
    header_bytes = json.dumps(
        header.model_dump(mode="json"), sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode("utf-8")
    return b"".join([MAGIC, _PREFIX.pack(checkpoint.format_version, len(header_bytes)), header_bytes, *blobs])


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> Checkpoint:
    if not payload.startswith(MAGIC):
        raise DataError(f"{source} is not a checkpoint file")
    offset = len(MAGIC)
    try:
        version, header_len = _PREFIX.unpack_from(payload, offset)
    except struct.error as e:
        raise DataError(f"{source}: truncated checkpoint prefix") from e
    if version != CHECKPOINT_VERSION:
        raise CompatibilityError(
            f"{source}: checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    offset += _PREFIX.size
    try:
        header = CheckpointHeader.model_validate_json(payload[offset:offset + header_len])
    except ValidationError as e:
        raise DataError(f"{source}: invalid checkpoint header: {e}") from e
    offset += header_len

    sections: Dict[str, Dict[str, np.ndarray]] = {}
    for entry in header.tensors:
        count = int(np.prod(entry.shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(payload):
            raise DataError(f"{source}: tensor {entry.section}/{entry.name} runs past the end of the file")
        array = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)
        sections.setdefault(entry.section, {})[entry.name] = array.reshape(entry.shape)
        offset = end
    if offset != len(payload):
        raise DataError(f"{source}: {len(payload) - offset} trailing bytes after the last tensor")

    optimizer = _optimizer_from(header.optimizer, sections.get(ADAM_M, {}), sections.get(ADAM_V, {}))
    resume = None
    if header.trainer_state is not None:
        resume = ResumeState(
            trainer=header.trainer_state,
            best_parameters=sections.get(BEST_PARAMS),
            best_optimizer=_optimizer_from(
                header.best_optimizer, sections.get(BEST_ADAM_M, {}), sections.get(BEST_ADAM_V, {})
            ),
        )
    return Checkpoint(
        architecture=header.architecture,
        parameters=sections.get(PARAMS, {}),
        optimizer=optimizer,
        train_config=header.train_config,
        task_names=header.task_names,
        history=header.history,
        selected_step=header.selected_step,
        resume=resume,
        format_version=version,
    )


class CheckpointService:
    """Reads and writes checkpoint files."""

    def save(self, checkpoint: Checkpoint, path: Path) -> Path:
        """Write atomically: a temporary sibling is renamed over the target."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(encode_checkpoint(checkpoint))
        os.replace(tmp, path)
        logger.debug(f"Checkpoint written to {path} ({len(checkpoint.parameters)} tensors)")
        return path

    def load(self, path: Path) -> Checkpoint:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"checkpoint {path} does not exist")
        checkpoint = decode_checkpoint(path.read_bytes(), source=str(path))
        logger.debug(f"Checkpoint loaded from {path}")
