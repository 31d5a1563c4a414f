import struct

import numpy as np
import pytest

from autograd import AdamState
from exceptions import CompatibilityError, DataError
from services.checkpoint_service import (
    CHECKPOINT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointService,
    ResumeState,
    decode_checkpoint,
    encode_checkpoint,
)
from services.schemas import MetricHistory, TrainConfig, TrainerState


@pytest.fixture
def checkpoint(model):
    """A checkpoint carrying every optional section."""
    params = model.state_dict()
    rng = np.random.default_rng(5)
    optimizer = AdamState(
        lr=0.01, step=3,
        m={k: rng.normal(size=v.shape) for k, v in params.items()},
        v={k: rng.uniform(size=v.shape) for k, v in params.items()},
        counts={k: 3 for k in params},
    )
    history = MetricHistory()
    history.add(0, 0, {"caption": 0.25, "qa": 0.5})
    history.add(6, 1, {"caption": 0.5, "qa": 0.75})
    history.train_losses.append({"caption": 1.5})
    return Checkpoint(
        architecture=model.config,
        parameters=params,
        optimizer=optimizer,
        train_config=TrainConfig(batch_size=4, seed=3),
        task_names=["caption", "qa"],
        history=history,
        selected_step=6,
        resume=ResumeState(
            trainer=TrainerState(step=6, best_step=6, best_value=0.625),
            best_parameters={k: v + 1.0 for k, v in params.items()},
            best_optimizer=optimizer.copy(),
        ),
    )


def test_round_trip_is_bit_exact(checkpoint):
    payload = encode_checkpoint(checkpoint)
    decoded = decode_checkpoint(payload)
    assert encode_checkpoint(decoded) == payload
    for name, value in checkpoint.parameters.items():
        np.testing.assert_array_equal(decoded.parameters[name], value)
        np.testing.assert_array_equal(decoded.optimizer.m[name], checkpoint.optimizer.m[name])
        np.testing.assert_array_equal(decoded.resume.best_parameters[name], checkpoint.resume.best_parameters[name])
    assert decoded.architecture == checkpoint.architecture
    assert decoded.train_config == checkpoint.train_config
    assert decoded.optimizer.counts == checkpoint.optimizer.counts
    assert decoded.resume.trainer == checkpoint.resume.trainer


def test_parameters_only_checkpoint(model):
    decoded = decode_checkpoint(encode_checkpoint(Checkpoint(architecture=model.config, parameters=model.state_dict())))
    assert decoded.optimizer is None
    assert decoded.resume is None
    assert decoded.selected_metrics is None


def test_selected_metrics_come_from_history(checkpoint):
    assert checkpoint.selected_metrics == {"caption": 0.5, "qa": 0.75}


def test_encoding_is_deterministic(checkpoint):
    assert encode_checkpoint(checkpoint) == encode_checkpoint(checkpoint)


def test_foreign_bytes_are_rejected():
    with pytest.raises(DataError):
        decode_checkpoint(b"PK\x03\x04 not a checkpoint")


def test_version_mismatch_names_both_versions(checkpoint):
    payload = bytearray(encode_checkpoint(checkpoint))
    payload[len(MAGIC):len(MAGIC) + 4] = struct.pack("<I", CHECKPOINT_VERSION + 1)
    with pytest.raises(CompatibilityError) as excinfo:
        decode_checkpoint(bytes(payload))
    assert str(CHECKPOINT_VERSION + 1) in str(excinfo.value)
    assert str(CHECKPOINT_VERSION) in str(excinfo.value)


@pytest.mark.parametrize("mutate", [lambda p: p[:-8], lambda p: p + b"\x00", lambda p: p[:10]])
def test_truncated_or_padded_payloads_are_rejected(checkpoint, mutate):
    with pytest.raises(DataError):
        decode_checkpoint(mutate(encode_checkpoint(checkpoint)))


def test_service_writes_atomically(checkpoint, tmp_path):
    service = CheckpointService()
    path = service.save(checkpoint, tmp_path / "run" / "model.ckpt")
    assert path.is_file()
    assert not (tmp_path / "run" / "model.ckpt.tmp").exists()
    assert encode_checkpoint(service.load(path)) == path.read_bytes()


def test_loading_a_missing_checkpoint_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        CheckpointService().load(tmp_path / "absent.ckpt")
