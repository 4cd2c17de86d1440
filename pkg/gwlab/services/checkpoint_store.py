"""
Checkpoint persistence.

A checkpoint file is one JSON header line followed by the parameter values
as 32-bit little-endian floats in manifest order:

    {"format": "gwlab-ckpt-v1", "model_kind": ..., "config": {...},
     "vocab": [...], "manifest": [[name, shape], ...]}\\n<float32 LE bytes>
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import json
import logging

import numpy as np
from pydantic import ValidationError

from gwlab.core.config import RunConfig
from gwlab.core.exceptions import GwLabError, IncompatibleCheckpoint
from gwlab.core.numkernel import Params
from gwlab.services.dataset import Vocabulary

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gwlab-ckpt-v1"

_DTYPE = np.dtype("<f4")


@dataclass
class ModelCheckpoint:
    """
    Named parameters of one agent plus the run config and vocabulary it was trained with.

    Attributes:
        model_kind: oracle, weak_oracle, guesser or questioner.
        config: Run configuration snapshot.
        vocab: Vocabulary shared by the run.
        params: Ordered parameter dict (float64 in memory).
    """

    model_kind: str
    config: RunConfig
    vocab: Vocabulary
    params: Params

    def manifest(self) -> List[List]:
        return [[name, list(value.shape)] for name, value in self.params.items()]

    def subset(self, prefixes: Sequence[str]) -> Params:
        """Parameters whose names start with any of ``prefixes``."""
        return {name: value for name, value in self.params.items() if name.startswith(tuple(prefixes))}


def save_checkpoint(path: Path, checkpoint: ModelCheckpoint) -> None:
    """
    Write a checkpoint file.

    Args:
        path: Destination path.
        checkpoint: Checkpoint to persist.

    Raises:
        GwLabError: If the file cannot be written.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "model_kind": checkpoint.model_kind,
        "config": checkpoint.config.model_dump(mode="json"),
        "vocab": list(checkpoint.vocab.tokens),
        "manifest": checkpoint.manifest(),
    }
    body = b"".join(np.ascontiguousarray(v, dtype=_DTYPE).tobytes() for v in checkpoint.params.values())
    try:
        with open(path, "wb") as handle:
            handle.write(json.dumps(header).encode("utf-8") + b"\n")
            handle.write(body)
    except OSError as e:
        msg = f"Failed to write checkpoint {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)
    logger.info(f"Saved {checkpoint.model_kind} checkpoint to {path} ({len(checkpoint.params)} tensors)")


def load_checkpoint(path: Path, expected_kind: Optional[Sequence[str]] = None) -> ModelCheckpoint:
    """
    Read a checkpoint file; nothing is returned unless every check passes.

    Args:
        path: Checkpoint path.
        expected_kind: Accepted model kinds, if restricted.

    Returns:
        Loaded checkpoint with float64 parameters.

    Raises:
        IncompatibleCheckpoint: Wrong format string, unexpected model kind,
            malformed header, or a body that does not match the manifest.
        GwLabError: If the file cannot be read.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        msg = f"Failed to read checkpoint {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)

    newline = raw.find(b"\n")
    if newline < 0:
        raise IncompatibleCheckpoint(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise IncompatibleCheckpoint(f"{path}: unreadable checkpoint header")
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        found = header.get("format") if isinstance(header, dict) else None
        msg = f"{path}: unsupported checkpoint format {found!r} (expected {CHECKPOINT_FORMAT!r})"
        logger.error(msg)
        raise IncompatibleCheckpoint(msg)

    kind = header.get("model_kind")
    if expected_kind is not None and kind not in expected_kind:
        raise IncompatibleCheckpoint(f"{path}: expected a {'/'.join(expected_kind)} checkpoint, found {kind!r}")

    try:
        config = RunConfig.model_validate(header["config"])
        vocab = Vocabulary(tokens=header["vocab"])
        manifest = [(str(name), tuple(int(s) for s in shape)) for name, shape in header["manifest"]]
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise IncompatibleCheckpoint(f"{path}: malformed checkpoint header ({str(e)})")

    body = raw[newline + 1 :]
    expected = sum(int(np.prod(shape)) for _, shape in manifest)
    if len(body) != expected * _DTYPE.itemsize:
        msg = f"{path}: body holds {len(body)} bytes but the manifest needs {expected * _DTYPE.itemsize}"
        logger.error(msg)
        raise IncompatibleCheckpoint(msg)

    values = np.frombuffer(body, dtype=_DTYPE)
    params: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in manifest:
        count = int(np.prod(shape))
        params[name] = values[offset : offset + count].astype(np.float64).reshape(shape)
        offset += count

    return ModelCheckpoint(model_kind=kind, config=config, vocab=vocab, params=params)


def check_shapes(checkpoint: ModelCheckpoint, shapes: Dict[str, tuple]) -> None:
    """
    Verify that a checkpoint carries exactly the expected tensors.

    Raises:
        IncompatibleCheckpoint: On a missing tensor or a shape mismatch.
    """
    for name, shape in shapes.items():
        value = checkpoint.params.get(name)
        if value is None:
            raise IncompatibleCheckpoint(f"{checkpoint.model_kind} checkpoint lacks tensor '{name}'")
        if tuple(value.shape) != tuple(shape):
            raise IncompatibleCheckpoint(
                f"tensor '{name}' has shape {tuple(value.shape)}, expected {tuple(shape)}"
            )


def require_same_vocab(*checkpoints: ModelCheckpoint) -> Vocabulary:
    """
    Return the vocabulary shared by all checkpoints.

    Raises:
        IncompatibleCheckpoint: If any two vocabularies differ.
    """
    vocab = checkpoints[0].vocab
    for other in checkpoints[1:]:
        if other.vocab.tokens != vocab.tokens:
            msg = f"{other.model_kind} checkpoint vocabulary differs from {checkpoints[0].model_kind}"
            logger.error(msg)
            raise IncompatibleCheckpoint(msg)
    return vocab
