"""
Application configuration and settings.

Process-level knobs (log level, worker count, master-seed fallback) come from
the environment through Pydantic Settings. Experiment knobs live in a
RunConfig that is loaded from a strict ``key = value`` file and overridden by
CLI flags.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional
import logging
import os

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from gwlab.core.exceptions import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.

    All settings can be overridden by ``GWLAB_``-prefixed environment variables
    or a local ``.env`` file.
    """

    app_name: str = "gwlab"
    app_version: str = "1.0.0"

    # Master seed fallback when neither a flag nor the config file sets one
    seed: int = 0

    log_level: str = "info"

    # 0 means "use every available core"
    jobs: int = 0

    show_progress: bool = False

    def resolve_jobs(self, requested: Optional[int] = None) -> int:
        """
        Resolve the worker count for self-play and sweeps.

        Args:
            requested: Explicit --jobs value, if given.

        Returns:
            Positive worker count.
        """
        jobs = requested if requested is not None else self.jobs
        if jobs <= 0:
            return os.cpu_count() or 1
        return jobs

    model_config = SettingsConfigDict(
        env_prefix="GWLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


class GuesserVariant(str, Enum):
    """Where the answer enters the Guesser graph."""

    POST_FUSION = "post_fusion"
    PRE_CONCATENATION = "pre_concatenation"


class OptimizerKind(str, Enum):
    """Supported optimizer update rules."""

    SGD = "sgd"
    ADAMW = "adamw"


class RunConfig(BaseModel):
    """
    Experiment configuration shared by training, self-play and analysis.

    Defaults are desk-scale: they train each agent to its accuracy bar on about
    a thousand 8-object games. The published sizes (512/768 hidden, 128 answer
    embedding, 512 word embedding) are reachable through the same keys.
    """

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    # Encoder
    hidden_size: int = Field(default=32, ge=2, description="Encoder hidden size d")
    layer_count: int = Field(default=1, ge=0, le=1, description="Co-attention blocks (0 or 1)")

    # Oracle head
    category_embed_size: int = Field(default=16, ge=1)
    oracle_hidden_size: int = Field(default=64, ge=1)

    # Guesser / state estimator
    answer_embed_size: int = Field(default=16, ge=1)
    guesser_head_hidden: int = Field(default=32, ge=0, description="0 selects a linear d->1 head")
    alpha: float = Field(default=0.9, ge=0.0, le=1.0, description="State accumulation coefficient")
    guesser_variant: GuesserVariant = GuesserVariant.PRE_CONCATENATION
    per_turn_supervision: bool = False

    # Questioner
    word_embed_size: int = Field(default=64, ge=1)
    freeze_estimator: bool = True
    sample_questions: bool = False
    max_turns: int = Field(default=5, ge=1)
    max_question_len: int = Field(default=12, ge=2)

    # Optimization
    seed: Optional[int] = None
    optimizer: OptimizerKind = OptimizerKind.ADAMW
    learning_rate: float = Field(default=0.005, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    epochs: int = Field(default=40, ge=1)
    batch_size: int = Field(default=16, ge=1)
    patience: int = Field(default=8, ge=1, description="Epochs without a better valid score before stopping")
    success_only: bool = True
    min_freq: int = Field(default=1, ge=1)

    # Synthetic world
    n_objects_min: int = Field(default=3, ge=2, le=20)
    n_objects_max: int = Field(default=8, ge=2, le=20)
    n_categories: int = Field(default=10, ge=1, le=10)
    n_colors: int = Field(default=8, ge=1, le=8)
    force_duplicate: bool = True

    # Agent variants used by the engine and the post-analysis experiments
    noisy_oracle_epsilon: float = Field(default=0.3, ge=0.0, le=1.0)
    weak_oracle_epsilon: float = Field(default=0.0, ge=0.0, le=1.0)
    rule_guesser_trust: float = Field(default=0.98, gt=0.5, le=1.0)

    @model_validator(mode="after")
    def _check_object_bounds(self) -> "RunConfig":
        if self.n_objects_min > self.n_objects_max:
            raise ValueError("n_objects_min must not exceed n_objects_max")
        return self

    def resolved_seed(self) -> int:
        """Seed from the config file, falling back to GWLAB_SEED."""
        return self.seed if self.seed is not None else settings.seed

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """
        Return a copy with CLI flag values applied (flags win).

        Args:
            **overrides: Field values; ``None`` means "flag not given".

        Returns:
            Validated RunConfig.

        Raises:
            ConfigError: If an override is out of range.
        """
        updates = {k: v for k, v in overrides.items() if v is not None}
        if not updates:
            return self
        return _validate({**self.model_dump(), **updates})


def _validate(values: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or None
        msg = f"Invalid configuration value for '{key}': {first['msg']}" if key else f"Invalid configuration: {first['msg']}"
        logger.error(msg)
        raise ConfigError(msg, key=key)


def load_config(path: Path) -> RunConfig:
    """
    Load a strict ``key = value`` run configuration file.

    Blank lines and ``#`` comments are ignored. Unknown keys and repeated keys
    are rejected.

    Args:
        path: Configuration file path.

    Returns:
        Validated RunConfig; an empty file yields all defaults.

    Raises:
        ConfigError: On unreadable files, syntax errors, unknown or duplicate
            keys, and out-of-range values.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        msg = f"Failed to read config {path}: {str(e)}"
        logger.error(msg)
        raise ConfigError(msg)

    known = set(RunConfig.model_fields)
    values: Dict[str, str] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{raw.strip()}'")

        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'", key=key)
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate config key '{key}'", key=key)
        values[key] = value

    config = _validate(values)
    logger.info(f"Loaded run config from {path} ({len(values)} keys set)")
    return config


# Global settings instance
settings = Settings()
