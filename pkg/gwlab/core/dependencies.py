"""
Shared builders for the command groups.

Every subcommand resolves its run configuration, vocabulary and agents
through these functions so that flag handling stays uniform.
"""

from pathlib import Path
from typing import Optional, Sequence
import logging

from gwlab.core.config import RunConfig, load_config
from gwlab.core.exceptions import GwLabError
from gwlab.models.schemas import GameRecord
from gwlab.services.checkpoint_store import load_checkpoint
from gwlab.services.dataset import ANSWER_TOKENS, Vocabulary, build_vocab
from gwlab.services.engine import NoisyRuleOracle, RuleOracle, ScriptedQuestionerAgent, WeakOracle
from gwlab.services.guesser_agent import (
    GUESSER_KIND,
    GuesserAgent,
    RuleGuesser,
    SpatialPriorGuesser,
    TrainedGuesser,
    UniformRandomGuesser,
)
from gwlab.services.oracle_agent import ORACLE_KIND, WEAK_ORACLE_KIND, TrainedOracle
from gwlab.services.questioner_agent import QUESTIONER_KIND, QuestionerAgent, TrainedQuestioner

logger = logging.getLogger(__name__)

ORACLE_CHOICES = ("rule", "noisy", "trained", "weak")
GUESSER_CHOICES = ("trained", "random", "rule", "spatial")
QUESTIONER_CHOICES = ("scripted", "trained")


def get_run_config(config_path: Optional[Path] = None, **overrides) -> RunConfig:
    """
    Run configuration from an optional file plus flag overrides.

    Args:
        config_path: ``key = value`` file, if given.
        **overrides: Flag values; ``None`` means the flag was not given.

    Returns:
        Validated RunConfig.
    """
    base = load_config(config_path) if config_path is not None else RunConfig()
    return base.with_overrides(**overrides)


def get_vocab(games: Sequence[GameRecord], config: RunConfig) -> Vocabulary:
    """Run vocabulary, always reserving the answer words."""
    return build_vocab(games, min_freq=config.min_freq, extra_tokens=ANSWER_TOKENS)


def _require(path: Optional[Path], flag: str, agent: str) -> Path:
    if path is None:
        raise GwLabError(f"{agent} needs {flag}")
    return path


def get_oracle(kind: str, config: RunConfig, checkpoint_path: Optional[Path] = None):
    """
    Oracle by CLI name: rule, noisy, trained or weak.

    Raises:
        GwLabError: On an unknown kind or a missing checkpoint path.
    """
    if kind == "rule":
        return RuleOracle()
    if kind == "noisy":
        return NoisyRuleOracle(config.noisy_oracle_epsilon)
    if kind == "trained":
        path = _require(checkpoint_path, "--oracle-ckpt", "the trained oracle")
        return TrainedOracle(load_checkpoint(path, expected_kind=[ORACLE_KIND]))
    if kind == "weak":
        path = _require(checkpoint_path, "--oracle-ckpt", "the weak oracle")
        return WeakOracle(load_checkpoint(path, expected_kind=[WEAK_ORACLE_KIND]), epsilon=config.weak_oracle_epsilon)
    raise GwLabError(f"unknown oracle '{kind}' (expected one of {', '.join(ORACLE_CHOICES)})")


def get_guesser(kind: str, config: RunConfig, checkpoint_path: Optional[Path] = None) -> GuesserAgent:
    """
    Guesser by CLI name: trained, random, rule or spatial.

    Raises:
        GwLabError: On an unknown kind or a missing checkpoint path.
    """
    if kind == "trained":
        path = _require(checkpoint_path, "--guesser-ckpt", "the trained guesser")
        return TrainedGuesser(load_checkpoint(path, expected_kind=[GUESSER_KIND]))
    if kind == "random":
        return UniformRandomGuesser()
    if kind == "rule":
        return RuleGuesser(trust=config.rule_guesser_trust, alpha=config.alpha)
    if kind == "spatial":
        return SpatialPriorGuesser()
    raise GwLabError(f"unknown guesser '{kind}' (expected one of {', '.join(GUESSER_CHOICES)})")


def get_questioner(kind: str, config: RunConfig, checkpoint_path: Optional[Path] = None) -> QuestionerAgent:
    """
    Questioner by CLI name: scripted or trained.

    Raises:
        GwLabError: On an unknown kind or a missing checkpoint path.
    """
    if kind == "scripted":
        return ScriptedQuestionerAgent()
    if kind == "trained":
        path = _require(checkpoint_path, "--questioner-ckpt", "the trained questioner")
        return TrainedQuestioner(load_checkpoint(path, expected_kind=[QUESTIONER_KIND]), sample=config.sample_questions)
    raise GwLabError(f"unknown questioner '{kind}' (expected one of {', '.join(QUESTIONER_CHOICES)})")
