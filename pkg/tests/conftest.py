"""
Pytest configuration and fixtures for testing.

This module provides shared fixtures for unit and integration tests,
including a tiny run configuration, seeded scenes with gold dialogs, a
hand-built mirrored scene and factories for game records and parameters.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pytest
from faker import Faker

from gwlab.core.config import RunConfig
from gwlab.core.numkernel import Params
from gwlab.models.schemas import AnswerClass, GameRecord, GameStatus, Scene, SceneObject
from gwlab.services.dataset import ANSWER_TOKENS, Vocabulary, build_vocab
from gwlab.services.world import SceneSpec, generate_gold_games, generate_scenes, index_scenes

# Initialize Faker for generating test data
fake = Faker()

WORLD_SEED = 7


@pytest.fixture
def tiny_config() -> RunConfig:
    """
    Desk-scale run configuration small enough for finite-difference checks.

    Returns:
        RunConfig with hidden size 4 and two short epochs.
    """
    return RunConfig(
        hidden_size=4,
        category_embed_size=3,
        oracle_hidden_size=3,
        answer_embed_size=3,
        guesser_head_hidden=3,
        word_embed_size=3,
        max_question_len=6,
        epochs=2,
        batch_size=4,
        seed=0,
    )


@pytest.fixture(scope="session")
def scenes() -> List[Scene]:
    """Twelve seeded scenes with the default generation bounds."""
    return generate_scenes(SceneSpec(), 12, WORLD_SEED)


@pytest.fixture(scope="session")
def scene_index(scenes) -> Dict[str, Scene]:
    return index_scenes(scenes)


@pytest.fixture(scope="session")
def gold_games(scenes) -> List[GameRecord]:
    """One scripted gold dialog per scene."""
    return generate_gold_games(scenes, WORLD_SEED, max_turns=5)


@pytest.fixture(scope="session")
def vocab(gold_games) -> Vocabulary:
    return build_vocab(gold_games, extra_tokens=ANSWER_TOKENS)


@pytest.fixture
def mirrored_scene() -> Scene:
    """
    Two identical red persons mirrored across the vertical axis.

    Returns:
        Scene whose objects differ only in horizontal position.
    """
    return Scene(
        scene_id="mirror",
        objects=[
            SceneObject(id=0, category="person", color="red", size_class="medium", bbox=(0.1, 0.4, 0.3, 0.6)),
            SceneObject(id=1, category="person", color="red", size_class="medium", bbox=(0.7, 0.4, 0.9, 0.6)),
        ],
    )


@pytest.fixture
def make_game() -> Callable[..., GameRecord]:
    """
    Factory for completed game records.

    Returns:
        Function building a GameRecord whose status follows the guess.
    """

    def _make(
        turns: Sequence[Tuple[str, str]],
        target_id: int = 0,
        guess: Optional[int] = None,
        scene_id: Optional[str] = None,
        game_id: Optional[str] = None,
    ) -> GameRecord:
        final = target_id if guess is None else guess
        return GameRecord(
            game_id=game_id or fake.uuid4(),
            scene_id=scene_id or fake.lexify("s????"),
            target_id=target_id,
            turns=[(question, AnswerClass.parse(answer)) for question, answer in turns],
            guess=final,
            status=GameStatus.SUCCESS if final == target_id else GameStatus.FAILURE,
        )

    return _make


@pytest.fixture
def spread_params() -> Callable[[Dict[str, tuple], int], Params]:
    """
    Factory for normal(0, 0.5) parameters.

    Wider than the training initialization so finite differences see
    gradients well above rounding noise.
    """

    def _make(shapes: Dict[str, tuple], seed: int) -> Params:
        rng = np.random.default_rng(seed)
        return {name: rng.normal(0.0, 0.5, size=shape) for name, shape in shapes.items()}

    return _make
