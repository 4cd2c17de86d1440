"""
Game engine: wires a questioner, an oracle and a guesser together and plays
full games, either machine-only (self-play) or with a human at the terminal.

Every game draws its random streams from (master seed, game id), so logs do
not depend on execution order or worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Mapping, NamedTuple, Optional, Sequence
import logging

import numpy as np

from gwlab.core.exceptions import GwLabError, IncompatibleCheckpoint, InvalidTarget
from gwlab.models.schemas import AnswerClass, GameRecord, GameStatus, QuestionKind, Scene
from gwlab.services.checkpoint_store import ModelCheckpoint, require_same_vocab
from gwlab.services.dataset import append_log, read_log, write_log
from gwlab.services.guesser_agent import GuesserAgent, game_seed
from gwlab.services.oracle_agent import WEAK_ORACLE_KIND, TrainedOracle
from gwlab.services.questioner_agent import QuestionerAgent, QuestionerSession
from gwlab.services.world import ScriptedQuestioner, render_scene_text, rule_answer
from gwlab.utils.grammar import parse_question, render_question

logger = logging.getLogger(__name__)

__all__ = [
    "GameSetup",
    "GameWiring",
    "HumanTerminalQuestioner",
    "NoisyRuleOracle",
    "RuleOracle",
    "ScriptedQuestionerAgent",
    "WeakOracle",
    "interactive_play",
    "play_game",
    "read_log",
    "self_play",
    "setups_from_games",
    "setups_from_targets",
    "write_log",
]

PromptFn = Callable[[str], str]
EchoFn = Callable[[str], None]


class RuleOracle:
    """Answers from ground truth through the template grammar."""

    name = "rule"

    def answer(
        self,
        scene: Scene,
        target_id: int,
        question: str,
        rng: Optional[np.random.Generator] = None,
    ) -> AnswerClass:
        return rule_answer(scene, target_id, parse_question(question))


class NoisyRuleOracle(RuleOracle):
    """
    Rule oracle that flips yes/no with probability ``epsilon``.

    n/a answers are never flipped.
    """

    name = "noisy"

    def __init__(self, epsilon: float) -> None:
        self.epsilon = epsilon

    def answer(
        self,
        scene: Scene,
        target_id: int,
        question: str,
        rng: Optional[np.random.Generator] = None,
    ) -> AnswerClass:
        answer = super().answer(scene, target_id, question)
        if answer is AnswerClass.NA or rng is None:
            return answer
        if rng.random() < self.epsilon:
            return AnswerClass.NO if answer is AnswerClass.YES else AnswerClass.YES
        return answer


class WeakOracle(TrainedOracle):
    """Trained oracle restricted to weak checkpoints (question and category only)."""

    def __init__(self, checkpoint: ModelCheckpoint, epsilon: float = 0.0) -> None:
        if checkpoint.model_kind != WEAK_ORACLE_KIND:
            raise IncompatibleCheckpoint(f"expected a {WEAK_ORACLE_KIND} checkpoint, found {checkpoint.model_kind!r}")
        super().__init__(checkpoint, epsilon=epsilon)


class _ScriptedSession(QuestionerSession):
    def __init__(self, scene: Scene, rng: np.random.Generator) -> None:
        self.script = ScriptedQuestioner(scene, rng)

    def next_question(self, turn: int) -> str:
        semantics = self.script.next_question()
        if semantics is None:
            semantics = self.script.confirmation_question(turn)
        return render_question(semantics)

    def observe(self, question: str, answer: AnswerClass) -> None:
        semantics = parse_question(question)
        if semantics.kind is not QuestionKind.UNPARSEABLE:
            self.script.observe(semantics, answer)


class ScriptedQuestionerAgent(QuestionerAgent):
    """Target-unaware greedy splitter over the template grammar."""

    name = "scripted"

    def new_session(self, scene: Scene, rng: np.random.Generator) -> QuestionerSession:
        return _ScriptedSession(scene, rng)


class _HumanSession(QuestionerSession):
    def __init__(self, prompt: PromptFn) -> None:
        self.prompt = prompt

    def next_question(self, turn: int) -> str:
        while True:
            question = self.prompt(f"question {turn + 1}: ").strip()
            if question:
                return question

    def observe(self, question: str, answer: AnswerClass) -> None:
        return None


class HumanTerminalQuestioner(QuestionerAgent):
    """Free-text questions typed at the terminal."""

    name = "human"

    def __init__(self, prompt: PromptFn = input) -> None:
        self.prompt = prompt

    def new_session(self, scene: Scene, rng: np.random.Generator) -> QuestionerSession:
        return _HumanSession(self.prompt)


@dataclass
class GameWiring:
    """
    The three agents of a game.

    Attributes:
        oracle: Object with ``answer(scene, target_id, question, rng)``.
        guesser: GuesserAgent.
        questioner: QuestionerAgent.
    """

    oracle: object
    guesser: GuesserAgent
    questioner: QuestionerAgent

    def checkpoints(self) -> List[ModelCheckpoint]:
        found = []
        for agent in (self.oracle, self.guesser, self.questioner):
            checkpoint = getattr(agent, "checkpoint", None)
            if checkpoint is not None:
                found.append(checkpoint)
        return found

    def validate(self) -> None:
        """
        Raises:
            IncompatibleCheckpoint: If the wired checkpoints use different vocabularies.
        """
        checkpoints = self.checkpoints()
        if len(checkpoints) > 1:
            require_same_vocab(*checkpoints)

    def label(self) -> str:
        return f"{getattr(self.oracle, 'name', 'oracle')}/{self.guesser.name}/{self.questioner.name}"


class GameSetup(NamedTuple):
    """Scene, target and id of one game to play."""

    game_id: str
    scene: Scene
    target_id: int


def setups_from_targets(scenes: Sequence[Scene], targets: Sequence[int]) -> List[GameSetup]:
    """One game per scene with id ``g-<scene_id>``."""
    return [GameSetup(f"g-{scene.scene_id}", scene, int(target)) for scene, target in zip(scenes, targets)]


def setups_from_games(games: Sequence[GameRecord], scenes: Mapping[str, Scene]) -> List[GameSetup]:
    """Replay the scene, target and id of logged games."""
    setups = []
    for game in games:
        scene = scenes.get(game.scene_id)
        if scene is None:
            raise GwLabError(f"game {game.game_id} references unknown scene {game.scene_id}")
        setups.append(GameSetup(game.game_id, scene, game.target_id))
    return setups


def play_game(
    setup: GameSetup,
    wiring: GameWiring,
    max_turns: int,
    master_seed: int,
    record_beliefs: bool = True,
) -> GameRecord:
    """
    Play one machine game.

    The belief starts uniform; each turn the questioner asks, the oracle
    answers and the guesser updates its belief. The final guess is the
    argmax of the last belief.

    Raises:
        InvalidTarget: If the target is not an object of the scene.
    """
    scene, target_id = setup.scene, setup.target_id
    if not 0 <= target_id < len(scene.objects):
        raise InvalidTarget(f"target {target_id} is not an object of scene {scene.scene_id}")

    oracle_seq, questioner_seq, guesser_seq = game_seed(master_seed, setup.game_id).spawn(3)
    oracle_rng = np.random.default_rng(oracle_seq)
    asker = wiring.questioner.new_session(scene, np.random.default_rng(questioner_seq))
    tracker = wiring.guesser.new_session(scene, np.random.default_rng(guesser_seq))

    turns = []
    for turn in range(max_turns):
        question = asker.next_question(turn)
        answer = wiring.oracle.answer(scene, target_id, question, oracle_rng)
        asker.observe(question, answer)
        tracker.observe(question, answer)
        turns.append((question, answer))

    guess = tracker.guess()
    return GameRecord(
        game_id=setup.game_id,
        scene_id=scene.scene_id,
        target_id=target_id,
        turns=turns,
        guess=guess,
        status=GameStatus.SUCCESS if guess == target_id else GameStatus.FAILURE,
        beliefs=[[float(x) for x in b] for b in tracker.trajectory] if record_beliefs else None,
    )


def self_play(
    wiring: GameWiring,
    setups: Sequence[GameSetup],
    max_turns: int,
    master_seed: int,
    jobs: int = 1,
    record_beliefs: bool = True,
) -> List[GameRecord]:
    """
    Play every game with the wired agents.

    Args:
        wiring: Oracle, guesser and questioner.
        setups: Games to play.
        max_turns: Questions per game.
        master_seed: Seed from which every per-game stream is derived.
        jobs: Worker threads.
        record_beliefs: Store the guesser's belief trajectory in each record.

    Returns:
        Game records in the order of ``setups``.

    Raises:
        IncompatibleCheckpoint: If the wired checkpoints disagree on the vocabulary.
    """
    wiring.validate()
    logger.info(f"Self-play: {len(setups)} games with {wiring.label()} (max_turns={max_turns}, jobs={jobs})")

    def play(setup: GameSetup) -> GameRecord:
        return play_game(setup, wiring, max_turns, master_seed, record_beliefs)

    if jobs > 1 and len(setups) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            games = list(pool.map(play, setups))
    else:
        games = [play(setup) for setup in setups]

    for game in games:
        wiring.questioner.record_outcome(game)
    successes = sum(1 for g in games if g.status is GameStatus.SUCCESS)
    logger.info(f"Self-play finished: {successes}/{len(games)} successful")
    return games


def _read_answer(prompt: PromptFn, echo: EchoFn) -> AnswerClass:
    while True:
        raw = prompt("answer [yes/no/na]: ").strip().lower()
        if raw == "na":
            return AnswerClass.NA
        try:
            return AnswerClass.parse(raw)
        except ValueError:
            echo("please answer yes, no or na")


def interactive_play(
    role: str,
    wiring: GameWiring,
    setup: GameSetup,
    max_turns: int,
    master_seed: int,
    prompt: PromptFn = input,
    echo: EchoFn = print,
    log_path=None,
) -> GameRecord:
    """
    Play one game with a human in the oracle or questioner seat.

    As oracle the human answers the machine's questions about the announced
    target; as questioner the human types questions answered by the wired
    oracle. Invalid answers are re-prompted and never recorded.

    Args:
        role: "oracle" or "questioner".
        wiring: Agents for the machine seats.
        setup: Scene, target and game id.
        max_turns: Questions per game.
        master_seed: Seed of the per-game streams.
        prompt: Reads one line from the human.
        echo: Shows one line to the human.
        log_path: When given, the finished game is appended to this log.

    Returns:
        The recorded game.

    Raises:
        GwLabError: On an unknown role.
        InvalidTarget: If the target is not an object of the scene.
    """
    if role not in ("oracle", "questioner"):
        raise GwLabError(f"unknown role '{role}' (expected oracle or questioner)")

    scene, target_id = setup.scene, setup.target_id
    if not 0 <= target_id < len(scene.objects):
        raise InvalidTarget(f"target {target_id} is not an object of scene {scene.scene_id}")
    oracle_seq, questioner_seq, guesser_seq = game_seed(master_seed, setup.game_id).spawn(3)
    oracle_rng = np.random.default_rng(oracle_seq)
    questioner = wiring.questioner if role == "oracle" else HumanTerminalQuestioner(prompt)
    asker = questioner.new_session(scene, np.random.default_rng(questioner_seq))
    tracker = wiring.guesser.new_session(scene, np.random.default_rng(guesser_seq))

    echo(render_scene_text(scene))
    if role == "oracle":
        echo(f"target: object {target_id}")

    turns = []
    for turn in range(max_turns):
        question = asker.next_question(turn)
        if role == "oracle":
            echo(f"Q{turn + 1}: {question}")
            answer = _read_answer(prompt, echo)
        else:
            answer = wiring.oracle.answer(scene, target_id, question, oracle_rng)
            echo(f"A{turn + 1}: {answer.value}")
        asker.observe(question, answer)
        tracker.observe(question, answer)
        turns.append((question, answer))

    guess = tracker.guess()
    status = GameStatus.SUCCESS if guess == target_id else GameStatus.FAILURE
    echo(f"guess: object {guess} ({status.value})")
    game = GameRecord(
        game_id=setup.game_id,
        scene_id=scene.scene_id,
        target_id=target_id,
        turns=turns,
        guess=guess,
        status=status,
    )
    if log_path is not None:
        append_log(game, log_path)
    return game
