"""
Game-log ingestion, vocabulary construction and scene-disjoint splits.

The JSON-lines game log is the single exchange format for training data,
self-play output and analysis input.
"""

from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple
import json
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from gwlab.core.exceptions import GwLabError, InvalidSpec, ParseError, SchemaError
from gwlab.models.schemas import AnswerClass, DatasetStatistics, GameRecord, GameStatus
from gwlab.utils.strings import tokenize

logger = logging.getLogger(__name__)

PAD, SOS, EOS, UNK, CLS = "[PAD]", "[SOS]", "[EOS]", "[UNK]", "[CLS]"
SPECIAL_TOKENS: List[str] = [PAD, SOS, EOS, UNK, CLS]

ANSWER_TOKENS: List[str] = [answer.word for answer in AnswerClass]

DEFAULT_RATIOS: Tuple[float, float, float] = (0.70, 0.15, 0.15)


def load_games(path: Path) -> List[GameRecord]:
    """
    Load a game-log JSON-lines file in line order.

    Args:
        path: Path to the log.

    Returns:
        Parsed records; an empty file yields an empty list.

    Raises:
        ParseError: For malformed JSON or fields on a line.
        SchemaError: For a record that violates the game invariants.
        GwLabError: If the file cannot be read.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        msg = f"Failed to read game log {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)

    games: List[GameRecord] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: malformed JSON ({e.msg})", line=lineno)
        try:
            games.append(GameRecord.model_validate(payload))
        except ValidationError as e:
            first = e.errors()[0]
            if first["type"] == "game_invariant":
                raise SchemaError(f"{path}: {first['msg']}", line=lineno)
            location = ".".join(str(part) for part in first["loc"])
            raise ParseError(f"{path}: field '{location}': {first['msg']}", line=lineno)
    logger.info(f"Loaded {len(games)} games from {path}")
    return games


def write_log(games: Iterable[GameRecord], path: Path) -> None:
    """
    Write games as JSON-lines in the fixed field order.

    Raises:
        GwLabError: If the file cannot be written.
    """
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for game in games:
                handle.write(game.to_json_line() + "\n")
    except OSError as e:
        msg = f"Failed to write game log {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)


def append_log(game: GameRecord, path: Path) -> None:
    """Append one game to a log, creating the file if needed."""
    try:
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(game.to_json_line() + "\n")
    except OSError as e:
        msg = f"Failed to append to game log {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)


read_log = load_games


class Vocabulary(BaseModel):
    """Frozen token list with the five specials at indices 0-4."""

    model_config = ConfigDict(frozen=True)

    tokens: List[str] = Field(..., description="Ordered tokens, specials first")
    _index: Dict[str, int] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._index.update({token: i for i, token in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def index_of(self, token: str) -> int:
        """Index of a token, or of [UNK] when unknown."""
        return self._index.get(token, self._index[UNK])

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def pad(self) -> int:
        return 0

    @property
    def sos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    @property
    def unk(self) -> int:
        return 3

    @property
    def cls(self) -> int:
        return 4


def build_vocab(
    games: Iterable[GameRecord],
    min_freq: int = 1,
    extra_tokens: Sequence[str] = (),
) -> Vocabulary:
    """
    Build a vocabulary from the questions of a game log.

    Tokens are lowercased whitespace splits with the terminal '?' stripped,
    kept when seen at least ``min_freq`` times, ordered by frequency
    (descending) then lexicographically. ``extra_tokens`` are always kept.

    Args:
        games: Source games.
        min_freq: Minimum token count.
        extra_tokens: Tokens reserved regardless of frequency.

    Returns:
        Frozen Vocabulary.

    Raises:
        InvalidSpec: If ``min_freq`` < 1.
    """
    if min_freq < 1:
        raise InvalidSpec(f"min_freq must be >= 1, got {min_freq}")

    counts: Counter = Counter()
    for game in games:
        for question in game.questions:
            counts.update(tokenize(question))

    kept = {token for token, count in counts.items() if count >= min_freq}
    kept.update(extra_tokens)
    kept.difference_update(SPECIAL_TOKENS)
    ordered = sorted(kept, key=lambda token: (-counts.get(token, 0), token))
    vocab = Vocabulary(tokens=SPECIAL_TOKENS + ordered)
    logger.info(f"Built vocabulary of {len(vocab)} tokens (min_freq={min_freq})")
    return vocab


def encode_question(
    text: str,
    vocab: Vocabulary,
    max_len: int = 12,
    extra_words: Sequence[str] = (),
) -> np.ndarray:
    """
    Token indices of a question with [CLS] prepended.

    Args:
        text: Question text.
        vocab: Vocabulary to index against.
        max_len: Maximum length including [CLS]; longer questions are truncated.
        extra_words: Words appended after the question (answer word of the
            pre-concatenation Guesser); they survive truncation.

    Returns:
        Integer index array of length at most ``max_len``.
    """
    words = tokenize(text)
    room = max_len - 1 - len(extra_words)
    if len(words) > room:
        logger.warning(f"Truncating question '{text}' from {len(words)} to {room} tokens")
        words = words[:room]
    indices = [vocab.cls] + [vocab.index_of(w) for w in list(words) + list(extra_words)]
    return np.asarray(indices, dtype=np.int64)


def split(
    games: Sequence[GameRecord],
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> Tuple[List[GameRecord], List[GameRecord], List[GameRecord]]:
    """
    Partition games into train/valid/test by scene.

    Args:
        games: Games to split.
        ratios: Train, valid and test shares summing to 1.
        seed: Shuffle seed.

    Returns:
        Tuple of (train, valid, test), each in input order.

    Raises:
        InvalidSpec: If the ratios are negative or do not sum to 1.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        msg = f"Split ratios must be three non-negative values summing to 1, got {tuple(ratios)}"
        logger.error(msg)
        raise InvalidSpec(msg)

    scene_ids = sorted({game.scene_id for game in games})
    order = np.random.default_rng(seed).permutation(len(scene_ids))
    shuffled = [scene_ids[i] for i in order]

    n = len(shuffled)
    n_train = int(np.floor(ratios[0] * n + 0.5))
    n_valid = min(int(np.floor(ratios[1] * n + 0.5)), n - n_train)
    train_ids = set(shuffled[:n_train])
    valid_ids = set(shuffled[n_train : n_train + n_valid])

    train = [g for g in games if g.scene_id in train_ids]
    valid = [g for g in games if g.scene_id in valid_ids]
    test = [g for g in games if g.scene_id not in train_ids and g.scene_id not in valid_ids]
    logger.info(f"Split {n} scenes into {len(train_ids)}/{len(valid_ids)}/{n - len(train_ids) - len(valid_ids)}")
    return train, valid, test


def training_games(games: Sequence[GameRecord], success_only: bool = True) -> List[GameRecord]:
    """Completed games usable for Guesser/Questioner training."""
    kept = [g for g in games if g.status is not GameStatus.INCOMPLETE and g.turns]
    if success_only:
        kept = [g for g in kept if g.status is GameStatus.SUCCESS]
    return kept


def dataset_statistics(games: Sequence[GameRecord]) -> DatasetStatistics:
    """
    Corpus statistics: answer distribution, questions per dialog, success share.

    Percentages are 0 for an empty log.
    """
    answers = Counter(answer for game in games for answer in game.answers)
    total_turns = sum(answers.values())
    n_games = len(games)

    def percent(count: int, total: int) -> float:
        return 100.0 * count / total if total else 0.0

    return DatasetStatistics(
        games=n_games,
        turns=total_turns,
        mean_questions_per_dialog=total_turns / n_games if n_games else 0.0,
        answer_distribution={answer.value: percent(answers.get(answer, 0), total_turns) for answer in AnswerClass},
        success_share=percent(sum(1 for g in games if g.status is GameStatus.SUCCESS), n_games),
    )


__all__ = [
    "ANSWER_TOKENS",
    "SPECIAL_TOKENS",
    "Vocabulary",
    "append_log",
    "build_vocab",
    "dataset_statistics",
    "encode_question",
    "load_games",
    "read_log",
    "split",
    "training_games",
    "write_log",
]
