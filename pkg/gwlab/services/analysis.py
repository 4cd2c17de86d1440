"""
Metrics and post-analysis procedures over game logs.

All metrics are pure functions of immutable logs. The sweep and the grid
re-run agents through the engine and the guesser replay with seeded streams,
so every table is reproducible from its inputs.
"""

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from gwlab.core.exceptions import EmptyInput, JoinError
from gwlab.models.schemas import (
    QUESTION_TYPES,
    AblationCell,
    AnswerClass,
    ConfusionMatrix2,
    GameRecord,
    GameStatus,
    LogMetrics,
    Scene,
    SweepRow,
)
from gwlab.services.dataset import dataset_statistics
from gwlab.services.engine import GameSetup, GameWiring, self_play
from gwlab.services.guesser_agent import GuesserAgent, evaluate_guesser
from gwlab.services.questioner_agent import QuestionerAgent
from gwlab.utils.grammar import parse_question
from gwlab.utils.strings import normalize_question, tokenize

logger = logging.getLogger(__name__)


def _percent(count: int, total: int) -> float:
    return 100.0 * count / total if total else 0.0


def success_rate(games: Sequence[GameRecord]) -> float:
    """
    Percentage of games whose final guess hit the target.

    Raises:
        EmptyInput: If there are no games.
    """
    if not games:
        msg = "success rate of an empty log"
        logger.error(msg)
        raise EmptyInput(msg)
    return _percent(sum(1 for g in games if g.status is GameStatus.SUCCESS), len(games))


def repeated_question_rate(games: Sequence[GameRecord]) -> float:
    """
    Percentage of games that ask the same question at least twice.

    Questions are compared after lowercasing, trimming and stripping the
    trailing '?'. A game counts once however many repeats it has.
    """
    flagged = 0
    for game in games:
        normalized = [normalize_question(q) for q in game.questions]
        if len(set(normalized)) < len(normalized):
            flagged += 1
    return _percent(flagged, len(games))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu(candidate: List[str], references: List[List[str]], max_n: int) -> float:
    log_precision = 0.0
    for n in range(1, max_n + 1):
        counts = _ngrams(candidate, n)
        total = sum(counts.values())
        if total == 0:
            return 0.0
        max_ref: Counter = Counter()
        for reference in references:
            for gram, count in _ngrams(reference, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        clipped = sum(min(count, max_ref[gram]) for gram, count in counts.items())
        if clipped == 0:
            return 0.0
        log_precision += math.log(clipped / total) / max_n

    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_precision)


def self_bleu(questions: Sequence[str], max_n: int = 4) -> Dict[int, float]:
    """
    Self-BLEU of a question set for every order 2..max_n (lower is more diverse).

    Each question is scored as a candidate against all the others with
    clipped n-gram precisions, their geometric mean and a brevity penalty
    against the closest reference length (ties go to the shorter one); the
    scores are averaged over candidates. A set of fewer than two questions
    scores 0.

    Args:
        questions: Question texts.
        max_n: Highest n-gram order.

    Returns:
        Mapping n -> score in [0, 1].
    """
    tokenized = [tokenize(q) for q in questions]
    scores: Dict[int, float] = {}
    for n in range(2, max_n + 1):
        if len(tokenized) < 2:
            scores[n] = 0.0
            continue
        per_candidate = [
            _bleu(candidate, tokenized[:i] + tokenized[i + 1 :], n) for i, candidate in enumerate(tokenized)
        ]
        scores[n] = float(np.mean(per_candidate))
    return scores


def question_type_distribution(games: Sequence[GameRecord]) -> Dict[str, float]:
    """Percentage of questions per type (object, color, size, location, other)."""
    counts = Counter(parse_question(q).question_type for game in games for q in game.questions)
    total = sum(counts.values())
    return {qtype: _percent(counts.get(qtype, 0), total) for qtype in QUESTION_TYPES}


def lexical_diversity(questions: Sequence[str]) -> float:
    """Distinct tokens over total tokens."""
    tokens = [token for q in questions for token in tokenize(q)]
    return len(set(tokens)) / len(tokens) if tokens else 0.0


def question_diversity(questions: Sequence[str]) -> float:
    """Percentage of distinct (normalized) questions."""
    normalized = [normalize_question(q) for q in questions]
    return _percent(len(set(normalized)), len(normalized))


def log_metrics(games: Sequence[GameRecord], max_n: int = 4) -> LogMetrics:
    """Everything reported about a self-play log."""
    questions = [q for game in games for q in game.questions]
    return LogMetrics(
        games=len(games),
        success_rate=success_rate(games),
        repeated_question_rate=repeated_question_rate(games),
        self_bleu={str(n): score for n, score in self_bleu(questions, max_n).items()},
        question_types=question_type_distribution(games),
        lexical_diversity=lexical_diversity(questions),
        question_diversity=question_diversity(questions),
        statistics=dataset_statistics(games),
    )


class CorruptionSpec(BaseModel):
    """How many logged answers to corrupt, and with which seed."""

    ratio: float = Field(..., ge=0.0, le=1.0, description="Share of answers to corrupt")
    seed: int = Field(default=0, ge=0, description="Seed of the position and coin draws")


def corrupt_answers(games: Sequence[GameRecord], spec: CorruptionSpec) -> List[GameRecord]:
    """
    Corrupt exactly round(ratio x answers) logged answers.

    Positions are drawn uniformly without replacement over all answers of
    the log; yes and no are flipped, n/a becomes a seeded yes or no. For a
    fixed seed the corrupted positions of a lower ratio are a subset of
    those of a higher ratio. Questions, order and every other field are
    left untouched.

    Args:
        games: Source log.
        spec: Ratio and seed.

    Returns:
        New game records.
    """
    positions = [(g, t) for g, game in enumerate(games) for t in range(len(game.turns))]
    total = len(positions)
    k = int(math.floor(spec.ratio * total + 0.5))
    rng = np.random.default_rng(spec.seed)
    chosen = rng.permutation(total)[:k]
    coins = rng.integers(0, 2, size=total)

    replaced: Dict[int, Dict[int, AnswerClass]] = {}
    for index in chosen:
        g, t = positions[index]
        answer = games[g].turns[t][1]
        if answer is AnswerClass.YES:
            new = AnswerClass.NO
        elif answer is AnswerClass.NO:
            new = AnswerClass.YES
        else:
            new = AnswerClass.YES if coins[index] else AnswerClass.NO
        replaced.setdefault(g, {})[t] = new

    corrupted = []
    for g, game in enumerate(games):
        if g not in replaced:
            corrupted.append(game)
            continue
        turns = [(q, replaced[g].get(t, a)) for t, (q, a) in enumerate(game.turns)]
        corrupted.append(game.model_copy(update={"turns": turns}))
    logger.info(f"Corrupted {k} of {total} answers (ratio={spec.ratio}, seed={spec.seed})")
    return corrupted


def corruption_sweep(
    guessers: Mapping[str, GuesserAgent],
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    ratios: Sequence[float],
    seeds: Sequence[int],
    jobs: int = 1,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Guesser accuracy on corrupted logs over a grid of ratios and seeds.

    Args:
        guessers: Guessers by label.
        games: Gold dialogs with targets.
        scenes: Scene lookup by id.
        ratios: Corruption ratios in [0, 1].
        seeds: Corruption seeds.
        jobs: Worker threads over (ratio, seed) cells.

    Returns:
        Tuple of (rows with columns guesser, ratio, seed, accuracy in percent;
        curve with columns guesser, ratio, mean_accuracy, stdev).
    """
    cells = [(float(ratio), int(seed)) for ratio in ratios for seed in seeds]

    def run(cell: Tuple[float, int]) -> List[SweepRow]:
        ratio, seed = cell
        corrupted = corrupt_answers(games, CorruptionSpec(ratio=ratio, seed=seed))
        return [
            SweepRow(
                guesser=label,
                ratio=ratio,
                seed=seed,
                accuracy=100.0 * evaluate_guesser(guesser, corrupted, scenes, seed=seed).accuracy,
            )
            for label, guesser in guessers.items()
        ]

    if jobs > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(cell) for cell in cells]

    rows = pd.DataFrame([row.model_dump() for batch in results for row in batch], columns=list(SweepRow.model_fields))
    curve = (
        rows.groupby(["guesser", "ratio"], sort=False)["accuracy"]
        .agg(mean_accuracy="mean", stdev=lambda s: float(np.std(s.to_numpy(), ddof=0)))
        .reset_index()
    )
    logger.info(f"Corruption sweep: {len(cells)} cells x {len(guessers)} guessers")
    return rows, curve


def confusion_matrix(logs_a: Sequence[GameRecord], logs_b: Sequence[GameRecord]) -> ConfusionMatrix2:
    """
    Joint correctness of two settings over the same games.

    Games are joined on their id and must share scene and target.

    Raises:
        EmptyInput: If both logs are empty.
        JoinError: If the logs do not cover the same games.
    """
    if not logs_a and not logs_b:
        raise EmptyInput("confusion matrix of two empty logs")
    by_id_a = {g.game_id: g for g in logs_a}
    by_id_b = {g.game_id: g for g in logs_b}
    missing = set(by_id_a) ^ set(by_id_b)
    missing.update(
        game_id
        for game_id in set(by_id_a) & set(by_id_b)
        if (by_id_a[game_id].scene_id, by_id_a[game_id].target_id)
        != (by_id_b[game_id].scene_id, by_id_b[game_id].target_id)
    )
    if missing:
        error = JoinError(missing)
        logger.error(str(error))
        raise error

    cells = Counter()
    for game_id, game_a in by_id_a.items():
        a_ok = game_a.status is GameStatus.SUCCESS
        b_ok = by_id_b[game_id].status is GameStatus.SUCCESS
        cells[("a" if a_ok else "b") + ("a" if b_ok else "b")] += 1
    return ConfusionMatrix2(aa=cells["aa"], ab=cells["ab"], ba=cells["ba"], bb=cells["bb"])


def ablation_grid(
    oracles: Mapping[str, object],
    guessers: Mapping[str, GuesserAgent],
    questioner: QuestionerAgent,
    setups: Sequence[GameSetup],
    max_turns: int,
    master_seed: int,
    jobs: int = 1,
) -> Tuple[List[AblationCell], pd.DataFrame]:
    """
    End-to-end success rate for every oracle x guesser pairing.

    Every cell plays the same games with the same master seed.

    Returns:
        Tuple of (cells, table with oracles as rows and guessers as columns,
        both in the given order).
    """
    cells = []
    for oracle_label, oracle in oracles.items():
        for guesser_label, guesser in guessers.items():
            wiring = GameWiring(oracle=oracle, guesser=guesser, questioner=questioner)
            games = self_play(wiring, setups, max_turns, master_seed, jobs=jobs, record_beliefs=False)
            cells.append(AblationCell(oracle=oracle_label, guesser=guesser_label, success_rate=success_rate(games)))
    return cells, grid_table(cells)


def grid_table(cells: Sequence[AblationCell]) -> pd.DataFrame:
    """Pivot ablation cells into an oracle x guesser table, keeping first-seen order."""
    frame = pd.DataFrame([cell.model_dump() for cell in cells])
    oracles = list(dict.fromkeys(frame["oracle"]))
    guessers = list(dict.fromkeys(frame["guesser"]))
    table = frame.pivot(index="oracle", columns="guesser", values="success_rate")
    return table.loc[oracles, guessers]


def interaction_effect(table: pd.DataFrame) -> float:
    """
    Interaction of two upgrades in a success-rate grid.

    The first row and column are the baseline agents, the last row and
    column the upgraded ones:
    (both upgraded - baseline) - max(oracle-only gain, guesser-only gain).
    """
    base = float(table.iloc[0, 0])
    oracle_only = float(table.iloc[-1, 0]) - base
    guesser_only = float(table.iloc[0, -1]) - base
    both = float(table.iloc[-1, -1]) - base
    return both - max(oracle_only, guesser_only)
