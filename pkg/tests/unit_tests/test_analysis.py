"""
Unit tests for log metrics and post-analysis procedures.

Tests success and repetition rates, self-BLEU, answer corruption,
confusion matrices, corruption sweeps and the ablation grid.
"""

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from gwlab.core.exceptions import EmptyInput, JoinError
from gwlab.models.schemas import AblationCell, AnswerClass, ConfusionMatrix2, GameStatus
from gwlab.services.analysis import (
    CorruptionSpec,
    ablation_grid,
    confusion_matrix,
    corrupt_answers,
    corruption_sweep,
    grid_table,
    interaction_effect,
    log_metrics,
    question_type_distribution,
    repeated_question_rate,
    self_bleu,
    success_rate,
)
from gwlab.services.engine import NoisyRuleOracle, RuleOracle, ScriptedQuestionerAgent, setups_from_targets
from gwlab.services.guesser_agent import RuleGuesser, SpatialPriorGuesser
from gwlab.services.world import assign_targets


def _changed_positions(before, after):
    return {
        (g, t)
        for g, (old, new) in enumerate(zip(before, after))
        for t, ((_, a), (_, b)) in enumerate(zip(old.turns, new.turns))
        if a is not b
    }


def _reference_bleu(candidate, references, max_n):
    """Sentence BLEU by exhaustive counting over lists."""
    precisions = []
    for n in range(1, max_n + 1):
        grams = [tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1)]
        if not grams:
            return 0.0
        clipped = 0
        for gram in set(grams):
            best = 0
            for reference in references:
                ref_grams = [tuple(reference[i : i + n]) for i in range(len(reference) - n + 1)]
                best = max(best, ref_grams.count(gram))
            clipped += min(grams.count(gram), best)
        if clipped == 0:
            return 0.0
        precisions.append(clipped / len(grams))
    closest = sorted((abs(len(r) - len(candidate)), len(r)) for r in references)[0][1]
    brevity = 1.0 if len(candidate) > closest else math.exp(1.0 - closest / len(candidate))
    return brevity * math.exp(sum(math.log(p) for p in precisions) / max_n)


def _reference_self_bleu(questions, max_n):
    tokens = [q.split() for q in questions]
    return {
        n: sum(_reference_bleu(c, tokens[:i] + tokens[i + 1 :], n) for i, c in enumerate(tokens)) / len(tokens)
        for n in range(2, max_n + 1)
    }


@pytest.mark.unit
class TestRates:
    """Test suite for success and repeated-question rates."""

    def test_success_rate(self, make_game):
        """Test that 557 successes in 1000 games give 55.7%."""
        games = [make_game([("is it red?", "yes")], guess=0 if i < 557 else 1) for i in range(1000)]

        assert success_rate(games) == pytest.approx(55.7)

    def test_success_rate_empty(self):
        """Test that an empty log has no success rate."""
        with pytest.raises(EmptyInput):
            success_rate([])

    def test_repeated_questions(self, make_game):
        """Test that repeats are detected after normalization and counted once per game."""
        games = [
            make_game([("Is it red?", "yes"), ("is it red", "yes"), ("is it red?", "yes")]),
            make_game([("is it red?", "yes"), ("is it a dog?", "no")]),
        ]

        assert repeated_question_rate(games) == pytest.approx(50.0)

    def test_rates_match_recount(self, make_game):
        """Test both rates against a direct recount over random logs."""
        rng = np.random.default_rng(5)
        phrasings = ["is it red?", "Is it red", "is  it red?", "IS IT RED?", "is it a dog?", "is it on the left?"]
        for _ in range(20):
            games = []
            for _ in range(int(rng.integers(1, 30))):
                turns = [(str(rng.choice(phrasings)), "yes") for _ in range(int(rng.integers(1, 5)))]
                games.append(make_game(turns, guess=int(rng.integers(0, 2))))

            wins = sum(1 for game in games if game.guess == game.target_id)
            repeats = 0
            for game in games:
                normalized = [" ".join(q.lower().rstrip("?").split()) for q in game.questions]
                if any(normalized[i] == normalized[j] for i in range(len(normalized)) for j in range(i)):
                    repeats += 1

            assert success_rate(games) == pytest.approx(100.0 * wins / len(games), abs=1e-12)
            assert repeated_question_rate(games) == pytest.approx(100.0 * repeats / len(games), abs=1e-12)

    def test_question_types(self, make_game):
        """Test the question-type percentages."""
        turns = [("is it a dog?", "no"), ("is it red?", "yes"), ("does it fly?", "n/a"), ("is it red?", "yes")]
        games = [make_game(turns)]

        distribution = question_type_distribution(games)

        assert distribution == {"object": 25.0, "color": 50.0, "size": 0.0, "location": 0.0, "other": 25.0}


@pytest.mark.unit
class TestSelfBleu:
    """Test suite for self-BLEU."""

    def test_two_questions(self):
        """Test the hand-computed score of two three-word questions."""
        scores = self_bleu(["is it red", "is it blue"], max_n=3)

        assert scores[2] == pytest.approx(0.5774, abs=1e-4)
        assert scores[3] == 0.0

    def test_identical_questions(self):
        """Test that identical questions score one."""
        assert self_bleu(["is it red?", "is it red?"], max_n=3) == pytest.approx({2: 1.0, 3: 1.0})

    def test_singleton(self):
        """Test that fewer than two questions score zero."""
        assert self_bleu(["is it red?"]) == {2: 0.0, 3: 0.0, 4: 0.0}

    def test_duplicate_never_lowers(self):
        """Test that adding a duplicate question does not decrease the score."""
        questions = ["is it a dog?", "is it on the left?", "is it red?"]

        assert self_bleu(questions + [questions[0]])[2] >= self_bleu(questions)[2]

    def test_matches_exhaustive_count(self):
        """Test agreement with an exhaustive recount on random small question sets."""
        rng = np.random.default_rng(8)
        words = ["is", "it", "a", "red", "dog", "on", "the", "left"]
        for _ in range(20):
            questions = [
                " ".join(rng.choice(words, size=int(rng.integers(1, 7))))
                for _ in range(int(rng.integers(2, 7)))
            ]

            scores = self_bleu(questions, max_n=4)
            expected = _reference_self_bleu(questions, max_n=4)

            for n in range(2, 5):
                assert abs(scores[n] - expected[n]) <= 1e-9


@pytest.mark.unit
class TestCorruption:
    """Test suite for answer corruption."""

    @pytest.fixture
    def yes_no_log(self, make_game):
        return [make_game([("is it red?", "yes"), ("is it big?", "no")]) for _ in range(5)]

    def test_exact_count(self, yes_no_log):
        """Test that 30% of ten answers corrupts exactly three."""
        corrupted = corrupt_answers(yes_no_log, CorruptionSpec(ratio=0.3, seed=1))

        assert len(_changed_positions(yes_no_log, corrupted)) == 3
        assert [g.questions for g in corrupted] == [g.questions for g in yes_no_log]

    def test_nested_positions(self, yes_no_log):
        """Test that a lower ratio corrupts a subset of a higher ratio's positions."""
        low = _changed_positions(yes_no_log, corrupt_answers(yes_no_log, CorruptionSpec(ratio=0.2, seed=4)))
        high = _changed_positions(yes_no_log, corrupt_answers(yes_no_log, CorruptionSpec(ratio=0.6, seed=4)))

        assert low <= high

    @given(ratio=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_count_rounds_half_up(self, yes_no_log, ratio, seed):
        """Test that any ratio corrupts round-half-up of the answer count."""
        corrupted = corrupt_answers(yes_no_log, CorruptionSpec(ratio=ratio, seed=seed))

        assert len(_changed_positions(yes_no_log, corrupted)) == math.floor(ratio * 10 + 0.5)

    def test_ratio_zero_is_identity(self, yes_no_log):
        """Test that ratio 0 leaves the log unchanged."""
        assert corrupt_answers(yes_no_log, CorruptionSpec(ratio=0.0, seed=0)) == yes_no_log

    def test_na_replaced_by_yes_or_no(self, make_game):
        """Test that a corrupted n/a becomes yes or no."""
        games = [make_game([("does it fly?", "n/a")])]

        corrupted = corrupt_answers(games, CorruptionSpec(ratio=1.0, seed=2))

        assert corrupted[0].answers[0] in (AnswerClass.YES, AnswerClass.NO)

    def test_ratio_out_of_range(self):
        """Test that ratios outside [0, 1] are rejected."""
        with pytest.raises(ValueError):
            CorruptionSpec(ratio=1.5)


@pytest.mark.unit
class TestConfusionMatrix:
    """Test suite for cross-setting confusion matrices."""

    def test_marginals_from_cells(self):
        """Test the marginals recomputed from reference cell counts."""
        matrix = ConfusionMatrix2(aa=7565, ab=1993, ba=3573, bb=6864)

        assert matrix.row_marginals == [47.8, 52.2]
        assert matrix.column_marginals == [55.7, 44.3]

    def test_second_table(self):
        """Test a second set of reference cells."""
        matrix = ConfusionMatrix2(aa=8391, ab=1194, ba=1167, bb=9243)

        assert matrix.row_marginals == [47.9, 52.1]
        assert matrix.column_marginals == [47.8, 52.2]

    def test_join_on_game_id(self, make_game):
        """Test that games are paired by id whatever their order."""
        turns = [("is it red?", "yes")]
        logs_a = [make_game(turns, game_id=f"g{i}", scene_id="s", guess=0 if i < 2 else 1) for i in range(4)]
        logs_b = [make_game(turns, game_id=f"g{i}", scene_id="s", guess=0 if i % 2 else 1) for i in range(4)]

        matrix = confusion_matrix(logs_a, list(reversed(logs_b)))

        assert (matrix.aa, matrix.ab, matrix.ba, matrix.bb) == (1, 1, 1, 1)
        assert matrix.coverage_shift == {"a_only": 1, "b_only": 1}

    def test_join_error(self, make_game):
        """Test that logs over different games cannot be compared."""
        logs_a = [make_game([("is it red?", "yes")], game_id="g1")]
        logs_b = [make_game([("is it red?", "yes")], game_id="g2")]

        with pytest.raises(JoinError) as exc_info:
            confusion_matrix(logs_a, logs_b)

        assert exc_info.value.missing == ["g1", "g2"]

    def test_both_empty(self):
        """Test that two empty logs have no confusion matrix."""
        with pytest.raises(EmptyInput):
            confusion_matrix([], [])


@pytest.mark.unit
class TestGrid:
    """Test suite for ablation tables and sweeps."""

    def test_interaction_effect(self):
        """Test the interaction of two upgrades on reference success rates."""
        table = grid_table(
            [
                AblationCell(oracle="baseline", guesser="baseline", success_rate=47.7),
                AblationCell(oracle="baseline", guesser="upgraded", success_rate=47.5),
                AblationCell(oracle="upgraded", guesser="baseline", success_rate=47.8),
                AblationCell(oracle="upgraded", guesser="upgraded", success_rate=55.7),
            ]
        )

        assert interaction_effect(table) == pytest.approx(7.9)

    def test_grid_keeps_order(self):
        """Test that rows and columns follow first-seen order."""
        cells = [
            AblationCell(oracle=o, guesser=g, success_rate=float(i))
            for i, (o, g) in enumerate([("z", "y"), ("z", "b"), ("a", "y"), ("a", "b")])
        ]

        table = grid_table(cells)

        assert list(table.index) == ["z", "a"]
        assert list(table.columns) == ["y", "b"]
        assert table.loc["a", "y"] == 2.0

    def test_ablation_grid(self, scenes):
        """Test that every pairing plays the same games."""
        setups = setups_from_targets(scenes, assign_targets(scenes, seed=2))

        cells, table = ablation_grid(
            {"noisy": NoisyRuleOracle(0.3), "rule": RuleOracle()},
            {"spatial": SpatialPriorGuesser(), "rule": RuleGuesser()},
            ScriptedQuestionerAgent(),
            setups,
            max_turns=5,
            master_seed=2,
        )

        assert len(cells) == 4
        assert table.shape == (2, 2)
        assert table.loc["noisy", "spatial"] == table.loc["rule", "spatial"]

    def test_corruption_sweep(self, gold_games, scene_index):
        """Test the sweep rows and the mean/stdev curve."""
        rows, curve = corruption_sweep(
            {"spatial": SpatialPriorGuesser(), "rule": RuleGuesser()},
            gold_games,
            scene_index,
            ratios=[0.0, 0.5],
            seeds=[0, 1],
        )

        assert isinstance(rows, pd.DataFrame)
        assert list(rows.columns) == ["guesser", "ratio", "seed", "accuracy"]
        assert len(rows) == 8
        assert list(curve.columns) == ["guesser", "ratio", "mean_accuracy", "stdev"]
        spatial = curve[curve["guesser"] == "spatial"]
        assert spatial["mean_accuracy"].nunique() == 1
        assert (spatial["stdev"] == 0.0).all()


@pytest.mark.unit
class TestLogMetrics:
    """Test suite for the self-play report."""

    def test_report(self, gold_games):
        """Test that the report bundles every metric of a log."""
        metrics = log_metrics(gold_games)

        assert metrics.games == len(gold_games)
        assert set(metrics.self_bleu) == {"2", "3", "4"}
        assert sum(metrics.question_types.values()) == pytest.approx(100.0)
        assert metrics.statistics.games == len(gold_games)
        assert 0.0 < metrics.lexical_diversity <= 1.0
        assert metrics.success_rate == pytest.approx(
            100.0 * sum(g.status is GameStatus.SUCCESS for g in gold_games) / len(gold_games)
        )
