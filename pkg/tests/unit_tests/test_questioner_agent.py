"""
Unit tests for the Questioner agent.

Tests belief reweighting, the vis-diff context, greedy and sampled
decoding, the teacher-forced gradients with a frozen or fine-tuned
estimator, and training against a pretrained guesser.
"""

import numpy as np
import pytest

from gwlab.core.exceptions import IncompatibleCheckpoint, InvalidScene
from gwlab.core.numkernel import grad_check
from gwlab.models.schemas import AnswerClass
from gwlab.services.dataset import Vocabulary
from gwlab.services.guesser_agent import guesser_shapes, train_guesser
from gwlab.services.questioner_agent import (
    QUESTIONER_KIND,
    PolicyGradientHook,
    QuestionerGraph,
    TrainedQuestioner,
    build_examples,
    decode_question,
    object_differences,
    perplexity,
    questioner_shapes,
    reweight_objects,
    train_questioner,
    vis_diff,
)

DIALOG = [("is it a dog?", "no"), ("is it red?", "yes"), ("is it on the left?", "no")]


@pytest.fixture
def guesser_checkpoint(tiny_config, gold_games, scene_index, vocab):
    """Guesser trained on the gold dialogs with the tiny configuration."""
    checkpoint, _ = train_guesser(gold_games, scene_index, tiny_config, vocab)
    return checkpoint


@pytest.mark.unit
class TestVisDiff:
    """Test suite for belief reweighting and the vis-diff context."""

    def test_reweight(self):
        """Test that each object row is scaled by its belief."""
        weighted = reweight_objects(np.ones((2, 2)), np.array([0.8, 0.2]))

        np.testing.assert_allclose(weighted, [[0.8, 0.8], [0.2, 0.2]])

    def test_two_objects_antisymmetric(self):
        """Test that the differences of two objects are opposite."""
        diffs = object_differences(np.array([[1.0, 3.0], [0.5, -1.0]]))

        np.testing.assert_allclose(diffs[0], -diffs[1])
        np.testing.assert_allclose(diffs[0], [0.5, 4.0])

    def test_differences_sum_to_zero(self):
        """Test that the leave-one-out differences cancel over the objects."""
        weighted = np.random.default_rng(0).normal(size=(6, 4))

        np.testing.assert_allclose(object_differences(weighted).sum(axis=0), np.zeros(4), atol=1e-12)

    def test_single_object_rejected(self, tiny_config, spread_params):
        """Test that one object gives no context."""
        params = spread_params(questioner_shapes(tiny_config, 10), 0)

        with pytest.raises(InvalidScene):
            vis_diff(np.ones((1, tiny_config.hidden_size)), params)

    def test_context_size(self, tiny_config, spread_params):
        """Test that the context has the hidden size."""
        params = spread_params(questioner_shapes(tiny_config, 10), 0)

        assert vis_diff(np.ones((3, tiny_config.hidden_size)), params).shape == (tiny_config.hidden_size,)


@pytest.mark.unit
class TestDecodeQuestion:
    """Test suite for question generation."""

    def test_zero_params_repeat_first_word(self, tiny_config, vocab):
        """Test that an all-tie decoder repeats the first ordinary word to the length limit."""
        params = {name: np.zeros(shape) for name, shape in questioner_shapes(tiny_config, len(vocab)).items()}

        question = decode_question(np.zeros(tiny_config.hidden_size), params, vocab, max_len=4)

        assert question == " ".join([vocab.tokens[5]] * 4) + "?"

    def test_unique_eos_stops_immediately(self, tiny_config, vocab):
        """Test that [EOS] as the unique maximum gives an empty question."""
        params = {name: np.zeros(shape) for name, shape in questioner_shapes(tiny_config, len(vocab)).items()}
        params["questioner.out_b"][vocab.eos] = 1.0

        assert decode_question(np.zeros(tiny_config.hidden_size), params, vocab, max_len=4) == "?"

    def test_never_emits_specials(self, tiny_config, vocab, spread_params):
        """Test that greedy decoding skips the reserved tokens."""
        params = spread_params(questioner_shapes(tiny_config, len(vocab)), 2)
        params["questioner.out_b"][[vocab.pad, vocab.sos, vocab.unk, vocab.cls]] = 50.0

        question = decode_question(np.ones(tiny_config.hidden_size), params, vocab, max_len=5)

        for token in ("[PAD]", "[SOS]", "[UNK]", "[CLS]"):
            assert token not in question

    def test_sampling_reproducible(self, tiny_config, vocab, spread_params):
        """Test that sampling with equal streams gives equal questions."""
        params = spread_params(questioner_shapes(tiny_config, len(vocab)), 3)
        v_t = np.ones(tiny_config.hidden_size)

        first = decode_question(v_t, params, vocab, 5, rng=np.random.default_rng(9), sample=True)
        second = decode_question(v_t, params, vocab, 5, rng=np.random.default_rng(9), sample=True)

        assert first == second
        assert first.endswith("?")
        assert len(first[:-1].split()) <= 5


@pytest.mark.unit
class TestQuestionerGradients:
    """Test suite for the teacher-forced Questioner gradients."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_frozen_estimator(self, seed, tiny_config, scenes, scene_index, vocab, make_game, spread_params):
        """Test that a frozen estimator yields gradients on questioner tensors only."""
        game = make_game(DIALOG, scene_id=scenes[seed].scene_id)
        example = build_examples([game], scene_index, vocab, tiny_config)[0]
        shapes = {**guesser_shapes(tiny_config, len(vocab)), **questioner_shapes(tiny_config, len(vocab))}
        params = spread_params(shapes, seed)
        graph = QuestionerGraph(tiny_config)

        _, grads = graph.loss_and_grads(params, example)
        trainable = {name: params[name] for name in grads}

        assert all(name.startswith("questioner.") for name in grads)
        assert grad_check(lambda q: graph.loss_and_grads({**params, **q}, example)[0], trainable, grads) <= 1e-4

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_fine_tuned_estimator(self, seed, tiny_config, scenes, scene_index, vocab, make_game, spread_params):
        """Test gradients flowing through the beliefs into the estimator."""
        config = tiny_config.with_overrides(freeze_estimator=False)
        game = make_game(DIALOG, scene_id=scenes[seed + 2].scene_id)
        example = build_examples([game], scene_index, vocab, config)[0]
        shapes = {**guesser_shapes(config, len(vocab)), **questioner_shapes(config, len(vocab))}
        params = spread_params(shapes, seed + 5)
        graph = QuestionerGraph(config)

        _, grads = graph.loss_and_grads(params, example)

        assert set(grads) == set(params)
        assert grad_check(lambda p: graph.loss_and_grads(p, example)[0], params, grads) <= 1e-4


@pytest.mark.unit
class TestTrainQuestioner:
    """Test suite for Questioner training and play."""

    def test_vocabulary_mismatch(self, guesser_checkpoint, tiny_config, gold_games, scene_index, vocab):
        """Test that a guesser trained on another vocabulary is rejected."""
        other = Vocabulary(tokens=vocab.tokens + ["zzz"])

        with pytest.raises(IncompatibleCheckpoint):
            train_questioner(gold_games, scene_index, guesser_checkpoint, tiny_config, other)

    def test_frozen_estimator_unchanged(self, guesser_checkpoint, tiny_config, gold_games, scene_index, vocab):
        """Test that frozen training leaves the estimator exactly as pretrained."""
        checkpoint, report = train_questioner(gold_games, scene_index, guesser_checkpoint, tiny_config, vocab)

        assert checkpoint.model_kind == QUESTIONER_KIND
        assert report.epochs_run >= 1
        for name in guesser_checkpoint.params:
            np.testing.assert_array_equal(checkpoint.params[name], guesser_checkpoint.params[name])

    def test_perplexity_finite(self, guesser_checkpoint, tiny_config, gold_games, scene_index, vocab):
        """Test that the perplexity of gold dialogs is a finite number above one."""
        checkpoint, _ = train_questioner(gold_games, scene_index, guesser_checkpoint, tiny_config, vocab)

        value = perplexity(checkpoint, gold_games, scene_index)

        assert np.isfinite(value)
        assert value > 1.0

    def test_session_questions(self, guesser_checkpoint, tiny_config, gold_games, scenes, scene_index, vocab):
        """Test that a trained questioner asks bounded questions and tracks answers."""
        checkpoint, _ = train_questioner(gold_games, scene_index, guesser_checkpoint, tiny_config, vocab)
        session = TrainedQuestioner(checkpoint).new_session(scenes[0], np.random.default_rng(0))

        for turn in range(3):
            question = session.next_question(turn)
            assert question.endswith("?")
            assert len(question[:-1].split()) <= tiny_config.max_question_len - 1
            session.observe(question, AnswerClass.NO)

    def test_outcome_reported_to_hook(
        self, mocker, guesser_checkpoint, tiny_config, gold_games, scene_index, vocab, make_game
    ):
        """Test that finished games reach the policy-gradient hook with a 0/1 reward."""
        checkpoint, _ = train_questioner(gold_games, scene_index, guesser_checkpoint, tiny_config, vocab)
        hook = mocker.Mock(spec=PolicyGradientHook)
        agent = TrainedQuestioner(checkpoint, hook=hook)
        game = make_game([("is it red?", "yes")], target_id=0, guess=1)

        agent.record_outcome(game)

        hook.on_game.assert_called_once_with(game, 0.0)
