"""
Unit tests for the Guesser agent.

Tests the belief update and its algebraic properties, the unrolled
gradients of both answer variants, training, dialog replay and the
rule-based guessers.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwlab.core.config import GuesserVariant
from gwlab.core.exceptions import InvalidBelief, InvalidData
from gwlab.core.numkernel import grad_check, softmax
from gwlab.models.schemas import AnswerClass, GameRecord, GameStatus, Scene, SceneObject
from gwlab.services.guesser_agent import (
    GUESSER_KIND,
    BeliefState,
    GuesserExample,
    GuesserGraph,
    RuleGuesser,
    SpatialPriorGuesser,
    UniformRandomGuesser,
    belief_update,
    build_examples,
    check_belief,
    evaluate_guesser,
    fuse_objects,
    guess,
    guesser_shapes,
    head_shapes,
    run_dialog,
    train_guesser,
)
from gwlab.services.world import generate_gold_dialog

DIALOG = [("is it a dog?", "no"), ("is it red?", "yes"), ("is it on the left?", "no")]


def _linear_toy() -> dict:
    """Linear head over d=1 with a zero answer embedding."""
    return {
        "guesser.answer_embed": np.zeros((3, 1)),
        "guesser.head_w": np.array([[1.0]]),
        "guesser.head_b": np.array([0.0]),
    }


@pytest.mark.unit
class TestBeliefUpdate:
    """Test suite for one belief update."""

    def test_fuse_objects(self):
        """Test that fusion is the row-wise product with h_cls."""
        np.testing.assert_allclose(fuse_objects(np.array([[1.0, 2.0]]), np.array([3.0, 0.5])), [[3.0, 1.0]])

    def test_alpha_zero_is_identity(self):
        """Test that alpha = 0 keeps the previous belief."""
        p = BeliefState(probabilities=np.array([0.5, 0.3, 0.2]))

        updated = belief_update(np.ones((3, 1)), p, AnswerClass.YES, _linear_toy(), alpha=0.0)

        np.testing.assert_array_equal(updated.probabilities, p.probabilities)
        assert updated.turn_index == 1

    def test_mixes_with_previous_belief(self):
        """Test that a one-hot renormalization is mixed with the uniform belief."""
        f = np.array([[3000.0], [0.0], [0.0]])

        updated = belief_update(f, BeliefState.uniform(3), AnswerClass.NO, _linear_toy(), alpha=0.9)

        np.testing.assert_allclose(updated.probabilities, [0.93333, 0.03333, 0.03333], atol=1e-5)

    def test_toy_example(self):
        """Test the hand-computed two-object update."""
        p = BeliefState(probabilities=np.array([0.8, 0.2]))

        updated = belief_update(np.array([[2.0], [2.0]]), p, AnswerClass.YES, _linear_toy(), alpha=0.9)

        np.testing.assert_allclose(updated.probabilities, [0.77167, 0.22833], atol=1e-5)

    def test_answer_shifts_every_object(self):
        """Test that the answer embedding enters every object's score equally."""
        params = _linear_toy()
        params["guesser.answer_embed"][0, 0] = 5.0
        p = BeliefState(probabilities=np.array([0.5, 0.5]))
        f = np.array([[1.0], [0.0]])

        with_yes = belief_update(f, p, AnswerClass.YES, params, alpha=1.0)
        with_no = belief_update(f, p, AnswerClass.NO, params, alpha=1.0)

        np.testing.assert_allclose(with_yes.probabilities, with_no.probabilities)

    def test_stays_a_distribution(self, spread_params, tiny_config):
        """Test that repeated updates keep a valid distribution."""
        params = spread_params(head_shapes(tiny_config), 1)
        rng = np.random.default_rng(1)
        p = BeliefState.uniform(5)
        for answer in [AnswerClass.YES, AnswerClass.NO, AnswerClass.NA, AnswerClass.YES]:
            p = belief_update(rng.normal(size=(5, tiny_config.hidden_size)), p, answer, params, alpha=0.9)
            check_belief(p.probabilities, 5)

    @pytest.mark.parametrize(
        "bad",
        [np.array([0.5, 0.6]), np.array([1.2, -0.2]), np.array([np.nan, 1.0]), np.array([1.0])],
    )
    def test_invalid_belief(self, bad):
        """Test that non-distributions are rejected."""
        with pytest.raises(InvalidBelief):
            belief_update(np.ones((2, 1)), BeliefState(probabilities=bad), AnswerClass.YES, _linear_toy(), 0.9)


@pytest.mark.unit
class TestBeliefAlgebra:
    """Test suite for properties of repeated and randomized belief updates."""

    def test_random_updates_stay_distributions(self, spread_params, tiny_config):
        """Test that ten thousand random updates all return non-negative beliefs summing to one."""
        params = spread_params(head_shapes(tiny_config), 4)
        rng = np.random.default_rng(4)
        answers = list(AnswerClass)
        for _ in range(10_000):
            n = int(rng.integers(2, 9))
            p = BeliefState(probabilities=rng.dirichlet(np.ones(n)))
            f = rng.normal(0.0, 3.0, size=(n, tiny_config.hidden_size))
            answer = answers[int(rng.integers(len(answers)))]

            updated = belief_update(f, p, answer, params, alpha=float(rng.uniform()))

            assert abs(updated.probabilities.sum() - 1.0) <= 1e-9
            assert updated.probabilities.min() >= 0.0

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 8), answer=st.sampled_from(list(AnswerClass)))
    def test_alpha_endpoints(self, seed, n, answer):
        """Test that alpha = 0 keeps the belief and alpha = 1 returns the renormalized scores."""
        rng = np.random.default_rng(seed)
        params = {
            "guesser.answer_embed": rng.normal(size=(3, 3)),
            "guesser.head_w": rng.normal(size=(3, 1)),
            "guesser.head_b": rng.normal(size=1),
        }
        p = BeliefState(probabilities=rng.dirichlet(np.ones(n)))
        f = rng.normal(size=(n, 3))
        v = f * p.probabilities[:, None] + params["guesser.answer_embed"][answer.class_index]
        expected = softmax((v @ params["guesser.head_w"] + params["guesser.head_b"])[:, 0])

        kept = belief_update(f, p, answer, params, alpha=0.0)
        renormalized = belief_update(f, p, answer, params, alpha=1.0)

        np.testing.assert_array_equal(kept.probabilities, p.probabilities)
        np.testing.assert_allclose(renormalized.probabilities, expected, rtol=0, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(
        scores=st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=8),
        boost=st.floats(0.5, 5.0),
        alpha=st.floats(0.1, 1.0),
        data=st.data(),
    )
    def test_more_evidence_more_belief(self, scores, boost, alpha, data):
        """Test that raising one object's fused score strictly raises its share of the belief."""
        index = data.draw(st.integers(0, len(scores) - 1))
        f = np.array(scores)[:, None]
        stronger = f.copy()
        stronger[index, 0] += boost
        p = BeliefState.uniform(len(scores))

        before = belief_update(f, p, AnswerClass.YES, _linear_toy(), alpha)
        after = belief_update(stronger, p, AnswerClass.YES, _linear_toy(), alpha)

        assert after.probabilities[index] > before.probabilities[index]

    @pytest.mark.parametrize("variant", list(GuesserVariant))
    def test_trajectory_follows_object_order(
        self, variant, tiny_config, gold_games, scene_index, vocab, spread_params
    ):
        """Test that shuffling the objects shuffles every belief of the trajectory the same way."""
        config = tiny_config.with_overrides(guesser_variant=variant)
        example = build_examples(gold_games[4:5], scene_index, vocab, config)[0]
        order = np.random.default_rng(4).permutation(example.feats.shape[0])
        shuffled = GuesserExample(
            feats=example.feats[order],
            tokens=example.tokens,
            answers=example.answers,
            target_id=int(np.flatnonzero(order == example.target_id)[0]),
        )
        graph = GuesserGraph(config)
        params = spread_params(guesser_shapes(config, len(vocab)), 4)

        beliefs, _ = graph.unroll(params, example)
        shuffled_beliefs, _ = graph.unroll(params, shuffled)

        for original, permuted in zip(beliefs, shuffled_beliefs):
            np.testing.assert_allclose(permuted, original[order], rtol=0, atol=1e-12)


@pytest.mark.unit
class TestGuess:
    """Test suite for the final guess."""

    def test_argmax(self):
        """Test that the guess is the most likely object."""
        assert guess(BeliefState(probabilities=np.array([0.2, 0.5, 0.3]))) == 1

    def test_ties_go_to_lowest_index(self):
        """Test that a uniform belief guesses object 0."""
        assert guess(BeliefState.uniform(4)) == 0


@pytest.mark.unit
class TestGuesserGradients:
    """Test suite for the unrolled Guesser gradients."""

    @pytest.mark.parametrize("variant", list(GuesserVariant))
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(
        self, variant, seed, tiny_config, scenes, scene_index, vocab, make_game, spread_params
    ):
        """Test the backward pass through every turn, head and encoder."""
        config = tiny_config.with_overrides(guesser_variant=variant)
        game = make_game(DIALOG, scene_id=scenes[seed].scene_id)
        example = build_examples([game], scene_index, vocab, config)[0]
        graph = GuesserGraph(config)
        params = spread_params(guesser_shapes(config, len(vocab)), seed)

        _, grads = graph.loss_and_grads(params, example)

        assert grad_check(lambda p: graph.loss_and_grads(p, example)[0], params, grads) <= 1e-4

    def test_per_turn_supervision_and_linear_head(
        self, tiny_config, scenes, scene_index, vocab, make_game, spread_params
    ):
        """Test gradients of the per-turn loss with a linear head and projected answers."""
        config = tiny_config.with_overrides(per_turn_supervision=True, guesser_head_hidden=0, answer_embed_size=2)
        game = make_game(DIALOG, scene_id=scenes[3].scene_id)
        example = build_examples([game], scene_index, vocab, config)[0]
        graph = GuesserGraph(config)
        params = spread_params(guesser_shapes(config, len(vocab)), 7)

        _, grads = graph.loss_and_grads(params, example)

        assert "guesser.answer_proj" in params
        assert grad_check(lambda p: graph.loss_and_grads(p, example)[0], params, grads) <= 1e-4

    def test_pre_concatenation_skips_answer_embedding(self, tiny_config, gold_games, scene_index, vocab, spread_params):
        """Test that the pre-concatenation variant never touches the answer embedding."""
        config = tiny_config.with_overrides(guesser_variant=GuesserVariant.PRE_CONCATENATION)
        example = build_examples(gold_games[:1], scene_index, vocab, config)[0]
        params = spread_params(guesser_shapes(config, len(vocab)), 0)

        _, grads = GuesserGraph(config).loss_and_grads(params, example)

        np.testing.assert_array_equal(grads["guesser.answer_embed"], 0.0)
        assert example.tokens[0][-1] == vocab.index_of(gold_games[0].answers[0].word)


@pytest.mark.unit
class TestTrainGuesser:
    """Test suite for Guesser training and replay."""

    def test_no_usable_dialogs(self, tiny_config, scene_index, vocab, make_game):
        """Test that training without successful dialogs raises InvalidData."""
        failed = make_game([("is it red?", "yes")], target_id=0, guess=1)

        with pytest.raises(InvalidData):
            train_guesser([failed], scene_index, tiny_config, vocab)

    def test_checkpoint_and_replay(self, tiny_config, gold_games, scene_index, vocab):
        """Test that a trained guesser replays dialogs with valid beliefs."""
        checkpoint, report = train_guesser(gold_games, scene_index, tiny_config, vocab)
        game = gold_games[0]

        result = run_dialog(game, scene_index[game.scene_id], checkpoint)

        assert checkpoint.model_kind == GUESSER_KIND
        assert report.best_epoch >= 1
        assert len(result.beliefs) == len(game.turns)
        for belief in result.beliefs:
            check_belief(belief, len(scene_index[game.scene_id].objects))
        assert result.success == (result.guess == game.target_id)

    def test_deterministic(self, tiny_config, gold_games, scene_index, vocab):
        """Test that the same seed trains identical parameters."""
        first, _ = train_guesser(gold_games[:5], scene_index, tiny_config, vocab)
        second, _ = train_guesser(gold_games[:5], scene_index, tiny_config, vocab)

        for name in first.params:
            np.testing.assert_array_equal(first.params[name], second.params[name])


@pytest.mark.unit
class TestRuleBasedGuessers:
    """Test suite for the rule, spatial and random guessers."""

    def test_rule_guesser_follows_answers(self, mirrored_scene):
        """Test that the rule guesser finds the twin named by the answers."""
        game = generate_gold_dialog(mirrored_scene, 1, seed=0, max_turns=5)

        result = RuleGuesser().run_dialog(game, mirrored_scene)

        assert result.guess == 1
        assert result.beliefs[-1][1] > 0.9

    def test_rule_guesser_ignores_na(self, mirrored_scene, make_game):
        """Test that n/a answers and unparseable questions keep the belief."""
        game = make_game([("is it on the left?", "n/a"), ("does it sparkle?", "yes")], scene_id="mirror")

        result = RuleGuesser().run_dialog(game, mirrored_scene)

        for belief in result.beliefs:
            np.testing.assert_allclose(belief, [0.5, 0.5])

    def test_spatial_guesser_picks_largest(self):
        """Test that the spatial guesser guesses the largest object whatever the answers."""
        scene = Scene(
            scene_id="sizes",
            objects=[
                SceneObject(id=0, category="cat", color="red", size_class="small", bbox=(0.0, 0.0, 0.1, 0.1)),
                SceneObject(id=1, category="cat", color="red", size_class="large", bbox=(0.2, 0.2, 0.7, 0.7)),
            ],
        )
        session = SpatialPriorGuesser().new_session(scene, np.random.default_rng(0))
        session.observe("is it small?", AnswerClass.YES)

        assert session.guess() == 1

    def test_random_guesser_seeded(self, scenes):
        """Test that the random guesser is reproducible per stream and in range."""
        agent = UniformRandomGuesser()
        first = [agent.new_session(s, np.random.default_rng(3)).guess() for s in scenes]
        second = [agent.new_session(s, np.random.default_rng(3)).guess() for s in scenes]

        assert first == second
        assert all(0 <= g < len(s.objects) for g, s in zip(first, scenes))

    def test_evaluate_rule_guesser_on_gold(self, gold_games, scene_index):
        """Test that the rule guesser solves most gold dialogs."""
        report = evaluate_guesser(RuleGuesser(), gold_games, scene_index)

        assert report.games == len(gold_games)
        assert report.accuracy >= 0.75

    def test_replay_without_turns(self, mirrored_scene):
        """Test that replaying an empty dialog raises InvalidData."""
        game = GameRecord(game_id="g", scene_id="mirror", target_id=0, turns=[], status=GameStatus.INCOMPLETE)

        with pytest.raises(InvalidData):
            RuleGuesser().run_dialog(game, mirrored_scene)
