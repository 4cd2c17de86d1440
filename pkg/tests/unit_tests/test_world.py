"""
Unit tests for the synthetic world.

Tests scene generation, the question grammar, rule answers and the
scripted gold dialogs.
"""

import numpy as np
import pytest
from faker import Faker

from gwlab.core.exceptions import InvalidSpec, InvalidTarget, ParseError, SchemaError
from gwlab.models.schemas import AnswerClass, GameStatus, QuestionKind, QuestionSemantics, Scene, SceneObject
from gwlab.services.world import (
    SIZE_SIDES,
    ScriptedQuestioner,
    SceneSpec,
    assign_targets,
    generate_gold_dialog,
    generate_gold_games,
    generate_scene,
    generate_scenes,
    load_scenes,
    render_scene_text,
    rule_answer,
    write_scenes,
)
from gwlab.utils.grammar import parse_question, render_question


def _scene_with(*objects: SceneObject) -> Scene:
    return Scene(scene_id="hand", objects=list(objects))


def _obj(index: int, category: str = "dog", color: str = "blue", size: str = "small", bbox=(0.1, 0.1, 0.2, 0.2)):
    return SceneObject(id=index, category=category, color=color, size_class=size, bbox=bbox)


@pytest.mark.unit
class TestGenerateScene:
    """Test suite for scene generation."""

    def test_fixed_object_count(self):
        """Test that equal bounds fix the number of objects."""
        scene = generate_scene(SceneSpec(n_objects_min=3, n_objects_max=3), seed=42)

        assert len(scene.objects) == 3
        assert [o.id for o in scene.objects] == [0, 1, 2]

    def test_same_seed_same_scene(self):
        """Test that generation is deterministic per seed."""
        spec = SceneSpec(n_objects_min=3, n_objects_max=3)

        assert generate_scene(spec, seed=42) == generate_scene(spec, seed=42)

    def test_single_object_bounds_rejected(self):
        """Test that scenes of one object are invalid specs."""
        with pytest.raises(InvalidSpec):
            generate_scene(SceneSpec(n_objects_min=1, n_objects_max=1), seed=0)

    def test_inverted_bounds_rejected(self):
        """Test that min above max is an invalid spec."""
        with pytest.raises(InvalidSpec):
            generate_scene(SceneSpec(n_objects_min=5, n_objects_max=4), seed=0)

    def test_forced_duplicate_category(self):
        """Test that at least two objects share a category when forced."""
        for scene in generate_scenes(SceneSpec(n_objects_min=2, n_objects_max=4), 30, seed=3):
            categories = [o.category for o in scene.objects]
            assert len(set(categories)) < len(categories)

    def test_bboxes_valid_and_rounded(self):
        """Test that every bbox lies in the unit square with 4 decimals."""
        for scene in generate_scenes(SceneSpec(), 20, seed=5):
            for obj in scene.objects:
                x_min, y_min, x_max, y_max = obj.bbox
                assert 0.0 <= x_min < x_max <= 1.0
                assert 0.0 <= y_min < y_max <= 1.0
                assert all(round(c, 4) == c for c in obj.bbox)

    def test_sides_keep_class_minimum(self):
        """Test that rounding never shrinks a side below its size class range."""
        for scene in generate_scenes(SceneSpec(), 300, seed=12):
            for obj in scene.objects:
                x_min, y_min, x_max, y_max = obj.bbox
                low = SIZE_SIDES[obj.size_class][0]

                assert x_max - x_min >= low - 1e-9
                assert y_max - y_min >= low - 1e-9

    def test_scene_ids_and_count(self):
        """Test that batch generation names scenes by seed and index."""
        batch = generate_scenes(SceneSpec(), 3, seed=9)

        assert [s.scene_id for s in batch] == ["s9-00000", "s9-00001", "s9-00002"]

    def test_negative_count_rejected(self):
        """Test that a negative scene count is an invalid spec."""
        with pytest.raises(InvalidSpec):
            generate_scenes(SceneSpec(), -1, seed=0)

    def test_targets_seeded_by_scene(self, scenes):
        """Test that targets are in range and independent of scene order."""
        targets = assign_targets(scenes, seed=1)
        reversed_targets = assign_targets(list(reversed(scenes)), seed=1)

        assert all(0 <= t < len(s.objects) for s, t in zip(scenes, targets))
        assert targets == list(reversed(reversed_targets))


@pytest.mark.unit
class TestGrammar:
    """Test suite for question parsing and rendering."""

    def test_category(self):
        """Test a category question."""
        semantics = parse_question("is it a person?")

        assert semantics.kind is QuestionKind.CATEGORY
        assert semantics.value == "person"
        assert semantics.question_type == "object"

    def test_location(self):
        """Test a location question."""
        semantics = parse_question("Is it on the left?")

        assert semantics == QuestionSemantics(kind=QuestionKind.LOCATION, value="left")

    def test_compound_location(self):
        """Test a category-qualified location question."""
        semantics = parse_question("is it the dog on the right?")

        assert semantics.kind is QuestionKind.LOCATION
        assert semantics.qualifier == "dog"

    @pytest.mark.parametrize("text", ["does it sparkle?", "", "is it a unicorn?", "is it on the middle?"])
    def test_unparseable(self, text):
        """Test that anything outside the grammar is unparseable."""
        semantics = parse_question(text)

        assert semantics.kind is QuestionKind.UNPARSEABLE
        assert semantics.question_type == "other"

    def test_free_text_unparseable(self):
        """Test that free-form sentences fall outside the grammar."""
        fake = Faker()
        Faker.seed(7)
        for _ in range(20):
            assert parse_question(f"why {fake.sentence()}").kind is QuestionKind.UNPARSEABLE

    def test_render_uses_article(self):
        """Test that category questions render with an article."""
        assert render_question(QuestionSemantics(kind=QuestionKind.CATEGORY, value="dog")) == "is it a dog?"

    def test_render_parse_agree(self):
        """Test that every rendered question parses back to its semantics."""
        for text in ["is it a cat?", "is it green?", "is it large?", "is it on the top?", "is it the car on the left?"]:
            assert render_question(parse_question(text)) == text

    def test_render_unparseable_rejected(self):
        """Test that unparseable semantics have no surface form."""
        with pytest.raises(ValueError):
            render_question(parse_question("why?"))


@pytest.mark.unit
class TestRuleAnswer:
    """Test suite for the ground-truth answers."""

    def test_left_of_center_is_no_for_right_half(self):
        """Test that a target centered at x=0.7 is not on the left."""
        scene = _scene_with(_obj(0, bbox=(0.6, 0.1, 0.8, 0.2)), _obj(1))

        assert rule_answer(scene, 0, parse_question("is it on the left?")) is AnswerClass.NO

    def test_center_exactly_half_is_no(self):
        """Test that a center exactly at 0.5 is neither left nor right."""
        scene = _scene_with(_obj(0, bbox=(0.4, 0.1, 0.6, 0.2)), _obj(1))

        assert rule_answer(scene, 0, parse_question("is it on the left?")) is AnswerClass.NO
        assert rule_answer(scene, 0, parse_question("is it on the right?")) is AnswerClass.NO

    def test_attributes(self):
        """Test category, color and size answers."""
        scene = _scene_with(_obj(0, category="cat", color="red", size="large"), _obj(1))

        assert rule_answer(scene, 0, parse_question("is it a cat?")) is AnswerClass.YES
        assert rule_answer(scene, 0, parse_question("is it blue?")) is AnswerClass.NO
        assert rule_answer(scene, 0, parse_question("is it large?")) is AnswerClass.YES

    def test_compound_requires_category(self):
        """Test that a compound question needs both side and category."""
        scene = _scene_with(_obj(0, category="cat", bbox=(0.0, 0.1, 0.2, 0.2)), _obj(1))

        assert rule_answer(scene, 0, parse_question("is it the cat on the left?")) is AnswerClass.YES
        assert rule_answer(scene, 0, parse_question("is it the dog on the left?")) is AnswerClass.NO

    def test_unparseable_is_na(self):
        """Test that unparseable questions get n/a."""
        scene = _scene_with(_obj(0), _obj(1))

        assert rule_answer(scene, 0, parse_question("does it sparkle?")) is AnswerClass.NA

    def test_unknown_target(self):
        """Test that an out-of-range target raises InvalidTarget."""
        scene = _scene_with(_obj(0), _obj(1))

        with pytest.raises(InvalidTarget):
            rule_answer(scene, 2, parse_question("is it a dog?"))


@pytest.mark.unit
class TestGoldDialogs:
    """Test suite for the scripted gold dialogs."""

    def test_unique_category_one_turn(self):
        """Test that a target with a unique category is found in one turn."""
        scene = _scene_with(_obj(0, category="cat"), _obj(1, category="dog"), _obj(2, category="dog"))

        game = generate_gold_dialog(scene, 0, seed=0, max_turns=5)

        assert len(game.turns) == 1
        assert parse_question(game.turns[0][0]).kind is QuestionKind.CATEGORY
        assert game.status is GameStatus.SUCCESS

    def test_mirrored_twins_need_location(self, mirrored_scene):
        """Test that identical mirrored objects are told apart by location."""
        game = generate_gold_dialog(mirrored_scene, 1, seed=0, max_turns=5)

        assert parse_question(game.turns[0][0]).kind is QuestionKind.LOCATION
        assert game.guess == 1

    def test_budget_respected(self, scenes):
        """Test that no dialog exceeds the turn budget."""
        for game in generate_gold_games(scenes, seed=2, max_turns=2):
            assert 1 <= len(game.turns) <= 2

    def test_invalid_budget(self, mirrored_scene):
        """Test that a zero turn budget is rejected."""
        with pytest.raises(InvalidSpec):
            generate_gold_dialog(mirrored_scene, 0, seed=0, max_turns=0)

    def test_high_success_rate(self):
        """Test that gold dialogs succeed on at least 95% of scenes."""
        games = generate_gold_games(generate_scenes(SceneSpec(), 200, seed=11), seed=11, max_turns=5)
        rate = sum(g.status is GameStatus.SUCCESS for g in games) / len(games)

        assert rate >= 0.95

    def test_category_questions_answered_no(self):
        """Test that gold dialogs ask about categories the target does not have."""
        games = generate_gold_games(generate_scenes(SceneSpec(), 200, seed=11), seed=11, max_turns=5)
        category_answers = [
            answer
            for game in games
            for question, answer in game.turns
            if parse_question(question).kind is QuestionKind.CATEGORY
        ]

        assert AnswerClass.NO in category_answers
        assert AnswerClass.YES in category_answers

    def test_opening_ignores_target(self, scenes):
        """Test that the opening question depends on the scene and seed, not on the target."""
        for scene in scenes:
            openings = {
                generate_gold_dialog(scene, target, seed=4, max_turns=5).turns[0][0]
                for target in range(len(scene.objects))
            }

            assert len(openings) == 1

    def test_answers_match_rule_oracle(self, scenes, gold_games):
        """Test that every gold answer is the rule answer."""
        by_id = {s.scene_id: s for s in scenes}
        for game in gold_games:
            for question, answer in game.turns:
                assert rule_answer(by_id[game.scene_id], game.target_id, parse_question(question)) is answer


@pytest.mark.unit
class TestScriptedQuestioner:
    """Test suite for the target-unaware scripted questioner."""

    def test_contradictory_answer_ignored(self, mirrored_scene):
        """Test that an answer nobody satisfies keeps the candidates."""
        script = ScriptedQuestioner(mirrored_scene, np.random.default_rng(0))
        script.observe(parse_question("is it a dog?"), AnswerClass.YES)

        assert script.candidates == [0, 1]

    def test_splits_mirrored_pair(self, mirrored_scene):
        """Test that the first unaware question splits the twins."""
        script = ScriptedQuestioner(mirrored_scene, np.random.default_rng(0))
        question = script.next_question()
        script.observe(question, rule_answer(mirrored_scene, 0, question))

        assert script.candidates == [0]
        assert script.done


@pytest.mark.unit
class TestSceneFiles:
    """Test suite for scene JSON-lines files and the text listing."""

    def test_write_then_load(self, tmp_path, scenes):
        """Test that written scenes load back equal."""
        path = tmp_path / "scenes.jsonl"
        write_scenes(scenes, path)

        assert load_scenes(path) == scenes

    def test_malformed_line(self, tmp_path):
        """Test that broken JSON raises ParseError with the line number."""
        path = tmp_path / "scenes.jsonl"
        path.write_text("{not json\n")

        with pytest.raises(ParseError) as exc_info:
            load_scenes(path)

        assert exc_info.value.line == 1

    def test_invalid_scene(self, tmp_path, mirrored_scene):
        """Test that a scene violating the invariants raises SchemaError."""
        bad = mirrored_scene.model_dump_json().replace('"id":1', '"id":5')
        path = tmp_path / "scenes.jsonl"
        path.write_text(bad + "\n")

        with pytest.raises(SchemaError):
            load_scenes(path)

    def test_listing_one_line_per_object(self, mirrored_scene):
        """Test the human-readable scene listing."""
        lines = render_scene_text(mirrored_scene).splitlines()

        assert lines == [
            "0 person red medium at (0.20, 0.50)",
            "1 person red medium at (0.80, 0.50)",
        ]
