"""
Synthetic world service.

Generates scenes, answers grammar questions from ground truth, and scripts
gold dialogs that stand in for human games.
"""

from pathlib import Path
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from gwlab.core.config import RunConfig
from gwlab.core.exceptions import InvalidSpec, InvalidTarget, ParseError, SchemaError, GwLabError
from gwlab.models.schemas import (
    CATEGORIES,
    COLORS,
    LOCATIONS,
    SIZE_CLASSES,
    AnswerClass,
    GameRecord,
    GameStatus,
    QuestionKind,
    QuestionSemantics,
    Scene,
    SceneObject,
)
from gwlab.utils.grammar import parse_question, render_question

logger = logging.getLogger(__name__)

# Side ranges per size class
SIZE_SIDES: Dict[str, Tuple[float, float]] = {
    "small": (0.05, 0.2),
    "medium": (0.2, 0.35),
    "large": (0.35, 0.6),
}

MAX_OBJECTS = 20

# Scripted question order when balance ties
TYPE_PRIORITY = ["category", "color", "size", "location", "compound"]


class SceneSpec(BaseModel):
    """Bounds for scene generation."""

    n_objects_min: int = Field(default=3, description="Minimum objects per scene")
    n_objects_max: int = Field(default=8, description="Maximum objects per scene")
    n_categories: int = Field(default=10, description="Categories drawn from the head of the lexicon")
    n_colors: int = Field(default=8, description="Colors drawn from the head of the lexicon")
    force_duplicate: bool = Field(default=True, description="Force at least two objects to share a category")

    @classmethod
    def from_config(cls, config: RunConfig) -> "SceneSpec":
        return cls(
            n_objects_min=config.n_objects_min,
            n_objects_max=config.n_objects_max,
            n_categories=config.n_categories,
            n_colors=config.n_colors,
            force_duplicate=config.force_duplicate,
        )


def _floor4(value: float) -> float:
    return math.floor(value * 10_000) / 10_000


def _check_spec(spec: SceneSpec) -> None:
    if not 2 <= spec.n_objects_min <= spec.n_objects_max <= MAX_OBJECTS:
        msg = (
            f"Invalid object bounds ({spec.n_objects_min}, {spec.n_objects_max}); "
            f"need 2 <= min <= max <= {MAX_OBJECTS}"
        )
        logger.error(msg)
        raise InvalidSpec(msg)
    if not 1 <= spec.n_categories <= len(CATEGORIES):
        raise InvalidSpec(f"n_categories must be in 1..{len(CATEGORIES)}, got {spec.n_categories}")
    if not 1 <= spec.n_colors <= len(COLORS):
        raise InvalidSpec(f"n_colors must be in 1..{len(COLORS)}, got {spec.n_colors}")


def generate_scene(spec: SceneSpec, seed: int, scene_id: Optional[str] = None) -> Scene:
    """
    Generate one scene deterministically from a seed.

    Args:
        spec: Generation bounds.
        seed: RNG seed.
        scene_id: Identifier; defaults to ``s<seed>``.

    Returns:
        Scene with ids 0..N-1 and bboxes rounded to 4 decimals.

    Raises:
        InvalidSpec: If the bounds are out of range.
    """
    _check_spec(spec)
    rng = np.random.default_rng(seed)

    n = int(rng.integers(spec.n_objects_min, spec.n_objects_max + 1))
    categories = [CATEGORIES[i] for i in rng.integers(0, spec.n_categories, size=n)]
    if spec.force_duplicate and len(set(categories)) == n:
        source, copy = rng.choice(n, size=2, replace=False)
        categories[int(copy)] = categories[int(source)]

    objects: List[SceneObject] = []
    for index in range(n):
        size_class = SIZE_CLASSES[int(rng.integers(0, len(SIZE_CLASSES)))]
        color = COLORS[int(rng.integers(0, spec.n_colors))]
        low, high = SIZE_SIDES[size_class]
        # sides and origins are rounded separately so no side drops below its class minimum
        width = round(float(rng.uniform(low, high)), 4)
        height = round(float(rng.uniform(low, high)), 4)
        x_min = _floor4(float(rng.uniform(0.0, 1.0 - width)))
        y_min = _floor4(float(rng.uniform(0.0, 1.0 - height)))
        bbox = (x_min, y_min, min(round(x_min + width, 4), 1.0), min(round(y_min + height, 4), 1.0))
        objects.append(
            SceneObject(id=index, category=categories[index], color=color, size_class=size_class, bbox=bbox)
        )

    return Scene(scene_id=scene_id or f"s{seed}", objects=objects)


def _child_seed(seed: int, *path: int) -> int:
    if seed < 0:
        raise InvalidSpec(f"seeds must be non-negative, got {seed}")
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def generate_scenes(spec: SceneSpec, count: int, seed: int) -> List[Scene]:
    """
    Generate ``count`` scenes from per-scene child seeds.

    Scene ids are ``s<seed>-<index>`` with a zero-padded index.

    Raises:
        InvalidSpec: On invalid bounds, negative count or negative seed.
    """
    if count < 0:
        raise InvalidSpec(f"scene count must be non-negative, got {count}")
    _check_spec(spec)
    scenes = [
        generate_scene(spec, _child_seed(seed, index), scene_id=f"s{seed}-{index:05d}") for index in range(count)
    ]
    logger.info(f"Generated {len(scenes)} scenes (seed={seed})")
    return scenes


def assign_targets(scenes: Sequence[Scene], seed: int) -> List[int]:
    """Pick one uniformly random target object per scene, keyed on scene id."""
    targets = []
    for scene in scenes:
        rng = np.random.default_rng(_child_seed(seed, *_id_words(scene.scene_id)))
        targets.append(int(rng.integers(0, len(scene.objects))))
    return targets


def _id_words(identifier: str) -> List[int]:
    # SeedSequence entropy from the identifier bytes
    return list(identifier.encode("utf-8")) or [0]


def rule_answer(scene: Scene, target_id: int, semantics: QuestionSemantics) -> AnswerClass:
    """
    Ground-truth answer of the perfect Oracle.

    Location uses the bbox center against 0.5; a center exactly on 0.5 is No.

    Args:
        scene: Scene being played.
        target_id: Target object index.
        semantics: Parsed question.

    Returns:
        Yes, No, or NA for unparseable questions.

    Raises:
        InvalidTarget: If ``target_id`` is not an object of the scene.
    """
    if not 0 <= target_id < len(scene.objects):
        msg = f"Target {target_id} is not an object of scene {scene.scene_id}"
        logger.error(msg)
        raise InvalidTarget(msg)

    target = scene.objects[target_id]
    kind = semantics.kind
    if kind is QuestionKind.UNPARSEABLE:
        return AnswerClass.NA
    if kind is QuestionKind.CATEGORY:
        match = target.category == semantics.value
    elif kind is QuestionKind.COLOR:
        match = target.color == semantics.value
    elif kind is QuestionKind.SIZE:
        match = target.size_class == semantics.value
    else:
        cx, cy = target.center
        on_side = {
            "left": cx < 0.5,
            "right": cx > 0.5,
            "top": cy < 0.5,
            "bottom": cy > 0.5,
        }[semantics.value]
        match = on_side and (semantics.qualifier is None or target.category == semantics.qualifier)
    return AnswerClass.YES if match else AnswerClass.NO


def _type_of(semantics: QuestionSemantics) -> str:
    if semantics.kind is QuestionKind.LOCATION and semantics.qualifier:
        return "compound"
    return semantics.kind.value


def candidate_questions(scene: Scene) -> List[QuestionSemantics]:
    """Every grammar question that mentions a value present in the scene."""
    present_categories = sorted({o.category for o in scene.objects}, key=CATEGORIES.index)
    present_colors = sorted({o.color for o in scene.objects}, key=COLORS.index)
    present_sizes = sorted({o.size_class for o in scene.objects}, key=SIZE_CLASSES.index)

    questions = [QuestionSemantics(kind=QuestionKind.CATEGORY, value=c) for c in present_categories]
    questions += [QuestionSemantics(kind=QuestionKind.COLOR, value=c) for c in present_colors]
    questions += [QuestionSemantics(kind=QuestionKind.SIZE, value=s) for s in present_sizes]
    questions += [QuestionSemantics(kind=QuestionKind.LOCATION, value=side) for side in LOCATIONS]
    questions += [
        QuestionSemantics(kind=QuestionKind.LOCATION, value=side, qualifier=c)
        for c in present_categories
        for side in ("left", "right")
    ]
    return questions


class ScriptedQuestioner:
    """
    Greedy candidate-elimination questioner over the template grammar.

    Picks the question whose yes/no split of the surviving candidates is most
    balanced; ties go to the type priority, then to a seeded order. It never
    sees the target: gold dialogs and self-play drive it through answers only.
    """

    def __init__(self, scene: Scene, rng: np.random.Generator) -> None:
        self.scene = scene
        self.candidates: List[int] = [o.id for o in scene.objects]
        self.asked: List[QuestionSemantics] = []

        questions = candidate_questions(scene)
        order = rng.permutation(len(questions))
        self._questions = [questions[i] for i in order]
        self._seeded_rank = {q: rank for rank, q in enumerate(self._questions)}
        # answers per (question, object) under the rule oracle
        self._truth = {
            q: {o.id: rule_answer(scene, o.id, q) for o in scene.objects} for q in self._questions
        }

    @property
    def done(self) -> bool:
        """True once one candidate remains or no question splits the candidates."""
        return len(self.candidates) <= 1 or self._best_split() is None

    def _best_split(self) -> Optional[QuestionSemantics]:
        best = None
        best_key = None
        for question in self._questions:
            if question in self.asked:
                continue
            yes = sum(1 for c in self.candidates if self._truth[question][c] is AnswerClass.YES)
            no = len(self.candidates) - yes
            if yes == 0 or no == 0:
                continue
            key = (-min(yes, no), TYPE_PRIORITY.index(_type_of(question)), self._seeded_rank[question])
            if best_key is None or key < best_key:
                best, best_key = question, key
        return best

    def next_question(self) -> Optional[QuestionSemantics]:
        """
        Choose the next question, or None when the script has nothing left to split.
        """
        if len(self.candidates) <= 1:
            return None
        return self._best_split()

    def confirmation_question(self, turn: int) -> QuestionSemantics:
        """Question about the leading candidate, used once the script is exhausted."""
        lead = self.scene.objects[self.candidates[0]]
        cycle = [
            QuestionSemantics(kind=QuestionKind.CATEGORY, value=lead.category),
            QuestionSemantics(kind=QuestionKind.COLOR, value=lead.color),
            QuestionSemantics(kind=QuestionKind.SIZE, value=lead.size_class),
        ]
        return cycle[turn % len(cycle)]

    def observe(self, semantics: QuestionSemantics, answer: AnswerClass) -> None:
        """
        Filter candidates by an answer; contradictory or NA answers leave them unchanged.
        """
        self.asked.append(semantics)
        if answer is AnswerClass.NA or semantics.kind is QuestionKind.UNPARSEABLE:
            return
        truth = self._truth.get(semantics)
        if truth is None:
            truth = {o.id: rule_answer(self.scene, o.id, semantics) for o in self.scene.objects}
        surviving = [c for c in self.candidates if truth[c] is answer]
        if not surviving:
            logger.warning(
                f"Ignoring contradictory answer '{answer.value}' to '{render_question(semantics)}' "
                f"in scene {self.scene.scene_id}"
            )
            return
        self.candidates = surviving


def generate_gold_dialog(
    scene: Scene,
    target_id: int,
    seed: int,
    max_turns: int,
    game_id: Optional[str] = None,
) -> GameRecord:
    """
    Script a gold dialog answered by the rule oracle.

    Args:
        scene: Scene to play on.
        target_id: Target object index.
        seed: Seed for the question tie order.
        max_turns: Turn budget (at least one question is asked).
        game_id: Identifier; defaults to ``<scene_id>-g<seed>``.

    Returns:
        Completed GameRecord; success when the first surviving candidate is the target.

    Raises:
        InvalidSpec: If ``max_turns`` < 1.
        InvalidTarget: If ``target_id`` is not an object of the scene.
    """
    if max_turns < 1:
        raise InvalidSpec(f"max_turns must be >= 1, got {max_turns}")
    if not 0 <= target_id < len(scene.objects):
        raise InvalidTarget(f"Target {target_id} is not an object of scene {scene.scene_id}")

    script = ScriptedQuestioner(scene, np.random.default_rng(seed))
    turns: List[Tuple[str, AnswerClass]] = []
    for _ in range(max_turns):
        semantics = script.next_question()
        if semantics is None:
            break
        answer = rule_answer(scene, target_id, semantics)
        script.observe(semantics, answer)
        turns.append((render_question(semantics), answer))

    guess = script.candidates[0]
    status = GameStatus.SUCCESS if guess == target_id else GameStatus.FAILURE
    return GameRecord(
        game_id=game_id or f"{scene.scene_id}-g{seed}",
        scene_id=scene.scene_id,
        target_id=target_id,
        turns=turns,
        guess=guess,
        status=status,
    )


def generate_gold_games(scenes: Sequence[Scene], seed: int, max_turns: int) -> List[GameRecord]:
    """Seeded targets plus one gold dialog per scene."""
    targets = assign_targets(scenes, seed)
    games = [
        generate_gold_dialog(
            scene,
            target,
            _child_seed(seed, index, 1),
            max_turns,
            game_id=f"{scene.scene_id}-g{seed}",
        )
        for index, (scene, target) in enumerate(zip(scenes, targets))
    ]
    successes = sum(1 for g in games if g.status is GameStatus.SUCCESS)
    logger.info(f"Scripted {len(games)} gold dialogs, {successes} successful")
    return games


def render_scene_text(scene: Scene) -> str:
    """
    Human-readable listing, one line per object ordered by id.

    Format: ``<id> <category> <color> <size> at (<cx>, <cy>)``.
    """
    lines = []
    for obj in scene.objects:
        cx, cy = obj.center
        lines.append(f"{obj.id} {obj.category} {obj.color} {obj.size_class} at ({cx:.2f}, {cy:.2f})")
    return "\n".join(lines)


def write_scenes(scenes: Iterable[Scene], path: Path) -> None:
    """Write scenes as JSON-lines."""
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for scene in scenes:
                handle.write(scene.model_dump_json() + "\n")
    except OSError as e:
        msg = f"Failed to write scenes to {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)


def load_scenes(path: Path) -> List[Scene]:
    """
    Load a scene JSON-lines file.

    Raises:
        ParseError: Malformed JSON on a line.
        SchemaError: A scene that violates the scene invariants.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        msg = f"Failed to read scenes from {path}: {str(e)}"
        logger.error(msg)
        raise GwLabError(msg)

    scenes = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            scenes.append(Scene.model_validate_json(line))
        except ValidationError as e:
            if any(err["type"] == "json_invalid" for err in e.errors()):
                raise ParseError(f"{path}: malformed JSON", line=lineno)
            raise SchemaError(f"{path}: {e.errors()[0]['msg']}", line=lineno)
    return scenes


def index_scenes(scenes: Iterable[Scene]) -> Dict[str, Scene]:
    """Map scene id to scene."""
    return {scene.scene_id: scene for scene in scenes}


__all__ = [
    "SceneSpec",
    "ScriptedQuestioner",
    "assign_targets",
    "candidate_questions",
    "generate_gold_dialog",
    "generate_gold_games",
    "generate_scene",
    "generate_scenes",
    "index_scenes",
    "load_scenes",
    "parse_question",
    "render_scene_text",
    "rule_answer",
    "write_scenes",
]
