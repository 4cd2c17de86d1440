"""
Pydantic schemas for scenes, game logs and reports.

This module defines every record that crosses a file boundary (scene and
game-log JSON-lines, evaluation reports) together with the closed lexicons
of the synthetic world.
"""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator
from pydantic_core import PydanticCustomError

CATEGORIES: List[str] = [
    "person",
    "dog",
    "cat",
    "car",
    "bus",
    "chair",
    "table",
    "bottle",
    "plant",
    "ball",
]

COLORS: List[str] = ["red", "blue", "green", "yellow", "white", "black", "orange", "purple"]

SIZE_CLASSES: List[str] = ["small", "medium", "large"]

LOCATIONS: List[str] = ["left", "right", "top", "bottom"]

QUESTION_TYPES: List[str] = ["object", "color", "size", "location", "other"]


class AnswerClass(str, Enum):
    """Closed three-way Oracle answer."""

    YES = "yes"
    NO = "no"
    NA = "n/a"

    @property
    def class_index(self) -> int:
        """Class index used by the Oracle head and the answer embedding table."""
        return _ANSWER_ORDER.index(self)

    @property
    def word(self) -> str:
        """Token appended to the question by the pre-concatenation Guesser."""
        return "na" if self is AnswerClass.NA else self.value

    @classmethod
    def from_index(cls, index: int) -> "AnswerClass":
        return _ANSWER_ORDER[index]

    @classmethod
    def parse(cls, text: str) -> "AnswerClass":
        """
        Parse an answer case-insensitively.

        Raises:
            ValueError: If the text is not yes, no or n/a.
        """
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown answer '{text}' (expected yes, no or n/a)")


_ANSWER_ORDER: List[AnswerClass] = [AnswerClass.YES, AnswerClass.NO, AnswerClass.NA]


class QuestionKind(str, Enum):
    """Template family a question parses to."""

    CATEGORY = "category"
    COLOR = "color"
    SIZE = "size"
    LOCATION = "location"
    UNPARSEABLE = "unparseable"


_TYPE_BY_KIND = {
    QuestionKind.CATEGORY: "object",
    QuestionKind.COLOR: "color",
    QuestionKind.SIZE: "size",
    QuestionKind.LOCATION: "location",
    QuestionKind.UNPARSEABLE: "other",
}


class QuestionSemantics(BaseModel):
    """Meaning of one grammar question."""

    model_config = ConfigDict(frozen=True)

    kind: QuestionKind = Field(..., description="Template family")
    value: Optional[str] = Field(default=None, description="Category, color, size class or side")
    qualifier: Optional[str] = Field(default=None, description="Category qualifier of a compound location question")

    @property
    def question_type(self) -> str:
        """Reporting bucket: object, color, size, location or other."""
        return _TYPE_BY_KIND[self.kind]


class SceneObject(BaseModel):
    """One object of a synthetic scene."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0, description="Object index within the scene")
    category: str = Field(..., description="Category from the fixed lexicon")
    color: str = Field(..., description="Color from the fixed lexicon")
    size_class: str = Field(..., description="small, medium or large")
    bbox: Tuple[float, float, float, float] = Field(..., description="x_min, y_min, x_max, y_max in [0, 1]")

    @field_validator("category")
    @classmethod
    def _known_category(cls, value: str) -> str:
        if value not in CATEGORIES:
            raise ValueError(f"unknown category '{value}'")
        return value

    @field_validator("color")
    @classmethod
    def _known_color(cls, value: str) -> str:
        if value not in COLORS:
            raise ValueError(f"unknown color '{value}'")
        return value

    @field_validator("size_class")
    @classmethod
    def _known_size(cls, value: str) -> str:
        if value not in SIZE_CLASSES:
            raise ValueError(f"unknown size class '{value}'")
        return value

    @field_validator("bbox")
    @classmethod
    def _valid_bbox(cls, value: Tuple[float, float, float, float]) -> Tuple[float, float, float, float]:
        x_min, y_min, x_max, y_max = value
        if not all(0.0 <= c <= 1.0 for c in value):
            raise ValueError("bbox coordinates must lie in [0, 1]")
        if not (x_min < x_max and y_min < y_max):
            raise ValueError("bbox must satisfy x_min < x_max and y_min < y_max")
        return value

    @property
    def center(self) -> Tuple[float, float]:
        x_min, y_min, x_max, y_max = self.bbox
        return (x_min + x_max) / 2, (y_min + y_max) / 2

    @property
    def area(self) -> float:
        x_min, y_min, x_max, y_max = self.bbox
        return (x_max - x_min) * (y_max - y_min)


class Scene(BaseModel):
    """A synthetic image: an ordered list of objects on the unit square."""

    model_config = ConfigDict(frozen=True)

    scene_id: str = Field(..., description="Scene identifier")
    objects: List[SceneObject] = Field(..., description="Objects ordered by id")

    @model_validator(mode="after")
    def _check_objects(self) -> "Scene":
        if len(self.objects) < 2:
            raise ValueError("a scene needs at least two objects")
        for index, obj in enumerate(self.objects):
            if obj.id != index:
                raise ValueError(f"object ids must be 0..N-1 in order, found {obj.id} at position {index}")
        return self

    @property
    def width(self) -> float:
        return 1.0

    @property
    def height(self) -> float:
        return 1.0


class GameStatus(str, Enum):
    """Outcome of a game."""

    SUCCESS = "success"
    FAILURE = "failure"
    INCOMPLETE = "incomplete"


class GameRecord(BaseModel):
    """One full game: scene, target, dialog turns and the final guess."""

    model_config = ConfigDict(frozen=True)

    game_id: str = Field(..., description="Game identifier")
    scene_id: str = Field(..., description="Scene the game is played on")
    target_id: int = Field(..., ge=0, description="Target object index")
    turns: List[Tuple[str, AnswerClass]] = Field(default_factory=list, description="Ordered (question, answer) pairs")
    guess: Optional[int] = Field(default=None, description="Final guessed object index")
    status: GameStatus = Field(..., description="success, failure or incomplete")
    beliefs: Optional[List[List[float]]] = Field(default=None, description="Per-turn belief trajectory")

    @field_validator("turns", mode="before")
    @classmethod
    def _parse_answers(cls, value):
        if not isinstance(value, list):
            return value
        parsed = []
        for turn in value:
            if isinstance(turn, (list, tuple)) and len(turn) == 2 and isinstance(turn[1], str):
                parsed.append((turn[0], AnswerClass.parse(turn[1])))
            else:
                parsed.append(turn)
        return parsed

    @model_validator(mode="after")
    def _check_game(self) -> "GameRecord":
        if self.status is GameStatus.INCOMPLETE:
            if self.guess is not None:
                raise PydanticCustomError("game_invariant", "incomplete games carry no guess")
            return self
        if not self.turns:
            raise PydanticCustomError("game_invariant", "completed games need at least one turn")
        if self.guess is None:
            raise PydanticCustomError("game_invariant", "completed games need a guess")
        if (self.status is GameStatus.SUCCESS) != (self.guess == self.target_id):
            raise PydanticCustomError(
                "game_invariant",
                "status {status} contradicts guess {guess} for target {target}",
                {"status": self.status.value, "guess": self.guess, "target": self.target_id},
            )
        return self

    @property
    def questions(self) -> List[str]:
        return [question for question, _ in self.turns]

    @property
    def answers(self) -> List[AnswerClass]:
        return [answer for _, answer in self.turns]

    def to_json_line(self) -> str:
        """Serialize in the fixed log field order; ``beliefs`` only when present."""
        exclude = {"beliefs"} if self.beliefs is None else None
        return self.model_dump_json(exclude=exclude)


class TypeAccuracy(BaseModel):
    """Accuracy within one question type."""

    accuracy: Optional[float] = Field(default=None, description="Fraction correct; null when no questions")
    count: int = Field(..., description="Number of questions of this type")


class OracleEvalReport(BaseModel):
    """Oracle evaluation: overall accuracy and per-type breakdown."""

    overall: float = Field(..., description="Fraction of questions answered correctly")
    by_type: Dict[str, TypeAccuracy] = Field(..., description="Breakdown over object/color/size/location/other")


class GuesserEvalReport(BaseModel):
    """Guesser independent accuracy over complete gold dialogs."""

    accuracy: float = Field(..., description="Fraction of dialogs with a correct final guess")
    games: int = Field(..., description="Number of dialogs evaluated")


class EpochMetrics(BaseModel):
    """Metrics logged after one training epoch."""

    epoch: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: Optional[float] = None


class TrainingReport(BaseModel):
    """Training history for one agent."""

    model_kind: str = Field(..., description="oracle, guesser or questioner")
    epochs_run: int = Field(..., description="Epochs completed before stopping")
    best_epoch: int = Field(..., description="Epoch whose parameters were kept")
    history: List[EpochMetrics] = Field(default_factory=list, description="Per-epoch metrics")
    step_losses: List[float] = Field(default_factory=list, description="Mini-batch losses in step order")


class DatasetStatistics(BaseModel):
    """Corpus statistics of a game log."""

    games: int
    turns: int
    mean_questions_per_dialog: float
    answer_distribution: Dict[str, float] = Field(..., description="Percent of yes / no / n/a answers")
    success_share: float = Field(..., description="Percent of games with status success")


class ConfusionMatrix2(BaseModel):
    """Joint correctness of two settings over the same games (rows A, columns B)."""

    aa: int = Field(..., ge=0, description="A correct and B correct")
    ab: int = Field(..., ge=0, description="A correct, B wrong")
    ba: int = Field(..., ge=0, description="A wrong, B correct")
    bb: int = Field(..., ge=0, description="A wrong and B wrong")

    @model_validator(mode="after")
    def _non_empty(self) -> "ConfusionMatrix2":
        if self.aa + self.ab + self.ba + self.bb == 0:
            raise ValueError("confusion matrix needs at least one game")
        return self

    @computed_field
    @property
    def total(self) -> int:
        return self.aa + self.ab + self.ba + self.bb

    @computed_field
    @property
    def row_marginals(self) -> List[float]:
        return [_percent(self.aa + self.ab, self.total), _percent(self.ba + self.bb, self.total)]

    @computed_field
    @property
    def column_marginals(self) -> List[float]:
        return [_percent(self.aa + self.ba, self.total), _percent(self.ab + self.bb, self.total)]

    @computed_field
    @property
    def coverage_shift(self) -> Dict[str, int]:
        return {"a_only": self.ab, "b_only": self.ba}


def _percent(count: int, total: int) -> float:
    return round(100.0 * count / total, 1)


class SweepRow(BaseModel):
    """One (guesser, ratio, seed) cell of a corruption sweep."""

    guesser: str
    ratio: float
    seed: int
    accuracy: float


class AblationCell(BaseModel):
    """One oracle x guesser cell of an ablation grid."""

    oracle: str
    guesser: str
    success_rate: float


class LogMetrics(BaseModel):
    """Everything ``eval --kind selfplay`` reports about a game log."""

    games: int
    success_rate: float
    repeated_question_rate: float
    self_bleu: Dict[str, float]
    question_types: Dict[str, float]
    lexical_diversity: float
    question_diversity: float
    statistics: DatasetStatistics
