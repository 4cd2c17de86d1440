"""
Oracle agent: answers yes / no / n/a about a known target object.

The answer head reads a two-way background/target fusion of the encoder
states, (h_img * h_cls) ++ (h_tgt * h_cls) ++ category embedding, through a
tanh MLP and a 3-way softmax. Training minimizes the mean cross-entropy of
every (question, target, answer) triple.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np

from gwlab.core.config import RunConfig
from gwlab.core.exceptions import InvalidCategory, InvalidData
from gwlab.core.numkernel import (
    Params,
    cross_entropy,
    cross_entropy_grad,
    softmax,
    softmax_backward,
    tanh_backward,
    uniform_init,
    zeros_like_params,
)
from gwlab.models.schemas import (
    CATEGORIES,
    QUESTION_TYPES,
    AnswerClass,
    GameRecord,
    OracleEvalReport,
    Scene,
    TypeAccuracy,
)
from gwlab.services.checkpoint_store import ModelCheckpoint, check_shapes
from gwlab.services.dataset import Vocabulary, encode_question
from gwlab.services.encoder import EncoderMode, EncoderOutput, ToyCoAttentionEncoder, object_features
from gwlab.services.trainer import fit
from gwlab.utils.grammar import parse_question

logger = logging.getLogger(__name__)

ORACLE_KIND = "oracle"
WEAK_ORACLE_KIND = "weak_oracle"

N_ANSWERS = len(AnswerClass)


def head_shapes(config: RunConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered manifest of the Oracle head."""
    d, c, hidden = config.hidden_size, config.category_embed_size, config.oracle_hidden_size
    return {
        "oracle.cat_embed": (len(CATEGORIES), c),
        "oracle.w1": (2 * d + c, hidden),
        "oracle.b1": (hidden,),
        "oracle.w2": (hidden, N_ANSWERS),
        "oracle.b2": (N_ANSWERS,),
    }


def oracle_shapes(config: RunConfig, vocab_size: int) -> Dict[str, Tuple[int, ...]]:
    encoder = ToyCoAttentionEncoder()
    return {**encoder.shapes(config.hidden_size, vocab_size, config.layer_count), **head_shapes(config)}


def init_oracle_params(config: RunConfig, vocab_size: int, seed: int) -> Params:
    """Encoder plus head parameters, uniform(-0.08, 0.08) in manifest order."""
    return uniform_init(oracle_shapes(config, vocab_size), seed)


def _category_index(category: str) -> int:
    if category not in CATEGORIES:
        msg = f"Unknown category '{category}'"
        logger.error(msg)
        raise InvalidCategory(msg)
    return CATEGORIES.index(category)


def _visual_states(enc: EncoderOutput, weak: bool) -> Tuple[np.ndarray, np.ndarray]:
    if weak:
        d = enc.h_cls.shape[0]
        return np.zeros(d), np.ones(d)
    return enc.h_img, enc.h_tgt


def fuse_background_target(
    enc: EncoderOutput,
    target_category: str,
    params: Params,
    weak: bool = False,
) -> np.ndarray:
    """
    Build the Oracle fusion vector.

    Args:
        enc: Encoder output produced in oracle mode.
        target_category: Category of the target object.
        params: Parameters holding ``oracle.cat_embed``.
        weak: Replace the visual states by constants (h_img = 0, h_tgt = 1).
            h_cls is kept, so with a co-attention block the weak Oracle still
            sees the objects the question tokens attended to.

    Returns:
        Vector (h_img * h_cls) ++ (h_tgt * h_cls) ++ c_cat of length 2d + c.

    Raises:
        InvalidCategory: If the category is not in the lexicon.
    """
    c_cat = params["oracle.cat_embed"][_category_index(target_category)]
    h_img, h_tgt = _visual_states(enc, weak)
    return np.concatenate([h_img * enc.h_cls, h_tgt * enc.h_cls, c_cat])


def _head_forward(fusion: np.ndarray, params: Params) -> Tuple[np.ndarray, np.ndarray]:
    a1 = np.tanh(fusion @ params["oracle.w1"] + params["oracle.b1"])
    logits = a1 @ params["oracle.w2"] + params["oracle.b2"]
    return a1, softmax(logits)


def predict_answer(fusion: np.ndarray, params: Params) -> np.ndarray:
    """Distribution over (yes, no, n/a) from a fusion vector."""
    return _head_forward(fusion, params)[1]


@dataclass
class OracleExample:
    """One (question, target, answer) triple ready for the graph."""

    tokens: np.ndarray
    feats: np.ndarray
    target_id: int
    category: str
    label: int
    question_type: str


def build_examples(
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    vocab: Vocabulary,
    max_question_len: int,
) -> List[OracleExample]:
    """Flatten every answered turn of the games into Oracle examples."""
    feats_cache: Dict[str, np.ndarray] = {}
    examples = []
    for game in games:
        scene = scenes[game.scene_id]
        if scene.scene_id not in feats_cache:
            feats_cache[scene.scene_id] = object_features(scene)
        feats = feats_cache[scene.scene_id]
        category = scene.objects[game.target_id].category
        for question, answer in game.turns:
            examples.append(
                OracleExample(
                    tokens=encode_question(question, vocab, max_question_len),
                    feats=feats,
                    target_id=game.target_id,
                    category=category,
                    label=answer.class_index,
                    question_type=parse_question(question).question_type,
                )
            )
    return examples


class OracleGraph:
    """Forward and backward pass of encoder plus Oracle head."""

    def __init__(self, weak: bool = False) -> None:
        self.weak = weak
        self.encoder = ToyCoAttentionEncoder()

    def forward(self, params: Params, tokens: np.ndarray, feats: np.ndarray, target_id: int, category: str):
        enc, cache = self.encoder.encode(tokens, feats, params, EncoderMode.ORACLE, target_id=target_id)
        fusion = fuse_background_target(enc, category, params, weak=self.weak)
        a1, probs = _head_forward(fusion, params)
        return probs, (enc, cache, fusion, a1)

    def predict(self, params: Params, example: OracleExample) -> np.ndarray:
        return self.forward(params, example.tokens, example.feats, example.target_id, example.category)[0]

    def loss_and_grads(self, params: Params, example: OracleExample) -> Tuple[float, Params]:
        probs, (enc, cache, fusion, a1) = self.forward(
            params, example.tokens, example.feats, example.target_id, example.category
        )
        loss = cross_entropy(probs, example.label)
        grads = zeros_like_params(params)

        g_logits = softmax_backward(probs, cross_entropy_grad(probs, example.label))
        grads["oracle.w2"] += np.outer(a1, g_logits)
        grads["oracle.b2"] += g_logits
        g_z1 = tanh_backward(a1, params["oracle.w2"] @ g_logits)
        grads["oracle.w1"] += np.outer(fusion, g_z1)
        grads["oracle.b1"] += g_z1
        g_fusion = params["oracle.w1"] @ g_z1

        d = enc.h_cls.shape[0]
        g_bg, g_tg, g_cat = g_fusion[:d], g_fusion[d : 2 * d], g_fusion[2 * d :]
        grads["oracle.cat_embed"][_category_index(example.category)] += g_cat

        h_img, h_tgt = _visual_states(enc, self.weak)
        g_cls = g_bg * h_img + g_tg * h_tgt
        g_obj = None
        g_img = None
        if not self.weak:
            g_img = g_bg * enc.h_cls
            g_obj = np.zeros_like(enc.h_obj)
            g_obj[enc.target_index] = g_tg * enc.h_cls
        self.encoder.backward(cache, params, grads, g_obj=g_obj, g_cls=g_cls, g_img=g_img)
        return loss, grads

    def score(self, params: Params, examples: Sequence[OracleExample]) -> float:
        if not examples:
            return 0.0
        correct = sum(int(np.argmax(self.predict(params, ex))) == ex.label for ex in examples)
        return correct / len(examples)


def train_oracle(
    train_games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    config: RunConfig,
    vocab: Vocabulary,
    valid_games: Sequence[GameRecord] = (),
    weak: bool = False,
):
    """
    Train the Oracle on every answered turn of the training games.

    Args:
        train_games: Games whose turns carry answer labels.
        scenes: Scene lookup by id.
        config: Run configuration.
        vocab: Shared vocabulary.
        valid_games: Games for per-epoch validation and early stopping.
        weak: Train the weak variant that ignores the visual states.

    Returns:
        Tuple of (ModelCheckpoint, TrainingReport).

    Raises:
        InvalidData: If the games contain no answered turns.
    """
    train_examples = build_examples(train_games, scenes, vocab, config.max_question_len)
    if not train_examples:
        msg = "Oracle training needs at least one answered turn"
        logger.error(msg)
        raise InvalidData(msg)
    valid_examples = build_examples(valid_games, scenes, vocab, config.max_question_len)

    kind = WEAK_ORACLE_KIND if weak else ORACLE_KIND
    logger.info(f"Training {kind} on {len(train_examples)} questions ({len(valid_examples)} for validation)")
    params = init_oracle_params(config, len(vocab), config.resolved_seed())
    params, report = fit(OracleGraph(weak=weak), params, train_examples, valid_examples, config, kind)
    return ModelCheckpoint(model_kind=kind, config=config, vocab=vocab, params=params), report


def eval_oracle(
    checkpoint: ModelCheckpoint,
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
) -> OracleEvalReport:
    """
    Accuracy of a trained Oracle against the logged answers.

    Returns:
        Report with the overall fraction and a per-type breakdown over
        object, color, size, location and other.
    """
    oracle = TrainedOracle(checkpoint)
    examples = build_examples(games, scenes, checkpoint.vocab, checkpoint.config.max_question_len)

    correct: Dict[str, int] = {t: 0 for t in QUESTION_TYPES}
    counts: Dict[str, int] = {t: 0 for t in QUESTION_TYPES}
    for example in examples:
        predicted = int(np.argmax(oracle.graph.predict(oracle.params, example)))
        counts[example.question_type] += 1
        correct[example.question_type] += int(predicted == example.label)

    total = sum(counts.values())
    by_type = {
        t: TypeAccuracy(accuracy=correct[t] / counts[t] if counts[t] else None, count=counts[t]) for t in QUESTION_TYPES
    }
    overall = sum(correct.values()) / total if total else 0.0
    logger.info(f"Oracle accuracy {overall:.4f} over {total} questions")
    return OracleEvalReport(overall=overall, by_type=by_type)


class TrainedOracle:
    """
    Answers with the argmax of a trained (or weak) Oracle checkpoint.

    A weak checkpoint may also flip yes/no answers with probability
    ``epsilon`` using the per-game random stream.
    """

    def __init__(self, checkpoint: ModelCheckpoint, epsilon: float = 0.0) -> None:
        check_shapes(checkpoint, oracle_shapes(checkpoint.config, len(checkpoint.vocab)))
        self.checkpoint = checkpoint
        self.params = checkpoint.params
        self.vocab = checkpoint.vocab
        self.epsilon = epsilon
        self.graph = OracleGraph(weak=checkpoint.model_kind == WEAK_ORACLE_KIND)
        self.name = "weak" if self.graph.weak else "trained"

    def answer(
        self,
        scene: Scene,
        target_id: int,
        question: str,
        rng: Optional[np.random.Generator] = None,
    ) -> AnswerClass:
        feats = object_features(scene)
        tokens = encode_question(question, self.vocab, self.checkpoint.config.max_question_len)
        probs, _ = self.graph.forward(self.params, tokens, feats, target_id, scene.objects[target_id].category)
        answer = AnswerClass.from_index(int(np.argmax(probs)))
        if self.epsilon > 0 and rng is not None and answer is not AnswerClass.NA and rng.random() < self.epsilon:
            answer = AnswerClass.NO if answer is AnswerClass.YES else AnswerClass.YES
        return answer
