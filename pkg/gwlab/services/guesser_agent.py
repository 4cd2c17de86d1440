"""
Guesser agent and belief-state estimator.

Each turn fuses the per-object states with the sentence state, reweights
the rows by the previous belief, adds the embedded answer, scores every
object with a shared head, renormalizes with a softmax and mixes the result
with the previous belief:

    p_{t+1} = alpha * softmax(head(f * p_t + a_t)) + (1 - alpha) * p_t

The final guess is the argmax of the last belief (lowest index on ties).
Rule-based guessers used as controlled subjects in the post-analysis
experiments live here too.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np

from gwlab.core.config import GuesserVariant, RunConfig
from gwlab.core.exceptions import InvalidBelief, InvalidData
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
    AnswerClass,
    GameRecord,
    GuesserEvalReport,
    QuestionKind,
    Scene,
)
from gwlab.services.checkpoint_store import ModelCheckpoint, check_shapes
from gwlab.services.dataset import Vocabulary, encode_question, training_games
from gwlab.services.encoder import EncoderCache, EncoderMode, ToyCoAttentionEncoder, object_features
from gwlab.services.trainer import fit
from gwlab.services.world import rule_answer
from gwlab.utils.grammar import parse_question

logger = logging.getLogger(__name__)

GUESSER_KIND = "guesser"

BELIEF_TOLERANCE = 1e-9


@dataclass
class BeliefState:
    """Probability vector over the scene objects after ``turn_index`` turns."""

    probabilities: np.ndarray
    turn_index: int = 0

    @classmethod
    def uniform(cls, n_objects: int) -> "BeliefState":
        return cls(probabilities=np.full(n_objects, 1.0 / n_objects), turn_index=0)


def check_belief(p: np.ndarray, n_objects: Optional[int] = None) -> np.ndarray:
    """
    Validate a belief vector.

    Raises:
        InvalidBelief: If entries are negative or non-finite, the sum is off
            by more than 1e-9, or the length is wrong.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or (n_objects is not None and p.size != n_objects):
        raise InvalidBelief(f"belief must be a vector over {n_objects} objects, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > BELIEF_TOLERANCE:
        msg = f"belief is not a distribution (sum={p.sum()!r})"
        logger.error(msg)
        raise InvalidBelief(msg)
    return p


def head_shapes(config: RunConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered manifest of the answer embedding, its projection and the scoring head."""
    d, e, hidden = config.hidden_size, config.answer_embed_size, config.guesser_head_hidden
    shapes: Dict[str, Tuple[int, ...]] = {"guesser.answer_embed": (len(AnswerClass), e)}
    if e != d:
        shapes["guesser.answer_proj"] = (e, d)
    if hidden > 0:
        shapes["guesser.head_w1"] = (d, hidden)
        shapes["guesser.head_b1"] = (hidden,)
        shapes["guesser.head_w2"] = (hidden, 1)
        shapes["guesser.head_b2"] = (1,)
    else:
        shapes["guesser.head_w"] = (d, 1)
        shapes["guesser.head_b"] = (1,)
    return shapes


def guesser_shapes(config: RunConfig, vocab_size: int) -> Dict[str, Tuple[int, ...]]:
    encoder = ToyCoAttentionEncoder()
    return {**encoder.shapes(config.hidden_size, vocab_size, config.layer_count), **head_shapes(config)}


def init_guesser_params(config: RunConfig, vocab_size: int, seed: int) -> Params:
    """Encoder plus Guesser parameters, uniform(-0.08, 0.08) in manifest order."""
    return uniform_init(guesser_shapes(config, vocab_size), seed)


def fuse_objects(h_obj: np.ndarray, h_cls: np.ndarray) -> np.ndarray:
    """Row i is h_obj[i] * h_cls."""
    return h_obj * h_cls[None, :]


def _answer_vector(params: Params, answer_index: int) -> np.ndarray:
    a = params["guesser.answer_embed"][answer_index]
    proj = params.get("guesser.answer_proj")
    return a @ proj if proj is not None else a


def _head_forward(v: np.ndarray, params: Params) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if "guesser.head_w1" in params:
        a1 = np.tanh(v @ params["guesser.head_w1"] + params["guesser.head_b1"])
        return (a1 @ params["guesser.head_w2"] + params["guesser.head_b2"])[:, 0], a1
    return (v @ params["guesser.head_w"] + params["guesser.head_b"])[:, 0], None


def _head_backward(
    v: np.ndarray, a1: Optional[np.ndarray], g_logits: np.ndarray, params: Params, grads: Params
) -> np.ndarray:
    g_out = g_logits[:, None]
    if a1 is not None:
        grads["guesser.head_w2"] += a1.T @ g_out
        grads["guesser.head_b2"] += g_out.sum(axis=0)
        g_z1 = tanh_backward(a1, g_out @ params["guesser.head_w2"].T)
        grads["guesser.head_w1"] += v.T @ g_z1
        grads["guesser.head_b1"] += g_z1.sum(axis=0)
        return g_z1 @ params["guesser.head_w1"].T
    grads["guesser.head_w"] += v.T @ g_out
    grads["guesser.head_b"] += g_out.sum(axis=0)
    return g_out @ params["guesser.head_w"].T


@dataclass
class TurnCache:
    """Intermediates of one belief update."""

    f: np.ndarray
    p_prev: np.ndarray
    v: np.ndarray
    a1: Optional[np.ndarray]
    p_soft: np.ndarray
    answer_index: Optional[int]
    enc_cache: Optional[EncoderCache] = None


def _turn_forward(
    f: np.ndarray,
    p_prev: np.ndarray,
    answer_index: Optional[int],
    params: Params,
    alpha: float,
) -> Tuple[np.ndarray, TurnCache]:
    v = f * p_prev[:, None]
    if answer_index is not None:
        v = v + _answer_vector(params, answer_index)[None, :]
    logits, a1 = _head_forward(v, params)
    p_soft = softmax(logits)
    p_next = alpha * p_soft + (1.0 - alpha) * p_prev
    return p_next, TurnCache(f=f, p_prev=p_prev, v=v, a1=a1, p_soft=p_soft, answer_index=answer_index)


def belief_update(
    f: np.ndarray,
    p_t: BeliefState,
    answer: AnswerClass,
    params: Params,
    alpha: float,
) -> BeliefState:
    """
    One post-fusion belief update.

    Args:
        f: Fused object states (N, d).
        p_t: Current belief.
        answer: Answer of this turn.
        params: Guesser parameters (answer embedding and head).
        alpha: State accumulation coefficient in [0, 1].

    Returns:
        Belief after the turn, with ``turn_index`` incremented.

    Raises:
        InvalidBelief: If ``p_t`` is not a distribution over the N objects.
    """
    p = check_belief(p_t.probabilities, f.shape[0])
    p_next, _ = _turn_forward(f, p, answer.class_index, params, alpha)
    return BeliefState(probabilities=p_next, turn_index=p_t.turn_index + 1)


def guess(p_t: BeliefState) -> int:
    """Argmax of the belief; ties go to the lowest index."""
    return int(np.argmax(p_t.probabilities))


@dataclass
class GuesserExample:
    """One dialog ready for the unrolled graph."""

    feats: np.ndarray
    tokens: List[np.ndarray]
    answers: List[int]
    target_id: int


class GuesserGraph:
    """Unrolled multi-turn Guesser graph with a hand-written backward pass."""

    def __init__(self, config: RunConfig) -> None:
        self.alpha = config.alpha
        self.add_answer = config.guesser_variant == GuesserVariant.POST_FUSION
        self.per_turn_supervision = config.per_turn_supervision
        self.encoder = ToyCoAttentionEncoder()

    def step(
        self,
        params: Params,
        tokens: np.ndarray,
        feats: np.ndarray,
        answer_index: int,
        p_prev: np.ndarray,
    ) -> Tuple[np.ndarray, TurnCache]:
        enc, enc_cache = self.encoder.encode(tokens, feats, params, EncoderMode.GUESSER)
        f = fuse_objects(enc.h_obj, enc.h_cls)
        p_next, cache = _turn_forward(f, p_prev, answer_index if self.add_answer else None, params, self.alpha)
        cache.enc_cache = enc_cache
        return p_next, cache

    def unroll(self, params: Params, example: GuesserExample) -> Tuple[List[np.ndarray], List[TurnCache]]:
        """Beliefs p_0 (uniform) .. p_T and the per-turn caches."""
        n = example.feats.shape[0]
        beliefs = [np.full(n, 1.0 / n)]
        caches = []
        for tokens, answer_index in zip(example.tokens, example.answers):
            p_next, cache = self.step(params, tokens, example.feats, answer_index, beliefs[-1])
            beliefs.append(p_next)
            caches.append(cache)
        return beliefs, caches

    def backward(
        self,
        params: Params,
        caches: Sequence[TurnCache],
        belief_grads: Sequence[Optional[np.ndarray]],
        grads: Params,
    ) -> None:
        """
        Back-propagate gradients on the beliefs p_1..p_T into ``grads``.

        ``belief_grads[t]`` is the upstream gradient on p_{t+1}; entries may be
        None. The uniform p_0 is a constant.
        """
        carry: Optional[np.ndarray] = None
        for t in range(len(caches) - 1, -1, -1):
            cache = caches[t]
            g_next = belief_grads[t]
            if carry is not None:
                g_next = carry if g_next is None else g_next + carry
            if g_next is None:
                carry = None
                continue

            g_soft = self.alpha * g_next
            g_prev = (1.0 - self.alpha) * g_next
            g_logits = softmax_backward(cache.p_soft, g_soft)
            g_v = _head_backward(cache.v, cache.a1, g_logits, params, grads)

            if cache.answer_index is not None:
                g_a = g_v.sum(axis=0)
                proj = params.get("guesser.answer_proj")
                if proj is not None:
                    a = params["guesser.answer_embed"][cache.answer_index]
                    grads["guesser.answer_proj"] += np.outer(a, g_a)
                    g_a = proj @ g_a
                grads["guesser.answer_embed"][cache.answer_index] += g_a

            g_f = g_v * cache.p_prev[:, None]
            g_prev = g_prev + (g_v * cache.f).sum(axis=1)

            out = cache.enc_cache.output
            g_obj = g_f * out.h_cls[None, :]
            g_cls = (g_f * out.h_obj).sum(axis=0)
            self.encoder.backward(cache.enc_cache, params, grads, g_obj=g_obj, g_cls=g_cls)
            carry = g_prev

    def loss_and_grads(self, params: Params, example: GuesserExample) -> Tuple[float, Params]:
        beliefs, caches = self.unroll(params, example)
        n_turns = len(caches)
        belief_grads: List[Optional[np.ndarray]] = [None] * n_turns
        if self.per_turn_supervision:
            loss = 0.0
            for t in range(n_turns):
                loss += cross_entropy(beliefs[t + 1], example.target_id) / n_turns
                belief_grads[t] = cross_entropy_grad(beliefs[t + 1], example.target_id) / n_turns
        else:
            loss = cross_entropy(beliefs[-1], example.target_id)
            belief_grads[-1] = cross_entropy_grad(beliefs[-1], example.target_id)
        grads = zeros_like_params(params)
        self.backward(params, caches, belief_grads, grads)
        return loss, grads

    def predict(self, params: Params, example: GuesserExample) -> int:
        beliefs, _ = self.unroll(params, example)
        return int(np.argmax(beliefs[-1]))

    def score(self, params: Params, examples: Sequence[GuesserExample]) -> float:
        if not examples:
            return 0.0
        return sum(self.predict(params, ex) == ex.target_id for ex in examples) / len(examples)


def turn_tokens(question: str, answer: AnswerClass, vocab: Vocabulary, config: RunConfig) -> np.ndarray:
    """Question tokens; the pre-concatenation variant appends the answer word."""
    extra = [answer.word] if config.guesser_variant == GuesserVariant.PRE_CONCATENATION else []
    return encode_question(question, vocab, config.max_question_len, extra_words=extra)


def build_examples(
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    vocab: Vocabulary,
    config: RunConfig,
) -> List[GuesserExample]:
    """Convert games with at least one turn into unrollable examples."""
    feats_cache: Dict[str, np.ndarray] = {}
    examples = []
    for game in games:
        if not game.turns:
            continue
        if game.scene_id not in feats_cache:
            feats_cache[game.scene_id] = object_features(scenes[game.scene_id])
        examples.append(
            GuesserExample(
                feats=feats_cache[game.scene_id],
                tokens=[turn_tokens(q, a, vocab, config) for q, a in game.turns],
                answers=[a.class_index for a in game.answers],
                target_id=game.target_id,
            )
        )
    return examples


def train_guesser(
    train_games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    config: RunConfig,
    vocab: Vocabulary,
    valid_games: Sequence[GameRecord] = (),
):
    """
    Train the Guesser on complete dialogs.

    The loss is the cross-entropy of the final-turn belief against the
    target, averaged over dialogs (every turn when ``per_turn_supervision``).

    Returns:
        Tuple of (ModelCheckpoint, TrainingReport).

    Raises:
        InvalidData: If no usable dialog remains after filtering.
    """
    usable = training_games(train_games, success_only=config.success_only)
    train_examples = build_examples(usable, scenes, vocab, config)
    if not train_examples:
        msg = "Guesser training needs at least one completed dialog"
        logger.error(msg)
        raise InvalidData(msg)
    valid_examples = build_examples(training_games(valid_games, success_only=False), scenes, vocab, config)

    logger.info(
        f"Training guesser ({config.guesser_variant.value}) on {len(train_examples)} dialogs "
        f"({len(valid_examples)} for validation)"
    )
    params = init_guesser_params(config, len(vocab), config.resolved_seed())
    params, report = fit(GuesserGraph(config), params, train_examples, valid_examples, config, GUESSER_KIND)
    return ModelCheckpoint(model_kind=GUESSER_KIND, config=config, vocab=vocab, params=params), report


@dataclass
class DialogResult:
    """Belief trajectory (p_1..p_T), final guess and success flag of one dialog."""

    beliefs: List[np.ndarray]
    guess: int
    success: bool


class GuesserSession:
    """Belief state of one game in progress."""

    def __init__(self, n_objects: int) -> None:
        self.belief = np.full(n_objects, 1.0 / n_objects)
        self.trajectory: List[np.ndarray] = []

    def observe(self, question: str, answer: AnswerClass) -> None:
        raise NotImplementedError

    def guess(self) -> int:
        return int(np.argmax(self.belief))


class GuesserAgent:
    """Base class of every guesser the engine can wire in."""

    name = "guesser"

    def new_session(self, scene: Scene, rng: np.random.Generator) -> GuesserSession:
        raise NotImplementedError

    def run_dialog(self, game: GameRecord, scene: Scene, rng: Optional[np.random.Generator] = None) -> DialogResult:
        """
        Replay a logged dialog and guess.

        Raises:
            InvalidData: If the game has no turns.
        """
        if not game.turns:
            raise InvalidData(f"game {game.game_id} has no turns to replay")
        session = self.new_session(scene, rng if rng is not None else np.random.default_rng(0))
        for question, answer in game.turns:
            session.observe(question, answer)
        final = session.guess()
        return DialogResult(beliefs=list(session.trajectory), guess=final, success=final == game.target_id)


class _TrainedSession(GuesserSession):
    def __init__(self, agent: "TrainedGuesser", scene: Scene) -> None:
        super().__init__(len(scene.objects))
        self.agent = agent
        self.feats = object_features(scene)

    def observe(self, question: str, answer: AnswerClass) -> None:
        tokens = turn_tokens(question, answer, self.agent.vocab, self.agent.config)
        self.belief, _ = self.agent.graph.step(
            self.agent.params, tokens, self.feats, answer.class_index, self.belief
        )
        self.trajectory.append(self.belief)


class TrainedGuesser(GuesserAgent):
    """Guesser backed by a trained checkpoint."""

    name = "trained"

    def __init__(self, checkpoint: ModelCheckpoint) -> None:
        check_shapes(checkpoint, guesser_shapes(checkpoint.config, len(checkpoint.vocab)))
        self.checkpoint = checkpoint
        self.config = checkpoint.config
        self.vocab = checkpoint.vocab
        self.params = checkpoint.subset(("enc.", "guesser."))
        self.graph = GuesserGraph(checkpoint.config)

    def new_session(self, scene: Scene, rng: np.random.Generator) -> GuesserSession:
        return _TrainedSession(self, scene)


def run_dialog(game: GameRecord, scene: Scene, checkpoint: ModelCheckpoint) -> DialogResult:
    """
    Track the belief through a logged dialog with a trained checkpoint.

    Starts uniform over the objects and applies one update per turn.
    """
    return TrainedGuesser(checkpoint).run_dialog(game, scene)


def eval_guesser(
    checkpoint: ModelCheckpoint,
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
) -> GuesserEvalReport:
    """Fraction of dialogs whose final guess is the target."""
    guesser = TrainedGuesser(checkpoint)
    return evaluate_guesser(guesser, games, scenes)


def evaluate_guesser(
    guesser: GuesserAgent,
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    seed: int = 0,
) -> GuesserEvalReport:
    """Independent accuracy of any guesser over dialogs with turns."""
    playable = [g for g in games if g.turns]
    correct = 0
    for game in playable:
        rng = np.random.default_rng(game_seed(seed, game.game_id))
        correct += int(guesser.run_dialog(game, scenes[game.scene_id], rng).success)
    accuracy = correct / len(playable) if playable else 0.0
    logger.info(f"{guesser.name} guesser accuracy {accuracy:.4f} over {len(playable)} dialogs")
    return GuesserEvalReport(accuracy=accuracy, games=len(playable))


def game_seed(master_seed: int, game_id: str) -> np.random.SeedSequence:
    """Per-game seed sequence keyed on (master seed, game id)."""
    return np.random.SeedSequence([int(master_seed), *game_id.encode("utf-8")])


class _UniformSession(GuesserSession):
    def __init__(self, n_objects: int, rng: np.random.Generator) -> None:
        super().__init__(n_objects)
        self._pick = int(rng.integers(0, n_objects))

    def observe(self, question: str, answer: AnswerClass) -> None:
        self.trajectory.append(self.belief)

    def guess(self) -> int:
        return self._pick


class UniformRandomGuesser(GuesserAgent):
    """Ignores the dialog and guesses uniformly at random."""

    name = "random"

    def new_session(self, scene: Scene, rng: np.random.Generator) -> GuesserSession:
        return _UniformSession(len(scene.objects), rng)


class _RuleSession(GuesserSession):
    def __init__(self, scene: Scene, trust: float, alpha: float) -> None:
        super().__init__(len(scene.objects))
        self.scene = scene
        self.trust = trust
        self.alpha = alpha

    def observe(self, question: str, answer: AnswerClass) -> None:
        semantics = parse_question(question)
        if answer is not AnswerClass.NA and semantics.kind is not QuestionKind.UNPARSEABLE:
            likelihood = np.array(
                [
                    self.trust if rule_answer(self.scene, obj.id, semantics) is answer else 1.0 - self.trust
                    for obj in self.scene.objects
                ]
            )
            posterior = self.belief * likelihood
            posterior /= posterior.sum()
            self.belief = self.alpha * posterior + (1.0 - self.alpha) * self.belief
        self.trajectory.append(self.belief)


class RuleGuesser(GuesserAgent):
    """
    Answer-reliant Bayesian filter over the rule answers of every object.

    Each yes/no answer multiplies an object's belief by ``trust`` when the
    object agrees with it and by ``1 - trust`` otherwise; n/a answers and
    unparseable questions leave the belief unchanged.
    """

    name = "rule"

    def __init__(self, trust: float = 0.98, alpha: float = 0.9) -> None:
        self.trust = trust
        self.alpha = alpha

    def new_session(self, scene: Scene, rng: np.random.Generator) -> GuesserSession:
        return _RuleSession(scene, self.trust, self.alpha)


class _SpatialSession(GuesserSession):
    def __init__(self, scene: Scene) -> None:
        super().__init__(len(scene.objects))
        areas = np.array([obj.area for obj in scene.objects])
        self.belief = areas / areas.sum()

    def observe(self, question: str, answer: AnswerClass) -> None:
        self.trajectory.append(self.belief)


class SpatialPriorGuesser(GuesserAgent):
    """Answer-agnostic guesser: belief proportional to area, guesses the largest object."""

    name = "spatial"

    def new_session(self, scene: Scene, rng: np.random.Generator) -> GuesserSession:
        return _SpatialSession(scene)
