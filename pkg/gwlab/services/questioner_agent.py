"""
Questioner agent: belief-reweighted object features, vis-diff context and a
gated recurrent decoder.

The Questioner shares the Guesser's state estimator. During training the
beliefs come from the estimator run over the gold question/answer prefixes;
the estimator is frozen by default and fine-tuned end to end when
``freeze_estimator`` is off.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np

from gwlab.core.config import RunConfig
from gwlab.core.exceptions import IncompatibleCheckpoint, InvalidData, InvalidScene
from gwlab.core.numkernel import (
    Params,
    cross_entropy,
    cross_entropy_grad,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    tanh_backward,
    uniform_init,
)
from gwlab.models.schemas import AnswerClass, GameRecord, Scene
from gwlab.services.checkpoint_store import ModelCheckpoint, check_shapes
from gwlab.services.dataset import Vocabulary, training_games
from gwlab.services.encoder import EncoderMode, ToyCoAttentionEncoder, object_features
from gwlab.services.guesser_agent import (
    GuesserExample,
    GuesserGraph,
    TrainedGuesser,
    check_belief,
    guesser_shapes,
    turn_tokens,
)
from gwlab.services.trainer import fit
from gwlab.utils.strings import tokenize

logger = logging.getLogger(__name__)

QUESTIONER_KIND = "questioner"
QUESTIONER_PREFIX = "questioner."

# estimator settings copied from the guesser checkpoint into the questioner run
ESTIMATOR_KEYS = (
    "hidden_size",
    "layer_count",
    "answer_embed_size",
    "guesser_head_hidden",
    "alpha",
    "guesser_variant",
    "max_question_len",
)

_GATES = ("z", "r", "h")


def questioner_shapes(config: RunConfig, vocab_size: int) -> Dict[str, Tuple[int, ...]]:
    """Ordered manifest of the Questioner's own parameters."""
    d, w = config.hidden_size, config.word_embed_size
    p = QUESTIONER_PREFIX
    shapes = dict(ToyCoAttentionEncoder(prefix=p).shapes(d, vocab_size, 0, visual_only=True))
    shapes[f"{p}diff_w"] = (2 * d, d)
    shapes[f"{p}diff_b"] = (d,)
    shapes[f"{p}init_w"] = (d, d)
    shapes[f"{p}init_b"] = (d,)
    shapes[f"{p}word_embed"] = (vocab_size, w)
    for gate in _GATES:
        shapes[f"{p}w{gate}"] = (w, d)
        shapes[f"{p}u{gate}"] = (d, d)
        shapes[f"{p}b{gate}"] = (d,)
    shapes[f"{p}out_w"] = (d, vocab_size)
    shapes[f"{p}out_b"] = (vocab_size,)
    return shapes


def reweight_objects(objects: np.ndarray, p_t: np.ndarray) -> np.ndarray:
    """Scale row i of the projected object features by the belief p_t[i]."""
    return objects * np.asarray(p_t, dtype=np.float64)[:, None]


def object_differences(weighted: np.ndarray) -> np.ndarray:
    """Row i minus the mean of the other rows."""
    n = weighted.shape[0]
    if n < 2:
        msg = f"vis-diff needs at least 2 objects, got {n}"
        logger.error(msg)
        raise InvalidScene(msg)
    total = weighted.sum(axis=0, keepdims=True)
    return weighted - (total - weighted) / (n - 1)


def vis_diff(weighted: np.ndarray, params: Params) -> np.ndarray:
    """
    Context vector from belief-weighted object rows.

    Each row is paired with its leave-one-out difference
    d_i = w_i - mean_{j != i} w_j; the concatenations are averaged over the
    objects and projected back to the hidden size.

    Args:
        weighted: Belief-weighted object rows (N, d).
        params: Parameters holding ``questioner.diff_w`` and ``questioner.diff_b``.

    Returns:
        Context vector v_t of length d.

    Raises:
        InvalidScene: If fewer than two objects are given.
    """
    diffs = object_differences(weighted)
    pooled = np.concatenate([weighted, diffs], axis=1).mean(axis=0)
    return pooled @ params[f"{QUESTIONER_PREFIX}diff_w"] + params[f"{QUESTIONER_PREFIX}diff_b"]


def _gru_step(x: np.ndarray, h: np.ndarray, params: Params) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    p = QUESTIONER_PREFIX
    z = sigmoid(x @ params[f"{p}wz"] + h @ params[f"{p}uz"] + params[f"{p}bz"])
    r = sigmoid(x @ params[f"{p}wr"] + h @ params[f"{p}ur"] + params[f"{p}br"])
    hh = np.tanh(x @ params[f"{p}wh"] + (r * h) @ params[f"{p}uh"] + params[f"{p}bh"])
    h_next = (1.0 - z) * h + z * hh
    return h_next, {"x": x, "h": h, "z": z, "r": r, "hh": hh}


def _gru_step_backward(
    step: Dict[str, np.ndarray], g_next: np.ndarray, params: Params, grads: Params
) -> Tuple[np.ndarray, np.ndarray]:
    p = QUESTIONER_PREFIX
    x, h, z, r, hh = step["x"], step["h"], step["z"], step["r"], step["hh"]

    g_h = g_next * (1.0 - z)
    g_hh = g_next * z
    g_z = g_next * (hh - h)

    g_ah = tanh_backward(hh, g_hh)
    grads[f"{p}wh"] += np.outer(x, g_ah)
    grads[f"{p}uh"] += np.outer(r * h, g_ah)
    grads[f"{p}bh"] += g_ah
    g_rh = params[f"{p}uh"] @ g_ah
    g_r = g_rh * h
    g_h += g_rh * r
    g_x = params[f"{p}wh"] @ g_ah

    for gate, g_gate, out in (("z", g_z, z), ("r", g_r, r)):
        g_a = sigmoid_backward(out, g_gate)
        grads[f"{p}w{gate}"] += np.outer(x, g_a)
        grads[f"{p}u{gate}"] += np.outer(h, g_a)
        grads[f"{p}b{gate}"] += g_a
        g_h += params[f"{p}u{gate}"] @ g_a
        g_x += params[f"{p}w{gate}"] @ g_a
    return g_h, g_x


def initial_state(v_t: np.ndarray, params: Params) -> np.ndarray:
    return np.tanh(v_t @ params[f"{QUESTIONER_PREFIX}init_w"] + params[f"{QUESTIONER_PREFIX}init_b"])


def _banned_tokens(vocab: Vocabulary) -> List[int]:
    return [vocab.pad, vocab.sos, vocab.cls, vocab.unk]


def decode_question(
    v_t: np.ndarray,
    params: Params,
    vocab: Vocabulary,
    max_len: int,
    rng: Optional[np.random.Generator] = None,
    sample: bool = False,
) -> str:
    """
    Generate one question from a context vector.

    Greedy by default: each step emits the argmax word, never [PAD], [SOS],
    [CLS] or [UNK]. [EOS] ends the question only as the unique maximum; on a
    tie the lowest-index word wins. With ``sample`` the next word is drawn
    from the masked softmax using ``rng``.

    Args:
        v_t: Context vector.
        params: Questioner parameters.
        vocab: Vocabulary shared by the run.
        max_len: Maximum number of words.
        rng: Random stream for sampling.
        sample: Sample instead of taking the argmax.

    Returns:
        Question text terminated by '?'.
    """
    p = QUESTIONER_PREFIX
    h = initial_state(v_t, params)
    previous = vocab.sos
    banned = _banned_tokens(vocab)
    words: List[str] = []
    for _ in range(max_len):
        h, _ = _gru_step(params[f"{p}word_embed"][previous], h, params)
        logits = h @ params[f"{p}out_w"] + params[f"{p}out_b"]
        logits[banned] = -np.inf
        if sample and rng is not None:
            probs = softmax(logits)
            choice = int(rng.choice(len(probs), p=probs))
            if choice == vocab.eos:
                break
        else:
            best = logits.max()
            if logits[vocab.eos] == best and np.count_nonzero(logits == best) == 1:
                break
            logits[vocab.eos] = -np.inf
            choice = int(np.argmax(logits))
        words.append(vocab.tokens[choice])
        previous = choice
    return " ".join(words) + "?"


@dataclass
class QuestionerExample:
    """One gold dialog: estimator inputs plus decoder inputs and targets per turn."""

    estimator: GuesserExample
    inputs: List[np.ndarray]
    targets: List[np.ndarray]


def decoder_sequences(question: str, vocab: Vocabulary, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """Teacher-forcing input ([SOS] + words) and target (words + [EOS]) of one question."""
    words = [vocab.index_of(w) for w in tokenize(question)][: max_len - 1]
    inputs = np.asarray([vocab.sos] + words, dtype=np.int64)
    targets = np.asarray(words + [vocab.eos], dtype=np.int64)
    return inputs, targets


def build_examples(
    games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    vocab: Vocabulary,
    config: RunConfig,
) -> List[QuestionerExample]:
    feats_cache: Dict[str, np.ndarray] = {}
    examples = []
    for game in games:
        if not game.turns:
            continue
        if game.scene_id not in feats_cache:
            feats_cache[game.scene_id] = object_features(scenes[game.scene_id])
        sequences = [decoder_sequences(q, vocab, config.max_question_len) for q in game.questions]
        examples.append(
            QuestionerExample(
                estimator=GuesserExample(
                    feats=feats_cache[game.scene_id],
                    tokens=[turn_tokens(q, a, vocab, config) for q, a in game.turns],
                    answers=[a.class_index for a in game.answers],
                    target_id=game.target_id,
                ),
                inputs=[s[0] for s in sequences],
                targets=[s[1] for s in sequences],
            )
        )
    return examples


class QuestionerGraph:
    """
    Teacher-forced decoder over every turn of a gold dialog.

    The loss of one dialog is the mean next-token cross-entropy over all of
    its turns and positions.
    """

    def __init__(self, config: RunConfig) -> None:
        self.freeze_estimator = config.freeze_estimator
        self.estimator = GuesserGraph(config)
        self.visual = ToyCoAttentionEncoder(prefix=QUESTIONER_PREFIX)

    def _forward(self, params: Params, example: QuestionerExample):
        beliefs, estimator_caches = self.estimator.unroll(params, example.estimator)
        objects, enc_cache = self.visual.encode(None, example.estimator.feats, params, EncoderMode.QUESTIONER)
        turns = []
        for t, (inputs, targets) in enumerate(zip(example.inputs, example.targets)):
            weighted = reweight_objects(objects.h_obj, beliefs[t])
            diffs = object_differences(weighted)
            pooled = np.concatenate([weighted, diffs], axis=1).mean(axis=0)
            v_t = pooled @ params[f"{QUESTIONER_PREFIX}diff_w"] + params[f"{QUESTIONER_PREFIX}diff_b"]
            h0 = initial_state(v_t, params)
            h = h0
            steps, dists = [], []
            for token in inputs:
                h, step = _gru_step(params[f"{QUESTIONER_PREFIX}word_embed"][token], h, params)
                step["token"] = token
                step["h_out"] = h
                steps.append(step)
                dists.append(softmax(h @ params[f"{QUESTIONER_PREFIX}out_w"] + params[f"{QUESTIONER_PREFIX}out_b"]))
            turns.append(
                {
                    "belief": beliefs[t],
                    "pooled": pooled,
                    "v": v_t,
                    "h0": h0,
                    "steps": steps,
                    "dists": dists,
                    "targets": targets,
                }
            )
        return turns, objects, enc_cache, estimator_caches

    def token_losses(self, params: Params, example: QuestionerExample) -> List[float]:
        turns = self._forward(params, example)[0]
        return [cross_entropy(q, int(y)) for turn in turns for q, y in zip(turn["dists"], turn["targets"])]

    def loss_and_grads(self, params: Params, example: QuestionerExample) -> Tuple[float, Params]:
        p = QUESTIONER_PREFIX
        turns, objects, enc_cache, estimator_caches = self._forward(params, example)
        n_tokens = sum(len(turn["targets"]) for turn in turns)
        trainable = [name for name in params if name.startswith(p) or not self.freeze_estimator]
        grads: Params = {name: np.zeros_like(params[name]) for name in trainable}

        loss = 0.0
        g_objects = np.zeros_like(objects.h_obj)
        belief_grads: List[Optional[np.ndarray]] = [None] * len(estimator_caches)
        n_objects = objects.h_obj.shape[0]
        d = objects.h_obj.shape[1]

        for t, turn in enumerate(turns):
            g_h = np.zeros(d)
            for step, q, y in reversed(list(zip(turn["steps"], turn["dists"], turn["targets"]))):
                loss += cross_entropy(q, int(y)) / n_tokens
                g_logits = softmax_backward(q, cross_entropy_grad(q, int(y)) / n_tokens)
                grads[f"{p}out_w"] += np.outer(step["h_out"], g_logits)
                grads[f"{p}out_b"] += g_logits
                g_h = g_h + params[f"{p}out_w"] @ g_logits
                g_h, g_x = _gru_step_backward(step, g_h, params, grads)
                grads[f"{p}word_embed"][step["token"]] += g_x

            g_init = tanh_backward(turn["h0"], g_h)
            grads[f"{p}init_w"] += np.outer(turn["v"], g_init)
            grads[f"{p}init_b"] += g_init
            g_v = params[f"{p}init_w"] @ g_init
            grads[f"{p}diff_w"] += np.outer(turn["pooled"], g_v)
            grads[f"{p}diff_b"] += g_v
            g_pooled = params[f"{p}diff_w"] @ g_v
            g_weighted = np.tile(g_pooled[:d] / n_objects, (n_objects, 1))
            g_diffs = np.tile(g_pooled[d:] / n_objects, (n_objects, 1))
            # d_i = w_i * N/(N-1) - sum_j w_j / (N-1)
            g_weighted += g_diffs * n_objects / (n_objects - 1) - g_diffs.sum(axis=0) / (n_objects - 1)

            belief = turn["belief"]
            g_objects += g_weighted * belief[:, None]
            if not self.freeze_estimator and t > 0:
                belief_grads[t - 1] = (g_weighted * objects.h_obj).sum(axis=1)

        self.visual.backward(enc_cache, params, grads, g_obj=g_objects)
        if not self.freeze_estimator:
            self.estimator.backward(params, estimator_caches, belief_grads, grads)
        return loss, grads

    def score(self, params: Params, examples: Sequence[QuestionerExample]) -> float:
        """Teacher-forced next-token accuracy."""
        correct = total = 0
        for example in examples:
            for turn in self._forward(params, example)[0]:
                for q, y in zip(turn["dists"], turn["targets"]):
                    correct += int(np.argmax(q) == y)
                    total += 1
        return correct / total if total else 0.0


def _estimator_config(config: RunConfig, guesser_checkpoint: ModelCheckpoint) -> RunConfig:
    return config.with_overrides(**{key: getattr(guesser_checkpoint.config, key) for key in ESTIMATOR_KEYS})


def train_questioner(
    train_games: Sequence[GameRecord],
    scenes: Mapping[str, Scene],
    guesser_checkpoint: ModelCheckpoint,
    config: RunConfig,
    vocab: Vocabulary,
    valid_games: Sequence[GameRecord] = (),
):
    """
    Train the Questioner by teacher forcing on gold dialogs.

    Args:
        train_games: Gold dialogs.
        scenes: Scene lookup by id.
        guesser_checkpoint: Pretrained Guesser providing the state estimator.
        config: Run configuration; the estimator settings are taken from the
            guesser checkpoint.
        vocab: Vocabulary of the run.
        valid_games: Dialogs for validation and early stopping.

    Returns:
        Tuple of (ModelCheckpoint holding estimator and questioner parameters, TrainingReport).

    Raises:
        IncompatibleCheckpoint: If the guesser was trained with another vocabulary.
        InvalidData: If no dialog has turns.
    """
    if guesser_checkpoint.vocab.tokens != vocab.tokens:
        msg = "Guesser checkpoint vocabulary differs from the questioner training vocabulary"
        logger.error(msg)
        raise IncompatibleCheckpoint(msg)
    check_shapes(guesser_checkpoint, guesser_shapes(guesser_checkpoint.config, len(vocab)))

    config = _estimator_config(config, guesser_checkpoint)
    usable = training_games(train_games, success_only=config.success_only)
    train_examples = build_examples(usable, scenes, vocab, config)
    if not train_examples:
        msg = "Questioner training needs at least one dialog with turns"
        logger.error(msg)
        raise InvalidData(msg)
    valid_examples = build_examples(training_games(valid_games, success_only=False), scenes, vocab, config)

    estimator = guesser_checkpoint.subset(("enc.", "guesser."))
    params = {**estimator, **uniform_init(questioner_shapes(config, len(vocab)), config.resolved_seed())}
    logger.info(
        f"Training questioner on {len(train_examples)} dialogs "
        f"({'frozen' if config.freeze_estimator else 'fine-tuned'} estimator)"
    )
    params, report = fit(QuestionerGraph(config), params, train_examples, valid_examples, config, QUESTIONER_KIND)
    return ModelCheckpoint(model_kind=QUESTIONER_KIND, config=config, vocab=vocab, params=params), report


def perplexity(checkpoint: ModelCheckpoint, games: Sequence[GameRecord], scenes: Mapping[str, Scene]) -> float:
    """Per-token perplexity of the teacher-forced decoder over the dialogs."""
    examples = build_examples(games, scenes, checkpoint.vocab, checkpoint.config)
    graph = QuestionerGraph(checkpoint.config)
    losses = [loss for example in examples for loss in graph.token_losses(checkpoint.params, example)]
    if not losses:
        raise InvalidData("perplexity needs at least one question")
    return float(np.exp(np.mean(losses)))


class PolicyGradientHook:
    """
    Extension point for reward-driven questioner updates.

    The engine reports every finished self-play game here; the default hook
    does nothing.
    """

    def on_game(self, game: GameRecord, reward: float) -> None:
        return None


class QuestionerSession:
    """Question source for one game in progress."""

    def next_question(self, turn: int) -> str:
        raise NotImplementedError

    def observe(self, question: str, answer: AnswerClass) -> None:
        raise NotImplementedError


class QuestionerAgent:
    """Base class of every questioner the engine can wire in."""

    name = "questioner"
    hook: PolicyGradientHook = PolicyGradientHook()

    def new_session(self, scene: Scene, rng: np.random.Generator) -> QuestionerSession:
        raise NotImplementedError

    def record_outcome(self, game: GameRecord) -> None:
        self.hook.on_game(game, 1.0 if game.guess == game.target_id else 0.0)


class _TrainedQuestionerSession(QuestionerSession):
    def __init__(self, agent: "TrainedQuestioner", scene: Scene, rng: np.random.Generator) -> None:
        self.agent = agent
        self.rng = rng
        projected, _ = agent.visual.encode(None, object_features(scene), agent.params, EncoderMode.QUESTIONER)
        self.objects = projected.h_obj
        self.tracker = agent.estimator.new_session(scene, rng)

    def next_question(self, turn: int) -> str:
        belief = check_belief(self.tracker.belief, self.objects.shape[0])
        v_t = vis_diff(reweight_objects(self.objects, belief), self.agent.params)
        config = self.agent.config
        return decode_question(
            v_t,
            self.agent.params,
            self.agent.vocab,
            config.max_question_len - 1,
            rng=self.rng,
            sample=self.agent.sample,
        )

    def observe(self, question: str, answer: AnswerClass) -> None:
        self.tracker.observe(question, answer)


class TrainedQuestioner(QuestionerAgent):
    """
    Questioner backed by a trained checkpoint.

    Keeps its own belief through the checkpoint's state estimator, so it can
    be paired with any guesser.
    """

    name = "trained"

    def __init__(
        self,
        checkpoint: ModelCheckpoint,
        sample: Optional[bool] = None,
        hook: Optional[PolicyGradientHook] = None,
    ) -> None:
        check_shapes(checkpoint, questioner_shapes(checkpoint.config, len(checkpoint.vocab)))
        self.checkpoint = checkpoint
        self.config = checkpoint.config
        self.vocab = checkpoint.vocab
        self.params = checkpoint.params
        self.sample = checkpoint.config.sample_questions if sample is None else sample
        self.estimator = TrainedGuesser(checkpoint)
        self.visual = ToyCoAttentionEncoder(prefix=QUESTIONER_PREFIX)
        if hook is not None:
            self.hook = hook

    def new_session(self, scene: Scene, rng: np.random.Generator) -> QuestionerSession:
        return _TrainedQuestionerSession(self, scene, rng)
