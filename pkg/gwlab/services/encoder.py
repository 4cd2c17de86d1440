"""
Toy multi-modal encoder.

Projects object features and embeds question tokens, optionally runs one
co-attention round (text attends to objects and objects attend to text,
each followed by a residual tanh feed-forward), then mean-pools each
modality into a global state.

Every agent owns its encoder parameters under a name prefix (``enc.`` for
the Oracle and the Guesser, ``questioner.`` for the Questioner's visual
projection) and back-propagates through ``encode_backward``.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple
import logging

import numpy as np

from gwlab.core.exceptions import InvalidShape, InvalidTarget
from gwlab.core.numkernel import Params, softmax_backward, softmax_rows, tanh_backward, uniform_init
from gwlab.models.schemas import CATEGORIES, COLORS, SIZE_CLASSES, Scene

logger = logging.getLogger(__name__)

SPATIAL_SIZE = 7
FEATURE_SIZE = len(CATEGORIES) + len(COLORS) + len(SIZE_CLASSES) + SPATIAL_SIZE

_COATTENTION_WEIGHTS = ["xt_q", "xv_k", "xv_v", "xv_q", "xt_k", "xt_v"]


class EncoderMode(str, Enum):
    """Which agent is consuming the encoder."""

    ORACLE = "oracle"
    GUESSER = "guesser"
    QUESTIONER = "questioner"


@dataclass
class EncoderOutput:
    """
    Hidden states of one (question, scene) pair.

    Attributes:
        h_img: Global visual state (d,).
        h_obj: Per-object states (N, d).
        h_cls: Sentence state (d,).
        h_tok: Per-token states (L, d).
        target_index: Row of ``h_obj`` holding the target in oracle mode.
    """

    h_img: np.ndarray
    h_obj: np.ndarray
    h_cls: np.ndarray
    h_tok: np.ndarray
    target_index: Optional[int] = None

    @property
    def h_tgt(self) -> np.ndarray:
        if self.target_index is None:
            raise InvalidTarget("encoder output was not produced in oracle mode")
        return self.h_obj[self.target_index]


@dataclass
class EncoderCache:
    """Forward intermediates needed by ``encode_backward``."""

    tokens: np.ndarray
    feats: np.ndarray
    mode: EncoderMode
    coattention: bool
    E: np.ndarray
    O: np.ndarray
    output: EncoderOutput
    text_mean: np.ndarray
    vis_mean: np.ndarray
    Qt: Optional[np.ndarray] = None
    Kv: Optional[np.ndarray] = None
    Vv: Optional[np.ndarray] = None
    At: Optional[np.ndarray] = None
    Qv: Optional[np.ndarray] = None
    Kt: Optional[np.ndarray] = None
    Vt: Optional[np.ndarray] = None
    Av: Optional[np.ndarray] = None
    E1: Optional[np.ndarray] = None
    O1: Optional[np.ndarray] = None
    Ut: Optional[np.ndarray] = None
    Uv: Optional[np.ndarray] = None


def object_features(scene: Scene) -> np.ndarray:
    """
    Raw per-object features: attribute one-hots then 7 spatial values.

    Spatial block is (x_min, y_min, x_max, y_max, width, height, area).

    Args:
        scene: Scene to featurize.

    Returns:
        Array of shape (N, FEATURE_SIZE).
    """
    feats = np.zeros((len(scene.objects), FEATURE_SIZE), dtype=np.float64)
    color_offset = len(CATEGORIES)
    size_offset = color_offset + len(COLORS)
    spatial_offset = size_offset + len(SIZE_CLASSES)
    for row, obj in enumerate(scene.objects):
        feats[row, CATEGORIES.index(obj.category)] = 1.0
        feats[row, color_offset + COLORS.index(obj.color)] = 1.0
        feats[row, size_offset + SIZE_CLASSES.index(obj.size_class)] = 1.0
        x_min, y_min, x_max, y_max = obj.bbox
        width, height = x_max - x_min, y_max - y_min
        feats[row, spatial_offset:] = [x_min, y_min, x_max, y_max, width, height, width * height]
    return feats


def param_shapes(
    d: int,
    vocab_size: int,
    layer_count: int,
    prefix: str = "enc.",
    visual_only: bool = False,
) -> Dict[str, Tuple[int, ...]]:
    """
    Ordered parameter manifest of the encoder.

    Args:
        d: Hidden size.
        vocab_size: Token embedding rows.
        layer_count: 0 or 1 co-attention blocks.
        prefix: Name prefix of every parameter.
        visual_only: Only the object projection (questioner mode).

    Returns:
        Name -> shape mapping in manifest order.
    """
    if d < 2:
        raise InvalidShape(f"hidden size must be >= 2, got {d}")
    shapes: Dict[str, Tuple[int, ...]] = {
        f"{prefix}vis_w": (FEATURE_SIZE, d),
        f"{prefix}vis_b": (d,),
    }
    if visual_only:
        return shapes
    shapes[f"{prefix}tok_embed"] = (vocab_size, d)
    shapes[f"{prefix}text_pool_w"] = (d, d)
    shapes[f"{prefix}text_pool_b"] = (d,)
    shapes[f"{prefix}vis_pool_w"] = (d, d)
    shapes[f"{prefix}vis_pool_b"] = (d,)
    if layer_count == 1:
        for name in _COATTENTION_WEIGHTS:
            shapes[f"{prefix}{name}"] = (d, d)
        shapes[f"{prefix}ff_t_w"] = (d, d)
        shapes[f"{prefix}ff_t_b"] = (d,)
        shapes[f"{prefix}ff_v_w"] = (d, d)
        shapes[f"{prefix}ff_v_b"] = (d,)
    return shapes


def init_params(d: int, vocab_size: int, layer_count: int, seed: int, prefix: str = "enc.") -> Params:
    """Uniform(-0.08, 0.08) encoder parameters, deterministic per seed."""
    return uniform_init(param_shapes(d, vocab_size, layer_count, prefix=prefix), seed)


def encode(
    tokens: np.ndarray,
    feats: np.ndarray,
    params: Params,
    mode: EncoderMode = EncoderMode.GUESSER,
    target_id: Optional[int] = None,
    prefix: str = "enc.",
) -> Tuple[EncoderOutput, EncoderCache]:
    """
    Encode one question against one scene.

    The co-attention block runs when its weights are present in ``params``.
    Questioner mode skips the text path and the co-attention block and
    returns the projected object rows only.

    Args:
        tokens: Question token indices, [CLS] first.
        feats: Object features (N, FEATURE_SIZE).
        params: Parameter dict containing the prefixed encoder weights.
        mode: Consuming agent.
        target_id: Target row in oracle mode.
        prefix: Parameter name prefix.

    Returns:
        Tuple of (EncoderOutput, cache for the backward pass).

    Raises:
        InvalidShape: For empty features or tokens outside the vocabulary.
        InvalidTarget: For a missing or out-of-range target in oracle mode.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise InvalidShape(f"object features must be a non-empty matrix, got {feats.shape}")

    O = feats @ params[f"{prefix}vis_w"] + params[f"{prefix}vis_b"]
    d = O.shape[1]

    if mode is EncoderMode.QUESTIONER:
        empty = np.zeros(d)
        output = EncoderOutput(h_img=empty, h_obj=O, h_cls=empty, h_tok=np.zeros((0, d)))
        cache = EncoderCache(
            tokens=np.zeros(0, dtype=np.int64),
            feats=feats,
            mode=mode,
            coattention=False,
            E=np.zeros((0, d)),
            O=O,
            output=output,
            text_mean=empty,
            vis_mean=empty,
        )
        return output, cache

    target_index = None
    if mode is EncoderMode.ORACLE:
        if target_id is None or not 0 <= target_id < feats.shape[0]:
            msg = f"Unknown target {target_id} for a scene of {feats.shape[0]} objects"
            logger.error(msg)
            raise InvalidTarget(msg)
        target_index = int(target_id)

    tok_embed = params[f"{prefix}tok_embed"]
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0 or tokens.min() < 0 or tokens.max() >= tok_embed.shape[0]:
        raise InvalidShape(f"token indices must be non-empty and below {tok_embed.shape[0]}")
    E = tok_embed[tokens]

    coattention = f"{prefix}xt_q" in params
    cache = EncoderCache(
        tokens=tokens,
        feats=feats,
        mode=mode,
        coattention=coattention,
        E=E,
        O=O,
        output=None,
        text_mean=None,
        vis_mean=None,
    )

    if coattention:
        scale = 1.0 / np.sqrt(d)
        # text attends to objects
        cache.Qt = E @ params[f"{prefix}xt_q"]
        cache.Kv = O @ params[f"{prefix}xv_k"]
        cache.Vv = O @ params[f"{prefix}xv_v"]
        cache.At = softmax_rows(scale * cache.Qt @ cache.Kv.T)
        cache.E1 = E + cache.At @ cache.Vv
        # objects attend to text
        cache.Qv = O @ params[f"{prefix}xv_q"]
        cache.Kt = E @ params[f"{prefix}xt_k"]
        cache.Vt = E @ params[f"{prefix}xt_v"]
        cache.Av = softmax_rows(scale * cache.Qv @ cache.Kt.T)
        cache.O1 = O + cache.Av @ cache.Vt
        # residual feed-forward
        cache.Ut = np.tanh(cache.E1 @ params[f"{prefix}ff_t_w"] + params[f"{prefix}ff_t_b"])
        cache.Uv = np.tanh(cache.O1 @ params[f"{prefix}ff_v_w"] + params[f"{prefix}ff_v_b"])
        h_tok = cache.E1 + cache.Ut
        h_obj = cache.O1 + cache.Uv
    else:
        h_tok, h_obj = E, O

    cache.text_mean = h_tok.mean(axis=0)
    cache.vis_mean = h_obj.mean(axis=0)
    h_cls = np.tanh(cache.text_mean @ params[f"{prefix}text_pool_w"] + params[f"{prefix}text_pool_b"])
    h_img = np.tanh(cache.vis_mean @ params[f"{prefix}vis_pool_w"] + params[f"{prefix}vis_pool_b"])

    cache.output = EncoderOutput(h_img=h_img, h_obj=h_obj, h_cls=h_cls, h_tok=h_tok, target_index=target_index)
    return cache.output, cache


def encode_backward(
    cache: EncoderCache,
    params: Params,
    grads: Params,
    g_obj: Optional[np.ndarray] = None,
    g_cls: Optional[np.ndarray] = None,
    g_img: Optional[np.ndarray] = None,
    g_tok: Optional[np.ndarray] = None,
    prefix: str = "enc.",
) -> None:
    """
    Accumulate encoder parameter gradients into ``grads`` in place.

    Args:
        cache: Forward cache from ``encode``.
        params: Parameters used in the forward pass.
        grads: Gradient accumulator keyed like ``params``.
        g_obj: Upstream gradient on ``h_obj``.
        g_cls: Upstream gradient on ``h_cls``.
        g_img: Upstream gradient on ``h_img``.
        g_tok: Upstream gradient on ``h_tok``.
        prefix: Parameter name prefix.
    """
    out = cache.output
    n_obj, d = out.h_obj.shape
    g_obj = np.zeros((n_obj, d)) if g_obj is None else g_obj.copy()

    if cache.mode is EncoderMode.QUESTIONER:
        grads[f"{prefix}vis_w"] += cache.feats.T @ g_obj
        grads[f"{prefix}vis_b"] += g_obj.sum(axis=0)
        return

    n_tok = out.h_tok.shape[0]
    g_tok = np.zeros((n_tok, d)) if g_tok is None else g_tok.copy()

    if g_cls is not None:
        gz = tanh_backward(out.h_cls, g_cls)
        grads[f"{prefix}text_pool_w"] += np.outer(cache.text_mean, gz)
        grads[f"{prefix}text_pool_b"] += gz
        g_tok += (params[f"{prefix}text_pool_w"] @ gz) / n_tok
    if g_img is not None:
        gz = tanh_backward(out.h_img, g_img)
        grads[f"{prefix}vis_pool_w"] += np.outer(cache.vis_mean, gz)
        grads[f"{prefix}vis_pool_b"] += gz
        g_obj += (params[f"{prefix}vis_pool_w"] @ gz) / n_obj

    if cache.coattention:
        scale = 1.0 / np.sqrt(d)
        E, O = cache.E, cache.O

        # residual feed-forward
        gzt = tanh_backward(cache.Ut, g_tok)
        grads[f"{prefix}ff_t_w"] += cache.E1.T @ gzt
        grads[f"{prefix}ff_t_b"] += gzt.sum(axis=0)
        g_E1 = g_tok + gzt @ params[f"{prefix}ff_t_w"].T

        gzv = tanh_backward(cache.Uv, g_obj)
        grads[f"{prefix}ff_v_w"] += cache.O1.T @ gzv
        grads[f"{prefix}ff_v_b"] += gzv.sum(axis=0)
        g_O1 = g_obj + gzv @ params[f"{prefix}ff_v_w"].T

        g_E = g_E1.copy()
        g_O = g_O1.copy()

        # text attends to objects
        g_At = g_E1 @ cache.Vv.T
        g_Vv = cache.At.T @ g_E1
        g_St = softmax_backward(cache.At, g_At) * scale
        g_Qt = g_St @ cache.Kv
        g_Kv = g_St.T @ cache.Qt
        grads[f"{prefix}xt_q"] += E.T @ g_Qt
        grads[f"{prefix}xv_k"] += O.T @ g_Kv
        grads[f"{prefix}xv_v"] += O.T @ g_Vv
        g_E += g_Qt @ params[f"{prefix}xt_q"].T
        g_O += g_Kv @ params[f"{prefix}xv_k"].T + g_Vv @ params[f"{prefix}xv_v"].T

        # objects attend to text
        g_Av = g_O1 @ cache.Vt.T
        g_Vt = cache.Av.T @ g_O1
        g_Sv = softmax_backward(cache.Av, g_Av) * scale
        g_Qv = g_Sv @ cache.Kt
        g_Kt = g_Sv.T @ cache.Qv
        grads[f"{prefix}xv_q"] += O.T @ g_Qv
        grads[f"{prefix}xt_k"] += E.T @ g_Kt
        grads[f"{prefix}xt_v"] += E.T @ g_Vt
        g_O += g_Qv @ params[f"{prefix}xv_q"].T
        g_E += g_Kt @ params[f"{prefix}xt_k"].T + g_Vt @ params[f"{prefix}xt_v"].T
    else:
        g_E, g_O = g_tok, g_obj

    grads[f"{prefix}vis_w"] += cache.feats.T @ g_O
    grads[f"{prefix}vis_b"] += g_O.sum(axis=0)
    np.add.at(grads[f"{prefix}tok_embed"], cache.tokens, g_E)


class ToyCoAttentionEncoder:
    """
    Default encoder backend.

    Agents talk to the encoder through this object so a different backend
    with the same four methods can be swapped in.
    """

    def __init__(self, prefix: str = "enc.") -> None:
        self.prefix = prefix

    def shapes(self, d: int, vocab_size: int, layer_count: int, visual_only: bool = False) -> Dict[str, Tuple[int, ...]]:
        return param_shapes(d, vocab_size, layer_count, prefix=self.prefix, visual_only=visual_only)

    def encode(self, tokens, feats, params: Params, mode: EncoderMode, target_id: Optional[int] = None):
        return encode(tokens, feats, params, mode=mode, target_id=target_id, prefix=self.prefix)

    def backward(self, cache: EncoderCache, params: Params, grads: Params, **upstream) -> None:
        encode_backward(cache, params, grads, prefix=self.prefix, **upstream)

    def features(self, scene: Scene) -> np.ndarray:
        return object_features(scene)
