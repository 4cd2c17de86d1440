"""
Dense numeric kernel shared by every agent graph.

Parameters travel as ``Dict[str, np.ndarray]`` keyed by dotted names
(``enc.tok_embed``, ``guesser.head_w1``, ...). All math runs in float64;
checkpoints narrow to float32 on disk.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple
import logging

import numpy as np

from gwlab.core.config import OptimizerKind
from gwlab.core.exceptions import InvalidLabel, InvalidShape, NumericalFailure

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

PROB_FLOOR = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def ensure_finite(name: str, value: np.ndarray) -> np.ndarray:
    """
    Reject NaN or infinite entries.

    Args:
        name: Label used in the error message.
        value: Array to inspect.

    Returns:
        The same array.

    Raises:
        NumericalFailure: If any entry is not finite.
    """
    if not np.all(np.isfinite(value)):
        msg = f"Non-finite values in {name}"
        logger.error(msg)
        raise NumericalFailure(msg)
    return value


def softmax(v: np.ndarray) -> np.ndarray:
    """
    Numerically stable softmax over a 1-D vector.

    Args:
        v: Logit vector.

    Returns:
        Probability vector of the same length.

    Raises:
        InvalidShape: If ``v`` is empty or not one-dimensional.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidShape(f"softmax expects a non-empty vector, got shape {v.shape}")
    z = np.exp(v - v.max())
    return z / z.sum()


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise InvalidShape(f"softmax_rows expects a non-empty matrix, got shape {m.shape}")
    z = np.exp(m - m.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a gradient on softmax outputs back to the logits (last axis)."""
    return p * (grad_p - np.sum(grad_p * p, axis=-1, keepdims=True))


def cross_entropy(p: np.ndarray, label: int) -> float:
    """
    Negative log-probability of ``label`` with a 1e-12 floor.

    Args:
        p: Probability vector.
        label: Class index.

    Returns:
        Non-negative scalar loss.

    Raises:
        InvalidLabel: If ``label`` does not index ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= label < p.shape[0]:
        raise InvalidLabel(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def cross_entropy_grad(p: np.ndarray, label: int) -> np.ndarray:
    """
    Gradient of ``cross_entropy`` with respect to the probabilities.

    The floor makes the loss flat below 1e-12, so the gradient vanishes there.
    """
    grad = np.zeros_like(p, dtype=np.float64)
    if p[label] > PROB_FLOOR:
        grad[label] = -1.0 / p[label]
    return grad


def tanh_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through ``tanh`` given its output."""
    return grad_out * (1.0 - out * out)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def sigmoid_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through ``sigmoid`` given its output."""
    return grad_out * out * (1.0 - out)


def uniform_init(shapes: Dict[str, Tuple[int, ...]], seed: int, scale: float = 0.08) -> Params:
    """
    Draw every parameter from uniform(-scale, scale) in manifest order.

    Args:
        shapes: Ordered name -> shape manifest.
        seed: RNG seed.
        scale: Half-width of the interval.

    Returns:
        Fresh float64 parameter dict.
    """
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in shapes.items():
        values = rng.uniform(-scale, scale, size=shape)
        # keep the open interval even if the generator lands on -scale
        params[name] = np.clip(values, -scale * (1 - 1e-12), scale * (1 - 1e-12))
    return params


def zeros_like_params(params: Params) -> Params:
    """Zero gradient accumulator with the same manifest."""
    return {name: np.zeros_like(value) for name, value in params.items()}


def accumulate(total: Params, grads: Params, weight: float = 1.0) -> None:
    """Add ``weight * grads`` into ``total`` in place."""
    for name, g in grads.items():
        total[name] += weight * g


@dataclass
class OptimizerState:
    """
    Optimizer hyper-parameters plus per-parameter moment buffers.

    Attributes:
        kind: SGD or AdamW update rule.
        learning_rate: Step size.
        weight_decay: Decoupled weight decay coefficient (AdamW only).
        first_moment: Adam m buffers keyed by parameter name.
        second_moment: Adam v buffers keyed by parameter name.
        step_count: Number of completed steps.
    """

    kind: OptimizerKind = OptimizerKind.ADAMW
    learning_rate: float = 0.005
    weight_decay: float = 0.0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0


def optimizer_step(params: Params, grads: Params, state: OptimizerState) -> Tuple[Params, OptimizerState]:
    """
    Apply one SGD or AdamW update.

    Parameters without a gradient entry are carried over unchanged, which is
    how frozen sub-graphs stay byte-identical.

    Args:
        params: Current parameters.
        grads: Gradients keyed like ``params`` (subset allowed).
        state: Optimizer state; left untouched.

    Returns:
        Tuple of (new parameters, new optimizer state).

    Raises:
        InvalidShape: If a gradient does not match its parameter.
        NumericalFailure: If a gradient is not finite.
    """
    step = state.step_count + 1
    new_params: Params = dict(params)
    m_buffers = dict(state.first_moment)
    v_buffers = dict(state.second_moment)

    for name, grad in grads.items():
        if name not in params:
            raise InvalidShape(f"gradient for unknown parameter '{name}'")
        value = params[name]
        if grad.shape != value.shape:
            raise InvalidShape(f"gradient shape {grad.shape} does not match parameter '{name}' {value.shape}")
        ensure_finite(f"gradient of {name}", grad)

        if state.kind == OptimizerKind.SGD:
            new_params[name] = value - state.learning_rate * grad
            continue

        m = ADAM_BETA1 * m_buffers.get(name, np.zeros_like(value)) + (1 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v_buffers.get(name, np.zeros_like(value)) + (1 - ADAM_BETA2) * grad * grad
        m_hat = m / (1 - ADAM_BETA1**step)
        v_hat = v / (1 - ADAM_BETA2**step)
        decayed = value - state.learning_rate * state.weight_decay * value
        new_params[name] = decayed - state.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        m_buffers[name] = m
        v_buffers[name] = v

    new_state = OptimizerState(
        kind=state.kind,
        learning_rate=state.learning_rate,
        weight_decay=state.weight_decay,
        first_moment=m_buffers,
        second_moment=v_buffers,
        step_count=step,
    )
    return new_params, new_state


def grad_check(
    loss_fn: Callable[[Params], float],
    params: Params,
    analytic: Params,
    h: float = 1e-5,
) -> float:
    """
    Compare analytic gradients against central differences.

    Args:
        loss_fn: Deterministic scalar loss of the parameters.
        params: Point of evaluation.
        analytic: Hand-derived gradients keyed like ``params``.
        h: Finite-difference step.

    Returns:
        Max over all coordinates of ``|a - fd| / (|fd| + 1e-8)``.

    Raises:
        NumericalFailure: If the loss is not finite at any perturbed point.
    """
    worst = 0.0
    shifted = {name: value.copy() for name, value in params.items()}

    def evaluate() -> float:
        loss = float(loss_fn(shifted))
        if not np.isfinite(loss):
            msg = f"Non-finite loss during gradient check: {loss}"
            logger.error(msg)
            raise NumericalFailure(msg)
        return loss

    evaluate()
    for name, value in shifted.items():
        grad = analytic.get(name, np.zeros_like(value))
        flat = value.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = evaluate()
            flat[i] = original - h
            minus = evaluate()
            flat[i] = original
            fd = (plus - minus) / (2 * h)
            worst = max(worst, abs(flat_grad[i] - fd) / (abs(fd) + 1e-8))
    return worst
