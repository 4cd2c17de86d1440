"""
Mini-batch training loop shared by the three agents.
"""

from typing import Any, List, Optional, Protocol, Sequence, Tuple
import logging

import numpy as np
from tqdm import tqdm

from gwlab.core.config import RunConfig, settings
from gwlab.core.exceptions import InvalidData, NumericalFailure
from gwlab.core.numkernel import OptimizerState, Params, optimizer_step
from gwlab.models.schemas import EpochMetrics, TrainingReport

logger = logging.getLogger(__name__)


class TrainableGraph(Protocol):
    """What the loop needs from an agent graph."""

    def loss_and_grads(self, params: Params, item: Any) -> Tuple[float, Params]:
        """Loss of one example and gradients of the trainable parameters."""
        ...

    def score(self, params: Params, items: Sequence[Any]) -> float:
        """Higher-is-better metric used for early stopping (an accuracy)."""
        ...


def fit(
    graph: TrainableGraph,
    params: Params,
    train_items: Sequence[Any],
    valid_items: Sequence[Any],
    config: RunConfig,
    model_kind: str,
) -> Tuple[Params, TrainingReport]:
    """
    Train with early stopping on validation score.

    Each step averages example gradients over a mini-batch and applies one
    optimizer update. The parameters of the best-scoring epoch are returned;
    training stops after ``config.patience`` epochs without improvement.
    Without validation items the training score is monitored instead.

    Args:
        graph: Agent graph providing losses, gradients and scores.
        params: Initial parameters.
        train_items: Training examples.
        valid_items: Validation examples (may be empty).
        config: Run configuration (optimizer, epochs, batch size, patience, seed).
        model_kind: Label used in logs and the report.

    Returns:
        Tuple of (best parameters, training report).

    Raises:
        InvalidData: If there are no training examples.
        NumericalFailure: If a mini-batch loss is not finite.
    """
    if not train_items:
        msg = f"No training examples for {model_kind}"
        logger.error(msg)
        raise InvalidData(msg)

    seed = config.resolved_seed()
    rng = np.random.default_rng(seed)
    state = OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate, weight_decay=config.weight_decay)

    best_params = params
    best_score: Optional[float] = None
    best_epoch = 0
    stale = 0
    history: List[EpochMetrics] = []
    step_losses: List[float] = []

    epochs = tqdm(range(1, config.epochs + 1), desc=f"train {model_kind}", disable=not settings.show_progress)
    for epoch in epochs:
        order = rng.permutation(len(train_items))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            total: Params = {}
            batch_loss = 0.0
            for index in batch:
                loss, grads = graph.loss_and_grads(params, train_items[index])
                batch_loss += loss
                for name, g in grads.items():
                    if name in total:
                        total[name] += g
                    else:
                        total[name] = g.copy()
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                msg = f"{model_kind} loss became non-finite at epoch {epoch}"
                logger.error(msg)
                raise NumericalFailure(msg)
            mean_grads = {name: g / len(batch) for name, g in total.items()}
            params, state = optimizer_step(params, mean_grads, state)
            step_losses.append(float(batch_loss))
            epoch_losses.append(float(batch_loss))

        train_score = graph.score(params, train_items)
        valid_score = graph.score(params, valid_items) if valid_items else None
        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            train_accuracy=train_score,
            valid_accuracy=valid_score,
        )
        history.append(metrics)
        logger.info(
            f"{model_kind} epoch {epoch}: loss={metrics.train_loss:.4f} "
            f"train_acc={train_score:.4f} valid_acc={valid_score if valid_score is None else round(valid_score, 4)}"
        )

        monitored = valid_score if valid_score is not None else train_score
        if best_score is None or monitored > best_score:
            best_score, best_params, best_epoch, stale = monitored, params, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"{model_kind}: early stop after epoch {epoch} (best epoch {best_epoch})")
                break

    report = TrainingReport(
        model_kind=model_kind,
        epochs_run=len(history),
        best_epoch=best_epoch,
        history=history,
        step_losses=step_losses,
    )
    return best_params, report
