"""
Training commands for the three agents.

Each command loads scenes and a gold game log, builds the run vocabulary
from the whole log, splits it by scene, trains on the train part with
early stopping on the valid part and reports accuracy on the test part.
"""

from pathlib import Path
from typing import Optional, Tuple
import logging

import typer

from gwlab.core.config import GuesserVariant, RunConfig
from gwlab.core.dependencies import get_run_config, get_vocab
from gwlab.models.schemas import TrainingReport
from gwlab.services.checkpoint_store import load_checkpoint, save_checkpoint
from gwlab.services.dataset import DEFAULT_RATIOS, Vocabulary, load_games, split
from gwlab.services.guesser_agent import GUESSER_KIND, eval_guesser, train_guesser
from gwlab.services.oracle_agent import eval_oracle, train_oracle
from gwlab.services.questioner_agent import perplexity, train_questioner
from gwlab.services.world import index_scenes, load_scenes

logger = logging.getLogger(__name__)


def _prepare(scenes_path: Path, games_path: Path, run: RunConfig) -> Tuple[dict, Vocabulary, tuple]:
    scenes = index_scenes(load_scenes(scenes_path))
    games = load_games(games_path)
    vocab = get_vocab(games, run)
    parts = split(games, DEFAULT_RATIOS, run.resolved_seed())
    typer.echo(f"{len(games)} games, vocabulary of {len(vocab)} tokens, split {'/'.join(str(len(p)) for p in parts)}")
    return scenes, vocab, parts


def _finish(report: TrainingReport, report_path: Optional[Path]) -> None:
    typer.echo(f"{report.model_kind}: {report.epochs_run} epochs, best epoch {report.best_epoch}")
    if report_path is not None:
        report_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")


def train_oracle_command(
    scenes: Path = typer.Option(..., "--scenes", help="Scene JSON-lines file"),
    games: Path = typer.Option(..., "--games", help="Gold game log"),
    out: Path = typer.Option(..., "--out", help="Checkpoint output"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=1),
    weak: bool = typer.Option(False, "--weak", help="Train the weak oracle (no visual states)"),
    report: Optional[Path] = typer.Option(None, "--report", help="Write the training report as JSON"),
) -> None:
    """Train the Oracle (or its weak variant)."""
    run = get_run_config(config, seed=seed, epochs=epochs)
    scene_index, vocab, (train, valid, test) = _prepare(scenes, games, run)
    checkpoint, training = train_oracle(train, scene_index, run, vocab, valid_games=valid, weak=weak)
    save_checkpoint(out, checkpoint)
    if test:
        result = eval_oracle(checkpoint, test, scene_index)
        typer.echo(f"test accuracy: {100.0 * result.overall:.1f}%")
    _finish(training, report)


def train_guesser_command(
    scenes: Path = typer.Option(..., "--scenes", help="Scene JSON-lines file"),
    games: Path = typer.Option(..., "--games", help="Gold game log"),
    out: Path = typer.Option(..., "--out", help="Checkpoint output"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=1),
    variant: Optional[GuesserVariant] = typer.Option(None, "--variant", help="Where the answer enters the graph"),
    report: Optional[Path] = typer.Option(None, "--report", help="Write the training report as JSON"),
) -> None:
    """Train the Guesser / state estimator."""
    run = get_run_config(config, seed=seed, epochs=epochs, guesser_variant=variant)
    scene_index, vocab, (train, valid, test) = _prepare(scenes, games, run)
    checkpoint, training = train_guesser(train, scene_index, run, vocab, valid_games=valid)
    save_checkpoint(out, checkpoint)
    if test:
        result = eval_guesser(checkpoint, test, scene_index)
        typer.echo(f"test accuracy ({run.guesser_variant.value}): {100.0 * result.accuracy:.1f}%")
    _finish(training, report)


def train_questioner_command(
    scenes: Path = typer.Option(..., "--scenes", help="Scene JSON-lines file"),
    games: Path = typer.Option(..., "--games", help="Gold game log"),
    guesser: Path = typer.Option(..., "--guesser", help="Trained guesser checkpoint"),
    out: Path = typer.Option(..., "--out", help="Checkpoint output"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=1),
    fine_tune: bool = typer.Option(False, "--fine-tune", help="Back-propagate into the state estimator"),
    report: Optional[Path] = typer.Option(None, "--report", help="Write the training report as JSON"),
) -> None:
    """Train the Questioner on top of a trained Guesser."""
    run = get_run_config(config, seed=seed, epochs=epochs, freeze_estimator=False if fine_tune else None)
    scene_index, vocab, (train, valid, test) = _prepare(scenes, games, run)
    guesser_checkpoint = load_checkpoint(guesser, expected_kind=[GUESSER_KIND])
    checkpoint, training = train_questioner(train, scene_index, guesser_checkpoint, run, vocab, valid_games=valid)
    save_checkpoint(out, checkpoint)
    if test:
        typer.echo(f"test perplexity: {perplexity(checkpoint, test, scene_index):.2f} (vocabulary {len(vocab)})")
    _finish(training, report)


def register(app: typer.Typer) -> None:
    app.command("train-oracle")(train_oracle_command)
    app.command("train-guesser")(train_guesser_command)
    app.command("train-questioner")(train_questioner_command)
