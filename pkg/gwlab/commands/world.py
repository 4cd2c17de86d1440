"""
World generation command.
"""

from pathlib import Path
from typing import Optional
import logging

import typer

from gwlab.core.dependencies import get_run_config
from gwlab.services.dataset import write_log
from gwlab.services.world import SceneSpec, generate_gold_games, generate_scenes, write_scenes

logger = logging.getLogger(__name__)


def gen_world(
    scenes: int = typer.Option(..., "--scenes", min=1, help="Number of scenes to generate"),
    out: Path = typer.Option(..., "--out", help="Scene JSON-lines output"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Master seed (flag > config > GWLAB_SEED)"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    dialogs_out: Optional[Path] = typer.Option(None, "--dialogs-out", help="Also write seeded targets with gold dialogs"),
    max_turns: Optional[int] = typer.Option(None, "--max-turns", min=1, help="Turn budget of the gold dialogs"),
) -> None:
    """Generate synthetic scenes and, optionally, gold dialogs."""
    run = get_run_config(config, seed=seed, max_turns=max_turns)
    master_seed = run.resolved_seed()
    generated = generate_scenes(SceneSpec.from_config(run), scenes, master_seed)
    write_scenes(generated, out)
    typer.echo(f"wrote {len(generated)} scenes to {out}")

    if dialogs_out is not None:
        games = generate_gold_games(generated, master_seed, run.max_turns)
        write_log(games, dialogs_out)
        typer.echo(f"wrote {len(games)} gold dialogs to {dialogs_out}")


def register(app: typer.Typer) -> None:
    app.command("gen-world")(gen_world)
