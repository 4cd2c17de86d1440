"""
Self-play and interactive play commands.
"""

from pathlib import Path
from typing import Optional
import logging

import typer

from gwlab.core.config import settings
from gwlab.core.dependencies import (
    ORACLE_CHOICES,
    get_guesser,
    get_oracle,
    get_questioner,
    get_run_config,
)
from gwlab.core.exceptions import GwLabError
from gwlab.services.analysis import success_rate
from gwlab.services.dataset import load_games, write_log
from gwlab.services.engine import (
    GameSetup,
    GameWiring,
    interactive_play,
    self_play,
    setups_from_games,
    setups_from_targets,
)
from gwlab.services.world import assign_targets, index_scenes, load_scenes

logger = logging.getLogger(__name__)


def selfplay_command(
    scenes: Path = typer.Option(..., "--scenes", help="Scene JSON-lines file"),
    out: Path = typer.Option(..., "--out", help="Game log output"),
    games: Optional[Path] = typer.Option(None, "--games", help="Take game ids and targets from this log"),
    oracle: str = typer.Option("rule", "--oracle", help=f"One of {', '.join(ORACLE_CHOICES)}"),
    guesser: str = typer.Option("trained", "--guesser", help="trained, random, rule or spatial"),
    questioner: str = typer.Option("scripted", "--questioner", help="scripted or trained"),
    oracle_ckpt: Optional[Path] = typer.Option(None, "--oracle-ckpt"),
    guesser_ckpt: Optional[Path] = typer.Option(None, "--guesser-ckpt"),
    questioner_ckpt: Optional[Path] = typer.Option(None, "--questioner-ckpt"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    max_turns: Optional[int] = typer.Option(None, "--max-turns", min=1),
    jobs: Optional[int] = typer.Option(None, "--jobs", help="Worker threads (default: available cores)"),
) -> None:
    """Play full machine games and write the log."""
    run = get_run_config(config, seed=seed, max_turns=max_turns)
    master_seed = run.resolved_seed()
    scene_list = load_scenes(scenes)
    if games is not None:
        setups = setups_from_games(load_games(games), index_scenes(scene_list))
    else:
        setups = setups_from_targets(scene_list, assign_targets(scene_list, master_seed))

    wiring = GameWiring(
        oracle=get_oracle(oracle, run, oracle_ckpt),
        guesser=get_guesser(guesser, run, guesser_ckpt),
        questioner=get_questioner(questioner, run, questioner_ckpt),
    )
    played = self_play(wiring, setups, run.max_turns, master_seed, jobs=settings.resolve_jobs(jobs))
    write_log(played, out)
    if played:
        typer.echo(f"{wiring.label()}: success rate {success_rate(played):.1f}% over {len(played)} games")


def play_command(
    role: str = typer.Option(..., "--role", help="Seat taken by the human: oracle or questioner"),
    scenes: Path = typer.Option(..., "--scenes", help="Scene JSON-lines file"),
    log: Path = typer.Option(..., "--log", help="Game log the finished game is appended to"),
    scene_id: Optional[str] = typer.Option(None, "--scene-id", help="Scene to play (default: first)"),
    target: Optional[int] = typer.Option(None, "--target", min=0, help="Target object (default: seeded)"),
    oracle: str = typer.Option("rule", "--oracle"),
    guesser: str = typer.Option("rule", "--guesser"),
    questioner: str = typer.Option("scripted", "--questioner"),
    oracle_ckpt: Optional[Path] = typer.Option(None, "--oracle-ckpt"),
    guesser_ckpt: Optional[Path] = typer.Option(None, "--guesser-ckpt"),
    questioner_ckpt: Optional[Path] = typer.Option(None, "--questioner-ckpt"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    max_turns: Optional[int] = typer.Option(None, "--max-turns", min=1),
) -> None:
    """Play one game at the terminal as oracle or questioner."""
    if role not in ("oracle", "questioner"):
        raise typer.BadParameter("expected oracle or questioner", param_hint="--role")
    run = get_run_config(config, seed=seed, max_turns=max_turns)
    master_seed = run.resolved_seed()
    scene_list = load_scenes(scenes)
    if not scene_list:
        raise GwLabError(f"{scenes} holds no scenes")
    if scene_id is None:
        scene = scene_list[0]
    else:
        scene = index_scenes(scene_list).get(scene_id)
        if scene is None:
            raise GwLabError(f"unknown scene '{scene_id}'")
    target_id = target if target is not None else assign_targets([scene], master_seed)[0]

    wiring = GameWiring(
        oracle=get_oracle(oracle, run, oracle_ckpt),
        guesser=get_guesser(guesser, run, guesser_ckpt),
        questioner=get_questioner(questioner, run, questioner_ckpt),
    )
    wiring.validate()
    setup = GameSetup(f"g-{scene.scene_id}", scene, target_id)
    interactive_play(
        role,
        wiring,
        setup,
        run.max_turns,
        master_seed,
        prompt=lambda text: typer.prompt(text, default="", show_default=False),
        echo=typer.echo,
        log_path=log,
    )


def register(app: typer.Typer) -> None:
    app.command("selfplay")(selfplay_command)
    app.command("play")(play_command)
