"""
Evaluation and post-analysis commands.

Human-readable tables go to standard output; machine-readable CSV/JSON is
written to the paths given by the flags.
"""

from pathlib import Path
from typing import Dict, List, Optional
import logging
import shutil

import pandas as pd
import typer

from gwlab.core.config import settings
from gwlab.core.dependencies import get_guesser, get_oracle, get_questioner, get_run_config
from gwlab.core.exceptions import GwLabError
from gwlab.models.schemas import AblationCell
from gwlab.services.analysis import (
    CorruptionSpec,
    ablation_grid,
    confusion_matrix,
    corrupt_answers,
    corruption_sweep,
    grid_table,
    interaction_effect,
    log_metrics,
)
from gwlab.services.checkpoint_store import load_checkpoint
from gwlab.services.dataset import load_games, write_log
from gwlab.services.engine import setups_from_games, setups_from_targets
from gwlab.services.guesser_agent import GUESSER_KIND, eval_guesser
from gwlab.services.oracle_agent import ORACLE_KIND, WEAK_ORACLE_KIND, eval_oracle
from gwlab.services.world import assign_targets, index_scenes, load_scenes

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.4f"


def _floats(text: str, flag: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated numbers, got '{text}'", param_hint=flag)


def _ints(text: str, flag: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated integers, got '{text}'", param_hint=flag)


def _names(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _write_json(path: Optional[Path], payload: str) -> None:
    if path is not None:
        path.write_text(payload + "\n", encoding="utf-8")


def eval_command(
    kind: str = typer.Option(..., "--kind", help="oracle, guesser or selfplay"),
    games: Path = typer.Option(..., "--games", help="Game log to evaluate"),
    scenes: Optional[Path] = typer.Option(None, "--scenes", help="Scene file (oracle and guesser)"),
    ckpt: Optional[Path] = typer.Option(None, "--ckpt", help="Checkpoint (oracle and guesser)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the report as JSON"),
) -> None:
    """Evaluate an Oracle, a Guesser or a self-play log."""
    log = load_games(games)
    if kind == "selfplay":
        metrics = log_metrics(log)
        typer.echo(f"games: {metrics.games}")
        typer.echo(f"success rate: {metrics.success_rate:.1f}%")
        typer.echo(f"repeated questions: {metrics.repeated_question_rate:.1f}%")
        typer.echo("self-BLEU: " + ", ".join(f"{n}-gram {score:.4f}" for n, score in metrics.self_bleu.items()))
        typer.echo("question types: " + ", ".join(f"{t} {p:.1f}%" for t, p in metrics.question_types.items()))
        typer.echo(f"lexical diversity: {metrics.lexical_diversity:.4f}")
        typer.echo(f"question diversity: {metrics.question_diversity:.1f}%")
        _write_json(out, metrics.model_dump_json(indent=2))
        return

    if kind not in ("oracle", "guesser"):
        raise typer.BadParameter("expected oracle, guesser or selfplay", param_hint="--kind")
    if scenes is None or ckpt is None:
        raise GwLabError(f"eval --kind {kind} needs --scenes and --ckpt")
    scene_index = index_scenes(load_scenes(scenes))
    if kind == "oracle":
        report = eval_oracle(load_checkpoint(ckpt, expected_kind=[ORACLE_KIND, WEAK_ORACLE_KIND]), log, scene_index)
        typer.echo(f"overall: {100.0 * report.overall:.1f}%")
        for qtype, entry in report.by_type.items():
            shown = "-" if entry.accuracy is None else f"{100.0 * entry.accuracy:.1f}%"
            typer.echo(f"  {qtype:<9} {shown:>7}  ({entry.count} questions)")
    else:
        report = eval_guesser(load_checkpoint(ckpt, expected_kind=[GUESSER_KIND]), log, scene_index)
        typer.echo(f"accuracy: {100.0 * report.accuracy:.1f}% over {report.games} dialogs")
    _write_json(out, report.model_dump_json(indent=2))


def corrupt_command(
    games: Path = typer.Option(..., "--games", help="Game log to corrupt"),
    ratio: float = typer.Option(..., "--ratio", min=0.0, max=1.0),
    out: Path = typer.Option(..., "--out", help="Corrupted log output"),
    seed: int = typer.Option(0, "--seed", min=0),
) -> None:
    """Corrupt a share of the logged answers; a log with nothing corrupted is copied byte for byte."""
    originals = load_games(games)
    corrupted = corrupt_answers(originals, CorruptionSpec(ratio=ratio, seed=seed))
    if corrupted != originals:
        write_log(corrupted, out)
    elif games.resolve() != out.resolve():
        try:
            shutil.copyfile(games, out)
        except OSError as e:
            msg = f"Failed to write game log {out}: {str(e)}"
            logger.error(msg)
            raise GwLabError(msg)
    typer.echo(f"wrote {len(corrupted)} games to {out}")


def sweep_corruption_command(
    games: Path = typer.Option(..., "--games", help="Gold game log"),
    scenes: Path = typer.Option(..., "--scenes", help="Scene JSON-lines file"),
    out: Path = typer.Option(..., "--out", help="Per-cell CSV (guesser, ratio, seed, accuracy)"),
    ratios: str = typer.Option("0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "--ratios"),
    seeds: str = typer.Option("0,1,2,3,4", "--seeds"),
    guessers: str = typer.Option("rule,spatial", "--guessers", help="Comma-separated guesser names"),
    guesser_ckpt: Optional[Path] = typer.Option(None, "--guesser-ckpt"),
    curve_out: Optional[Path] = typer.Option(None, "--curve-out", help="Aggregated curve CSV"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    jobs: Optional[int] = typer.Option(None, "--jobs"),
) -> None:
    """Guesser accuracy against the share of corrupted answers."""
    run = get_run_config(config)
    ratio_list = _floats(ratios, "--ratios")
    if any(not 0.0 <= r <= 1.0 for r in ratio_list):
        raise typer.BadParameter("ratios must lie in [0, 1]", param_hint="--ratios")
    agents = {name: get_guesser(name, run, guesser_ckpt) for name in _names(guessers)}

    rows, curve = corruption_sweep(
        agents,
        load_games(games),
        index_scenes(load_scenes(scenes)),
        ratio_list,
        _ints(seeds, "--seeds"),
        jobs=settings.resolve_jobs(jobs),
    )
    rows.to_csv(out, index=False, float_format=FLOAT_FORMAT)
    if curve_out is not None:
        curve.to_csv(curve_out, index=False, float_format=FLOAT_FORMAT)
    typer.echo(curve.to_string(index=False, float_format=lambda v: f"{v:.2f}"))


def confusion_command(
    log_a: Path = typer.Option(..., "--log-a", help="Log of setting A (rows)"),
    log_b: Path = typer.Option(..., "--log-b", help="Log of setting B (columns)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write cells and marginals as JSON"),
) -> None:
    """Joint correctness of two logs over the same games."""
    matrix = confusion_matrix(load_games(log_a), load_games(log_b))
    typer.echo(f"{'':>10} {'B correct':>10} {'B wrong':>10} {'':>8}")
    typer.echo(f"{'A correct':>10} {matrix.aa:>10} {matrix.ab:>10} {matrix.row_marginals[0]:>7.1f}%")
    typer.echo(f"{'A wrong':>10} {matrix.ba:>10} {matrix.bb:>10} {matrix.row_marginals[1]:>7.1f}%")
    typer.echo(f"{'':>10} {matrix.column_marginals[0]:>9.1f}% {matrix.column_marginals[1]:>9.1f}%")
    _write_json(out, matrix.model_dump_json(indent=2))


def _print_grid(table: pd.DataFrame) -> None:
    typer.echo(table.to_string(float_format=lambda v: f"{v:.1f}"))
    typer.echo(f"interaction effect: {interaction_effect(table):+.1f} points")


def ablate_command(
    scenes: Optional[Path] = typer.Option(None, "--scenes", help="Scene JSON-lines file"),
    table: Optional[Path] = typer.Option(None, "--table", help="Compute the interaction of an existing grid CSV"),
    games: Optional[Path] = typer.Option(None, "--games", help="Take game ids and targets from this log"),
    oracles: str = typer.Option("noisy,rule", "--oracles", help="Baseline first, upgraded last"),
    guessers: str = typer.Option("spatial,rule", "--guessers", help="Baseline first, upgraded last"),
    questioner: str = typer.Option("scripted", "--questioner"),
    oracle_ckpt: Optional[Path] = typer.Option(None, "--oracle-ckpt"),
    guesser_ckpt: Optional[Path] = typer.Option(None, "--guesser-ckpt"),
    questioner_ckpt: Optional[Path] = typer.Option(None, "--questioner-ckpt"),
    out: Optional[Path] = typer.Option(None, "--out", help="Grid CSV (oracle, guesser, success_rate)"),
    config: Optional[Path] = typer.Option(None, "--config", help="Run configuration file"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0),
    max_turns: Optional[int] = typer.Option(None, "--max-turns", min=1),
    jobs: Optional[int] = typer.Option(None, "--jobs"),
) -> None:
    """Oracle x guesser success-rate grid and its interaction effect."""
    if table is not None:
        try:
            frame = pd.read_csv(table)
            cells = [AblationCell(**record) for record in frame.to_dict(orient="records")]
        except (OSError, ValueError, KeyError) as e:
            raise GwLabError(f"Failed to read grid {table}: {str(e)}")
        _print_grid(grid_table(cells))
        return
    if scenes is None:
        raise GwLabError("ablate needs --scenes or --table")

    run = get_run_config(config, seed=seed, max_turns=max_turns)
    master_seed = run.resolved_seed()
    scene_list = load_scenes(scenes)
    if games is not None:
        setups = setups_from_games(load_games(games), index_scenes(scene_list))
    else:
        setups = setups_from_targets(scene_list, assign_targets(scene_list, master_seed))

    oracle_agents: Dict[str, object] = {name: get_oracle(name, run, oracle_ckpt) for name in _names(oracles)}
    guesser_agents = {name: get_guesser(name, run, guesser_ckpt) for name in _names(guessers)}
    cells, grid = ablation_grid(
        oracle_agents,
        guesser_agents,
        get_questioner(questioner, run, questioner_ckpt),
        setups,
        run.max_turns,
        master_seed,
        jobs=settings.resolve_jobs(jobs),
    )
    if out is not None:
        pd.DataFrame([cell.model_dump() for cell in cells]).to_csv(out, index=False, float_format=FLOAT_FORMAT)
    _print_grid(grid)


def register(app: typer.Typer) -> None:
    app.command("eval")(eval_command)
    app.command("corrupt")(corrupt_command)
    app.command("sweep-corruption")(sweep_corruption_command)
    app.command("confusion")(confusion_command)
    app.command("ablate")(ablate_command)
