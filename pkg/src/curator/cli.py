"""Command-line entry points.

    curator run --config run.json --out runs/demo
    curator experiments run --mode ablation --seed 3 --out reports/
    curator eval-judge fixtures.jsonl
    curator inspect runs/demo cost
    curator simulate-growth --rs 0.4 --ne 3 --epochs 12
"""

from __future__ import annotations

import json
import signal
import sys
from decimal import Decimal
from pathlib import Path

import click

from .config import build_run, load_config, resolve_world_config
from .dataset import ACTION_ADD, ACTION_SELECT, DynamicDataset
from .director import DirectorConfig
from .errors import ConfigInvalid, CuratorError, EmptyInput
from .experiments import (
    default_ablation_matrix,
    emit_report,
    load_matrix,
    run_ablation,
    run_multi_model,
)
from .jsonl import read_jsonl
from .judge import evaluate_fixture_rows, generate_alignment_fixtures
from .runner import TrainerConfig, growth_trajectory


@click.group()
def main():
    """Judge-directed dynamic training-set curation."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Run directory for dataset, metrics, and ledger artifacts.")
@click.option("--sequential/--threaded", default=None,
              help="Deterministic single-thread mode vs trainer/director threads.")
@click.option("--budget", type=str, default=None, help="Override the fee budget.")
@click.option("--resume", is_flag=True, help="Continue from a persisted run directory.")
def cmd_run(config_path, seed, out_dir, sequential, budget, resume):
    """Start the trainer + director loops from a config file."""
    try:
        config = load_config(config_path)
        if seed is not None:
            config["seed"] = seed
        if budget is not None:
            config["budget"] = budget
        if sequential is not None:
            config["sequential"] = sequential
        run = build_run(config, out_dir=out_dir)
    except ConfigInvalid as exc:
        for violation in exc.violations:
            click.echo(f"config error: {violation}", err=True)
        raise SystemExit(2)

    if resume:
        if out_dir is None or not (Path(out_dir) / "run_state.json").exists():
            click.echo("nothing to resume: no run_state.json in --out", err=True)
            raise SystemExit(2)
        run.restore(out_dir)
        click.echo(f"resumed at epoch {run.epoch} with {len(run.dataset)} active samples")
    else:
        accepted = run.bootstrap(int(config["initial_samples"]))
        click.echo(f"bootstrapped {accepted} samples")

    def _graceful(signum, frame):
        click.echo("signal received; finishing current transaction...", err=True)
        run.stop()

    signal.signal(signal.SIGINT, _graceful)
    signal.signal(signal.SIGTERM, _graceful)

    result = run.run() if config["sequential"] else run.run_threaded()
    click.echo(json.dumps({
        "stop_reason": result.stop_reason,
        "steps": result.steps_done,
        "epochs": result.epochs_done,
        "active_samples": len(run.dataset),
        "quality_gap": round(result.final_quality_gap, 6),
        "generate_calls": result.generate_calls,
        "total_cost": str(result.total_cost),
    }, indent=2))


@main.group("experiments")
def experiments_group():
    """Desk-scale experiment suites."""


@experiments_group.command("run")
@click.option("--mode", type=click.Choice(["ablation", "multi"]), default="ablation")
@click.option("--matrix", "matrix_path", type=click.Path(exists=True), default=None)
@click.option("--world", "world_path", type=str, default=None,
              help="World JSON path or a named default.")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), default="reports")
@click.option("--workers", type=int, default=1)
def cmd_experiments_run(mode, matrix_path, world_path, seed, out_dir, workers):
    """Run an experiment suite and write a JSON report; exits nonzero if any
    ordering assertion failed."""
    world_config = resolve_world_config(world_path) if world_path else None
    if mode == "ablation":
        trainer_cfg = None
        if matrix_path:
            matrix, trainer_cfg = load_matrix(matrix_path)
        else:
            matrix = default_ablation_matrix()
        report = run_ablation(matrix, world_config, seed=seed,
                              trainer_cfg=trainer_cfg, workers=workers)
        out_path = Path(out_dir) / f"ablation_seed{seed}.json"
    else:
        report = run_multi_model(world_config, seed=seed)
        out_path = Path(out_dir) / f"multi_model_seed{seed}.json"

    passed = emit_report(report, out_path)
    click.echo(f"report written to {out_path}")
    for assertion in report.get("orderings", report.get("assertions", [])):
        status = "PASS" if assertion["passed"] else "FAIL"
        click.echo(f"  [{status}] {assertion['assertion']}")
    if not passed:
        raise SystemExit(1)


@main.command("eval-judge")
@click.argument("fixtures_path", type=click.Path())
@click.option("--synthesize", type=str, default=None,
              help="Generate fixtures first: 'name=accuracy,...' pairs.")
@click.option("--pairs", type=int, default=600, show_default=True)
@click.option("--seed", type=int, default=0)
def cmd_eval_judge(fixtures_path, synthesize, pairs, seed):
    """Print per-judge discrimination accuracy from an alignment fixture file."""
    path = Path(fixtures_path)
    if synthesize:
        judges = {}
        for part in synthesize.split(","):
            name, _, value = part.partition("=")
            judges[name.strip()] = float(value)
        rows = generate_alignment_fixtures(judges, pairs, seed)
        from .jsonl import write_jsonl
        write_jsonl(path, rows)
        click.echo(f"synthesized {len(rows)} fixture rows into {path}")

    if not path.exists():
        click.echo(f"fixtures file {path} does not exist "
                   "(use --synthesize to create one)", err=True)
        raise SystemExit(2)
    try:
        rows = [rec for _, rec in read_jsonl(path)]
        results = evaluate_fixture_rows(rows)
    except EmptyInput:
        click.echo("fixtures file is empty; expected JSONL rows of "
                   "{judge, prompt, human_label, presented_order, reply}", err=True)
        raise SystemExit(2)

    width = max(len(name) for name in results)
    click.echo(f"{'':<{width}}  Discrimination  Pairs")
    for name, stats in sorted(results.items()):
        click.echo(f"{name:<{width}}  {stats['discrimination']:.3f}            {stats['pairs']}")


@main.command("inspect")
@click.argument("run_dir", type=click.Path(exists=True))
@click.argument("query", type=str)
@click.argument("query_arg", type=str, required=False)
def cmd_inspect(run_dir, query, query_arg):
    """Answer queries about a persisted run: cost, size, growth, selections,
    lineage <prompt_id>."""
    run_dir = Path(run_dir)
    try:
        if query == "cost":
            total = Decimal("0")
            ledger_path = run_dir / "ledger.jsonl"
            if ledger_path.exists():
                for _, rec in read_jsonl(ledger_path):
                    total += Decimal(rec["cost"])
            click.echo(str(total))
        elif query == "size":
            ds = DynamicDataset.load(run_dir / "dataset")
            click.echo(str(len(ds)))
        elif query == "growth":
            series = []
            metrics = run_dir / "metrics.jsonl"
            if metrics.exists():
                for _, rec in read_jsonl(metrics):
                    if rec.get("event") == "checking_epoch":
                        series.append([rec["epoch"], rec["active"]])
            click.echo(json.dumps(series))
        elif query == "selections":
            counts: dict[str, int] = {}
            for _, rec in read_jsonl(run_dir / "dataset" / "decisions.jsonl"):
                if rec.get("action") == ACTION_SELECT:
                    backend = rec["detail"].get("backend", "?")
                    counts[backend] = counts.get(backend, 0) + 1
            click.echo(json.dumps(dict(sorted(counts.items()))))
        elif query == "lineage":
            if not query_arg:
                click.echo("usage: inspect RUN_DIR lineage PROMPT_ID", err=True)
                raise SystemExit(2)
            click.echo(_render_lineage(run_dir, query_arg))
        else:
            click.echo(f"unknown query {query!r}; expected one of: "
                       "cost, size, growth, selections, lineage", err=True)
            raise SystemExit(2)
    except (CuratorError, OSError) as exc:
        click.echo(f"inspect failed: {exc}", err=True)
        raise SystemExit(1)


def _render_lineage(run_dir: Path, prompt_id: str) -> str:
    parents: dict[str, str | None] = {}
    texts: dict[str, str] = {}
    for _, rec in read_jsonl(run_dir / "dataset" / "decisions.jsonl"):
        if rec.get("action") == ACTION_ADD:
            detail = rec.get("detail", {})
            parents[rec["prompt_id"]] = detail.get("lineage", {}).get("parent_id")
            texts[rec["prompt_id"]] = detail.get("text", "")
    if prompt_id not in parents:
        raise CuratorError(f"prompt {prompt_id} not found in the decision log")

    root = prompt_id
    seen = {root}
    while parents.get(root) is not None:
        root = parents[root]
        if root in seen:
            raise CuratorError(f"lineage cycle detected at {root}")
        seen.add(root)

    children: dict[str, list[str]] = {}
    for child, parent in parents.items():
        if parent is not None:
            children.setdefault(parent, []).append(child)

    lines: list[str] = []

    def walk(node: str, depth: int) -> None:
        marker = " *" if node == prompt_id else ""
        lines.append(f"{'  ' * depth}{node}: {texts.get(node, '')}{marker}")
        for child in sorted(children.get(node, [])):
            walk(child, depth + 1)

    walk(root, 0)
    return "\n".join(lines)


@main.command("simulate-growth")
@click.option("--world", "world_path", type=str, default=None)
@click.option("--rs", type=float, default=0.2, show_default=True, help="Select ratio.")
@click.option("--ne", type=int, default=3, show_default=True, help="Extension count.")
@click.option("--rm", type=float, default=0.1, show_default=True, help="Mutation rate.")
@click.option("--cap", type=int, default=200, show_default=True)
@click.option("--initial", type=int, default=20, show_default=True)
@click.option("--epochs", "checking_epochs", type=int, default=12, show_default=True,
              help="Number of checking epochs to simulate.")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_simulate_growth(world_path, rs, ne, rm, cap, initial, checking_epochs, seed, out_path):
    """Trace dynamic-dataset growth for one hyperparameter setting."""
    world_config = resolve_world_config(world_path) if world_path else None
    from .simulation import default_ablation_world_config
    cfg = DirectorConfig(select_ratio=rs, extension_count=ne, mutation_rate=rm,
                         dataset_cap=cap)
    series = growth_trajectory(cfg, world_config or default_ablation_world_config(),
                               checking_epochs, seed, initial_samples=initial)
    doc = {"select_ratio": rs, "extension_count": ne, "mutation_rate": rm,
           "cap": cap, "seed": seed, "trajectory": series}
    text = json.dumps(doc, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
        click.echo(f"trajectory written to {out_path}")
    else:
        click.echo(text)


if __name__ == "__main__":
    main()
