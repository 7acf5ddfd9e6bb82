"""Command-line interface for the cold-start meta-learning lab."""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from coldstart_lab import __version__, pipeline, synth
from coldstart_lab.config import RunConfig, load_config, parse_override_args
from coldstart_lab.dataset import convert_movielens_movies, convert_movielens_users
from coldstart_lab.errors import ColdStartError
from coldstart_lab.experiments import PRESETS, run_experiment
from coldstart_lab.report import ReportGenerator

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
OVERRIDES = dict(ignore_unknown_options=True, allow_extra_args=True)


def handle_errors(func):
    """Map pipeline exceptions to exit codes with the message on stderr."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ColdStartError as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def config_option(func):
    return click.option("--config", "-c", "config_path", type=click.Path(dir_okay=False),
                        help="Flat key = value config file")(func)


def _config(ctx: click.Context, config_path: str | None) -> RunConfig:
    return load_config(config_path, parse_override_args(ctx.args))


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Warnings and errors only")
def cli(verbose, quiet):
    """Cold-Start Meta Lab - task-aligned meta-learning for cold-start recommendation.

    Every command accepts a --config file and --key=value overrides of any config field.
    """
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


@cli.command(context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def ingest(ctx, config_path):
    """Parse, binarise, filter and split the interactions; encode attributes."""
    cfg = _config(ctx, config_path)
    summary = pipeline.ingest(cfg)
    click.echo(f"\nIngested into {cfg.workdir}:")
    for key, value in summary.items():
        click.echo(f"  {key}: {value}")


@cli.command(name="pretrain-ae", context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def pretrain_ae(ctx, config_path):
    """Train the user and item attribute autoencoders."""
    losses = pipeline.pretrain_ae(_config(ctx, config_path))
    for name, loss in losses.items():
        click.echo(f"{name}: final loss {loss:.6f}")


@cli.command(context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def cluster(ctx, config_path):
    """Cluster meta-training users into tasks with K-Means."""
    result = pipeline.cluster(_config(ctx, config_path))
    sizes = [int((result.assignment == k).sum()) for k in range(result.K)]
    click.echo(f"K={result.K} inertia={result.inertia:.6g}")
    click.echo(f"Cluster sizes: {', '.join(str(s) for s in sizes)}")


@cli.command(name="meta-train", context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def meta_train(ctx, config_path):
    """Meta-train the model over the aligned tasks."""
    log = pipeline.meta_train_stage(_config(ctx, config_path))
    click.echo(ReportGenerator().training_summary(log.records))
    if log.stopped_early:
        click.echo(f"\nStopped early; best epoch {log.best_epoch}")
    if log.augmentation is not None:
        click.echo(f"Augmentation: {log.augmentation.summary()}")


@cli.command(name="augment-stats", context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def augment_stats(ctx, config_path):
    """Count augmented edges for the trained model across thresholds."""
    stats = pipeline.augment_stats(_config(ctx, config_path))
    click.echo(f"Observed edges: {stats['observed_edges']}")
    click.echo(f"Augmented edges: {stats['edges']} (mean score {stats['mean_score']:.4f})")
    click.echo("\n| Threshold | Edges |")
    click.echo("|-----------|-------|")
    for t, count in stats["by_threshold"].items():
        click.echo(f"| {t} | {count} |")


@cli.command(name="meta-test", context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def meta_test(ctx, config_path):
    """Adapt to the meta-test support sets and rank each task's candidates."""
    reports = pipeline.meta_test(_config(ctx, config_path))
    click.echo(ReportGenerator().metrics_table(reports))


@cli.command(context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def evaluate(ctx, config_path):
    """Recompute metrics from stored rankings."""
    reports = pipeline.evaluate(_config(ctx, config_path))
    click.echo(ReportGenerator().metrics_table(reports))


@cli.command(context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def baseline(ctx, config_path):
    """Train and evaluate the MF-BPR baseline under the same protocol."""
    reports = pipeline.baseline(_config(ctx, config_path))
    click.echo(ReportGenerator().metrics_table(reports, title="MF-BPR Baseline"))


@cli.command(name="export-embeddings", context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def export_embeddings(ctx, config_path):
    """Write fused user and item embeddings keyed by raw id."""
    users, items = pipeline.export_embeddings(_config(ctx, config_path))
    click.echo(f"Wrote {users}")
    click.echo(f"Wrote {items}")


@cli.command(name="synth", context_settings=OVERRIDES)
@config_option
@click.option("--out", "-o", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.pass_context
@handle_errors
def synth_command(ctx, config_path, out):
    """Generate a synthetic dataset with planted user clusters."""
    cfg = _config(ctx, config_path)
    out = Path(out) if out else Path(cfg.workdir) / "synth"
    data = synth.generate(out, cfg.synth_users, cfg.synth_items, cfg.synth_clusters, cfg.synth_in_block, cfg.seed)
    click.echo(f"Synthetic dataset written to {out}")
    click.echo("Ingest it with:")
    click.echo("  " + " ".join(f"--{key}={value}" for key, value in data.overrides().items()))


@cli.command(name="run", context_settings=OVERRIDES)
@config_option
@click.pass_context
@handle_errors
def run_all(ctx, config_path):
    """ingest, pretrain-ae, cluster, meta-train and meta-test in one go."""
    reports = pipeline.run_all(_config(ctx, config_path))
    click.echo(ReportGenerator().metrics_table(reports))


@cli.command(context_settings=OVERRIDES)
@click.argument("preset", type=click.Choice(sorted(PRESETS)))
@config_option
@click.option("--seeds", default="0,1,2", help="Comma-separated seeds")
@click.pass_context
@handle_errors
def experiment(ctx, preset, config_path, seeds):
    """Run an ablation or sensitivity preset over several seeds."""
    cfg = _config(ctx, config_path)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {seeds!r}", param_hint="--seeds") from None
    result = run_experiment(preset, cfg, seed_list)
    click.echo(ReportGenerator().experiment_table(result))


@cli.command(name="convert-movielens")
@click.argument("users_dat", type=click.Path(exists=True, dir_okay=False))
@click.argument("movies_dat", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@handle_errors
def convert_movielens(users_dat, movies_dat, out_dir):
    """Convert MovieLens-1M users.dat / movies.dat into attribute files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    convert_movielens_users(users_dat, out / "users.tsv")
    convert_movielens_movies(movies_dat, out / "items.tsv", out / "release.tsv")
    paths = {"user_attributes_path": out / "users.tsv", "item_attributes_path": out / "items.tsv",
             "item_release_path": out / "release.tsv"}
    click.echo(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))


if __name__ == "__main__":
    cli()
