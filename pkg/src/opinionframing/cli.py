"""Command-line interface for the opinion-framing pipeline.

Every subcommand reads the same TOML configuration, writes versioned
artifacts into the run directory, and prints a one-line summary.  Exit
codes: 0 success, 1 user error (bad config or arguments, missing or stale
artifacts), 2 internal error.
"""

from __future__ import annotations

import json
import sys
import traceback

import click

from . import __version__, pipeline
from .pipeline import PipelineError, RunContext


def _context(params: dict) -> RunContext:
    return RunContext.create(
        config_path=params["config"],
        out_dir=params["out_dir"],
        seed_override=params["seed"],
        force=params["force"],
    )


def _echo_summary(name: str, summary: dict) -> None:
    click.echo(f"{name}: {json.dumps(summary, sort_keys=True, default=str)}")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__, prog_name="opinionframing")
@click.option(
    "--config",
    "-c",
    default="pipeline.toml",
    show_default=True,
    help="Pipeline configuration (TOML).",
)
@click.option(
    "--out-dir",
    "-o",
    default="run",
    show_default=True,
    help="Run directory receiving all artifacts.",
)
@click.option(
    "--seed", type=int, default=None, help="Override the configured root seed."
)
@click.option(
    "--threads",
    type=int,
    default=1,
    show_default=True,
    help="Reserved worker-count hint; steps are single-threaded and "
    "deterministic regardless.",
)
@click.option(
    "--force",
    is_flag=True,
    help="Combine artifacts even when their config hashes disagree.",
)
@click.pass_context
def cli(ctx, config, out_dir, seed, threads, force):
    """Extract attributed opinions from parsed news and quantify framing."""
    ctx.obj = {
        "config": config,
        "out_dir": out_dir,
        "seed": seed,
        "threads": threads,
        "force": force,
    }


@cli.command()
@click.pass_obj
def corpus(params):
    """Ingest articles: annotate leanings, filter URLs, deduplicate."""
    ctx = _context(params)
    _echo_summary("corpus", pipeline.step_corpus(ctx))


@cli.command()
@click.pass_obj
def extract(params):
    """Extract (source, predicate, opinion) tuples from parses."""
    ctx = _context(params)
    _echo_summary("extract", pipeline.step_extract(ctx))


@cli.command()
@click.pass_obj
def aggregate(params):
    """Aggregate crowd annotations into per-item stance distributions."""
    ctx = _context(params)
    _echo_summary("aggregate", pipeline.step_aggregate(ctx))


@cli.command()
@click.pass_obj
def demographics(params):
    """Fit the ordinal stance model with worker covariates."""
    ctx = _context(params)
    _echo_summary("demographics", pipeline.step_demographics(ctx))


@cli.command(name="human-perf")
@click.pass_obj
def human_perf(params):
    """Estimate annotator accuracy against held-out consensus."""
    ctx = _context(params)
    _echo_summary("human-perf", pipeline.step_human_perf(ctx))


@cli.command(name="train-stance")
@click.pass_obj
def train_stance(params):
    """Train and evaluate the linear stance classifier."""
    ctx = _context(params)
    _echo_summary("train-stance", pipeline.step_train_stance(ctx))


@cli.command()
@click.pass_obj
def classify(params):
    """Label every extracted tuple with the trained classifier."""
    ctx = _context(params)
    _echo_summary("classify", pipeline.step_classify(ctx))


@cli.command(name="ingest-labels")
@click.pass_obj
def ingest_labels(params):
    """Adopt externally produced stance labels after validation."""
    ctx = _context(params)
    _echo_summary("ingest-labels", pipeline.step_ingest_labels(ctx))


@cli.command(name="eval")
@click.pass_obj
def eval_cmd(params):
    """Score the label artifact against aggregated gold labels."""
    ctx = _context(params)
    _echo_summary("eval", pipeline.step_eval(ctx))


@cli.command()
@click.option("--min-freq", type=int, default=None, help="Device frequency floor.")
@click.option("--fdr", type=float, default=None, help="BH false-discovery rate.")
@click.option(
    "--exclude-wire/--include-wire",
    default=None,
    help="Drop tuples from wire-service outlets.",
)
@click.option(
    "--exclude-top-outlets",
    type=int,
    default=None,
    metavar="N",
    help="Drop the N outlets contributing the most tuples.",
)
@click.pass_obj
def framing(params, min_freq, fdr, exclude_wire, exclude_top_outlets):
    """Compute device coverage and per-device framing statistics."""
    ctx = _context(params)
    _echo_summary(
        "framing",
        pipeline.step_framing(
            ctx,
            min_freq=min_freq,
            fdr=fdr,
            exclude_wire=exclude_wire,
            exclude_top_outlets=exclude_top_outlets,
        ),
    )


@cli.command()
@click.option(
    "--threshold",
    type=float,
    default=None,
    help="Fuzzy-match acceptance threshold in (0, 100].",
)
@click.pass_obj
def faithfulness(params, threshold):
    """Report attribution faithfulness against the entity roster."""
    ctx = _context(params)
    _echo_summary("faithfulness", pipeline.step_faithfulness(ctx, threshold))


@cli.command()
@click.pass_obj
def report(params):
    """Assemble the run's findings into one JSON + Markdown summary."""
    ctx = _context(params)
    _echo_summary("report", pipeline.step_report(ctx))


def main(argv=None) -> int:
    """Run the CLI with the documented exit-code contract."""
    try:
        cli.main(args=argv, prog_name="opinionframing", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except PipelineError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    return 0


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
