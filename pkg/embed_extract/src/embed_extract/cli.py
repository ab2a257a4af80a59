"""Command-line entry point; flags mirror ExtractConfig."""

from __future__ import annotations

import sys

import click

from .extract import ROLES, ExtractConfig, ExtractError, extract


@click.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Dataset to encode (JSONL or TSV).")
@click.option("--output", required=True, type=click.Path(dir_okay=False),
              help="PQE1 embedding file to write.")
@click.option("--model", required=True,
              help="Sentence-encoder model id or local path.")
@click.option("--roles", default="src,mt", show_default=True,
              help=f"Comma-separated roles to embed, subset of {','.join(ROLES)}.")
@click.option("--revision", default=None,
              help="Encoder revision to pin; recorded in the output provenance.")
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--expect-dim", type=int, default=None,
              help="Fail unless the encoder emits exactly this dimension.")
def cli(corpus, output, model, roles, revision, batch_size, expect_dim):
    """Encode a corpus into bit-exact PQE1 embeddings."""
    cfg = ExtractConfig(
        corpus=corpus,
        output=output,
        model=model,
        roles=tuple(r.strip() for r in roles.split(",") if r.strip()),
        revision=revision,
        batch_size=batch_size,
        expect_dim=expect_dim,
    )
    count = extract(cfg)
    click.echo(f"wrote {count} records to {output}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ExtractError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
