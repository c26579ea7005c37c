"""Command line for embedding extraction and dataset verification."""

from __future__ import annotations

import logging
import sys

import click

from . import format as fmt
from .audio import AudioError
from .backends import BackendError, EXPECTED_DIM, load_backend
from .extract import extract_directory, verify_dataset
from .labels import LabelError, LabelRule


@click.group()
def main():
    """Turn audio corpora into embedding datasets."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@main.command()
@click.option("--model", "model_id", required=True,
              type=click.Choice(sorted(EXPECTED_DIM)))
@click.option("--audio", "audio_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--labels", "rule_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--checkpoint", default=None,
              help="Weights to load instead of the model's default checkpoint.")
@click.option("--name", default="", help="Dataset name (default: audio dir name).")
def extract(model_id, audio_dir, rule_path, out_path, checkpoint, name):
    """Embed every .wav under a directory into one dataset."""
    try:
        rule = LabelRule.load(rule_path)
        backend = load_backend(model_id, checkpoint)
        result = extract_directory(backend, audio_dir, rule, dataset_name=name)
    except (AudioError, LabelError, BackendError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    fmt.write(result.dataset, out_path)
    ds = result.dataset
    click.echo(f"wrote {len(ds.records)} records, dim {ds.dim}, "
               f"{len(ds.label_names)} classes, skipped {len(result.skipped)}")


@main.command()
@click.argument("path", type=click.Path())
@click.option("--expect-files", type=int, default=None,
              help="Expected record count (audio files minus skips).")
def verify(path, expect_files):
    """Re-validate a dataset's format and dimension contract."""
    violations = verify_dataset(path, expected_files=expect_files)
    if violations:
        for v in violations:
            click.echo(f"violation: {v}", err=True)
        sys.exit(1)
    ds = fmt.read(path)
    click.echo(f"ok: {len(ds.records)} records, dim {ds.dim}, "
               f"model {ds.model_name}")


if __name__ == "__main__":
    main()
