"""Command-line client for the experiment service.

By default every verb talks to the service in-process over an ASGI
transport, so no server needs to be running; ``--server URL`` targets a
remote instance instead, and ``mata serve`` starts one.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 training
failure, 5 anything else.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_INTERNAL = 5

_EXIT_BY_KIND = {"config": EXIT_CONFIG, "data": EXIT_DATA, "training": EXIT_TRAINING}


def _fail(kind: str, message: str) -> None:
    one_line = " ".join(str(message).split())
    click.echo(f'error={kind} message="{one_line}"', err=True)
    sys.exit(_EXIT_BY_KIND.get(kind, EXIT_INTERNAL))


def _call(endpoint: str, payload: dict, server: str | None) -> dict:
    try:
        if server:
            resp = httpx.post(server.rstrip("/") + endpoint, json=payload, timeout=None)
        else:
            from starlette.testclient import TestClient

            from .service.app import app

            with TestClient(app, raise_server_exceptions=False) as client:
                resp = client.post(endpoint, json=payload)
    except httpx.HTTPError as exc:
        _fail("internal", f"service unreachable: {exc}")
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except ValueError:
        _fail("internal", f"HTTP {resp.status_code}")
    if "errorKind" in body:
        _fail(body["errorKind"], body["message"])
    # FastAPI request-validation error
    _fail("config", json.dumps(body.get("detail", body)))


def _load_config(path: str, overrides: tuple[str, ...]) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        _fail("config", f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        _fail("config", f"config is not valid JSON: {exc}")
    for item in overrides:
        if "=" not in item:
            _fail("config", f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                _fail("config", f"--set path {key!r} crosses a non-object")
        node[parts[-1]] = value
    return doc


@click.group()
@click.option("--server", default=None, envvar="MATA_SERVER",
              help="URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Train and evaluate embedding-fusion classifiers."""
    ctx.obj = {"server": server}


@main.command()
@click.option("--out", "output_dir", required=True, type=click.Path())
@click.option("--classes", default=4, show_default=True)
@click.option("--per-class", default=100, show_default=True)
@click.option("--dim1", default=64, show_default=True)
@click.option("--dim2", default=64, show_default=True)
@click.option("--sigma", default=1.0, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.pass_context
def synth(ctx, output_dir, classes, per_class, dim1, dim2, sigma, seed):
    """Generate a complementary synthetic embedding pair."""
    result = _call("/synth", {
        "classes": classes, "perClass": per_class, "dim1": dim1, "dim2": dim2,
        "sigma": sigma, "seed": seed, "outputDir": output_dir,
    }, ctx.obj["server"])
    for f in result["files"]:
        click.echo(f"wrote {f}")
    click.echo("nearest-mean baseline accuracies:")
    for key, val in result["baselineAccuracies"].items():
        click.echo(f"  {key}: {val:.4f}")


@main.command()
@click.argument("config", type=click.Path())
@click.option("--set", "overrides", multiple=True,
              help="Override a config key, e.g. --set train.epochs=5")
@click.pass_context
def run(ctx, config, overrides):
    """Run one 5-fold experiment described by a JSON config file."""
    doc = _load_config(config, overrides)
    result = _call("/run", doc, ctx.obj["server"])
    click.echo(f"report written to {result['outputDir']}")
    for r in result["report"]["runs"]:
        click.echo(
            f"{r['name']}: accuracy {100 * r['meanAccuracy']:.2f} "
            f"f1 {100 * r['meanMacroF1']:.2f}"
        )


@main.command()
@click.argument("config", type=click.Path())
@click.option("--set", "overrides", multiple=True)
@click.pass_context
def compare(ctx, config, overrides):
    """Run several variants on shared folds and emit one grouped report."""
    doc = _load_config(config, overrides)
    result = _call("/compare", doc, ctx.obj["server"])
    click.echo(f"report written to {result['outputDir']}")
    for r in result["report"]["runs"]:
        click.echo(
            f"{r['regime']} / {r['name']}: accuracy {100 * r['meanAccuracy']:.2f} "
            f"f1 {100 * r['meanMacroF1']:.2f}"
        )


@main.command()
@click.argument("path", type=click.Path())
@click.pass_context
def inspect(ctx, path):
    """Validate a dataset on disk and print a summary."""
    result = _call("/inspect", {"path": path}, ctx.obj["server"])
    if not result["valid"]:
        for v in result["violations"]:
            click.echo(f'error=data message="{v}"', err=True)
        sys.exit(EXIT_DATA)
    click.echo(f"dataset: {result['datasetName']} / {result['modelName']}")
    click.echo(f"dim: {result['dim']}  records: {result['records']}")
    click.echo(f"classes: {json.dumps(result['classHistogram'])}")
    click.echo(f"emb sha256: {result['embSha256']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Start the experiment service."""
    import uvicorn

    uvicorn.run("mata.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
