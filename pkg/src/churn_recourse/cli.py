"""Command-line pipeline driver and thin service client.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numerical failure.  Any subcommand accepts --config pointing at a JSON
object; its keys fill in options not given explicitly on the command line.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from .countergan import TrainConfig
from .data import SynthConfig
from .errors import ArtifactError, ConfigError, NumericalError, ParseError
from .metrics import render_accuracy_table, render_recourse_table
from .pipeline import (
    REPRO_DEFAULTS,
    RgdConfig,
    derive_seed,
    run_repro,
    stage_audit,
    stage_distill,
    stage_evaluate,
    stage_generate_data,
    stage_recourse,
    stage_train_forest,
    stage_train_gan,
)
from .survival import ForestConfig

EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERICAL = 4


def pipeline_command(fn):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ArtifactError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_MISSING_ARTIFACT)
        except (ConfigError, ParseError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except NumericalError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def apply_config(ctx: click.Context, config_path: str | None) -> None:
    """Fill defaults from a JSON config file; explicit flags win."""
    if not config_path:
        return
    try:
        with open(config_path, encoding="utf-8") as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"missing config file {config_path!r}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{config_path}: {exc}") from None
    if not isinstance(values, dict):
        raise ParseError(f"{config_path}: expected a JSON object")
    for key, value in values.items():
        param = key.replace("-", "_")
        if param not in ctx.params:
            raise ConfigError(f"{config_path}: unknown option {key!r}")
        if ctx.get_parameter_source(param) == click.core.ParameterSource.DEFAULT:
            ctx.params[param] = value


config_option = click.option("--config", "config_path", type=click.Path(), default=None,
                             help="JSON file with option defaults.")


@click.group()
@click.version_option()
def main():
    """Churn prediction and counterfactual recourse pipeline."""


@main.command("generate-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--users", default=2000, show_default=True)
@click.option("--features", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--censor-rate", default=0.15, show_default=True)
@click.option("--train-fraction", default=0.5, show_default=True)
@config_option
@click.pass_context
@pipeline_command
def generate_data(ctx, out_dir, users, features, seed, censor_rate, train_fraction, config_path):
    """Synthesize a user panel and write train/test CSVs plus feature metadata."""
    apply_config(ctx, config_path)
    p = ctx.params
    paths = stage_generate_data(
        p["out_dir"],
        SynthConfig(n_users=int(p["users"]), n_features=int(p["features"]),
                    seed=int(p["seed"]), censor_rate=float(p["censor_rate"])),
        train_fraction=float(p["train_fraction"]),
    )
    for k, v in paths.items():
        click.echo(f"{k}: {v}")


@main.command("train-forest")
@click.option("--train", "train_csv", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--trees", default=20, show_default=True)
@click.option("--min-leaf", default=10, show_default=True)
@click.option("--features-per-split", default=None, type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@config_option
@click.pass_context
@pipeline_command
def train_forest(ctx, train_csv, meta_path, trees, min_leaf, features_per_split, seed,
                 out_path, config_path):
    """Fit the survival forest churn classifier."""
    apply_config(ctx, config_path)
    p = ctx.params
    classifier = stage_train_forest(
        p["train_csv"], p["meta_path"], p["out_path"],
        ForestConfig(n_trees=int(p["trees"]), min_leaf_size=int(p["min_leaf"]),
                     features_per_split=p["features_per_split"], seed=int(p["seed"])),
    )
    click.echo(f"forest: {p['out_path']} ({classifier.config.n_trees} trees)")


@main.command("distill")
@click.option("--forest", "forest_path", required=True, type=click.Path())
@click.option("--train", "train_csv", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@config_option
@click.pass_context
@pipeline_command
def distill(ctx, forest_path, train_csv, meta_path, seed, out_path, config_path):
    """Distill the forest score into a differentiable surrogate network."""
    apply_config(ctx, config_path)
    p = ctx.params
    _, agreement = stage_distill(p["forest_path"], p["train_csv"], p["meta_path"],
                                 p["out_path"], seed=int(p["seed"]))
    click.echo(f"surrogate: {p['out_path']} (held-out agreement {agreement:.3f})")


@main.command("train-gan")
@click.option("--forest", "forest_path", required=True, type=click.Path())
@click.option("--surrogate", "surrogate_path", required=True, type=click.Path())
@click.option("--train", "train_csv", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--iterations", default=600, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--ceiling", default=0.55, show_default=True,
              help="Checkpoint rule: D accuracy ceiling on both pools.")
@click.option("--lambda-cls", default=0.4, show_default=True)
@click.option("--lambda-reg", default=0.1, show_default=True)
@click.option("--real-pool", default="label1", type=click.Choice(["label1", "all"]),
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@config_option
@click.pass_context
@pipeline_command
def train_gan(ctx, forest_path, surrogate_path, train_csv, meta_path, out_dir, iterations,
              batch_size, ceiling, lambda_cls, lambda_reg, real_pool, seed, config_path):
    """Train the residual-action GAN against a frozen forest."""
    apply_config(ctx, config_path)
    p = ctx.params
    model = stage_train_gan(
        p["forest_path"], p["surrogate_path"], p["train_csv"], p["meta_path"], p["out_dir"],
        TrainConfig(
            max_iterations=int(p["iterations"]), batch_size=int(p["batch_size"]),
            checkpoint_accuracy_ceiling=float(p["ceiling"]),
            lambda_cls=float(p["lambda_cls"]), lambda_reg=float(p["lambda_reg"]),
            real_pool=p["real_pool"], seed=int(p["seed"]),
        ),
    )
    status = (
        f"restored checkpoint {model.restored_iteration}"
        if model.restored_iteration is not None
        else "no qualifying checkpoint (final state kept)"
    )
    click.echo(f"gan: {p['out_dir']} ({len(model.checkpoint_iterations)} checkpoints, {status})")


@main.command("recourse")
@click.option("--method", type=click.Choice(["gan", "rgd"]), required=True)
@click.option("--forest", "forest_path", required=True, type=click.Path())
@click.option("--data", "data_csv", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--gan", "gan_dir", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--max-users", default=None, type=int,
              help="Cap the number of denied users processed.")
@click.option("--max-steps", default=1000, show_default=True, help="RGD iteration cap.")
@click.option("--step-size", default=0.5, show_default=True)
@click.option("--lambda-distance", default=0.1, show_default=True)
@click.option("--fd-epsilon", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@config_option
@click.pass_context
@pipeline_command
def recourse(ctx, method, forest_path, data_csv, meta_path, gan_dir, out_dir, max_users,
             max_steps, step_size, lambda_distance, fd_epsilon, seed, config_path):
    """Generate counterfactual actions for every denied user in a panel."""
    apply_config(ctx, config_path)
    p = ctx.params
    result = stage_recourse(
        p["method"], p["forest_path"], p["data_csv"], p["meta_path"], p["out_dir"],
        gan_dir=p["gan_dir"],
        rgd_config=RgdConfig(
            max_steps=int(p["max_steps"]), step_size=float(p["step_size"]),
            lambda_distance=float(p["lambda_distance"]), fd_epsilon=float(p["fd_epsilon"]),
            seed=int(p["seed"]),
        ),
        max_users=p["max_users"],
    )
    n = len(result["actions"])
    succ = sum(a.post_class for a in result["actions"])
    click.echo(f"actions: {result['paths']['actions']} ({succ}/{n} successful)")


@main.command("evaluate")
@click.option("--forest", "forest_path", required=True, type=click.Path())
@click.option("--data", "data_csv", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--actions", "actions_dir", required=True, type=click.Path())
@click.option("--gan", "gan_dir", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@config_option
@click.pass_context
@pipeline_command
def evaluate(ctx, forest_path, data_csv, meta_path, actions_dir, gan_dir, out_dir, config_path):
    """Compute the full metric suite for one (model, recourse-method) pair."""
    apply_config(ctx, config_path)
    p = ctx.params
    report = stage_evaluate(p["forest_path"], p["data_csv"], p["meta_path"], p["actions_dir"],
                            p["out_dir"], gan_dir=p["gan_dir"])
    click.echo(render_accuracy_table([report]))
    click.echo(render_recourse_table([report]))


@main.command("audit")
@click.option("--train", "train_csv", required=True, type=click.Path())
@click.option("--data", "test_csv", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--actions", "actions_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--feature", "feature_name", default=None,
              help="Also export per-feature cost histograms for this feature.")
@config_option
@click.pass_context
@pipeline_command
def audit(ctx, train_csv, test_csv, meta_path, actions_dir, out_dir, feature_name, config_path):
    """Export PCA scatter and cost-histogram audit tables."""
    apply_config(ctx, config_path)
    p = ctx.params
    paths = stage_audit(p["train_csv"], p["test_csv"], p["meta_path"], p["actions_dir"],
                        p["out_dir"], feature_name=p["feature_name"])
    for k, v in paths.items():
        click.echo(f"{k}: {v}")


@main.command("serve")
@click.option("--forest", "forest_path", required=True, type=click.Path())
@click.option("--gan", "gan_dir", required=True, type=click.Path())
@click.option("--meta", "meta_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@config_option
@click.pass_context
@pipeline_command
def serve(ctx, forest_path, gan_dir, meta_path, host, port, config_path):
    """Run the read-only inference service."""
    apply_config(ctx, config_path)
    p = ctx.params
    import uvicorn

    from .pipeline import require_artifact
    from .service import create_app, load_state

    require_artifact(p["forest_path"], "train-forest")
    require_artifact(p["meta_path"], "generate-data")
    require_artifact(f"{p['gan_dir']}/bundle.json", "train-gan")
    app = create_app(load_state(p["forest_path"], p["gan_dir"], p["meta_path"]))
    uvicorn.run(app, host=p["host"], port=int(p["port"]), log_level="warning")


@main.command("repro")
@click.option("--seed", default=7, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@config_option
@click.pass_context
@pipeline_command
def repro(ctx, seed, out_dir, config_path):
    """Run the full experiment grid (1/5/20-tree GANs plus the RGD baseline)."""
    overrides = None
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except FileNotFoundError:
            raise ArtifactError(f"missing config file {config_path!r}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{config_path}: {exc}") from None
    manifest = run_repro(out_dir, int(seed), overrides)
    click.echo(f"manifest: {out_dir}/manifest.json ({len(manifest.outputs)} outputs)")
    with open(f"{out_dir}/report.txt", encoding="utf-8") as fh:
        click.echo(fh.read())


# ---------------------------------------------------------------------------
# Thin HTTP client
# ---------------------------------------------------------------------------


@main.group()
def client():
    """Query a running inference service."""


def _request(url: str, method: str, path: str, body: dict | None = None):
    import httpx

    resp = httpx.request(method, url.rstrip("/") + path, json=body, timeout=30.0)
    try:
        doc = resp.json()
    except ValueError:
        click.echo(f"error: non-JSON response (HTTP {resp.status_code})", err=True)
        sys.exit(1)
    click.echo(json.dumps(doc, indent=2, sort_keys=True))
    if resp.status_code >= 400:
        sys.exit(1)


@client.command("features")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
def client_features(url):
    _request(url, "GET", "/features")


@client.command("predict")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--features", required=True, help="Comma-separated feature values.")
def client_predict(url, features):
    values = [float(v) for v in features.split(",")]
    _request(url, "POST", "/predict", {"features": values})


@client.command("recourse")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--features", required=True, help="Comma-separated feature values.")
def client_recourse(url, features):
    values = [float(v) for v in features.split(",")]
    _request(url, "POST", "/recourse", {"features": values})


@client.command("whatif")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--features", required=True, help="Comma-separated feature values.")
@click.option("--edit", "edits", multiple=True, help="name=value, repeatable.")
def client_whatif(url, features, edits):
    values = [float(v) for v in features.split(",")]
    edit_map = {}
    for e in edits:
        name, _, value = e.partition("=")
        edit_map[name] = float(value)
    _request(url, "POST", "/whatif", {"features": values, "edits": edit_map})


if __name__ == "__main__":
    main()
