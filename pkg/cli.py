"""Command-line entry point for the extrema-weighted feature pipeline."""
import json
import sys
from pathlib import Path
from typing import Callable, Dict, Optional

import click
import colorama
import structlog

from baselines import arv_features, fit_baseline_gam, spectrum_features, supervised_pca
from config import RunConfig
from data_export import (
    DataExporter, auc_frame, features_frame, loadings_frame, pvalue_frame, smooth_grid_frame,
    spectra_frame, trace_frame,
)
from density import fit_marginal
from error_handling import (
    ArtifactError, ErrorHandler, RunContextManager, ValidationError, log_exceptions, setup_logging,
)
from funcdata import Dataset, add_duration_covariate, clean_dataset, fill_dataset, load_dataset, median_sampling_interval
from inference import build_pipeline, prediction_study, randomization_test, summarize_auc
from metrics import metrics
from optimize import adaptive_grid_search
from simulate import ar_sim, frequency_sim
from xwf import ALL_KINDS, FeatureExtractor, WeightParams, feature_columns

logger = structlog.get_logger(__name__)

PIPELINES = ("xwf", "arv", "spectrum")

# Settings written into simulation.cfg next to simulated data.
SIMULATION_RUN_KEYS = ["trajectories", "table", "seed", "apply_cleaning", "common_dt"]

REPORT_SOURCES = [
    "xwf_fit.json", "arv_fit.json", "spectrum_fit.json",
    "permtest_xwf.json", "permtest_arv.json", "permtest_spectrum.json", "auc_summary.json",
]


def prepare_dataset(config: RunConfig, exporter: Optional[DataExporter] = None) -> Dataset:
    """Load, clean (optionally), gap-fill and extend covariates as configured."""
    trajectories, table = config.require_inputs()
    dataset = load_dataset(trajectories, table)
    if config.apply_cleaning:
        outcome = clean_dataset(dataset, config.cleaning_policy())
        if exporter is not None:
            exporter.export_cleaning_report_csv(outcome.records)
        dataset = outcome.dataset
    dataset = fill_dataset(dataset, config.target_dt)
    if config.duration_covariate:
        dataset = add_duration_covariate(dataset)
    return dataset


def _load_params(path: Optional[str]) -> WeightParams:
    if path is None:
        return WeightParams.initial(len(ALL_KINDS))
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        weights = payload["weights"]
    except (OSError, ValueError, KeyError) as e:
        raise ArtifactError(f"Cannot read weight parameters from {path}: {e}", path=str(path)) from e
    return WeightParams(
        b_left=[weights[f"b_L{int(k)}"] for k in ALL_KINDS],
        b_right=[weights[f"b_R{int(k)}"] for k in ALL_KINDS],
    )


def _simulation_run_file(config: RunConfig) -> str:
    run_config = config.model_copy(update={
        "trajectories": config.output_dir / "trajectories.csv",
        "table": config.output_dir / "table.csv",
        "apply_cleaning": False,
        "common_dt": 1.0,
    })
    return run_config.to_file_text(SIMULATION_RUN_KEYS)


def simulate_freq_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    dataset, latents = frequency_sim(config.freq_sim_config())
    exporter.export_dataset(dataset, latents if config.latents else None)
    exporter.write_text("simulation.cfg", _simulation_run_file(config))


def simulate_ar_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    dataset, latents = ar_sim(config.ar_sim_config())
    exporter.export_dataset(dataset, latents if config.latents else None)
    exporter.write_text("simulation.cfg", _simulation_run_file(config))


def extract_command(config: RunConfig, exporter: DataExporter, params_file: Optional[str] = None, **_) -> None:
    dataset = prepare_dataset(config, exporter)
    marginal = fit_marginal(dataset.trajectories, config.grid_size, config.bandwidth)
    params = _load_params(params_file)
    matrix = FeatureExtractor.from_dataset(dataset, marginal).matrix(params)
    exporter.export_marginal_csv(marginal)
    exporter.write_csv("features.csv", features_frame(dataset.subject_ids, matrix, feature_columns()))


def fit_xwf_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    dataset = prepare_dataset(config, exporter)
    before = metrics.counter_snapshot()
    marginal = fit_marginal(dataset.trajectories, config.grid_size, config.bandwidth)
    params, fit, trace = adaptive_grid_search(dataset, marginal, config.gam_spec(), config.levels,
                                              workers=config.workers)
    if fit is None:
        raise ArtifactError("No GAM fit available at the selected weight parameters")
    matrix = FeatureExtractor.from_dataset(dataset, marginal).matrix(params)

    exporter.export_marginal_csv(marginal)
    exporter.write_csv("features.csv", features_frame(dataset.subject_ids, matrix, feature_columns()))
    exporter.write_csv("xwf_trace.csv", trace_frame(trace))
    exporter.write_csv("xwf_smooths.csv", smooth_grid_frame(fit))
    exporter.write_json("xwf_fit.json", {
        "method": "Extrema-weighted features",
        "weights": params.as_dict(),
        "search": {"levels": config.levels, "fits": trace.n_fits,
                   "initial_loglik": trace.initial_likelihood, "final_loglik": trace.final_likelihood},
        "fit": fit.summary(),
        "counters": metrics.counter_delta(before),
    })


def fit_arv_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    dataset = prepare_dataset(config, exporter)
    before = metrics.counter_snapshot()
    values = arv_features(dataset)
    fit = fit_baseline_gam("arv", dataset, values, config.gam_spec())
    exporter.write_csv("arv_features.csv", features_frame(dataset.subject_ids, values.reshape(-1, 1), ["arv"]))
    exporter.write_csv("arv_smooths.csv", smooth_grid_frame(fit))
    exporter.write_json("arv_fit.json", {
        "method": "Average real variability",
        "fit": fit.summary(),
        "counters": metrics.counter_delta(before),
    })


def fit_spectrum_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    dataset = prepare_dataset(config, exporter)
    before = metrics.counter_snapshot()
    common_dt = config.common_dt or median_sampling_interval(dataset.trajectories)
    spectra = spectrum_features(dataset.trajectories, common_dt, config.max_bins)
    pcs = supervised_pca(spectra, dataset.outcomes, config.n_components, config.log_spectrum, config.screening_z)
    fit = fit_baseline_gam("spectrum", dataset, pcs.scores, config.gam_spec())

    exporter.write_csv("spectra.csv", spectra_frame(spectra))
    exporter.write_csv("loadings.csv", loadings_frame(pcs))
    exporter.write_csv("spectrum_smooths.csv", smooth_grid_frame(fit))
    exporter.write_json("spectrum_fit.json", {
        "method": "Power spectrum",
        "common_dt": common_dt,
        "screening": {"retained": int(pcs.selected_mask.sum()), "threshold": pcs.threshold},
        "explained_variance_ratio": pcs.pca.explained_variance_ratio_,
        "fit": fit.summary(),
        "counters": metrics.counter_delta(before),
    })


def permtest_command(config: RunConfig, exporter: DataExporter, pipeline: str = "xwf", **_) -> None:
    seed = config.require_seed("permtest")
    dataset = prepare_dataset(config, exporter)
    before = metrics.counter_snapshot()
    result = randomization_test(build_pipeline(pipeline, dataset, config), dataset, config.replicates,
                                seed, config.retries, config.workers)
    exporter.write_csv(f"permtest_{pipeline}.csv", pvalue_frame(result.method, result))
    payload = result.to_dict()
    payload["counters"] = metrics.counter_delta(before)
    exporter.write_json(f"permtest_{pipeline}.json", payload)


def predict_study_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    dataset = prepare_dataset(config, exporter)
    study = prediction_study(dataset, config, config.workers)
    exporter.write_csv("auc.csv", auc_frame(study))
    exporter.write_json("auc_summary.json", {
        "splits": config.n_splits,
        "test_size": {"positives": config.n_pos_test, "negatives": config.n_neg_test},
        "weights": [params.as_dict() for params in study.params],
        "summary": summarize_auc(study),
    })


def report_command(config: RunConfig, exporter: DataExporter, **_) -> None:
    sections = {}
    for name in REPORT_SOURCES:
        path = config.output_dir / name
        if path.exists():
            try:
                document = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as e:
                raise ArtifactError(f"Cannot read {path}: {e}", path=str(path)) from e
            document.pop("meta", None)
            sections[path.stem] = document
    if not sections:
        raise ArtifactError(f"No results to report in {config.output_dir}", path=str(config.output_dir))

    table = []
    for stem, document in sections.items():
        if stem.startswith("permtest_"):
            for parameter, values in document["terms"].items():
                table.append({"method": document["method"], "parameter": parameter,
                              "p_value": values["calibrated_p"]})
    exporter.write_json("report.json", {"pvalue_table": table, "sections": sections})


COMMANDS: Dict[str, Callable[..., None]] = {
    "simulate-freq": simulate_freq_command,
    "simulate-ar": simulate_ar_command,
    "extract": extract_command,
    "fit-xwf": fit_xwf_command,
    "fit-arv": fit_arv_command,
    "fit-spectrum": fit_spectrum_command,
    "permtest": permtest_command,
    "predict-study": predict_study_command,
    "report": report_command,
}


@log_exceptions("cli")
def _dispatch(command: str, config: RunConfig, exporter: DataExporter, **options) -> None:
    COMMANDS[command](config, exporter, **options)


def run(command: str, config: RunConfig, **options) -> int:
    """Execute one command; returns the process exit status.

    Errors are printed to stderr as JSON and any artifacts the command had
    already written are removed.
    """
    if command not in COMMANDS:
        error = ValidationError(f"Unknown command '{command}'", command=command)
        click.echo(json.dumps(ErrorHandler.payload(error)), err=True)
        return error.exit_code

    setup_logging(config.log_level, config.log_file)
    config_hash = config.config_hash()
    RunContextManager.start(command, config_hash, config.seed)
    exporter = DataExporter(config.output_dir, config_hash, config.seed)
    try:
        _dispatch(command, config, exporter, **options)
    except Exception as e:
        exporter.discard()
        RunContextManager.finish("failed")
        click.echo(json.dumps(ErrorHandler.payload(e)), err=True)
        return ErrorHandler.exit_code(e)

    for path in exporter.written:
        logger.info("Artifact written", file=str(path))
    logger.debug("Run metrics", **metrics.get_all_metrics())
    RunContextManager.finish("ok")
    return 0


def _resolve(ctx: click.Context, overrides: dict) -> RunConfig:
    options = ctx.obj or {}
    merged = dict(options.get("overrides", {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.resolve(options.get("config_file"), options.get("env_file"), merged)


def _invoke(ctx: click.Context, command: str, overrides: dict, **options) -> None:
    try:
        config = _resolve(ctx, overrides)
    except Exception as e:
        click.echo(json.dumps(ErrorHandler.payload(e)), err=True)
        ctx.exit(ErrorHandler.exit_code(e))
        return
    ctx.exit(run(command, config, **options))


def _parse_settings(settings) -> dict:
    parsed = {}
    for item in settings:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got '{item}'", param_hint="--set")
        key, value = (part.strip() for part in item.split("=", 1))
        parsed[key] = value
    return parsed


@click.group()
@click.option("--config", "config_file", type=click.Path(dir_okay=False), help="Flat key = value config file")
@click.option("--env-file", type=click.Path(dir_okay=False), help="Environment file (XWF_ variables)")
@click.option("--out", "output_dir", type=click.Path(file_okay=False), help="Output directory")
@click.option("--seed", type=int, help="Seed for stochastic commands")
@click.option("--trajectories", type=click.Path(dir_okay=False), help="Trajectory CSV")
@click.option("--table", type=click.Path(dir_okay=False), help="Outcome and covariate CSV")
@click.option("--workers", type=int, help="Worker-pool budget")
@click.option("--log-level", help="Logging level")
@click.option("--set", "settings", multiple=True, help="Any setting as key=value (repeatable)")
@click.pass_context
def cli(ctx, config_file, env_file, output_dir, seed, trajectories, table, workers, log_level, settings):
    """Extrema-weighted feature extraction, baselines and randomization inference."""
    colorama.init()
    overrides = _parse_settings(settings)
    overrides.update({k: v for k, v in {
        "output_dir": output_dir, "seed": seed, "trajectories": trajectories, "table": table,
        "workers": workers, "log_level": log_level,
    }.items() if v is not None})
    ctx.obj = {"config_file": config_file, "env_file": env_file, "overrides": overrides}


@cli.command("simulate-freq")
@click.option("--n-subjects", type=int)
@click.option("--n-samples", type=int)
@click.option("--latents/--no-latents", default=None, help="Also write latents.csv")
@click.pass_context
def simulate_freq(ctx, n_subjects, n_samples, latents):
    """Generate the frequency-simulation dataset."""
    _invoke(ctx, "simulate-freq", {"n_subjects": n_subjects, "n_samples": n_samples, "latents": latents})


@cli.command("simulate-ar")
@click.option("--n-subjects", type=int)
@click.option("--n-samples", type=int)
@click.option("--latents/--no-latents", default=None, help="Also write latents.csv")
@click.pass_context
def simulate_ar(ctx, n_subjects, n_samples, latents):
    """Generate the autoregressive-simulation dataset."""
    _invoke(ctx, "simulate-ar", {"n_subjects": n_subjects, "n_samples": n_samples, "latents": latents})


@cli.command("extract")
@click.option("--params", "params_file", type=click.Path(dir_okay=False),
              help="xwf_fit.json whose weights to use (default: initial weights)")
@click.pass_context
def extract(ctx, params_file):
    """Write the XWF feature matrix."""
    _invoke(ctx, "extract", {}, params_file=params_file)


@cli.command("fit-xwf")
@click.option("--levels", type=int, help="Grid-search refinement levels")
@click.pass_context
def fit_xwf(ctx, levels):
    """Run the weight search and write the fit summary and trace."""
    _invoke(ctx, "fit-xwf", {"levels": levels})


@cli.command("fit-arv")
@click.pass_context
def fit_arv(ctx):
    """Fit the ARV baseline GAM."""
    _invoke(ctx, "fit-arv", {})


@cli.command("fit-spectrum")
@click.option("--n-components", type=int)
@click.pass_context
def fit_spectrum(ctx, n_components):
    """Fit the power-spectrum supervised-PC baseline GAM."""
    _invoke(ctx, "fit-spectrum", {"n_components": n_components})


@cli.command("permtest")
@click.option("--pipeline", type=click.Choice(PIPELINES), default="xwf", show_default=True)
@click.option("--replicates", type=int, help="Permutation replicates R")
@click.option("--freeze-weights", is_flag=True, default=None, help="Reuse the observed weights per replicate")
@click.pass_context
def permtest(ctx, pipeline, replicates, freeze_weights):
    """Calibrated p-values by randomization."""
    overrides = {"replicates": replicates, "refit_weights": False if freeze_weights else None}
    _invoke(ctx, "permtest", overrides, pipeline=pipeline)


@cli.command("predict-study")
@click.option("--splits", "n_splits", type=int)
@click.pass_context
def predict_study(ctx, n_splits):
    """Held-out AUC comparison of the three models."""
    _invoke(ctx, "predict-study", {"n_splits": n_splits})


@cli.command("report")
@click.pass_context
def report(ctx):
    """Collate the JSON results in the output directory."""
    _invoke(ctx, "report", {})


def main():
    cli(obj={})


if __name__ == "__main__":
    sys.exit(main())
