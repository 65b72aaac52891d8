"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List

import click
import numpy as np

from modality import __version__
from modality.analytics import (
    AnalyticsError,
    ElasticityMethod,
    class_profiles,
    elasticity_frame,
    profiles_frame,
    surface_frame,
    value_of_time_frame,
)
from modality.data import DataError, index_dataset, load_directory, validate_dataset, write_dataset
from modality.estimation import EmControls, EstimationError, fit_sub_model, three_step_fit
from modality.likelihood import HierarchicalModel, ZeroLikelihoodError
from modality.mnl import MnlError
from modality.report import (
    ESTIMATES_NAME,
    REPORT_NAME,
    STATISTICS_NAME,
    ReportError,
    RunManifest,
    estimates_text,
    load_estimates,
    single_payload,
    statistics_frame,
    three_step_payload,
    write_frame,
    write_json,
)
from modality.selection import (
    class_sweep,
    statistics_for,
    sweep_frame,
    sweep_summary_frame,
    three_step_statistics,
)
from modality.spec import (
    SpecError,
    SubModel,
    VariableCatalogue,
    model_spec_from_mapping,
    sub_model_layout,
)
from modality.synthgen import RecoveryError, SimulationError, load_truth, simulate_population, write_labels
from utils.formats import plural

ERRORS = (
    AnalyticsError,
    DataError,
    EstimationError,
    MnlError,
    RecoveryError,
    ReportError,
    SimulationError,
    SpecError,
    ZeroLikelihoodError,
    OSError,
)


@contextlib.contextmanager
def setup_logging(directory: Path):
    log = logging.getLogger()
    handler = logging.FileHandler(filename=directory / "modality.log", encoding="utf-8", mode="w")
    try:
        # __enter__
        log.setLevel(logging.INFO)
        dt_fmt = "%Y-%m-%d %H:%M:%S"
        fmt = logging.Formatter("[{asctime}] [{levelname:<7}] {name}: {message}", dt_fmt, style="{")
        handler.setFormatter(fmt)
        log.addHandler(handler)

        yield
    finally:
        # __exit__
        handler.close()
        log.removeHandler(handler)


def _read_config(path: Path) -> dict:
    if not path.is_file():
        raise SpecError(f"Configuration file {path} does not exist.")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SpecError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise SpecError(f"{path} must hold a JSON object.")
    return raw


def _load_model(config: Path, data: Path):
    raw = _read_config(config)
    ds = load_directory(data)
    report = validate_dataset(ds)
    if not report.ok:
        shown = "; ".join(str(v) for v in list(report)[:5])
        raise DataError(f"{plural(len(report)):validation problem} in {data}: {shown}", path=data)
    indexed = index_dataset(ds)
    spec = model_spec_from_mapping(raw, VariableCatalogue.from_dataset(ds))
    return HierarchicalModel(spec, indexed)


def _controls(config: Path, seed, starts, threads) -> EmControls:
    settings = EmControls.from_mapping(_read_config(config).get("estimation")).to_mapping()
    for key, value in (("seed", seed), ("starts", starts), ("threads", threads)):
        if value is not None:
            settings[key] = value
    return EmControls.from_mapping(settings)


def _parse_classes(text: str) -> List[int]:
    counts = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        try:
            counts.extend(range(int(lo), int(hi or lo) + 1))
        except ValueError:
            raise SpecError(f"Bad class range {text!r}; use e.g. 1-5 or 1,2,4.") from None
    if not counts or min(counts) < 1:
        raise SpecError(f"Bad class range {text!r}.")
    return sorted(set(counts))


def run_estimate(manifest: RunManifest) -> None:
    out = Path(manifest.output)
    model = _load_model(Path(manifest.config), Path(manifest.data))
    controls = EmControls.from_mapping(manifest.controls)
    data = model.data
    sub_model = manifest.options.get("sub_model", "all")

    if sub_model == "all":
        result = three_step_fit(model, controls)
        statistics = {
            "mode": statistics_for(data, result.mode),
            "neighbourhood": statistics_for(data, result.neighbourhood),
        }
        combined = three_step_statistics(data, result)
        payload = three_step_payload(result, statistics, combined)
        text = "\n".join(
            [
                estimates_text(result.mode, "Step 1: mode model"),
                estimates_text(result.neighbourhood, "Step 2: neighbourhood model"),
                estimates_text(result.conditional, "Step 3: membership given household class"),
            ]
        )
        statistics["combined"] = combined
        converged, loglik = result.converged, result.loglik
    else:
        fit = fit_sub_model(model, SubModel(sub_model), controls)
        statistics = {sub_model: statistics_for(data, fit)}
        payload = single_payload(fit, statistics[sub_model])
        text = estimates_text(fit)
        converged, loglik = fit.converged, fit.loglik

    write_json(out / REPORT_NAME, payload)
    (out / ESTIMATES_NAME).write_text(text, encoding="utf-8")
    write_frame(statistics_frame(statistics), out / STATISTICS_NAME)
    click.echo(f"Log-likelihood {loglik:.3f}; converged: {'yes' if converged else 'no'}.")
    if not converged:
        click.echo("Warning: estimation did not converge; see the report.", err=True)


def run_sweep(manifest: RunManifest) -> None:
    out = Path(manifest.output)
    model = _load_model(Path(manifest.config), Path(manifest.data))
    level = SubModel(manifest.options.get("level", "mode"))
    rows = class_sweep(
        model.data,
        model.spec,
        _parse_classes(manifest.options["classes"]),
        EmControls.from_mapping(manifest.controls),
        level,
    )
    write_frame(sweep_frame(rows), out / "sweep.csv")
    write_frame(sweep_summary_frame(rows), out / "sweep_summary.csv")
    failed = [r.classes for r in rows if r.failed]
    click.echo(f"Swept {plural(len(rows)):class count}.")
    if failed:
        click.echo(f"Warning: rows with {failed} classes failed; see sweep_summary.csv.", err=True)


def run_simulate(manifest: RunManifest) -> None:
    out = Path(manifest.output)
    truth = load_truth(Path(manifest.config))
    ds, labels = simulate_population(truth)
    write_dataset(ds, out)
    write_labels(labels, out / "labels.csv")
    click.echo(
        f"Wrote {plural(len(ds.households)):household}, {plural(len(ds.persons)):person} "
        f"and {plural(len(ds.tours)):tour}."
    )


def run_analyze(manifest: RunManifest) -> None:
    out = Path(manifest.output)
    fit_dir = Path(manifest.data)
    source = RunManifest.read(fit_dir)
    if source.command != "estimate":
        raise ReportError(f"{fit_dir} holds a {source.command!r} run, not an estimation.")
    model = _load_model(Path(source.config), Path(source.data))
    pipeline, estimates = load_estimates(fit_dir / REPORT_NAME)
    method = ElasticityMethod(manifest.options.get("method", "enumeration"))

    layout = model.layout if pipeline == "three_step" else sub_model_layout(model.spec, SubModel(pipeline))
    missing = [n for n in layout.names if n not in estimates]
    if missing:
        raise ReportError(f"Report lacks {plural(len(missing)):parameter}: {', '.join(missing[:5])}.")
    theta = np.array([estimates[n] for n in layout.names])
    params = layout.unpack(theta)

    household = person = None
    if pipeline == "three_step":
        posteriors = model.posteriors(theta)
        household, person = posteriors.household, posteriors.person
    elif pipeline == SubModel.mode_lccm.value:
        person = model.sub_model_posterior(SubModel.mode_lccm, params)
    else:
        household = model.sub_model_posterior(SubModel.neighbourhood_lccm, params)

    write_frame(profiles_frame(class_profiles(model, household, person)), out / "profiles.csv")
    written = ["profiles.csv"]
    if person is not None:
        write_frame(elasticity_frame(model, params, person, method), out / "elasticities.csv")
        write_frame(value_of_time_frame(model.spec, params), out / "value_of_time.csv")
        written += ["elasticities.csv", "value_of_time.csv"]
    if household is not None:
        write_frame(surface_frame(model, params), out / "surface.csv")
        written.append("surface.csv")
    click.echo(f"Wrote {', '.join(written)}.")


RUNNERS: Dict[str, Callable[[RunManifest], None]] = {
    "estimate": run_estimate,
    "sweep": run_sweep,
    "simulate": run_simulate,
    "analyze": run_analyze,
}


def execute(manifest: RunManifest) -> None:
    """Writes the manifest, then runs it with logging into the output directory."""
    if manifest.command not in RUNNERS:
        raise ReportError(f"Unknown command {manifest.command!r} in manifest.")
    out = Path(manifest.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest.write(out)
    with setup_logging(out):
        logging.getLogger(__name__).info("Running %s (modality %s).", manifest.command, __version__)
        RUNNERS[manifest.command](manifest)


def _run(manifest_factory: Callable[[], RunManifest]) -> None:
    try:
        execute(manifest_factory())
    except ERRORS as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(-1)


def _path(value) -> str:
    return str(Path(value).resolve())


@click.group(options_metavar="[options]")
@click.option("--threads", type=int, default=None, help="worker threads (1 = reproducible)")
@click.version_option(__version__, prog_name="modality")
@click.pass_context
def main(ctx, threads):
    """Estimates hierarchical latent class models of neighbourhood and mode choice."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads


@main.command(short_help="runs the three-step estimation", options_metavar="[options]")
@click.option("--config", "config", type=click.Path(path_type=Path), required=True)
@click.option("--data", "data", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--starts", type=int, default=None)
@click.option(
    "--sub-model",
    type=click.Choice(["all", SubModel.mode_lccm.value, SubModel.neighbourhood_lccm.value]),
    default="all",
    show_default=True,
)
@click.pass_context
def estimate(ctx, config, data, out, seed, starts, sub_model):
    """Fits the mode model, the neighbourhood model and the conditional membership."""

    def manifest():
        controls = _controls(config, seed, starts, ctx.obj["threads"])
        return RunManifest(
            command="estimate",
            output=_path(out),
            version=__version__,
            config=_path(config),
            data=_path(data),
            seed=controls.seed,
            controls=controls.to_mapping(),
            options={"sub_model": sub_model},
        )

    _run(manifest)


@main.command(short_help="fits a range of class counts", options_metavar="[options]")
@click.option("--config", "config", type=click.Path(path_type=Path), required=True)
@click.option("--data", "data", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out", type=click.Path(path_type=Path), required=True)
@click.option("--classes", default="1-5", show_default=True, help="e.g. 1-5 or 1,2,4")
@click.option(
    "--level",
    type=click.Choice([SubModel.mode_lccm.value, SubModel.neighbourhood_lccm.value]),
    default=SubModel.mode_lccm.value,
    show_default=True,
)
@click.option("--seed", type=int, default=None)
@click.option("--starts", type=int, default=None)
@click.pass_context
def sweep(ctx, config, data, out, classes, level, seed, starts):
    """Writes a fit-statistics table with one row per class count."""

    def manifest():
        _parse_classes(classes)
        controls = _controls(config, seed, starts, ctx.obj["threads"])
        return RunManifest(
            command="sweep",
            output=_path(out),
            version=__version__,
            config=_path(config),
            data=_path(data),
            seed=controls.seed,
            controls=controls.to_mapping(),
            options={"classes": classes, "level": level},
        )

    _run(manifest)


@main.command(short_help="generates a synthetic population", options_metavar="[options]")
@click.option("--truth", "truth", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out", type=click.Path(path_type=Path), required=True)
def simulate(truth, out):
    """Draws households, members and tours from known parameters."""

    def manifest():
        return RunManifest(
            command="simulate",
            output=_path(out),
            version=__version__,
            config=_path(truth),
            seed=load_truth(truth).seed,
        )

    _run(manifest)


@main.command(short_help="post-estimation tables", options_metavar="[options]")
@click.option("--fit", "fit", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out", type=click.Path(path_type=Path), required=True)
@click.option(
    "--method",
    type=click.Choice([m.value for m in ElasticityMethod]),
    default=ElasticityMethod.enumeration.value,
    show_default=True,
)
def analyze(fit, out, method):
    """Class profiles, elasticities, values of time and neighbourhood surfaces."""

    def manifest():
        return RunManifest(
            command="analyze",
            output=_path(out),
            version=__version__,
            data=_path(fit),
            options={"method": method},
        )

    _run(manifest)


@main.command(short_help="re-runs a recorded manifest")
@click.argument("manifest_path", metavar="MANIFEST", type=click.Path(path_type=Path))
def replay(manifest_path):
    """Re-runs a manifest into its recorded output directory."""
    _run(lambda: RunManifest.read(manifest_path))


if __name__ == "__main__":
    main()
