"""Command-line entry points.

Subcommands: simulate, analyze, design-afc, fit, sweep. Exit codes:
0 success, 2 configuration error, 3 numerical non-convergence.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from afcsim import __version__, analysis, comb, pipeline, records, reporting, source
from afcsim.config import ExperimentConfig, load_config
from afcsim.fitting import MODELS, FitError, fit_nonlinear

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fail_config(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_CONFIG)


def _seed_from_label(label):
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")


def _clean(value):
    """JSON-safe numbers: nonfinite floats become null."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_config(config_path, scenario):
    if (config_path is None) == (scenario is None):
        _fail_config("give exactly one of --config or --scenario")
    if config_path is not None:
        try:
            cfg = load_config(config_path)
        except (OSError, ValueError) as exc:
            _fail_config(f"cannot load {config_path}: {exc}")
        label = Path(config_path).stem
    else:
        try:
            cfg = pipeline.preset(scenario)
        except KeyError as exc:
            _fail_config(str(exc))
        label = scenario
    problems = cfg.validate()
    if problems:
        _fail_config("invalid configuration:\n  " + "\n  ".join(problems))
    for note in cfg.warnings():
        click.echo(f"warning: {note}", err=True)
    return cfg, label


@click.group()
@click.version_option(version=__version__)
def main():
    """Simulate and analyze a multimode photon-storage counting experiment."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", type=click.Choice(pipeline.PRESET_NAMES))
@click.option("--trials", type=int, default=None, help="Number of clock trials.")
@click.option("--seconds", type=float, default=None,
              help="Equivalent wall-clock integration time; overrides --trials.")
@click.option("--seed", type=int, default=None, help="Default: derived from the run label.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=int, default=1)
@click.option("--dry-run", is_flag=True, help="Validate and print predicted rates only.")
def simulate(config_path, scenario, trials, seconds, seed, out_dir, workers, dry_run):
    """Run the source -> storage -> detection chain; write timestamp files."""
    cfg, label = _resolve_config(config_path, scenario)
    if seed is None:
        seed = _seed_from_label(label)
    spec = pipeline.build_spec(cfg, seed)
    if seconds is not None:
        trials = int(seconds * spec.timing.duty * 1e12 / cfg.clock_period_ps)
    if trials is None:
        trials = 1_000_000
    if trials <= 0:
        _fail_config("--trials must be positive")

    eta_s = cfg.signal_efficiency * (spec.memory.recall_prob if spec.memory else 1.0)
    rates = source.predict_rates(spec.source, eta_s, cfg.idler_efficiency, spec.timing)
    if dry_run:
        click.echo(f"config ok: {label}, {trials} trials, seed {seed}")
        for key, val in rates.items():
            click.echo(f"  predicted {key}: {val:.2f}")
        return

    if out_dir is None:
        _fail_config("--out is required unless --dry-run")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        click.echo(f"error: output directory not writable: {exc}", err=True)
        sys.exit(1)

    run = pipeline.run_experiment(cfg, trials, seed, workers=workers)
    config_text = cfg.to_ini()
    (out / "config.cfg").write_text(config_text)

    files = {}
    counts = {}
    for name, rec in run.records.items():
        fname = f"timestamps_{name}.bin"
        files[fname] = reporting.write_timestamps_with_hash(out / fname, rec)
        counts[name] = len(rec)

    manifest = {
        "version": __version__,
        "label": label,
        "seed": seed,
        "trials": trials,
        "workers_used": workers,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "detector_counts": counts,
        "files": files,
        "predicted_rates_hz": rates,
    }
    _write_json(out / "manifest.json", manifest)
    click.echo(f"wrote {len(files)} timestamp files to {out} ({sum(counts.values())} clicks)")


def _load_run(run_dir):
    out = Path(run_dir)
    manifest_path = out / "manifest.json"
    config_path = out / "config.cfg"
    if not manifest_path.exists() or not config_path.exists():
        _fail_config(f"{run_dir} is not a simulate output (missing manifest.json/config.cfg)")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = load_config(config_path)
    recs = {}
    for fname in manifest["files"]:
        name = fname.removeprefix("timestamps_").removesuffix(".bin")
        recs[name] = records.read_timestamps(out / fname)
    return cfg, manifest, recs


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Default: the run directory.")
@click.option("--matrix/--no-matrix", "do_matrix", default=None,
              help="Default: on for multimode two-detector runs.")
@click.option("--bin-ps", type=int, default=10)
@click.option("--span-ps", type=int, default=600)
def analyze(run_dir, out_dir, do_matrix, bin_ps, span_ps):
    """Re-run the estimators on persisted timestamp streams."""
    cfg, manifest, recs = _load_run(run_dir)
    out = Path(out_dir) if out_dir else Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    windows = pipeline.windowings(cfg)
    n_trials = manifest["trials"]
    delay = int(round(cfg.storage_time_ns * 1e3)) if cfg.memory_enabled else 0

    report = {
        "version": __version__,
        "config_sha256": manifest["config_sha256"],
        "input_sha256": manifest["files"],
        "trials": n_trials,
        "estimates": [],
    }

    def times(name):
        return recs[name]["time_ps"].astype(np.int64)

    if cfg.split_signal:
        her = analysis.heralded_autocorrelation(
            times("idler"), times("arm1"), times("arm2"),
            windows["idler"], windows["arm1"], n_trials)
        unher = analysis.unheralded_autocorrelation(
            times("arm1"), times("arm2"), windows["arm1"], n_trials)
        report["estimates"].append(reporting.correlation_payload("heralded_autocorrelation", her))
        report["estimates"].append(
            reporting.correlation_payload("unheralded_autocorrelation", unher))
        hist_a, hist_b = times("idler"), times("arm1")
    else:
        cross = analysis.cross_correlation(
            times("signal"), times("idler"), windows["signal"], windows["idler"], n_trials)
        report["estimates"].append(reporting.correlation_payload("cross_correlation", cross))
        report["coincidences_per_trial"] = cross.coincidences / n_trials
        if cross.per_mode_coincidences is not None and cfg.modes > 1:
            reporting.write_per_mode_csv(out / "per_mode.csv", cross.per_mode_coincidences)
            reporting.mode_rate_figure(cross.per_mode_coincidences, out / "per_mode.png")
        hist_a, hist_b = times("idler"), times("signal")

    centers, counts = analysis.coincidence_histogram(
        hist_a, hist_b, bin_ps=bin_ps, span_ps=span_ps, expected_delay_ps=delay)
    reporting.write_histogram_csv(out / "histogram.csv", centers, counts)
    reporting.histogram_figure(centers, counts, out / "histogram.png",
                               title=f"delays around {delay} ps")
    report["histogram"] = {
        "expected_delay_ps": delay,
        "bin_ps": bin_ps,
        "span_ps": span_ps,
        "total": int(counts.sum()),
    }

    if do_matrix is None:
        do_matrix = (not cfg.split_signal) and cfg.modes > 1
    if do_matrix:
        if cfg.split_signal or cfg.modes < 2:
            _fail_config("--matrix needs a multimode two-detector run")
        mat = pipeline.matrix_result(
            pipeline.RunResult(cfg, n_trials, manifest["seed"], recs, windows))
        reporting.write_matrix_csv(out / "matrix.csv", mat.matrix)
        reporting.matrix_figure(mat, out / "matrix.png")
        report["mode_matrix"] = {
            "diag_mean": mat.diag_mean,
            "diag_err": mat.diag_err,
            "offdiag_mean": mat.offdiag_mean,
            "offdiag_err": mat.offdiag_err,
            "n_modes": mat.n_modes,
        }

    _write_json(out / "analysis.json", report)
    click.echo(f"analysis written to {out}")


@main.command("design-afc")
@click.option("--storage-ns", type=float, required=True)
@click.option("--bandwidth-ghz", type=float, default=4.0)
@click.option("--field-gauss", type=float, default=13000.0)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def design_afc(storage_ns, bandwidth_ghz, field_gauss, out_dir):
    """Comb geometry and side-hole alignment for a storage target."""
    try:
        design = comb.design_afc(storage_ns, bandwidth_ghz, field_gauss)
    except ValueError as exc:
        _fail_config(str(exc))
    click.echo(f"storage {design.storage_time_ns:g} ns -> tooth spacing "
               f"{design.spacing_delta_mhz:g} MHz")
    click.echo(f"teeth in band: {design.n_teeth}")
    click.echo(f"time-bandwidth product: {design.time_bandwidth_product:g}")
    for name, hole in design.side_holes.items():
        verdict = "transparency-aligned" if hole["aligned"] else "misaligned (hits teeth)"
        click.echo(
            f"side hole {name}: {hole['detuning_mhz']:.2f} MHz = "
            f"{hole['spacing_ratio']:.2f} x spacing -> {verdict}"
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "storage_time_ns": design.storage_time_ns,
            "spacing_delta_mhz": design.spacing_delta_mhz,
            "n_teeth": design.n_teeth,
            "time_bandwidth_product": design.time_bandwidth_product,
            "field_gauss": design.field_gauss,
            "side_holes": design.side_holes,
        }
        _write_json(out / "design.json", payload)
        pars = comb.calibrated_comb_defaults(storage_ns)
        pars["bandwidth_ghz"] = bandwidth_ghz
        profile = comb.build_comb_profile(**pars)
        profile.save(out / "comb_profile.csv")
        reporting.comb_figure(profile, out / "comb_profile.png")
        resp = comb.echo_response(comb.transfer_function(profile))
        reporting.echo_figure(resp, out / "echo_response.png")
        click.echo(f"design files written to {out}")


@main.command()
@click.option("--model", type=click.Choice(sorted(MODELS)), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="CSV with columns x,y[,sigma].")
@click.option("--p0", required=True, help="Comma-separated starting parameters.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--logy", is_flag=True)
def fit(model, data_path, p0, out_dir, logy):
    """Weighted nonlinear fit of a named model to a CSV table."""
    try:
        x, y, sigma = records.read_xy_table(data_path)
        start = [float(v) for v in p0.split(",")]
    except ValueError as exc:
        _fail_config(str(exc))
    try:
        result = fit_nonlinear(model, x, y, start, sigma=sigma)
    except ValueError as exc:
        _fail_config(str(exc))
    except FitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    for name_v in zip(result.params, result.perr):
        click.echo(f"  param: {name_v[0]:.6g} +- {name_v[1]:.3g}")
    click.echo(f"chi2/ndof = {result.chi2:.4g}/{result.ndof}  ({result.n_iter} iterations)")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "fit.json", {
            "model": model,
            "params": list(result.params),
            "perr": list(result.perr),
            "cov": [list(row) for row in result.cov],
            "chi2": result.chi2,
            "ndof": result.ndof,
            "n_iter": result.n_iter,
        })
        reporting.fit_figure(x, y, sigma, result, out / "fit.png", logy=logy)
        click.echo(f"fit files written to {out}")


@main.command()
@click.option("--param", type=click.Choice(["storage_time_ns", "mean_pairs"]), required=True)
@click.option("--values", required=True, help="Comma-separated parameter values.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", type=click.Choice(pipeline.PRESET_NAMES))
@click.option("--trials", type=int, default=200_000)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--workers", type=int, default=1)
def sweep(param, values, config_path, scenario, trials, seed, out_dir, workers):
    """Scan one parameter; write a CSV table and a figure."""
    if config_path is None and scenario is None:
        scenario = "single_after" if param == "storage_time_ns" else "pair_law"
    cfg, label = _resolve_config(config_path, scenario)
    if seed is None:
        seed = _seed_from_label(label + ":" + param)
    try:
        points = [float(v) for v in values.split(",")]
    except ValueError:
        _fail_config("--values must be comma-separated numbers")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    if param == "storage_time_ns":
        if not cfg.memory_enabled:
            _fail_config("storage sweep needs a memory-enabled configuration")
        base = cfg.replace(memory_enabled=False)
        run_b = pipeline.run_experiment(base, trials, seed, workers=workers)
        before = pipeline.cross_result(run_b)
        for t_ns in points:
            pars = comb.calibrated_comb_defaults(t_ns)
            profile = comb.build_comb_profile(**pars)
            resp = comb.echo_response(comb.transfer_function(profile))
            raw = resp.energy_fractions()["echo1"]
            point_cfg = cfg.replace(
                storage_time_ns=t_ns,
                internal_efficiency=raw * comb.SIDE_STRUCTURE_PENALTY,
            )
            run_a = pipeline.run_experiment(point_cfg, trials, seed + 1, workers=workers)
            after = pipeline.cross_result(run_a)
            est = analysis.extract_efficiencies(
                before, after, trials, trials,
                eta_t=cfg.path_transmission, overlap=cfg.filter_overlap)
            rows.append((t_ns, est.system_efficiency, est.system_err,
                         est.internal_from_chain, est.internal_from_heralding))
        header = ("storage_ns,system_efficiency,system_err,"
                  "internal_from_chain,internal_from_heralding")
        ylabel = "system efficiency"
    else:
        for mu in points:
            point_cfg = cfg.replace(mean_pairs=mu)
            problems = point_cfg.validate()
            if problems:
                _fail_config("; ".join(problems))
            run = pipeline.run_experiment(point_cfg, trials, seed, workers=workers)
            res = pipeline.cross_result(run)
            rows.append((mu, res.value, res.err))
        header = "mean_pairs,cross_correlation,err"
        ylabel = "cross-correlation"

    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v!r}" for v in row) + "\n")
    xs = [r[0] for r in rows]
    reporting.sweep_figure(xs, [r[1] for r in rows], [r[2] for r in rows],
                           out / "sweep.png", xlabel=param, ylabel=ylabel)
    click.echo(f"sweep written to {out} ({len(rows)} points)")


if __name__ == "__main__":
    main()
