"""Figure and table rendering for runs and analyses.

Every plot has a delimited twin: figures are rendered straight to files
(no interactive backend) and the numbers behind them go to CSV next to
the image, so downstream tooling never has to scrape pixels.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from afcsim import records

FIG_DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def comb_figure(profile, path):
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.2))
    ghz = profile.detuning_grid / 1e3
    ax0.plot(ghz, profile.od, lw=0.4)
    ax0.set_xlabel("detuning (GHz)")
    ax0.set_ylabel("optical depth")
    ax0.set_title("prepared profile")
    zoom = np.abs(profile.detuning_grid) <= 3 * profile.spacing_delta
    ax1.plot(profile.detuning_grid[zoom], profile.od[zoom], lw=1.0)
    ax1.set_xlabel("detuning (MHz)")
    ax1.set_title(f"teeth: spacing {profile.spacing_delta:g} MHz, finesse {profile.finesse:g}")
    _save(fig, path)


def echo_figure(resp, path):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    t_ns = resp.time_ps / 1e3
    ax.semilogy(t_ns, np.abs(resp.input) ** 2 + 1e-12, label="input", lw=0.8)
    ax.semilogy(t_ns, np.abs(resp.output) ** 2 + 1e-12, label="response", lw=0.8)
    period_ns = 1e3 / resp.spacing_delta
    ax.set_xlim(0, resp.input_center_ps / 1e3 + 2.5 * period_ns)
    ax.set_xlabel("time (ns)")
    ax.set_ylabel("power (arb.)")
    ax.legend()
    _save(fig, path)


def histogram_figure(centers, counts, path, title=""):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.step(centers, counts, where="mid", lw=0.8)
    ax.set_xlabel("delay (ps)")
    ax.set_ylabel("coincidences")
    if title:
        ax.set_title(title)
    _save(fig, path)


def matrix_figure(result, path):
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    shown = np.where(np.isfinite(result.matrix), result.matrix, 0.0)
    im = ax.imshow(shown, origin="lower", cmap="viridis", interpolation="nearest")
    ax.set_xlabel("idler mode")
    ax.set_ylabel("signal mode")
    fig.colorbar(im, ax=ax, label="correlation")
    ax.set_title(
        f"diag {result.diag_mean:.2f}$\\pm${result.diag_err:.2f}, "
        f"off {result.offdiag_mean:.3f}$\\pm${result.offdiag_err:.3f}"
    )
    _save(fig, path)


def mode_rate_figure(per_mode, path):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(np.arange(len(per_mode)), per_mode, ".", ms=3)
    ax.set_xlabel("mode index")
    ax.set_ylabel("coincidences")
    ax.set_title("per-mode coincidences (dead-time droop)")
    _save(fig, path)


def fit_figure(x, y, sigma, fit, path, logy=False, xlabel="x", ylabel="y"):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.errorbar(x, y, yerr=sigma, fmt=".", ms=4, lw=0.8, capsize=2, label="data")
    xs = np.linspace(min(x), max(x), 400)
    ax.plot(xs, fit.predict(xs), "-", lw=1.0, label=fit.model)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)


def sweep_figure(xs, ys, errs, path, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.errorbar(xs, ys, yerr=errs, fmt="o-", ms=4, lw=0.9, capsize=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    _save(fig, path)


def correlation_payload(name, result):
    """JSON-ready summary of one correlation estimate."""
    return {
        "estimator": name,
        "value": result.value,
        "error": result.err,
        "coincidences": int(result.coincidences),
        "singles_a": int(result.singles_a),
        "singles_b": int(result.singles_b),
        "n_windows": int(result.n_windows),
    }


def write_histogram_csv(path, centers, counts):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("delay_ps,count\n")
        for c, n in zip(centers, counts):
            fh.write(f"{c!r},{int(n)}\n")


def write_per_mode_csv(path, per_mode):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mode,coincidences\n")
        for m, n in enumerate(per_mode):
            fh.write(f"{m},{int(n)}\n")


def write_matrix_csv(path, matrix):
    np.savetxt(path, matrix, delimiter=",", fmt="%.6g")


def write_timestamps_with_hash(path, rec):
    records.write_timestamps(path, rec)
    return records.sha256_file(path)
