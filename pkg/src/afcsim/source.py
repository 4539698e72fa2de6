"""Pulsed photon-pair source with tunable multiphoton statistics.

Each pump pulse (one mode window) emits pairs into a signal and an
idler channel. The joint photon-number distribution is a compound
Poisson mixture chosen to reproduce the two measured correlation laws
simultaneously:

* cross-correlation g_si = 1 + 1/mu  (pair bunching across channels)
* unheralded autocorrelation g_ss = 1 + 1/K  (thermal bunching diluted
  by K effective spectral modes)

Per window the model draws independent Poisson counts of single pairs
(mean mu - 2 mu^2/K), double-pair clusters (mean mu^2/(2K)), and
unpaired siblings per channel (mean mu^2/K, partner lost to the other
cluster order). Channel means are exactly mu. Both laws above hold
exactly; validity requires mu <= min(1, K/2).

Times inside a window are in ps relative to the trial start; the trial
index is carried separately so the detector stage can lay trials onto
the wall clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from afcsim.records import FLAG_NOISE, FLAG_UNPAIRED

# Trials are sampled in fixed-size chunks, each with its own counter-mode
# generator seeded by (seed, stage, chunk). Workers can split chunk ranges
# arbitrarily and still produce byte-identical streams.
RNG_STAGE_SOURCE = 1

EMISSION_DTYPE = np.dtype(
    [
        ("time_ps", "<i8"),
        ("train", "<u4"),
        ("mode", "<u2"),
        ("channel", "<u1"),
        ("flags", "<u1"),
        ("pair_id", "<i8"),
    ]
)


@dataclass(frozen=True)
class SourceConfig:
    """Pump and emission parameters for one run.

    mean_pairs is the pair number per mode window; schmidt_modes the
    effective spectral mode count K. Noise means are unpaired background
    photons per window at the source reference plane (they see the same
    channel efficiency as pairs but bypass the storage filter).
    noise_delay_ps displaces the signal-channel background window; recall
    configurations observe background in the delayed echo windows, and
    that is where its level is specified.
    """

    mean_pairs: float
    schmidt_modes: float = 1.0
    modes: int = 1
    mode_spacing_ps: int = 600
    emission_jitter_fwhm_ps: float = 300.0
    noise_mean_signal: float = 0.0
    noise_mean_idler: float = 0.0
    noise_delay_ps: int = 0
    kind: str = "pairs"

    def __post_init__(self):
        if self.kind not in ("pairs", "coherent"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.schmidt_modes < 1.0:
            raise ValueError("schmidt_modes must be >= 1")
        limit = min(1.0, self.schmidt_modes / 2.0)
        if self.kind == "pairs" and not 0 < self.mean_pairs <= limit:
            raise ValueError(
                f"mean_pairs {self.mean_pairs} outside (0, {limit}]; "
                "the cluster decomposition needs mu <= min(1, K/2)"
            )
        if self.modes < 1 or self.mode_spacing_ps <= 0:
            raise ValueError("need at least one mode window of positive width")
        if self.noise_mean_signal < 0 or self.noise_mean_idler < 0:
            raise ValueError("noise means must be nonnegative")

    @property
    def cluster_means(self):
        """Poisson means (singles, doubles, siblings-per-channel)."""
        mu, k = self.mean_pairs, self.schmidt_modes
        return mu - 2 * mu**2 / k, mu**2 / (2 * k), mu**2 / k

    def train_span_ps(self):
        return self.modes * self.mode_spacing_ps


CHUNK_CELL_BUDGET = 1 << 20


def chunk_trains(config):
    """Trials per RNG chunk; depends only on the config, not on workers."""
    return max(1, CHUNK_CELL_BUDGET // config.modes)


def _chunk_rng(seed, stage, chunk_index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, stage, chunk_index))))


def _truncated_normal(rng, sigma, size):
    """Gaussian samples rejected outside +-3 sigma (keeps window bleed bounded)."""
    out = rng.standard_normal(size) * sigma
    bad = np.abs(out) > 3.0 * sigma
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum())) * sigma
        bad = np.abs(out) > 3.0 * sigma
    return out


def _cell_events(config, rng, counts, jitter, pair_base):
    """Expand per-cell pair counts into mirrored signal/idler events."""
    cells = np.flatnonzero(counts)
    if len(cells) == 0:
        return []
    reps = counts[cells]
    cell_idx = np.repeat(cells, reps)
    n = len(cell_idx)
    half = config.mode_spacing_ps / 2.0
    t = (cell_idx % config.modes) * config.mode_spacing_ps + half
    if jitter:
        sigma = config.emission_jitter_fwhm_ps / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        t = t + _truncated_normal(rng, sigma, n)
    return [cell_idx, np.rint(t).astype(np.int64), pair_base + np.arange(n, dtype=np.int64)]


def _fill(arr, sl, cell_idx, t, train0, modes, channel, flags, pair_id):
    arr["time_ps"][sl] = t
    arr["train"][sl] = train0 + cell_idx // modes
    arr["mode"][sl] = cell_idx % modes
    arr["channel"][sl] = channel
    arr["flags"][sl] = flags
    arr["pair_id"][sl] = pair_id


def _sample_chunk(config, seed, chunk_index, train0, n_trains):
    rng = _chunk_rng(seed, RNG_STAGE_SOURCE, chunk_index)
    modes = config.modes
    cells = n_trains * modes
    spacing = config.mode_spacing_ps

    blocks = []

    if config.kind == "coherent":
        for channel in (0, 1):
            counts = rng.poisson(config.mean_pairs, cells)
            ev = _cell_events(config, rng, counts, jitter=True, pair_base=0)
            if ev:
                ci, t, _ = ev
                blocks.append((ci, t, channel, 0, np.full(len(ci), -1, dtype=np.int64)))
    else:
        m_single, m_double, m_sibling = config.cluster_means
        pair_base = np.int64(chunk_index) << 28

        singles = rng.poisson(m_single, cells)
        doubles = rng.poisson(m_double, cells)
        # a double cluster is two pairs in one window, sampled independently
        pairs = singles + 2 * doubles
        ev = _cell_events(config, rng, pairs, jitter=True, pair_base=pair_base)
        if ev:
            ci, t, pid = ev
            blocks.append((ci, t, 0, 0, pid))
            blocks.append((ci, t, 1, 0, pid))

        for channel in (0, 1):
            sib = rng.poisson(m_sibling, cells)
            ev = _cell_events(config, rng, sib, jitter=True, pair_base=0)
            if ev:
                ci, t, _ = ev
                blocks.append((ci, t, channel, FLAG_UNPAIRED, np.full(len(ci), -1, dtype=np.int64)))

    for channel, mean, delay in (
        (0, config.noise_mean_signal, config.noise_delay_ps),
        (1, config.noise_mean_idler, 0),
    ):
        if mean <= 0:
            continue
        counts = rng.poisson(mean, cells)
        idx = np.flatnonzero(counts)
        if len(idx) == 0:
            continue
        ci = np.repeat(idx, counts[idx])
        t = (ci % modes) * spacing + delay + np.floor(rng.random(len(ci)) * spacing).astype(np.int64)
        blocks.append((ci, t, channel, FLAG_NOISE, np.full(len(ci), -1, dtype=np.int64)))

    total = sum(len(b[0]) for b in blocks)
    out = np.empty(total, dtype=EMISSION_DTYPE)
    pos = 0
    for ci, t, channel, flags, pid in blocks:
        sl = slice(pos, pos + len(ci))
        _fill(out, sl, ci, t, train0, modes, channel, flags, pid)
        pos += len(ci)
    order = np.lexsort((out["time_ps"], out["train"]))
    return out[order]


def sample_emissions(config, n_trains, seed, start_train=0):
    """Draw all source photons for ``n_trains`` trials.

    Returns a structured array (EMISSION_DTYPE) sorted by trial then
    time-in-trial. Chunk boundaries are fixed by the absolute trial
    index, so any partition of the trial range reproduces the same
    events; pair_id links the two photons of each pair and is -1 for
    unpaired light.
    """
    if n_trains <= 0:
        raise ValueError("need a positive number of trials")
    per_chunk = chunk_trains(config)
    first = start_train // per_chunk
    last = (start_train + n_trains - 1) // per_chunk
    parts = []
    for chunk in range(first, last + 1):
        lo = max(chunk * per_chunk, start_train)
        hi = min((chunk + 1) * per_chunk, start_train + n_trains)
        if lo >= hi:
            continue
        if lo != chunk * per_chunk or hi != (chunk + 1) * per_chunk:
            # partial chunk: sample it whole, keep the requested slice
            full = _sample_chunk(config, seed, chunk, chunk * per_chunk, per_chunk)
            keep = (full["train"] >= lo) & (full["train"] < hi)
            parts.append(full[keep])
        else:
            parts.append(_sample_chunk(config, seed, chunk, lo, hi - lo))
    return np.concatenate(parts) if parts else np.empty(0, dtype=EMISSION_DTYPE)


def theoretical_g2(mean_pairs, schmidt_modes, noise_fraction_signal=0.0, noise_fraction_idler=0.0):
    """Expected cross-correlation between signal and idler windows.

    1 + (1-nu_s)(1-nu_i) (1/mu + mu/(K(1+mu))): the pair term dominates
    at low mu; the K-dependent term carries the multiphoton floor and
    takes the noiseless value to 1 + 1/K as mu grows. Uncorrelated
    background dilutes the excess by the product of the signal fractions.
    """
    mu, k = mean_pairs, schmidt_modes
    if mu <= 0:
        raise ValueError("mean_pairs must be positive")
    clean = 1.0 / mu + mu / (k * (1.0 + mu))
    return 1.0 + (1.0 - noise_fraction_signal) * (1.0 - noise_fraction_idler) * clean


def click_probabilities(config, eta_signal, eta_idler):
    """Exact per-window click probabilities (p_s, p_i, p_si).

    Uses the factorial-moment generating function of the cluster model
    with independent thinning by the channel efficiencies; noise means
    are thinned the same way. Exact at all mu, including saturation.
    """
    if config.kind == "coherent":
        lam = config.mean_pairs
        p_s = 1.0 - math.exp(-(lam + config.noise_mean_signal) * eta_signal)
        p_i = 1.0 - math.exp(-(lam + config.noise_mean_idler) * eta_idler)
        return p_s, p_i, p_s * p_i

    m1, m2, mb = config.cluster_means
    w_s, w_i = config.noise_mean_signal, config.noise_mean_idler

    def log_g(z_s, z_i):
        return (
            m1 * (z_s * z_i - 1.0)
            + m2 * (z_s**2 * z_i**2 - 1.0)
            + (mb + w_s) * (z_s - 1.0)
            + (mb + w_i) * (z_i - 1.0)
        )

    a_s, a_i = 1.0 - eta_signal, 1.0 - eta_idler
    g_s = math.exp(log_g(a_s, 1.0))
    g_i = math.exp(log_g(1.0, a_i))
    g_si = math.exp(log_g(a_s, a_i))
    return 1.0 - g_s, 1.0 - g_i, 1.0 - g_s - g_i + g_si


def click_g2(config, eta_signal, eta_idler):
    """Cross-correlation of the binary click record (what a counter sees)."""
    p_s, p_i, p_si = click_probabilities(config, eta_signal, eta_idler)
    return p_si / (p_s * p_i)


def noise_means_for_fractions(config, nu_signal, nu_idler):
    """Source noise means making background the given detected fraction.

    Pairs and background share the channel efficiency, so the detected
    fraction equals the emission fraction: w = nu/(1-nu) * mu.
    """
    if not (0 <= nu_signal < 1 and 0 <= nu_idler < 1):
        raise ValueError("noise fractions must be in [0, 1)")
    mu = config.mean_pairs
    return replace(
        config,
        noise_mean_signal=nu_signal / (1.0 - nu_signal) * mu,
        noise_mean_idler=nu_idler / (1.0 - nu_idler) * mu,
    )


def predict_rates(config, eta_signal, eta_idler, timing):
    """Detected singles and pair-coincidence rates in Hz.

    Multiplies per-window means by the trial rate and the duty fraction
    of the storage periods within the macro cycle.
    """
    trials_hz = timing.duty * 1e12 / timing.clock_period_ps
    windows_hz = trials_hz * config.modes
    mu = config.mean_pairs
    return {
        "signal_singles_hz": windows_hz * (mu + config.noise_mean_signal) * eta_signal,
        "idler_singles_hz": windows_hz * (mu + config.noise_mean_idler) * eta_idler,
        "pair_coincidences_hz": windows_hz * mu * eta_signal * eta_idler,
    }
