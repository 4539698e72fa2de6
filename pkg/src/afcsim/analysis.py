"""Correlation estimators over windowed timestamp streams.

All estimators work on window occupations: a trial contains n mode
windows per channel, and a click belongs to window (trial, mode) when
its absolute time falls inside that window. Cross-channel windows are
matched by their global index trial * n + mode, which lets the signal
windows sit at the storage delay while idler windows stay on the
emission train.

The mode matrix additionally conditions on detector livetime. A window
counts only when its detector was provably live at the window start
(no click within one dead time before it); the dead intervals are known
exactly from the recorded click stream, so the correction is a
selection, not a model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class Windowing:
    """Tiling of the trial timeline into analysis windows."""

    period_ps: int
    n_windows: int
    spacing_ps: int
    offset_ps: int = 0
    width_ps: int | None = None

    def __post_init__(self):
        if self.period_ps <= 0 or self.n_windows < 1 or self.spacing_ps <= 0:
            raise ValueError("window geometry must be positive")
        width = self.spacing_ps if self.width_ps is None else self.width_ps
        if not 0 < width <= self.spacing_ps:
            raise ValueError("window width must be in (0, spacing]")
        if self.offset_ps < 0 or self.offset_ps + self.n_windows * self.spacing_ps > self.period_ps:
            raise ValueError("windows must fit inside the trial period")

    @property
    def width(self):
        return self.spacing_ps if self.width_ps is None else self.width_ps

    def assign(self, times_ps):
        """Global window ids for absolute times; invalid slots get id -1."""
        t = np.asarray(times_ps, dtype=np.int64)
        trial = t // self.period_ps
        local = t - trial * self.period_ps - self.offset_ps
        idx = np.floor_divide(local, self.spacing_ps)
        frac = local - idx * self.spacing_ps
        valid = (idx >= 0) & (idx < self.n_windows) & (frac < self.width) & (t >= 0)
        ids = np.where(valid, trial * self.n_windows + idx, -1)
        return ids, valid

    def start_of(self, trial, mode):
        return trial * self.period_ps + self.offset_ps + mode * self.spacing_ps


def occupied_windows(times_ps, windowing):
    """Sorted unique window ids holding at least one click."""
    ids, valid = windowing.assign(times_ps)
    return np.unique(ids[valid])


@dataclass(frozen=True)
class CorrelationResult:
    value: float
    err: float
    coincidences: int
    singles_a: int
    singles_b: int
    n_windows: int
    per_mode_coincidences: np.ndarray | None = None


def _counting_err(value, *counts):
    rel = sum(1.0 / c for c in counts if c > 0)
    return value * np.sqrt(rel)


def cross_correlation(times_signal, times_idler, win_signal, win_idler, n_trials):
    """Normalized same-window coincidence rate between the two channels.

    value = C * N / (S_s * S_i) with N the total number of window pairs;
    an uncorrelated pair of streams gives 1. The error is the usual
    uncorrelated counting propagation.
    """
    if win_signal.n_windows != win_idler.n_windows:
        raise ValueError("channel windowings must use the same mode count")
    ids_s = occupied_windows(times_signal, win_signal)
    ids_i = occupied_windows(times_idler, win_idler)
    both = np.intersect1d(ids_s, ids_i, assume_unique=True)
    n_windows = n_trials * win_signal.n_windows
    c_si, c_s, c_i = len(both), len(ids_s), len(ids_i)
    if c_si == 0 or c_s == 0 or c_i == 0:
        return CorrelationResult(float("nan"), float("nan"), c_si, c_s, c_i, n_windows)
    value = c_si * n_windows / (c_s * float(c_i))
    per_mode = np.bincount((both % win_signal.n_windows).astype(np.int64),
                           minlength=win_signal.n_windows)
    return CorrelationResult(
        value=float(value),
        err=float(_counting_err(value, c_si, c_s, c_i)),
        coincidences=c_si,
        singles_a=c_s,
        singles_b=c_i,
        n_windows=n_windows,
        per_mode_coincidences=per_mode,
    )


def heralded_autocorrelation(times_herald, times_arm1, times_arm2,
                             win_herald, win_arms, n_trials):
    """Conditional autocorrelation of the split channel.

    value = C_h12 * C_h / (C_h1 * C_h2); a perfect single-photon stream
    gives 0, coherent light 1.
    """
    h = occupied_windows(times_herald, win_herald)
    a1 = occupied_windows(times_arm1, win_arms)
    a2 = occupied_windows(times_arm2, win_arms)
    h1 = np.intersect1d(h, a1, assume_unique=True)
    h2 = np.intersect1d(h, a2, assume_unique=True)
    h12 = np.intersect1d(h1, h2, assume_unique=True)
    c_h, c_h1, c_h2, c_h12 = len(h), len(h1), len(h2), len(h12)
    if c_h == 0 or c_h1 == 0 or c_h2 == 0:
        return CorrelationResult(float("nan"), float("nan"), c_h12, c_h1, c_h2, c_h)
    value = c_h12 * c_h / (c_h1 * float(c_h2))
    err = _counting_err(value, c_h12, c_h1, c_h2, c_h) if c_h12 else float(
        1.0 * c_h / (c_h1 * float(c_h2))
    )
    return CorrelationResult(
        value=float(value),
        err=float(err),
        coincidences=c_h12,
        singles_a=c_h1,
        singles_b=c_h2,
        n_windows=c_h,
    )


def unheralded_autocorrelation(times_arm1, times_arm2, win_arms, n_trials):
    """Unconditional autocorrelation from the two splitter arms.

    Same-window coincidences over accidentals, with accidentals taken
    from windows one full trial apart (uncorrelated by construction).
    """
    a1 = occupied_windows(times_arm1, win_arms)
    a2 = occupied_windows(times_arm2, win_arms)
    same = len(np.intersect1d(a1, a2, assume_unique=True))
    shifted = len(np.intersect1d(a1, a2 + win_arms.n_windows, assume_unique=True))
    if same == 0 or shifted == 0:
        return CorrelationResult(float("nan"), float("nan"), same, len(a1), len(a2), shifted)
    value = same / float(shifted)
    return CorrelationResult(
        value=float(value),
        err=float(_counting_err(value, same, shifted)),
        coincidences=same,
        singles_a=len(a1),
        singles_b=len(a2),
        n_windows=shifted,
    )


def coincidence_histogram(times_a, times_b, bin_ps=10, span_ps=600, expected_delay_ps=0):
    """Histogram of arrival-time differences t_b - t_a - expected_delay.

    Lags are folded around the expected delay (the storage time for a
    recall run) and collected within +-span of it. Linear-merge pairing
    over the sorted streams; returns (lag centers, counts). Rejects
    unsorted input rather than silently mispairing.
    """
    a = np.asarray(times_a, dtype=np.int64) + np.int64(expected_delay_ps)
    b = np.asarray(times_b, dtype=np.int64)
    for name, arr in (("a", a), ("b", b)):
        if len(arr) > 1 and np.any(np.diff(arr) < 0):
            raise ValueError(f"times_{name} must be sorted ascending")
    edges = np.arange(-span_ps, span_ps + bin_ps, bin_ps, dtype=np.int64)
    lo = np.searchsorted(b, a - span_ps, side="left")
    hi = np.searchsorted(b, a + span_ps, side="right")
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    n_pairs = hi - lo
    have = np.flatnonzero(n_pairs)
    if len(have):
        anchor = np.repeat(a[have], n_pairs[have])
        partner_idx = np.concatenate([np.arange(lo[i], hi[i]) for i in have])
        diffs = b[partner_idx] - anchor
        counts += np.histogram(diffs, bins=edges)[0]
    centers = (edges[:-1] + edges[1:]) / 2.0
    return centers, counts


def dead_segments(click_times, windowing, dead_time_ps, n_trials):
    """Mode ranges whose window start falls in a dead interval.

    Each kept click at time t blinds window starts in (t, t + tau]. The
    non-paralyzable filter guarantees kept clicks are >= tau apart, so
    the segments are disjoint within a channel and form an exact
    indicator of dead windows. Returns (trial, mode_lo, mode_hi)
    inclusive, sorted by trial.
    """
    t = np.asarray(click_times, dtype=np.int64)
    tau = np.int64(dead_time_ps)
    period, off, sp = (np.int64(windowing.period_ps), np.int64(windowing.offset_ps),
                       np.int64(windowing.spacing_ps))
    trials, los, his = [], [], []
    base_trial = t // period
    for shift in (0, 1):
        tr = base_trial + shift
        rel = t - tr * period - off
        m_lo = np.maximum(np.floor_divide(rel, sp) + 1, 0)
        m_hi = np.minimum(np.floor_divide(rel + tau, sp), windowing.n_windows - 1)
        keep = (m_lo <= m_hi) & (tr >= 0) & (tr < n_trials)
        trials.append(tr[keep])
        los.append(m_lo[keep])
        his.append(m_hi[keep])
    tr = np.concatenate(trials)
    lo = np.concatenate(los)
    hi = np.concatenate(his)
    order = np.lexsort((lo, tr))
    return tr[order], lo[order], hi[order]


def live_window_clicks(click_times, windowing, dead_time_ps):
    """Window clicks whose window start was live.

    Returns (trial, mode, live) for each occupied window; live means no
    click in [start - tau, start), checked against the full click
    stream (darks and out-of-window clicks blind the detector too).
    """
    ids = occupied_windows(click_times, windowing)
    trial = ids // windowing.n_windows
    mode = ids % windowing.n_windows
    starts = windowing.start_of(trial, mode)
    t = np.asarray(click_times, dtype=np.int64)
    n_before = np.searchsorted(t, starts) - np.searchsorted(t, starts - dead_time_ps)
    return trial, mode, n_before == 0


@numba.njit(cache=True)
def _matrix_kernel(n_trials, n_modes, n_blocks,
                   sc_t, sc_m, sc_live, ic_t, ic_m, ic_live,
                   ss_t, ss_lo, ss_hi, is_t, is_lo, is_hi,
                   coinc, x_diff, y_diff, z_diff, block_stats):
    ps = pi = pss = pis = 0
    for t in range(n_trials):
        s0 = ps
        while ps < len(sc_t) and sc_t[ps] == t:
            ps += 1
        i0 = pi
        while pi < len(ic_t) and ic_t[pi] == t:
            pi += 1
        d0 = pss
        while pss < len(ss_t) and ss_t[pss] == t:
            pss += 1
        e0 = pis
        while pis < len(is_t) and is_t[pis] == t:
            pis += 1
        block = t * n_blocks // n_trials
        if ps == s0 and pi == i0 and pss == d0 and pis == e0:
            # no clicks, no dead windows: every window pair is live
            block_stats[block, 3] += n_modes
            block_stats[block, 7] += n_modes * n_modes - n_modes
            block_stats[block, 8] += n_modes
            block_stats[block, 9] += n_modes
            continue

        ds_len = 0
        for k in range(d0, pss):
            ds_len += ss_hi[k] - ss_lo[k] + 1
        di_len = 0
        for k in range(e0, pis):
            di_len += is_hi[k] - is_lo[k] + 1
        inter = 0
        for k in range(d0, pss):
            for j in range(e0, pis):
                lo = max(ss_lo[k], is_lo[j])
                hi = min(ss_hi[k], is_hi[j])
                if hi >= lo:
                    inter += hi - lo + 1

        # cross dead-dead rectangles for the pairwise livetime count
        for k in range(d0, pss):
            for j in range(e0, pis):
                x_diff[ss_lo[k], is_lo[j]] += 1.0
                x_diff[ss_lo[k], is_hi[j] + 1] -= 1.0
                x_diff[ss_hi[k] + 1, is_lo[j]] -= 1.0
                x_diff[ss_hi[k] + 1, is_hi[j] + 1] += 1.0

        n_slive = 0
        sd_diag = 0
        for k in range(s0, ps):
            if not sc_live[k]:
                continue
            n_slive += 1
            a = sc_m[k]
            live_i_here = True
            for j in range(e0, pis):
                y_diff[a, is_lo[j]] += 1.0
                y_diff[a, is_hi[j] + 1] -= 1.0
                if is_lo[j] <= a <= is_hi[j]:
                    live_i_here = False
            if live_i_here:
                sd_diag += 1

        n_ilive = 0
        id_diag = 0
        for k in range(i0, pi):
            if not ic_live[k]:
                continue
            n_ilive += 1
            b = ic_m[k]
            live_s_here = True
            for j in range(d0, pss):
                z_diff[ss_lo[j], b] += 1.0
                z_diff[ss_hi[j] + 1, b] -= 1.0
                if ss_lo[j] <= b <= ss_hi[j]:
                    live_s_here = False
            if live_s_here:
                id_diag += 1

        c_diag = 0
        for k in range(s0, ps):
            if not sc_live[k]:
                continue
            for j in range(i0, pi):
                if not ic_live[j]:
                    continue
                coinc[sc_m[k], ic_m[j]] += 1.0
                if sc_m[k] == ic_m[j]:
                    c_diag += 1

        n_diag = n_modes - ds_len - di_len + inter
        n_tot = (n_modes - ds_len) * (n_modes - di_len)
        s_tot = n_slive * (n_modes - di_len)
        i_tot = n_ilive * (n_modes - ds_len)
        c_tot = n_slive * n_ilive

        block_stats[block, 0] += c_diag
        block_stats[block, 1] += sd_diag
        block_stats[block, 2] += id_diag
        block_stats[block, 3] += n_diag
        block_stats[block, 4] += c_tot - c_diag
        block_stats[block, 5] += s_tot - sd_diag
        block_stats[block, 6] += i_tot - id_diag
        block_stats[block, 7] += n_tot - n_diag
        block_stats[block, 8] += n_modes - ds_len
        block_stats[block, 9] += n_modes - di_len


@dataclass(frozen=True)
class ModeMatrixResult:
    matrix: np.ndarray
    diag_mean: float
    diag_err: float
    offdiag_mean: float
    offdiag_err: float
    n_modes: int
    n_trials: int
    block_stats: np.ndarray


def _pooled(stats):
    c_d, s_d, i_d, n_d, c_o, s_o, i_o, n_o = stats[:8]
    diag = c_d * n_d / (s_d * i_d) if s_d > 0 and i_d > 0 else float("nan")
    off = c_o * n_o / (s_o * i_o) if s_o > 0 and i_o > 0 else float("nan")
    return diag, off


def mode_matrix(signal_records, idler_records, win_signal, win_idler,
                n_trials, dead_time_signal_ps, dead_time_idler_ps,
                n_blocks=100, n_bootstrap=1000, bootstrap_seed=0):
    """Livetime-conditioned cross-correlation between all mode pairs.

    Cell (a, b) estimates the correlation between signal window a and
    idler window b over trials where both windows were live. For an
    uncorrelated pair of modes the expectation is exactly 1; the
    diagonal carries the pair correlation. Pooled diagonal/off-diagonal
    values get errors from a block bootstrap over contiguous trial
    blocks (dead time correlates neighboring trials, so plain Poisson
    errors would be too small).
    """
    m = win_signal.n_windows
    if win_idler.n_windows != m:
        raise ValueError("channel windowings must use the same mode count")

    st = np.asarray(signal_records["time_ps"], dtype=np.int64)
    it = np.asarray(idler_records["time_ps"], dtype=np.int64)
    sc_t, sc_m, sc_live = live_window_clicks(st, win_signal, dead_time_signal_ps)
    ic_t, ic_m, ic_live = live_window_clicks(it, win_idler, dead_time_idler_ps)
    ss_t, ss_lo, ss_hi = dead_segments(st, win_signal, dead_time_signal_ps, n_trials)
    is_t, is_lo, is_hi = dead_segments(it, win_idler, dead_time_idler_ps, n_trials)

    coinc = np.zeros((m, m))
    x_diff = np.zeros((m + 1, m + 1))
    y_diff = np.zeros((m, m + 1))
    z_diff = np.zeros((m + 1, m))
    block_stats = np.zeros((n_blocks, 10))
    _matrix_kernel(
        n_trials, m, n_blocks,
        sc_t.astype(np.int64), sc_m.astype(np.int64), sc_live,
        ic_t.astype(np.int64), ic_m.astype(np.int64), ic_live,
        ss_t.astype(np.int64), ss_lo.astype(np.int64), ss_hi.astype(np.int64),
        is_t.astype(np.int64), is_lo.astype(np.int64), is_hi.astype(np.int64),
        coinc, x_diff, y_diff, z_diff, block_stats,
    )

    x = np.cumsum(np.cumsum(x_diff, axis=0), axis=1)[:m, :m]
    y = np.cumsum(y_diff, axis=1)[:, :m]
    z = np.cumsum(z_diff, axis=0)[:m, :]

    ds = np.zeros(m + 1)
    np.add.at(ds, ss_lo, 1.0)
    np.add.at(ds, ss_hi + 1, -1.0)
    ds = np.cumsum(ds)[:m]
    di = np.zeros(m + 1)
    np.add.at(di, is_lo, 1.0)
    np.add.at(di, is_hi + 1, -1.0)
    di = np.cumsum(di)[:m]

    scl = np.bincount(sc_m[sc_live], minlength=m).astype(float)
    icl = np.bincount(ic_m[ic_live], minlength=m).astype(float)

    n_pair = n_trials - ds[:, None] - di[None, :] + x
    s_cond = scl[:, None] - y
    i_cond = icl[None, :] - z
    with np.errstate(divide="ignore", invalid="ignore"):
        matrix = coinc * n_pair / (s_cond * i_cond)

    totals = block_stats.sum(axis=0)
    diag_mean, off_mean = _pooled(totals)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((bootstrap_seed, 97))))
    picks = rng.integers(0, n_blocks, size=(n_bootstrap, n_blocks))
    diag_bs = np.empty(n_bootstrap)
    off_bs = np.empty(n_bootstrap)
    for k in range(n_bootstrap):
        resampled = block_stats[picks[k]].sum(axis=0)
        diag_bs[k], off_bs[k] = _pooled(resampled)

    def spread(samples):
        finite = samples[np.isfinite(samples)]
        return float(finite.std()) if len(finite) else float("nan")

    return ModeMatrixResult(
        matrix=matrix,
        diag_mean=float(diag_mean),
        diag_err=spread(diag_bs),
        offdiag_mean=float(off_mean),
        offdiag_err=spread(off_bs),
        n_modes=m,
        n_trials=n_trials,
        block_stats=block_stats,
    )


def rate_gain(coinc_a, trials_a, coinc_b, trials_b):
    """Per-trial coincidence rate of run A relative to run B.

    Returns (value, err) where err propagates Poisson counting noise
    on both numerator and denominator coincidence counts.
    """
    if trials_a <= 0 or trials_b <= 0:
        raise ValueError("trial counts must be positive")
    value = (coinc_a / trials_a) / (coinc_b / trials_b)
    err = value * math.sqrt(1.0 / max(coinc_a, 1) + 1.0 / max(coinc_b, 1))
    return float(value), float(err)


@dataclass(frozen=True)
class EfficiencyEstimate:
    system_efficiency: float
    system_err: float
    internal_from_chain: float
    internal_from_heralding: float
    transmission_efficiency: float
    filter_overlap: float


def extract_efficiencies(before, after, trials_before, trials_after,
                         eta_t=0.26, overlap=0.769, heralding_factor=1.3):
    """Storage efficiencies from before/after coincidence counting.

    The system efficiency is the coincidence-per-trial ratio of the
    recall run to the source-only run. Two internal-efficiency
    conventions are reported: dividing out the storage-path chain
    (setup transmission times spectral overlap), and scaling by the
    measured heralding-ratio factor; the two agree when the overlap
    equals 1/heralding_factor.
    """
    r_before = before.coincidences / trials_before
    r_after = after.coincidences / trials_after
    eta = r_after / r_before
    err = eta * np.sqrt(1.0 / max(after.coincidences, 1) + 1.0 / max(before.coincidences, 1))
    return EfficiencyEstimate(
        system_efficiency=float(eta),
        system_err=float(err),
        internal_from_chain=float(eta / (eta_t * overlap)),
        internal_from_heralding=float(heralding_factor * eta / eta_t),
        transmission_efficiency=eta_t,
        filter_overlap=overlap,
    )
