"""Storage element insertion and single-photon detection.

The storage element acts on the signal channel as a three-way branch
per photon: transmitted through the comb's transparent structure (time
unchanged), recalled as an echo (time shifted by the storage time), or
absorbed. Branch weights come from the calibrated filter chain.

Detection converts emissions to wall-clock timestamps: efficiency
thinning, gaussian timing jitter, dark counts uniform over the storage
periods, and a non-paralyzable dead time per detector. Events are laid
out on an absolute clock of one trial per clock period; only storage
periods are simulated, the pump/wait fraction of the macro cycle enters
through the duty factor when converting to rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from afcsim.records import (
    CHANNEL_IDLER,
    CHANNEL_SIGNAL,
    FLAG_DARK,
    FLAG_NOISE,
    FLAG_RECALLED,
    TIMESTAMP_DTYPE,
)

DARK_MODE_SENTINEL = 0xFFFF


@dataclass(frozen=True)
class TimingSequence:
    """Macro cycle: pump the comb, wait, then run storage trials."""

    clock_period_ps: int
    pump_ms: float = 200.0
    wait_ms: float = 20.0
    store_ms: float = 280.0

    def __post_init__(self):
        if self.clock_period_ps <= 0:
            raise ValueError("clock period must be positive")
        if min(self.pump_ms, self.wait_ms, self.store_ms) < 0 or self.store_ms == 0:
            raise ValueError("cycle segments must be nonnegative with a storage segment")

    @property
    def duty(self):
        return self.store_ms / (self.pump_ms + self.wait_ms + self.store_ms)


@dataclass(frozen=True)
class ChannelModel:
    """End-to-end detection chain for one channel (storage loss excluded)."""

    channel: int
    efficiency: float
    jitter_sigma_ps: float = 21.0
    dead_time_ps: int = 50_000
    dark_rate_hz: float = 70.0

    def __post_init__(self):
        if self.channel not in (CHANNEL_SIGNAL, CHANNEL_IDLER):
            raise ValueError("channel must be 0 (signal) or 1 (idler)")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")
        if self.jitter_sigma_ps < 0 or self.dead_time_ps < 0 or self.dark_rate_hz < 0:
            raise ValueError("jitter, dead time and dark rate must be nonnegative")


@dataclass(frozen=True)
class MemoryAction:
    """Per-photon branch weights of the storage element."""

    transmit_prob: float
    recall_prob: float
    storage_time_ps: int

    def __post_init__(self):
        if self.transmit_prob < 0 or self.recall_prob < 0:
            raise ValueError("branch probabilities must be nonnegative")
        if self.transmit_prob + self.recall_prob > 1.0 + 1e-12:
            raise ValueError("transmit + recall cannot exceed 1")
        if self.storage_time_ps <= 0:
            raise ValueError("storage time must be positive")

    @property
    def absorb_prob(self):
        return 1.0 - self.transmit_prob - self.recall_prob


def memory_action_from_chain(
    internal_efficiency,
    comb_transmission,
    path_transmission,
    filter_overlap,
    storage_time_ps,
):
    """Compose branch weights from the measured efficiency chain.

    The echo branch carries the device internal efficiency, the setup
    transmission of the storage path and the spectral overlap of the
    photons with the comb band; the transmitted branch sees the comb's
    average transparency and the same setup transmission (overlap loss
    shows up as absorption, which the comb average already counts).
    """
    return MemoryAction(
        transmit_prob=comb_transmission * path_transmission,
        recall_prob=internal_efficiency * path_transmission * filter_overlap,
        storage_time_ps=storage_time_ps,
    )


def apply_memory(emissions, action, rng):
    """Pass the emission stream through the storage element.

    Signal-channel photons take the transmit/recall/absorb branch;
    recalled photons shift by the storage time and gain FLAG_RECALLED.
    Idler photons and broadband background (FLAG_NOISE, outside the comb
    acceptance or generated downstream) pass unchanged.
    """
    acted = (emissions["channel"] == CHANNEL_SIGNAL) & (emissions["flags"] & FLAG_NOISE == 0)
    u = rng.random(len(emissions))
    recalled = acted & (u < action.recall_prob)
    transmitted = acted & ~recalled & (u < action.recall_prob + action.transmit_prob)
    keep = ~acted | recalled | transmitted

    out = emissions[keep].copy()
    rec = recalled[keep]
    out["time_ps"][rec] += action.storage_time_ps
    out["flags"][rec] |= FLAG_RECALLED
    return out


@numba.njit(cache=True)
def _dead_time_mask(times, tau):
    keep = np.zeros(len(times), dtype=np.bool_)
    last = -tau - 1
    for i in range(len(times)):
        if times[i] - last >= tau:
            keep[i] = True
            last = times[i]
    return keep


def dead_time_filter(times_ps, dead_time_ps):
    """Non-paralyzable dead time: keep events >= tau after the last kept one.

    Input must be sorted ascending; kept times then satisfy the exact
    gap invariant t[k+1] - t[k] >= tau.
    """
    times_ps = np.ascontiguousarray(times_ps, dtype=np.int64)
    if len(times_ps) > 1 and np.any(np.diff(times_ps) < 0):
        raise ValueError("dead time filter needs time-sorted input")
    if dead_time_ps <= 0:
        return np.ones(len(times_ps), dtype=bool)
    return _dead_time_mask(times_ps, np.int64(dead_time_ps))


def detect(emissions, channel_model, timing, rng, train_range=None):
    """Detect one channel of the emission stream.

    Returns timestamp records (see records.TIMESTAMP_DTYPE) sorted by
    absolute time, after efficiency thinning, timing jitter, dark counts
    over ``train_range`` (defaults to the span present in the input) and
    the dead-time filter. With unit efficiency, zero jitter, zero dark
    rate and zero dead time this is the identity on the timeline.
    """
    sel = emissions[emissions["channel"] == channel_model.channel]

    survive = rng.random(len(sel)) < channel_model.efficiency
    kept = sel[survive]

    period = np.int64(timing.clock_period_ps)
    abs_t = kept["train"].astype(np.int64) * period + kept["time_ps"]
    if channel_model.jitter_sigma_ps > 0:
        abs_t = abs_t + np.rint(
            rng.standard_normal(len(abs_t)) * channel_model.jitter_sigma_ps
        ).astype(np.int64)
    # emission jitter can spill a hair before trial zero; clamp to the clock
    np.clip(abs_t, 0, None, out=abs_t)

    if train_range is None:
        if len(emissions):
            train_range = (int(emissions["train"].min()), int(emissions["train"].max()) + 1)
        else:
            train_range = (0, 0)
    t_lo, t_hi = np.int64(train_range[0]) * period, np.int64(train_range[1]) * period
    span_s = (t_hi - t_lo) * 1e-12
    n_dark = rng.poisson(channel_model.dark_rate_hz * span_s) if span_s > 0 else 0
    dark_t = t_lo + np.floor(rng.random(n_dark) * float(t_hi - t_lo)).astype(np.int64)

    n = len(abs_t) + n_dark
    rec = np.empty(n, dtype=TIMESTAMP_DTYPE)
    rec["time_ps"][: len(abs_t)] = abs_t
    rec["clock"][: len(abs_t)] = kept["train"]
    rec["mode"][: len(abs_t)] = kept["mode"]
    rec["flags"][: len(abs_t)] = kept["flags"]
    rec["time_ps"][len(abs_t) :] = dark_t
    rec["clock"][len(abs_t) :] = (dark_t // period).astype(np.uint32)
    rec["mode"][len(abs_t) :] = DARK_MODE_SENTINEL
    rec["flags"][len(abs_t) :] = FLAG_DARK
    rec["channel"] = channel_model.channel

    rec = rec[np.argsort(rec["time_ps"], kind="stable")]
    mask = dead_time_filter(rec["time_ps"].astype(np.int64), channel_model.dead_time_ps)
    return rec[mask]
