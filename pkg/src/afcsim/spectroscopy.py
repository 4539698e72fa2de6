"""Material spectroscopy models for the storage crystal.

Covers the slow observables that set comb quality: spectral-hole
lifetime (double exponential, population relaxing through two
reservoirs), magnetic side-hole positions (linear Zeeman shifts of the
two host nuclear species), two-pulse echo decay (Mims stretched
exponential), and the broadband absorption background.

Units: hole decay times in s, echo delays in us, magnetic field in G,
detunings in MHz unless suffixed otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HoleDecayParams:
    """Double-exponential hole relaxation.

    The fast pool empties in under a second; the slow pool carries most
    of the weight and sets the usable preparation window.
    """

    amp_fast: float = 0.29
    tau_fast_s: float = 0.55
    amp_slow: float = 0.71
    tau_slow_s: float = 32.75


@dataclass(frozen=True)
class SideHoleModel:
    """Linear Zeeman slopes of the satellite holes, in kHz per gauss.

    Each host nuclear species drags a pair of side holes out from the
    central hole as the field grows. Widths are the Lorentzian FWHM of
    each feature in MHz.
    """

    slope_nb_khz_per_g: float = 1.077
    slope_li_khz_per_g: float = 1.487
    central_width_mhz: float = 4.0
    nb_width_mhz: float = 6.0
    li_width_mhz: float = 3.0


@dataclass(frozen=True)
class EchoDecayParams:
    """Mims-law two-pulse echo decay: A0 exp(-2 (2 t12 / T2)^x)."""

    amplitude: float = 1.0
    t2_us: float = 90.34
    mims_x: float = 1.93


@dataclass(frozen=True)
class AbsorptionModel:
    """Gaussian inhomogeneous absorption line."""

    peak_od: float = 3.3
    fwhm_ghz: float = 180.0


def hole_depth(t_s, params=HoleDecayParams()):
    """Remaining hole depth after a wait of ``t_s`` seconds."""
    t_s = np.asarray(t_s, dtype=float)
    if np.any(t_s < 0):
        raise ValueError("wait time must be nonnegative")
    out = params.amp_fast * np.exp(-t_s / params.tau_fast_s) + params.amp_slow * np.exp(
        -t_s / params.tau_slow_s
    )
    return out if out.ndim else float(out)


def side_hole_detunings(field_gauss, model=SideHoleModel()):
    """Side-hole offsets (nb, li) in MHz at the given field."""
    if field_gauss < 0:
        raise ValueError("field must be nonnegative")
    nb = model.slope_nb_khz_per_g * field_gauss * 1e-3
    li = model.slope_li_khz_per_g * field_gauss * 1e-3
    return nb, li


def _lorentzian(detuning, center, fwhm):
    half = fwhm / 2.0
    return half**2 / ((detuning - center) ** 2 + half**2)


def hole_spectrum(detuning_mhz, field_gauss, model=SideHoleModel(), depths=(1.0, 0.35, 0.35)):
    """Transmission-change spectrum: central hole plus both side pairs.

    ``depths`` are the relative depths of (central, nb pair, li pair).
    """
    detuning_mhz = np.asarray(detuning_mhz, dtype=float)
    nb, li = side_hole_detunings(field_gauss, model)
    d0, d_nb, d_li = depths
    out = d0 * _lorentzian(detuning_mhz, 0.0, model.central_width_mhz)
    for s in (-1.0, 1.0):
        out = out + d_nb * _lorentzian(detuning_mhz, s * nb, model.nb_width_mhz)
        out = out + d_li * _lorentzian(detuning_mhz, s * li, model.li_width_mhz)
    return out


def echo_area(t12_us, params=EchoDecayParams()):
    """Integrated echo signal for pulse separation ``t12_us``."""
    t12_us = np.asarray(t12_us, dtype=float)
    if np.any(t12_us < 0):
        raise ValueError("pulse separation must be nonnegative")
    out = params.amplitude * np.exp(-2.0 * (2.0 * t12_us / params.t2_us) ** params.mims_x)
    return out if out.ndim else float(out)


def optical_depth(p_in, p_out):
    """Beer-Lambert depth from transmitted power; rejects gain."""
    p_in = np.asarray(p_in, dtype=float)
    p_out = np.asarray(p_out, dtype=float)
    if np.any(p_in <= 0) or np.any(p_out <= 0):
        raise ValueError("powers must be positive")
    if np.any(p_out > p_in):
        raise ValueError("transmitted power exceeds input; not an absorber")
    out = np.log(p_in / p_out)
    return out if out.ndim else float(out)


def absorption_profile(detuning_ghz, model=AbsorptionModel()):
    """Inhomogeneous optical depth versus detuning from line center."""
    detuning_ghz = np.asarray(detuning_ghz, dtype=float)
    sig = model.fwhm_ghz / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    out = model.peak_od * np.exp(-0.5 * (detuning_ghz / sig) ** 2)
    return out if out.ndim else float(out)


def synthetic_hole_decay(times_s, params, rel_noise, rng):
    """Hole-decay measurement with multiplicative gaussian noise.

    Returns (y, sigma); sigma is the per-point absolute uncertainty
    implied by the relative noise level.
    """
    clean = hole_depth(times_s, params)
    y = clean * (1.0 + rel_noise * rng.standard_normal(len(times_s)))
    return y, np.abs(clean) * rel_noise


def synthetic_echo_decay(t12_us, params, rel_noise, rng):
    clean = echo_area(t12_us, params)
    y = clean * (1.0 + rel_noise * rng.standard_normal(len(t12_us)))
    return y, np.abs(clean) * rel_noise


def synthetic_side_holes(fields_gauss, model, rel_noise, rng, species="li"):
    """Side-hole position versus field for one species, with noise."""
    slope = {"nb": model.slope_nb_khz_per_g, "li": model.slope_li_khz_per_g}[species]
    clean = slope * np.asarray(fields_gauss, dtype=float) * 1e-3
    y = clean * (1.0 + rel_noise * rng.standard_normal(len(fields_gauss)))
    return y, np.abs(clean) * rel_noise
