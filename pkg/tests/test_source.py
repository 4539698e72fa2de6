import math

import numpy as np
import pytest
from scipy import stats

from afcsim import source
from afcsim.detection import TimingSequence
from afcsim.records import FLAG_NOISE, FLAG_UNPAIRED


def _cell_counts(emissions, channel, modes, n_trains):
    sel = emissions[emissions["channel"] == channel]
    cells = sel["train"].astype(np.int64) * modes + sel["mode"].astype(np.int64)
    return np.bincount(cells, minlength=n_trains * modes)


# ------------------------------------------------------------ validation


def test_rejects_mu_outside_cluster_validity():
    with pytest.raises(ValueError, match="mean_pairs"):
        source.SourceConfig(mean_pairs=0.9, schmidt_modes=1.56)
    with pytest.raises(ValueError, match="mean_pairs"):
        source.SourceConfig(mean_pairs=1.2, schmidt_modes=4.0)
    with pytest.raises(ValueError, match="mean_pairs"):
        source.SourceConfig(mean_pairs=0.0)
    # boundary value is allowed
    source.SourceConfig(mean_pairs=0.78, schmidt_modes=1.56)


def test_rejects_unknown_kind_and_bad_noise():
    with pytest.raises(ValueError, match="kind"):
        source.SourceConfig(mean_pairs=0.1, kind="squeezed")
    with pytest.raises(ValueError, match="noise"):
        source.SourceConfig(mean_pairs=0.1, noise_mean_signal=-0.1)


def test_cluster_means_match_moment_algebra():
    cfg = source.SourceConfig(mean_pairs=0.3, schmidt_modes=1.56)
    m1, m2, mb = cfg.cluster_means
    mu, k = 0.3, 1.56
    np.testing.assert_allclose(m1, mu - 2 * mu**2 / k, rtol=1e-12)
    np.testing.assert_allclose(m2, mu**2 / (2 * k), rtol=1e-12)
    np.testing.assert_allclose(mb, mu**2 / k, rtol=1e-12)
    # channel mean is exactly mu
    np.testing.assert_allclose(m1 + 2 * m2 + mb, mu, rtol=1e-12)


def test_sample_rejects_nonpositive_trials():
    cfg = source.SourceConfig(mean_pairs=0.1)
    with pytest.raises(ValueError):
        source.sample_emissions(cfg, 0, seed=1)


# ------------------------------------------------------------ structure


def test_pair_photons_are_mirrored_and_linked():
    cfg = source.SourceConfig(mean_pairs=0.3, schmidt_modes=1.56, modes=8)
    em = source.sample_emissions(cfg, 2000, seed=7)
    paired = em[em["pair_id"] >= 0]
    sig = paired[paired["channel"] == 0]
    idl = paired[paired["channel"] == 1]
    # pre-loss the two channels hold the same pairs: same ids, same times
    assert len(sig) == len(idl)
    order_s = np.argsort(sig["pair_id"], kind="stable")
    order_i = np.argsort(idl["pair_id"], kind="stable")
    assert np.array_equal(sig["pair_id"][order_s], idl["pair_id"][order_i])
    assert np.array_equal(sig["time_ps"][order_s], idl["time_ps"][order_i])
    assert np.array_equal(sig["mode"][order_s], idl["mode"][order_i])
    # unpaired light carries the sentinel and the flag
    unpaired = em[em["pair_id"] < 0]
    assert np.all(unpaired["flags"] & (FLAG_UNPAIRED | FLAG_NOISE))


def test_emissions_sorted_and_in_train_bounds():
    cfg = source.SourceConfig(mean_pairs=0.3, schmidt_modes=1.56, modes=8)
    em = source.sample_emissions(cfg, 1000, seed=11)
    key = em["train"].astype(np.int64) * (1 << 40) + em["time_ps"]
    assert np.all(np.diff(key) >= 0)
    sigma = cfg.emission_jitter_fwhm_ps / (2 * math.sqrt(2 * math.log(2)))
    assert em["time_ps"].min() >= -3 * sigma
    assert em["time_ps"].max() <= cfg.train_span_ps() + 3 * sigma
    assert em["mode"].max() < cfg.modes


def test_noise_lands_in_delayed_window():
    cfg = source.SourceConfig(
        mean_pairs=0.01, modes=4, noise_mean_signal=0.5, noise_mean_idler=0.5,
        noise_delay_ps=200_000)
    em = source.sample_emissions(cfg, 500, seed=13)
    noise = em[(em["flags"] & FLAG_NOISE) > 0]
    sig = noise[noise["channel"] == 0]
    idl = noise[noise["channel"] == 1]
    offs_s = sig["time_ps"] - sig["mode"].astype(np.int64) * cfg.mode_spacing_ps
    offs_i = idl["time_ps"] - idl["mode"].astype(np.int64) * cfg.mode_spacing_ps
    assert offs_s.min() >= 200_000 and offs_s.max() < 200_000 + cfg.mode_spacing_ps
    assert offs_i.min() >= 0 and offs_i.max() < cfg.mode_spacing_ps


# ------------------------------------------------------------ statistics


def test_channel_mean_is_mu():
    mu = 0.3
    cfg = source.SourceConfig(mean_pairs=mu, schmidt_modes=1.56, modes=100)
    n = 3000
    em = source.sample_emissions(cfg, n, seed=17)
    for ch in (0, 1):
        counts = _cell_counts(em, ch, cfg.modes, n)
        sem = counts.std() / math.sqrt(len(counts))
        assert abs(counts.mean() - mu) < 4 * sem


def test_number_cross_correlation_follows_pair_law():
    # <n_s n_i> N / (<n_s><n_i>) = 1 + 1/mu exactly for the cluster model
    for mu, seed in ((0.005, 19), (0.037, 23), (0.2, 29)):
        cfg = source.SourceConfig(mean_pairs=mu, schmidt_modes=1.56, modes=1000)
        n = 2000
        em = source.sample_emissions(cfg, n, seed=seed)
        cs = _cell_counts(em, 0, cfg.modes, n)
        ci = _cell_counts(em, 1, cfg.modes, n)
        cells = len(cs)
        prod = float(np.dot(cs, ci))
        g = prod * cells / (cs.sum() * float(ci.sum()))
        err = g * math.sqrt(1.0 / prod + 1.0 / cs.sum() + 1.0 / ci.sum())
        assert abs(g - (1.0 + 1.0 / mu)) < 3.0 * err, (mu, g, err)


def test_unheralded_autocorrelation_follows_schmidt_law():
    # split one channel into even/odd trials? no: the within-window pair
    # variance carries it: Var(n) / mean^2 - 1/mean = 1/K for the model
    mu, k = 0.3, 1.56
    cfg = source.SourceConfig(mean_pairs=mu, schmidt_modes=k, modes=1000)
    n = 4000
    em = source.sample_emissions(cfg, n, seed=31)
    counts = _cell_counts(em, 0, cfg.modes, n)
    m = counts.mean()
    g2 = (np.mean(counts * (counts - 1.0))) / m**2
    # bootstrap-free error: delta method on 4e6 cells keeps this far
    # below the 1/K contrast
    assert abs(g2 - (1.0 + 1.0 / k)) < 0.02, g2


def test_photon_number_distribution_matches_implemented_law():
    # chi-square against the compound-Poisson pmf obtained from the
    # generating function on the unit circle; pinned seed, p > 0.01
    mu, k = 0.2, 1.0
    cfg = source.SourceConfig(mean_pairs=mu, schmidt_modes=k, modes=1000)
    n = 1000
    em = source.sample_emissions(cfg, n, seed=37)
    counts = _cell_counts(em, 0, cfg.modes, n)
    n_cells = len(counts)

    m1, m2, mb = cfg.cluster_means
    big = 64
    z = np.exp(2j * np.pi * np.arange(big) / big)
    gf = np.exp(m1 * (z - 1) + m2 * (z**2 - 1) + mb * (z - 1))
    # pmf_j = (1/M) sum_k G(z_k) z_k^{-j}, the forward transform
    pmf = np.real(np.fft.fft(gf)) / big

    observed = np.bincount(counts, minlength=big)[:big].astype(float)
    expected = n_cells * pmf
    # merge the tail so every expected bin holds at least 5
    cut = np.searchsorted(np.cumsum(expected[::-1]), 5.0)
    last = big - cut - 1
    obs = np.append(observed[:last], observed[last:].sum())
    exp = np.append(expected[:last], expected[last:].sum())
    stat, p = stats.chisquare(obs, exp * obs.sum() / exp.sum())
    assert p > 0.01, (stat, p)


def test_doubling_mu_doubles_trues_and_quadruples_accidentals():
    eta_s, eta_i = 0.05, 0.05
    vals = {}
    for mu in (0.002, 0.004):
        cfg = source.SourceConfig(mean_pairs=mu, schmidt_modes=1.56)
        p_s, p_i, p_si = source.click_probabilities(cfg, eta_s, eta_i)
        accidental = p_s * p_i
        vals[mu] = (p_si - accidental, accidental)
    true_ratio = vals[0.004][0] / vals[0.002][0]
    acc_ratio = vals[0.004][1] / vals[0.002][1]
    assert abs(true_ratio - 2.0) < 0.02
    assert abs(acc_ratio - 4.0) < 0.02


# ------------------------------------------------------------ click model


def _click_probs_by_enumeration(cfg, eta_s, eta_i, kmax=60):
    """Truncated Poisson sums; independent of the closed-form PGF."""
    m1, m2, mb = cfg.cluster_means
    comps = [
        (m1, 1, 1),
        (m2, 2, 2),
        (mb + cfg.noise_mean_signal, 1, 0),
        (mb + cfg.noise_mean_idler, 0, 1),
    ]

    def expect(z_s, z_i):
        out = 1.0
        for mean, a_s, a_i in comps:
            per_event = (z_s**a_s) * (z_i**a_i)
            term = sum(
                math.exp(-mean) * mean**j / math.factorial(j) * per_event**j
                for j in range(kmax)
            )
            out *= term
        return out

    g_s = expect(1.0 - eta_s, 1.0)
    g_i = expect(1.0, 1.0 - eta_i)
    g_si = expect(1.0 - eta_s, 1.0 - eta_i)
    return 1.0 - g_s, 1.0 - g_i, 1.0 - g_s - g_i + g_si


@pytest.mark.parametrize("mu,k,ws,wi", [
    (0.0371, 1.56, 0.0, 0.0),
    (0.0371, 1.0, 0.0036, 0.0036),
    (0.3, 1.56, 0.05, 0.2),
])
def test_click_probabilities_match_enumeration(mu, k, ws, wi):
    cfg = source.SourceConfig(mean_pairs=mu, schmidt_modes=k,
                              noise_mean_signal=ws, noise_mean_idler=wi)
    exact = source.click_probabilities(cfg, 0.13, 0.17)
    brute = _click_probs_by_enumeration(cfg, 0.13, 0.17)
    np.testing.assert_allclose(exact, brute, rtol=1e-9)


def test_click_g2_approaches_pair_law_at_low_efficiency():
    cfg = source.SourceConfig(mean_pairs=0.0371, schmidt_modes=1.56)
    g_clicks = source.click_g2(cfg, 1e-4, 1e-4)
    assert abs(g_clicks - (1.0 + 1.0 / 0.0371)) < 0.05


def test_coherent_kind_factorizes():
    cfg = source.SourceConfig(mean_pairs=0.1, kind="coherent")
    p_s, p_i, p_si = source.click_probabilities(cfg, 0.13, 0.17)
    np.testing.assert_allclose(p_si, p_s * p_i, rtol=1e-12)
    assert source.click_g2(cfg, 0.13, 0.17) == pytest.approx(1.0, rel=1e-12)


def test_coherent_samples_uncorrelated():
    cfg = source.SourceConfig(mean_pairs=0.2, modes=1000, kind="coherent")
    n = 1000
    em = source.sample_emissions(cfg, n, seed=41)
    cs = _cell_counts(em, 0, cfg.modes, n)
    ci = _cell_counts(em, 1, cfg.modes, n)
    prod = float(np.dot(cs, ci))
    g = prod * len(cs) / (cs.sum() * float(ci.sum()))
    err = g * math.sqrt(1.0 / prod + 1.0 / cs.sum() + 1.0 / ci.sum())
    assert abs(g - 1.0) < 3 * err


def test_theoretical_g2_values():
    # pure pair law at the reference operating point
    np.testing.assert_allclose(
        source.theoretical_g2(0.0371, 1.56), 28.0, atol=0.1)
    # symmetric background dilutes the excess by (1-nu)^2
    clean = source.theoretical_g2(0.0371, 1.56) - 1.0
    noisy = source.theoretical_g2(0.0371, 1.56, 0.0888, 0.0888) - 1.0
    np.testing.assert_allclose(noisy / clean, (1 - 0.0888) ** 2, rtol=1e-12)
    with pytest.raises(ValueError):
        source.theoretical_g2(0.0, 1.56)


def test_noise_means_for_fractions_round_trip():
    cfg = source.SourceConfig(mean_pairs=0.0371)
    noisy = source.noise_means_for_fractions(cfg, 0.0888, 0.33)
    w_s, w_i = noisy.noise_mean_signal, noisy.noise_mean_idler
    np.testing.assert_allclose(w_s / (w_s + 0.0371), 0.0888, rtol=1e-12)
    np.testing.assert_allclose(w_i / (w_i + 0.0371), 0.33, rtol=1e-12)
    with pytest.raises(ValueError):
        source.noise_means_for_fractions(cfg, 1.0, 0.0)


def test_predicted_rates_scale_with_duty_and_modes():
    cfg = source.SourceConfig(mean_pairs=0.1, modes=10)
    timing = TimingSequence(clock_period_ps=1_000_000)
    rates = source.predict_rates(cfg, 0.5, 0.25, timing)
    trials_hz = timing.duty * 1e6
    np.testing.assert_allclose(
        rates["signal_singles_hz"], trials_hz * 10 * 0.1 * 0.5, rtol=1e-12)
    np.testing.assert_allclose(
        rates["pair_coincidences_hz"], trials_hz * 10 * 0.1 * 0.5 * 0.25, rtol=1e-12)


# ------------------------------------------------------------ determinism


def test_split_sampling_is_byte_identical():
    cfg = source.SourceConfig(mean_pairs=0.0371, schmidt_modes=1.56, modes=330,
                              noise_mean_signal=0.001, noise_mean_idler=0.02)
    whole = source.sample_emissions(cfg, 5000, seed=99)
    a = source.sample_emissions(cfg, 1234, seed=99)
    b = source.sample_emissions(cfg, 5000 - 1234, seed=99, start_train=1234)
    joined = np.concatenate([a, b])
    assert np.array_equal(whole, joined)


def test_same_seed_same_stream_different_seed_differs():
    cfg = source.SourceConfig(mean_pairs=0.1, modes=4)
    one = source.sample_emissions(cfg, 500, seed=5)
    two = source.sample_emissions(cfg, 500, seed=5)
    other = source.sample_emissions(cfg, 500, seed=6)
    assert np.array_equal(one, two)
    assert not np.array_equal(one, other)
