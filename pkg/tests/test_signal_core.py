import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpnet_ofdm.signal_core import (
    AntennaGains,
    ChannelSample,
    ImpairmentSpec,
    PathComponent,
    SubcarrierGrid,
    SystemConfig,
    add_noise,
    apply_cfo,
    apply_sco,
    build_delay_grid,
    build_dictionary,
    build_nominal_grid,
    channel_from_paths,
    frv,
    generate_channel,
    impaired_system,
    sample_gain_noise,
)


class TestConfig:
    def test_defaults(self, cfg):
        assert cfg.subcarrier_spacing_hz == 195312.5
        assert cfg.indices[0] == -128 and cfg.indices[-1] == 127

    @pytest.mark.parametrize("n", [0, 1, 3, 255])
    def test_rejects_odd_or_tiny(self, n):
        with pytest.raises(ValueError):
            SystemConfig(n_subcarriers=n)

    def test_spacing_must_match_bandwidth(self):
        with pytest.raises(ValueError):
            SystemConfig(4, 0.0, 4.0, subcarrier_spacing_hz=2.0)

    def test_impairments_validated(self):
        with pytest.raises(ValueError):
            ImpairmentSpec(gain_noise_var=-0.1)
        with pytest.raises(ValueError):
            ImpairmentSpec(sco_ppm=float("nan"))

    def test_zero_gains_rejected(self):
        with pytest.raises(ValueError):
            AntennaGains(np.zeros(4))


class TestGrid:
    def test_small_symmetric(self):
        g = build_nominal_grid(SystemConfig(4, 0.0, 4.0))
        np.testing.assert_array_equal(g.freqs_hz, [-2, -1, 0, 1])

    def test_two_subcarriers(self):
        g = build_nominal_grid(SystemConfig(2, 10.0, 4.0))
        np.testing.assert_array_equal(g.freqs_hz, [8, 10])

    def test_first_frequency(self, cfg):
        g = build_nominal_grid(cfg)
        assert g.freqs_hz[0] == 3.4e9 - 128 * (50e6 / 256)

    def test_mean_is_half_spacing_below_center(self, cfg):
        g = build_nominal_grid(cfg)
        assert np.mean(g.freqs_hz - cfg.center_freq_hz) == -cfg.subcarrier_spacing_hz / 2

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            SubcarrierGrid(np.array([1.0, 1.0]))


class TestImpairments:
    def test_sco_zero_is_identity(self, cfg):
        g = build_nominal_grid(cfg)
        np.testing.assert_array_equal(apply_sco(g, cfg, 0.0).freqs_hz, g.freqs_hz)

    def test_sco_shift_at_edge(self, cfg):
        g = build_nominal_grid(cfg)
        shifted = apply_sco(g, cfg, 40.0).freqs_hz - g.freqs_hz
        # 127 * 40e-6 * 195312.5
        assert shifted[-1] == pytest.approx(992.1875, abs=1e-6)
        assert shifted[128] == 0.0

    def test_sco_linear_in_index(self, cfg):
        g = build_nominal_grid(cfg)
        d = apply_sco(g, cfg, 40.0).freqs_hz - g.freqs_hz
        np.testing.assert_allclose(d, cfg.indices * 40e-6 * cfg.subcarrier_spacing_hz, atol=1e-6)

    def test_cfo(self):
        g = SubcarrierGrid(np.array([8.0, 10.0]))
        np.testing.assert_array_equal(apply_cfo(g, 0.0).freqs_hz, g.freqs_hz)
        np.testing.assert_array_equal(apply_cfo(g, 1.0).freqs_hz, [9, 11])

    def test_cfo_and_sco_commute(self, cfg):
        g = build_nominal_grid(cfg)
        a = apply_cfo(apply_sco(g, cfg, 40.0), 123.0).freqs_hz
        b = apply_sco(apply_cfo(g, 123.0), cfg, 40.0).freqs_hz
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-6)

    def test_gain_noise_zero_is_identity(self):
        g = AntennaGains.flat(8)
        assert sample_gain_noise(g, 0.0, np.random.default_rng(0)) is g

    @pytest.mark.parametrize("s2", [0.36, 0.09])
    def test_gain_noise_variance(self, s2):
        g = AntennaGains.flat(100_000)
        out = sample_gain_noise(g, s2, np.random.default_rng(7))
        d = out.gains - g.gains
        assert np.all(d.imag == 0)
        assert abs(np.var(d.real) / s2 - 1) < 0.02

    def test_impaired_system_is_one_draw(self, cfg):
        imp = ImpairmentSpec(40.0, 0.0, 0.09)
        a = impaired_system(cfg, imp, np.random.default_rng(3))
        b = impaired_system(cfg, imp, np.random.default_rng(3))
        np.testing.assert_array_equal(a[1].gains, b[1].gains)
        np.testing.assert_array_equal(a[0].freqs_hz, b[0].freqs_hz)


class TestFrv:
    def test_zero_delay_returns_gains(self, cfg):
        g = AntennaGains(np.linspace(0.5, 1.5, cfg.n_subcarriers) + 0.1j)
        np.testing.assert_allclose(frv(build_nominal_grid(cfg), g, 0.0), g.gains, rtol=0, atol=0)

    def test_exact_phases(self):
        out = frv(SubcarrierGrid(np.array([0.0, 1.0])), AntennaGains.flat(2), 0.5)
        np.testing.assert_allclose(out, [1, -1], atol=1e-15)

    def test_modulus_equals_gain(self, real_system):
        grid, gains = real_system
        v = frv(grid, gains, 1.234e-6)
        np.testing.assert_allclose(np.abs(v), np.abs(gains.gains), rtol=1e-12)

    def test_linearity_against_channel(self, real_system):
        grid, gains = real_system
        t1, t2 = 0.3e-6, 2.1e-6
        ch = channel_from_paths(grid, gains, [PathComponent(1.0, t1), PathComponent(1.0, t2)])
        np.testing.assert_allclose(frv(grid, gains, t1) + frv(grid, gains, t2), ch.h, rtol=1e-12, atol=1e-12)

    def test_negative_delay_rejected(self, cfg):
        with pytest.raises(ValueError):
            frv(build_nominal_grid(cfg), AntennaGains.flat(cfg.n_subcarriers), -1e-9)


class TestDictionary:
    def test_delay_grid(self, cfg, delays):
        assert delays[1] - delays[0] == pytest.approx(5e-9, rel=1e-12)
        assert delays[-1] == pytest.approx(4.945e-6, rel=1e-12)
        np.testing.assert_allclose(build_delay_grid(cfg, 2, 4), [0, 5e-9], rtol=1e-12)
        with pytest.raises(ValueError):
            build_delay_grid(cfg, 1)

    def test_shape_and_unit_columns(self, nominal_dict, real_dict):
        for d in (nominal_dict, real_dict):
            assert d.atoms.shape == (256, 990)
            np.testing.assert_allclose(np.linalg.norm(d.atoms, axis=0), 1.0, atol=1e-10)

    def test_nominal_and_real_differ(self, nominal_dict, real_dict):
        coh = np.abs(np.sum(nominal_dict.atoms.conj() * real_dict.atoms, axis=0))
        assert coh.max() < 1.0

    def test_rejects_non_uniform_delays(self, cfg):
        g = build_nominal_grid(cfg)
        with pytest.raises(ValueError):
            build_dictionary(g, AntennaGains.flat(256), [0.0, 1e-9, 3e-9])


class TestChannels:
    def test_single_on_grid_path_equals_gains(self, real_system):
        grid, gains = real_system
        ch = channel_from_paths(grid, gains, [PathComponent(1.0, 0.0)])
        np.testing.assert_array_equal(ch.h, gains.gains)

    def test_self_consistent(self, real_system, delays):
        grid, gains = real_system
        rng = np.random.default_rng(5)
        for lp in range(1, 11):
            ch = generate_channel(grid, gains, lp, rng, delays[-1])
            rebuilt = channel_from_paths(grid, gains, ch.paths).h
            assert np.linalg.norm(rebuilt - ch.h) / np.linalg.norm(ch.h) < 1e-10
            assert len(ch.paths) == lp
            assert np.vdot(ch.h, ch.h).real == pytest.approx(256, rel=1e-12)

    def test_delays_in_range(self, real_system, delays):
        grid, gains = real_system
        rng = np.random.default_rng(11)
        tmax = delays[-1]
        taus = [p.tau_s for _ in range(10_000) for p in generate_channel(grid, gains, 1, rng, tmax).paths]
        assert min(taus) >= 0 and max(taus) <= 0.8 * tmax

    def test_on_grid_flag(self, real_system, delays):
        grid, gains = real_system
        step = delays[1]
        ch = generate_channel(grid, gains, 5, np.random.default_rng(2), delays[-1], on_grid_step=step)
        k = np.array([p.tau_s for p in ch.paths]) / step
        np.testing.assert_allclose(k, np.round(k), atol=1e-9)

    @pytest.mark.parametrize("lp", [0, 11])
    def test_path_count_bounds(self, real_system, lp):
        grid, gains = real_system
        with pytest.raises(ValueError):
            generate_channel(grid, gains, lp, np.random.default_rng(0), 1e-6)


class TestNoise:
    def test_infinite_snr(self):
        h = np.ones(4, dtype=complex)
        obs = add_noise(h, math.inf, np.random.default_rng(0))
        np.testing.assert_array_equal(obs.x, h)
        assert obs.noise_var == 0.0

    def test_zero_channel_rejected(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros(4, dtype=complex), 10.0, np.random.default_rng(0))

    @pytest.mark.parametrize("snr", [10.0, 5.0])
    def test_empirical_noise_power(self, snr):
        rng = np.random.default_rng(99)
        h = np.exp(1j * rng.uniform(0, 6.28, 256))
        s2 = 10 ** (-snr / 10)
        power = [np.mean(np.abs(add_noise(h, snr, rng).x - h) ** 2) for _ in range(10_000)]
        assert abs(np.mean(power) / s2 - 1) < 0.02

    @settings(max_examples=50, deadline=None)
    @given(snr=st.floats(-20, 40), scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**31))
    def test_snr_definition(self, snr, scale, seed):
        rng = np.random.default_rng(seed)
        h = scale * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
        obs = add_noise(ChannelSample(h), snr, rng)
        got = 10 * math.log10(np.vdot(h, h).real / (16 * obs.noise_var))
        assert got == pytest.approx(snr, abs=1e-9)
