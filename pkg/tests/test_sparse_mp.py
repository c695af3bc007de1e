import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpnet_ofdm.signal_core import (
    AntennaGains,
    Dictionary,
    PathComponent,
    SubcarrierGrid,
    add_noise,
    build_delay_grid,
    build_dictionary,
    build_nominal_grid,
    channel_from_paths,
    generate_channel,
)
from mpnet_ofdm.sparse_mp import (
    HierarchicalSearch,
    HierarchyConfig,
    MetaAtom,
    branching_cost,
    build_meta_atoms,
    exhaustive_argmax,
    hierarchical_argmax,
    meta_atom_vectors,
    meta_correlation_response,
    mp_denoise,
    mp_denoise_batch,
    mp_denoise_hierarchical,
    optimal_branching,
    reference_freq,
    sc2_threshold,
)


def _on_grid(dictionary, bins, amps=None):
    grid, gains = dictionary.grid, dictionary.gains
    amps = np.ones(len(bins)) if amps is None else amps
    paths = [PathComponent(complex(a), float(dictionary.delays_s[b])) for a, b in zip(amps, bins)]
    return channel_from_paths(grid, gains, paths).h


class TestThreshold:
    def test_zero_noise(self):
        assert sc2_threshold(0.0, 4, np.ones(4)) == 0.0

    def test_formula(self):
        x = np.array([2.0, 2.0, 0.0, 0.0])
        assert sc2_threshold(1.0, 4, x) == 0.5

    def test_expected_at_10db(self, real_system, delays):
        grid, gains = real_system
        rng = np.random.default_rng(0)
        eps = []
        for _ in range(2000):
            ch = generate_channel(grid, gains, int(rng.integers(1, 11)), rng, delays[-1])
            obs = add_noise(ch, 10.0, rng)
            eps.append(sc2_threshold(obs.noise_var, 256, obs.x))
        assert np.mean(eps) == pytest.approx(1 / 11, rel=0.01)

    def test_zero_input(self):
        with pytest.raises(ValueError):
            sc2_threshold(1.0, 4, np.zeros(4))


class TestMatchingPursuit:
    def test_single_path_exact(self, real_dict):
        for b in (0, 17, 500, 989):
            res = mp_denoise(real_dict, _on_grid(real_dict, [b]), 0.0)
            assert res.indices == [b] and res.n_iterations == 1
            h = _on_grid(real_dict, [b])
            assert np.sum(np.abs(res.h_hat - h) ** 2) / np.sum(np.abs(h) ** 2) < 1e-20
            # exact fit: the residual vanishes after one layer
            assert res.residual_history[1] < 1e-28

    def test_three_separated_paths(self, real_dict):
        rng = np.random.default_rng(3)
        for _ in range(20):
            bins = np.sort(rng.choice(np.arange(0, 990, 8), 3, replace=False))
            amps = np.exp(1j * rng.uniform(0, 2 * np.pi, 3)) * rng.uniform(0.5, 1.0, 3)
            h = _on_grid(real_dict, bins, amps)
            # MP is not orthogonal: the first three picks are the true bins, and
            # with room to iterate it converges on exactly that support
            res = mp_denoise(real_dict, h, 0.0, max_iter=3)
            assert sorted(res.indices) == sorted(bins.tolist())
            res = mp_denoise(real_dict, h, 0.0, max_iter=200)
            assert set(res.indices) == set(bins.tolist())
            assert np.sum(np.abs(res.h_hat - h) ** 2) / np.sum(np.abs(h) ** 2) < 1e-20

    def test_orthogonal_input(self):
        atoms = np.eye(4, dtype=complex)[:, :2]
        d = Dictionary(atoms, np.array([0.0, 1.0]), SubcarrierGrid(np.arange(4.0)), AntennaGains.flat(4))
        x = np.array([0, 0, 0, 1.0 + 0j])
        res = mp_denoise(d, x, 0.0, max_iter=5)
        assert res.n_iterations == 5 and res.truncated
        np.testing.assert_array_equal(res.h_hat, 0)
        assert res.indices == [0] * 5

    def test_ties_go_to_lowest_index(self):
        atoms = np.array([[1, 0], [0, 1]], dtype=complex)
        i, n = exhaustive_argmax(atoms, np.array([1.0, -1.0], dtype=complex))
        assert (i, n) == (0, 2)

    def test_reconstruction_identity(self, real_dict):
        rng = np.random.default_rng(8)
        ch = generate_channel(real_dict.grid, real_dict.gains, 6, rng, real_dict.delays_s[-1])
        obs = add_noise(ch, 10.0, rng)
        res = mp_denoise(real_dict, obs.x, obs.noise_var)
        np.testing.assert_allclose(res.h_hat / res.scale + res.residual, obs.x / res.scale, rtol=0, atol=1e-14)
        assert res.n_correlations == 990 * res.n_iterations

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), snr=st.floats(-5, 30), lp=st.integers(1, 10))
    def test_residual_monotone(self, real_dict, seed, snr, lp):
        rng = np.random.default_rng(seed)
        ch = generate_channel(real_dict.grid, real_dict.gains, lp, rng, real_dict.delays_s[-1])
        obs = add_noise(ch, snr, rng)
        res = mp_denoise(real_dict, obs.x, obs.noise_var)
        hist = np.array(res.residual_history)
        assert np.all(np.diff(hist) <= 1e-15)
        assert res.n_iterations <= 10

    def test_energy_split(self, real_dict):
        rng = np.random.default_rng(9)
        obs = add_noise(generate_channel(real_dict.grid, real_dict.gains, 4, rng, 4e-6), 10.0, rng)
        res = mp_denoise(real_dict, obs.x, obs.noise_var)
        xb, r = obs.x / res.scale, res.residual
        est = xb - r
        lhs = np.vdot(xb, xb).real
        rhs = np.vdot(est, est).real + np.vdot(r, r).real + 2 * np.vdot(est, r).real
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_deterministic(self, real_dict):
        rng = np.random.default_rng(4)
        obs = add_noise(generate_channel(real_dict.grid, real_dict.gains, 7, rng, 4e-6), 5.0, rng)
        a = mp_denoise(real_dict, obs.x, obs.noise_var)
        b = mp_denoise(real_dict, obs.x, obs.noise_var)
        assert a.selected == b.selected
        np.testing.assert_array_equal(a.h_hat, b.h_hat)

    def test_batch_matches_single(self, nominal_dict, real_system):
        grid, gains = real_system
        rng = np.random.default_rng(12)
        obs = [add_noise(generate_channel(grid, gains, 5, rng, 4e-6), 10.0, rng) for _ in range(30)]
        X = np.stack([o.x for o in obs], axis=1)
        H, layers = mp_denoise_batch(nominal_dict.atoms, X, [o.noise_var for o in obs])
        for b, o in enumerate(obs):
            res = mp_denoise(nominal_dict, o.x, o.noise_var)
            assert layers[b] == res.n_iterations
            np.testing.assert_allclose(H[:, b], res.h_hat, rtol=0, atol=1e-12)


class TestMetaAtoms:
    def test_two_windows_geometry(self, cfg, delays):
        tmax = delays[-1]
        metas = build_meta_atoms(build_nominal_grid(cfg), (0.0, tmax), 2)
        assert [m.tau_center_s for m in metas] == pytest.approx([tmax / 4, 3 * tmax / 4])
        for m in metas:
            assert np.linalg.norm(m.vector) == pytest.approx(1.0, abs=1e-12)
            assert m.width_s > 0

    def test_window_response(self, cfg, delays):
        grid, gains = build_nominal_grid(cfg), AntennaGains.flat(256)
        step = delays[1]
        span = 990 * step
        taus = np.arange(0, span, step / 4)
        for m in build_meta_atoms(grid, (0.0, span), 3, gains):
            r = meta_correlation_response(m, grid, gains, taus)
            inside = np.abs(taus - m.tau_center_s) <= m.width_s / 2
            assert r[inside].mean() / r[~inside].mean() > 3
            k = np.argmin(np.abs(taus - m.tau_center_s))
            assert r[k] >= 0.9 * r.max()
            far = np.abs(taus - m.tau_center_s) >= 2 * m.width_s
            assert np.all(r[far] < 0.3 * r.max())

    def test_width_scales(self, cfg, delays):
        grid, gains = build_nominal_grid(cfg), AntennaGains.flat(256)
        step = delays[1]
        c = 495 * step
        taus = np.arange(0, 990 * step, step / 8)
        widths = []
        for k in (40, 80, 160):
            vec = meta_atom_vectors(grid.freqs_hz, gains.gains, reference_freq(grid), [c], [k * step])[0]
            r = meta_correlation_response(MetaAtom(vec, c, k * step), grid, gains, taus)
            above = taus[r >= r.max() / 2]
            widths.append(above.max() - above.min())
            assert abs(widths[-1] - k * step) <= step
        assert abs(widths[1] - 2 * widths[0]) <= 2 * step

    def test_narrow_limit_is_plain_frv(self, cfg):
        grid, gains = build_nominal_grid(cfg), AntennaGains.flat(256)
        vec = meta_atom_vectors(grid.freqs_hz, gains.gains, reference_freq(grid), [1e-6], [1e-15])[0]
        d = build_dictionary(grid, gains, [1e-6])
        assert abs(np.vdot(vec, d.atoms[:, 0])) == pytest.approx(1.0, abs=1e-9)

    def test_bad_args(self, cfg):
        grid = build_nominal_grid(cfg)
        with pytest.raises(ValueError):
            build_meta_atoms(grid, (1.0, 1.0), 3)
        with pytest.raises(ValueError):
            build_meta_atoms(grid, (0.0, 1.0), 1)
        with pytest.raises(ValueError):
            HierarchyConfig(1)


class TestHierarchical:
    @pytest.mark.parametrize("n", [2, 3])
    def test_counter_bound(self, nominal_dict, n):
        s = HierarchicalSearch.for_dictionary(nominal_dict, n)
        bound = n * math.ceil(math.log(990, n)) + n
        rng = np.random.default_rng(n)
        for _ in range(100):
            r = rng.standard_normal(256) + 1j * rng.standard_normal(256)
            _, count = s.argmax(r)
            assert count <= bound
        assert HierarchyConfig(n).correlation_bound(990) == bound

    def test_bound_is_24_for_ternary(self):
        assert HierarchyConfig(3).correlation_bound(990) == 24

    @pytest.mark.parametrize("n", [2, 3])
    def test_single_path_agreement(self, real_dict, n):
        for b in range(0, 990, 7):
            h = _on_grid(real_dict, [b])
            idx, _ = hierarchical_argmax(real_dict, h / np.linalg.norm(h), n)
            assert idx == exhaustive_argmax(real_dict.atoms, h / np.linalg.norm(h))[0]

    @pytest.mark.parametrize("n", [2, 3])
    def test_small_dictionary_agreement(self, cfg, n):
        grid, gains = build_nominal_grid(cfg), AntennaGains.flat(256)
        d = build_dictionary(grid, gains, build_delay_grid(cfg, 256, 4))
        s = HierarchicalSearch.for_dictionary(d, n)
        rng = np.random.default_rng(n)
        bins = rng.integers(0, 256, 1000)
        amps = np.exp(1j * rng.uniform(0, 2 * np.pi, 1000))
        hits = sum(s.argmax(amps[k] * d.atoms[:, b])[0] == b for k, b in enumerate(bins))
        assert hits / 1000 >= 0.99

    def test_leaf_only_is_exhaustive(self, cfg):
        grid, gains = build_nominal_grid(cfg), AntennaGains.flat(256)
        d = build_dictionary(grid, gains, build_delay_grid(cfg, 3, 4))
        s = HierarchicalSearch.for_dictionary(d, 3)
        rng = np.random.default_rng(0)
        for _ in range(20):
            r = rng.standard_normal(256) + 1j * rng.standard_normal(256)
            assert s.argmax(r) == exhaustive_argmax(d.atoms, r)
        assert s.depth == 0

    @pytest.mark.parametrize("n", [2, 3])
    def test_three_paths_mostly_same_selection(self, real_dict, n):
        # Window correlations add the paths coherently, so unlucky phase
        # combinations cancel inside a window; agreement is high, not total.
        rng = np.random.default_rng(21)
        same = 0
        for _ in range(200):
            bins = np.sort(rng.choice(np.arange(0, 990, 8), 3, replace=False))
            h = _on_grid(real_dict, bins, np.exp(1j * rng.uniform(0, 2 * np.pi, 3)))
            a = mp_denoise(real_dict, h, 0.0, 3)
            b = mp_denoise_hierarchical(real_dict, h, 0.0, 3, n)
            same += sorted(b.indices) == sorted(a.indices)
            assert b.n_correlations <= 3 * HierarchyConfig(n).correlation_bound(990)
        assert same / 200 >= 0.85


class TestBranching:
    @pytest.mark.parametrize("a", [2, 10, 990, 50_000])
    def test_optimal_is_three(self, a):
        assert optimal_branching(a) == 3

    def test_objective_values(self):
        assert branching_cost(2, math.e) == pytest.approx(2 / math.log(2))
        assert branching_cost(3, math.e) == pytest.approx(3 / math.log(3))
        assert branching_cost(2, 990) > branching_cost(3, 990) < branching_cost(4, 990)

    def test_rejects_trivial(self):
        with pytest.raises(ValueError):
            optimal_branching(1)
