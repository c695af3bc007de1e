"""Frequency-domain SISO-OFDM channel model.

Subcarrier grids (nominal and impaired), antenna gains, frequency response
vectors, delay dictionaries, synthetic multipath channels and AWGN.

Subcarriers are indexed symmetrically as ``i = -N/2, ..., N/2 - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GAIN_NORM_FLOOR = 1e-12
MAX_PATHS = 10


@dataclass(frozen=True)
class SystemConfig:
    n_subcarriers: int = 256
    center_freq_hz: float = 3.4e9
    bandwidth_hz: float = 50e6
    subcarrier_spacing_hz: float | None = None
    seed: int = 0

    def __post_init__(self):
        n = self.n_subcarriers
        if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
            raise ValueError(f"n_subcarriers must be even and >= 2, got {n!r}")
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.subcarrier_spacing_hz is None:
            object.__setattr__(self, "subcarrier_spacing_hz", self.bandwidth_hz / n)
        elif not math.isclose(self.subcarrier_spacing_hz * n, self.bandwidth_hz, rel_tol=1e-12):
            raise ValueError("subcarrier_spacing_hz * n_subcarriers must equal bandwidth_hz")

    @property
    def indices(self) -> np.ndarray:
        """Signed subcarrier indices, ascending."""
        half = self.n_subcarriers // 2
        return np.arange(-half, half, dtype=np.float64)


@dataclass(frozen=True)
class SubcarrierGrid:
    freqs_hz: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=np.float64)
        if f.ndim != 1 or f.size < 2 or np.any(np.diff(f) <= 0):
            raise ValueError("subcarrier frequencies must be a strictly increasing vector")
        object.__setattr__(self, "freqs_hz", f)

    def __len__(self):
        return self.freqs_hz.size


@dataclass(frozen=True)
class ImpairmentSpec:
    sco_ppm: float = 0.0
    cfo_hz: float = 0.0
    gain_noise_var: float = 0.0

    def __post_init__(self):
        vals = (self.sco_ppm, self.cfo_hz, self.gain_noise_var)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("impairment parameters must be finite")
        if self.sco_ppm < 0:
            raise ValueError("sco_ppm must be >= 0")
        if self.gain_noise_var < 0:
            raise ValueError("gain_noise_var must be >= 0")


@dataclass(frozen=True)
class AntennaGains:
    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.complex128)
        if g.ndim != 1:
            raise ValueError("gains must be a vector")
        if np.linalg.norm(g) < GAIN_NORM_FLOOR:
            raise ValueError("gain vector has (near) zero norm")
        object.__setattr__(self, "gains", g)

    @classmethod
    def flat(cls, n: int) -> "AntennaGains":
        return cls(np.ones(n, dtype=np.complex128))

    def __len__(self):
        return self.gains.size


@dataclass(frozen=True)
class PathComponent:
    alpha: complex
    tau_s: float

    def __post_init__(self):
        if not self.tau_s >= 0:
            raise ValueError("path delay must be >= 0")


@dataclass(frozen=True)
class ChannelSample:
    h: np.ndarray
    paths: tuple[PathComponent, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class NoisyObservation:
    x: np.ndarray
    noise_var: float
    snr_in_db: float


@dataclass(frozen=True, eq=False)
class Dictionary:
    atoms: np.ndarray
    delays_s: np.ndarray
    grid: SubcarrierGrid
    gains: AntennaGains

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def delay_step(self) -> float:
        return float(self.delays_s[1] - self.delays_s[0]) if self.delays_s.size > 1 else 0.0


def build_nominal_grid(cfg: SystemConfig) -> SubcarrierGrid:
    return SubcarrierGrid(cfg.center_freq_hz + cfg.indices * cfg.subcarrier_spacing_hz)


def apply_sco(grid: SubcarrierGrid, cfg: SystemConfig, xi_ppm: float) -> SubcarrierGrid:
    """Shift subcarrier ``i`` by ``i * xi * df`` (sampling clock offset)."""
    shift = cfg.indices * (xi_ppm * 1e-6 * cfg.subcarrier_spacing_hz)
    return SubcarrierGrid(grid.freqs_hz + shift)


def apply_cfo(grid: SubcarrierGrid, delta_f_hz: float) -> SubcarrierGrid:
    return SubcarrierGrid(grid.freqs_hz + delta_f_hz)


def sample_gain_noise(nominal: AntennaGains, sigma2_g: float, rng: np.random.Generator) -> AntennaGains:
    """Perturb gains with real additive Gaussian noise of variance ``sigma2_g``."""
    if sigma2_g < 0:
        raise ValueError("gain noise variance must be >= 0")
    if sigma2_g == 0:
        return nominal
    noise = rng.normal(0.0, math.sqrt(sigma2_g), size=len(nominal))
    return AntennaGains(nominal.gains + noise)


def impaired_system(cfg: SystemConfig, imp: ImpairmentSpec, rng: np.random.Generator,
                    nominal_gains: AntennaGains | None = None):
    """Draw one hardware realization: returns (real_grid, real_gains)."""
    if nominal_gains is None:
        nominal_gains = AntennaGains.flat(cfg.n_subcarriers)
    grid = build_nominal_grid(cfg)
    if imp.sco_ppm:
        grid = apply_sco(grid, cfg, imp.sco_ppm)
    if imp.cfo_hz:
        grid = apply_cfo(grid, imp.cfo_hz)
    return grid, sample_gain_noise(nominal_gains, imp.gain_noise_var, rng)


def delay_phasors(base_freqs_hz, f_ref_hz: float, delays_s) -> np.ndarray:
    """``exp(-j 2 pi (f_ref + b_k) tau_a)`` as an N x A matrix.

    The carrier and baseband phases are evaluated separately: folding small
    offsets into ~GHz absolute frequencies would discard their low bits.
    """
    delays_s = np.atleast_1d(np.asarray(delays_s, dtype=np.float64))
    carrier = np.exp(-2j * np.pi * f_ref_hz * delays_s)
    return np.exp(-2j * np.pi * np.outer(base_freqs_hz, delays_s)) * carrier


def split_freqs(freqs_hz):
    """Absolute grid -> (baseband offsets, reference = frequency of index 0)."""
    f = np.asarray(freqs_hz, dtype=np.float64)
    f_ref = float(f[f.size // 2])
    return f - f_ref, f_ref


def frv(grid: SubcarrierGrid, gains: AntennaGains, tau_s: float) -> np.ndarray:
    """Unnormalized frequency response vector ``g_k exp(-j 2 pi f_k tau)``."""
    if tau_s < 0:
        raise ValueError("delay must be >= 0")
    return frv_matrix(grid.freqs_hz, gains.gains, [tau_s])[:, 0]


def frv_matrix(freqs_hz, gains: np.ndarray, delays_s) -> np.ndarray:
    """Columns are FRVs at ``delays_s`` (N x len(delays))."""
    base, f_ref = split_freqs(freqs_hz)
    return gains[:, None] * delay_phasors(base, f_ref, delays_s)


def normalized_atoms(base_freqs_hz, f_ref_hz: float, gains: np.ndarray, delays_s) -> np.ndarray:
    # Shared by every dictionary builder so identical inputs give identical bits.
    raw = gains[:, None] * delay_phasors(base_freqs_hz, f_ref_hz, delays_s)
    return raw / np.linalg.norm(raw, axis=0)


def build_delay_grid(cfg: SystemConfig, n_atoms: int = 990, oversampling: float = 4) -> np.ndarray:
    """Uniform delays ``a / (K * bandwidth)`` for ``a = 0 .. A-1``."""
    if n_atoms < 2:
        raise ValueError("a delay grid needs at least 2 atoms")
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    step = 1.0 / (oversampling * cfg.bandwidth_hz)
    return np.arange(n_atoms, dtype=np.float64) * step


def build_dictionary(grid: SubcarrierGrid, gains: AntennaGains, delays_s) -> Dictionary:
    delays = np.asarray(delays_s, dtype=np.float64)
    if delays.ndim != 1 or delays.size < 1:
        raise ValueError("delays must be a non-empty vector")
    if delays.size > 1:
        steps = np.diff(delays)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("delays must be strictly increasing and uniformly spaced")
    if len(gains) != len(grid):
        raise ValueError("gain vector and grid lengths differ")
    atoms = normalized_atoms(*split_freqs(grid.freqs_hz), gains.gains, delays)
    return Dictionary(atoms, delays, grid, gains)


def channel_from_paths(grid: SubcarrierGrid, gains: AntennaGains, paths) -> ChannelSample:
    paths = tuple(paths)
    if not paths:
        raise ValueError("a channel needs at least one path")
    alphas = np.array([p.alpha for p in paths], dtype=np.complex128)
    taus = np.array([p.tau_s for p in paths], dtype=np.float64)
    h = frv_matrix(grid.freqs_hz, gains.gains, taus) @ alphas
    return ChannelSample(h, paths)


def generate_channel(real_grid: SubcarrierGrid, real_gains: AntennaGains, n_paths: int,
                     rng: np.random.Generator, tau_max_s: float, decay_db: float = 20.0,
                     on_grid_step: float | None = None, normalize: bool = True) -> ChannelSample:
    """Draw a random multipath channel.

    Delays are uniform on ``[0, 0.8 * tau_max_s]``; path power decays
    exponentially by ``decay_db`` over ``tau_max_s`` and phases are uniform.
    With ``on_grid_step`` the delays are snapped to multiples of that step.
    With ``normalize`` the path amplitudes are scaled so that ``||h||^2 = N``.
    """
    if not 1 <= n_paths <= MAX_PATHS:
        raise ValueError(f"n_paths must lie in [1, {MAX_PATHS}], got {n_paths}")
    taus = rng.uniform(0.0, 0.8 * tau_max_s, size=n_paths)
    if on_grid_step is not None:
        taus = np.round(taus / on_grid_step) * on_grid_step
    power_db = -decay_db * taus / tau_max_s
    amp = 10.0 ** (power_db / 20.0)
    phase = rng.uniform(0.0, 2 * np.pi, size=n_paths)
    alphas = amp * np.exp(1j * phase)
    if normalize:
        h = frv_matrix(real_grid.freqs_hz, real_gains.gains, taus) @ alphas
        alphas = alphas * math.sqrt(len(real_grid)) / np.linalg.norm(h)
    paths = tuple(PathComponent(complex(a), float(t)) for a, t in zip(alphas, taus))
    return channel_from_paths(real_grid, real_gains, paths)


def add_noise(h: ChannelSample | np.ndarray, snr_in_db: float, rng: np.random.Generator) -> NoisyObservation:
    """Return ``x = h + n`` with ``sigma^2 = ||h||^2 / (N 10^(snr/10))``.

    ``snr_in_db = inf`` yields the noiseless observation.
    """
    vec = h.h if isinstance(h, ChannelSample) else np.asarray(h, dtype=np.complex128)
    energy = float(np.vdot(vec, vec).real)
    if energy == 0.0:
        raise ValueError("cannot set an SNR on a zero-energy channel")
    if math.isnan(snr_in_db):
        raise ValueError("SNR must not be NaN")
    if math.isinf(snr_in_db) and snr_in_db > 0:
        return NoisyObservation(vec.copy(), 0.0, snr_in_db)
    n = vec.size
    sigma2 = energy / (n * 10.0 ** (snr_in_db / 10.0))
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return NoisyObservation(vec + math.sqrt(sigma2 / 2.0) * noise, sigma2, snr_in_db)
