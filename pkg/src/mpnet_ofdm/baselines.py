"""Frozen reference estimators: LS, dictionary MP and low-rank MMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .signal_core import Dictionary, NoisyObservation, SystemConfig, build_nominal_grid
from .sparse_mp import DEFAULT_MAX_ITER, mp_denoise, mp_denoise_batch


def ls_estimate(obs: NoisyObservation | np.ndarray) -> np.ndarray:
    # the observation already is the LS estimate
    x = obs.x if isinstance(obs, NoisyObservation) else obs
    return np.array(x, dtype=np.complex128)


@dataclass(frozen=True)
class LraMmseModel:
    """Linear MMSE with a substituted, rank-truncated covariance.

    The covariance has unit diagonal (unit mean per-subcarrier channel power);
    ``sigma2`` is the noise variance relative to that power.
    """

    covariance: np.ndarray
    rank: int
    assumed_delay_spread_s: float
    sigma2: float
    filter: np.ndarray

    def estimate(self, x) -> np.ndarray:
        return self.filter @ np.asarray(x, dtype=np.complex128)


def uniform_pdp_covariance(freqs_hz, delay_spread_s: float) -> np.ndarray:
    """Frequency correlation of a uniform power-delay profile on ``[0, T]``."""
    df = np.subtract.outer(freqs_hz, freqs_hz)
    return np.sinc(df * delay_spread_s) * np.exp(-1j * np.pi * df * delay_spread_s)


def build_lra_mmse(cfg: SystemConfig, sigma2: float, delay_spread_s: float, rank: int | None = None) -> LraMmseModel:
    if not delay_spread_s > 0:
        raise ValueError("assumed delay spread must be positive")
    if sigma2 < 0:
        raise ValueError("noise variance must be >= 0")
    n = cfg.n_subcarriers
    if rank is None:
        rank = math.ceil(delay_spread_s * cfg.bandwidth_hz) + 1
    rank = int(min(max(rank, 1), n))
    base = build_nominal_grid(cfg).freqs_hz - cfg.center_freq_hz
    C = uniform_pdp_covariance(base, delay_spread_s)
    C = 0.5 * (C + C.conj().T)
    lam, U = np.linalg.eigh(C)
    lam = np.clip(lam, 0.0, None)
    top = np.argsort(lam)[::-1][:rank]
    lam_r, U_r = lam[top], U[:, top]
    C_r = (U_r * lam_r) @ U_r.conj().T
    C_r = 0.5 * (C_r + C_r.conj().T)
    # F = C_r (C_r + s I)^-1 = U diag(l / (l + s)) U^H on the retained subspace
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(lam_r + sigma2 > 0, lam_r / (lam_r + sigma2), 0.0)
    F = (U_r * shrink) @ U_r.conj().T
    return LraMmseModel(C_r, rank, delay_spread_s, sigma2, F)


def lra_mmse_estimate(model: LraMmseModel, obs: NoisyObservation | np.ndarray, sigma2: float | None = None,
                      rel_tol: float = 0.1) -> np.ndarray:
    """Apply the precomputed filter; refuses observations with a different noise level.

    Channels are taken to have unit mean per-subcarrier power, so an
    observation's ``noise_var`` is directly comparable to ``model.sigma2``.
    """
    if isinstance(obs, NoisyObservation):
        x = obs.x
        if sigma2 is None:
            sigma2 = obs.noise_var
    else:
        x = obs
    if sigma2 is not None:
        ref = model.sigma2
        if abs(sigma2 - ref) > rel_tol * max(ref, 1e-300) and not (ref == 0 and sigma2 == 0):
            raise ValueError(f"filter built for sigma2={ref:g}, observation has {sigma2:g}")
    return model.estimate(x)


def mp_with(dictionary: Dictionary, x, sigma2: float, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    return mp_denoise(dictionary, x, sigma2, max_iter).h_hat


def mp_nominal(nominal: Dictionary, x, sigma2: float, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    return mp_with(nominal, x, sigma2, max_iter)


def mp_real(real: Dictionary, x, sigma2: float, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    return mp_with(real, x, sigma2, max_iter)


def mp_batch(dictionary: Dictionary, X, sigma2, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    return mp_denoise_batch(dictionary.atoms, X, sigma2, max_iter)[0]
