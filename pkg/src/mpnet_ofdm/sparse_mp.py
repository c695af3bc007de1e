"""Matching Pursuit denoising and hierarchical meta-atom atom search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .signal_core import AntennaGains, Dictionary, SubcarrierGrid, delay_phasors, frv_matrix

DEFAULT_MAX_ITER = 10
# residual energy of the unit-norm input treated as an exact fit (-240 dB)
EXACT_FIT = 1e-24


@dataclass
class PursuitResult:
    """Output of one pursuit run.

    ``residual`` lives in the normalized domain (input scaled to unit norm);
    ``h_hat + scale * residual`` reproduces ``x`` up to rounding.
    """

    h_hat: np.ndarray
    residual: np.ndarray
    selected: list[tuple[int, complex]]
    n_iterations: int
    n_correlations: int
    scale: float = 1.0
    truncated: bool = False
    residual_history: list[float] = field(default_factory=list)

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.selected]


@dataclass(frozen=True)
class MetaAtom:
    vector: np.ndarray
    tau_center_s: float
    width_s: float


@dataclass(frozen=True)
class HierarchyConfig:
    branching: int = 3

    def __post_init__(self):
        if self.branching < 2:
            raise ValueError("branching must be >= 2")

    def levels(self, n_atoms: int) -> int:
        return max(1, math.ceil(math.log(n_atoms) / math.log(self.branching) - 1e-12))

    def correlation_bound(self, n_atoms: int) -> int:
        n = self.branching
        return n * self.levels(n_atoms) + n


def sc2_threshold(sigma2: float, n_subcarriers: int, x) -> float:
    """Stopping tolerance ``sigma^2 N / ||x||^2`` on the normalized residual energy."""
    energy = float(np.vdot(x, x).real)
    if energy == 0.0:
        raise ValueError("SC2 threshold is undefined for a zero input")
    return sigma2 * n_subcarriers / energy


def exhaustive_argmax(atoms: np.ndarray, r: np.ndarray):
    # r^H W gives conj(W^H r) without materializing W^H.
    corr = r.conj() @ atoms
    i = int(np.argmax(corr.real ** 2 + corr.imag ** 2))
    return i, atoms.shape[1]


def run_pursuit(atoms: np.ndarray, x: np.ndarray, sigma2: float, max_iter: int, select) -> PursuitResult:
    """Core greedy loop shared by MP and the unfolded network.

    ``select(r) -> (index, n_correlations)`` picks the next atom.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    x = np.asarray(x, dtype=np.complex128)
    scale = float(np.linalg.norm(x))
    eps = max(sc2_threshold(sigma2, x.size, x), EXACT_FIT)
    xb = x / scale
    r = xb.copy()
    energy = float(np.vdot(r, r).real)
    history = [energy]
    selected = []
    n_corr = 0
    while energy > eps and len(selected) < max_iter:
        i, cost = select(r)
        n_corr += cost
        w = atoms[:, i]
        c = np.vdot(w, r)
        r = r - w * c
        selected.append((i, complex(c)))
        energy = float(np.vdot(r, r).real)
        history.append(energy)
    truncated = energy > eps and len(selected) >= max_iter
    h_hat = scale * (xb - r)
    return PursuitResult(h_hat, r, selected, len(selected), n_corr, scale, truncated, history)


def mp_denoise(dictionary: Dictionary, x, sigma2: float, max_iter: int = DEFAULT_MAX_ITER) -> PursuitResult:
    atoms = dictionary.atoms
    if atoms.shape[1] < 1:
        raise ValueError("dictionary has no atoms")
    return run_pursuit(atoms, x, sigma2, max_iter, lambda r: exhaustive_argmax(atoms, r))


def mp_denoise_batch(atoms: np.ndarray, X: np.ndarray, sigma2, max_iter: int = DEFAULT_MAX_ITER):
    """Vectorized exhaustive MP over the columns of ``X`` (N x B).

    Returns ``(H_hat, n_layers)``. Selections match ``mp_denoise`` per column;
    outputs agree to rounding (matrix-matrix vs matrix-vector summation order).
    """
    X = np.asarray(X, dtype=np.complex128)
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (X.shape[1],))
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0):
        raise ValueError("SC2 threshold is undefined for a zero input")
    eps = np.maximum(sigma2 * X.shape[0] / scale ** 2, EXACT_FIT)
    Xb = X / scale
    R = Xb.copy()
    layers = np.zeros(X.shape[1], dtype=int)
    for _ in range(max_iter):
        energy = np.einsum("ij,ij->j", R.conj(), R).real
        active = np.flatnonzero(energy > eps)
        if active.size == 0:
            break
        Ra = R[:, active]
        corr = atoms.conj().T @ Ra
        idx = np.argmax(corr.real ** 2 + corr.imag ** 2, axis=0)
        coef = corr[idx, np.arange(active.size)]
        R[:, active] = Ra - atoms[:, idx] * coef
        layers[active] += 1
    return scale * (Xb - R), layers


def reference_freq(grid: SubcarrierGrid) -> float:
    """Frequency of subcarrier index 0, used as the baseband origin."""
    f = grid.freqs_hz
    return float(f[f.size // 2])


def meta_atom_vectors(freqs_hz, gains, f_ref, centers_s, widths_s) -> np.ndarray:
    """Unit-norm sinc-modulated FRVs, one per row (k x N)."""
    centers = np.atleast_1d(np.asarray(centers_s, dtype=np.float64))
    widths = np.atleast_1d(np.asarray(widths_s, dtype=np.float64))
    base = freqs_hz - f_ref
    v = gains[None, :] * np.sinc(np.outer(widths, base)) * delay_phasors(base, f_ref, centers).T
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def build_meta_atoms(grid: SubcarrierGrid, interval, n: int, gains: AntennaGains | None = None,
                     f_ref: float | None = None) -> list[MetaAtom]:
    """Split ``interval`` into ``n`` equal windows and build one meta-atom each."""
    lo, hi = map(float, interval)
    if not hi > lo:
        raise ValueError("meta-atom interval is empty")
    if n < 2:
        raise ValueError("branching must be >= 2")
    g = np.ones(len(grid), dtype=np.complex128) if gains is None else gains.gains
    f_ref = reference_freq(grid) if f_ref is None else f_ref
    w = (hi - lo) / n
    centers = lo + (np.arange(n) + 0.5) * w
    vecs = meta_atom_vectors(grid.freqs_hz, g, f_ref, centers, np.full(n, w))
    return [MetaAtom(vecs[m], float(centers[m]), w) for m in range(n)]


def meta_correlation_response(meta: MetaAtom, grid: SubcarrierGrid, gains: AntennaGains, taus) -> np.ndarray:
    """``|<frv(tau), meta>|`` over ``taus`` with each FRV unit-normalized."""
    taus = np.asarray(taus, dtype=np.float64)
    frvs = frv_matrix(grid.freqs_hz, gains.gains, taus)
    frvs /= np.linalg.norm(frvs, axis=0)
    return np.abs(meta.vector.conj() @ frvs)


class HierarchicalSearch:
    """n-ary meta-atom tree over a uniform delay dictionary.

    Each internal node owns an index range of atoms and a stacked block of
    its children's (conjugated) meta-atoms. Ranges are split in chunks of
    ``ceil(size / n)``; nodes with ``<= n`` atoms are leaves searched directly.
    """

    def __init__(self, atoms: np.ndarray, freqs_hz, gains, delays_s, branching: int = 3,
                 f_ref: float | None = None):
        if atoms.shape[1] < 1:
            raise ValueError("dictionary has no atoms")
        if branching < 2:
            raise ValueError("branching must be >= 2")
        self.atoms = atoms
        self.branching = branching
        freqs_hz = np.asarray(freqs_hz, dtype=np.float64)
        delays_s = np.asarray(delays_s, dtype=np.float64)
        if f_ref is None:
            f_ref = float(freqs_hz[freqs_hz.size // 2])
        step = float(delays_s[1] - delays_s[0]) if delays_s.size > 1 else 1.0
        # node arrays: ranges, child ids, conj meta blocks; leaves have no block
        self._lo: list[int] = []
        self._hi: list[int] = []
        self._children: list[list[int]] = []
        self._blocks: list[np.ndarray | None] = []
        ranges = []
        self._add_node(0, atoms.shape[1])
        # breadth-first, so parents are expanded in node-id order
        node = -1
        while node + 1 < len(self._lo):
            node += 1
            lo, hi = self._lo[node], self._hi[node]
            if hi - lo <= branching:
                continue
            chunk = -(-(hi - lo) // branching)
            kids = []
            for start in range(lo, hi, chunk):
                stop = min(start + chunk, hi)
                kid = self._add_node(start, stop)
                kids.append(kid)
                ranges.append((node, start, stop))
            self._children[node] = kids
        # all meta-atoms in one vectorized pass, then sliced per parent
        if ranges:
            starts = np.array([r[1] for r in ranges])
            stops = np.array([r[2] for r in ranges])
            centers = 0.5 * (delays_s[starts] + delays_s[stops - 1])
            widths = (stops - starts) * step
            vecs = np.empty((len(ranges), freqs_hz.size), dtype=np.complex128)
            gains = np.asarray(gains, dtype=np.complex128)
            for s in range(0, len(ranges), 4096):
                sl = slice(s, s + 4096)
                vecs[sl] = meta_atom_vectors(freqs_hz, gains, f_ref, centers[sl], widths[sl])
            vecs = vecs.conj()
            pos = 0
            for node in range(len(self._lo)):
                k = len(self._children[node])
                if k:
                    self._blocks[node] = vecs[pos:pos + k]
                    pos += k
            self.meta_centers = centers
            self.meta_widths = widths
        self.n_meta_atoms = len(ranges)

    def _add_node(self, lo, hi):
        self._lo.append(lo)
        self._hi.append(hi)
        self._children.append([])
        self._blocks.append(None)
        return len(self._lo) - 1

    @classmethod
    def for_dictionary(cls, dictionary: Dictionary, cfg: HierarchyConfig | int = 3):
        n = cfg.branching if isinstance(cfg, HierarchyConfig) else int(cfg)
        return cls(dictionary.atoms, dictionary.grid.freqs_hz, dictionary.gains.gains,
                   dictionary.delays_s, n, reference_freq(dictionary.grid))

    @property
    def depth(self) -> int:
        d, node = 0, 0
        while self._children[node]:
            node = self._children[node][0]
            d += 1
        return d

    def argmax(self, r: np.ndarray):
        """Return ``(atom_index, n_correlations)``; ties go to the earliest child."""
        node, count = 0, 0
        children, blocks = self._children, self._blocks
        while children[node]:
            c = blocks[node] @ r
            count += c.size
            node = children[node][int(np.argmax(c.real ** 2 + c.imag ** 2))]
        lo, hi = self._lo[node], self._hi[node]
        c = r.conj() @ self.atoms[:, lo:hi]
        return lo + int(np.argmax(c.real ** 2 + c.imag ** 2)), count + hi - lo

    __call__ = argmax


_SEARCH_CACHE: dict = {}


def hierarchical_argmax(dictionary: Dictionary, r, cfg: HierarchyConfig | int = 3):
    return _search_for(dictionary, cfg).argmax(np.asarray(r, dtype=np.complex128))


def _search_for(dictionary: Dictionary, cfg) -> HierarchicalSearch:
    n = cfg.branching if isinstance(cfg, HierarchyConfig) else int(cfg)
    key = (id(dictionary), n)
    hit = _SEARCH_CACHE.get(key)
    if hit is None or hit[0] is not dictionary:
        if len(_SEARCH_CACHE) > 16:
            _SEARCH_CACHE.clear()
        hit = (dictionary, HierarchicalSearch.for_dictionary(dictionary, n))
        _SEARCH_CACHE[key] = hit
    return hit[1]


def mp_denoise_hierarchical(dictionary: Dictionary, x, sigma2: float, max_iter: int = DEFAULT_MAX_ITER,
                            cfg: HierarchyConfig | int = 3, search: HierarchicalSearch | None = None) -> PursuitResult:
    search = search if search is not None else _search_for(dictionary, cfg)
    return run_pursuit(dictionary.atoms, x, sigma2, max_iter, search.argmax)


def branching_cost(n: int, n_atoms: int) -> float:
    return n * math.log(n_atoms) / math.log(n)


def optimal_branching(n_atoms: int, candidates=range(2, 17)) -> int:
    """Integer branching factor minimizing ``n log_n(A)``."""
    if n_atoms <= 1:
        raise ValueError("need more than one atom")
    return min(candidates, key=lambda n: (branching_cost(n, n_atoms), n))
