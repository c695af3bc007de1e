"""Unfolded Matching Pursuit network (mpNet) and its constrained variant.

The network weight matrix is either free (``UnconstrainedParams``, 2NA reals)
or rendered from per-subcarrier complex gains plus one sampling clock offset
(``ConstrainedParams``, 2N+1 reals). Gradients are hand-derived for this
graph: atom selections and the layer count are fixed by the forward pass and
gradients flow through the selected columns, their normalization and the
rendering.

Complex gradients follow the convention ``dL/dRe(z) + 1j * dL/dIm(z)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .signal_core import (
    AntennaGains,
    Dictionary,
    NoisyObservation,
    SystemConfig,
    build_dictionary,
    build_nominal_grid,
    delay_phasors,
    SubcarrierGrid,
)
from .sparse_mp import (
    DEFAULT_MAX_ITER,
    HierarchicalSearch,
    exhaustive_argmax,
    mp_denoise_batch,
    run_pursuit,
)

PPM = 1e-6


@dataclass
class ConstrainedParams:
    """Learnable gains ``g`` and SCO offset.

    The offset is stored in ppm of the subcarrier spacing, so the per-index
    frequency step is ``delta_f = sco_ppm * 1e-6 * df``. This is also the
    unit seen by the optimizer.
    """

    gains: np.ndarray
    sco_ppm: float = 0.0

    def __post_init__(self):
        self.gains = np.array(self.gains, dtype=np.complex128)
        self.sco_ppm = float(self.sco_ppm)
        if np.linalg.norm(self.gains) < 1e-12:
            raise ValueError("degenerate gains")

    variant = "constrained"

    @classmethod
    def nominal(cls, cfg: SystemConfig) -> "ConstrainedParams":
        return cls(np.ones(cfg.n_subcarriers, dtype=np.complex128), 0.0)

    def delta_f_hz(self, cfg: SystemConfig) -> float:
        return self.sco_ppm * PPM * cfg.subcarrier_spacing_hz

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.gains.real, self.gains.imag, [self.sco_ppm]])

    @classmethod
    def unflatten(cls, flat, n: int) -> "ConstrainedParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != 2 * n + 1:
            raise ValueError(f"expected {2 * n + 1} values, got {flat.size}")
        return cls(flat[:n] + 1j * flat[n:2 * n], float(flat[2 * n]))


@dataclass
class UnconstrainedParams:
    weights: np.ndarray

    variant = "unconstrained"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.complex128)
        if self.weights.ndim != 2:
            raise ValueError("weights must be an N x A matrix")

    @classmethod
    def from_dictionary(cls, dictionary: Dictionary) -> "UnconstrainedParams":
        return cls(dictionary.atoms.copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights.real.ravel(), self.weights.imag.ravel()])

    @classmethod
    def unflatten(cls, flat, n: int, a: int) -> "UnconstrainedParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != 2 * n * a:
            raise ValueError(f"expected {2 * n * a} values, got {flat.size}")
        half = n * a
        return cls((flat[:half] + 1j * flat[half:]).reshape(n, a))


def count_parameters(params) -> int:
    if isinstance(params, ConstrainedParams):
        return 2 * params.gains.size + 1
    if isinstance(params, UnconstrainedParams):
        return 2 * params.weights.size
    raise TypeError(f"unknown parameter type {type(params).__name__}")


def fingerprint(params) -> str:
    return hashlib.sha1(params.flatten().tobytes()).hexdigest()


def constrained_baseband(params: ConstrainedParams, cfg: SystemConfig) -> np.ndarray:
    """Baseband offsets ``i * df + i * delta_f`` of the learned grid."""
    i = cfg.indices
    return i * cfg.subcarrier_spacing_hz + i * params.delta_f_hz(cfg)


def constrained_freqs(params: ConstrainedParams, cfg: SystemConfig) -> np.ndarray:
    """Nominal subcarriers shifted by ``i * delta_f``."""
    return cfg.center_freq_hz + constrained_baseband(params, cfg)


def render_constrained(params: ConstrainedParams, cfg: SystemConfig, delays_s) -> Dictionary:
    freqs = constrained_freqs(params, cfg)
    return build_dictionary(SubcarrierGrid(freqs), AntennaGains(params.gains), delays_s)


def ht1(v) -> np.ndarray:
    """Keep the entry of largest modulus (first on ties), zero the rest."""
    v = np.asarray(v)
    out = np.zeros_like(v)
    if v.size:
        i = int(np.argmax(np.abs(v)))
        out[i] = v[i]
    return out


@dataclass
class ForwardTrace:
    indices: list[int]
    coefficients: list[complex]
    residuals: list[np.ndarray]  # r_0 (normalized input) .. r_T
    scale: float
    fingerprint: str
    n_correlations: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.indices)

    @property
    def normalized_input(self) -> np.ndarray:
        return self.residuals[0]

    @property
    def final_residual(self) -> np.ndarray:
        return self.residuals[-1]


def replay(atoms: np.ndarray, xb: np.ndarray, indices) -> np.ndarray:
    """Run the layers with the given selections; returns the final residual."""
    r = xb
    for i in indices:
        w = atoms[:, i]
        r = r - w * np.vdot(w, r)
    return r


def loss(x, h_hat) -> float:
    """Normalized-domain residual energy ``||x/||x|| - h_hat/||x|| ||^2``."""
    x = np.asarray(x, dtype=np.complex128)
    s = np.linalg.norm(x)
    d = x / s - np.asarray(h_hat) / s
    return float(np.vdot(d, d).real)


class MPNet:
    """One mpNet instance: parameters plus the rendered weight matrix.

    ``selector`` is ``"exhaustive"`` or a branching factor ``n >= 2`` for the
    hierarchical variants. The rendered dictionary (and the meta-atom tree) is
    cached until the parameters change.
    """

    def __init__(self, params, cfg: SystemConfig, delays_s, selector="exhaustive",
                 max_layers: int = DEFAULT_MAX_ITER):
        self.cfg = cfg
        self.delays_s = np.asarray(delays_s, dtype=np.float64)
        self.selector = selector
        self.max_layers = max_layers
        self._params = params
        self._atoms = None
        self._raw_norms = None
        self._search = None
        self._fp = None
        if isinstance(params, UnconstrainedParams):
            if params.weights.shape != (cfg.n_subcarriers, self.delays_s.size):
                raise ValueError("weight matrix shape does not match N x A")
        if selector != "exhaustive" and not (isinstance(selector, int) and selector >= 2):
            raise ValueError("selector must be 'exhaustive' or an integer branching >= 2")

    @property
    def params(self):
        return self._params

    @params.setter
    def params(self, value):
        self._params = value
        self._atoms = self._search = self._fp = None

    @property
    def constrained(self) -> bool:
        return isinstance(self._params, ConstrainedParams)

    @property
    def fingerprint(self) -> str:
        if self._fp is None:
            self._fp = fingerprint(self._params)
        return self._fp

    def _freqs(self):
        return self.cfg.center_freq_hz + self._baseband()

    def _constrained_phasors(self, taus):
        """``exp(-j 2 pi (f~_k + i_k delta_f) tau)``, SCO phase kept as its own factor."""
        cfg = self.cfg
        phasors = delay_phasors(cfg.indices * cfg.subcarrier_spacing_hz, cfg.center_freq_hz, taus)
        delta = self._params.delta_f_hz(cfg)
        if delta:
            phasors = phasors * np.exp(-2j * np.pi * np.outer(cfg.indices * delta, taus))
        return phasors

    def _baseband(self):
        if self.constrained:
            return constrained_baseband(self._params, self.cfg)
        return self.cfg.indices * self.cfg.subcarrier_spacing_hz

    @property
    def atoms(self) -> np.ndarray:
        if self._atoms is None:
            if self.constrained:
                raw = self._params.gains[:, None] * self._constrained_phasors(self.delays_s)
                self._atoms = raw / np.linalg.norm(raw, axis=0)
            else:
                w = self._params.weights
                self._atoms = w / np.linalg.norm(w, axis=0)
        return self._atoms

    def dictionary(self) -> Dictionary:
        gains = self._params.gains if self.constrained else np.ones(self.cfg.n_subcarriers)
        return Dictionary(self.atoms, self.delays_s, SubcarrierGrid(self._freqs()), AntennaGains(gains))

    @property
    def search(self) -> HierarchicalSearch:
        if self._search is None:
            if self.constrained:
                gains = self._params.gains
            else:
                gains = np.ones(self.cfg.n_subcarriers, dtype=np.complex128)
            # meta-atoms follow the current learned grid and gains
            self._search = HierarchicalSearch(self.atoms, self._freqs(), gains, self.delays_s,
                                              self.selector, self.cfg.center_freq_hz)
        return self._search

    def _select(self):
        if self.selector == "exhaustive":
            atoms = self.atoms
            return lambda r: exhaustive_argmax(atoms, r)
        return self.search.argmax

    def forward(self, x, sigma2: float):
        """Returns ``(h_hat, trace)``."""
        res = run_pursuit(self.atoms, x, sigma2, self.max_layers, self._select())
        xb = np.asarray(x, dtype=np.complex128) / res.scale
        residuals = [xb]
        r = xb
        atoms = self.atoms
        for i, c in res.selected:
            r = r - atoms[:, i] * c
            residuals.append(r)
        trace = ForwardTrace([i for i, _ in res.selected], [c for _, c in res.selected], residuals,
                             res.scale, self.fingerprint, res.n_correlations)
        return res.h_hat, trace

    def loss_from_trace(self, trace: ForwardTrace) -> float:
        r = trace.final_residual
        return float(np.vdot(r, r).real)

    def backward(self, trace: ForwardTrace) -> np.ndarray:
        """Gradient of the final residual energy w.r.t. the flattened parameters."""
        if trace.fingerprint != self.fingerprint:
            raise ValueError("stale trace: parameters changed since the forward pass")
        atoms = self.atoms
        g_r = 2.0 * trace.final_residual
        g_w: dict[int, np.ndarray] = {}
        for t in range(trace.n_layers - 1, -1, -1):
            i = trace.indices[t]
            c = trace.coefficients[t]
            w = atoms[:, i]
            r_prev = trace.residuals[t]
            g_c = -np.vdot(w, g_r)
            gw = -g_r * np.conj(c) + r_prev * np.conj(g_c)
            g_w[i] = g_w[i] + gw if i in g_w else gw
            g_r = g_r + w * g_c
        return self._param_grad(g_w)

    def _param_grad(self, g_w: dict[int, np.ndarray]) -> np.ndarray:
        n = self.cfg.n_subcarriers
        if not g_w:
            return np.zeros(count_parameters(self._params))
        idx = np.fromiter(g_w.keys(), dtype=int)
        G = np.stack([g_w[i] for i in idx], axis=1)
        W = self.atoms[:, idx]
        if self.constrained:
            p = self._params
            taus = self.delays_s[idx]
            E = self._constrained_phasors(taus)
            V = p.gains[:, None] * E
            norms = np.linalg.norm(V, axis=0)
        else:
            V = self._params.weights[:, idx]
            norms = np.linalg.norm(V, axis=0)
        # through column normalization w = v / ||v||
        proj = np.einsum("ka,ka->a", W.conj(), G).real
        Gv = (G - W * proj) / norms
        if not self.constrained:
            a = self.delays_s.size
            full = np.zeros((n, a), dtype=np.complex128)
            np.add.at(full, (slice(None), idx), Gv)
            return np.concatenate([full.real.ravel(), full.imag.ravel()])
        g_g = np.sum(E.conj() * Gv, axis=1)
        step = PPM * self.cfg.subcarrier_spacing_hz
        dV = V * (-2j * np.pi) * np.outer(self.cfg.indices * step, taus)
        g_sco = float(np.sum((Gv.conj() * dV).real))
        return np.concatenate([g_g.real, g_g.imag, [g_sco]])

    def denoise(self, X, sigma2):
        """Estimate every column of ``X``; returns ``(H_hat, layers, correlations)``."""
        X = np.asarray(X, dtype=np.complex128)
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (X.shape[1],))
        if self.selector == "exhaustive":
            H, layers = mp_denoise_batch(self.atoms, X, sigma2, self.max_layers)
            return H, layers, layers * self.delays_s.size
        H = np.empty_like(X)
        layers = np.zeros(X.shape[1], dtype=int)
        corr = np.zeros(X.shape[1], dtype=int)
        select = self.search.argmax
        for b in range(X.shape[1]):
            res = run_pursuit(self.atoms, X[:, b], float(sigma2[b]), self.max_layers, select)
            H[:, b] = res.h_hat
            layers[b] = res.n_iterations
            corr[b] = res.n_correlations
        return H, layers, corr


def forward(params, cfg: SystemConfig, delays_s, x, sigma2: float, max_layers: int = DEFAULT_MAX_ITER,
            selector="exhaustive"):
    net = MPNet(params, cfg, delays_s, selector, max_layers)
    return net.forward(x, sigma2)


def backward(params, cfg: SystemConfig, delays_s, trace: ForwardTrace, selector="exhaustive") -> np.ndarray:
    return MPNet(params, cfg, delays_s, selector).backward(trace)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float | np.ndarray = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, flat_params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns ``(new_params, state)``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.m.shape or flat_params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {flat_params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * grads
    state.v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    return flat_params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


def unflatten_like(params, flat, cfg: SystemConfig, n_atoms: int):
    if isinstance(params, ConstrainedParams):
        return ConstrainedParams.unflatten(flat, cfg.n_subcarriers)
    return UnconstrainedParams.unflatten(flat, cfg.n_subcarriers, n_atoms)


@dataclass
class TrainHistory:
    batch_loss: dict[str, list[float]] = field(default_factory=dict)
    checkpoints: list[tuple[int, str, float]] = field(default_factory=list)  # (seen, method, nmse)
    channels_seen: int = 0

    def curve(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [(s, v) for s, m, v in self.checkpoints if m == method]
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def batch_gradient(net: MPNet, batch) -> tuple[np.ndarray, float]:
    """Mean gradient and mean loss over a batch of ``NoisyObservation``."""
    total = None
    total_loss = 0.0
    for obs in batch:
        _, trace = net.forward(obs.x, obs.noise_var)
        total_loss += net.loss_from_trace(trace)
        g = net.backward(trace)
        total = g if total is None else total + g
    return total / len(batch), total_loss / len(batch)


def train_step(net: MPNet, state: AdamState, batch) -> float:
    grad, batch_loss = batch_gradient(net, batch)
    if not np.all(np.isfinite(grad)) or not math.isfinite(batch_loss):
        raise FloatingPointError("non-finite loss or gradient")
    flat, _ = adam_step(state, net.params.flatten(), grad)
    net.params = unflatten_like(net.params, flat, net.cfg, net.delays_s.size)
    return batch_loss


def train_online(nets: dict[str, MPNet], states: dict[str, AdamState], batches, evaluate=None,
                 eval_every: int = 20, history: TrainHistory | None = None) -> TrainHistory:
    """Minibatch online training of several networks on one shared stream.

    ``evaluate(name, net) -> nmse`` is called before training and every
    ``eval_every`` batches (and after the last batch).
    """
    history = history or TrainHistory()
    batches = list(batches)
    if not batches:
        raise ValueError("empty training stream")

    def checkpoint():
        if evaluate is None:
            return
        for name, net in nets.items():
            history.checkpoints.append((history.channels_seen, name, evaluate(name, net)))

    checkpoint()
    for b, batch in enumerate(batches, start=1):
        if len(batch) < 1:
            raise ValueError("batch size must be >= 1")
        for name, net in nets.items():
            history.batch_loss.setdefault(name, []).append(train_step(net, states[name], batch))
        history.channels_seen += len(batch)
        if b % eval_every == 0 or b == len(batches):
            checkpoint()
    return history


def observations_matrix(obs: list[NoisyObservation]):
    X = np.stack([o.x for o in obs], axis=1)
    return X, np.array([o.noise_var for o in obs])
