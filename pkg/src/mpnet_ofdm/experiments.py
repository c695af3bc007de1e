"""Scenario runner, NMSE metric, timing benchmark and result tables."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .fileio import ChannelDataset, read_chd, read_csv_channels, write_checkpoint, write_chd
from .signal_core import (
    AntennaGains,
    ImpairmentSpec,
    NoisyObservation,
    SystemConfig,
    add_noise,
    build_delay_grid,
    build_dictionary,
    build_nominal_grid,
    generate_channel,
    impaired_system,
)
from .sparse_mp import HierarchicalSearch, mp_denoise, mp_denoise_batch, run_pursuit
from .unfolded import (
    AdamState,
    ConstrainedParams,
    MPNet,
    TrainHistory,
    UnconstrainedParams,
    count_parameters,
    train_online,
)

log = logging.getLogger(__name__)

BASELINES = ("LS", "MP-nominal", "MP-real", "LRA-MMSE")
NETWORKS = ("mpNet", "C-mpNet", "HC2-mpNet", "HC3-mpNet")
ALL_METHODS = BASELINES + NETWORKS
RESULT_HEADER = ["method", "channels_seen", "nmse_db", "mean_time_s", "mean_correlations"]
TIMING_COLUMNS = ("mean_time_s",)
NMSE_FLOOR_DB = -300.0


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    n_subcarriers: int = 256
    center_freq_hz: float = 3.4e9
    bandwidth_hz: float = 50e6
    n_atoms: int = 990
    oversampling: float = 4.0
    sco_ppm: float = 40.0
    cfo_hz: float = 0.0
    gain_noise_var: float = 0.09
    snr_in_db: float = 10.0
    n_train_channels: int = 5000
    batch_size: int = 10
    n_test_channels: int = 2000
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    seed: int = 0
    eval_every: int = 20
    max_layers: int = 10
    max_paths: int = 10
    decay_db: float = 20.0
    lr_gains: float = 1e-2
    lr_sco: float = 0.1
    lr_unconstrained: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
        if self.n_test_channels < 1:
            raise ConfigError("n_test_channels must be >= 1")
        if self.n_train_channels < 0:
            raise ConfigError("n_train_channels must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if not 1 <= self.max_paths <= 10:
            raise ConfigError("max_paths must lie in [1, 10]")
        if not math.isfinite(self.snr_in_db):
            raise ConfigError("snr_in_db must be finite")
        try:
            self.system
            self.impairments
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def system(self) -> SystemConfig:
        return SystemConfig(self.n_subcarriers, self.center_freq_hz, self.bandwidth_hz, seed=self.seed)

    @property
    def impairments(self) -> ImpairmentSpec:
        return ImpairmentSpec(self.sco_ppm, self.cfo_hz, self.gain_noise_var)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ResultRow:
    method: str
    channels_seen: int
    nmse_db: float
    mean_time_s: float
    mean_correlations: float


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def add(self, *args):
        self.rows.append(ResultRow(*args))

    def for_method(self, method: str) -> list[ResultRow]:
        return [r for r in self.rows if r.method == method]

    def final(self, method: str) -> ResultRow:
        return self.for_method(method)[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_HEADER)
            for r in self.rows:
                w.writerow([r.method, r.channels_seen, repr(r.nmse_db), repr(r.mean_time_s),
                            repr(r.mean_correlations)])

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        table = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                table.add(rec["method"], int(rec["channels_seen"]), float(rec["nmse_db"]),
                          float(rec["mean_time_s"]), float(rec["mean_correlations"]))
        return table


def nmse(h_hat, h) -> np.ndarray:
    """Per-sample ``||h_hat - h||^2 / ||h||^2`` (columns are samples for 2-D input)."""
    h = np.asarray(h)
    den = np.sum(np.abs(h) ** 2, axis=0)
    if np.any(den == 0):
        raise ValueError("NMSE is undefined for a zero channel")
    return np.sum(np.abs(np.asarray(h_hat) - h) ** 2, axis=0) / den


def to_db(value) -> float:
    value = float(value)
    if value <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(value), NMSE_FLOOR_DB)


@dataclass
class ScenarioData:
    cfg: ScenarioConfig
    system: SystemConfig
    delays: np.ndarray
    nominal: object
    real: object
    real_sco_ppm: float
    test_h: np.ndarray
    test_obs: list[NoisyObservation]
    train_obs: list[NoisyObservation]

    @property
    def test_x(self) -> np.ndarray:
        return np.stack([o.x for o in self.test_obs], axis=1)

    @property
    def test_sigma2(self) -> np.ndarray:
        return np.array([o.noise_var for o in self.test_obs])


def _draw_observations(rng, grid, gains, tau_max, cfg: ScenarioConfig, count: int):
    chans, obs = [], []
    for _ in range(count):
        lp = int(rng.integers(1, cfg.max_paths + 1))
        ch = generate_channel(grid, gains, lp, rng, tau_max, cfg.decay_db)
        chans.append(ch)
        obs.append(add_noise(ch, cfg.snr_in_db, rng))
    return chans, obs


def prepare_scenario(cfg: ScenarioConfig) -> ScenarioData:
    """Draw the hardware realization, the test set and the training stream.

    Every method of a scenario sees the same data: the three random streams
    are derived from ``cfg.seed`` independently of the method list.
    """
    system = cfg.system
    seq_system, seq_test, seq_train = np.random.SeedSequence(cfg.seed).spawn(3)
    real_grid, real_gains = impaired_system(system, cfg.impairments, np.random.default_rng(seq_system))
    delays = build_delay_grid(system, cfg.n_atoms, cfg.oversampling)
    nominal = build_dictionary(build_nominal_grid(system), AntennaGains.flat(system.n_subcarriers), delays)
    real = build_dictionary(real_grid, real_gains, delays)
    tau_max = float(delays[-1])
    test_ch, test_obs = _draw_observations(np.random.default_rng(seq_test), real_grid, real_gains, tau_max,
                                           cfg, cfg.n_test_channels)
    _, train_obs = _draw_observations(np.random.default_rng(seq_train), real_grid, real_gains, tau_max,
                                      cfg, cfg.n_train_channels)
    test_h = np.stack([c.h for c in test_ch], axis=1)
    return ScenarioData(cfg, system, delays, nominal, real, cfg.sco_ppm, test_h, test_obs, train_obs)


def evaluate_baselines(data: ScenarioData, methods) -> dict[str, tuple[float, float, float]]:
    """``method -> (nmse_linear, mean_time_s, mean_correlations)`` on the test set."""
    cfg = data.cfg
    X, s2, H = data.test_x, data.test_sigma2, data.test_h
    n = X.shape[1]
    out = {}
    for method in methods:
        t0 = time.perf_counter()
        corr = 0.0
        if method == "LS":
            Hh = baselines.ls_estimate(X)
        elif method in ("MP-nominal", "MP-real"):
            d = data.nominal if method == "MP-nominal" else data.real
            Hh, layers = mp_denoise_batch(d.atoms, X, s2, cfg.max_layers)
            corr = float(np.mean(layers)) * d.n_atoms
        elif method == "LRA-MMSE":
            model = baselines.build_lra_mmse(data.system, 10.0 ** (-cfg.snr_in_db / 10.0),
                                             0.8 * float(data.delays[-1]))
            Hh = np.stack([baselines.lra_mmse_estimate(model, o) for o in data.test_obs], axis=1)
        else:
            raise ValueError(f"not a baseline: {method}")
        elapsed = time.perf_counter() - t0
        out[method] = (float(np.mean(nmse(Hh, H))), elapsed / n, corr)
    return out


def make_network(method: str, data: ScenarioData) -> tuple[MPNet, AdamState]:
    cfg = data.cfg
    system = data.system
    kw = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    if method == "mpNet":
        params = UnconstrainedParams.from_dictionary(data.nominal)
        net = MPNet(params, system, data.delays, "exhaustive", cfg.max_layers)
        return net, AdamState.zeros(count_parameters(params), lr=cfg.lr_unconstrained, **kw)
    selector = {"C-mpNet": "exhaustive", "HC2-mpNet": 2, "HC3-mpNet": 3}[method]
    params = ConstrainedParams.nominal(system)
    lr = np.full(count_parameters(params), cfg.lr_gains)
    lr[-1] = cfg.lr_sco
    net = MPNet(params, system, data.delays, selector, cfg.max_layers)
    return net, AdamState.zeros(lr.size, lr=lr, **kw)


def run_scenario(cfg: ScenarioConfig, out_dir=None, data: ScenarioData | None = None):
    """Train and evaluate every configured method; returns ``(ResultTable, TrainHistory)``."""
    data = data or prepare_scenario(cfg)
    X, s2, H = data.test_x, data.test_sigma2, data.test_h
    n_test = X.shape[1]
    base_methods = [m for m in cfg.methods if m in BASELINES]
    net_methods = [m for m in cfg.methods if m in NETWORKS]
    base = evaluate_baselines(data, base_methods)
    history = TrainHistory()
    nets, states, stats = {}, {}, {}
    for m in net_methods:
        nets[m], states[m] = make_network(m, data)

    def evaluate(name, net):
        t0 = time.perf_counter()
        Hh, _, corr = net.denoise(X, s2)
        elapsed = time.perf_counter() - t0
        value = float(np.mean(nmse(Hh, H)))
        stats[(history.channels_seen, name)] = (elapsed / n_test, float(np.mean(corr)))
        log.info("%s @ %d channels: %.2f dB", name, history.channels_seen, to_db(value))
        return value

    bs = cfg.batch_size
    batches = [data.train_obs[i:i + bs] for i in range(0, len(data.train_obs), bs)]
    if nets and batches:
        train_online(nets, states, batches, evaluate, cfg.eval_every, history)
    elif nets:
        for name, net in nets.items():
            history.checkpoints.append((0, name, evaluate(name, net)))

    table = ResultTable()
    seen_points = sorted({s for s, _, _ in history.checkpoints}) or [0]
    for seen in seen_points:
        for m in cfg.methods:
            if m in base:
                v, t, c = base[m]
                table.add(m, seen, to_db(v), t, c)
            else:
                for s, name, v in history.checkpoints:
                    if s == seen and name == m:
                        t, c = stats[(s, name)]
                        table.add(m, seen, to_db(v), t, c)
    if out_dir is not None:
        write_outputs(Path(out_dir), cfg, table, history, nets, states, base)
    return table, history


def write_outputs(out: Path, cfg: ScenarioConfig, table: ResultTable, history: TrainHistory,
                  nets: dict, states: dict, base: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "results.csv")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "method", "channels_seen", "value"])
        for m, v in ((m, v) for m, v in base.items()):
            w.writerow(["nmse", m, 0, repr(v[0])])
        for seen, m, v in history.checkpoints:
            w.writerow(["nmse", m, seen, repr(v)])
        for m, losses in history.batch_loss.items():
            for b, loss in enumerate(losses, start=1):
                w.writerow(["loss", m, b * cfg.batch_size, repr(loss)])
    with open(out / "config.echo.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    for name, net in nets.items():
        write_checkpoint(out / f"{name}.mpn", net.params, cfg.n_atoms, states.get(name))


# --- timing -----------------------------------------------------------------

BENCH_HEADER = ["method", "n_atoms", "n_runs", "mean_time_s", "p50_time_s", "p95_time_s", "mean_correlations",
                "mean_iterations"]


@dataclass
class BenchRow:
    method: str
    n_atoms: int
    n_runs: int
    mean_time_s: float
    p50_time_s: float
    p95_time_s: float
    mean_correlations: float
    mean_iterations: float


def bench_delays(system: SystemConfig, n_atoms: int, span_atoms: int = 990, oversampling: float = 4.0):
    """Delay grid of ``n_atoms`` covering the same span as the reference 990-atom grid.

    Small counts keep at least 1x oversampling and so cover a shorter span.
    """
    return build_delay_grid(system, n_atoms, max(1.0, oversampling * n_atoms / span_atoms))


def timing_bench(atom_counts, n_runs: int = 10_000, seed: int = 0, snr_in_db: float = 10.0,
                 max_iter: int = 10, warmup: int = 100, branchings=(2, 3), system: SystemConfig | None = None,
                 max_paths: int = 10) -> list[BenchRow]:
    """Mean wall-clock time of one full MP denoising, exhaustive vs hierarchical.

    All methods process the same random observations; the first ``warmup``
    runs of each method are discarded. BLAS is pinned to one thread.
    """
    from threadpoolctl import threadpool_limits

    system = system or SystemConfig()
    rows = []
    with threadpool_limits(limits=1):
        for a in atom_counts:
            if a < 2:
                raise ValueError("atom counts must be >= 2")
            rng = np.random.default_rng(np.random.SeedSequence([seed, int(a)]))
            delays = bench_delays(system, int(a))
            grid = build_nominal_grid(system)
            gains = AntennaGains.flat(system.n_subcarriers)
            d = build_dictionary(grid, gains, delays)
            tau_max = float(delays[-1])
            obs = []
            for _ in range(n_runs + warmup):
                ch = generate_channel(grid, gains, int(rng.integers(1, max_paths + 1)), rng, tau_max)
                obs.append(add_noise(ch, snr_in_db, rng))
            selectors = {"MP": None}
            for n in branchings:
                selectors[f"MP-H{n}"] = HierarchicalSearch.for_dictionary(d, n)
            for name, search in selectors.items():
                times, corrs, iters = [], [], []
                select = search.argmax if search is not None else None
                for k, o in enumerate(obs):
                    t0 = time.perf_counter()
                    if select is None:
                        res = mp_denoise(d, o.x, o.noise_var, max_iter)
                    else:
                        res = run_pursuit(d.atoms, o.x, o.noise_var, max_iter, select)
                    dt = time.perf_counter() - t0
                    if k >= warmup:
                        times.append(dt)
                        corrs.append(res.n_correlations)
                        iters.append(res.n_iterations)
                times = np.array(times)
                rows.append(BenchRow(name, int(a), len(times), float(times.mean()),
                                     float(np.percentile(times, 50)), float(np.percentile(times, 95)),
                                     float(np.mean(corrs)), float(np.mean(iters))))
                log.info("bench A=%d %s: %.3g s", a, name, rows[-1].mean_time_s)
            del selectors, d
    return rows


def write_bench_csv(path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_HEADER)
        for r in rows:
            w.writerow([getattr(r, k) for k in BENCH_HEADER])


def forward_op_counts(n_subcarriers: int = 256, n_atoms: int = 990, layers: int = 10, branching: int = 3):
    """Weighted operation counts ``D N A`` (exhaustive) vs ``D N n log_n A`` (hierarchical)."""
    exhaustive = layers * n_subcarriers * n_atoms
    hierarchical = layers * n_subcarriers * branching * math.log(n_atoms) / math.log(branching)
    return exhaustive, hierarchical


def measured_op_counts(search: HierarchicalSearch, residuals, n_subcarriers: int, layers: int = 10):
    """Counter-based version of :func:`forward_op_counts` averaged over ``residuals``."""
    per_select = np.mean([search.argmax(r)[1] for r in residuals])
    return layers * n_subcarriers * search.atoms.shape[1], layers * n_subcarriers * per_select


def dataset_from_scenario(cfg: ScenarioConfig, count: int) -> ChannelDataset:
    """Ground-truth channels drawn from the scenario's real system (for ``gen``)."""
    system = cfg.system
    seq_system, seq_data = np.random.SeedSequence(cfg.seed).spawn(2)
    grid, gains = impaired_system(system, cfg.impairments, np.random.default_rng(seq_system))
    delays = build_delay_grid(system, cfg.n_atoms, cfg.oversampling)
    rng = np.random.default_rng(seq_data)
    chans = [generate_channel(grid, gains, int(rng.integers(1, cfg.max_paths + 1)), rng, float(delays[-1]),
                              cfg.decay_db) for _ in range(count)]
    return ChannelDataset(system.n_subcarriers, system.center_freq_hz, system.bandwidth_hz, chans)


def gen_dataset(cfg: ScenarioConfig, count: int, path) -> ChannelDataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    ds = dataset_from_scenario(cfg, count)
    write_chd(path, ds)
    return ds


def load_dataset(path, n_subcarriers: int | None = None) -> ChannelDataset:
    """Read a CHD1 file, or a CSV file of interleaved re/im rows (needs ``n_subcarriers``)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        cfg = SystemConfig(n_subcarriers or 256)
        return ChannelDataset(cfg.n_subcarriers, cfg.center_freq_hz, cfg.bandwidth_hz,
                              read_csv_channels(path, cfg.n_subcarriers))
    return read_chd(path)
