"""Experiment configuration, kernel preparation and the bodies of the CLI commands."""
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lib.errors import ConfigError, InvalidModelError
from lib.filtering import (
    FilterTrace,
    fit_log_slope,
    generalized_filter_run,
    grid_filter_hmm,
    kalman_hmm,
    particle_filter_run,
    psd_filter_run,
    trace_tv,
)
from lib.generalized_psd import ConditionalGaussianLinear, GeneralizedPsdModel, g_from_gmm, kalman_component
from lib.grid import tensor_points
from lib.hmm import Hmm, Trajectory, make_scenario, mixing_over_observations, simulate
from lib.learning import EpsilonSchedule, LearnConfig, hyperparams_from_epsilon, learn_rank_one
from lib.metrics import birkhoff_bound, sup_error
from lib.psd_core import Domain, GaussianPsdModel, flat_model, from_gmm, normalize
from lib.serialization import atomic_write_text, load_model, save_model

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
KNOWN_METHODS = ("psd", "generalized", "kalman", "particle", "grid")
MAX_SUP_GRID_POINTS = 1 << 20
SNAPSHOT_METHODS = ("psd", "generalized")

DEFAULT_LEARN = {"M": 12, "n": 400, "precision": [8.0], "reg": 1e-6}
DEFAULT_SWEEP = {"beta": 2.0, "c_M": 1.0, "c_n": 4.0}
MIN_SWEEP_EPSILON = 0.05
DEFAULT_STABILITY = {
    "init_a": {"kind": "gmm", "weights": [1.0], "means": [-0.5], "precision": [20.0]},
    "init_b": {"kind": "gmm", "weights": [1.0], "means": [0.5], "precision": [20.0]},
    "mixing_grid": 64,
    "start": 2,
    "stop": 21,
}


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(raw: Dict[str, Any]) -> str:
    return f"{fnv1a_64(canonical_json(raw).encode('utf-8')):016x}"


@dataclass
class ExperimentConfig:
    scenario: str
    raw: Dict[str, Any]
    scenario_params: Dict[str, Any] = field(default_factory=dict)
    methods: List[str] = field(default_factory=lambda: ["psd", "grid"])
    steps: int = 20
    seeds: List[int] = field(default_factory=lambda: [0])
    grid: int = 256
    learn: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_LEARN))
    epsilons: List[float] = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    particles: List[int] = field(default_factory=lambda: [1000])
    target_order: int = 20
    models: Dict[str, str] = field(default_factory=dict)
    initial: Dict[str, Any] = field(default_factory=lambda: {"kind": "learned"})
    stability: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_STABILITY))
    kalman: Dict[str, Any] = field(default_factory=lambda: {"epsilon": 1e-3})
    output_dir: str = "results"
    record_wall_time: bool = False
    threads: int = 1
    max_cells: int = 4096
    learn_Q: Optional[Dict[str, Any]] = None
    learn_G: Optional[Dict[str, Any]] = None
    prune: bool = False
    snapshot_stride: Optional[int] = None

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentConfig":
        """Validate a raw config document; every problem raises ConfigError before any work."""
        if not isinstance(raw, dict):
            raise ConfigError("Config must be a JSON object")
        known = set(cls.__dataclass_fields__) - {"raw"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        if "scenario" not in raw:
            raise ConfigError("Config is missing 'scenario'")
        cfg = cls(raw=raw, **{k: v for k, v in raw.items()})
        if isinstance(raw.get("particles"), int):
            cfg.particles = [raw["particles"]]
        if "stability" in raw:
            cfg.stability = {**DEFAULT_STABILITY, **raw["stability"]}
        cfg._validate(base_dir or Path("."))
        return cfg

    def _validate(self, base_dir: Path) -> None:
        try:
            make_scenario(self.scenario, **self.scenario_params)
        except (InvalidModelError, TypeError) as e:
            raise ConfigError(f"Invalid scenario: {e}")
        if not self.methods:
            raise ConfigError("At least one method is required")
        bad = [m for m in self.methods if m not in KNOWN_METHODS]
        if bad:
            raise ConfigError(f"Unknown methods {bad}; choose from {list(KNOWN_METHODS)}")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError(f"steps must be an integer >= 1, got {self.steps!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError(f"seeds must be a nonempty list of nonnegative integers, got {self.seeds!r}")
        if not isinstance(self.grid, int) or self.grid < 2:
            raise ConfigError(f"grid must be an integer >= 2, got {self.grid!r}")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads!r}")
        if not self.particles or not all(isinstance(n, int) and n >= 1 for n in self.particles):
            raise ConfigError(f"particles must be positive integers, got {self.particles!r}")
        if not isinstance(self.target_order, int) or self.target_order < 1:
            raise ConfigError(f"target_order must be >= 1, got {self.target_order!r}")
        if not self.epsilons or not all(MIN_SWEEP_EPSILON <= e <= 1 for e in self.epsilons):
            raise ConfigError(f"epsilons must lie in [{MIN_SWEEP_EPSILON}, 1], got {self.epsilons!r}")
        if not isinstance(self.prune, bool):
            raise ConfigError(f"prune must be true or false, got {self.prune!r}")
        if self.snapshot_stride is not None and (
            isinstance(self.snapshot_stride, bool) or not isinstance(self.snapshot_stride, int) or self.snapshot_stride < 1
        ):
            raise ConfigError(f"snapshot_stride must be an integer >= 1, got {self.snapshot_stride!r}")
        for key, block in (("learn", self.learn), ("learn_Q", self.learn_Q), ("learn_G", self.learn_G)):
            if (block is not None or key == "learn") and not isinstance(block, dict):
                raise ConfigError(f"{key} must be an object, got {block!r}")
        for law in (self.initial, self.stability["init_a"], self.stability["init_b"]):
            if law.get("kind") not in ("uniform", "gmm", "learned"):
                raise ConfigError(f"Unknown initial distribution kind {law.get('kind')!r}")
        resolved = {}
        for key, path in self.models.items():
            if key not in ("transition", "observation"):
                raise ConfigError(f"Unknown model key {key!r}")
            full = (base_dir / path) if not Path(path).is_absolute() else Path(path)
            if not full.exists():
                raise ConfigError(f"Model file not found: {full}")
            resolved[key] = str(full)
        self.models = resolved
        hmm = make_scenario(self.scenario, **self.scenario_params)
        q_domain, g_domain = joint_domains(hmm)
        learn_block_config(self.q_learn, q_domain, seed=0)
        learn_block_config(self.g_learn, g_domain, seed=0)
        if any(m in ("kalman", "generalized") for m in self.methods) and hmm.linear is None:
            raise ConfigError(f"Methods kalman/generalized need a linear-Gaussian scenario, not {self.scenario}")
        if self.grid ** hmm.state_dim > self.max_cells:
            raise ConfigError(f"grid {self.grid}^{hmm.state_dim} exceeds max_cells={self.max_cells}")

    @property
    def q_learn(self) -> Dict[str, Any]:
        return self.learn_Q if self.learn_Q is not None else self.learn

    @property
    def g_learn(self) -> Dict[str, Any]:
        return self.learn_G if self.learn_G is not None else self.learn

    @property
    def learn_seed(self) -> int:
        return int(self.learn.get("seed", 0))

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def load_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config and apply CLI overrides (None values are ignored)."""
    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config is not valid JSON: {e}")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return ExperimentConfig.from_dict(raw, config_path.parent)


def learn_block_config(block: Dict[str, Any], domain: Domain, seed: int, groups=()) -> LearnConfig:
    """LearnConfig from an epsilon schedule {epsilon, beta, c_M, c_n} or explicit {M, n, precision, reg}."""
    try:
        if "epsilon" in block:
            schedule = EpsilonSchedule(
                epsilon=float(block["epsilon"]),
                beta=float(block.get("beta", 2.0)),
                dim=domain.dim,
                c_M=float(block.get("c_M", 1.0)),
                c_n=float(block.get("c_n", 1.0)),
            )
            return hyperparams_from_epsilon(schedule, domain, seed=seed, groups=groups)
        return LearnConfig(
            n=int(block["n"]),
            M=int(block["M"]),
            precision=np.asarray(block["precision"], dtype=float),
            reg=float(block["reg"]),
            domain=domain,
            seed=seed,
            groups=groups,
        )
    except KeyError as e:
        raise ConfigError(f"learn block needs 'epsilon' or all of M, n, precision, reg (missing {e})")
    except InvalidModelError as e:
        raise ConfigError(f"Invalid learn block: {e}")


def _split_density(kernel, d_in: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda pts: kernel(pts[:, :d_in], pts[:, d_in:])


def joint_domains(hmm: Hmm) -> Tuple[Domain, Domain]:
    return hmm.domain.product(hmm.domain), hmm.domain.product(hmm.observation_domain)


def learn_kernels(hmm: Hmm, block: Dict[str, Any], seed: int,
                  g_block: Optional[Dict[str, Any]] = None) -> Tuple[GaussianPsdModel, GaussianPsdModel]:
    """Rank-one PSD models of the transition Q(u, x) and the observation G(x, y).

    block drives Q; g_block, when given, drives G instead of block.
    """
    d, d_obs = hmm.state_dim, hmm.observation_dim
    q_domain, g_domain = joint_domains(hmm)
    q_cfg = learn_block_config(block, q_domain, seed, groups=(("u", d), ("x", d)))
    g_cfg = learn_block_config(block if g_block is None else g_block, g_domain, seed + 1, groups=(("x", d), ("y", d_obs)))
    Q = learn_rank_one(_split_density(hmm.transition, d), q_cfg)
    G = learn_rank_one(_split_density(hmm.observation, d), g_cfg)
    return Q, G


def kernel_sup_errors(hmm: Hmm, Q: GaussianPsdModel, G: GaussianPsdModel, resolution: int) -> Tuple[float, float]:
    d = hmm.state_dim
    errors = []
    for model, kernel, domain in zip((Q, G), (hmm.transition, hmm.observation), joint_domains(hmm)):
        res = min(resolution, int(MAX_SUP_GRID_POINTS ** (1 / domain.dim)))
        points = tensor_points(domain, res, max_cells=MAX_SUP_GRID_POINTS)
        errors.append(sup_error(model, _split_density(kernel, d), points))
    return errors[0], errors[1]


def initial_model(law: Dict[str, Any], hmm: Hmm, block: Dict[str, Any], seed: int) -> GaussianPsdModel:
    """Normalized PSD model of an initial distribution."""
    domain = hmm.domain
    groups = (("x", hmm.state_dim),)
    kind = law.get("kind")
    if kind == "uniform":
        return flat_model(domain, groups=groups)
    if kind == "gmm":
        weights = np.asarray(law["weights"], dtype=float)
        means = np.asarray(law["means"], dtype=float).reshape(len(weights), hmm.state_dim)
        model = from_gmm(weights, means, np.asarray(law["precision"], dtype=float), groups=groups)
        return normalize(model, domain)[0]
    if kind == "learned":
        cfg = learn_block_config(block, domain, seed + 2, groups=groups)
        model = learn_rank_one(lambda x: hmm.initial(np.zeros((len(x), 0)), x), cfg)
        return normalize(model, domain)[0]
    raise ConfigError(f"Unknown initial distribution kind {kind!r}")


def _corner_radius(domain: Domain) -> float:
    return float(math.sqrt(sum(max(abs(lo), abs(hi)) ** 2 for lo, hi in domain.bounds)))


def kalman_kernels(hmm: Hmm, epsilon: float) -> Tuple[GeneralizedPsdModel, GeneralizedPsdModel, GeneralizedPsdModel]:
    """Order-one generalized transition, observation and prior for a linear-Gaussian scenario."""
    lin = hmm.linear
    q_domain, g_domain = joint_domains(hmm)
    q, _ = kalman_component(ConditionalGaussianLinear(lin.F, lin.b, lin.Sq), _corner_radius(q_domain), epsilon,
                            groups=("u", "x"))
    g, _ = kalman_component(ConditionalGaussianLinear(lin.H, lin.c, lin.Sg), _corner_radius(g_domain), epsilon,
                            groups=("x", "y"))
    prior = g_from_gmm([1.0], [lin.mean0], [np.linalg.inv(lin.cov0)], groups=(("x", hmm.state_dim),))
    return q, g, prior


@dataclass
class ExperimentContext:
    cfg: ExperimentConfig
    hmm: Hmm
    Q: GaussianPsdModel
    G: GaussianPsdModel
    prior: GaussianPsdModel


def prepare(cfg: ExperimentConfig) -> ExperimentContext:
    """Build the scenario and obtain Q_hat, G_hat (loaded or learned) and pi_hat_0."""
    hmm = make_scenario(cfg.scenario, **cfg.scenario_params)
    learn_seed = cfg.learn_seed
    if "transition" in cfg.models and "observation" in cfg.models:
        Q, G = load_model(cfg.models["transition"]), load_model(cfg.models["observation"])
        if not isinstance(Q, GaussianPsdModel) or not isinstance(G, GaussianPsdModel):
            raise ConfigError("Provided models must be Gaussian PSD models")
    else:
        Q, G = learn_kernels(hmm, cfg.q_learn, learn_seed, cfg.g_learn)
    prior = initial_model(cfg.initial, hmm, cfg.learn, learn_seed)
    return ExperimentContext(cfg, hmm, Q, G, prior)


def csv_text(config_hash_hex: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    buffer.write(f"# config_hash={config_hash_hex}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, cfg: ExperimentConfig, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    atomic_write_text(path, csv_text(cfg.hash, header, rows))
    return path


def write_trajectory(path: Path, cfg: ExperimentConfig, trajectory: Trajectory) -> Path:
    d = trajectory.states.shape[1]
    d_obs = trajectory.observations.shape[1]
    header = ["t"] + [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(d_obs)]
    rows = []
    for t, state in enumerate(trajectory.states):
        y = trajectory.observations[t - 1].tolist() if t > 0 else [None] * d_obs
        rows.append([t] + [float(v) for v in state] + [None if v is None else float(v) for v in y])
    return write_csv(path, cfg, header, rows)


def write_snapshots(trace: FilterTrace, directory: Path, label: str, seed: int, stride: int) -> List[Path]:
    """Save the posterior at steps 0, stride, 2 * stride, ... as model JSON files."""
    paths = []
    for k in range(0, len(trace.posteriors), stride):
        path = directory / f"{label}_seed{seed}_step{k}.json"
        save_model(trace.posteriors[k], path)
        paths.append(path)
    return paths


def print_progress(done: int, total: int, label: str = "Runs") -> None:
    bar_length = 40
    filled = int(bar_length * done // max(total, 1))
    bar = "=" * filled + "-" * (bar_length - filled)
    print(f"\r{label}: [{bar}] {100 * done / max(total, 1):.1f}% ({done}/{total})", end="", flush=True)


@dataclass
class RunResult:
    method: str
    param: Optional[int]
    seed: int
    trace: FilterTrace
    tv: Optional[List[float]] = None

    @property
    def label(self) -> str:
        return f"{self.method}{self.param}" if self.param is not None else self.method


def run_method(ctx: ExperimentContext, method: str, param: Optional[int], seed: int,
               observations: np.ndarray) -> FilterTrace:
    cfg, hmm = ctx.cfg, ctx.hmm
    if method == "psd":
        return psd_filter_run(ctx.prior, ctx.Q, ctx.G, observations, hmm.domain, prune=cfg.prune)
    if method == "generalized":
        q, g, prior = kalman_kernels(hmm, float(cfg.kalman.get("epsilon", 1e-3)))
        return generalized_filter_run(prior, q, g, observations, cfg.target_order, hmm.domain, seed)
    if method == "kalman":
        return kalman_hmm(hmm, observations)
    if method == "particle":
        return particle_filter_run(hmm, param, observations, seed)
    if method == "grid":
        return grid_filter_hmm(hmm, observations, cfg.grid, cfg.max_cells)
    raise ConfigError(f"Unknown method {method!r}")


def run_filters(ctx: ExperimentContext, trajectories: Dict[int, Trajectory],
                methods: Optional[Sequence[str]] = None) -> List[RunResult]:
    """All (method, seed) runs on a worker pool, plus TV to the grid oracle when one is requested."""
    cfg = ctx.cfg
    methods = list(methods or cfg.methods)
    jobs = []
    for seed in cfg.seeds:
        for method in methods:
            params = cfg.particles if method == "particle" else [None]
            jobs.extend((method, p, seed) for p in params)

    results: List[RunResult] = []
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [
            pool.submit(run_method, ctx, m, p, s, trajectories[s].observations) for m, p, s in jobs
        ]
        print_progress(0, len(jobs))
        for i, ((method, param, seed), future) in enumerate(zip(jobs, futures), start=1):
            results.append(RunResult(method, param, seed, future.result()))
            print_progress(i, len(jobs))
    print()

    if "grid" in methods:
        oracles = {r.seed: r.trace for r in results if r.method == "grid"}
        for r in results:
            r.tv = trace_tv(r.trace, oracles[r.seed], ctx.hmm.domain, cfg.grid)
    return results


def simulate_all(cfg: ExperimentConfig, hmm: Hmm) -> Dict[int, Trajectory]:
    return {seed: simulate(hmm, cfg.steps, seed) for seed in cfg.seeds}


def _wall(cfg: ExperimentConfig, ns: int) -> int:
    return int(ns) if cfg.record_wall_time else 0


def cmd_learn(cfg: ExperimentConfig) -> List[Path]:
    """Learn Q_hat and G_hat, save them, and tabulate sup errors across the epsilon list."""
    out = cfg.output_path
    hmm = make_scenario(cfg.scenario, **cfg.scenario_params)
    learn_seed = cfg.learn_seed
    Q, G = learn_kernels(hmm, cfg.q_learn, learn_seed, cfg.g_learn)
    save_model(Q, out / "transition.json")
    save_model(G, out / "observation.json")
    print(f"Saved transition (order {Q.order}) and observation (order {G.order}) models to {out}")

    template = {**DEFAULT_SWEEP, **{k: v for k, v in cfg.learn.items() if k in DEFAULT_SWEEP}}
    rows = []
    total = len(cfg.epsilons) * len(cfg.seeds)
    done = 0
    print_progress(done, total, "Learning")
    for eps in cfg.epsilons:
        for seed in cfg.seeds:
            start = time.perf_counter_ns()
            Qe, Ge = learn_kernels(hmm, {**template, "epsilon": eps}, seed)
            elapsed = time.perf_counter_ns() - start
            q_err, g_err = kernel_sup_errors(hmm, Qe, Ge, cfg.grid)
            q_domain, g_domain = joint_domains(hmm)
            q_n = learn_block_config({**template, "epsilon": eps}, q_domain, seed).n
            g_n = learn_block_config({**template, "epsilon": eps}, g_domain, seed).n
            rows.append([eps, seed, "transition", Qe.order, q_n, q_err, _wall(cfg, elapsed)])
            rows.append([eps, seed, "observation", Ge.order, g_n, g_err, _wall(cfg, elapsed)])
            done += 1
            print_progress(done, total, "Learning")
    print()
    report = write_csv(out / "learn_report.csv", cfg,
                       ["epsilon", "seed", "kernel", "M", "n", "grid_sup_error", "wall_ns"], rows)
    return [out / "transition.json", out / "observation.json", report]


def cmd_filter(cfg: ExperimentConfig) -> List[Path]:
    """One trace CSV per (method, seed), plus the simulated trajectories."""
    ctx = prepare(cfg)
    out = cfg.output_path
    trajectories = simulate_all(cfg, ctx.hmm)
    written = [write_trajectory(out / f"trajectory_seed{s}.csv", cfg, t) for s, t in trajectories.items()]
    for r in run_filters(ctx, trajectories):
        rows = []
        for k in range(len(r.trace.posteriors)):
            log_z = r.trace.log_normalizers[k]
            rows.append([
                k, r.method, r.trace.orders[k], math.exp(log_z) if log_z > -math.inf else 0.0,
                r.tv[k] if r.tv is not None else None, _wall(cfg, r.trace.wall_ns[k]),
            ])
        written.append(write_csv(out / f"filter_{r.label}_seed{r.seed}.csv", cfg,
                                 ["step", "method", "order_or_N", "Z", "tv_to_oracle", "wall_ns"], rows))
        if cfg.snapshot_stride and r.method in SNAPSHOT_METHODS:
            written.extend(write_snapshots(r.trace, out / "snapshots", r.label, r.seed, cfg.snapshot_stride))
        if r.tv is not None:
            print(f"{r.label:12} seed {r.seed}: max TV to oracle {max(r.tv):.3e}")
    return written


@dataclass
class StabilityReport:
    seed: int
    tv: List[float]
    slope: float
    sigma: float
    bound: Optional[float]


def stability_run(ctx: ExperimentContext, trajectory: Trajectory) -> StabilityReport:
    """Two PSD filter runs from different initial laws on the same observations."""
    cfg, hmm = ctx.cfg, ctx.hmm
    learn_seed = cfg.learn_seed
    prior_a = initial_model(cfg.stability["init_a"], hmm, cfg.learn, learn_seed)
    prior_b = initial_model(cfg.stability["init_b"], hmm, cfg.learn, learn_seed)
    ys = trajectory.observations
    run_a = psd_filter_run(prior_a, ctx.Q, ctx.G, ys, hmm.domain, prune=cfg.prune)
    run_b = psd_filter_run(prior_b, ctx.Q, ctx.G, ys, hmm.domain, prune=cfg.prune)
    tv = trace_tv(run_a, run_b, hmm.domain, cfg.grid)
    slope = fit_log_slope(tv, int(cfg.stability["start"]), int(cfg.stability["stop"]))
    grid = tensor_points(hmm.domain, int(cfg.stability["mixing_grid"]))
    sigma = mixing_over_observations(hmm, ys, grid, grid)
    bound = birkhoff_bound(sigma) if sigma > 0 else None
    return StabilityReport(trajectory.seed, tv, slope, sigma, bound)


def cmd_stability(cfg: ExperimentConfig) -> List[Path]:
    ctx = prepare(cfg)
    out = cfg.output_path
    trajectories = simulate_all(cfg, ctx.hmm)
    written, summary = [], []
    for i, (seed, trajectory) in enumerate(trajectories.items(), start=1):
        report = stability_run(ctx, trajectory)
        written.append(write_csv(out / f"stability_seed{seed}.csv", cfg, ["step", "tv"],
                                 [[k, v] for k, v in enumerate(report.tv)]))
        log_bound = math.log(report.bound) if report.bound else None
        summary.append([seed, report.sigma, report.bound, log_bound, report.slope])
        print(f"seed {seed}: sigma={report.sigma:.4f} slope={report.slope:.4f} "
              f"log bound={log_bound if log_bound is None else round(log_bound, 4)}")
    written.append(write_csv(out / "stability_summary.csv", cfg,
                             ["seed", "sigma", "birkhoff_bound", "log_bound", "slope"], summary))
    return written


def cmd_bench(cfg: ExperimentConfig) -> List[Path]:
    """Accuracy against the grid oracle and cost per method, seed and particle count."""
    ctx = prepare(cfg)
    trajectories = simulate_all(cfg, ctx.hmm)
    methods = list(dict.fromkeys(list(cfg.methods) + ["grid"]))
    rows = []
    for r in run_filters(ctx, trajectories, methods):
        if r.method == "grid":
            continue
        tv = r.tv[1:]
        rows.append([r.method, r.param if r.param is not None else max(r.trace.orders), r.seed,
                     float(np.mean(tv)), float(np.max(tv)), _wall(cfg, sum(r.trace.wall_ns))])
        print(f"{r.label:12} seed {r.seed}: mean TV {np.mean(tv):.3e}")
    path = write_csv(cfg.output_path / "bench.csv", cfg,
                     ["method", "order_or_N", "seed", "mean_tv", "max_tv", "wall_ns"], rows)
    return [path]
