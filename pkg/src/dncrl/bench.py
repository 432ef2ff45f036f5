"""Experiment runner: configs, seeded runs, metrics CSVs, summaries and heatmaps.

A run directory holds one ``metrics_seed<k>.csv`` per seed, ``summary.csv``,
the resolved ``config.txt`` snapshot and, for maze runs, visitation counts.
Wall-clock timings go to ``timing_seed<k>.csv`` so that the metrics files are
byte-for-byte reproducible.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dncrl.catalog import read_catalog, synthetic_catalog
from dncrl.envs import (CatalogEnvConfig, InventoryConfig, InventoryEnv, MazeConfig, MazeEnv,
                        RecommenderEnv, load_layout)
from dncrl.mapping import (CardinalityExceeded, DncMapper, KnnMapper, MinMaxMapper,
                           PerturbationParams, SaParams)
from dncrl.training import TrainConfig, TrainResult, train_run, vac_train_run

log = logging.getLogger(__name__)

METRICS_HEADER = "# dncrl metrics v1"
SUMMARY_HEADER = "# dncrl summary v1"
TIMING_HEADER = "# dncrl timing v1"
OUTPUT_ROOT_VAR = "DNCRL_OUTPUT_ROOT"
HEATMAP_BINS = 50

EXIT_OK, EXIT_CONFIG, EXIT_SKIPPED = 0, 2, 3

ENVIRONMENTS = ("maze", "recommender", "inventory")
METHODS = ("dnc", "minmax", "knn", "vac")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    environment: str = "maze"
    method: str = "dnc"
    n_actuators: int = 8
    n_recommend: int = 1
    n_items: int = 2
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = ""
    n_episodes: int = 1000
    eval_every: int = 100
    eval_episodes: int = 10
    gamma: float = 0.99
    alpha_cr: float = 1e-2
    alpha_ac: float = 1e-2
    sigma: str = "1.0"
    actor_hidden: int = 0
    critic_hidden: int = 32
    n_hidden_layers: int = 2
    reward_scale: float = 1.0
    depth: int = 1
    epsilon: float = 1.0
    k_fraction: float = 0.1
    cooling: float = 0.25
    beta: float = 0.99
    max_iters: int = 1000
    acceptance: str = "metropolis"
    knn_k: int = 2
    enum_limit: int = 1_000_000
    maze_layout: str = ""
    catalog: str = "synthetic"
    catalog_items: int = 1639
    catalog_features: int = 23
    catalog_seed: int = 0
    engine: str = "auto"
    workers: int = 1

    def validate(self):
        if self.environment not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.environment!r}; "
                              f"choose from {', '.join(ENVIRONMENTS)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.workers < 1 or self.knn_k < 1:
            raise ConfigError("workers and knn_k must be >= 1")
        if self.engine not in ("auto", "python", "compiled"):
            raise ConfigError(f"unknown engine {self.engine!r}")
        try:
            self.train_config()
            self.perturbation()
            self.search()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        sigma = self.sigma if self.sigma == "learned" else float(self.sigma)
        return TrainConfig(gamma=self.gamma, alpha_cr=self.alpha_cr, alpha_ac=self.alpha_ac,
                           sigma=sigma, n_episodes=self.n_episodes, eval_every=self.eval_every,
                           eval_episodes=self.eval_episodes, actor_hidden=self.actor_hidden,
                           critic_hidden=self.critic_hidden, n_hidden_layers=self.n_hidden_layers,
                           reward_scale=self.reward_scale)

    def perturbation(self) -> PerturbationParams:
        return PerturbationParams(self.depth, self.epsilon)

    def search(self) -> SaParams:
        return SaParams(self.k_fraction, self.beta, self.cooling, self.max_iters, self.acceptance)

    def resolved_output(self) -> Path:
        out = Path(self.output_dir or f"{self.environment}-{self.method}")
        root = os.environ.get(OUTPUT_ROOT_VAR)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _coerce(name: str, kind, value: str):
    try:
        if name == "seeds":
            seeds = [int(s) for s in value.replace(",", " ").split()]
            return seeds
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def make_config(values: dict) -> ExperimentConfig:
    kinds = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(values) - set(kinds))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = ExperimentConfig(**{k: _coerce(k, kinds[k], str(v)) for k, v in values.items()})
    cfg.validate()
    return cfg


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values = parse_config_text(text, str(path))
    values.update(overrides or {})
    return make_config(values)


def config_snapshot(cfg: ExperimentConfig) -> str:
    lines = ["# resolved dncrl experiment config"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "seeds":
            value = " ".join(str(s) for s in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_env(cfg: ExperimentConfig):
    if cfg.environment == "maze":
        if cfg.maze_layout:
            return MazeEnv(load_layout(cfg.maze_layout, n_actuators=cfg.n_actuators))
        return MazeEnv(MazeConfig(n_actuators=cfg.n_actuators))
    if cfg.environment == "inventory":
        return InventoryEnv(InventoryConfig(n_items=cfg.n_items))
    if cfg.catalog == "synthetic":
        catalog = synthetic_catalog(cfg.catalog_seed, cfg.catalog_items, cfg.catalog_features)
    else:
        catalog = read_catalog(cfg.catalog)
    return RecommenderEnv(CatalogEnvConfig(catalog, n_recommend=cfg.n_recommend))


def check_feasible(cfg: ExperimentConfig, env) -> None:
    """Raise CardinalityExceeded up front for methods that enumerate the action space."""
    if cfg.method in ("knn", "vac"):
        size = env.action_spec.cardinality()
        if size > cfg.enum_limit:
            raise CardinalityExceeded(
                f"{cfg.method} needs the full action set, |A| = {size:.3g} exceeds "
                f"enum_limit {cfg.enum_limit}")


def build_mapper(cfg: ExperimentConfig, env):
    spec = env.action_spec
    if cfg.method == "dnc":
        return DncMapper(spec, cfg.perturbation(), cfg.search())
    if cfg.method == "minmax":
        return MinMaxMapper(spec)
    if cfg.method == "knn":
        return KnnMapper(spec, cfg.knn_k, cfg.enum_limit)
    return None


# ---------------------------------------------------------------------------
# per-seed runs and files
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_csv(seed: int, result: TrainResult) -> str:
    evals = dict(result.eval_points)
    buf = io.StringIO()
    buf.write(METRICS_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "episode", "train_return", "eval_return"])
    for i, ret in enumerate(result.episode_returns, 1):
        w.writerow([seed, i, _fmt(ret), _fmt(evals[i]) if i in evals else ""])
    return buf.getvalue()


def timing_csv(seed: int, result: TrainResult) -> str:
    buf = io.StringIO()
    buf.write(TIMING_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "episode", "wall_clock_s"])
    for i, sec in enumerate(result.episode_seconds, 1):
        w.writerow([seed, i, f"{sec:.6f}"])
    return buf.getvalue()


def read_metrics(path) -> tuple[int, list]:
    """Returns (seed, [(episode, eval_return), ...]) from a metrics CSV."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        raise ValueError(f"{path}: no metric rows")
    seed = int(rows[0]["seed"])
    evals = [(int(r["episode"]), float(r["eval_return"])) for r in rows if r["eval_return"]]
    return seed, evals


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """Train one seed and write its files. Returns a small status record."""
    env = build_env(cfg)
    out = cfg.resolved_output()
    tcfg = cfg.train_config()
    visits = np.zeros((HEATMAP_BINS, HEATMAP_BINS), dtype=np.int64) \
        if cfg.environment == "maze" else None

    def progress(episode, value):
        log.info("seed %d episode %d eval %.3f", seed, episode, value)

    start = time.perf_counter()
    if cfg.method == "vac":
        result = vac_train_run(env, tcfg, seed, limit=cfg.enum_limit, progress=progress,
                               visits=visits)
    else:
        result = train_run(env, build_mapper(cfg, env), tcfg, seed, progress=progress,
                           engine=cfg.engine, visits=visits)
    (out / f"metrics_seed{seed}.csv").write_text(metrics_csv(seed, result))
    (out / f"timing_seed{seed}.csv").write_text(timing_csv(seed, result))
    if visits is not None:
        np.savetxt(out / f"visits_seed{seed}.csv", visits, fmt="%d", delimiter=",")
        if int(visits.sum()) != result.steps:
            raise RuntimeError(f"seed {seed}: visit grid holds {visits.sum()} of {result.steps} steps")
    return {"seed": seed, "steps": result.steps, "seconds": time.perf_counter() - start,
            "final_eval": result.eval_points[-1][1] if result.eval_points else float("nan")}


def _run_seed_star(args):
    return run_seed(*args)


# ---------------------------------------------------------------------------
# summaries and heatmaps
# ---------------------------------------------------------------------------

def summarize(per_seed: dict) -> list[dict]:
    """Mean, sample std and the mean +/- 2 std corridor per eval episode.

    ``per_seed`` maps seed -> [(episode, eval_return), ...]. Sums use
    ``math.fsum`` so the result does not depend on seed order.
    """
    if not per_seed:
        raise ValueError("summarize needs at least one seed")
    by_episode: dict = {}
    for seed in per_seed:
        for episode, value in per_seed[seed]:
            by_episode.setdefault(episode, []).append(value)
    rows = []
    for episode in sorted(by_episode):
        vals = sorted(by_episode[episode])
        n = len(vals)
        mean = math.fsum(vals) / n
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
        rows.append({"episode": episode, "n_seeds": n, "mean": mean, "std": std,
                     "lower": mean - 2 * std, "upper": mean + 2 * std})
    return rows


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(SUMMARY_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = ["episode", "n_seeds", "mean", "std", "lower", "upper"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r["episode"], r["n_seeds"]] + [_fmt(r[c]) for c in cols[2:]])
    return buf.getvalue()


def summarize_dir(path) -> list[dict]:
    path = Path(path)
    files = sorted(path.glob("metrics_seed*.csv"))
    if not files:
        raise FileNotFoundError(f"no metrics_seed*.csv files in {path}")
    per_seed = dict(read_metrics(f) for f in files)
    rows = summarize(per_seed)
    (path / "summary.csv").write_text(summary_csv(rows))
    return rows


def heatmap_pixels(counts) -> np.ndarray:
    """8-bit log-scaled intensities; all-zero counts give an all-black image."""
    counts = np.asarray(counts, dtype=np.float64)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        return np.zeros(counts.shape, dtype=np.uint8)
    return np.rint(255.0 * np.log1p(counts) / np.log1p(top)).astype(np.uint8)


def export_heatmap(visit_counts, path) -> list[Path]:
    """Write ``<path>.csv`` (raw counts, row = y bin) and ``<path>.pgm`` (y axis pointing up)."""
    counts = np.asarray(visit_counts)
    if counts.ndim != 2 or counts.size == 0:
        raise ValueError("visit counts must be a non-empty 2-D grid")
    if np.any(counts < 0):
        raise ValueError("visit counts must be non-negative")
    path = Path(path)
    csv_path, pgm_path = path.with_suffix(".csv"), path.with_suffix(".pgm")
    np.savetxt(csv_path, counts, fmt="%d", delimiter=",")
    pixels = heatmap_pixels(counts)[::-1]
    h, w = pixels.shape
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in pixels)
    pgm_path.write_text(f"P2\n{w} {h}\n255\n{body}\n")
    return [csv_path, pgm_path]


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig) -> int:
    """Run every seed; returns an exit status (0 ok, 3 skipped as infeasible)."""
    cfg.validate()
    env = build_env(cfg)
    try:
        check_feasible(cfg, env)
    except CardinalityExceeded as exc:
        log.warning("skipped: %s", exc)
        return EXIT_SKIPPED
    out = cfg.resolved_output()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_snapshot(cfg))
    jobs = [(cfg, seed) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            records = list(pool.map(_run_seed_star, jobs))
    else:
        records = [run_seed(*job) for job in jobs]
    for rec in records:
        log.info("seed %d: %d steps in %.1f s, final eval %.3f", rec["seed"], rec["steps"],
                 rec["seconds"], rec["final_eval"])
    summarize_dir(out)
    if cfg.environment == "maze":
        total = sum(np.loadtxt(out / f"visits_seed{s}.csv", delimiter=",", dtype=np.int64,
                               ndmin=2) for s in cfg.seeds)
        export_heatmap(total, out / "heatmap")
    return EXIT_OK
