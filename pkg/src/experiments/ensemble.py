"""
Monte Carlo ensemble runner.
Trajectory i uses seed base_seed + i; results are assembled in index order
so serial and parallel runs produce identical output.
"""

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from autodiff.jets import DomainError
from benchmarks.registry import Benchmark, build_benchmark
from dynamics.sde import NonFiniteState, TrajectoryRecord, sample_count, simulate
from experiments.config import EnsembleConfig


@dataclass
class EnsembleStats:
    """Aggregated safety and convergence statistics of an ensemble."""
    n: int
    n_safe: int
    n_flagged: int
    n_truncated: int
    safety_rate: float
    times: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray
    final_goal_distances: np.ndarray
    final_goal_distance_mean: float
    min_barrier: np.ndarray
    relaxed_steps: np.ndarray

    @property
    def n_relaxed(self) -> int:
        """Trajectories with at least one step on a relaxed Lyapunov chain."""
        return int(np.count_nonzero(self.relaxed_steps))

    def scalars(self) -> dict:
        return {
            "n": self.n,
            "n_safe": self.n_safe,
            "n_violating": self.n - self.n_safe,
            "n_flagged": self.n_flagged,
            "n_truncated": self.n_truncated,
            "safety_rate": self.safety_rate,
            "final_goal_distance_mean": self.final_goal_distance_mean,
            "final_goal_distances": self.final_goal_distances.tolist(),
            "min_barrier": self.min_barrier.tolist(),
            "n_relaxed": self.n_relaxed,
            "relaxed_steps": self.relaxed_steps.tolist(),
        }


@dataclass
class EnsembleResult:
    stats: EnsembleStats
    records: List[TrajectoryRecord]
    benchmark: Benchmark


def _barrier_minimum(record: TrajectoryRecord, fields) -> float:
    """min over time and barriers of h(x_t); -inf if h cannot be evaluated."""
    lowest = np.inf
    for x in record.states:
        point = [float(v) for v in x]
        for h in fields:
            try:
                value = float(h(point))
            except DomainError:
                return -np.inf
            lowest = min(lowest, value)
    return lowest


def safety_rate(records: Sequence[TrajectoryRecord], fields, tolerance: float = 0.0) -> float:
    """
    Fraction of trajectories with h_i(x_t) >= -tolerance for every barrier
    field h_i and every sample t.

    Raises:
        ValueError: if ``records`` is empty
    """
    if not records:
        raise ValueError("safety rate of an empty ensemble is undefined")
    safe = sum(1 for r in records if _barrier_minimum(r, fields) >= -tolerance)
    return safe / len(records)


def run_trajectory(benchmark: Benchmark, config: EnsembleConfig, index: int) -> TrajectoryRecord:
    """Roll out trajectory ``index``; truncated records are kept, not dropped."""
    seed = config.ensemble.base_seed + index
    try:
        return simulate(benchmark.system, benchmark.policy, benchmark.x0,
                        config.simulation.dt, config.simulation.horizon, seed)
    except NonFiniteState as e:
        return e.record


# Set once per worker process by _init_worker.
_WORKER_BENCHMARK: Optional[Benchmark] = None
_WORKER_CONFIG: Optional[EnsembleConfig] = None


def _init_worker(config: EnsembleConfig):
    global _WORKER_BENCHMARK, _WORKER_CONFIG
    _WORKER_CONFIG = config
    _WORKER_BENCHMARK = build_benchmark(config)


def _run_in_worker(index: int):
    return index, run_trajectory(_WORKER_BENCHMARK, _WORKER_CONFIG, index)


def _padded(values: np.ndarray, n: int) -> np.ndarray:
    out = np.full((n,) + values.shape[1:], np.nan)
    out[:len(values)] = values
    return out


def compute_stats(records: Sequence[TrajectoryRecord], benchmark: Benchmark,
                  config: EnsembleConfig, tolerance: float = 0.0) -> EnsembleStats:
    """Two-pass statistics; truncated trajectories contribute their samples only."""
    n_samples = sample_count(config.simulation.dt, config.simulation.horizon)
    times = config.simulation.dt * np.arange(n_samples)
    n_x = benchmark.system.n_x

    if not records:
        empty = np.zeros(0)
        return EnsembleStats(0, 0, 0, 0, float("nan"), times, np.full((n_samples, n_x), np.nan),
                             np.full((n_samples, n_x), np.nan), empty, float("nan"), empty,
                             np.zeros(0, dtype=int))

    stacked = np.stack([_padded(r.states, n_samples) for r in records])
    # all-NaN time slices only occur after every trajectory truncated
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        mean = np.nanmean(stacked, axis=0)
        std = np.sqrt(np.nanmean((stacked - mean) ** 2, axis=0))

    minima = np.array([_barrier_minimum(r, benchmark.barrier_fields) for r in records])
    n_safe = int(np.sum(minima >= -tolerance))
    window_start = config.simulation.horizon - config.ensemble.stats_window
    final_distances = np.array([float(benchmark.goal_distance(r.states[-1])[0]) for r in records])
    window_means = []
    for r in records:
        mask = r.times >= window_start - 1e-9
        window_means.append(float(np.mean(benchmark.goal_distance(r.states[mask]))) if np.any(mask) else np.nan)

    return EnsembleStats(
        n=len(records),
        n_safe=n_safe,
        n_flagged=sum(1 for r in records if r.flagged),
        n_truncated=sum(1 for r in records if r.truncated),
        safety_rate=n_safe / len(records),
        times=times,
        state_mean=mean,
        state_std=std,
        final_goal_distances=final_distances,
        final_goal_distance_mean=float(np.nanmean(window_means)),
        min_barrier=minima,
        relaxed_steps=np.array([r.relaxed_steps for r in records], dtype=int),
    )


def run_ensemble(config: EnsembleConfig, progress: bool = True,
                 benchmark: Optional[Benchmark] = None) -> EnsembleResult:
    """
    Run the configured Monte Carlo ensemble.

    Args:
        config: Resolved configuration
        progress: Show a progress bar over trajectories
        benchmark: Prebuilt benchmark for serial runs (built from config if omitted)

    Returns:
        EnsembleResult with records in trajectory-index order
    """
    n = config.ensemble.n_trajectories
    workers = config.ensemble.workers
    benchmark = benchmark or build_benchmark(config)
    logging.info(f"Running {n} trajectories of {config.benchmark} "
                 f"({config.controller.type}, seeds {config.ensemble.base_seed}..{config.ensemble.base_seed + n - 1}, "
                 f"workers={workers})")

    records: List[Optional[TrajectoryRecord]] = [None] * n
    if workers == 1:
        for index in tqdm(range(n), desc="Trajectories", disable=not progress):
            records[index] = run_trajectory(benchmark, config, index)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(config,)) as pool:
            futures = [pool.submit(_run_in_worker, index) for index in range(n)]
            for future in tqdm(as_completed(futures), total=n, desc="Trajectories", disable=not progress):
                index, record = future.result()
                records[index] = record

    for record in records:
        if record.truncated:
            logging.warning(f"Trajectory seed={record.seed} truncated after {len(record)} samples")
        elif record.flagged:
            steps = sum(1 for s in record.qp_status if s.flagged)
            logging.warning(f"Trajectory seed={record.seed} has {steps} fallback steps")

    stats = compute_stats(records, benchmark, config)
    logging.info(f"Ensemble done: safety_rate={stats.safety_rate:.3f}, flagged={stats.n_flagged}/{n}, "
                 f"relaxed={stats.n_relaxed}/{n}")
    return EnsembleResult(stats=stats, records=records, benchmark=benchmark)
