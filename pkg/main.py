#!/usr/bin/env python3
"""
Stochastic CLF-CBF Controller
Command-line entry point: single rollouts, Monte Carlo ensembles,
self-checks and config inspection.
"""

import sys
import os
import logging
import click
import yaml

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from benchmarks.registry import build_benchmark
from diagnostics.self_check import run_all
from experiments.config import BENCHMARK_IDS, ConfigError, load_config
from experiments.ensemble import compute_stats, run_ensemble, run_trajectory
from experiments.export import export_csv

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def experiment_options(func):
    """Flags shared by every command that resolves a config."""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                     help='YAML experiment config'),
        click.option('--system', type=click.Choice(BENCHMARK_IDS), default=None, help='Benchmark id'),
        click.option('--controller', type=click.Choice(['clf', 'clf-cbf']), default=None,
                     help='CLF-only baseline or CLF-CBF'),
        click.option('--seeds', type=int, default=None, help='Number of trajectories'),
        click.option('--base-seed', type=int, default=None, help='Seed of trajectory 0'),
        click.option('--dt', type=float, default=None, help='Integration step [s]'),
        click.option('--horizon', type=float, default=None, help='Simulated time [s]'),
        click.option('--out', type=click.Path(file_okay=False), default=None, help='Output directory'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_config(config_path, system, controller, seeds, base_seed, dt, horizon, out):
    overrides = {
        'system.benchmark': system,
        'controller.type': controller,
        'ensemble.n_trajectories': seeds,
        'ensemble.base_seed': base_seed,
        'simulation.dt': dt,
        'simulation.horizon': horizon,
        'output.path': out,
    }
    return load_config(config_path, overrides)


def write_outputs(result_records, stats, benchmark, config):
    return export_csv(
        result_records, stats, config.output.path, benchmark.system, benchmark.barrier_chains,
        config.lyapunov.relative_degree, config.metadata(),
    )


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Verbose output')
def cli(verbose):
    """High-relative-degree stochastic CLF-CBF controller experiments."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command()
@experiment_options
def simulate(config_path, system, controller, seeds, base_seed, dt, horizon, out):
    """Roll out one seed with full diagnostics."""
    if seeds is not None and seeds != 1:
        raise click.UsageError(f"simulate takes exactly one seed, got --seeds {seeds}")
    config = resolve_config(config_path, system, controller, 1, base_seed, dt, horizon, out)
    benchmark = build_benchmark(config)

    print(f"🚗 Simulating {config.benchmark} ({config.controller.type}), seed {config.ensemble.base_seed}")
    record = run_trajectory(benchmark, config, 0)
    stats = compute_stats([record], benchmark, config)
    files = write_outputs([record], stats, benchmark, config)

    status = "truncated" if record.truncated else ("flagged" if record.flagged else "clean")
    print(f"\n✅ Trajectory done: {len(record)} samples, {status}")
    print(f"   - Min barrier value: {stats.min_barrier[0]:.6g}")
    print(f"   - Final goal distance: {stats.final_goal_distances[0]:.4f}")
    print(f"   - Relaxed Lyapunov steps: {stats.relaxed_steps[0]}")
    print(f"\n📁 Output files:")
    for kind, path in files.items():
        print(f"   - {kind}: {path}")


@cli.command()
@experiment_options
def ensemble(config_path, system, controller, seeds, base_seed, dt, horizon, out):
    """Run a seeded Monte Carlo ensemble and export both CSVs."""
    config = resolve_config(config_path, system, controller, seeds, base_seed, dt, horizon, out)

    print(f"🎲 Ensemble: {config.benchmark} ({config.controller.type}), "
          f"{config.ensemble.n_trajectories} trajectories")
    result = run_ensemble(config)
    files = write_outputs(result.records, result.stats, result.benchmark, config)

    stats = result.stats
    print(f"\n✅ Ensemble completed!")
    print(f"📊 Stats:")
    print(f"   - safety_rate: {stats.safety_rate}")
    print(f"   - Safe trajectories: {stats.n_safe}/{stats.n}")
    print(f"   - Flagged trajectories: {stats.n_flagged}")
    print(f"   - Relaxed trajectories: {stats.n_relaxed}")
    print(f"   - Mean goal distance (final {config.ensemble.stats_window:g} s): "
          f"{stats.final_goal_distance_mean:.4f}")
    print(f"\n📁 Output files:")
    for kind, path in files.items():
        print(f"   - {kind}: {path}")


@cli.command()
def check():
    """Run the autodiff, QP and relative-degree self-checks."""
    results = run_all()
    for result in results:
        mark = "✅" if result.passed else "❌"
        print(f"{mark} {result.name}: {result.detail}")
    if not all(r.passed for r in results):
        click.get_current_context().exit(EXIT_RUNTIME)


@cli.command('show-config')
@experiment_options
def show_config(config_path, system, controller, seeds, base_seed, dt, horizon, out):
    """Print the resolved configuration."""
    config = resolve_config(config_path, system, controller, seeds, base_seed, dt, horizon, out)
    print(yaml.safe_dump(config.to_dict(), sort_keys=False), end="")


def main(argv=None) -> int:
    """Run the CLI and map failures to exit codes (1 validation, 2 runtime)."""
    try:
        code = cli.main(args=argv, prog_name="main.py", standalone_mode=False)
        return code or 0
    except click.UsageError as e:
        print(f"❌ Error: {e.format_message()}", file=sys.stderr)
        return EXIT_VALIDATION
    except click.Abort as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, ValueError) as e:
        print(f"❌ Invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"Run failed: {e}")
        print(f"❌ Failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
