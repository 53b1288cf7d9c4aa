"""
CSV export of ensemble runs.

Writes ``trajectories.csv`` (one row per trajectory sample) and
``summary.csv`` (per-time mean and standard deviation of every state).
Each file starts with a ``# {json}`` metadata line. Floats are written as
their shortest round-trip decimal.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from barriers.chain import Chain
from dynamics.sde import NORMAL_METHOD, RNG_NAME, StochasticAffineSystem, TrajectoryRecord
from experiments import __version__

TRAJECTORIES_FILE = "trajectories.csv"
SUMMARY_FILE = "summary.csv"


class ExportError(OSError):
    """Writing or reading an export file failed."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


def format_float(value) -> str:
    return repr(float(value))


def trajectory_columns(system: StochasticAffineSystem, barrier_chains: Sequence[Chain],
                       lyapunov_degree: int) -> List[str]:
    """seed, t, states, controls, d, psi_<chain>_<level>..., chi_<level>..., qp_status."""
    columns = ["seed", "t"]
    columns += list(system.state_labels)
    columns += list(system.control_labels)
    columns.append("d")
    for chain in barrier_chains:
        columns += [f"psi_{chain.name}_{level}" for level in range(chain.degree)]
    columns += [f"chi_{level}" for level in range(1, lyapunov_degree + 1)]
    columns.append("qp_status")
    return columns


def summary_columns(system: StochasticAffineSystem) -> List[str]:
    columns = ["t"]
    for label in system.state_labels:
        columns += [f"mean_{label}", f"std_{label}"]
    return columns


def build_metadata(config_metadata: Dict[str, Any], stats_scalars: Dict[str, Any] = None) -> Dict[str, Any]:
    meta = {
        "version": __version__,
        "rng": RNG_NAME,
        "normal_sampler": NORMAL_METHOD,
        "seeding": "base_seed + trajectory_index",
        "config": config_metadata,
    }
    if stats_scalars is not None:
        meta["stats"] = stats_scalars
    return meta


def _metadata_line(meta: Dict[str, Any]) -> str:
    return "# " + json.dumps(meta, sort_keys=True, allow_nan=True) + "\n"


def _trajectory_rows(record: TrajectoryRecord):
    for k in range(len(record)):
        row = [str(record.seed), format_float(record.times[k])]
        row += [format_float(v) for v in record.states[k]]
        row += [format_float(v) for v in record.controls[k]]
        row.append(format_float(record.relaxations[k]))
        row += [format_float(v) for v in record.psi_values[k]]
        row += [format_float(v) for v in record.chi_values[k]]
        status = record.qp_status[k]
        row.append(getattr(status, "value", str(status)))
        yield row


def export_csv(records: Sequence[TrajectoryRecord], stats, path, system: StochasticAffineSystem,
               barrier_chains: Sequence[Chain], lyapunov_degree: int,
               config_metadata: Dict[str, Any]) -> Dict[str, Path]:
    """
    Write both CSV files into directory ``path``.

    Args:
        records: Trajectory records in index order (may be empty)
        stats: EnsembleStats of the same records, or None
        path: Output directory, created if missing
        system: System supplying state/control labels
        barrier_chains: Chains whose levels name the psi columns
        lyapunov_degree: Number of chi columns
        config_metadata: Resolved parameters recorded in the header line

    Returns:
        Mapping of file kind to written path

    Raises:
        ExportError: on any I/O failure, with the offending path
    """
    out_dir = Path(path)
    traj_path = out_dir / TRAJECTORIES_FILE
    summary_path = out_dir / SUMMARY_FILE
    scalars = stats.scalars() if stats is not None and stats.n > 0 else None
    meta = build_metadata(config_metadata, scalars)

    columns = trajectory_columns(system, barrier_chains, lyapunov_degree)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(traj_path, "w", newline="") as f:
            f.write(_metadata_line(meta))
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for record in records:
                writer.writerows(_trajectory_rows(record))
        logging.info(f"Wrote {traj_path}")

        with open(summary_path, "w", newline="") as f:
            f.write(_metadata_line(meta))
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(summary_columns(system))
            if stats is not None and stats.n > 0:
                for k, t in enumerate(stats.times):
                    row = [format_float(t)]
                    for j in range(system.n_x):
                        row += [format_float(stats.state_mean[k, j]), format_float(stats.state_std[k, j])]
                    writer.writerow(row)
        logging.info(f"Wrote {summary_path}")
    except OSError as e:
        failed = Path(e.filename) if getattr(e, "filename", None) else out_dir
        logging.error(f"Failed to write CSV output to {failed}: {e}")
        raise ExportError(failed, str(e)) from e

    return {"trajectories": traj_path, "summary": summary_path}


@dataclass
class CsvTable:
    metadata: Dict[str, Any]
    columns: List[str]
    rows: List[List[str]]

    def column(self, name: str) -> List[str]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    def states_by_seed(self, state_labels: Sequence[str]) -> Dict[int, np.ndarray]:
        """State columns grouped by trajectory seed, in file order."""
        indices = [self.columns.index(label) for label in state_labels]
        seed_index = self.columns.index("seed")
        grouped: Dict[int, List[List[float]]] = {}
        for row in self.rows:
            grouped.setdefault(int(row[seed_index]), []).append([float(row[i]) for i in indices])
        return {seed: np.array(values) for seed, values in grouped.items()}


def read_csv(path) -> CsvTable:
    """Read a file written by export_csv."""
    path = Path(path)
    try:
        with open(path, "r", newline="") as f:
            first = f.readline()
            if not first.startswith("# "):
                raise ExportError(path, "missing metadata line")
            metadata = json.loads(first[2:])
            reader = csv.reader(f)
            columns = next(reader)
            rows = [row for row in reader]
    except OSError as e:
        logging.error(f"Failed to read {path}: {e}")
        raise ExportError(path, str(e)) from e
    return CsvTable(metadata, columns, rows)
