"""Experiment grids over meshes, formulations, and stabilizations.

Runs the greedy training plus held-out verification for every cell of a
grid and emits machine-readable results: one table.csv row per cell,
one trace CSV per cell (the per-iteration series behind the paper-style
convergence and conditioning figures), and a summary.json with the full
configuration and software fingerprint.
"""

import csv
import dataclasses
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .full_model import FullOrderModel
from .greedy import (
    CONVERGED,
    GreedyConfig,
    greedy_train,
    sample_training_set,
    verify,
)
from .parameters import BasisKind, Formulation, Problem

logger = logging.getLogger(__name__)

TABLE_COLUMNS = [
    "problem",
    "nc",
    "n_subdomains",
    "formulation",
    "stabilization",
    "N",
    "columns",
    "max_verification_eta",
    "max_cond",
    "outcome",
    "seed",
]


@dataclass
class ExperimentGrid:
    """Cartesian benchmark grid; every cell is one greedy+verify run."""

    problem: Problem = Problem.DIFFUSION
    nc_list: tuple = (3, 4)
    n_subdomains_list: tuple = (3,)
    formulations: tuple = (Formulation.GALERKIN, Formulation.PETROV_GALERKIN)
    stabilizations: tuple = (BasisKind.SUPREMIZER, BasisKind.AGGREGATION)
    tol: float = None
    n_train: int = 2000
    max_basis: int = None
    seed: int = 0
    verification_size: int = 500
    threads: int = 1
    beta: float = 1e-2

    def cells(self) -> list:
        out = []
        for nc in self.nc_list:
            for nd in self.n_subdomains_list:
                for form in self.formulations:
                    for stab in self.stabilizations:
                        out.append(CellSpec(self.problem, nc, nd, form, stab))
        return out


@dataclass(frozen=True)
class CellSpec:
    problem: Problem
    nc: int
    n_subdomains: int
    formulation: Formulation
    stabilization: BasisKind

    @property
    def name(self) -> str:
        form = "g" if self.formulation is Formulation.GALERKIN else "pg"
        return (
            f"{self.problem.value}_{self.nc}_{self.n_subdomains}"
            f"_{form}_{self.stabilization.value}"
        )


@dataclass
class ReportRow:
    """One table row; non-converged cells leave the result fields empty
    (the dash cells of the paper's tables) but keep their trace."""

    problem: str
    nc: int
    n_subdomains: int
    formulation: str
    stabilization: str
    n_snapshots: int = None
    columns: int = None
    max_verification_eta: float = None
    max_cond: float = None
    outcome: str = CONVERGED
    seed: int = 0
    error: str = None


def run_cell(grid: ExperimentGrid, cell: CellSpec, fom: FullOrderModel = None):
    """Train and verify one grid cell; returns (row, trace, basis)."""
    if fom is None:
        fom = FullOrderModel.build(
            cell.problem, cell.nc, n_subdomains=cell.n_subdomains, beta=grid.beta
        )
    config = GreedyConfig(
        formulation=cell.formulation,
        stabilization=cell.stabilization,
        tol=grid.tol,
        n_train=grid.n_train,
        max_basis=grid.max_basis,
        seed=grid.seed,
        verification_size=grid.verification_size,
        threads=grid.threads,
    )
    basis, trace = greedy_train(fom, config)
    row = ReportRow(
        problem=cell.problem.value,
        nc=cell.nc,
        n_subdomains=cell.n_subdomains,
        formulation=cell.formulation.value,
        stabilization=cell.stabilization.value,
        outcome=trace.outcome,
        seed=grid.seed,
    )
    if trace.outcome == CONVERGED:
        # redraw the training set (same seed, deterministic) so the
        # verification sampler can reject exact duplicates
        training = sample_training_set(fom.box, grid.n_train, grid.seed)
        report = verify(
            fom,
            basis,
            cell.formulation,
            grid.verification_size,
            seed=grid.seed + 1,
            training=training,
            threads=grid.threads,
        )
        row.n_snapshots = basis.n_snapshots
        row.columns = basis.total_columns
        row.max_verification_eta = report.max_eta
        row.max_cond = trace.max_cond
    return row, trace, basis


def run_grid(grid: ExperimentGrid):
    """Execute every cell; cell failures land in the row, not the run."""
    rows, traces, bases = [], {}, {}
    foms = {}
    for cell in grid.cells():
        key = (cell.nc, cell.n_subdomains)
        if key not in foms:
            foms[key] = FullOrderModel.build(
                cell.problem, cell.nc, n_subdomains=cell.n_subdomains, beta=grid.beta
            )
        start = time.perf_counter()
        try:
            row, trace, basis = run_cell(grid, cell, fom=foms[key])
            traces[cell.name] = trace
            bases[cell.name] = basis
        except Exception as exc:  # record, keep the grid going
            logger.exception("cell %s failed", cell.name)
            row = ReportRow(
                problem=cell.problem.value,
                nc=cell.nc,
                n_subdomains=cell.n_subdomains,
                formulation=cell.formulation.value,
                stabilization=cell.stabilization.value,
                outcome="error",
                seed=grid.seed,
                error=str(exc),
            )
        rows.append(row)
        logger.info(
            "cell %s: %s in %.1fs", cell.name, row.outcome,
            time.perf_counter() - start,
        )
    return rows, traces, bases


def _format(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(rows, path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.problem,
                    row.nc,
                    row.n_subdomains,
                    row.formulation,
                    row.stabilization,
                    _format(row.n_snapshots),
                    _format(row.columns),
                    _format(row.max_verification_eta),
                    _format(row.max_cond),
                    row.outcome,
                    row.seed,
                ]
            )


def read_table(path) -> list:
    rows = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for rec in reader:
            rows.append(
                ReportRow(
                    problem=rec["problem"],
                    nc=int(rec["nc"]),
                    n_subdomains=int(rec["n_subdomains"]),
                    formulation=rec["formulation"],
                    stabilization=rec["stabilization"],
                    n_snapshots=int(rec["N"]) if rec["N"] else None,
                    columns=int(rec["columns"]) if rec["columns"] else None,
                    max_verification_eta=(
                        float(rec["max_verification_eta"])
                        if rec["max_verification_eta"]
                        else None
                    ),
                    max_cond=float(rec["max_cond"]) if rec["max_cond"] else None,
                    outcome=rec["outcome"],
                    seed=int(rec["seed"]),
                )
            )
    return rows


def software_fingerprint() -> dict:
    return {
        "package": f"rbcontrol {__version__}",
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def emit_reports(rows, traces, out_dir, grid: ExperimentGrid = None) -> list:
    """Write table.csv, per-cell trace CSVs, and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "table.csv"]
    write_table(rows, paths[0])
    for name, trace in traces.items():
        path = out / f"trace_{name}.csv"
        trace.write_csv(path)
        paths.append(path)
    summary = {
        "software": software_fingerprint(),
        "rows": [dataclasses.asdict(row) for row in rows],
    }
    if grid is not None:
        cfg = dataclasses.asdict(grid)
        cfg["problem"] = grid.problem.value
        cfg["formulations"] = [f.value for f in grid.formulations]
        cfg["stabilizations"] = [s.value for s in grid.stabilizations]
        summary["grid"] = cfg
    summary_path = out / "summary.json"
    with open(summary_path, "w") as handle:
        json.dump(summary, handle, indent=2)
    paths.append(summary_path)
    return paths
