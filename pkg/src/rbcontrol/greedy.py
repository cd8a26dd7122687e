"""Greedy snapshot sampling: training, trace recording, verification.

The loop follows the classic residual-driven greedy: sweep the training
set with the current reduced model, pick the parameter with the worst
relative residual, solve the full system there, and grow the basis with
the configured stabilization update. Sweeps may run on a thread pool;
results are gathered into an index-ordered array before the argmax so
every thread count selects the same parameters.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ReducedSolveError
from .full_model import FullOrderModel, solve_full
from .parameters import BasisKind, Formulation, ParameterBox, ParameterVector, Problem
from .reduced_basis import (
    ReducedBasis,
    error_indicator,
    project,
    solve_least_squares_qr,
    solve_reduced,
)
from .stabilization import apply_update, make_update

logger = logging.getLogger(__name__)

DEFAULT_TOL = {Problem.DIFFUSION: 1e-7, Problem.GRAETZ: 1e-4}

CONVERGED = "converged"
FAILED_TO_CONVERGE = "failed_to_converge"


@dataclass
class GreedyConfig:
    """Knobs of one greedy run; tol and max_basis resolve per problem."""

    formulation: Formulation = Formulation.GALERKIN
    stabilization: BasisKind = BasisKind.AGGREGATION
    tol: float = None
    n_train: int = 2000
    max_basis: int = None
    seed: int = 0
    verification_size: int = 500
    threads: int = 1
    pg_solver: str = "normal"  # "qr" solves the least squares directly

    def resolve(self, problem: Problem) -> "GreedyConfig":
        tol = DEFAULT_TOL[problem] if self.tol is None else self.tol
        max_basis = (
            min(self.n_train, 200) if self.max_basis is None else self.max_basis
        )
        if tol <= 0:
            raise ValueError("tol must be positive")
        if self.n_train < 1 or max_basis < 1:
            raise ValueError("n_train and max_basis must be at least 1")
        if self.pg_solver not in ("normal", "qr"):
            raise ValueError("pg_solver must be 'normal' or 'qr'")
        return GreedyConfig(
            formulation=self.formulation,
            stabilization=self.stabilization,
            tol=tol,
            n_train=self.n_train,
            max_basis=max_basis,
            seed=self.seed,
            verification_size=self.verification_size,
            threads=self.threads,
            pg_solver=self.pg_solver,
        )


@dataclass
class TraceRow:
    """State after one training sweep (row 0 records the seed snapshot
    before any sweep, with the error indicator still at infinity)."""

    iteration: int
    n_snapshots: int
    columns: int
    eta_star: float
    cond_max: float
    cond_at_selected: float
    mu_star: np.ndarray
    n_failed: int = 0
    wall_s: float = 0.0


@dataclass
class GreedyTrace:
    problem: Problem
    formulation: Formulation
    stabilization: BasisKind
    tol: float
    seed: int
    n_train: int
    rows: list = field(default_factory=list)
    outcome: str = FAILED_TO_CONVERGE

    @property
    def final_eta(self) -> float:
        return self.rows[-1].eta_star if self.rows else np.inf

    @property
    def n_snapshots(self) -> int:
        return self.rows[-1].n_snapshots if self.rows else 0

    @property
    def max_cond(self) -> float:
        """Largest reduced condition number over training set and
        iterations (the sweep rows; the seed row holds a single value)."""
        return max((row.cond_max for row in self.rows), default=np.nan)

    def csv_lines(self) -> list:
        dim = self.rows[0].mu_star.shape[0] if self.rows else 0
        header = "iteration,N,eta_star,cond," + ",".join(
            f"mu_{i}" for i in range(dim)
        )
        lines = [header]
        for row in self.rows:
            mu = ",".join(repr(float(v)) for v in row.mu_star)
            lines.append(
                f"{row.iteration},{row.n_snapshots},{repr(row.eta_star)},"
                f"{repr(row.cond_max)},{mu}"
            )
        return lines

    def write_csv(self, path):
        with open(path, "w") as handle:
            handle.write("\n".join(self.csv_lines()) + "\n")


def sample_training_set(box: ParameterBox, n: int, seed: int) -> list:
    """n i.i.d. uniform parameters; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    return [ParameterVector(row, box) for row in box.sample(rng, n)]


def _indicator_at(fom, basis, formulation, mu, pg_solver="normal"):
    """(eta, cond, failed) for one training parameter."""
    kkt = fom.kkt(mu)
    system = project(basis, kkt, formulation)
    try:
        if formulation is Formulation.PETROV_GALERKIN and pg_solver == "qr":
            coeffs = solve_least_squares_qr(basis, kkt)
        else:
            coeffs = solve_reduced(system)
        eta = error_indicator(basis, kkt, coeffs)
    except ReducedSolveError:
        return np.inf, system.cond, True
    return eta, system.cond, False


def _sweep(fom, basis, formulation, params, threads, pg_solver="normal"):
    """Evaluate the indicator over the training set, index-ordered.

    BLAS pools are pinned to one thread for the duration: the sweep is
    thousands of small dense operations, where multithreaded kernels
    only add contention (and would oversubscribe the worker pool).
    """
    etas = np.empty(len(params))
    conds = np.empty(len(params))
    failed = np.zeros(len(params), dtype=bool)
    with threadpool_limits(limits=1, user_api="blas"):
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(
                    pool.map(
                        lambda mu: _indicator_at(
                            fom, basis, formulation, mu, pg_solver
                        ),
                        params,
                    )
                )
            for i, (eta, cond, fail) in enumerate(results):
                etas[i], conds[i], failed[i] = eta, cond, fail
        else:
            for i, mu in enumerate(params):
                etas[i], conds[i], failed[i] = _indicator_at(
                    fom, basis, formulation, mu, pg_solver
                )
    return etas, conds, failed


def _check_column_law(basis: ReducedBasis):
    if basis.drops:
        logger.warning(
            "column-count law relaxed: %d dependent vectors dropped", len(basis.drops)
        )
        return
    if basis.total_columns != basis.expected_columns():
        raise RuntimeError(
            f"column-count law violated: {basis.total_columns} columns for "
            f"{basis.n_snapshots} snapshots ({basis.kind.value})"
        )


def greedy_train(fom: FullOrderModel, config: GreedyConfig):
    """Run the greedy loop; returns (basis, trace).

    The first snapshot is taken at the first training parameter. Each
    sweep records the worst indicator, the worst reduced condition
    number over the training set, and the selected parameter; reduced
    solves that fail numerically count as infinite indicators and are
    logged, never raised. The loop stops when the worst indicator drops
    below tol, or reports failure once the basis cap is reached.
    """
    config = config.resolve(fom.problem)
    training = sample_training_set(fom.box, config.n_train, config.seed)
    trace = GreedyTrace(
        problem=fom.problem,
        formulation=config.formulation,
        stabilization=config.stabilization,
        tol=config.tol,
        seed=config.seed,
        n_train=config.n_train,
    )

    basis = ReducedBasis(
        kind=config.stabilization, n=fom.ops.n_interior, fingerprint=fom.fingerprint
    )
    mu_first = training[0]
    start = time.perf_counter()
    kkt_first = fom.kkt(mu_first)
    snapshot = solve_full(kkt_first)
    apply_update(
        basis, make_update(config.stabilization, snapshot, fom.norms, kkt_first)
    )
    _check_column_law(basis)
    trace.rows.append(
        TraceRow(
            iteration=0,
            n_snapshots=1,
            columns=basis.total_columns,
            eta_star=np.inf,
            cond_max=project(basis, kkt_first, config.formulation).cond,
            cond_at_selected=np.nan,
            mu_star=np.array(mu_first.values),
            wall_s=time.perf_counter() - start,
        )
    )

    iteration = 0
    while True:
        iteration += 1
        start = time.perf_counter()
        etas, conds, failed = _sweep(
            fom, basis, config.formulation, training, config.threads,
            config.pg_solver,
        )
        best = int(np.argmax(etas))  # ties and infinities pick the lowest index
        eta_star = float(etas[best])
        mu_star = training[best]
        trace.rows.append(
            TraceRow(
                iteration=iteration,
                n_snapshots=basis.n_snapshots,
                columns=basis.total_columns,
                eta_star=eta_star,
                cond_max=float(np.max(conds)),
                cond_at_selected=float(conds[best]),
                mu_star=np.array(mu_star.values),
                n_failed=int(failed.sum()),
                wall_s=time.perf_counter() - start,
            )
        )
        logger.info(
            "greedy iter %d: N=%d eta*=%.3e cond_max=%.3e failed=%d",
            iteration,
            basis.n_snapshots,
            eta_star,
            trace.rows[-1].cond_max,
            trace.rows[-1].n_failed,
        )
        if eta_star <= config.tol:
            trace.outcome = CONVERGED
            break
        if basis.n_snapshots >= config.max_basis:
            trace.outcome = FAILED_TO_CONVERGE
            logger.warning(
                "greedy hit the basis cap (%d) with eta*=%.3e > tol=%.1e",
                config.max_basis,
                eta_star,
                config.tol,
            )
            break
        kkt_star = fom.kkt(mu_star)
        snapshot = solve_full(kkt_star)
        apply_update(
            basis,
            make_update(config.stabilization, snapshot, fom.norms, kkt_star),
        )
        _check_column_law(basis)
    return basis, trace


@dataclass
class VerificationReport:
    etas: np.ndarray
    params: list
    seed: int

    @property
    def max_eta(self) -> float:
        return float(np.max(self.etas)) if self.etas.size else np.nan

    @property
    def median_eta(self) -> float:
        return float(np.median(self.etas)) if self.etas.size else np.nan


def verify(
    fom: FullOrderModel,
    basis: ReducedBasis,
    formulation: Formulation,
    n_samples: int,
    seed: int,
    training: list = None,
    threads: int = 1,
    pg_solver: str = "normal",
) -> VerificationReport:
    """Evaluate the indicator over fresh parameters outside the training set.

    Draws uniform samples, rejecting any exact duplicate of a training
    parameter, then runs a reduced solve and full-order residual per
    sample. An empty basis reconstructs the zero solution, so every
    indicator is one.
    """
    rng = np.random.default_rng(seed)
    taken = {p.values.tobytes() for p in training} if training else set()
    params = []
    while len(params) < n_samples:
        draw = fom.box.sample(rng, n_samples - len(params))
        for row in draw:
            key = row.tobytes()
            if key not in taken:
                taken.add(key)
                params.append(ParameterVector(row, fom.box))
    etas, _, _ = _sweep(fom, basis, formulation, params, threads, pg_solver)
    return VerificationReport(etas=etas, params=params, seed=seed)
