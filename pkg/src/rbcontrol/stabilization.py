"""Basis-update strategies: naive, approximate supremizer, aggregation.

A naive update inserts the raw snapshot blocks and yields a reduced
saddle problem that loses inf-sup stability (the projected constraint
operator is singular at every snapshot parameter when the Dirichlet
data vanishes). The supremizer update additionally inserts the solution
of A r = B(mu)^T lambda at the snapshot's own parameter into the
control-state block; aggregation inserts both state and adjoint
snapshots into a single shared block so the two spaces stay identical.

Supremizers built with the snapshot parameters are the offline-friendly
approximation; the online-parameter variant is provided for stability
verification only (build_exact_supremizer_basis).
"""

from dataclasses import dataclass

import numpy as np

from .full_model import FullKKT, NormMatrices, Snapshot
from .parameters import BasisKind, ParameterVector
from .reduced_basis import ReducedBasis, orthonormal_extend


@dataclass
class StabilizationUpdate:
    """Vectors one snapshot contributes to each basis block, in
    insertion order (snapshot content before stabilizer content)."""

    kind: BasisKind
    mu: ParameterVector
    vectors: dict


def naive_update(snapshot: Snapshot) -> StabilizationUpdate:
    return StabilizationUpdate(
        kind=BasisKind.NAIVE,
        mu=snapshot.mu,
        vectors={"xbar": [snapshot.xbar], "lam": [snapshot.adjoint]},
    )


def solve_supremizer(
    adjoint: np.ndarray, kkt: FullKKT, norms: NormMatrices
) -> np.ndarray:
    """Solve A r = B(mu)^T lambda for the control-state supremizer.

    A = blockdiag(c_f M, M), so the control half reduces to
    -lambda / c_f exactly; only the state half needs the mass solve.
    """
    r_control = -adjoint / norms.c_f
    r_state = norms.solve_mass(kkt.stiffness.T @ adjoint)
    return np.concatenate([r_control, r_state])


def supremizer_update(
    snapshot: Snapshot, norms: NormMatrices, kkt: FullKKT
) -> StabilizationUpdate:
    r = solve_supremizer(snapshot.adjoint, kkt, norms)
    return StabilizationUpdate(
        kind=BasisKind.SUPREMIZER,
        mu=snapshot.mu,
        vectors={"xbar": [snapshot.xbar, r], "lam": [snapshot.adjoint]},
    )


def aggregation_update(snapshot: Snapshot) -> StabilizationUpdate:
    return StabilizationUpdate(
        kind=BasisKind.AGGREGATION,
        mu=snapshot.mu,
        vectors={"f": [snapshot.control], "z": [snapshot.state, snapshot.adjoint]},
    )


def make_update(
    kind: BasisKind, snapshot: Snapshot, norms: NormMatrices, kkt: FullKKT
) -> StabilizationUpdate:
    if kind is BasisKind.NAIVE:
        return naive_update(snapshot)
    if kind is BasisKind.SUPREMIZER:
        return supremizer_update(snapshot, norms, kkt)
    return aggregation_update(snapshot)


def apply_update(basis: ReducedBasis, update: StabilizationUpdate) -> ReducedBasis:
    """Orthonormalize the update's vectors into the basis and record the
    snapshot parameter."""
    if update.kind is not basis.kind:
        raise ValueError(
            f"cannot apply a {update.kind.value} update to a {basis.kind.value} basis"
        )
    known_drops = len(basis.drops)
    for block, vectors in update.vectors.items():
        orthonormal_extend(basis, block, vectors)
    for drop in basis.drops[known_drops:]:
        drop["mu"] = update.mu.values.tolist()
    basis.snapshot_params.append(update.mu)
    return basis


def build_exact_supremizer_basis(
    basis: ReducedBasis, kkt_online: FullKKT, norms: NormMatrices
) -> ReducedBasis:
    """Online-enriched basis with exact supremizers (verification only).

    For every adjoint basis vector, the supremizer equation is solved at
    the online parameter and the result appended to the control-state
    block; the adjoint block is kept. Because the supremizers depend on
    the online parameter this construction has no offline/online split
    and is used only to check the stability bound numerically.
    """
    L = basis.adjoint_block()
    enriched = ReducedBasis(
        kind=basis.kind,
        n=basis.n,
        blocks={"xbar": basis.x_block().copy(), "lam": L.copy()},
        snapshot_params=list(basis.snapshot_params),
        fingerprint=basis.fingerprint,
    )
    supremizers = [
        solve_supremizer(L[:, j], kkt_online, norms) for j in range(L.shape[1])
    ]
    orthonormal_extend(enriched, "xbar", supremizers)
    return enriched
