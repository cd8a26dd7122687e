"""Stabilization updates and their structural guarantees."""

import numpy as np
import pytest

from rbcontrol import (
    BasisKind,
    ReducedBasis,
    inf_sup_full,
    reduced_inf_sup,
    solve_full,
)
from rbcontrol.stabilization import (
    aggregation_update,
    apply_update,
    build_exact_supremizer_basis,
    make_update,
    naive_update,
    solve_supremizer,
    supremizer_update,
)


def build_basis(fom, kind, params):
    basis = ReducedBasis(kind=kind, n=fom.ops.n_interior, fingerprint=fom.fingerprint)
    for values in params:
        kkt = fom.kkt(values)
        snap = solve_full(kkt)
        apply_update(basis, make_update(kind, snap, fom.norms, kkt))
    return basis


class TestSupremizerUpdate:
    def test_zero_adjoint_gives_zero_supremizer(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([0.5, 0.5, 0.5])
        r = solve_supremizer(np.zeros(kkt.n), kkt, diffusion_nc3.norms)
        assert np.all(r == 0.0)

    def test_supremizer_equation_residual(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([0.2, 0.7, 0.9])
        snap = solve_full(kkt)
        r = solve_supremizer(snap.adjoint, kkt, diffusion_nc3.norms)
        n = kkt.n
        # A r = B(mu)^T lambda with A = blockdiag(c_f M, M)
        lhs = np.concatenate(
            [kkt.c_f * (kkt.mass @ r[:n]), kkt.mass @ r[n:]]
        )
        rhs = np.concatenate(
            [-(kkt.mass @ snap.adjoint), kkt.stiffness.T @ snap.adjoint]
        )
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_update_grows_columns_by_three(self, diffusion_nc3):
        basis = build_basis(diffusion_nc3, BasisKind.SUPREMIZER, [[0.3, 0.6, 0.9]])
        assert basis.total_columns == 3
        kkt = diffusion_nc3.kkt([0.7, 0.2, 0.5])
        snap = solve_full(kkt)
        apply_update(
            basis, supremizer_update(snap, diffusion_nc3.norms, kkt)
        )
        assert basis.total_columns == 6
        assert basis.blocks["xbar"].shape[1] == 4
        assert basis.blocks["lam"].shape[1] == 2

    def test_column_law_over_updates(self, diffusion_nc3, rng):
        params = [rng.uniform(0.01, 1.0, 3) for _ in range(4)]
        basis = build_basis(diffusion_nc3, BasisKind.SUPREMIZER, params)
        assert basis.total_columns == 3 * basis.n_snapshots == 12


class TestAggregationUpdate:
    def test_first_update_column_counts(self, diffusion_nc3):
        basis = build_basis(diffusion_nc3, BasisKind.AGGREGATION, [[0.3, 0.6, 0.9]])
        assert basis.blocks["f"].shape[1] == 1
        assert basis.blocks["z"].shape[1] == 2  # state and adjoint both enter
        assert basis.total_columns == 5

    def test_state_and_adjoint_blocks_identical(self, diffusion_nc3, rng):
        params = [rng.uniform(0.01, 1.0, 3) for _ in range(3)]
        basis = build_basis(diffusion_nc3, BasisKind.AGGREGATION, params)
        system_view_u = basis.blocks["z"]
        system_view_lam = basis.adjoint_block()
        assert system_view_u is system_view_lam  # one shared matrix
        assert basis.total_columns == 5 * basis.n_snapshots

    def test_degenerate_equal_state_adjoint_logged(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([0.4, 0.4, 0.4])
        snap = solve_full(kkt)
        snap.adjoint = snap.state.copy()  # degenerate on purpose
        basis = ReducedBasis(
            kind=BasisKind.AGGREGATION, n=diffusion_nc3.ops.n_interior
        )
        apply_update(basis, aggregation_update(snap))
        assert basis.blocks["z"].shape[1] == 1
        assert len(basis.drops) == 1
        assert basis.drops[0]["block"] == "z"
        assert basis.drops[0]["mu"] == snap.mu.values.tolist()
        assert basis.total_columns < basis.expected_columns()


class TestNaiveUpdate:
    def test_blocks_and_counts(self, diffusion_nc3):
        basis = build_basis(
            diffusion_nc3, BasisKind.NAIVE, [[0.3, 0.6, 0.9], [0.7, 0.1, 0.2]]
        )
        assert basis.blocks["xbar"].shape == (2 * diffusion_nc3.ops.n_interior, 2)
        assert basis.blocks["lam"].shape == (diffusion_nc3.ops.n_interior, 2)

    def test_kind_mismatch_rejected(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([0.4, 0.4, 0.4])
        snap = solve_full(kkt)
        basis = ReducedBasis(kind=BasisKind.AGGREGATION, n=diffusion_nc3.ops.n_interior)
        with pytest.raises(ValueError):
            apply_update(basis, naive_update(snap))


class TestExactSupremizer:
    def test_enriched_space_meets_full_inf_sup(self, diffusion_nc3, rng):
        basis = build_basis(
            diffusion_nc3,
            BasisKind.NAIVE,
            [rng.uniform(0.01, 1.0, 3) for _ in range(4)],
        )
        for _ in range(3):
            mu = diffusion_nc3.parameter(rng.uniform(0.01, 1.0, 3))
            kkt = diffusion_nc3.kkt(mu)
            beta0 = inf_sup_full(diffusion_nc3.ops, mu, diffusion_nc3.norms)
            enriched = build_exact_supremizer_basis(basis, kkt, diffusion_nc3.norms)
            beta_reduced = reduced_inf_sup(enriched, kkt, diffusion_nc3.norms)
            assert beta_reduced >= beta0 - 1e-8

    def test_single_snapshot_matches_approximate(self, diffusion_nc3):
        values = [0.35, 0.55, 0.75]
        kkt = diffusion_nc3.kkt(values)
        snap = solve_full(kkt)
        basis = ReducedBasis(kind=BasisKind.NAIVE, n=diffusion_nc3.ops.n_interior)
        apply_update(basis, naive_update(snap))
        enriched = build_exact_supremizer_basis(basis, kkt, diffusion_nc3.norms)
        # at the snapshot's own parameter the two constructions coincide
        r_approx = solve_supremizer(snap.adjoint, kkt, diffusion_nc3.norms)
        exact_col = enriched.blocks["xbar"][:, -1]
        r_unit = r_approx / np.linalg.norm(r_approx)
        # up to the Gram-Schmidt projection against the snapshot column
        Q = enriched.blocks["xbar"][:, :-1]
        r_proj = r_unit - Q @ (Q.T @ r_unit)
        r_proj /= np.linalg.norm(r_proj)
        align = abs(exact_col @ r_proj)
        assert align == pytest.approx(1.0, abs=1e-12)

    def test_zero_adjoint_block_adds_nothing(self, diffusion_nc3):
        basis = ReducedBasis(kind=BasisKind.NAIVE, n=diffusion_nc3.ops.n_interior)
        kkt = diffusion_nc3.kkt([0.5, 0.5, 0.5])
        enriched = build_exact_supremizer_basis(basis, kkt, diffusion_nc3.norms)
        assert enriched.blocks["xbar"].shape[1] == 0
        assert enriched.blocks["lam"].shape[1] == 0

    def test_aggregation_source_expands_blockdiagonal(self, diffusion_nc3):
        basis = build_basis(
            diffusion_nc3, BasisKind.AGGREGATION, [[0.3, 0.6, 0.9]]
        )
        kkt = diffusion_nc3.kkt([0.5, 0.5, 0.5])
        enriched = build_exact_supremizer_basis(basis, kkt, diffusion_nc3.norms)
        kf = basis.blocks["f"].shape[1]
        kz = basis.blocks["z"].shape[1]
        assert enriched.blocks["xbar"].shape[1] == kf + kz + kz  # plus supremizers
