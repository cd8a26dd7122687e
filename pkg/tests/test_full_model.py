"""Full-order KKT assembly, direct solves, and the inf-sup eigensolve."""

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize

from rbcontrol import (
    Problem,
    assemble_kkt,
    inf_sup_full,
    load_snapshot,
    save_snapshot,
    solve_full,
)
from rbcontrol.errors import FingerprintError, FullSolveError, ParameterDomainError
from rbcontrol.full_model import NormMatrices, cost_scale


class TestAssembleKKT:
    def test_control_block_scaling(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([0.5, 0.5, 0.5])
        assert kkt.c_f == pytest.approx(0.02)
        top_left = kkt.as_sparse()[: kkt.n, : kkt.n]
        assert np.abs((top_left - 0.02 * kkt.mass)).max() < 1e-18

    def test_graetz_control_block_scaling(self, graetz_nc3):
        kkt = graetz_nc3.kkt([0.1, 1.0, 2.0])
        assert kkt.c_f == pytest.approx(0.01)

    def test_unit_parameter_gives_reference_stiffness(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([1.0, 1.0, 1.0])
        assert np.abs((kkt.stiffness - diffusion_nc3.ops.stiffness_ref)).max() == 0.0

    @pytest.mark.parametrize("problem", [Problem.DIFFUSION, Problem.GRAETZ])
    def test_symmetric_saddle_structure(self, make_fom, problem):
        fom = make_fom(problem, 2) if problem is Problem.GRAETZ else make_fom(
            problem, 2, n_subdomains=2
        )
        mu = fom.box.midpoint
        G = fom.kkt(mu).as_sparse()
        assert np.abs((G - G.T)).max() == 0.0

    def test_parameter_outside_box_rejected(self, diffusion_nc3):
        with pytest.raises(ParameterDomainError):
            diffusion_nc3.kkt([2.0, 0.5, 0.5])
        with pytest.raises(ParameterDomainError):
            diffusion_nc3.kkt([0.5, 0.5])

    def test_beta_must_be_positive(self, diffusion_nc3):
        mu = diffusion_nc3.parameter([0.5, 0.5, 0.5])
        with pytest.raises(ValueError):
            assemble_kkt(diffusion_nc3.ops, mu, beta=0.0)


class TestSolveFull:
    def test_certificates_hold(self, diffusion_nc3, rng):
        for _ in range(5):
            mu = diffusion_nc3.parameter(rng.uniform(0.01, 1.0, 3))
            kkt = diffusion_nc3.kkt(mu)
            snap = solve_full(kkt)
            rhs_norm = np.linalg.norm(kkt.rhs())
            assert snap.residual_norm <= 1e-10
            assert kkt.constraint_residual(snap.control, snap.state) <= 1e-10 * rhs_norm

    def test_homogeneous_constraint_residual(self, diffusion_nc3):
        # g = 0 for diffusion, so the constraint rows carry no lift
        kkt = diffusion_nc3.kkt([0.3, 0.7, 0.2])
        assert np.all(kkt.lift == 0.0)
        snap = solve_full(kkt)
        resid = np.linalg.norm(
            kkt.stiffness @ snap.state - kkt.mass @ snap.control
        )
        assert resid <= 1e-10 * np.linalg.norm(kkt.rhs())

    def test_zero_rhs_gives_zero_solution(self, diffusion_nc3):
        kkt = diffusion_nc3.kkt([0.4, 0.4, 0.4])
        kkt.target = np.zeros_like(kkt.target)  # testing hook: u_hat = 0
        snap = solve_full(kkt)
        assert np.linalg.norm(snap.control) == 0.0
        assert np.linalg.norm(snap.state) == 0.0
        assert np.linalg.norm(snap.adjoint) == 0.0

    def test_dense_oracle_agreement(self, diffusion_nc2):
        kkt = diffusion_nc2.kkt([1.0, 1.0])
        sparse = solve_full(kkt, method="sparse")
        dense = solve_full(kkt, method="dense")
        for a, b in (
            (sparse.control, dense.control),
            (sparse.state, dense.state),
            (sparse.adjoint, dense.adjoint),
        ):
            assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)

    def test_dense_solver_size_guard(self, make_fom):
        fom = make_fom(Problem.DIFFUSION, 5, n_subdomains=3)
        with pytest.raises(FullSolveError):
            solve_full(fom.kkt(fom.box.midpoint), method="dense")

    def test_symmetric_vs_unsymmetric_factorization(self, diffusion_nc2):
        kkt = diffusion_nc2.kkt([0.2, 0.9])
        dense = kkt.as_sparse().toarray()
        rhs = kkt.rhs()
        x_sym = scipy.linalg.solve(dense, rhs, assume_a="sym")
        x_lu = solve_full(kkt)
        x_ref = np.concatenate([x_lu.control, x_lu.state, x_lu.adjoint])
        assert np.linalg.norm(x_sym - x_ref) <= 1e-12 * np.linalg.norm(x_ref)

    def test_adjoint_proportional_to_control(self, diffusion_nc3):
        # first optimality row: c_f M f = M lambda
        snap = solve_full(diffusion_nc3.kkt([0.5, 0.1, 0.8]))
        c_f = cost_scale(Problem.DIFFUSION, diffusion_nc3.beta)
        assert np.allclose(snap.adjoint, c_f * snap.control, rtol=0, atol=1e-9)


class TestInfSup:
    def test_positive_over_random_draws(self, diffusion_nc3, rng):
        for _ in range(20):
            mu = diffusion_nc3.parameter(rng.uniform(0.01, 1.0, 3))
            assert inf_sup_full(diffusion_nc3.ops, mu, diffusion_nc3.norms) > 0.0

    def test_quadrupled_norm_halves_constant(self, diffusion_nc3):
        mu = diffusion_nc3.parameter([0.5, 0.5, 0.5])
        base = inf_sup_full(diffusion_nc3.ops, mu, diffusion_nc3.norms)
        scaled = NormMatrices(
            mass=diffusion_nc3.norms.mass,
            stiffness_ref=4.0 * diffusion_nc3.norms.stiffness_ref,
            c_f=diffusion_nc3.norms.c_f,
        )
        assert inf_sup_full(diffusion_nc3.ops, mu, scaled) == pytest.approx(
            base / 2.0, rel=1e-12
        )

    def test_rayleigh_quotient_minimization_oracle(self, make_fom):
        # independent check: minimize the Rayleigh quotient directly
        fom = make_fom(Problem.DIFFUSION, 2, n_subdomains=1)
        mu = fom.parameter([1.0])
        beta0 = inf_sup_full(fom.ops, mu, fom.norms)
        Md = fom.norms.mass.toarray()
        K = fom.ops.stiffness_at(mu.values).toarray()
        S = Md / fom.norms.c_f + K @ np.linalg.solve(Md, K.T)
        Kref = fom.norms.stiffness_ref.toarray()

        def quotient(q):
            return (q @ (S @ q)) / (q @ (Kref @ q))

        rng = np.random.default_rng(0)
        best = np.inf
        for _ in range(5):
            res = scipy.optimize.minimize(
                quotient, rng.standard_normal(S.shape[0]), method="BFGS",
                options={"gtol": 1e-12, "maxiter": 2000},
            )
            best = min(best, res.fun)
        assert np.sqrt(best) == pytest.approx(beta0, rel=1e-6)

    def test_continuity_along_parameter_sweep(self, make_fom):
        # geometric grid resolves the small-diffusivity end where the
        # constant itself scales with mu
        fom = make_fom(Problem.DIFFUSION, 2, n_subdomains=1)
        values = np.array(
            [
                inf_sup_full(fom.ops, fom.parameter([m]), fom.norms)
                for m in np.geomspace(0.01, 1.0, 25)
            ]
        )
        assert np.all(values > 0.0)
        jumps = np.abs(np.diff(values)) / values[:-1]
        assert jumps.max() < 0.5
        total_variation = np.abs(np.diff(np.log(values))).sum()
        assert total_variation < 2.0 * abs(np.log(values[-1] / values[0])) + 1.0

    def test_graetz_positive(self, graetz_nc3, rng):
        lows, highs = graetz_nc3.box.lows, graetz_nc3.box.highs
        for _ in range(5):
            mu = graetz_nc3.parameter(rng.uniform(lows, highs))
            assert inf_sup_full(graetz_nc3.ops, mu, graetz_nc3.norms) > 0.0


class TestSnapshotIO:
    def test_roundtrip(self, diffusion_nc2, tmp_path):
        snap = solve_full(diffusion_nc2.kkt([0.7, 0.3]))
        path = tmp_path / "snap.npz"
        save_snapshot(path, snap, diffusion_nc2.fingerprint)
        loaded = load_snapshot(path, expected_fingerprint=diffusion_nc2.fingerprint)
        assert np.array_equal(loaded.mu.values, snap.mu.values)
        assert np.array_equal(loaded.control, snap.control)
        assert np.array_equal(loaded.state, snap.state)
        assert np.array_equal(loaded.adjoint, snap.adjoint)
        assert loaded.residual_norm == snap.residual_norm

    def test_fingerprint_mismatch(self, diffusion_nc2, tmp_path):
        snap = solve_full(diffusion_nc2.kkt([0.7, 0.3]))
        path = tmp_path / "snap.npz"
        save_snapshot(path, snap, diffusion_nc2.fingerprint)
        with pytest.raises(FingerprintError):
            load_snapshot(path, expected_fingerprint="deadbeef")
