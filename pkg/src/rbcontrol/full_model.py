"""Full-order KKT saddle-point system: assembly, solves, inf-sup.

First-order stationarity of the discretized control problem gives the
symmetric block system

    [ c_f M    0      -M   ] [f]   [ 0 ]
    [ 0        M      K(mu)^T ] [u] = [ b ]
    [ -M       K(mu)  0    ] [l]   [ d ]

with c_f = 2*beta for the diffusion problem and beta for Graetz (whose
cost carries the regularization as beta/2). The compact view groups the
control-state pair: A = blockdiag(c_f M, M), B(mu) = [-M, K(mu)].
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid_fem
from .errors import EigenSolveError, FingerprintError, FullSolveError
from .grid_fem import FemOperators, MeshSpec, build_mesh
from .parameters import ParameterBox, ParameterVector, Problem, parameter_box

#: Relative residual every full-order solution must satisfy.
SOLVE_TOL = 1e-10

#: Below this total system size the dense oracle solver is practical.
DENSE_LIMIT = 3000


def cost_scale(problem: Problem, beta: float) -> float:
    """Scaling of the control mass block in the (1,1) position."""
    return 2.0 * beta if problem is Problem.DIFFUSION else beta


@dataclass
class NormMatrices:
    """Inner products of the control-state space X and adjoint space Q.

    X uses blockdiag(c_f M, M), the (1,1) block of the compact saddle
    form; Q uses the reference (unit diffusivity) stiffness.
    """

    mass: sp.csr_matrix
    stiffness_ref: sp.csr_matrix
    c_f: float
    _mass_lu: object = field(default=None, repr=False)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass.tocsc())
        return self._mass_lu.solve(rhs)


def make_norm_matrices(ops: FemOperators, beta: float) -> NormMatrices:
    return NormMatrices(
        mass=ops.mass,
        stiffness_ref=ops.stiffness_ref,
        c_f=cost_scale(ops.problem, beta),
    )


@dataclass
class FullKKT:
    """Assembled blocks of the full-order optimality system at one mu."""

    mu: ParameterVector
    beta: float
    c_f: float
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix   # K(mu), including convection for Graetz
    target: np.ndarray         # b(mu)
    lift: np.ndarray           # d(mu)
    n: int

    def rhs(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.n), self.target, self.lift])

    def as_sparse(self) -> sp.csr_matrix:
        M, K = self.mass, self.stiffness
        return sp.bmat(
            [
                [self.c_f * M, None, -M],
                [None, M, K.T],
                [-M, K, None],
            ],
            format="csr",
        )

    def apply(self, f, u, lam):
        """Blockwise matrix-vector product G(mu) (f, u, lam)."""
        Mf = self.mass @ f
        r1 = self.c_f * Mf - self.mass @ lam
        r2 = self.mass @ u + self.stiffness.T @ lam
        r3 = -Mf + self.stiffness @ u
        return r1, r2, r3

    def residual(self, f, u, lam) -> float:
        r1, r2, r3 = self.apply(f, u, lam)
        r2 -= self.target
        r3 -= self.lift
        return np.sqrt(r1 @ r1 + r2 @ r2 + r3 @ r3)

    def constraint_residual(self, f, u) -> float:
        r = self.stiffness @ u - self.mass @ f - self.lift
        return np.linalg.norm(r)


def assemble_kkt(ops: FemOperators, mu: ParameterVector, beta: float) -> FullKKT:
    """Assemble the full system at one admissible parameter."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return FullKKT(
        mu=mu,
        beta=beta,
        c_f=cost_scale(ops.problem, beta),
        mass=ops.mass,
        stiffness=ops.stiffness_at(mu.values),
        target=ops.target_rhs(mu.values),
        lift=ops.lift_vector(mu.values),
        n=ops.n_interior,
    )


@dataclass
class Snapshot:
    """Full-order solution triple at one parameter, with its residual
    certificate (relative KKT residual of the direct solve)."""

    mu: ParameterVector
    control: np.ndarray
    state: np.ndarray
    adjoint: np.ndarray
    residual_norm: float

    @property
    def xbar(self) -> np.ndarray:
        return np.concatenate([self.control, self.state])


def solve_full(kkt: FullKKT, method: str = "sparse") -> Snapshot:
    """Direct factorization solve of the full KKT system.

    method="dense" uses a plain LAPACK LU on the assembled matrix and is
    meant for oracle comparisons on small meshes.
    """
    rhs = kkt.rhs()
    matrix = kkt.as_sparse()
    try:
        if method == "dense":
            if 3 * kkt.n > DENSE_LIMIT:
                raise FullSolveError(
                    f"dense solve limited to {DENSE_LIMIT} unknowns, got {3 * kkt.n}"
                )
            x = scipy.linalg.solve(matrix.toarray(), rhs)
        else:
            x = spla.splu(matrix.tocsc()).solve(rhs)
    except (RuntimeError, scipy.linalg.LinAlgError) as exc:
        raise FullSolveError(
            f"full solve failed at mu={kkt.mu.values.tolist()}: {exc}"
        ) from exc

    n = kkt.n
    snap = Snapshot(
        mu=kkt.mu,
        control=x[:n],
        state=x[n : 2 * n],
        adjoint=x[2 * n :],
        residual_norm=0.0,
    )
    scale = np.linalg.norm(rhs)
    resid = kkt.residual(snap.control, snap.state, snap.adjoint)
    constraint = kkt.constraint_residual(snap.control, snap.state)
    bound = SOLVE_TOL * scale if scale > 0 else SOLVE_TOL
    if resid > bound or constraint > bound:
        raise FullSolveError(
            f"solution certificate violated at mu={kkt.mu.values.tolist()}: "
            f"residual={resid:.3e}, constraint={constraint:.3e}, rhs={scale:.3e}"
        )
    snap.residual_norm = resid / scale if scale > 0 else resid
    return snap


def inf_sup_full(ops: FemOperators, mu: ParameterVector, norms: NormMatrices) -> float:
    """Full-order inf-sup constant at one parameter.

    Smallest generalized eigenvalue of the Schur complement
    B(mu) A^{-1} B(mu)^T against the adjoint norm matrix, computed
    densely; the inf-sup constant is its square root. Here
    B A^{-1} B^T = M / c_f + K(mu) M^{-1} K(mu)^T.
    """
    Md = norms.mass.toarray()
    K = ops.stiffness_at(mu.values).toarray()
    S = Md / norms.c_f + K @ np.linalg.solve(Md, K.T)
    S = 0.5 * (S + S.T)
    Kref = norms.stiffness_ref.toarray()
    try:
        lam = scipy.linalg.eigh(S, Kref, subset_by_index=[0, 0], eigvals_only=True)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolveError(
            f"inf-sup eigensolve failed at mu={mu.values.tolist()}: {exc}"
        ) from exc
    return float(np.sqrt(max(lam[0], 0.0)))


@dataclass
class FullOrderModel:
    """One benchmark instance: mesh, operators, norms, parameter box."""

    problem: Problem
    spec: MeshSpec
    mesh: grid_fem.Mesh
    ops: FemOperators
    norms: NormMatrices
    box: ParameterBox
    beta: float

    @classmethod
    def build(
        cls,
        problem: Problem,
        nc: int,
        n_subdomains: int = 3,
        beta: float = 1e-2,
        elements_per_side: int = None,
    ) -> "FullOrderModel":
        spec = MeshSpec(
            nc=nc,
            problem=problem,
            n_subdomains=n_subdomains,
            elements_per_side=elements_per_side,
        )
        mesh = build_mesh(spec)
        ops = grid_fem.assemble_operators(mesh)
        return cls(
            problem=problem,
            spec=spec,
            mesh=mesh,
            ops=ops,
            norms=make_norm_matrices(ops, beta),
            box=parameter_box(problem, spec.n_subdomains),
            beta=beta,
        )

    @property
    def fingerprint(self) -> str:
        return self.ops.fingerprint

    def parameter(self, values) -> ParameterVector:
        return ParameterVector(np.asarray(values, dtype=float), self.box)

    def kkt(self, mu) -> FullKKT:
        if not isinstance(mu, ParameterVector):
            mu = self.parameter(mu)
        return assemble_kkt(self.ops, mu, self.beta)


def save_snapshot(path, snapshot: Snapshot, fingerprint: str):
    """Write one snapshot as an npz container with its mesh fingerprint."""
    meta = {
        "fingerprint": fingerprint,
        "box_lows": list(snapshot.mu.box.lows),
        "box_highs": list(snapshot.mu.box.highs),
    }
    np.savez(
        path,
        mu=snapshot.mu.values,
        control=snapshot.control,
        state=snapshot.state,
        adjoint=snapshot.adjoint,
        residual_norm=np.array(snapshot.residual_norm),
        meta=np.array(json.dumps(meta)),
    )


def load_snapshot(path, expected_fingerprint: str = None) -> Snapshot:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if expected_fingerprint and meta["fingerprint"] != expected_fingerprint:
            raise FingerprintError(
                f"snapshot fingerprint {meta['fingerprint']} does not match "
                f"expected {expected_fingerprint}"
            )
        box = ParameterBox(tuple(meta["box_lows"]), tuple(meta["box_highs"]))
        return Snapshot(
            mu=ParameterVector(data["mu"], box),
            control=data["control"],
            state=data["state"],
            adjoint=data["adjoint"],
            residual_norm=float(data["residual_norm"]),
        )
