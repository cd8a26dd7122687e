"""Block-diagonal reduced bases, projections, and error indicators.

Two block layouts are used, mirroring the two saddle views of the full
system. Naive and supremizer bases keep a combined control-state block
next to the adjoint block:

    Q = blockdiag(Q_xbar, Q_lam)          (two-block)

while aggregation keeps three blocks with the state and adjoint blocks
forced identical (stored once, as Z):

    Q = blockdiag(Q_f, Z, Z)              (three-block)

Projection supports a Galerkin reduced system Q^T G(mu) Q and a
Petrov-Galerkin one formed deliberately as the normal equations
(G Q)^T (G Q), whose conditioning squares that of the least-squares
operator.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import EigenSolveError, FingerprintError, ReducedSolveError
from .full_model import FullKKT, NormMatrices
from .parameters import BasisKind, Formulation, ParameterBox, ParameterVector

logger = logging.getLogger(__name__)

#: Above this post-orthogonalization norm ratio a vector is always kept.
DROP_TOL = 1e-10

#: At or below this ratio the residue is indistinguishable from roundoff.
ROUNDOFF_FLOOR = 1e-15

#: A residue that shrinks by more than this under re-orthogonalization is
#: cancellation noise, not a direction.
REORTH_STABLE = 0.5


@dataclass
class ReducedBasis:
    """Orthonormal block-diagonal reduced basis and its bookkeeping."""

    kind: BasisKind
    n: int                      # interior DOFs of the underlying mesh
    blocks: dict = None         # block name -> (rows, columns) ndarray
    snapshot_params: list = field(default_factory=list)
    drops: list = field(default_factory=list)
    fingerprint: str = ""

    def __post_init__(self):
        if self.blocks is None:
            if self.kind is BasisKind.AGGREGATION:
                self.blocks = {
                    "f": np.zeros((self.n, 0)),
                    "z": np.zeros((self.n, 0)),
                }
            else:
                self.blocks = {
                    "xbar": np.zeros((2 * self.n, 0)),
                    "lam": np.zeros((self.n, 0)),
                }

    @property
    def is_two_block(self) -> bool:
        return "xbar" in self.blocks

    @property
    def n_snapshots(self) -> int:
        return len(self.snapshot_params)

    @property
    def total_columns(self) -> int:
        """Columns of the full block-diagonal basis matrix. The shared
        aggregation block counts twice (state and adjoint)."""
        if self.is_two_block:
            return self.blocks["xbar"].shape[1] + self.blocks["lam"].shape[1]
        return self.blocks["f"].shape[1] + 2 * self.blocks["z"].shape[1]

    def expected_columns(self) -> int:
        """Column-count law for the stabilized kinds (exact when no
        dependent vector was dropped)."""
        n = self.n_snapshots
        return {
            BasisKind.NAIVE: 2 * n,
            BasisKind.SUPREMIZER: 3 * n,
            BasisKind.AGGREGATION: 5 * n,
        }[self.kind]

    def adjoint_block(self) -> np.ndarray:
        return self.blocks["lam"] if self.is_two_block else self.blocks["z"]

    def state_block(self) -> np.ndarray:
        if self.is_two_block:
            raise KeyError("two-block bases carry a combined control-state block")
        return self.blocks["z"]

    def x_block(self) -> np.ndarray:
        """Control-state block as one (2n, k) matrix; the three-block
        layout expands to blockdiag(Q_f, Z)."""
        if self.is_two_block:
            return self.blocks["xbar"]
        Qf, Z = self.blocks["f"], self.blocks["z"]
        out = np.zeros((2 * self.n, Qf.shape[1] + Z.shape[1]))
        out[: self.n, : Qf.shape[1]] = Qf
        out[self.n :, Qf.shape[1] :] = Z
        return out

    def coefficient_slices(self) -> dict:
        """Slices of the reduced coefficient vector per unknown block."""
        if self.is_two_block:
            kx = self.blocks["xbar"].shape[1]
            kl = self.blocks["lam"].shape[1]
            return {"xbar": slice(0, kx), "lam": slice(kx, kx + kl)}
        kf = self.blocks["f"].shape[1]
        kz = self.blocks["z"].shape[1]
        return {
            "f": slice(0, kf),
            "u": slice(kf, kf + kz),
            "lam": slice(kf + kz, kf + 2 * kz),
        }

    def expand(self, coeffs: np.ndarray):
        """Map reduced coefficients to full (control, state, adjoint)."""
        s = self.coefficient_slices()
        if self.is_two_block:
            xbar = self.blocks["xbar"] @ coeffs[s["xbar"]]
            lam = self.blocks["lam"] @ coeffs[s["lam"]]
            return xbar[: self.n], xbar[self.n :], lam
        f = self.blocks["f"] @ coeffs[s["f"]]
        u = self.blocks["z"] @ coeffs[s["u"]]
        lam = self.blocks["z"] @ coeffs[s["lam"]]
        return f, u, lam

    def orthonormality_defect(self) -> float:
        defect = 0.0
        for Q in self.blocks.values():
            if Q.shape[1]:
                gram = Q.T @ Q
                defect = max(defect, np.abs(gram - np.eye(Q.shape[1])).max())
        return defect


def _mgs_pass(Q: np.ndarray, w: np.ndarray) -> np.ndarray:
    for j in range(Q.shape[1]):
        w -= (Q[:, j] @ w) * Q[:, j]
    return w


def orthonormal_extend(basis: ReducedBasis, block: str, vectors) -> ReducedBasis:
    """Append vectors to one block via modified Gram-Schmidt.

    Each vector is orthogonalized column-by-column against the existing
    block, with one re-orthogonalization pass. Vectors whose residue is
    above DROP_TOL times their original norm are always kept. Below
    that, linearly dependent vectors are recorded in basis.drops instead
    of being appended; dependence is decided by the re-orthogonalization
    test: a true duplicate leaves only cancellation noise (it collapses
    at the roundoff floor or shrinks again on the second pass), whereas
    a snapshot component of an almost-saturated solution manifold keeps
    a stable residue and must stay so the stabilized bases preserve
    their exact column-count laws.
    """
    Q = basis.blocks[block]
    for v in vectors:
        v = np.asarray(v, dtype=float)
        if v.shape != (Q.shape[0],):
            raise ValueError(
                f"vector of length {v.shape[0]} cannot extend block "
                f"'{block}' with {Q.shape[0]} rows"
            )
        norm0 = np.linalg.norm(v)
        if norm0 == 0.0:
            basis.drops.append({"block": block, "reason": "zero vector"})
            logger.info("dropped zero vector from block %s", block)
            continue
        w1 = _mgs_pass(Q, v.copy())
        norm1 = np.linalg.norm(w1)
        w2 = _mgs_pass(Q, w1.copy())
        norm2 = np.linalg.norm(w2)
        ratio = norm1 / norm0
        shrink = norm2 / norm1 if norm1 > 0 else 0.0
        if ratio < DROP_TOL and (ratio < ROUNDOFF_FLOOR or shrink < REORTH_STABLE):
            basis.drops.append({"block": block, "reason": "dependent vector"})
            logger.info(
                "dropped dependent vector from block %s (residue %.1e)", block, ratio
            )
            continue
        Q = np.column_stack([Q, w2 / norm2])
        basis.blocks[block] = Q
    return basis


@dataclass
class ReducedSystem:
    """Dense reduced matrix, rhs, and its 2-norm condition number."""

    matrix: np.ndarray
    rhs: np.ndarray
    formulation: Formulation
    cond: float
    slices: dict

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def block(self, row: str, col: str) -> np.ndarray:
        return self.matrix[self.slices[row], self.slices[col]]

    def constraint_block(self) -> np.ndarray:
        """Projected constraint rows (adjoint tests against control-state
        trials) of the Galerkin matrix."""
        if "xbar" in self.slices:
            return self.matrix[self.slices["lam"], self.slices["xbar"]]
        kf = self.slices["f"]
        ku = self.slices["u"]
        head = self.matrix[self.slices["lam"], kf]
        tail = self.matrix[self.slices["lam"], ku]
        return np.hstack([head, tail])


def _condition_number(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return np.nan
    svals = scipy.linalg.svdvals(matrix, check_finite=False)
    if svals[-1] == 0.0:
        return np.inf
    return float(svals[0] / svals[-1])


def _galerkin_two_block(basis: ReducedBasis, kkt: FullKKT):
    n = kkt.n
    Qx, Ql = basis.blocks["xbar"], basis.blocks["lam"]
    Qf, Qu = Qx[:n], Qx[n:]
    MQf = kkt.mass @ Qf
    MQu = kkt.mass @ Qu
    A_r = kkt.c_f * (Qf.T @ MQf) + Qu.T @ MQu
    BQx = kkt.stiffness @ Qu - MQf
    B_r = Ql.T @ BQx
    kx, kl = Qx.shape[1], Ql.shape[1]
    matrix = np.zeros((kx + kl, kx + kl))
    matrix[:kx, :kx] = A_r
    matrix[:kx, kx:] = B_r.T
    matrix[kx:, :kx] = B_r
    rhs = np.concatenate([Qu.T @ kkt.target, Ql.T @ kkt.lift])
    return matrix, rhs


def _galerkin_three_block(basis: ReducedBasis, kkt: FullKKT):
    Qf, Z = basis.blocks["f"], basis.blocks["z"]
    MQf = kkt.mass @ Qf
    MZ = kkt.mass @ Z
    KZ = kkt.stiffness @ Z
    kf, kz = Qf.shape[1], Z.shape[1]
    dim = kf + 2 * kz
    matrix = np.zeros((dim, dim))
    s_f, s_u, s_l = slice(0, kf), slice(kf, kf + kz), slice(kf + kz, dim)
    matrix[s_f, s_f] = kkt.c_f * (Qf.T @ MQf)
    matrix[s_u, s_u] = Z.T @ MZ
    matrix[s_f, s_l] = -(Qf.T @ MZ)
    matrix[s_l, s_f] = matrix[s_f, s_l].T
    matrix[s_l, s_u] = Z.T @ KZ
    matrix[s_u, s_l] = matrix[s_l, s_u].T
    rhs = np.concatenate([np.zeros(kf), Z.T @ kkt.target, Z.T @ kkt.lift])
    return matrix, rhs


def _least_squares_operator(basis: ReducedBasis, kkt: FullKKT) -> np.ndarray:
    """W = G(mu) Q assembled blockwise at full order, (3n, columns)."""
    n = kkt.n
    W = np.zeros((3 * n, basis.total_columns))
    if basis.is_two_block:
        Qx, Ql = basis.blocks["xbar"], basis.blocks["lam"]
        Qf, Qu = Qx[:n], Qx[n:]
        kx = Qx.shape[1]
        MQf = kkt.mass @ Qf
        W[:n, :kx] = kkt.c_f * MQf
        W[n : 2 * n, :kx] = kkt.mass @ Qu
        W[2 * n :, :kx] = kkt.stiffness @ Qu - MQf
        W[:n, kx:] = -(kkt.mass @ Ql)
        W[n : 2 * n, kx:] = kkt.stiffness.T @ Ql
    else:
        Qf, Z = basis.blocks["f"], basis.blocks["z"]
        kf, kz = Qf.shape[1], Z.shape[1]
        MQf = kkt.mass @ Qf
        MZ = kkt.mass @ Z
        W[:n, :kf] = kkt.c_f * MQf
        W[2 * n :, :kf] = -MQf
        W[n : 2 * n, kf : kf + kz] = MZ
        W[2 * n :, kf : kf + kz] = kkt.stiffness @ Z
        W[:n, kf + kz :] = -MZ
        W[n : 2 * n, kf + kz :] = kkt.stiffness.T @ Z
    return W


def project(
    basis: ReducedBasis, kkt: FullKKT, formulation: Formulation
) -> ReducedSystem:
    """Project the full system onto the reduced space.

    Galerkin assembles Q^T G Q blockwise (the off-diagonal zero blocks
    stay exactly zero); Petrov-Galerkin forms the least-squares operator
    W = G Q at full order and returns the normal equations W^T W. The
    2-norm condition number of the reduced matrix is computed by dense
    SVD and stored.
    """
    if basis.total_columns == 0:
        return ReducedSystem(
            matrix=np.zeros((0, 0)),
            rhs=np.zeros(0),
            formulation=formulation,
            cond=np.nan,
            slices=basis.coefficient_slices(),
        )
    if formulation is Formulation.GALERKIN:
        if basis.is_two_block:
            matrix, rhs = _galerkin_two_block(basis, kkt)
        else:
            matrix, rhs = _galerkin_three_block(basis, kkt)
    else:
        W = _least_squares_operator(basis, kkt)
        matrix = W.T @ W
        rhs = W.T @ kkt.rhs()
    return ReducedSystem(
        matrix=matrix,
        rhs=rhs,
        formulation=formulation,
        cond=_condition_number(matrix),
        slices=basis.coefficient_slices(),
    )


def solve_reduced(system: ReducedSystem) -> np.ndarray:
    """Dense direct solve of the reduced system.

    The Petrov-Galerkin normal equations are solved exactly as formed;
    their squared conditioning is part of what the benchmark measures.
    A numerically singular matrix raises ReducedSolveError.
    """
    if system.dim == 0:
        return np.zeros(0)
    try:
        coeffs = np.linalg.solve(system.matrix, system.rhs)
    except np.linalg.LinAlgError as exc:
        raise ReducedSolveError(f"reduced solve failed: {exc}") from exc
    if not np.all(np.isfinite(coeffs)):
        raise ReducedSolveError("reduced solve produced non-finite coefficients")
    return coeffs


def solve_least_squares_qr(basis: ReducedBasis, kkt: FullKKT) -> np.ndarray:
    """Petrov-Galerkin coefficients via orthogonal factorization of the
    full-order least-squares operator.

    Alternative to the squared normal equations for conditioning
    comparisons; not used by default, since the benchmark deliberately
    measures the normal-equations behavior.
    """
    W = _least_squares_operator(basis, kkt)
    if W.shape[1] == 0:
        return np.zeros(0)
    coeffs, _, rank, _ = scipy.linalg.lstsq(
        W, kkt.rhs(), lapack_driver="gelsy", check_finite=False
    )
    if rank < W.shape[1]:
        raise ReducedSolveError(
            f"least-squares operator is rank deficient ({rank} < {W.shape[1]})"
        )
    return coeffs


def error_indicator(basis: ReducedBasis, kkt: FullKKT, coeffs: np.ndarray) -> float:
    """Relative full-order residual of the reconstructed reduced solution."""
    f, u, lam = basis.expand(coeffs)
    resid = kkt.residual(f, u, lam)
    scale = np.linalg.norm(kkt.rhs())
    if scale == 0.0:
        logger.warning("zero rhs: error indicator falls back to absolute residual")
        return resid
    return resid / scale


def reduced_inf_sup(basis: ReducedBasis, kkt: FullKKT, norms: NormMatrices) -> float:
    """Discrete inf-sup constant of the reduced saddle problem.

    Built from the projected constraint operator against the projected
    X and Q norms, via the same Schur-complement eigenvalue bound used
    at full order.
    """
    n = kkt.n
    X = basis.x_block()
    L = basis.adjoint_block()
    if X.shape[1] == 0 or L.shape[1] == 0:
        raise ValueError("reduced inf-sup needs nonempty blocks")
    Xf, Xu = X[:n], X[n:]
    MXf = norms.mass @ Xf
    MXu = norms.mass @ Xu
    X_r = norms.c_f * (Xf.T @ MXf) + Xu.T @ MXu
    B_r = L.T @ (kkt.stiffness @ Xu - MXf)
    Q_r = L.T @ (norms.stiffness_ref @ L)
    S_r = B_r @ np.linalg.solve(X_r, B_r.T)
    S_r = 0.5 * (S_r + S_r.T)
    Q_r = 0.5 * (Q_r + Q_r.T)
    try:
        lam = scipy.linalg.eigh(S_r, Q_r, subset_by_index=[0, 0], eigvals_only=True)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolveError(f"reduced inf-sup eigensolve failed: {exc}") from exc
    return float(np.sqrt(max(lam[0], 0.0)))


def save_basis(path, basis: ReducedBasis):
    """Write the basis as an npz container (blocks, parameters, kind)."""
    params = (
        np.array([p.values for p in basis.snapshot_params])
        if basis.snapshot_params
        else np.zeros((0, 0))
    )
    box = basis.snapshot_params[0].box if basis.snapshot_params else None
    meta = {
        "kind": basis.kind.value,
        "n": basis.n,
        "fingerprint": basis.fingerprint,
        "drops": basis.drops,
        "block_names": list(basis.blocks),
        "box_lows": list(box.lows) if box else [],
        "box_highs": list(box.highs) if box else [],
    }
    arrays = {f"block_{name}": Q for name, Q in basis.blocks.items()}
    np.savez(path, meta=np.array(json.dumps(meta)), params=params, **arrays)


def load_basis(path, expected_fingerprint: str = None) -> ReducedBasis:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if expected_fingerprint and meta["fingerprint"] != expected_fingerprint:
            raise FingerprintError(
                f"basis fingerprint {meta['fingerprint']} does not match "
                f"expected {expected_fingerprint}"
            )
        blocks = {name: data[f"block_{name}"] for name in meta["block_names"]}
        params = []
        if data["params"].size:
            box = ParameterBox(tuple(meta["box_lows"]), tuple(meta["box_highs"]))
            params = [ParameterVector(row, box) for row in data["params"]]
        return ReducedBasis(
            kind=BasisKind(meta["kind"]),
            n=meta["n"],
            blocks=blocks,
            snapshot_params=params,
            drops=meta["drops"],
            fingerprint=meta["fingerprint"],
        )
