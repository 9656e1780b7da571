"""Small dense complex-Hermitian linear algebra and a self-contained SDP solver.

Everything here operates on small matrices (dimension capped at 64, at most a
few tens of constraints), so dense factorizations are used throughout.  The
SDP solver is a primal-dual path-following interior-point method (Mehrotra
predictor-corrector with the HKM direction) over the product cone
(Hermitian PSD block) x (one nonnegative slack per inequality row).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

DIM_CAP = 64

SENSE_GE = ">="
SENSE_EQ = "=="


def check_hermitian(a, name="matrix"):
    """Validate and return a finite Hermitian ndarray (symmetrized copy)."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if a.shape[0] > DIM_CAP:
        raise ValueError(f"{name} dimension {a.shape[0]} exceeds design bound {DIM_CAP}")
    if not np.all(np.isfinite(a.view(float))):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.conj().T).max() > 1e-10 * scale:
        raise ValueError(f"{name} is not Hermitian")
    return 0.5 * (a + a.conj().T)


def eig_hermitian(a):
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, orthonormal eigenvector columns) such
    that ``a ~= Q diag(w) Q^H``.
    """
    a = check_hermitian(a)
    w, q = np.linalg.eigh(a)
    return w, q


@dataclass(frozen=True)
class SdpConstraint:
    """One linear constraint Re tr(A X) (>= or ==) rhs."""

    matrix: np.ndarray
    rhs: float
    sense: str = SENSE_GE

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_hermitian(self.matrix, "constraint matrix"))
        if not np.isfinite(self.rhs):
            raise ValueError("constraint rhs must be finite")
        if self.sense not in (SENSE_GE, SENSE_EQ):
            raise ValueError(f"unknown constraint sense {self.sense!r}")


@dataclass(frozen=True)
class SdpProblem:
    """min Re tr(C X) subject to linear trace constraints and X PSD."""

    objective: np.ndarray
    constraints: tuple
    dim: int = 0

    def __post_init__(self):
        obj = check_hermitian(self.objective, "objective")
        object.__setattr__(self, "objective", obj)
        cons = tuple(self.constraints)
        if not cons:
            raise ValueError("problem needs at least one constraint")
        object.__setattr__(self, "constraints", cons)
        d = obj.shape[0]
        if self.dim and self.dim != d:
            raise ValueError("dim does not match objective")
        object.__setattr__(self, "dim", d)
        for c in cons:
            if c.matrix.shape[0] != d:
                raise ValueError("constraint dimension mismatch")


@dataclass
class SdpSolution:
    x: np.ndarray
    objective_value: float
    dual_values: np.ndarray
    status: str
    iterations: int = 0
    gap: float = field(default=np.nan)


def _inner(a, b):
    # Re tr(A^H B) for Hermitian A, B.
    return float(np.real(np.sum(a.conj() * b)))


def _herm(a):
    return 0.5 * (a + a.conj().T)


def _max_cone_step(chol_l, direction):
    """Largest alpha with P + alpha*D PSD, given chol(P) = L L^H."""
    w = solve_triangular(chol_l, direction, lower=True)
    w = solve_triangular(chol_l, w.conj().T, lower=True)
    lam_min = float(np.linalg.eigvalsh(_herm(w))[0])
    if lam_min >= -1e-14:
        return np.inf
    return 1.0 / (-lam_min)


def _ratio_step(values, deltas):
    """Largest alpha keeping values + alpha*deltas > 0 (componentwise)."""
    mask = deltas < 0
    if not np.any(mask):
        return np.inf
    return float(np.min(-values[mask] / deltas[mask]))


def solve_sdp(problem, tol=1e-8, max_iterations=100, dual_cap=1e12):
    """Solve a small dense SDP.

    Terminates with status ``optimal`` once primal/dual residuals are below
    `tol` and the complementarity gap is below ``tol*(1+|objective|)``;
    ``infeasible`` when the dual objective blows past `dual_cap` (the QoS
    instances fed to this solver are always feasible, so divergence flags bad
    input); ``max_iter`` with the best iterate otherwise.
    """
    d = problem.dim
    m = len(problem.constraints)
    a_stack = np.stack([c.matrix for c in problem.constraints])
    b_raw = np.array([c.rhs for c in problem.constraints], dtype=float)
    ineq = np.array([c.sense == SENSE_GE for c in problem.constraints])
    c_mat = problem.objective

    # Row normalization plus a global variable scaling keep the iterates well
    # conditioned even when constraint matrices carry 1/sigma^2 factors.
    row_scale = np.array([max(np.linalg.norm(a), 1e-30) for a in a_stack])
    a_stack = a_stack / row_scale[:, None, None]
    b = b_raw / row_scale
    theta = float(np.max(np.abs(b))) if np.max(np.abs(b)) > 0 else 1.0
    b = b / theta

    n_ineq = int(np.count_nonzero(ineq))
    nu = d + n_ineq

    x = np.eye(d, dtype=complex)
    z = np.eye(d, dtype=complex)
    # y on inequality rows doubles as the slack-block dual and must stay > 0
    y = np.where(ineq, 1.0, 0.0)
    s = np.ones(n_ineq)
    ineq_idx = np.where(ineq)[0]

    c_norm = max(1.0, np.linalg.norm(c_mat))
    b_norm = max(1.0, float(np.max(np.abs(b))))

    status = "max_iter"
    it = 0
    for it in range(1, max_iterations + 1):
        # residuals
        ax = np.array([_inner(a_stack[j], x) for j in range(m)])
        rp = b - ax
        rp[ineq_idx] += s
        rd = c_mat - np.tensordot(y, a_stack, axes=1) - z
        y_i = y[ineq_idx]

        gap = _inner(x, z) + float(s @ y_i)
        pobj = _inner(c_mat, x)
        dobj = float(b @ y)
        pinf = float(np.max(np.abs(rp))) / b_norm
        dinf = np.linalg.norm(rd) / c_norm
        gap_rel = gap / (1.0 + abs(pobj) + abs(dobj))

        if pinf <= tol and dinf <= tol and gap_rel <= tol:
            status = "optimal"
            break
        if theta * dobj > dual_cap:
            status = "infeasible"
            break

        mu = gap / nu
        lz, _ = cho_factor(z, lower=True)
        lx, _ = cho_factor(x, lower=True)
        lz = np.tril(lz)
        lx = np.tril(lx)

        # K_i = Z^{-1} A_i X, shared by the Schur matrix and both rhs passes
        k_stack = np.stack([cho_solve((lz, True), a_stack[j]) @ x for j in range(m)])
        t_mat = np.real(np.einsum("jab,iba->ji", a_stack, k_stack))
        t_mat = 0.5 * (t_mat + t_mat.T)
        if n_ineq:
            t_mat[ineq_idx, ineq_idx] += s / y_i
        zinv_rd_x = cho_solve((lz, True), rd) @ x
        a_dot_zrx = np.array([_inner(a_stack[j], _herm(zinv_rd_x)) for j in range(m)])

        zinv = cho_solve((lz, True), np.eye(d, dtype=complex))

        def direction(sigma_mu, corr_x, corr_s):
            rc_big = sigma_mu * zinv - x - corr_x
            rc_s = sigma_mu / y_i - s - corr_s if n_ineq else np.zeros(0)
            rhs = rp + a_dot_zrx
            rhs -= np.array([_inner(a_stack[j], rc_big) for j in range(m)])
            if n_ineq:
                rhs[ineq_idx] += rc_s
            try:
                dy = np.linalg.solve(t_mat, rhs)
            except np.linalg.LinAlgError:
                dy = np.linalg.solve(t_mat + 1e-12 * np.trace(t_mat) * np.eye(m), rhs)
            dz = rd - np.tensordot(dy, a_stack, axes=1)
            dx = _herm(rc_big - _herm(cho_solve((lz, True), dz) @ x))
            ds = rc_s - (s / y_i) * dy[ineq_idx] if n_ineq else np.zeros(0)
            return dx, dy, dz, ds

        # predictor
        dx_a, dy_a, dz_a, ds_a = direction(0.0, 0.0, np.zeros(n_ineq) if n_ineq else 0.0)
        ap = min(1.0, 0.98 * min(_max_cone_step(lx, dx_a), _ratio_step(s, ds_a)))
        ad = min(1.0, 0.98 * min(_max_cone_step(lz, dz_a), _ratio_step(y_i, dy_a[ineq_idx])))
        gap_aff = _inner(x + ap * dx_a, z + ad * dz_a)
        if n_ineq:
            gap_aff += float((s + ap * ds_a) @ (y_i + ad * dy_a[ineq_idx]))
        sigma = min(1.0, max(1e-8, (max(gap_aff, 0.0) / gap) ** 3))

        # corrector
        corr_x = _herm(cho_solve((lz, True), dz_a) @ dx_a)
        corr_s = dy_a[ineq_idx] * ds_a / y_i if n_ineq else np.zeros(0)
        dx, dy, dz, ds = direction(sigma * mu, corr_x, corr_s)

        ap = min(1.0, 0.98 * min(_max_cone_step(lx, dx), _ratio_step(s, ds)))
        ad = min(1.0, 0.98 * min(_max_cone_step(lz, dz), _ratio_step(y_i, dy[ineq_idx])))
        if ap < 1e-12 and ad < 1e-12:
            break

        x = _herm(x + ap * dx)
        s = s + ap * ds
        y = y + ad * dy
        z = _herm(z + ad * dz)

    # undo scaling
    x_out = theta * x
    y_out = y / row_scale
    if status != "infeasible":
        w, q = np.linalg.eigh(x_out)
        w = np.where((w > -1e-10) & (w < 0.0), 0.0, w)
        x_out = _herm((q * w) @ q.conj().T)
    y_out = np.where(ineq, np.maximum(y_out, 0.0), y_out)
    gap_out = _inner(x, z) + (float(s @ y[ineq_idx]) if n_ineq else 0.0)
    return SdpSolution(
        x=x_out,
        objective_value=_inner(c_mat, x_out),
        dual_values=y_out,
        status=status,
        iterations=it,
        gap=theta * gap_out,
    )
