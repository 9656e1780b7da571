"""Per-message multicast beamformers: exact SDR route, large-array closed form, MRT.

The core subproblem: given the channels of the users subscribed to one
message on one subcarrier, find the cheapest beam v (squared norm = power
scale q) such that every user reaches unit SNR,

    beta_k |h_k^H v|^2 / (m sigma^2) >= 1  for all k.

solve_qos_sdr lifts to V = v v^H, drops the rank constraint, solves the SDP,
then purifies the solution back to rank one.  With at most three users the
purified solution is provably optimal.  asymptotic_beamformer is the
closed-form combiner that becomes optimal as the antenna count grows, and
mrt_beamformer covers the matched-filter baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import SdpConstraint, SdpProblem, solve_sdp

RANK_EPS = 1e-7
NULLSPACE_EPS = 1e-9


@dataclass(frozen=True)
class BeamInstance:
    """One (message, subcarrier) QoS problem: channels is (users, antennas)."""

    channels: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)
    sigma2: float

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.complex128)
        betas = np.asarray(self.betas, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] < 1:
            raise ValueError("channels must be a (users, antennas) array")
        if betas.shape != (ch.shape[0],):
            raise ValueError("betas must have one entry per user")
        if np.any(betas <= 0.0):
            raise ValueError("betas must be positive")
        if self.sigma2 <= 0.0:
            raise ValueError("sigma2 must be positive")
        norms = np.linalg.norm(ch, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero channel vector")
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "betas", betas)

    @property
    def n_users(self):
        return self.channels.shape[0]

    @property
    def m_antennas(self):
        return self.channels.shape[1]

    def snr_matrices(self):
        """A_k with the QoS constraint written as tr(A_k V) >= 1."""
        m = self.m_antennas
        mats = []
        for k in range(self.n_users):
            h = self.channels[k]
            mats.append(self.betas[k] * np.outer(h, h.conj()) / (m * self.sigma2))
        return mats

    def snr_of(self, v):
        gains = np.abs(self.channels @ v.conj()) ** 2
        return self.betas * gains / (self.m_antennas * self.sigma2)


@dataclass(frozen=True)
class BeamSolution:
    v: np.ndarray = field(repr=False)
    q_power: float
    relaxed_value: float
    method: str
    rank_gt_one: bool = False


def _pin_phase(v):
    idx = int(np.argmax(np.abs(v)))
    pivot = v[idx]
    if pivot == 0:
        return v
    return v * (pivot.conjugate() / abs(pivot))


def _single_user_floor(inst):
    # every user alone lower-bounds the multicast power
    norms2 = np.sum(np.abs(inst.channels) ** 2, axis=1)
    return float(np.max(inst.m_antennas * inst.sigma2 / (inst.betas * norms2)))


def _hermitian_from_params(params, dim):
    delta = np.zeros((dim, dim), dtype=np.complex128)
    pos = 0
    for i in range(dim):
        delta[i, i] = params[pos]
        pos += 1
    for i in range(dim):
        for j in range(i + 1, dim):
            delta[i, j] = params[pos] + 1j * params[pos + 1]
            delta[j, i] = params[pos] - 1j * params[pos + 1]
            pos += 2
    return delta


def _constraint_row(b):
    # coefficients of tr(B Delta) in the (diag, re, im) parameterization
    dim = b.shape[0]
    row = np.empty(dim * dim)
    pos = 0
    for i in range(dim):
        row[pos] = b[i, i].real
        pos += 1
    for i in range(dim):
        for j in range(i + 1, dim):
            row[pos] = 2.0 * b[i, j].real
            row[pos + 1] = 2.0 * b[i, j].imag
            pos += 2
    return row


def rank_reduce(v_mat, constraint_mats):
    """Purify a feasible PSD matrix toward rank one, holding every tr(A_k V) fixed.

    Repeatedly finds a Hermitian direction in the constraint null space of
    the compressed factorization and steps to the PSD boundary, dropping
    rank by at least one per step.  Returns (V, irreducible): irreducible is
    set when rank > 1 remains but the linear system has no nonzero solution.
    """
    v_cur = np.asarray(v_mat, dtype=np.complex128)
    while True:
        eigvals, eigvecs = np.linalg.eigh(v_cur)
        lam_max = float(eigvals[-1])
        if lam_max <= 0.0:
            return v_cur, False
        keep = eigvals > RANK_EPS * lam_max
        rank = int(np.count_nonzero(keep))
        if rank <= 1:
            return v_cur, False
        u = eigvecs[:, keep] * np.sqrt(eigvals[keep])

        rows = [_constraint_row(u.conj().T @ a @ u) for a in constraint_mats]
        system = np.array(rows)
        _, svals, vt = np.linalg.svd(system)
        tol = NULLSPACE_EPS * max(1.0, svals[0] if svals.size else 0.0)
        null_idx = [
            i for i in range(vt.shape[0]) if i >= svals.size or svals[i] <= tol
        ]
        if not null_idx:
            return v_cur, True
        delta = _hermitian_from_params(vt[null_idx[0]], rank)

        dvals = np.linalg.eigvalsh(delta)
        pivot = dvals[-1] if abs(dvals[-1]) >= abs(dvals[0]) else dvals[0]
        if pivot == 0.0:
            return v_cur, True
        shrink = np.eye(rank) - delta / pivot
        v_next = u @ shrink @ u.conj().T
        v_cur = 0.5 * (v_next + v_next.conj().T)


def _extract_beam(inst, v_mat):
    eigvals, eigvecs = np.linalg.eigh(v_mat)
    lam_max = float(eigvals[-1])
    rank = int(np.count_nonzero(eigvals > RANK_EPS * max(lam_max, 0.0)))
    v = np.sqrt(max(lam_max, 0.0)) * eigvecs[:, -1]
    snr = inst.snr_of(v)
    worst = float(np.min(snr))
    if worst <= 0.0:
        raise ValueError("degenerate beam: some user has zero gain")
    # exact scaling puts the worst user on the unit-SNR boundary
    v = v / np.sqrt(worst)
    return _pin_phase(v), rank


def solve_qos_sdr(inst, tol=1e-8):
    """Globally optimal beam via SDR plus rank reduction (exact for <= 3 users).

    For larger groups the purified matrix may keep rank > 1; the returned
    beam is then the scaled principal component and rank_gt_one is set so
    callers can route the message through the general solver instead.
    """
    mats = inst.snr_matrices()
    m = inst.m_antennas
    problem = SdpProblem(
        objective=np.eye(m, dtype=np.complex128),
        constraints=[SdpConstraint(matrix=a, rhs=1.0) for a in mats],
    )
    sol = solve_sdp(problem, tol=tol)
    if sol.status == "infeasible":
        raise ValueError("QoS SDP reported infeasible; inputs are degenerate")
    reduced, _ = rank_reduce(sol.x, mats)
    v, rank = _extract_beam(inst, reduced)
    return BeamSolution(
        v=v,
        q_power=float(np.linalg.norm(v) ** 2),
        relaxed_value=float(sol.objective_value),
        method="sdr_rank1",
        rank_gt_one=rank > 1,
    )


def asymptotic_beamformer(inst):
    """Large-array combiner: normalized sum of h_k / sqrt(beta_k), worst-user scaled."""
    s = np.sum(inst.channels / np.sqrt(inst.betas)[:, None], axis=0)
    norm = np.linalg.norm(s)
    scale = np.linalg.norm(inst.channels)
    if norm <= 1e-12 * max(scale, 1.0):
        raise ValueError("channel sum vanishes; asymptotic combiner undefined")
    w = s / norm
    snr_unit = inst.snr_of(w)
    worst = float(np.min(snr_unit))
    if worst <= 0.0:
        raise ValueError("a user is orthogonal to the combined direction")
    v = _pin_phase(w / np.sqrt(worst))
    return BeamSolution(
        v=v,
        q_power=float(np.linalg.norm(v) ** 2),
        relaxed_value=_single_user_floor(inst),
        method="asymptotic",
    )


def mrt_beamformer(inst, mode="group"):
    """Matched-filter baselines.

    per_user: one user only, beam along its own channel.
    group: beam along the dominant eigenvector of the group's channel power
    gain matrix sum beta_k h_k h_k^H, scaled for the worst user.
    """
    if mode == "per_user":
        if inst.n_users != 1:
            raise ValueError("per_user mode expects exactly one user")
        h = inst.channels[0]
        w = h / np.linalg.norm(h)
    elif mode == "group":
        gain = np.zeros((inst.m_antennas, inst.m_antennas), dtype=np.complex128)
        for k in range(inst.n_users):
            h = inst.channels[k]
            gain += inst.betas[k] * np.outer(h, h.conj())
        _, eigvecs = np.linalg.eigh(gain)
        w = eigvecs[:, -1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    snr_unit = inst.snr_of(w)
    worst = float(np.min(snr_unit))
    if worst <= 0.0:
        raise ValueError("a user is orthogonal to the MRT direction")
    v = _pin_phase(w / np.sqrt(worst))
    return BeamSolution(
        v=v,
        q_power=float(np.linalg.norm(v) ** 2),
        relaxed_value=_single_user_floor(inst),
        method="mrt",
    )
