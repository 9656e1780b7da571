"""General-case solver: relax the binary assignment and iterate convex
approximations of the joint beam/rate/assignment problem.

The per-user rate constraints couple the aggregated beam W = sqrt(eta*mu)*w
with the assignment mu and rate c through mu*(2^(c/(B*mu))-1) <= SNR(W).
The SNR side is convex in W, so linearizing it at the previous iterate
gives a convex inner problem whose dual has closed-form primal minimizers:
the beam is a multiplier-weighted combination of the linearization
projections, the rate is a water-filling expression in the rate multiplier
gamma and the per-user multipliers lambda, and the assignment puts each
subcarrier on the message with the largest dual score.  Dualizing only the
SNR constraints leaves a rate/assignment minimization that is exactly the
subcarrier allocation problem with noise table s_mn = sum_k lambda_mk, so
the allocation solver acts as the exact inner step and its own dual value
certifies a lower bound used to size the multiplier ascent steps.

Every iterate returned by dc_step is primal feasible by construction: the
assignment is binary, rates are rescaled so each demand is met exactly,
and beams are exact minimum-norm solutions of the linearized per-subcarrier
constraints (a small active-set projection).  The previous (mu, c) with
re-repaired beams is always a fallback candidate, which makes the descent
property unconditional rather than dependent on dual convergence.

A message whose beam reaches zero on a subcarrier can never recover rate
there (the linearized constraint pins c to zero), so the initial point
gives every message a nonzero beam on every subcarrier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import (
    AllocationSolution,
    MessageDemand,
    metric_W,
    solve_allocation,
)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class DcMessage:
    """One multicast message: the users that must decode it and its rate.

    tag keeps messages with equal decoder set and level distinct when they
    carry different tile groups.
    """

    users: tuple[int, ...]
    level: int
    demand_bps: float
    tag: tuple | None = None

    def __post_init__(self):
        if not self.users:
            raise ValueError("message needs at least one user")
        if len(set(self.users)) != len(self.users):
            raise ValueError("duplicate user in message")
        if self.demand_bps < 0:
            raise ValueError("demand must be nonnegative")
        object.__setattr__(self, "users", tuple(sorted(self.users)))
        if self.tag is not None:
            object.__setattr__(self, "tag", tuple(self.tag))

    @property
    def key(self):
        return (self.users, self.level, self.tag if self.tag is not None else ())


@dataclass(frozen=True)
class DcInstance:
    """Problem data shared by all subcarriers: messages and link budget."""

    messages: tuple[DcMessage, ...]
    betas: np.ndarray
    sigma2: float
    bandwidth_hz: float

    def __post_init__(self):
        if not self.messages:
            raise ValueError("no messages")
        keys = [m.key for m in self.messages]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate message keys")
        object.__setattr__(
            self, "messages", tuple(sorted(self.messages, key=lambda m: m.key))
        )
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or np.any(betas <= 0):
            raise ValueError("betas must be positive")
        object.__setattr__(self, "betas", betas)
        n_users = betas.size
        for m in self.messages:
            if min(m.users) < 1 or max(m.users) > n_users:
                raise ValueError("message user id outside channel population")
        if self.sigma2 <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("sigma2 and bandwidth must be positive")


@dataclass
class DcIterate:
    """One feasible point of the relaxed joint problem."""

    w_agg: np.ndarray  # (n_msg, N, M) complex aggregated beams
    mu: np.ndarray  # (n_msg, N) in [0, 1], unit column sums
    c: np.ndarray  # (n_msg, N) bits/s, nonnegative
    objective: float
    converged: bool = True
    residual: float = 0.0
    duals: "DcDuals | None" = None

    def __post_init__(self):
        if np.any(self.mu < -1e-9) or np.any(self.mu > 1 + 1e-9):
            raise ValueError("mu outside [0, 1]")
        col = self.mu.sum(axis=0)
        if np.max(np.abs(col - 1.0)) > 1e-6:
            raise ValueError("mu columns must sum to one")
        if np.any(self.c < -1e-9):
            raise ValueError("rates must be nonnegative")


@dataclass
class DcDuals:
    """Multipliers for the inner convex problem."""

    gamma: np.ndarray  # (n_msg,) rate multipliers
    lam: tuple[np.ndarray, ...]  # per message (N, |users|) SINR multipliers

    def __post_init__(self):
        if np.any(self.gamma < 0):
            raise ValueError("gamma must be nonnegative")
        for arr in self.lam:
            if np.any(arr < 0):
                raise ValueError("lambda must be nonnegative")


def _iterate_objective(w_agg, m_antennas):
    return float(np.sum(np.abs(w_agg) ** 2) / m_antennas)


def _message_channels(instance, channels):
    """Per message: channel block (N, K_m, M) and per-user gains (K_m,)."""
    out = []
    for msg in instance.messages:
        idx = [u - 1 for u in msg.users]
        out.append((channels[:, idx, :], instance.betas[idx]))
    return out


def initial_point(instance, channels, rng=None):
    """Feasible start: uniform assignment, equal rate split, scaled beams.

    The beam direction per (message, subcarrier) is the weakest member's
    matched filter (optionally blended with a random direction), scaled so
    the slowest user clears the equal-split rate.  Every beam is nonzero,
    which keeps all assignment options open for the descent iterations.
    """
    n_sub, _, m_ant = channels.shape
    n_msg = len(instance.messages)
    blocks = _message_channels(instance, channels)
    mu = np.full((n_msg, n_sub), 1.0 / n_msg)
    c = np.zeros((n_msg, n_sub))
    w_agg = np.zeros((n_msg, n_sub, m_ant), dtype=np.complex128)
    b_hz = instance.bandwidth_hz
    for m, msg in enumerate(instance.messages):
        h_m, beta_m = blocks[m]
        c[m, :] = msg.demand_bps / n_sub
        snr_target = mu[m] * (2.0 ** (c[m] / (b_hz * mu[m])) - 1.0)
        for n in range(n_sub):
            gains = beta_m * np.sum(np.abs(h_m[n]) ** 2, axis=1)
            weakest = int(np.argmin(gains))
            direction = h_m[n, weakest]
            direction = direction / np.linalg.norm(direction)
            if rng is not None:
                noise = rng.standard_normal(m_ant) + 1j * rng.standard_normal(m_ant)
                direction = direction + 0.5 * noise / np.linalg.norm(noise)
                direction = direction / np.linalg.norm(direction)
            proj = np.abs(h_m[n] @ direction.conj()) ** 2
            if np.any(proj <= 0):
                direction = h_m[n].sum(axis=0)
                direction = direction / np.linalg.norm(direction)
                proj = np.abs(h_m[n] @ direction.conj()) ** 2
            need = snr_target[n] * m_ant * instance.sigma2 / (beta_m * proj)
            scale = np.sqrt(np.max(need)) if snr_target[n] > 0 else 0.0
            if scale == 0.0:
                # idle message still needs a nonzero beam to stay reachable
                scale = 1e-6 * np.sqrt(
                    m_ant * instance.sigma2 / np.max(beta_m * proj)
                )
            w_agg[m, n] = scale * direction
    return DcIterate(
        w_agg=w_agg,
        mu=mu,
        c=c,
        objective=_iterate_objective(w_agg, m_ant),
    )


def feasibility_residuals(iterate, instance, channels):
    """Worst violations of the relaxed constraints (<= 0 means feasible)."""
    n_sub, _, m_ant = channels.shape
    blocks = _message_channels(instance, channels)
    b_hz = instance.bandwidth_hz
    worst_rate = -np.inf
    for m, msg in enumerate(instance.messages):
        h_m, beta_m = blocks[m]
        mu_m = iterate.mu[m]
        with np.errstate(over="ignore"):
            rate_term = np.where(
                mu_m > 0,
                mu_m * (2.0 ** (iterate.c[m] / (b_hz * np.maximum(mu_m, 1e-300))) - 1.0),
                np.where(iterate.c[m] > 0, np.inf, 0.0),
            )
        snr = (
            beta_m[None, :]
            * np.abs(np.einsum("nkm,nm->nk", h_m.conj(), iterate.w_agg[m])) ** 2
            / (m_ant * instance.sigma2)
        )
        worst_rate = max(worst_rate, float(np.max(rate_term[:, None] - snr)))
    demand = np.array([m.demand_bps for m in instance.messages])
    rate_gap = demand - iterate.c.sum(axis=1)
    col_gap = float(np.max(np.abs(iterate.mu.sum(axis=0) - 1.0)))
    return {
        "per_user_rate": worst_rate,
        "demand": float(np.max(rate_gap)),
        "assignment_sum": col_gap,
        "negative_rate": float(np.max(-iterate.c)),
    }


def _linearization(instance, channels, prev):
    """Fixed per-step data: projection vectors and constant terms.

    For user k of message m on subcarrier n, the linearized constraint is
    2 Re{u^H W} >= rate_term + b0 with u = beta*(h^H Wprev)*h/(M sigma^2)
    and b0 = beta*|h^H Wprev|^2/(M sigma^2).
    """
    n_sub, _, m_ant = channels.shape
    blocks = _message_channels(instance, channels)
    u_vecs = []
    b0s = []
    for m, _ in enumerate(instance.messages):
        h_m, beta_m = blocks[m]
        proj = np.einsum("nkm,nm->nk", h_m.conj(), prev.w_agg[m])
        u = (
            beta_m[None, :, None]
            * proj[:, :, None]
            * h_m
            / (m_ant * instance.sigma2)
        )
        u_vecs.append(u)  # (N, K_m, M)
        b0s.append(beta_m[None, :] * np.abs(proj) ** 2 / (m_ant * instance.sigma2))
    return u_vecs, b0s


def _min_norm_beam(u, b, enum_cap=4096):
    """Exact min-norm W with 2*Re{u_k^H W} >= b_k via active-set projection.

    The minimizer lies in the real span of the constraint vectors:
    W = sum nu_j u_j with nu >= 0 and the active constraints tight, so the
    active set solves a small real symmetric system 2*Re(u_i^H u_j) nu = b.
    """
    live = np.flatnonzero(b > 0)
    k = u.shape[0]
    if live.size == 0:
        return np.zeros(u.shape[1], dtype=np.complex128)
    gram = 2.0 * np.real(u @ u.conj().T)
    scale = float(np.max(np.abs(b))) + float(np.max(np.abs(gram))) + 1e-300

    def solve_active(active):
        sub = gram[np.ix_(active, active)]
        nu, *_ = np.linalg.lstsq(sub, b[active], rcond=None)
        return nu

    active = list(live)
    for _ in range(4 * k + 8):
        nu = solve_active(active)
        if nu.size and np.min(nu) < -1e-12 * scale:
            active.pop(int(np.argmin(nu)))
            continue
        w = nu @ u[active] if nu.size else np.zeros(u.shape[1], dtype=complex)
        slack = 2.0 * np.real(u.conj() @ w) - b
        worst = int(np.argmin(slack))
        if slack[worst] < -1e-10 * scale:
            if worst in active:
                break  # numerically stuck, enumerate below
            active.append(worst)
            continue
        return w
    # fall back to subset enumeration (guaranteed for small k)
    best = None
    best_norm = np.inf
    if 2 ** k > enum_cap:
        raise RuntimeError("active-set projection failed for large constraint set")
    for mask in range(1, 2 ** k):
        active = [i for i in range(k) if mask >> i & 1]
        nu = solve_active(active)
        if np.any(nu < -1e-12 * scale):
            continue
        w = nu @ u[active]
        slack = 2.0 * np.real(u.conj() @ w) - b
        if np.min(slack) < -1e-9 * scale:
            continue
        norm = float(np.real(np.vdot(w, w)))
        if norm < best_norm:
            best_norm = norm
            best = w
    if best is None:
        raise RuntimeError("linearized beam constraints are infeasible")
    return best


def _repair(instance, u_vecs, b0s, mu, c, m_antennas):
    """Exact beams for a fixed binary-ish (mu, c): per-subcarrier min-norm."""
    n_msg, n_sub = mu.shape
    b_hz = instance.bandwidth_hz
    w_agg = np.zeros((n_msg, n_sub, u_vecs[0].shape[2]), dtype=np.complex128)
    for m in range(n_msg):
        mu_m = mu[m]
        exponent = np.minimum(
            c[m] / np.maximum(b_hz * mu_m, 1e-300), 500.0
        )
        rate_term = np.where(mu_m > 0, mu_m * (2.0 ** exponent - 1.0), 0.0)
        for n in range(n_sub):
            b = rate_term[n] + b0s[m][n]
            w_agg[m, n] = _min_norm_beam(u_vecs[m][n], b)
    return w_agg, _iterate_objective(w_agg, m_antennas)


def _closed_form_primal(instance, u_vecs, b0s, gamma, lam, n_sub, m_ant):
    """Dual-to-primal map: scores, assignment, rates, beams.

    Score per (message, subcarrier): G = u*ln(u/s) - u + s for u = gamma*B/ln2
    and s = sum_k lambda, zero when u <= s; each subcarrier goes to the
    largest score (ties to the lowest message index).  The rate is
    B*log2(u/s) on winning pairs and the beam is the multiplier-weighted
    sum of the linearization vectors, independent of the assignment.
    """
    n_msg = len(instance.messages)
    b_hz = instance.bandwidth_hz
    u_arr = gamma * b_hz / LN2  # (n_msg,)
    g_table = np.zeros((n_msg, n_sub))
    log_ratio = np.zeros((n_msg, n_sub))
    w_star = np.zeros((n_msg, n_sub, m_ant), dtype=np.complex128)
    for m in range(n_msg):
        s = lam[m].sum(axis=1)  # (N,)
        u = u_arr[m]
        s_safe = np.maximum(s, 1e-300)
        ratio = np.maximum(u / s_safe, 1e-300)
        open_mask = u > s
        log_ratio[m] = np.where(open_mask, np.log(ratio), 0.0)
        g_table[m] = np.where(
            open_mask, u * log_ratio[m] - u + s, 0.0
        )
        w_star[m] = m_ant * np.einsum("nk,nkm->nm", lam[m], u_vecs[m])
    assignment = np.argmax(g_table, axis=0)
    top = g_table[assignment, np.arange(n_sub)]
    tie_count = int(np.sum(np.sum(g_table == top[None, :], axis=0) > 1))
    mu = np.zeros((n_msg, n_sub))
    mu[assignment, np.arange(n_sub)] = 1.0
    c = mu * (b_hz / LN2) * log_ratio
    return g_table, assignment, mu, c, w_star, tie_count


def _dual_lower_bound(lam, w_star, b0s, gamma_alloc, s_table, demand, b_hz, m_ant):
    """Certified lower bound on the linearized subproblem's optimum.

    At any multipliers lambda >= 0 the beam minimizer is w_star, the rate and
    assignment minimization is the subcarrier allocation problem with noise
    table s = sum_k lambda, and that problem's own dual at gamma_alloc bounds
    it from below; summing the three pieces bounds the full objective.
    """
    n_msg = len(lam)
    w_norm2 = sum(float(np.sum(np.abs(w) ** 2)) for w in w_star)
    lam_b0 = sum(float(np.sum(lam[m] * b0s[m])) for m in range(n_msg))
    scores = np.stack(
        [metric_W(gamma_alloc[m], s_table[m], b_hz) for m in range(n_msg)]
    )
    alloc_dual = float(np.dot(gamma_alloc, demand)) - float(
        np.sum(np.maximum(0.0, np.max(scores, axis=0)))
    )
    return -w_norm2 / m_ant + lam_b0 + alloc_dual


def solve_inner_dual(
    linearization,
    instance,
    channels,
    duals0=None,
    max_iterations=600,
    rate_tol=1e-3,
    alloc_iterations=400,
):
    """Approximately solve the linearized problem through its dual.

    linearization is the iterate whose beams define the constraint planes.
    Only the per-user SNR constraints are dualized (multipliers lambda); at
    fixed lambda the minimization over rates and assignment is exactly the
    subcarrier allocation problem with per-message noise s_mn = sum_k lambda,
    which the allocation solver handles including tied instances, and the
    beam minimizer is the closed form w_star.  lambda follows Polyak steps
    sized by the gap between the best repaired primal and the certified dual
    lower bound; the ascent stops when the bound closes or stops moving.

    The returned iterate is the best repaired primal: binary assignment,
    rates scaled so each demand is met exactly, min-norm beams for every
    constraint (unassigned pairs keep a halving tail through b0, so a message
    can re-enter a subcarrier at the next linearization).  converged requires
    the inner allocation to have converged and the ascent to have settled.
    """
    n_sub, _, m_ant = channels.shape
    n_msg = len(instance.messages)
    demand = np.array([m.demand_bps for m in instance.messages])
    active = demand > 0
    b_hz = instance.bandwidth_hz
    u_vecs, b0s = _linearization(instance, channels, linearization)

    lam_init = []
    for m, msg in enumerate(instance.messages):
        idx = [u - 1 for u in msg.users]
        h_norm2 = np.sum(np.abs(channels[:, idx, :]) ** 2, axis=2)
        lam_init.append(instance.sigma2 / (instance.betas[idx][None, :] * h_norm2))
    if duals0 is None:
        lam = [a.copy() for a in lam_init]
    else:
        lam = [np.asarray(a, dtype=np.float64).copy() for a in duals0.lam]
    # keeps the allocation noise table positive when multipliers hit zero
    s_floor = [1e-9 * np.median(a.sum(axis=1)) for a in lam_init]

    best = None
    best_lb = -np.inf
    theta = 1.0
    no_improve = 0
    settled = False
    gamma_warm = None
    for i in range(max_iterations):
        s_table = np.stack(
            [np.maximum(lam[m].sum(axis=1), s_floor[m]) for m in range(n_msg)]
        )
        demands = [
            MessageDemand(
                users=msg.users,
                level=msg.level,
                demand_bps=msg.demand_bps,
                q_by_subcarrier=s_table[m],
                tag=msg.tag,
            )
            for m, msg in enumerate(instance.messages)
        ]
        out = solve_allocation(
            demands,
            n_sub,
            b_hz,
            max_iterations=alloc_iterations,
            lam_warm=gamma_warm,
            stall_limit=25,
        )
        gamma_warm = out.lam
        mu = out.mu.astype(np.float64)
        c = out.rate.copy()
        delivered = c.sum(axis=1)
        feasible = bool(np.all(delivered[active] > 0))
        if feasible:
            ratio = np.where(active & (delivered > 0), demand / np.maximum(delivered, 1e-300), 0.0)
            c *= ratio[:, None]
        w_star = [
            m_ant * np.einsum("nk,nkm->nm", lam[m], u_vecs[m]) for m in range(n_msg)
        ]
        g_lb = _dual_lower_bound(
            lam, w_star, b0s, out.lam, s_table, demand, b_hz, m_ant
        )
        tol_lb = 1e-7 * max(abs(best_lb) if np.isfinite(best_lb) else 0.0, abs(g_lb), 1e-300)
        if g_lb > best_lb + tol_lb:
            no_improve = 0
        else:
            no_improve += 1
            if no_improve >= 10:
                theta *= 0.5
                no_improve = 0
        best_lb = max(best_lb, g_lb)
        if feasible:
            w_rep, ub = _repair(instance, u_vecs, b0s, mu, c, m_ant)
            if best is None or ub < best[0]:
                best = (ub, mu, c, w_rep, out.lam.copy(), [a.copy() for a in lam], out.converged)
        if best is not None:
            gap = (best[0] - best_lb) / max(best[0], 1e-300)
            if gap < rate_tol or theta < 1.0 / 64.0:
                settled = True
                break
        # Polyak step on the dualized SNR constraints
        lhs = []
        norm2 = 0.0
        for m in range(n_msg):
            with np.errstate(over="ignore"):
                rate_term = mu[m] * (
                    2.0 ** np.minimum(c[m] / np.maximum(b_hz * mu[m], 1e-300), 500.0)
                    - 1.0
                )
            l = (
                rate_term[:, None]
                - 2.0 * np.real(np.einsum("nkm,nm->nk", u_vecs[m].conj(), w_star[m]))
                + b0s[m]
            )
            lhs.append(l)
            norm2 += float(np.sum(l * l))
        target = best[0] if best is not None else max(g_lb, 0.0) * 2.0 + 1e-12
        step = theta * max(target - g_lb, 0.0) / max(norm2, 1e-300)
        for m in range(n_msg):
            lam[m] = np.maximum(lam[m] + step * lhs[m], 0.0)

    if best is None:
        return None, DcDuals(
            gamma=np.zeros(n_msg), lam=tuple(a.copy() for a in lam)
        )
    ub, mu, c, w_rep, gamma_out, lam_out, alloc_conv = best
    duals = DcDuals(gamma=gamma_out, lam=tuple(lam_out))
    delivered = c.sum(axis=1)
    rel = (
        float(np.max(np.abs(delivered[active] - demand[active]) / demand[active]))
        if np.any(active)
        else 0.0
    )
    iterate = DcIterate(
        w_agg=w_rep,
        mu=mu,
        c=c,
        objective=ub,
        converged=bool(alloc_conv and settled and rel < rate_tol),
        residual=rel,
        duals=duals,
    )
    return iterate, duals


def dc_step(prev, channels, instance, duals0=None, inner_iterations=600):
    """One descent step: linearize at prev, solve, keep the better repair.

    The candidate from the dual solve is used only when it is valid and does
    not increase the objective; re-solving prev's own (mu, c) against the
    new linearization always yields objective <= prev.objective, so descent
    holds unconditionally.
    """
    n_sub, _, m_ant = channels.shape
    u_vecs, b0s = _linearization(instance, channels, prev)
    candidate, duals = solve_inner_dual(
        prev,
        instance,
        channels,
        duals0=duals0,
        max_iterations=inner_iterations,
    )
    w_keep, obj_keep = _repair(instance, u_vecs, b0s, prev.mu, prev.c, m_ant)
    keep = DcIterate(
        w_agg=w_keep,
        mu=prev.mu.copy(),
        c=prev.c.copy(),
        objective=obj_keep,
        converged=candidate.converged if candidate is not None else False,
        residual=candidate.residual if candidate is not None else np.inf,
        duals=duals,
    )
    if candidate is not None and candidate.objective <= min(
        obj_keep, prev.objective + 1e-9
    ):
        return candidate
    return keep


def solve_general(
    instance,
    channels,
    n_starts=1,
    seed=0,
    max_outer=100,
    inner_iterations=600,
    history=None,
):
    """Full pipeline: descend to a stationary point, extract a binary design.

    Runs the descent from n_starts initial points (the first deterministic,
    the rest randomly perturbed from seed) and keeps the lowest final
    objective.  The extracted solution assigns each subcarrier to its
    winning message with the repaired beam; per-user rate constraints hold
    exactly because the linearized SNR underestimates the true SNR.
    """
    n_sub, _, m_ant = channels.shape
    best_final = None
    rng = np.random.Generator(np.random.Philox(key=seed))
    for start in range(n_starts):
        point = initial_point(instance, channels, rng=rng if start > 0 else None)
        duals = None
        trace = [point.objective]
        flat = 0
        for _ in range(max_outer):
            nxt = dc_step(
                point, channels, instance, duals0=duals, inner_iterations=inner_iterations
            )
            duals = nxt.duals
            trace.append(nxt.objective)
            change = abs(nxt.objective - point.objective) / max(point.objective, 1e-300)
            point = nxt
            flat = flat + 1 if change < 1e-4 else 0
            if flat >= 3:
                break
        if history is not None:
            history.setdefault("traces", []).append(trace)
        if best_final is None or point.objective < best_final.objective:
            best_final = point
    if history is not None:
        history["n_starts"] = n_starts
        history["converged"] = best_final.converged
    return _extract(instance, channels, best_final)


def _extract(instance, channels, iterate):
    """Binary solution in the allocation module's container."""
    n_sub, _, m_ant = channels.shape
    n_msg = len(instance.messages)
    blocks = _message_channels(instance, channels)
    assignment = np.argmax(iterate.mu, axis=0)
    mu = np.zeros((n_msg, n_sub), dtype=np.int8)
    mu[assignment, np.arange(n_sub)] = 1
    eta = np.zeros(n_sub)
    c_out = np.zeros(n_sub)
    w_out = np.zeros((n_sub, m_ant), dtype=np.complex128)
    q = np.zeros((n_msg, n_sub))
    for m, msg in enumerate(instance.messages):
        h_m, beta_m = blocks[m]
        for n in range(n_sub):
            w = iterate.w_agg[m, n]
            norm2 = float(np.real(np.vdot(w, w)))
            if norm2 > 0:
                unit = w / np.sqrt(norm2)
            else:
                gains = beta_m * np.sum(np.abs(h_m[n]) ** 2, axis=1)
                unit = h_m[n, int(np.argmin(gains))]
                unit = unit / np.linalg.norm(unit)
            snr_unit = beta_m * np.abs(h_m[n] @ unit.conj()) ** 2 / (
                m_ant * instance.sigma2
            )
            q[m, n] = 1.0 / np.min(snr_unit)
            if assignment[n] == m:
                eta[n] = norm2
                c_out[n] = iterate.c[m, n]
                w_out[n] = unit
    demands = tuple(
        MessageDemand(
            users=msg.users,
            level=msg.level,
            demand_bps=msg.demand_bps,
            q_by_subcarrier=q[m],
            tag=msg.tag,
        )
        for m, msg in enumerate(instance.messages)
    )
    return AllocationSolution(
        messages=demands,
        mu=mu,
        eta=eta,
        c=c_out,
        w=w_out,
        objective=float(eta.sum() / m_ant),
    )
