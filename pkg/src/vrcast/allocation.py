"""Subcarrier assignment and power allocation by dual decomposition.

Each message (user subset, quality level) must receive its demanded rate
across the subcarriers it wins.  With the per-message unit-SNR power scale
q_n known for every subcarrier, the per-subcarrier cost of rate c is
q_n(2^{c/B} - 1), and the dual problem decomposes: at multiplier lam each
subcarrier goes to the message with the largest profit metric, and the
winning message transmits with power metric_f.  The per-message multiplier
is the root of delivered(lam) = demand, found here by exact water-filling
on the current assignment plus a subgradient fallback that reshuffles the
assignment until it is consistent with the multipliers.

The fixed point certifies itself: when the assignment equals the argmax at
the water-filled multipliers and every demand is met exactly, the primal
cost equals the dual value, so the allocation is optimal (not just
feasible) for the relaxed problem, and it is binary by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

LN2 = math.log(2.0)


@dataclass(frozen=True)
class MessageDemand:
    """Rate demand of one message plus its per-subcarrier unit-SNR power.

    tag distinguishes messages that happen to share the same decoder set
    and level (different tile groups can induce such twins); it never
    affects the solve, only message identity.
    """

    users: tuple
    level: int
    demand_bps: float
    q_by_subcarrier: np.ndarray = field(repr=False)
    tag: tuple | None = None

    def __post_init__(self):
        users = tuple(sorted(int(u) for u in self.users))
        if not users:
            raise ValueError("message needs at least one user")
        if self.level < 1:
            raise ValueError("level must be >= 1")
        if self.demand_bps < 0.0:
            raise ValueError("demand must be nonnegative")
        q = np.asarray(self.q_by_subcarrier, dtype=np.float64)
        if q.ndim != 1 or q.size < 1:
            raise ValueError("q_by_subcarrier must be a 1-d array")
        if np.any(q <= 0.0) or not np.all(np.isfinite(q)):
            raise ValueError("q values must be positive and finite")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "q_by_subcarrier", q)
        if self.tag is not None:
            object.__setattr__(self, "tag", tuple(self.tag))

    @property
    def key(self):
        return (self.users, self.level, self.tag if self.tag is not None else ())


@dataclass
class DualState:
    """Per-message multipliers and the diminishing-step bookkeeping."""

    lam: np.ndarray
    step_scale: np.ndarray
    iteration: int = 0

    def step(self):
        # delta_t = a/(t+1): positive, summable squares, divergent sum
        return self.step_scale / (self.iteration + 1.0)


@dataclass
class AllocationOutcome:
    messages: tuple
    mu: np.ndarray
    power: np.ndarray
    rate: np.ndarray
    lam: np.ndarray
    converged: bool
    iterations: int
    max_rate_residual: float
    tie_count: int

    @property
    def total_power(self):
        return float(np.sum(self.power))

    def delivered_bps(self):
        return self.rate.sum(axis=1)


@dataclass(frozen=True)
class AllocationSolution:
    """Assembled per-subcarrier transmit design.

    eta is the transmit power of the subcarrier's assigned message, w the
    unit-norm beam direction, c the transmission rate; objective is the
    antenna-normalized total power sum(mu * eta) / m.
    """

    messages: tuple
    mu: np.ndarray
    eta: np.ndarray
    c: np.ndarray
    w: np.ndarray = field(repr=False)
    objective: float


def metric_f(lam, q, bandwidth_hz):
    """Optimal transmit power of a subcarrier at multiplier lam."""
    return np.maximum(bandwidth_hz * lam / LN2 - q, 0.0)


def metric_W(lam, q, bandwidth_hz):
    """Per-subcarrier profit of assigning the message at multiplier lam."""
    f = metric_f(lam, q, bandwidth_hz)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = lam * bandwidth_hz * (
            np.log2(1.0 + f / q) - f / ((q + f) * LN2)
        )
    return np.where(f > 0.0, val, 0.0)


def _waterfill_lambda(demand, qs, bandwidth_hz):
    """Smallest multiplier delivering `demand` exactly over subcarriers `qs`.

    Rate on subcarrier n is B*log2(level/q_n) for level = B*lam/ln2 > q_n
    and 0 otherwise; uses the cheapest prefix of sorted q whose water level
    clears exactly the prefix.
    """
    q_sorted = np.sort(np.asarray(qs, dtype=np.float64))
    log_q = np.log2(q_sorted)
    csum = np.cumsum(log_q)
    for j in range(1, q_sorted.size + 1):
        level = 2.0 ** ((demand / bandwidth_hz + csum[j - 1]) / j)
        if level <= q_sorted[j - 1] * (1.0 + 1e-15):
            continue
        if j < q_sorted.size and level > q_sorted[j]:
            continue
        return level * LN2 / bandwidth_hz
    # demand 0 or numerically degenerate: level at the cheapest subcarrier
    return float(q_sorted[0]) * LN2 / bandwidth_hz


def _waterfill_exact(demand, qs, bandwidth_hz):
    """(lam, powers, rates) meeting `demand` exactly on subcarriers `qs`."""
    lam = _waterfill_lambda(demand, qs, bandwidth_hz)
    level = bandwidth_hz * lam / LN2
    p = np.maximum(level - qs, 0.0)
    with np.errstate(divide="ignore"):
        r = np.where(p > 0.0, bandwidth_hz * np.log2(level / qs), 0.0)
    return lam, p, r


def _assign(w_table):
    """Argmax message per subcarrier, lowest index on ties; counts ties."""
    best = np.argmax(w_table, axis=0)
    top = w_table[best, np.arange(w_table.shape[1])]
    ties = int(np.sum(np.sum(w_table == top[None, :], axis=0) > 1))
    return best, ties


def _enumerate_assignments(q, demand, active, candidates, bandwidth_hz, cap):
    """Cheapest demand-exact assignment among per-subcarrier candidate sets.

    Every active message must hold at least one subcarrier; rates come from
    exact water-filling, so the residual of any returned assignment is zero.
    Returns (assignment, lam_hat) or None when the candidate space is empty,
    larger than cap, or contains no feasible assignment.
    """
    total = 1
    for cand in candidates:
        if not cand:
            return None
        total *= len(cand)
        if total > cap:
            return None
    n_msg, n_sub = q.shape
    active_idx = np.flatnonzero(active)
    best_cost = np.inf
    best = None
    for combo in itertools.product(*candidates):
        assignment = np.asarray(combo)
        held = np.isin(active_idx, assignment)
        if not held.all():
            continue
        cost = 0.0
        lam_hat = np.zeros(n_msg)
        for m in active_idx:
            mine = assignment == m
            lam_m, p, _ = _waterfill_exact(demand[m], q[m, mine], bandwidth_hz)
            lam_hat[m] = lam_m
            cost += p.sum()
            if cost >= best_cost:
                break
        if cost < best_cost:
            best_cost = cost
            best = (assignment, lam_hat)
    return best


def _tie_candidates(w_table, active, rel_window):
    """Per-subcarrier message indices whose metric is within rel_window of top."""
    n_sub = w_table.shape[1]
    top = w_table.max(axis=0)
    out = []
    for n in range(n_sub):
        cut = top[n] - rel_window * max(abs(top[n]), 1e-300)
        cand = [m for m in np.flatnonzero(active) if w_table[m, n] >= cut]
        out.append(cand)
    return out


def solve_allocation(
    demands,
    n_subcarriers,
    bandwidth_hz,
    max_iterations=10000,
    rate_tol=1e-3,
    lam_warm=None,
    stall_limit=150,
):
    """Assign subcarriers and powers so every message meets its demand.

    Returns an AllocationOutcome; converged=False means the iteration cap
    was reached with some relative rate residual above rate_tol, and the
    best iterate found is returned.  lam_warm optionally seeds the
    per-message multipliers (demand order after sorting by key); step
    scales still come from the cold-start magnitudes.  stall_limit is the
    number of non-improving subgradient iterations tolerated before the
    exact tie-enumeration recovery runs.
    """
    messages = tuple(sorted(demands, key=lambda d: d.key))
    if not messages:
        raise ValueError("no demands")
    n_msg = len(messages)
    q = np.stack([d.q_by_subcarrier for d in messages])
    if q.shape != (n_msg, n_subcarriers):
        raise ValueError("every demand must carry one q per subcarrier")
    demand = np.array([d.demand_bps for d in messages])
    active = demand > 0.0
    if not np.any(active):
        zero = np.zeros((n_msg, n_subcarriers))
        return AllocationOutcome(
            messages, zero.astype(np.int8), zero, zero.copy(),
            np.zeros(n_msg), True, 0, 0.0, 0,
        )

    q_med = np.median(q, axis=1)
    lam0 = q_med * LN2 / bandwidth_hz * 2.0 ** (
        demand / (n_subcarriers * bandwidth_hz)
    )
    start = lam0
    if lam_warm is not None:
        start = np.asarray(lam_warm, dtype=np.float64)
        if start.shape != (n_msg,) or np.any(start < 0):
            raise ValueError("lam_warm must be nonnegative with one entry per demand")
        start = np.where(start > 0, start, lam0)
    state = DualState(
        lam=np.where(active, start, 0.0),
        step_scale=np.where(demand > 0, lam0 / np.maximum(demand, 1e-300), 0.0),
    )

    w_row_inactive = np.full(n_subcarriers, -np.inf)
    best = None

    def build(lam, assignment, ties):
        mu = np.zeros((n_msg, n_subcarriers), dtype=np.int8)
        mu[assignment, np.arange(n_subcarriers)] = 1
        mu[~active] = 0
        power = metric_f(lam[:, None], q, bandwidth_hz) * mu
        with np.errstate(divide="ignore"):
            rate = np.where(
                power > 0.0,
                bandwidth_hz * np.log2(1.0 + power / q),
                0.0,
            )
        resid = np.abs(rate.sum(axis=1) - demand)
        rel = np.max(resid[active] / demand[active]) if np.any(active) else 0.0
        return mu, power, rate, float(rel), ties

    def exact_outcome(assignment, lam_hat, t, ties):
        mu = np.zeros((n_msg, n_subcarriers), dtype=np.int8)
        power = np.zeros((n_msg, n_subcarriers))
        rate = np.zeros((n_msg, n_subcarriers))
        for m in np.flatnonzero(active):
            mine = assignment == m
            mu[m, mine] = 1
            _, p, r = _waterfill_exact(demand[m], q[m, mine], bandwidth_hz)
            power[m, mine] = p
            rate[m, mine] = r
        resid = np.abs(rate.sum(axis=1) - demand)
        rel = float(np.max(resid[active] / demand[active]))
        return AllocationOutcome(
            messages, mu, power, rate, lam_hat, True, t, rel, ties,
        )

    def recover(lam, t):
        # degenerate equilibria (tied metrics) admit no argmax-consistent
        # multiplier; fall back to exact search over the candidate space
        full = [list(np.flatnonzero(active))] * n_subcarriers
        found = _enumerate_assignments(
            q, demand, active, full, bandwidth_hz, cap=20000,
        )
        ties = 0
        if found is None:
            w_table = metric_W(lam[:, None], q, bandwidth_hz)
            w_table[~active] = w_row_inactive
            for window in (1e-9, 1e-6, 1e-3, 1e-1):
                cands = _tie_candidates(w_table, active, window)
                ties = sum(1 for c in cands if len(c) > 1)
                found = _enumerate_assignments(
                    q, demand, active, cands, bandwidth_hz, cap=4096,
                )
                if found is not None:
                    break
        if found is None:
            return None
        assignment, lam_hat = found
        return exact_outcome(assignment, lam_hat, t, ties)

    # tiny candidate spaces are cheaper to enumerate exactly than to iterate
    full = [list(np.flatnonzero(active))] * n_subcarriers
    found = _enumerate_assignments(q, demand, active, full, bandwidth_hz, cap=4096)
    if found is not None:
        return exact_outcome(found[0], found[1], 0, 0)

    stall = 0
    for t in range(max_iterations):
        state.iteration = t
        w_table = metric_W(state.lam[:, None], q, bandwidth_hz)
        w_table[~active] = w_row_inactive
        assignment, ties = _assign(w_table)

        # exact polish: water-fill multipliers on the current assignment,
        # accept if the assignment is argmax-consistent at those multipliers
        lam_hat = state.lam.copy()
        ok = True
        for m in range(n_msg):
            if not active[m]:
                continue
            mine = assignment == m
            if not np.any(mine):
                ok = False
                continue
            lam_hat[m] = _waterfill_lambda(demand[m], q[m, mine], bandwidth_hz)
        if ok:
            w_check = metric_W(lam_hat[:, None], q, bandwidth_hz)
            w_check[~active] = w_row_inactive
            assign2, ties2 = _assign(w_check)
            if np.array_equal(assign2, assignment):
                mu, power, rate, rel, _ = build(lam_hat, assignment, ties2)
                if rel < rate_tol:
                    return AllocationOutcome(
                        messages, mu, power, rate, lam_hat,
                        True, t + 1, rel, ties2,
                    )

        mu, power, rate, rel, ties = build(state.lam, assignment, ties)
        if best is None or rel < best[3] * (1.0 - 1e-12):
            improved = best is None or rel < best[3] * (1.0 - 1e-3)
            best = (mu, power, rate, rel, state.lam.copy(), t + 1, ties)
            # sub-0.1% residual gains are oscillation noise, not progress;
            # let them accumulate toward the exact recovery instead
            stall = 0 if improved else stall + 1
        else:
            stall += 1
        if rel < rate_tol:
            return AllocationOutcome(
                messages, mu, power, rate, state.lam.copy(), True, t + 1, rel, ties,
            )
        if stall >= stall_limit:
            recovered = recover(best[4], t + 1)
            if recovered is not None:
                return recovered
            stall = 0
        residual = demand - rate.sum(axis=1)
        state.lam = np.maximum(state.lam + state.step() * residual, 0.0)

    recovered = recover(best[4], max_iterations)
    if recovered is not None:
        return recovered
    mu, power, rate, rel, lam, its, ties = best
    return AllocationOutcome(messages, mu, power, rate, lam, False, its, rel, ties)


def assemble_solution(outcome, beams, bandwidth_hz, m_antennas):
    """Compose the per-subcarrier design from an allocation and its beams.

    beams maps (users, level, n) to the BeamSolution whose q_power produced
    the outcome's q values.  The assigned message's beam is normalized to a
    unit direction and its transmit power is the allocation power.
    """
    n_msg, n_sub = outcome.mu.shape
    eta = np.zeros(n_sub)
    c = np.zeros(n_sub)
    w = np.zeros((n_sub, m_antennas), dtype=np.complex128)
    for n in range(n_sub):
        assigned = np.flatnonzero(outcome.mu[:, n])
        if assigned.size == 0:
            continue
        if assigned.size > 1:
            raise ValueError(f"subcarrier {n} assigned to multiple messages")
        m = int(assigned[0])
        msg = outcome.messages[m]
        # twins with equal (users, level) share the same physical beam
        beam = beams.get((msg.users, msg.level, n))
        if beam is None:
            raise ValueError(f"missing beam for message {msg.key} on subcarrier {n}")
        direction = beam.v / np.sqrt(beam.q_power)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
            raise ValueError("beam q_power inconsistent with its vector")
        eta[n] = outcome.power[m, n]
        q_val = outcome.messages[m].q_by_subcarrier[n]
        c[n] = bandwidth_hz * np.log2(1.0 + eta[n] / q_val)
        w[n] = direction
    objective = float(np.sum(eta) / m_antennas)
    return AllocationSolution(
        messages=outcome.messages,
        mu=outcome.mu.copy(),
        eta=eta,
        c=c,
        w=w,
        objective=objective,
    )
