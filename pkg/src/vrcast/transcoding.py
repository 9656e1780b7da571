"""Receiver-side quality downconversion: selection set, exhaustive and approximate solvers.

A user may be sent a higher quality level than it asked for and reduce it
locally, which merges several messages of one tile group into a single
multicast transmission at the price of per-tile conversion power at the
receivers.  The selection of who decodes what lives on a slow timescale
(it adapts to the channel distribution); beams, subcarrier assignment,
powers, and rates stay per realization.

Two routes to a selection.  solve_exhaustive enumerates the admissible
selections, Monte Carlo averages the per-realization transmit optimum for
each candidate on common random numbers, and keeps the argmin of average
transmit power plus weighted conversion power.  approx_quality_selection
works on a distribution-level surrogate where per-subcarrier shares and
powers are replaced by their totals (the "bar" problem, with the fading
averaged into q_bar = noise/gain per user) and relaxes the binary selection
with a concave penalty driven to polarization; the surrogate keeps the
convex-concave split exact, so each majorization step descends.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import MessageDemand, assemble_solution, solve_allocation
from .beamforming import BeamInstance, mrt_beamformer, solve_qos_sdr
from .channel import sample_channel
from .dcsolver import DcInstance, DcMessage, solve_general

LN2 = math.log(2.0)

# z = demand / (B * share) beyond this is treated as saturating; 2**z stays
# finite in double precision well past any feasible operating point
Z_CAP = 400.0


def _h_of(channels):
    return channels.h if hasattr(channels, "h") else np.asarray(channels)


@dataclass(frozen=True)
class ScenarioInstance:
    """Static problem data for one streaming scene.

    users maps contiguous ids 1..K to their profiles; the partition must be
    built over exactly those ids.
    """

    params: object
    partition: object
    users: dict
    ladder: object

    def __post_init__(self):
        ids = sorted(self.users)
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("user ids must be contiguous 1..K")
        covered = set()
        for s in self.partition.index_family:
            covered.update(s)
        if not covered <= set(ids):
            raise ValueError("partition references unknown user ids")
        n_levels = len(self.ladder)
        for k, prof in self.users.items():
            if prof.quality_level > n_levels:
                raise ValueError(f"user {k} requests level above the ladder")

    @property
    def n_users(self):
        return len(self.users)

    @property
    def r_map(self):
        return {k: prof.quality_level for k, prof in self.users.items()}

    def betas(self):
        return np.array(
            [self.users[k].large_scale_gain for k in sorted(self.users)]
        )


def qbar(user, params):
    """Distribution-level unit-SNR power scale of one user: noise over gain."""
    return params.noise_w / user.large_scale_gain


def group_level_sets(partition, r):
    """Distinct requested levels within each tile group, ascending."""
    return {
        s: tuple(sorted(set(int(r[k]) for k in s)))
        for s in partition.index_family
    }


@dataclass(frozen=True)
class QualitySelection:
    """Binary choice of one delivered level per (tile group, member).

    choices holds ((group, user), level) pairs, one per pair, canonically
    sorted; one-hot structure is by construction.
    """

    choices: tuple

    def __post_init__(self):
        items = tuple(sorted(((tuple(s), int(k)), int(l)) for (s, k), l in self.choices))
        keys = [key for key, _ in items]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (group, user) choice")
        object.__setattr__(self, "choices", items)

    @classmethod
    def natural(cls, partition, r):
        """No conversion anywhere: everyone gets exactly the level it asked for."""
        return cls(
            choices=tuple(
                ((s, k), int(r[k])) for s in partition.index_family for k in s
            )
        )

    def as_dict(self):
        return {key: l for key, l in self.choices}

    def level_for(self, s, k):
        return self.as_dict()[(tuple(s), int(k))]

    def groups(self):
        """Active messages: (group, level) -> users that decode it."""
        out = {}
        for (s, k), l in self.choices:
            out.setdefault((s, l), []).append(k)
        return {key: tuple(sorted(ks)) for key, ks in sorted(out.items())}

    def validate(self, partition, r, ladder, group_levels_only=True):
        """Raise unless this selection is admissible for the given scene."""
        expected = set(
            (s, k) for s in partition.index_family for k in s
        )
        got = set(key for key, _ in self.choices)
        if got != expected:
            raise ValueError("selection does not cover the partition pairs exactly")
        level_sets = group_level_sets(partition, r)
        n_levels = len(ladder)
        for (s, k), l in self.choices:
            if not 1 <= l <= n_levels:
                raise ValueError(f"level {l} outside the ladder for {(s, k)}")
            if l < int(r[k]):
                raise ValueError(f"user {k} in {s} assigned below its requested level")
            if group_levels_only and l not in level_sets[s]:
                raise ValueError(
                    f"level {l} not requested by anyone in group {s}"
                )
        return self


def transcoding_power(x, partition, users):
    """Total receiver conversion power of a selection, in watts.

    Each user pays its per-tile per-step power for every level it must drop,
    on every tile of the group.
    """
    sizes = partition.part_sizes()
    total = 0.0
    for (s, k), l in x.choices:
        prof = users[k]
        steps = l - prof.quality_level
        if steps < 0:
            raise ValueError("selection below requested level")
        total += steps * sizes[s] * prof.transcode_w_per_step
    return float(total)


def enumerate_X(partition, r, ladder, cap=10**6, group_levels_only=True):
    """All admissible selections, smallest levels first.

    group_levels_only keeps each user's delivered level among the levels
    someone in its group requested; switching it off enumerates the full
    at-least-requested box instead (used to check that the restriction
    costs nothing).
    """
    level_sets = group_level_sets(partition, r)
    n_levels = len(ladder)
    pairs = []
    options = []
    for s in partition.index_family:
        pool = level_sets[s] if group_levels_only else tuple(range(1, n_levels + 1))
        for k in s:
            allowed = tuple(l for l in pool if l >= int(r[k]))
            if not allowed:
                raise ValueError(f"no admissible level for user {k} in group {s}")
            pairs.append((s, k))
            options.append(allowed)
    count = 1
    for opt in options:
        count *= len(opt)
        if count > cap:
            raise ValueError(
                f"selection count exceeds cap {cap}; use approx_quality_selection"
            )
    out = []
    for combo in itertools.product(*options):
        out.append(QualitySelection(choices=tuple(zip(pairs, combo))))
    return out


@dataclass(frozen=True)
class ActiveMessage:
    """One transmission induced by a selection: its tile group, level, decoders."""

    cell: tuple
    level: int
    users: tuple
    demand_bps: float


def message_demands(instance, x):
    """Messages a selection actually transmits, with their rate demands."""
    sizes = instance.partition.part_sizes()
    out = []
    for (s, l), members in x.groups().items():
        demand = sizes[s] * instance.ladder.rate(l)
        out.append(ActiveMessage(cell=s, level=l, users=members, demand_bps=demand))
    return tuple(out)


def _qos_beam(inst):
    # single decoder: matched filter is exactly optimal, skip the SDP
    if inst.n_users == 1:
        return mrt_beamformer(inst, mode="per_user")
    return solve_qos_sdr(inst)


def solve_small(instance, messages, channels, beam_cache=None, beam_fn=None):
    """Per-realization transmit optimum with one exact beam per (message, subcarrier).

    Valid whenever every message has at most three decoders.  beam_cache
    maps (users, n) to a BeamSolution and may be shared across selections
    within one realization, since the beam depends only on who decodes.
    beam_fn swaps the per-message beam rule (BeamInstance -> BeamSolution);
    never share a cache between different beam rules.
    """
    if beam_fn is None:
        beam_fn = _qos_beam
    h = _h_of(channels)
    n_sub = h.shape[0]
    params = instance.params
    betas = instance.betas()
    demands = []
    beams = {}
    for msg in messages:
        idx = np.array(msg.users) - 1
        q = np.zeros(n_sub)
        for n in range(n_sub):
            key = (msg.users, n)
            beam = None if beam_cache is None else beam_cache.get(key)
            if beam is None:
                inst = BeamInstance(
                    channels=h[n, idx], betas=betas[idx], sigma2=params.noise_w
                )
                beam = beam_fn(inst)
                if beam_cache is not None:
                    beam_cache[key] = beam
            q[n] = beam.q_power
            beams[(msg.users, msg.level, n)] = beam
        demands.append(
            MessageDemand(
                users=msg.users,
                level=msg.level,
                demand_bps=msg.demand_bps,
                q_by_subcarrier=q,
                tag=msg.cell,
            )
        )
    out = solve_allocation(
        demands, n_subcarriers=n_sub, bandwidth_hz=params.bandwidth_hz
    )
    return assemble_solution(
        out, beams, bandwidth_hz=params.bandwidth_hz, m_antennas=params.m_antennas
    )


def solve_with_transcoding(
    instance, x, channels, method="auto", beam_cache=None, n_starts=1, seed=0
):
    """Transmit design for one realization under a fixed quality selection.

    Messages are the selection's active (group, level) pairs; users that
    selected a level decode that message, and its demand is the group's
    tile count times the level rate.  method "small" uses exact per-message
    beams (decoder sets of at most three), "dc" the general descent,
    "auto" picks by the largest decoder set.
    """
    messages = message_demands(instance, x)
    # every message needs at least one whole subcarrier to deliver anything
    if len(messages) > instance.params.n_subcarriers:
        raise ValueError(
            f"{len(messages)} active messages exceed "
            f"{instance.params.n_subcarriers} subcarriers; no feasible assignment"
        )
    if method == "auto":
        method = "small" if max(len(m.users) for m in messages) <= 3 else "dc"
    if method == "small":
        return solve_small(instance, messages, channels, beam_cache=beam_cache)
    if method != "dc":
        raise ValueError(f"unknown method {method!r}")
    params = instance.params
    dc = DcInstance(
        messages=tuple(
            DcMessage(
                users=m.users, level=m.level, demand_bps=m.demand_bps, tag=m.cell
            )
            for m in messages
        ),
        betas=instance.betas(),
        sigma2=params.noise_w,
        bandwidth_hz=params.bandwidth_hz,
    )
    return solve_general(dc, _h_of(channels), n_starts=n_starts, seed=seed)


@dataclass(frozen=True)
class TwoTimescaleResult:
    """Chosen selection with its measured average powers.

    weighted_by_x and avg_tx_by_x align with the candidate order given to
    the solver; solutions, when retained, maps (candidate index, draw) to
    the per-realization design.
    """

    x: QualitySelection
    avg_tx_power: float
    transcode_power: float
    weighted_objective: float
    transcode_weight: float
    avg_tx_by_x: tuple
    weighted_by_x: tuple
    solutions: dict | None = None

    def __post_init__(self):
        expected = self.avg_tx_power + self.transcode_weight * self.transcode_power
        if not math.isclose(self.weighted_objective, expected, rel_tol=1e-12, abs_tol=1e-300):
            raise ValueError("weighted objective inconsistent with its parts")


def solve_exhaustive(
    instance, x_set, mc_draws, seed=0, method="auto", retain=False
):
    """Average the per-realization optimum over draws for every candidate selection.

    All candidates see the identical channel draws (the sampler is keyed by
    (seed, draw)), so the argmin comparison is paired.  Beams are cached per
    draw across candidates; two selections sharing a decoder set reuse them.
    """
    if not x_set:
        raise ValueError("empty candidate set")
    if mc_draws < 1:
        raise ValueError("need at least one draw")
    params = instance.params
    alpha = params.transcode_weight
    sums = np.zeros(len(x_set))
    retained = {} if retain else None
    for draw in range(mc_draws):
        ch = sample_channel(params, instance.n_users, seed, draw)
        cache = {}
        for i, x in enumerate(x_set):
            sol = solve_with_transcoding(
                instance, x, ch, method=method, beam_cache=cache, seed=seed
            )
            sums[i] += sol.objective
            if retained is not None:
                retained[(i, draw)] = sol
    avg = sums / mc_draws
    e_tc = np.array(
        [transcoding_power(x, instance.partition, instance.users) for x in x_set]
    )
    weighted = avg + alpha * e_tc
    best = int(np.argmin(weighted))
    return TwoTimescaleResult(
        x=x_set[best],
        avg_tx_power=float(avg[best]),
        transcode_power=float(e_tc[best]),
        weighted_objective=float(avg[best] + alpha * e_tc[best]),
        transcode_weight=float(alpha),
        avg_tx_by_x=tuple(float(v) for v in avg),
        weighted_by_x=tuple(float(v) for v in weighted),
        solutions=retained,
    )


# ---------------------------------------------------------------------------
# distribution-level ("bar") problem: totals instead of per-subcarrier shares


@dataclass(frozen=True)
class AveragedDesign:
    """Fractional per-subcarrier shares and powers of the averaged problem.

    mu[j, n] is message j's share of subcarrier n (columns sum to one),
    p_w[j, n] its power there; qbar_w[j] the worst-member noise-over-gain.
    """

    keys: tuple
    mu: np.ndarray = field(repr=False)
    p_w: np.ndarray = field(repr=False)
    qbar_w: np.ndarray = field(repr=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        p = np.asarray(self.p_w, dtype=np.float64)
        qb = np.asarray(self.qbar_w, dtype=np.float64)
        if mu.shape != p.shape or mu.ndim != 2 or qb.shape != (mu.shape[0],):
            raise ValueError("inconsistent shapes")
        if len(self.keys) != mu.shape[0]:
            raise ValueError("one key per message required")
        if np.any(mu < -1e-12) or np.any(mu > 1 + 1e-12):
            raise ValueError("shares outside [0, 1]")
        if np.max(np.abs(mu.sum(axis=0) - 1.0)) > 1e-6:
            raise ValueError("per-subcarrier shares must sum to one")
        if np.any(p < 0.0) or np.any(qb <= 0.0):
            raise ValueError("powers must be nonnegative, scales positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "p_w", p)
        object.__setattr__(self, "qbar_w", qb)


@dataclass(frozen=True)
class BarAllocation:
    """Totals of the averaged problem: subcarrier counts and powers per message."""

    keys: tuple
    n_share: np.ndarray = field(repr=False)
    p_bar_w: np.ndarray = field(repr=False)
    qbar_w: np.ndarray = field(repr=False)
    n_subcarriers: int

    def __post_init__(self):
        ns = np.asarray(self.n_share, dtype=np.float64)
        p = np.asarray(self.p_bar_w, dtype=np.float64)
        qb = np.asarray(self.qbar_w, dtype=np.float64)
        if not (ns.shape == p.shape == qb.shape) or ns.ndim != 1:
            raise ValueError("inconsistent shapes")
        if len(self.keys) != ns.size:
            raise ValueError("one key per message required")
        if np.any(ns < -1e-12) or np.any(p < 0.0) or np.any(qb <= 0.0):
            raise ValueError("negative share or power, or nonpositive scale")
        if abs(math.fsum(ns) - self.n_subcarriers) > 1e-6 * max(self.n_subcarriers, 1):
            raise ValueError("shares must sum to the subcarrier count")
        object.__setattr__(self, "n_share", ns)
        object.__setattr__(self, "p_bar_w", p)
        object.__setattr__(self, "qbar_w", qb)


def reduce_to_bar(design):
    """Collapse per-subcarrier shares and powers to their totals.

    Row sums are correctly rounded (fsum), so the power objective of the
    reduced point equals the hierarchical sum of the original exactly.
    """
    n_share = np.array([math.fsum(row) for row in design.mu])
    p_bar = np.array([math.fsum(row) for row in design.p_w])
    return BarAllocation(
        keys=design.keys,
        n_share=n_share,
        p_bar_w=p_bar,
        qbar_w=design.qbar_w.copy(),
        n_subcarriers=design.mu.shape[1],
    )


def expand_from_bar(bar):
    """Spread totals uniformly over the subcarriers.

    The uniform split achieves the same rates as the totals because the
    share-weighted rate is positively homogeneous; with a power-of-two
    subcarrier count the round trip through reduce_to_bar is bit exact.
    """
    n = bar.n_subcarriers
    mu = np.repeat(bar.n_share[:, None] / n, n, axis=1)
    p = np.repeat(bar.p_bar_w[:, None] / n, n, axis=1)
    return AveragedDesign(keys=bar.keys, mu=mu, p_w=p, qbar_w=bar.qbar_w.copy())


def averaged_power_w(design, m_antennas):
    return math.fsum(math.fsum(row) for row in design.p_w) / m_antennas


def bar_power_w(bar, m_antennas):
    return math.fsum(bar.p_bar_w) / m_antennas


def averaged_rate_bps(design, bandwidth_hz):
    """Per-message rate of a fractional design: share-weighted log on each subcarrier."""
    rates = []
    for j in range(design.mu.shape[0]):
        terms = []
        for n in range(design.mu.shape[1]):
            share = design.mu[j, n]
            if share <= 0.0:
                continue
            snr = design.p_w[j, n] / (share * design.qbar_w[j])
            terms.append(share * bandwidth_hz * math.log2(1.0 + snr))
        rates.append(math.fsum(terms))
    return np.array(rates)


def bar_rate_bps(bar, bandwidth_hz):
    """Per-message rate of the totals: count-weighted log at the average power."""
    rates = []
    for j in range(len(bar.keys)):
        ns = bar.n_share[j]
        if ns <= 0.0:
            rates.append(0.0)
            continue
        snr = bar.p_bar_w[j] / (ns * bar.qbar_w[j])
        rates.append(ns * bandwidth_hz * math.log2(1.0 + snr))
    return np.array(rates)


def _bar_power(n_share, demand, qb, bandwidth_hz):
    """Power needed to carry demand on n_share subcarrier-equivalents."""
    if demand <= 0.0:
        return 0.0
    if n_share <= 0.0:
        return math.inf
    z = demand / (bandwidth_hz * n_share)
    if z > Z_CAP:
        return math.inf
    return qb * n_share * (2.0**z - 1.0)


def _bar_power_slope(n_share, demand, qb, bandwidth_hz):
    """d/dN of _bar_power: negative, increasing in n_share, tends to 0 from below."""
    z = demand / (bandwidth_hz * n_share)
    if z > Z_CAP:
        return -math.inf
    return qb * (2.0**z * (1.0 - z * LN2) - 1.0)


def _share_at_slope(nu, demand, qb, bandwidth_hz, hi0):
    """Invert the marginal power: the n_share where the slope equals nu < 0."""
    lo, hi = 1e-12, hi0
    while _bar_power_slope(hi, demand, qb, bandwidth_hz) < nu:
        hi *= 2.0
        if hi > 1e18:
            return hi
    while _bar_power_slope(lo, demand, qb, bandwidth_hz) > nu:
        lo *= 0.5
        if lo < 1e-300:
            return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _bar_power_slope(mid, demand, qb, bandwidth_hz) > nu:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_bar_for_selection(instance, x):
    """Exact totals-level optimum for a fixed selection.

    Every active message's marginal power per subcarrier-equivalent is
    equalized (the common slope is found by bisection, each message's share
    by an inner bisection), which is the optimality condition of the convex
    totals problem with the count constraint.
    Returns the totals point and transmit-plus-weighted-conversion objective.
    """
    params = instance.params
    messages = message_demands(instance, x)
    keys = tuple((m.cell, m.level) for m in messages)
    qb = np.array(
        [
            max(qbar(instance.users[k], params) for k in m.users)
            for m in messages
        ]
    )
    d = np.array([m.demand_bps for m in messages])
    n_total = params.n_subcarriers
    b = params.bandwidth_hz
    active = d > 0.0
    n_share = np.zeros(len(messages))
    if active.sum() == 1:
        n_share[active] = n_total
    elif active.any():
        idx = np.flatnonzero(active)
        # slope is -2^t: monotone in t, brackets any magnitude
        t_lo, t_hi = -400.0, 400.0

        def total_share(t):
            nu = -(2.0**t)
            return math.fsum(
                _share_at_slope(nu, d[j], qb[j], b, n_total) for j in idx
            )

        # larger t -> more negative slope -> smaller shares
        while total_share(t_lo) < n_total and t_lo > -4000:
            t_lo -= 400.0
        while total_share(t_hi) > n_total and t_hi < 4000:
            t_hi += 400.0
        for _ in range(200):
            mid = 0.5 * (t_lo + t_hi)
            if total_share(mid) > n_total:
                t_lo = mid
            else:
                t_hi = mid
        nu = -(2.0 ** (0.5 * (t_lo + t_hi)))
        shares = np.array([_share_at_slope(nu, d[j], qb[j], b, n_total) for j in idx])
        # exact count feasibility regardless of bisection residue
        n_share[idx] = shares * (n_total / shares.sum())
    p_bar = np.array(
        [
            _bar_power(n_share[j], d[j], qb[j], b) if active[j] else 0.0
            for j in range(len(messages))
        ]
    )
    bar = BarAllocation(
        keys=keys,
        n_share=n_share,
        p_bar_w=p_bar,
        qbar_w=qb,
        n_subcarriers=n_total,
    )
    e_tc = transcoding_power(x, instance.partition, instance.users)
    objective = bar_power_w(bar, params.m_antennas) + params.transcode_weight * e_tc
    return bar, float(objective)


# ---------------------------------------------------------------------------
# penalized relaxation of the selection over the totals surrogate


def _project_simplex(v, total):
    """Euclidean projection onto the scaled simplex {w >= 0, sum w = total}."""
    if v.size == 1:
        return np.array([total])
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, v.size + 1)
    cond = u - css / k > 0
    rho = np.nonzero(cond)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass
class _RelaxedSelection:
    """Index structure of the relaxed problem: entries are (message, user) slots."""

    msg_keys: list  # (cell, level) per candidate message
    msg_demand_scale: list  # tiles * level rate, bits
    msg_entries: list  # entry indices per message
    entry_qb: np.ndarray
    entry_level: np.ndarray
    entry_tc_w: np.ndarray  # level * tiles * per-step power, per entry
    pair_entries: list  # entry indices per (group, user), levels ascending
    pair_keys: list


def _build_relaxed(instance):
    r = instance.r_map
    params = instance.params
    level_sets = group_level_sets(instance.partition, r)
    sizes = instance.partition.part_sizes()
    msg_keys, msg_scale, msg_entries = [], [], []
    entry_qb, entry_level, entry_tc = [], [], []
    pair_entries, pair_keys = [], []
    msg_index = {}
    for s in instance.partition.index_family:
        for l in level_sets[s]:
            msg_index[(s, l)] = len(msg_keys)
            msg_keys.append((s, l))
            msg_scale.append(sizes[s] * instance.ladder.rate(l))
            msg_entries.append([])
    for s in instance.partition.index_family:
        for k in s:
            entries_here = []
            for l in level_sets[s]:
                if l < r[k]:
                    continue
                e = len(entry_qb)
                entries_here.append(e)
                j = msg_index[(s, l)]
                msg_entries[j].append(e)
                entry_qb.append(qbar(instance.users[k], params))
                entry_level.append(l)
                entry_tc.append(l * sizes[s] * instance.users[k].transcode_w_per_step)
            pair_entries.append(entries_here)
            pair_keys.append((s, k))
    return _RelaxedSelection(
        msg_keys=msg_keys,
        msg_demand_scale=msg_scale,
        msg_entries=msg_entries,
        entry_qb=np.array(entry_qb),
        entry_level=np.array(entry_level),
        entry_tc_w=np.array(entry_tc),
        pair_entries=pair_entries,
        pair_keys=pair_keys,
    )


def _transmit_and_grads(rel, x, nbar, b_hz, m_ant):
    """Worst-member perspective power per message, with subgradients at the argmax."""
    total = 0.0
    gx = np.zeros_like(x)
    gn = np.zeros_like(nbar)
    for j, entries in enumerate(rel.msg_entries):
        ns = max(nbar[j], 1e-300)
        a = rel.msg_demand_scale[j]
        best_val, best_e = 0.0, None
        for e in entries:
            z = min(a * x[e] / (b_hz * ns), Z_CAP)
            val = rel.entry_qb[e] * ns * (2.0**z - 1.0)
            if val > best_val:
                best_val, best_e = val, e
        total += best_val
        if best_e is None:
            continue
        e = best_e
        z = min(a * x[e] / (b_hz * ns), Z_CAP)
        pw = 2.0**z
        gn[j] = rel.entry_qb[e] * (pw * (1.0 - z * LN2) - 1.0) / m_ant
        gx[e] = rel.entry_qb[e] * LN2 * pw * a / (b_hz * m_ant)
    return total / m_ant, gx, gn


def _project_x(rel, x):
    out = x.copy()
    for entries in rel.pair_entries:
        idx = np.array(entries)
        out[idx] = _project_simplex(out[idx], 1.0)
    return out


def _round_selection(rel, x):
    choices = []
    for (s, k), entries in zip(rel.pair_keys, rel.pair_entries):
        vals = x[np.array(entries)]
        pick = entries[int(np.argmax(vals))]
        choices.append(((s, k), int(rel.entry_level[pick])))
    return QualitySelection(choices=tuple(choices))


def approx_quality_selection(
    instance, max_outer=60, inner_steps=120, polarize_tol=1e-6, history=None
):
    """Selection by penalized descent on the totals surrogate.

    The concave penalty rho*sum x(1-x) is majorized by its tangent at the
    current point, so every outer step minimizes a convex surrogate over
    (per-pair simplices for x, scaled simplex for the subcarrier totals)
    by projected gradient with backtracking; the true penalized objective
    never increases while rho is fixed.  rho doubles whenever the iteration
    settles without polarizing, up to 2^10 times its initial value, after
    which the largest entries are rounded.  history, if given a list,
    collects (rho, penalized objective) after every outer step.
    """
    rel = _build_relaxed(instance)
    params = instance.params
    alpha = params.transcode_weight
    b_hz = params.bandwidth_hz
    m_ant = params.m_antennas
    n_total = params.n_subcarriers
    n_entries = rel.entry_qb.size

    x = np.zeros(n_entries)
    for entries in rel.pair_entries:
        x[np.array(entries)] = 1.0 / len(entries)
    weights = np.array(
        [rel.msg_demand_scale[j] * (len(es) > 0) for j, es in enumerate(rel.msg_entries)],
        dtype=np.float64,
    )
    nbar = _project_simplex(weights / max(weights.sum(), 1e-300) * n_total, n_total)

    tx0, _, _ = _transmit_and_grads(rel, x, nbar, b_hz, m_ant)
    sizes = instance.partition.part_sizes()
    rho0 = alpha * max(
        (p.transcode_w_per_step for p in instance.users.values()), default=0.0
    ) * max(sizes.values()) * len(instance.ladder)
    # a zero conversion cost would never polarize; anchor on the transmit scale
    rho0 = max(rho0, 1e-3 * max(tx0, 1e-12) / max(n_entries, 1))
    rho_cap = rho0 * 2.0**10
    rho = rho0
    step = 1.0
    for _ in range(max_outer):
        xt = x.copy()
        lin = rho * (1.0 - 2.0 * xt)

        def surrogate(xv, nv):
            tx, gx, gn = _transmit_and_grads(rel, xv, nv, b_hz, m_ant)
            val = tx + alpha * float(rel.entry_tc_w @ xv) + float(lin @ xv)
            gx = gx + alpha * rel.entry_tc_w + lin
            return val, gx, gn

        val, gx, gn = surrogate(x, nbar)
        for _ in range(inner_steps):
            scale = max(np.max(np.abs(gx), initial=0.0), np.max(np.abs(gn), initial=0.0))
            if scale == 0.0:
                break
            t = step / scale
            improved = False
            for _ in range(40):
                x_new = _project_x(rel, x - t * gx)
                n_new = _project_simplex(nbar - t * gn, n_total)
                val_new, gx_new, gn_new = surrogate(x_new, n_new)
                if val_new <= val - 1e-14 * max(abs(val), 1.0):
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
            moved = max(np.max(np.abs(x_new - x)), np.max(np.abs(n_new - nbar)))
            x, nbar, val, gx, gn = x_new, n_new, val_new, gx_new, gn_new
            step = min(t * scale * 2.0, 1e6)
            if moved < 1e-12 * n_total:
                break
        if history is not None:
            tx, _, _ = _transmit_and_grads(rel, x, nbar, b_hz, m_ant)
            penalized = (
                tx
                + alpha * float(rel.entry_tc_w @ x)
                + rho * float(np.sum(x * (1.0 - x)))
            )
            history.append((rho, penalized))
        settled = np.max(np.abs(x - xt)) < 1e-7
        polarized = np.all(np.minimum(x, 1.0 - x) <= polarize_tol)
        if polarized and settled:
            break
        if settled:
            if rho >= rho_cap:
                break
            rho *= 2.0
    out = _round_selection(rel, x)
    return out.validate(instance.partition, instance.r_map, instance.ladder)
