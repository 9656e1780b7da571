import numpy as np
import pytest

from vrcast.allocation import MessageDemand, metric_W, solve_allocation
from vrcast.beamforming import BeamInstance, solve_qos_sdr
from vrcast.dcsolver import (
    DcDuals,
    DcInstance,
    DcIterate,
    DcMessage,
    _closed_form_primal,
    _linearization,
    _min_norm_beam,
    dc_step,
    feasibility_residuals,
    initial_point,
    solve_general,
    solve_inner_dual,
)

LN2 = np.log(2.0)


def random_setup(rng, n_sub, n_users, m_ant, messages, sigma2=1e-3, b_hz=1e3):
    channels = (
        rng.standard_normal((n_sub, n_users, m_ant))
        + 1j * rng.standard_normal((n_sub, n_users, m_ant))
    ) / np.sqrt(2.0)
    betas = rng.uniform(0.5, 2.0, n_users)
    inst = DcInstance(
        messages=tuple(messages),
        betas=betas,
        sigma2=sigma2,
        bandwidth_hz=b_hz,
    )
    return inst, channels


def algorithm1_objective(inst, channels, relaxed=False):
    """Decomposed optimum: per-message SDR beams, then exact allocation."""
    n_sub, _, m_ant = channels.shape
    demands = []
    for msg in inst.messages:
        idx = [u - 1 for u in msg.users]
        q = np.zeros(n_sub)
        for n in range(n_sub):
            sol = solve_qos_sdr(
                BeamInstance(
                    channels=channels[n, idx, :],
                    betas=inst.betas[idx],
                    sigma2=inst.sigma2,
                )
            )
            q[n] = sol.relaxed_value if relaxed else sol.q_power
        demands.append(
            MessageDemand(
                users=msg.users,
                level=msg.level,
                demand_bps=msg.demand_bps,
                q_by_subcarrier=q,
            )
        )
    outcome = solve_allocation(demands, n_sub, inst.bandwidth_hz)
    return outcome, demands


def relaxed_lower_bound(outcome, demands, n_sub, b_hz, m_ant):
    """Dual value at the allocation's multipliers with relaxed beam powers.

    Any nonnegative multiplier vector gives a certified lower bound on the
    continuous relaxation, hence on every feasible binary design.
    """
    lam = np.maximum(outcome.lam, 0.0)
    demand = np.array([d.demand_bps for d in demands])
    q = np.stack([d.q_by_subcarrier for d in demands])
    w_table = metric_W(lam[:, None], q, b_hz)
    dual = float(lam @ demand - w_table.max(axis=0).sum())
    return dual / m_ant


class TestInitialPoint:
    def test_feasible_on_random_instances(self):
        rng = np.random.default_rng(1234)
        for trial in range(100):
            n_sub = int(rng.integers(2, 5))
            n_users = int(rng.integers(1, 4))
            m_ant = int(rng.integers(2, 5))
            users = tuple(range(1, n_users + 1))
            messages = [
                DcMessage(users=users, level=1, demand_bps=float(rng.uniform(50, 400))),
            ]
            if n_users > 1:
                messages.append(
                    DcMessage(
                        users=users[:1], level=2, demand_bps=float(rng.uniform(0, 200))
                    )
                )
            inst, channels = random_setup(rng, n_sub, n_users, m_ant, messages)
            point = initial_point(inst, channels)
            res = feasibility_residuals(point, inst, channels)
            assert res["per_user_rate"] <= 1e-9
            assert res["demand"] <= 1e-6
            assert res["assignment_sum"] <= 1e-9
            assert res["negative_rate"] <= 0.0

    def test_single_user_equal_split(self):
        rng = np.random.default_rng(7)
        inst, channels = random_setup(
            rng, 4, 1, 3, [DcMessage(users=(1,), level=1, demand_bps=400.0)]
        )
        point = initial_point(inst, channels)
        assert np.allclose(point.c[0], 100.0)
        assert np.allclose(point.mu, 1.0)
        for n in range(4):
            h = channels[n, 0]
            w = point.w_agg[0, n]
            # collinear with the only user's channel
            inner = np.abs(np.vdot(h, w))
            assert inner == pytest.approx(
                np.linalg.norm(h) * np.linalg.norm(w), rel=1e-9
            )

    def test_every_beam_nonzero(self):
        rng = np.random.default_rng(99)
        messages = [
            DcMessage(users=(1, 2), level=1, demand_bps=300.0),
            DcMessage(users=(2,), level=2, demand_bps=0.0),
        ]
        inst, channels = random_setup(rng, 3, 2, 4, messages)
        point = initial_point(inst, channels)
        norms = np.linalg.norm(point.w_agg, axis=2)
        assert np.all(norms > 0)


class TestMinNormBeam:
    def test_single_constraint_analytic(self):
        u = np.array([[1.0 + 0j, 1j]])
        b = np.array([2.0])
        w = _min_norm_beam(u, b)
        # w = nu*u with 2*Re{u^H w} = 2*nu*||u||^2 = 2 -> nu = 1/2
        assert np.allclose(w, 0.5 * u[0])
        assert 2 * np.real(np.vdot(u[0], w)) == pytest.approx(2.0, rel=1e-12)

    def test_matches_brute_force_grid(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            k = int(rng.integers(1, 4))
            u = rng.standard_normal((k, 2)) + 1j * rng.standard_normal((k, 2))
            b = rng.uniform(0.1, 2.0, k)
            w = _min_norm_beam(u, b)
            slack = 2 * np.real(u.conj() @ w) - b
            assert np.min(slack) >= -1e-8
            # KKT: w in the span of active constraints with tight equality
            active = slack < 1e-6
            assert np.any(active)
            basis = u[active]
            coeff, *_ = np.linalg.lstsq(basis.T, w, rcond=None)
            assert np.linalg.norm(basis.T @ coeff - w) <= 1e-8 * (
                1 + np.linalg.norm(w)
            )

    def test_nonpositive_bounds_give_zero(self):
        u = np.array([[1.0 + 0j, 0j]])
        w = _min_norm_beam(u, np.array([0.0]))
        assert np.allclose(w, 0.0)


class TestClosedForms:
    def test_zero_duals_idle(self):
        rng = np.random.default_rng(11)
        messages = [DcMessage(users=(1, 2), level=1, demand_bps=100.0)]
        inst, channels = random_setup(rng, 3, 2, 2, messages)
        point = initial_point(inst, channels)
        u_vecs, b0s = _linearization(inst, channels, point)
        gamma = np.zeros(1)
        lam = (np.zeros((3, 2)),)
        g, _, mu, c, w_star, _ = _closed_form_primal(
            inst, u_vecs, b0s, gamma, lam, 3, 2
        )
        assert np.all(g == 0)
        assert np.all(c == 0)
        assert np.all(w_star == 0)
        assert np.all(mu.sum(axis=0) == 1)

    def test_score_positive_only_above_threshold(self):
        rng = np.random.default_rng(12)
        messages = [DcMessage(users=(1,), level=1, demand_bps=100.0)]
        inst, channels = random_setup(rng, 2, 1, 2, messages)
        point = initial_point(inst, channels)
        u_vecs, b0s = _linearization(inst, channels, point)
        lam = (np.full((2, 1), 2.0),)
        b_hz = inst.bandwidth_hz
        below = np.array([1.9 * LN2 / b_hz])
        above = np.array([2.1 * LN2 / b_hz])
        g_lo, *_ = _closed_form_primal(inst, u_vecs, b0s, below, lam, 2, 2)
        g_hi, _, _, c_hi, _, _ = _closed_form_primal(
            inst, u_vecs, b0s, above, lam, 2, 2
        )
        assert np.all(g_lo == 0)
        assert np.all(g_hi > 0)
        assert np.all(c_hi > 0)


class TestInnerDual:
    def test_rate_residual_converges(self):
        rng = np.random.default_rng(42)
        hits = 0
        for trial in range(10):
            messages = [
                DcMessage(users=(1, 2), level=1, demand_bps=float(rng.uniform(200, 500))),
                DcMessage(users=(3,), level=2, demand_bps=float(rng.uniform(100, 300))),
            ]
            inst, channels = random_setup(rng, 4, 3, 3, messages)
            point = initial_point(inst, channels)
            iterate, duals = solve_inner_dual(point, inst, channels)
            assert iterate is not None
            if iterate.converged:
                hits += 1
                assert iterate.residual < 1e-3
            # repaired primal always meets demands exactly
            delivered = iterate.c.sum(axis=1)
            for m, msg in enumerate(inst.messages):
                assert delivered[m] == pytest.approx(msg.demand_bps, rel=1e-9)
            assert np.all(duals.gamma >= 0)
        assert hits >= 8

    def test_beams_in_constraint_span(self):
        rng = np.random.default_rng(5)
        messages = [
            DcMessage(users=(1, 2), level=1, demand_bps=300.0),
            DcMessage(users=(2, 3), level=1, demand_bps=200.0),
        ]
        inst, channels = random_setup(rng, 3, 3, 4, messages)
        point = initial_point(inst, channels)
        iterate, _ = solve_inner_dual(point, inst, channels)
        for m, msg in enumerate(inst.messages):
            idx = [u - 1 for u in msg.users]
            for n in range(3):
                w = iterate.w_agg[m, n]
                if np.linalg.norm(w) == 0:
                    continue
                basis = channels[n, idx, :].T  # (M, K)
                coeff, *_ = np.linalg.lstsq(basis, w, rcond=None)
                resid = np.linalg.norm(basis @ coeff - w)
                assert resid <= 1e-8 * np.linalg.norm(w)


class TestDcStep:
    def test_descent_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for trial in range(100):
            n_users = int(rng.integers(1, 4))
            users = tuple(range(1, n_users + 1))
            messages = [
                DcMessage(users=users, level=1, demand_bps=float(rng.uniform(100, 400)))
            ]
            if n_users >= 2:
                messages.append(
                    DcMessage(
                        users=users[1:], level=2, demand_bps=float(rng.uniform(50, 200))
                    )
                )
            inst, channels = random_setup(
                rng, int(rng.integers(2, 4)), n_users, int(rng.integers(2, 4)), messages
            )
            point = initial_point(inst, channels)
            duals = None
            for _ in range(4):
                nxt = dc_step(point, channels, inst, duals0=duals, inner_iterations=120)
                assert nxt.objective <= point.objective + 1e-9
                duals = nxt.duals
                point = nxt

    def test_stationary_point_is_fixed(self):
        # single message, single user: matched-filter beams with water-filled
        # rates form the exact optimum of the relaxed problem
        rng = np.random.default_rng(8)
        n_sub, m_ant, b_hz, sigma2 = 4, 3, 1e3, 1e-3
        messages = [DcMessage(users=(1,), level=1, demand_bps=2500.0)]
        inst, channels = random_setup(
            rng, n_sub, 1, m_ant, messages, sigma2=sigma2, b_hz=b_hz
        )
        q = np.array(
            [
                m_ant * sigma2 / (inst.betas[0] * np.linalg.norm(channels[n, 0]) ** 2)
                for n in range(n_sub)
            ]
        )
        demand = MessageDemand(
            users=(1,), level=1, demand_bps=2500.0, q_by_subcarrier=q
        )
        outcome = solve_allocation([demand], n_sub, b_hz)
        assert outcome.converged
        w_agg = np.zeros((1, n_sub, m_ant), dtype=np.complex128)
        for n in range(n_sub):
            h = channels[n, 0]
            w_agg[0, n] = np.sqrt(outcome.power[0, n]) * h / np.linalg.norm(h)
        point = DcIterate(
            w_agg=w_agg,
            mu=np.ones((1, n_sub)),
            c=outcome.rate.astype(float),
            objective=float(np.sum(outcome.power) / m_ant),
        )
        nxt = dc_step(point, channels, inst)
        assert abs(nxt.objective - point.objective) <= 1e-7 * point.objective

    def test_keep_candidate_used_when_duals_poor(self):
        rng = np.random.default_rng(31)
        messages = [DcMessage(users=(1, 2), level=1, demand_bps=400.0)]
        inst, channels = random_setup(rng, 3, 2, 3, messages)
        point = initial_point(inst, channels)
        # one inner iteration cannot converge; the step must still descend
        nxt = dc_step(point, channels, inst, inner_iterations=1)
        assert nxt.objective <= point.objective + 1e-9


class TestSolveGeneral:
    def test_matches_unicast_allocation_scalar_antenna(self):
        rng = np.random.default_rng(77)
        n_sub, b_hz, sigma2 = 6, 1e3, 1e-2
        messages = [DcMessage(users=(1,), level=1, demand_bps=3000.0)]
        inst, channels = random_setup(
            rng, n_sub, 1, 1, messages, sigma2=sigma2, b_hz=b_hz
        )
        q = sigma2 / (inst.betas[0] * np.abs(channels[:, 0, 0]) ** 2)
        outcome = solve_allocation(
            [MessageDemand(users=(1,), level=1, demand_bps=3000.0, q_by_subcarrier=q)],
            n_sub,
            b_hz,
        )
        assert outcome.converged
        optimal = outcome.total_power
        sol = solve_general(inst, channels)
        assert sol.objective <= 1.01 * optimal
        assert sol.objective >= optimal * (1 - 1e-6)

    def test_small_groups_near_decomposed_optimum(self):
        rng = np.random.default_rng(4000)
        ratios = []
        for trial in range(10):
            messages = [
                DcMessage(users=(1, 2), level=1, demand_bps=float(rng.uniform(200, 400))),
                DcMessage(users=(3,), level=1, demand_bps=float(rng.uniform(100, 300))),
            ]
            inst, channels = random_setup(rng, 4, 3, 3, messages)
            outcome, demands = algorithm1_objective(inst, channels)
            assert outcome.converged
            optimal = outcome.total_power / 3
            history = {}
            sol = solve_general(inst, channels, history=history)
            for trace in history["traces"]:
                diffs = np.diff(trace)
                assert np.all(diffs <= 1e-9)
            relaxed_outcome, relaxed_demands = algorithm1_objective(
                inst, channels, relaxed=True
            )
            lb = relaxed_lower_bound(
                relaxed_outcome, relaxed_demands, 4, inst.bandwidth_hz, 3
            )
            assert sol.objective >= lb - 1e-9 * max(1.0, abs(lb))
            ratios.append(sol.objective / optimal)
        assert np.mean(ratios) <= 1.05

    def test_feasibility_of_extracted_solution(self):
        rng = np.random.default_rng(303)
        messages = [
            DcMessage(users=(1, 2, 3), level=1, demand_bps=350.0),
            DcMessage(users=(2,), level=2, demand_bps=150.0),
        ]
        inst, channels = random_setup(rng, 4, 3, 4, messages)
        sol = solve_general(inst, channels)
        assert sol.mu.shape == (2, 4)
        assert np.all(sol.mu.sum(axis=0) == 1)
        for m, msg in enumerate(inst.messages):
            idx = [u - 1 for u in msg.users]
            mine = np.flatnonzero(sol.mu[m])
            delivered = float(sol.c[mine].sum())
            assert delivered == pytest.approx(msg.demand_bps, rel=1e-6)
            for n in mine:
                snr = (
                    inst.betas[idx]
                    * np.abs(channels[n, idx, :] @ sol.w[n].conj()) ** 2
                    * sol.eta[n]
                    / (4 * inst.sigma2)
                )
                cap = inst.bandwidth_hz * np.log2(1.0 + snr)
                assert np.all(cap >= sol.c[n] * (1 - 1e-9))

    def test_deterministic_rerun(self):
        rng = np.random.default_rng(555)
        messages = [
            DcMessage(users=(1, 2), level=1, demand_bps=300.0),
            DcMessage(users=(2, 3), level=2, demand_bps=250.0),
        ]
        inst, channels = random_setup(rng, 3, 3, 3, messages)
        a = solve_general(inst, channels, n_starts=2, seed=9)
        b = solve_general(inst, channels, n_starts=2, seed=9)
        assert np.array_equal(a.eta, b.eta)
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.mu, b.mu)
        assert a.objective == b.objective


class TestValidation:
    def test_message_errors(self):
        with pytest.raises(ValueError):
            DcMessage(users=(), level=1, demand_bps=10.0)
        with pytest.raises(ValueError):
            DcMessage(users=(1, 1), level=1, demand_bps=10.0)
        with pytest.raises(ValueError):
            DcMessage(users=(1,), level=1, demand_bps=-1.0)

    def test_instance_errors(self):
        msg = DcMessage(users=(1, 4), level=1, demand_bps=10.0)
        with pytest.raises(ValueError):
            DcInstance(
                messages=(msg,),
                betas=np.ones(2),
                sigma2=1.0,
                bandwidth_hz=1.0,
            )
        with pytest.raises(ValueError):
            DcInstance(messages=(), betas=np.ones(2), sigma2=1.0, bandwidth_hz=1.0)

    def test_iterate_invariants(self):
        w = np.zeros((1, 2, 2), dtype=complex)
        with pytest.raises(ValueError):
            DcIterate(w_agg=w, mu=np.full((1, 2), 0.5), c=np.zeros((1, 2)), objective=0.0)
        with pytest.raises(ValueError):
            DcIterate(
                w_agg=w, mu=np.ones((1, 2)), c=np.full((1, 2), -1.0), objective=0.0
            )

    def test_duals_nonnegative(self):
        with pytest.raises(ValueError):
            DcDuals(gamma=np.array([-1.0]), lam=(np.zeros((2, 1)),))
