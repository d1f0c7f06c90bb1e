import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from monomfg.errors import ConfigurationError, NonConvergenceError
from monomfg.grid import Field, integrate, make_grid
from monomfg.hamiltonian import HamiltonianSpec, ModelHamiltonianParams
from monomfg.instances import reference_instance
from monomfg.operator import MFGState, RegularizationParams, apply_A_reg, residual_coefficients
from monomfg.hamiltonian import blend_mu
from monomfg.solver import (ContinuationSchedule, EpsilonSchedule, SolveTrace, continuation_solve, epsilon_sweep,
                            extrapolate_to_zero, initial_constant_solution, monotone_flow_solve, newton_solve)
from oracles import random_direction

TWO_PI = 2 * np.pi


def reg1(e1=0.1, e2=0.1, d=1):
    return RegularizationParams.for_dimension(d, e1, e2)


def regularized_constant(eps_total):
    """Exact solution of the regularized reference problem: m = 1 - s u, m + s m = 1 + u... solved by hand."""
    # first row: -u + m + s m = 0, second row: m - 1 + s u = 0
    s = eps_total
    u = (1 + s) / (1 + s * (1 + s))
    return 1 - s * u, u


class TestSchedules:
    @pytest.mark.parametrize("mus", [(1.0, 0.5), (0.5, 0.0), (1.0, 0.5, 0.5, 0.0), (1.0,)])
    def test_mu_schedule_rejects(self, mus):
        with pytest.raises(ConfigurationError):
            ContinuationSchedule(mus)

    def test_eps_schedule_rejects(self):
        with pytest.raises(ConfigurationError):
            EpsilonSchedule(((0.1, 0.1), (0.1, 0.05)))
        with pytest.raises(ConfigurationError):
            EpsilonSchedule(((1.0, 0.1),))

    def test_default_geometric(self):
        sched = EpsilonSchedule.geometric()
        assert len(sched) == 8
        assert sched.levels[0] == (0.1, 0.1)
        assert sched.levels[1] == (0.05, 0.05)

    def test_geometric_with_stop(self):
        sched = EpsilonSchedule.geometric(0.1, 8, stop=1e-4)
        assert abs(sched.levels[-1][0] - 1e-4) <= 1e-18


class TestInitialization:
    def test_operator_consistent_root(self, grid64):
        state = initial_constant_solution(grid64, reg1(), ModelHamiltonianParams(2.0, 0.0))
        assert abs(state.u.values[0] - 0.7 / 1.24) <= 1e-12
        assert abs(state.m.values[0] - (1 - 0.2 * 0.7 / 1.24)) <= 1e-12
        assert state.m.min() >= 0.1

    @pytest.mark.parametrize("gamma,tau", [(2.0, 0.0), (1.5, 0.3), (3.0, 0.8)])
    @pytest.mark.parametrize("eps", [(0.1, 0.1), (0.5, 0.4), (1e-3, 2e-3)])
    def test_residual(self, grid64, gamma, tau, eps):
        reg, model = reg1(*eps), ModelHamiltonianParams(gamma, tau)
        state = initial_constant_solution(grid64, reg, model)
        res = apply_A_reg(state, 1.0, reg, HamiltonianSpec.power_growth(grid64, gamma), model)
        assert res.sup_norm() <= 1e-12
        assert res.r_fp.sup_norm() <= 1e-15
        assert state.m.min() > 0

    @settings(max_examples=40, deadline=None)
    @given(gamma=st.floats(1.1, 5.0), e1=st.floats(1e-4, 0.4), e2=st.floats(1e-4, 0.4))
    def test_closed_form_without_penalty(self, gamma, e1, e2):
        grid = make_grid(1, 8)
        reg = reg1(e1, e2)
        s = reg.total
        c = (1 + s - 1 / gamma) / (1 + s * (1 + s))
        if 1 - c * s < e1:  # penalty active: no affine closed form
            return
        state = initial_constant_solution(grid, reg, ModelHamiltonianParams(gamma, 0.0))
        assert abs(state.u.values[0] - c) <= 1e-12 * max(1.0, abs(c))

    def test_second_row_of_constant_states_vanishes(self, grid64):
        reg = reg1(0.2, 0.05)
        for c in (-3.0, 0.0, 0.4, 2.0):
            state = MFGState.constant(grid64, 1 - c * reg.total, c)
            _, r2 = residual_coefficients(state, blend_mu(1.0, HamiltonianSpec.quadratic(grid64)),
                                          HamiltonianSpec.quadratic(grid64).nonlocal_, reg)
            assert np.abs(r2).max() <= 1e-15

    def test_two_dimensional(self, grid2d):
        reg = reg1(0.1, 0.1, d=2)
        state = initial_constant_solution(grid2d, reg, ModelHamiltonianParams(1.5, 0.2))
        spec = HamiltonianSpec.congestion(grid2d, 0.2)
        assert apply_A_reg(state, 1.0, reg, spec, ModelHamiltonianParams(1.5, 0.2)).sup_norm() <= 1e-12


class TestNewton:
    def test_exact_start_returns_immediately(self, grid64):
        reg = reg1(1e-2, 1e-2)
        m, u = regularized_constant(reg.total)
        start = MFGState.constant(grid64, m, u)
        state, info = newton_solve(start, 0.0, reg, HamiltonianSpec.quadratic(grid64), full_output=True)
        assert info.iterations == 0
        assert state is start

    def test_from_perturbed_density(self, grid64):
        reg = reg1(1e-2, 1e-2)
        start = MFGState(Field.from_function(grid64, lambda x: 1 + 0.1 * np.cos(TWO_PI * x)),
                         Field.constant(grid64, 0.0))
        state, info = newton_solve(start, 0.0, reg, HamiltonianSpec.quadratic(grid64), full_output=True)
        assert info.iterations <= 15
        assert apply_A_reg(state, 0.0, reg, HamiltonianSpec.quadratic(grid64)).sup_norm() <= 1e-10
        m, u = regularized_constant(reg.total)
        assert np.abs(state.m.values - m).max() <= 1e-10
        assert np.abs(state.u.values - u).max() <= 1e-10

    def test_quadratic_convergence(self, grid64):
        # perturbation of size t: the first step leaves a residual of order t^2
        spec = HamiltonianSpec.congestion(grid64, 0.3, sigma=Field.constant(grid64, 0.05))
        reg = reg1(0.05, 0.05)
        exact = continuation_solve(ContinuationSchedule(newton_tol=1e-13), reg, spec)[0]
        bump = MFGState(Field.from_function(grid64, lambda x: np.cos(TWO_PI * x)),
                        Field.from_function(grid64, lambda x: np.sin(TWO_PI * x)))
        consts = []
        for t in (1e-2, 1e-3, 1e-4):
            start = exact.axpy(t, bump)
            r0 = apply_A_reg(start, 0.0, reg, spec).sup_norm()
            with pytest.raises(NonConvergenceError) as info:
                newton_solve(start, 0.0, reg, spec, tol=0.0, max_iters=1)
            r1 = apply_A_reg(info.value.best, 0.0, reg, spec).sup_norm()
            consts.append(r1 / r0 / t)
        print("residual ratio / t:", consts)
        assert max(consts) <= 10.0
        assert max(consts) <= 10 * min(consts)

    def test_positivity_maintained(self, grid64):
        reg = reg1(0.02, 0.02)
        spec = HamiltonianSpec.congestion(grid64, 0.5, V0=Field.from_function(grid64, lambda x: 2 * np.sin(TWO_PI * x)))
        start = MFGState(Field.from_function(grid64, lambda x: 1 + 0.9 * np.cos(TWO_PI * x)),
                         Field.constant(grid64, 0.0))
        try:
            state = newton_solve(start, 0.0, reg, spec, max_iters=50)
        except NonConvergenceError as exc:
            state = exc.best
        assert state.m.min() > 0

    def test_failure_carries_best(self, grid64):
        reg = reg1(1e-2, 1e-2)
        start = MFGState(Field.from_function(grid64, lambda x: 1 + 0.5 * np.cos(TWO_PI * x)),
                         Field.constant(grid64, 0.0))
        with pytest.raises(NonConvergenceError) as info:
            newton_solve(start, 0.0, reg, HamiltonianSpec.quadratic(grid64), max_iters=1, tol=1e-14)
        assert info.value.best is not None and info.value.best.m.min() > 0


class TestContinuation:
    def test_two_stage_schedule(self, grid64):
        reg = reg1(1e-2, 1e-2)
        state, trace = continuation_solve(ContinuationSchedule((1.0, 0.0)), reg, HamiltonianSpec.quadratic(grid64))
        m, u = regularized_constant(reg.total)
        assert np.abs(state.m.values - m).max() <= 1e-10
        assert [s["mu"] for s in trace.stages][-1] == 0.0

    def test_path_independence(self):
        inst = reference_instance()
        reg = reg1(1e-2, 1e-2)
        a, _ = continuation_solve(ContinuationSchedule((1.0, 0.0)), reg, inst.spec)
        b, _ = continuation_solve(ContinuationSchedule((1.0, 0.5, 0.0)), reg, inst.spec)
        c, _ = continuation_solve(ContinuationSchedule(), reg, inst.spec)
        assert a.distance(b) <= 1e-9 and a.distance(c) <= 1e-9

    def test_path_independence_nontrivial(self, grid64):
        spec = HamiltonianSpec.congestion(grid64, 0.2, sigma=Field.constant(grid64, 0.05),
                                          V0=Field.from_function(grid64, lambda x: 0.5 * np.sin(TWO_PI * x)))
        reg = reg1(1e-2, 1e-2)
        a, _ = continuation_solve(ContinuationSchedule((1.0, 0.0), newton_tol=1e-12), reg, spec)
        b, _ = continuation_solve(ContinuationSchedule((1.0, 0.5, 0.0), newton_tol=1e-12), reg, spec)
        assert a.distance(b) <= 1e-9

    def test_trace_positivity_and_budget(self):
        inst = reference_instance()
        _, trace = continuation_solve(inst.schedule, reg1(), inst.spec)
        assert all(s["min_m"] > 0 for s in trace.stages)
        assert all(s["iterations"] <= 25 for s in trace.stages)
        assert all(s["residual"] <= 1e-10 for s in trace.stages)


class TestFlow:
    def test_fixed_point(self, grid64):
        reg = reg1(1e-2, 1e-2)
        m, u = regularized_constant(reg.total)
        start = MFGState.constant(grid64, m, u)
        out, hist = monotone_flow_solve(start, 0.0, reg, HamiltonianSpec.quadratic(grid64), full_output=True)
        assert out is start and len(hist) == 1

    def test_residual_non_increasing(self, grid64):
        reg = reg1(0.05, 0.05)
        start = MFGState(Field.from_function(grid64, lambda x: 1 + 0.3 * np.cos(TWO_PI * x)),
                         Field.from_function(grid64, lambda x: 0.2 * np.sin(TWO_PI * x)))
        out, hist = monotone_flow_solve(start, 0.0, reg, HamiltonianSpec.quadratic(grid64), step=1e-3,
                                        iters=60, tol=1e-9, full_output=True)
        l2 = [h[1] for h in hist]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(l2, l2[1:]))
        assert hist[-1][0] <= 1e-9

    def test_non_expansive(self, grid64):
        reg = reg1(0.05, 0.05)
        spec = HamiltonianSpec.quadratic(grid64)
        rng = np.random.default_rng(2)
        w1 = MFGState(Field.from_function(grid64, lambda x: 1 + 0.3 * np.cos(TWO_PI * x)),
                      Field.from_function(grid64, lambda x: 0.2 * np.sin(TWO_PI * x)))
        w2 = w1.axpy(0.05, random_direction(grid64, rng))
        dist = [w1.distance(w2)]
        step = 1e-3
        for _ in range(8):
            w1 = monotone_flow_solve(w1, 0.0, reg, spec, step=step, iters=1, tol=1e-12)
            w2 = monotone_flow_solve(w2, 0.0, reg, spec, step=step, iters=1, tol=1e-12)
            dist.append(w1.distance(w2))
        assert all(b <= a * (1 + 1e-9) for a, b in zip(dist, dist[1:]))


class TestSweep:
    def test_reference_limit(self):
        inst = reference_instance()
        res = epsilon_sweep(inst.eps_schedule, inst.schedule, inst.spec,
                            extrapolation_order=inst.extrapolation_order)
        err = np.abs(res.limit.m.values - 1).max() + np.abs(res.limit.u.values - 1).max()
        assert err <= 1e-6
        assert len(res.states) == 8
        for lv, (e1, e2) in zip(res.trace.levels, inst.eps_schedule.levels):
            assert abs(lv["mass_defect"]) <= 1e-10
            assert lv["min_m"] > 0

    def test_final_level_limit(self):
        inst = reference_instance()
        res = epsilon_sweep(EpsilonSchedule.geometric(0.1, 3), inst.schedule, inst.spec, extrapolation_order=0)
        assert res.limit is res.states[-1]
        assert res.trace.limit["method"] == "final level"

    def test_warm_start_cheaper_than_cold(self, grid64):
        spec = HamiltonianSpec.congestion(grid64, 0.2, sigma=Field.constant(grid64, 0.05),
                                          V0=Field.from_function(grid64, lambda x: 0.5 * np.sin(TWO_PI * x)))
        eps = EpsilonSchedule.geometric(0.1, 5)
        res = epsilon_sweep(eps, ContinuationSchedule(), spec, extrapolation_order=0)
        for lv, (e1, e2) in list(zip(res.trace.levels, eps.levels))[1:]:
            _, cold = continuation_solve(ContinuationSchedule(), reg1(e1, e2), spec)
            cold_iters = sum(s["iterations"] for s in cold.stages)
            assert lv["iterations"] <= cold_iters

    def test_cauchy_records_and_json(self, tmp_path):
        inst = reference_instance()
        res = epsilon_sweep(EpsilonSchedule.geometric(0.1, 4), inst.schedule, inst.spec)
        assert len(res.trace.cauchy) == 3
        assert all(c["l1_m"] >= 0 for c in res.trace.cauchy)
        path = tmp_path / "trace.json"
        res.trace.to_json(path)
        data = json.loads(path.read_text())
        assert data["schema_version"] == 1
        back = SolveTrace.from_dict(data)
        assert back.levels[0]["eps1"] == 0.1

    def test_extrapolation_exact_for_polynomials(self, grid64):
        # coefficients quadratic in eps1 are recovered exactly at 0
        base = MFGState.constant(grid64, 1.0, 2.0)
        bump = MFGState(Field.from_function(grid64, lambda x: np.cos(TWO_PI * x)), Field.constant(grid64, 1.0))
        eps = [0.1, 0.05, 0.02]
        states = [base.axpy(3 * e - 7 * e * e, bump) for e in eps]
        out = extrapolate_to_zero(states, eps)
        assert out.distance(base) <= 1e-13
