"""Continuation in mu, the eps sweep and the Newton-Krylov kernel.

The μ=1 problem (model Hamiltonian only) has a constant solution found by
a scalar root solve. From there a damped inexact Newton method follows the
blend down to μ=0, and afterwards the regularization weights are reduced
level by level with warm starts.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import ConfigurationError, InitializationError, MFGError, NonConvergenceError
from .grid import Field, TorusGrid, hermitian_part, integrate, to_values
from .hamiltonian import HamiltonianSpec, ModelHamiltonianParams, blend_mu
from .operator import (Linearization, MFGState, RegularizationParams, _require_domain,
                       residual_coefficients)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ContinuationSchedule:
    mu_values: tuple = (1.0, 0.75, 0.5, 0.25, 0.1, 0.0)
    max_newton_iters: int = 25
    newton_tol: float = 1e-10
    step_halving_limit: int = 10

    def __post_init__(self):
        mus = tuple(float(x) for x in self.mu_values)
        object.__setattr__(self, "mu_values", mus)
        if len(mus) < 2 or mus[0] != 1.0 or mus[-1] != 0.0:
            raise ConfigurationError("mu schedule must start at 1.0 and end at 0.0")
        if any(b >= a for a, b in zip(mus, mus[1:])):
            raise ConfigurationError("mu schedule must be strictly decreasing")
        if self.max_newton_iters < 1 or not self.newton_tol > 0 or self.step_halving_limit < 0:
            raise ConfigurationError("invalid Newton settings")


@dataclass(frozen=True)
class EpsilonSchedule:
    levels: tuple

    def __post_init__(self):
        lv = tuple((float(a), float(b)) for a, b in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ConfigurationError("eps schedule is empty")
        for a, b in lv:
            if not (0 < a < 1 and 0 < b < 1):
                raise ConfigurationError(f"eps level {(a, b)} outside (0, 1)")
        for (a0, b0), (a1, b1) in zip(lv, lv[1:]):
            if not (a1 < a0 and b1 < b0):
                raise ConfigurationError("eps schedule must decrease strictly in both components")

    @classmethod
    def geometric(cls, start: float = 0.1, levels: int = 8, ratio: float | None = None,
                  stop: float | None = None, eps2_factor: float = 1.0) -> "EpsilonSchedule":
        """``levels`` values from ``start``; either ``ratio`` or ``stop`` fixes the spacing."""
        if stop is not None:
            vals = np.geomspace(start, stop, levels)
        else:
            r = 0.5 if ratio is None else ratio
            vals = start * r ** np.arange(levels)
        return cls(tuple((float(v), float(v * eps2_factor)) for v in vals))

    def __len__(self):
        return len(self.levels)


@dataclass
class SolveTrace:
    """Record of every accepted solve plus per-level summaries."""

    stages: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    cauchy: list = field(default_factory=list)
    oscillation: bool = False
    limit: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add_stage(self, **kw):
        self.stages.append({k: _plain(v) for k, v in kw.items()})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_plain)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "SolveTrace":
        d = dict(d)
        d.pop("schema_version", None)
        return cls(**d)


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if hasattr(v, "__dataclass_fields__"):
        return {k: _plain(x) for k, x in asdict(v).items()}
    return v


# initialization -------------------------------------------------------

def initial_constant_solution(grid: TorusGrid, reg: RegularizationParams,
                              model: ModelHamiltonianParams) -> MFGState:
    """Constant solution of the μ=1 regularized problem.

    The candidate state is ``(1 - c*(eps1+eps2), c)``; its second row
    vanishes identically and ``c`` is the root of the first row.
    """
    reg.validate(grid.d)
    s = reg.total
    from .coupling import NonlocalSpec
    small = TorusGrid(grid.d, 8)
    nl = NonlocalSpec.none(small)

    def f(c):
        st = MFGState.constant(small, 1.0 - c * s, c)
        r1, _ = residual_coefficients(st, model, nl, reg)
        return float(r1.flat[0].real)

    lo = -10.0 / (model.gamma * min(s, 1.0))
    hi = (1.0 - 1e-8) / s
    flo, fhi = f(lo), f(hi)
    # the residual is decreasing in c; widen the lower end if needed
    tries = 0
    while flo < 0 and tries < 60:
        lo *= 2.0
        flo = f(lo)
        tries += 1
    if not (flo > 0 > fhi):
        raise InitializationError(f"no sign change on [{lo:.6g}, {hi:.6g}]: f = ({flo:.6g}, {fhi:.6g})")
    c = bisect(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    state = MFGState.constant(grid, 1.0 - c * s, c)
    return state


# Newton kernel --------------------------------------------------------

@dataclass
class NewtonInfo:
    iterations: int = 0
    residual: float = float("inf")
    history: list = field(default_factory=list)
    linear_iterations: int = 0
    converged: bool = False


def _sup(r1, r2, grid) -> float:
    a = to_values(hermitian_part(r1))
    b = to_values(hermitian_part(r2))
    return float(max(np.abs(a).max(), np.abs(b).max()))


def _krylov_step(lin: Linearization, r1, r2, rtol: float):
    """Solve ``L x = -r`` by right-preconditioned GMRES on coefficients."""
    shape = r1.shape
    n = r1.size
    count = [0]

    def mv(y):
        count[0] += 1
        x1, x2 = lin.precondition(y[:n].reshape(shape), y[n:].reshape(shape))
        a, b = lin.apply_coefficients(x1, x2)
        return np.concatenate([a.ravel(), b.ravel()])

    op = LinearOperator((2 * n, 2 * n), matvec=mv, dtype=complex)
    rhs = -np.concatenate([r1.ravel(), r2.ravel()])
    y, _ = gmres(op, rhs, rtol=rtol, atol=0.0, restart=min(80, 2 * n), maxiter=20)
    achieved = np.linalg.norm(mv(y) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not achieved <= max(10 * rtol, 0.1) and 2 * n <= 1024:
        # small systems: fall back to a dense solve of the preconditioned operator
        eye = np.eye(2 * n, dtype=complex)
        mat = np.column_stack([mv(eye[:, j]) for j in range(2 * n)])
        y = np.linalg.solve(mat, rhs)
    x1, x2 = lin.precondition(y[:n].reshape(shape), y[n:].reshape(shape))
    return hermitian_part(x1), hermitian_part(x2), count[0]


def _newton(start: MFGState, ham, nonlocal_, reg, tol: float, max_iters: int, halving: int,
            shift: float = 0.0, anchor: MFGState | None = None):
    grid = start.grid
    _require_domain(start)
    state = start
    r1, r2 = residual_coefficients(state, ham, nonlocal_, reg, shift, anchor)
    norm = _sup(r1, r2, grid)
    info = NewtonInfo(residual=norm, history=[norm])
    if norm <= tol:
        info.converged = True
        return state, info
    for it in range(1, max_iters + 1):
        lin = Linearization(state, ham, nonlocal_, reg, shift)
        forcing = min(1e-3, max(norm, 1e-10))
        d1, d2, nmv = _krylov_step(lin, r1, r2, forcing)
        info.linear_iterations += nmv
        mc, uc = state.coefficients()
        step = 1.0
        accepted = False
        while step >= 2.0 ** (-halving):
            trial = MFGState.from_coefficients(grid, mc + step * d1, uc + step * d2)
            if trial.m.min() > 0:
                try:
                    t1, t2 = residual_coefficients(trial, ham, nonlocal_, reg, shift, anchor)
                    tn = _sup(t1, t2, grid)
                except MFGError:
                    tn = float("inf")
                if tn <= (1.0 - 0.25 * step) * norm:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            info.iterations = it
            raise NonConvergenceError(
                f"line search stalled at residual {norm:.3e} (iteration {it})", best=state)
        state, r1, r2, norm = trial, t1, t2, tn
        info.history.append(norm)
        info.iterations = it
        info.residual = norm
        if norm <= tol:
            info.converged = True
            return state, info
    raise NonConvergenceError(f"no convergence in {max_iters} iterations (residual {norm:.3e})", best=state)


def newton_solve(start: MFGState, mu: float, reg: RegularizationParams, spec: HamiltonianSpec,
                 tol: float = 1e-10, max_iters: int = 25, step_halving_limit: int = 10,
                 model: ModelHamiltonianParams | None = None, full_output: bool = False):
    """Damped inexact Newton method on the regularized operator.

    Returns the solved state, or ``(state, NewtonInfo)`` with ``full_output``.
    Raises :class:`NonConvergenceError` carrying the best iterate.
    """
    reg.validate(start.grid.d)
    ham = blend_mu(mu, spec, model)
    state, info = _newton(start, ham, spec.nonlocal_, reg, tol, max_iters, step_halving_limit)
    return (state, info) if full_output else state


# proximal flow --------------------------------------------------------

def monotone_flow_solve(start: MFGState, mu: float, reg: RegularizationParams, spec: HamiltonianSpec,
                        step: float = 1e-2, iters: int = 200, tol: float = 1e-10,
                        model: ModelHamiltonianParams | None = None, min_step: float = 1e-12,
                        full_output: bool = False):
    """Implicit (resolvent) steps of the flow ``w' = -A(w)``.

    Each step solves ``w + step * A(w) = w_prev`` by Newton. Because the
    operator is monotone these steps are non-expansive, and the residual
    norm in L2 does not increase. The step grows after each success and is
    halved when an inner solve fails.
    """
    ham = blend_mu(mu, spec, model)
    nl = spec.nonlocal_
    _require_domain(start)
    w = start
    r1, r2 = residual_coefficients(w, ham, nl, reg)
    history = [(_sup(r1, r2, w.grid), _l2(r1, r2))]
    n = 0
    while history[-1][0] > tol and n < iters:
        try:
            w_new, _ = _newton(w, ham, nl, reg, 0.1 * tol / step, 40, 30, shift=1.0 / step, anchor=w)
        except NonConvergenceError:
            step *= 0.5
            if step < min_step:
                raise NonConvergenceError(f"flow step collapsed below {min_step:g}", best=w)
            continue
        w = w_new
        r1, r2 = residual_coefficients(w, ham, nl, reg)
        history.append((_sup(r1, r2, w.grid), _l2(r1, r2)))
        step = min(step * 2.0, 1e12)
        n += 1
    return (w, history) if full_output else w


def _l2(r1, r2) -> float:
    return float(np.sqrt(np.sum(np.abs(r1) ** 2) + np.sum(np.abs(r2) ** 2)))


# continuation ---------------------------------------------------------

def _record(trace, kind, state, reg, mu, info, spec):
    trace.add_stage(kind=kind, eps1=reg.eps1, eps2=reg.eps2, mu=mu, iterations=info.iterations,
                    residual=info.residual, min_m=state.m.min(), mass=integrate(state.m),
                    mean_u=integrate(state.u))


def continuation_solve(schedule: ContinuationSchedule, reg: RegularizationParams, spec: HamiltonianSpec,
                       model: ModelHamiltonianParams | None = None, start: MFGState | None = None,
                       trace: SolveTrace | None = None, log=None):
    """Follow the blend from μ=1 to μ=0 at fixed regularization.

    Failed steps are bisected up to ``schedule.step_halving_limit`` times;
    as a last resort the proximal flow is tried before giving up.
    """
    reg.validate(spec.grid.d)
    model = model or spec.model_params()
    trace = trace if trace is not None else SolveTrace()
    tol, iters, halving = schedule.newton_tol, schedule.max_newton_iters, schedule.step_halving_limit
    state = start if start is not None else initial_constant_solution(spec.grid, reg, model)
    state, info = _newton(state, blend_mu(1.0, spec, model), spec.nonlocal_, reg, tol, iters, halving)
    _record(trace, "continuation", state, reg, 1.0, info, spec)
    current = 1.0
    for target in schedule.mu_values[1:]:
        pending = [target]
        splits = 0
        while pending:
            mu = pending[0]
            try:
                state, info = _newton(state, blend_mu(mu, spec, model), spec.nonlocal_, reg, tol, iters, halving)
            except NonConvergenceError as exc:
                splits += 1
                if splits > halving:
                    try:
                        state = monotone_flow_solve(state, mu, reg, spec, tol=tol, model=model)
                        state, info = _newton(state, blend_mu(mu, spec, model), spec.nonlocal_, reg,
                                              tol, iters, halving)
                        info.iterations = max(info.iterations, 0)
                    except NonConvergenceError:
                        raise NonConvergenceError(
                            f"continuation failed between mu={current} and mu={mu}", best=state, trace=trace
                        ) from exc
                    trace.notes.append(f"proximal flow used at mu={mu}")
                else:
                    pending.insert(0, 0.5 * (current + mu))
                    continue
            _record(trace, "continuation", state, reg, mu, info, spec)
            if log:
                log(f"eps=({reg.eps1:.3e},{reg.eps2:.3e}) mu={mu:.4f} iters={info.iterations} "
                    f"residual={info.residual:.2e} min_m={state.m.min():.4g}")
            current = mu
            pending.pop(0)
    return state, trace


# eps sweep ------------------------------------------------------------

class SweepResult(NamedTuple):
    states: list
    limit: MFGState
    trace: SolveTrace


def _seminorm_w1(u: Field, gamma: float) -> float:
    from .grid import gradient
    g = gradient(u).array
    return float(np.mean(np.sum(g * g, axis=0) ** (gamma / 2)) ** (1.0 / gamma))


def extrapolate_to_zero(states: list, eps1_values: list) -> MFGState:
    """Polynomial extrapolation of coefficients in eps1 to eps1 = 0."""
    t = np.asarray(eps1_values, dtype=float)
    weights = []
    for j in range(len(t)):
        w = 1.0
        for i in range(len(t)):
            if i != j:
                w *= (0.0 - t[i]) / (t[j] - t[i])
        weights.append(w)
    mc = sum(w * s.m.coefficients() for w, s in zip(weights, states))
    uc = sum(w * s.u.coefficients() for w, s in zip(weights, states))
    return MFGState.from_coefficients(states[0].grid, mc, uc)


def epsilon_sweep(eps_schedule: EpsilonSchedule, schedule: ContinuationSchedule, spec: HamiltonianSpec,
                  reg_template: RegularizationParams | None = None,
                  model: ModelHamiltonianParams | None = None, extrapolation_order: int = 2,
                  log=None, on_level=None) -> SweepResult:
    """Solve at every eps level and build the limit candidate.

    Continuation in μ runs only at the first level; later levels start
    from the previous solution. If a level fails, intermediate levels are
    inserted geometrically. The limit candidate extrapolates the last
    ``extrapolation_order + 1`` levels to eps = 0 (the eps2/eps1 ratio must
    be constant on those levels); order 0 returns the last state.
    ``on_level(k, state, reg)`` is called after each scheduled level.
    """
    from .verify import compute_apriori

    d = spec.grid.d
    p = reg_template.laplacian_order_p if reg_template else None
    q = reg_template.penalty_q if reg_template else None
    model = model or spec.model_params()
    tol, iters, halving = schedule.newton_tol, schedule.max_newton_iters, schedule.step_halving_limit
    trace = SolveTrace()
    states = []
    t0 = time.perf_counter()
    state = None
    prev_eps = None
    for k, (e1, e2) in enumerate(eps_schedule.levels):
        reg = RegularizationParams.for_dimension(d, e1, e2, p, q)
        try:
            if state is None:
                state, _ = continuation_solve(schedule, reg, spec, model, trace=trace, log=log)
                iterations = trace.stages[-1]["iterations"]
            else:
                state, iterations = _advance_eps(state, prev_eps, (e1, e2), spec, model, p, q, tol, iters,
                                                 halving, trace, log)
        except NonConvergenceError as exc:
            if exc.trace is None:
                exc.trace = trace
            raise
        prev_eps = (e1, e2)
        states.append(state)
        aq = compute_apriori(state, reg, spec)
        trace.levels.append({
            "index": k, "eps1": e1, "eps2": e2, "iterations": iterations,
            "min_m": state.m.min(), "mass": integrate(state.m), "mean_u": integrate(state.u),
            "mass_defect": integrate(state.m) - 1.0 + reg.total * integrate(state.u),
            "elapsed": time.perf_counter() - t0,
            "apriori": asdict(aq),
        })
        if on_level is not None:
            on_level(k, state, reg)
        if k > 0:
            a, b = states[-2], states[-1]
            trace.cauchy.append({
                "from": k - 1, "to": k,
                "l1_m": integrate(Field(a.grid, np.abs(a.m.values - b.m.values))),
                "w1gamma_u": _seminorm_w1(a.u - b.u, spec.gamma),
            })
    floor = 1e-13
    for c0, c1 in zip(trace.cauchy, trace.cauchy[1:]):
        for key in ("l1_m", "w1gamma_u"):
            if c1[key] > c0[key] * (1 + 1e-9) and c1[key] > floor:
                trace.oscillation = True
    order = min(extrapolation_order, len(states) - 1)
    used = eps_schedule.levels[-(order + 1):]
    ratios = [b / a for a, b in used]
    if order > 0 and max(ratios) - min(ratios) <= 1e-12 * max(ratios):
        limit = extrapolate_to_zero(states[-(order + 1):], [a for a, _ in used])
        trace.limit = {"method": "polynomial extrapolation in eps1", "order": order,
                       "levels": list(range(len(states) - order - 1, len(states)))}
    else:
        limit = states[-1]
        trace.limit = {"method": "final level", "order": 0, "levels": [len(states) - 1]}
    trace.limit.update(min_m=limit.m.min(), mass=integrate(limit.m), mean_u=integrate(limit.u))
    return SweepResult(states, limit, trace)


def _advance_eps(state, prev, target, spec, model, p, q, tol, iters, halving, trace, log):
    """Newton at μ=0 for the target eps, inserting geometric midpoints on failure."""
    d = spec.grid.d
    ham = blend_mu(0.0, spec, model)
    pending = [target]
    current = prev
    splits = 0
    total = 0
    while pending:
        e1, e2 = pending[0]
        reg = RegularizationParams.for_dimension(d, e1, e2, p, q)
        try:
            new, info = _newton(state, ham, spec.nonlocal_, reg, tol, iters, halving)
        except NonConvergenceError as exc:
            splits += 1
            if splits > halving:
                raise NonConvergenceError(f"eps sweep failed at eps=({e1:.3e},{e2:.3e})",
                                          best=state, trace=trace) from exc
            pending.insert(0, (np.sqrt(current[0] * e1), np.sqrt(current[1] * e2)))
            continue
        state = new
        total += info.iterations
        _record(trace, "sweep", state, reg, 0.0, info, spec)
        if log:
            log(f"eps=({e1:.3e},{e2:.3e}) mu=0.0000 iters={info.iterations} "
                f"residual={info.residual:.2e} min_m={state.m.min():.4g}")
        current = (e1, e2)
        pending.pop(0)
    return state, total
